//! File formats: the wide dataset CSV, curve/band tables, and the serialized
//! estimate consumed by the `bands` subcommand.
//!
//! All emitted text is LF-terminated UTF-8 with locale-independent floats
//! printed to 17 significant digits, so outputs are byte-stable across
//! platforms.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use fnmiss_core::{Band, Dataset, Grid, MeanEstimate, Method};

use crate::CliError;

/// 17 significant digits in scientific notation; round-trips any f64.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f(s: &str, what: &str, line: usize) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::input(format!("line {line}: invalid {what} {s:?}")))
}

/// A dataset plus the unit identifiers from its source file.
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub ids: Vec<String>,
}

/// Reads the wide-form dataset CSV.
///
/// Layout: a `# grid: t1,...,tT` comment line, a `id,z,x1,...,xp,y_1,...,y_T`
/// header, then one row per unit. Outcome fields may be empty only when
/// z = 0.
pub fn read_dataset(path: &Path) -> Result<LoadedDataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (gl, grid_line) = lines
        .next()
        .ok_or_else(|| CliError::input("empty dataset file".to_string()))?;
    let grid_spec = grid_line
        .strip_prefix("# grid:")
        .ok_or_else(|| CliError::input(format!("line {gl}: expected '# grid: t1,...,tT'")))?;
    let grid_pts: Vec<f64> = grid_spec
        .split(',')
        .map(|s| parse_f(s, "grid point", gl))
        .collect::<Result<_, _>>()?;
    let grid = Grid::new(grid_pts).map_err(|e| CliError::input(format!("line {gl}: {e}")))?;
    let t_len = grid.len();

    let (hl, header) = lines
        .next()
        .ok_or_else(|| CliError::input("missing header row".to_string()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < 2 + 1 + t_len || names[0] != "id" || names[1] != "z" {
        return Err(CliError::input(format!(
            "line {hl}: header must be id,z,x1,...,xp,y_1,...,y_{t_len}"
        )));
    }
    let p = names.len() - 2 - t_len;
    for (j, name) in names[2..2 + p].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(CliError::input(format!(
                "line {hl}: expected column x{} at position {}, found {name:?}",
                j + 1,
                j + 3
            )));
        }
    }
    for (j, name) in names[2 + p..].iter().enumerate() {
        if *name != format!("y_{}", j + 1) {
            return Err(CliError::input(format!(
                "line {hl}: expected column y_{} at position {}, found {name:?}",
                j + 1,
                p + j + 3
            )));
        }
    }
    if p == 0 {
        return Err(CliError::input(format!("line {hl}: no covariate columns")));
    }

    let mut ids = Vec::new();
    let mut z = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(CliError::input(format!(
                "line {ln}: expected {} fields, found {}",
                names.len(),
                fields.len()
            )));
        }
        ids.push(fields[0].to_string());
        let zi = parse_f(fields[1], "z value", ln)?;
        if zi != 0.0 && zi != 1.0 {
            return Err(CliError::input(format!(
                "line {ln}: z must be 0 or 1, found {}",
                fields[1]
            )));
        }
        z.push(zi);
        for f in &fields[2..2 + p] {
            x_rows.push(parse_f(f, "covariate", ln)?);
        }
        for f in &fields[2 + p..] {
            if f.is_empty() {
                if zi != 0.0 {
                    return Err(CliError::input(format!(
                        "line {ln}: empty outcome field on an observed (z = 1) row"
                    )));
                }
                y_rows.push(f64::NAN);
            } else {
                y_rows.push(parse_f(f, "outcome", ln)?);
            }
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(CliError::input("dataset has no data rows".to_string()));
    }
    let x = DMatrix::from_row_slice(n, p, &x_rows);
    let y = DMatrix::from_row_slice(n, t_len, &y_rows);
    let dataset =
        Dataset::new(x, z, y, grid).map_err(|e| CliError::input(format!("invalid dataset: {e}")))?;
    Ok(LoadedDataset { dataset, ids })
}

/// Writes a dataset in the same wide CSV schema `read_dataset` accepts.
/// Unit identifiers default to 1..n when none are supplied.
pub fn write_dataset(path: &Path, ds: &Dataset, ids: Option<&[String]>) -> Result<(), CliError> {
    let mut out = String::new();
    let grid_txt: Vec<String> = ds.grid().points().iter().map(|&t| fmt_f(t)).collect();
    out.push_str(&format!("# grid: {}\n", grid_txt.join(",")));
    out.push_str("id,z");
    for j in 0..ds.p() {
        out.push_str(&format!(",x{}", j + 1));
    }
    for j in 0..ds.t_len() {
        out.push_str(&format!(",y_{}", j + 1));
    }
    out.push('\n');
    for i in 0..ds.n() {
        match ids {
            Some(ids) => out.push_str(&format!("{},{}", ids[i], ds.z()[i])),
            None => out.push_str(&format!("{},{}", i + 1, ds.z()[i])),
        }
        for j in 0..ds.p() {
            out.push_str(&format!(",{}", fmt_f(ds.x()[(i, j)])));
        }
        for j in 0..ds.t_len() {
            if ds.z()[i] == 1 {
                out.push_str(&format!(",{}", fmt_f(ds.y()[(i, j)])));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Curve table: one row per grid point with both bands and their critical
/// values.
pub fn write_curve_table(path: &Path, est: &MeanEstimate, scb: &Band, pcb: &Band) -> Result<(), CliError> {
    let mut out = String::from("t,mu_hat,se,scb_lower,scb_upper,pcb_lower,pcb_upper,u_scb,u_pcb\n");
    let nf = est.n as f64;
    for j in 0..est.grid.len() {
        let se = (est.c_hat[(j, j)] / nf).sqrt();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_f(est.grid.points()[j]),
            fmt_f(est.mu_hat[j]),
            fmt_f(se),
            fmt_f(scb.lower[j]),
            fmt_f(scb.upper[j]),
            fmt_f(pcb.lower[j]),
            fmt_f(pcb.upper[j]),
            fmt_f(scb.u[j]),
            fmt_f(pcb.u[j]),
        ));
    }
    write_text(path, &out)
}

/// Serialized estimate (center, covariance, n, grid) re-loadable by `bands`.
pub fn write_estimate(path: &Path, est: &MeanEstimate) -> Result<(), CliError> {
    let mut out = String::from("# fnmiss estimate v1\n");
    out.push_str(&format!("method,{}\n", est.method));
    out.push_str(&format!("n,{}\n", est.n));
    let grid_txt: Vec<String> = est.grid.points().iter().map(|&t| fmt_f(t)).collect();
    out.push_str(&format!("grid,{}\n", grid_txt.join(",")));
    let mu_txt: Vec<String> = est.mu_hat.iter().map(|&v| fmt_f(v)).collect();
    out.push_str(&format!("mu,{}\n", mu_txt.join(",")));
    for i in 0..est.c_hat.nrows() {
        let row: Vec<String> = (0..est.c_hat.ncols()).map(|j| fmt_f(est.c_hat[(i, j)])).collect();
        out.push_str(&format!("cov,{}\n", row.join(",")));
    }
    if let Some(profile) = &est.roughness {
        let tau_txt: Vec<String> = profile.tau.iter().map(|&v| fmt_f(v)).collect();
        out.push_str(&format!("roughness,{}\n", tau_txt.join(",")));
    }
    write_text(path, &out)
}

pub fn read_estimate(path: &Path) -> Result<MeanEstimate, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "# fnmiss estimate v1")) => {}
        _ => return Err(CliError::input("not an fnmiss estimate file (bad magic line)".to_string())),
    }
    let mut method = None;
    let mut n = None;
    let mut grid: Option<Grid> = None;
    let mut mu: Option<DVector<f64>> = None;
    let mut cov_rows: Vec<Vec<f64>> = Vec::new();
    let mut tau: Option<Vec<f64>> = None;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(',')
            .ok_or_else(|| CliError::input(format!("line {ln}: expected key,values")))?;
        match key {
            "method" => {
                method = Some(match rest {
                    "OR" => Method::Or,
                    "DR" => Method::Dr,
                    "CC" => Method::Cc,
                    _ => return Err(CliError::input(format!("line {ln}: unknown method {rest:?}"))),
                })
            }
            "n" => {
                n = Some(rest.parse::<usize>().map_err(|_| {
                    CliError::input(format!("line {ln}: invalid sample size {rest:?}"))
                })?)
            }
            "grid" => {
                let pts: Vec<f64> = rest
                    .split(',')
                    .map(|s| parse_f(s, "grid point", ln))
                    .collect::<Result<_, _>>()?;
                grid = Some(Grid::new(pts).map_err(|e| CliError::input(format!("line {ln}: {e}")))?);
            }
            "mu" => {
                let vals: Vec<f64> = rest
                    .split(',')
                    .map(|s| parse_f(s, "mean value", ln))
                    .collect::<Result<_, _>>()?;
                mu = Some(DVector::from_vec(vals));
            }
            "cov" => {
                cov_rows.push(
                    rest.split(',')
                        .map(|s| parse_f(s, "covariance value", ln))
                        .collect::<Result<_, _>>()?,
                );
            }
            "roughness" => {
                tau = Some(
                    rest.split(',')
                        .map(|s| parse_f(s, "roughness value", ln))
                        .collect::<Result<_, _>>()?,
                );
            }
            _ => return Err(CliError::input(format!("line {ln}: unknown key {key:?}"))),
        }
    }
    let method = method.ok_or_else(|| CliError::input("estimate file missing method".to_string()))?;
    let n = n.ok_or_else(|| CliError::input("estimate file missing n".to_string()))?;
    let grid = grid.ok_or_else(|| CliError::input("estimate file missing grid".to_string()))?;
    let mu = mu.ok_or_else(|| CliError::input("estimate file missing mu".to_string()))?;
    let t_len = grid.len();
    if mu.len() != t_len || cov_rows.len() != t_len || cov_rows.iter().any(|r| r.len() != t_len) {
        return Err(CliError::input(format!(
            "estimate file shape mismatch: grid {t_len}, mu {}, cov {}x{}",
            mu.len(),
            cov_rows.len(),
            cov_rows.first().map_or(0, Vec::len)
        )));
    }
    let c_hat = DMatrix::from_fn(t_len, t_len, |i, j| cov_rows[i][j]);
    let mut est = MeanEstimate::new(method, mu, c_hat, n, grid);
    if let Some(tau) = tau {
        if tau.len() + 1 != t_len {
            return Err(CliError::input(format!(
                "roughness line has {} values; expected {}",
                tau.len(),
                t_len - 1
            )));
        }
        let points = est.grid.points().to_vec();
        let deltas = est.grid.deltas();
        let kappa: f64 = tau.iter().zip(&deltas).map(|(&t, &d)| t * d).sum();
        let midpoints = points.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        est = est.with_roughness(fnmiss_core::bands::RoughnessProfile {
            tau,
            kappa,
            midpoints,
            deltas,
        });
    }
    Ok(est)
}

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}
