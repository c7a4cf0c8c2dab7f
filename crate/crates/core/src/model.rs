//! Core data types: evaluation grids, datasets with missing outcome curves,
//! covariate moments, and mean-curve estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Evaluation grid for the functional domain [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Strictly increasing points inside [0,1].
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("grid must be non-empty".into()));
        }
        if !points.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidGrid("grid points must be finite".into()));
        }
        if points[0] < 0.0 || *points.last().unwrap() > 1.0 {
            return Err(Error::InvalidGrid("grid points must lie in [0,1]".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("grid points must be strictly increasing".into()));
        }
        Ok(Grid { points })
    }

    /// `len` equidistant points t_j = j/(len-1), including both endpoints.
    pub fn equidistant(len: usize) -> Self {
        assert!(len >= 2, "equidistant grid needs at least two points");
        let h = 1.0 / (len - 1) as f64;
        Grid {
            points: (0..len).map(|j| j as f64 * h).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Spacings t_{j+1} - t_j.
    pub fn deltas(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// A validated sample of covariates, missingness indicators, and grid-sampled
/// outcome curves. Rows of `y` with `z = 0` hold NaN and are never read by the
/// estimators.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    z: Vec<u8>,
    y: DMatrix<f64>,
    grid: Grid,
}

impl Dataset {
    /// Validates and normalizes a candidate dataset.
    ///
    /// Missing-outcome rows are overwritten with NaN so that accidental reads
    /// are detectable. Fails on shape mismatches, non-binary indicators,
    /// non-finite observed outcomes, and when fewer units are observed than
    /// there are covariates.
    pub fn new(x: DMatrix<f64>, z: Vec<f64>, y: DMatrix<f64>, grid: Grid) -> Result<Self> {
        let n = x.nrows();
        if z.len() != n || y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows, Z has {} entries, Y has {} rows",
                z.len(),
                y.nrows()
            )));
        }
        if y.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "Y has {} columns but grid has {} points",
                y.ncols(),
                grid.len()
            )));
        }
        for (i, row) in x.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteCovariate { row: i, col: j });
                }
            }
        }
        let mut zb = Vec::with_capacity(n);
        for (i, &v) in z.iter().enumerate() {
            if v == 0.0 {
                zb.push(0u8);
            } else if v == 1.0 {
                zb.push(1u8);
            } else {
                return Err(Error::NonBinaryIndicator { row: i, value: v });
            }
        }
        let observed = zb.iter().filter(|&&b| b == 1).count();
        if observed < x.ncols() {
            return Err(Error::TooFewObserved {
                observed,
                covariates: x.ncols(),
            });
        }
        let mut y = y;
        for (i, &b) in zb.iter().enumerate() {
            if b == 1 {
                for j in 0..y.ncols() {
                    if !y[(i, j)].is_finite() {
                        return Err(Error::NonFiniteObservedOutcome { row: i, col: j });
                    }
                }
            } else {
                y.row_mut(i).fill(f64::NAN);
            }
        }
        Ok(Dataset { x, z: zb, y, grid })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn t_len(&self) -> usize {
        self.grid.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_observed(&self) -> usize {
        self.z.iter().filter(|&&b| b == 1).count()
    }
}

/// First and second covariate moments, with the observed-unit Gram moment Pi.
#[derive(Debug, Clone)]
pub struct CovariateMoments {
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    /// n^-1 sum_i Z_i x_i x_i^T.
    pub pi: DMatrix<f64>,
}

impl CovariateMoments {
    /// Sample moments with divisor n (not n-1), matching the plug-in
    /// asymptotic formulas.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.n();
        let p = ds.p();
        let nf = n as f64;
        let mut mu_x = DVector::zeros(p);
        for row in ds.x().row_iter() {
            mu_x += row.transpose();
        }
        mu_x /= nf;
        let mut sigma_x = DMatrix::zeros(p, p);
        let mut pi = DMatrix::zeros(p, p);
        for (i, row) in ds.x().row_iter().enumerate() {
            let xi = row.transpose();
            let centered = &xi - &mu_x;
            sigma_x += &centered * centered.transpose();
            if ds.z()[i] == 1 {
                pi += &xi * xi.transpose();
            }
        }
        sigma_x /= nf;
        pi /= nf;
        let sigma_x = symmetrize(&sigma_x);
        let pi = symmetrize(&pi);
        CovariateMoments { mu_x, sigma_x, pi }
    }
}

/// Which estimator produced a mean estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Or,
    Dr,
    Cc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Or => write!(f, "OR"),
            Method::Dr => write!(f, "DR"),
            Method::Cc => write!(f, "CC"),
        }
    }
}

/// An estimated mean curve with its plug-in asymptotic covariance.
///
/// `c_hat` is the plug-in for the covariance of sqrt(n) * (mu_hat - mu), so
/// the pointwise standard error at t_j is sqrt(c_hat[(j,j)] / n). An
/// estimator may attach a dedicated roughness profile for the simultaneous
/// band; without one the band derives roughness from `c_hat` itself.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub method: Method,
    pub mu_hat: DVector<f64>,
    pub c_hat: DMatrix<f64>,
    pub n: usize,
    pub grid: Grid,
    pub roughness: Option<crate::bands::RoughnessProfile>,
}

impl MeanEstimate {
    pub fn new(
        method: Method,
        mu_hat: DVector<f64>,
        c_hat: DMatrix<f64>,
        n: usize,
        grid: Grid,
    ) -> Self {
        debug_assert_eq!(mu_hat.len(), grid.len());
        debug_assert_eq!(c_hat.nrows(), grid.len());
        let c_hat = symmetrize(&c_hat);
        MeanEstimate {
            method,
            mu_hat,
            c_hat,
            n,
            grid,
            roughness: None,
        }
    }

    pub fn with_roughness(mut self, profile: crate::bands::RoughnessProfile) -> Self {
        debug_assert_eq!(profile.tau.len() + 1, self.grid.len());
        self.roughness = Some(profile);
        self
    }
}

/// Exact symmetrization by averaging with the transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(m.nrows(), m.ncols());
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
