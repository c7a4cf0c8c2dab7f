//! Data-generating process and Monte Carlo replication study.
//!
//! Outcomes are linear in six covariates with functional coefficients,
//! errors are either a Matern-3/2 Gaussian process or multivariate t on the
//! grid, and whole curves go missing through a logistic mechanism. The study
//! runner fits the working models under configurable misspecification,
//! builds bands, and aggregates coverage, bias, variance, and MSE.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;

use crate::bands::{build_pcb, build_scb, covers, roughness, Band, BandKind, Partition};
use crate::error::{Error, Result};
use crate::estimators::{estimate_cc, estimate_dr, estimate_or};
use crate::model::{Dataset, Grid, MeanEstimate, Method};
use crate::nuisance::{fit_logistic, fit_ols, inverse_logit};

/// Missingness-mechanism coefficients used by the generator.
pub const GAMMA_TRUE: [f64; 6] = [0.3, -0.3, -0.3, -0.3, -0.3, -0.3];

/// Covariate mean vector (1, -2, 4, 0, 0.2, 1.8).
pub const MEAN_X: [f64; 6] = [1.0, -2.0, 4.0, 0.0, 0.2, 1.8];

/// Covariates dropped under deliberate misspecification (x3 and x5,
/// zero-based indices 2 and 4).
pub const MISSPEC_DROP: [usize; 2] = [2, 4];

const MVN3_MEAN: [f64; 3] = [-2.0, 4.0, 0.0];
const MVN3_COV: [f64; 9] = [1.0, 0.2, 0.3, 0.2, 2.0, 0.6, 0.3, 0.6, 0.4];

/// Matern covariance parameters; only smoothness 1.5 is implemented.
#[derive(Debug, Clone, Copy)]
pub struct MaternParams {
    pub kappa_smooth: f64,
    pub phi: f64,
    pub variance: f64,
}

impl Default for MaternParams {
    fn default() -> Self {
        MaternParams {
            kappa_smooth: 1.5,
            phi: 0.1,
            variance: 1.0,
        }
    }
}

/// Multivariate-t error parameters: dispersion Delta = Q Lambda Q^T with
/// nu = 4, so the error covariance is 2 Delta.
#[derive(Debug, Clone)]
pub struct MvtParams {
    pub nu: f64,
    pub lambda_diag: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl MvtParams {
    /// Haar-random Q and a linearly spaced Lambda diagonal from 1 to 3.
    pub fn draw(t_len: usize, rng: &mut impl Rng) -> Self {
        MvtParams {
            nu: 4.0,
            lambda_diag: linspace(1.0, 3.0, t_len),
            q: random_orthonormal(t_len, rng),
        }
    }

    pub fn delta(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&self.lambda_diag);
        &self.q * lam * self.q.transpose()
    }

    /// A with A A^T = Delta.
    fn factor(&self) -> DMatrix<f64> {
        let sqrt_lam = DMatrix::from_diagonal(&self.lambda_diag.map(f64::sqrt));
        &self.q * sqrt_lam
    }
}

fn linspace(lo: f64, hi: f64, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |j, _| {
        if len == 1 {
            lo
        } else {
            lo + (hi - lo) * j as f64 / (len - 1) as f64
        }
    })
}

/// Which working models omit covariates x3 and x5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Misspec {
    None,
    Outcome,
    Missingness,
    Both,
}

impl Misspec {
    pub fn outcome_drop(self) -> &'static [usize] {
        match self {
            Misspec::Outcome | Misspec::Both => &MISSPEC_DROP,
            _ => &[],
        }
    }

    pub fn propensity_drop(self) -> &'static [usize] {
        match self {
            Misspec::Missingness | Misspec::Both => &MISSPEC_DROP,
            _ => &[],
        }
    }
}

impl std::fmt::Display for Misspec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Misspec::None => write!(f, "none"),
            Misspec::Outcome => write!(f, "outcome"),
            Misspec::Missingness => write!(f, "missingness"),
            Misspec::Both => write!(f, "both"),
        }
    }
}

/// Error-term family for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    MaternGaussian,
    MultivariateT,
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorKind::MaternGaussian => write!(f, "gaussian"),
            ErrorKind::MultivariateT => write!(f, "mvt"),
        }
    }
}

/// Full study configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub t_len: usize,
    pub reps: usize,
    pub error_kind: ErrorKind,
    pub misspec: Misspec,
    pub alpha: f64,
    pub seed: u64,
    pub partition: Partition,
    /// Negate the missingness linear predictor so that roughly 70% of the
    /// outcomes are observed rather than 30%.
    pub calibrate_missingness: bool,
    /// Redraw the multivariate-t Q matrix per replicate instead of once per
    /// study.
    pub redraw_q: bool,
}

impl SimConfig {
    pub fn new(n: usize, error_kind: ErrorKind, misspec: Misspec, seed: u64) -> Self {
        SimConfig {
            n,
            t_len: 50,
            reps: 1000,
            error_kind,
            misspec,
            alpha: 0.05,
            seed,
            partition: Partition::whole_domain(),
            calibrate_missingness: false,
            redraw_q: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidConfig("n must be at least p + 2 = 8".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.t_len < 2 {
            return Err(Error::InvalidConfig("T must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::LevelOutOfRange { alpha: self.alpha });
        }
        Ok(())
    }

    pub fn gamma(&self) -> [f64; 6] {
        let mut g = GAMMA_TRUE;
        if self.calibrate_missingness {
            for v in &mut g {
                *v = -*v;
            }
        }
        g
    }
}

/// Stationary Matern covariance on the grid; smoothness 1.5 uses the closed
/// form (1 + d/phi) e^{-d/phi}, the continuity limit giving 1 on the
/// diagonal.
pub fn matern_cov(grid: &Grid, params: &MaternParams) -> Result<DMatrix<f64>> {
    if (params.kappa_smooth - 1.5).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "only Matern smoothness 1.5 is implemented (got {})",
            params.kappa_smooth
        )));
    }
    if params.phi <= 0.0 || params.variance <= 0.0 {
        return Err(Error::InvalidConfig("Matern phi and variance must be positive".into()));
    }
    let pts = grid.points();
    Ok(DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        let d = (pts[i] - pts[j]).abs() / params.phi;
        params.variance * (1.0 + d) * (-d).exp()
    }))
}

/// Factor A with A A^T = cov, from the symmetric eigendecomposition with
/// negative eigenvalues clipped at zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = cov.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.amax();
    let min_ev = eig.eigenvalues.min();
    if min_ev < -1e-8 * max_ev.max(1.0) {
        return Err(Error::NonPsd { min_eig: min_ev });
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt)
}

/// `count` i.i.d. zero-mean Gaussian rows with the given covariance.
pub fn sample_gaussian(
    cov: &DMatrix<f64>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    let factor = psd_factor(cov)?;
    Ok(sample_gaussian_with_factor(&factor, count, rng))
}

fn sample_gaussian_with_factor(factor: &DMatrix<f64>, count: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let t_len = factor.nrows();
    let mut out = DMatrix::zeros(count, t_len);
    let mut z = DVector::zeros(factor.ncols());
    for i in 0..count {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out.row_mut(i).copy_from(&(factor * &z).transpose());
    }
    out
}

/// `count` i.i.d. multivariate-t rows with dispersion Delta and nu degrees of
/// freedom; the resulting covariance is Delta * nu / (nu - 2).
pub fn sample_mvt(params: &MvtParams, count: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let factor = params.factor();
    let t_len = factor.nrows();
    let chi = ChiSquared::new(params.nu).expect("nu > 0");
    let mut out = DMatrix::zeros(count, t_len);
    let mut z = DVector::zeros(t_len);
    for i in 0..count {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let w: f64 = rng.sample(chi);
        let scale = (params.nu / w).sqrt();
        out.row_mut(i).copy_from(&((&factor * &z) * scale).transpose());
    }
    out
}

/// Haar-distributed orthonormal matrix: QR of a standard Gaussian matrix
/// with column signs fixed so R has a positive diagonal.
pub fn random_orthonormal(t_len: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(t_len, t_len, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..t_len {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Design matrix: intercept, a trivariate Gaussian block, Bernoulli(0.2),
/// and Binomial(3, 0.6).
pub fn gen_covariates(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let sigma3 = DMatrix::from_row_slice(3, 3, &MVN3_COV);
    let chol = sigma3
        .cholesky()
        .expect("covariate covariance is positive definite");
    let l = chol.l();
    let mut x = DMatrix::zeros(n, 6);
    let mut z3 = DVector::zeros(3);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for v in z3.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let g = &l * &z3;
        for k in 0..3 {
            x[(i, k + 1)] = MVN3_MEAN[k] + g[k];
        }
        x[(i, 4)] = f64::from(rng.gen_bool(0.2));
        x[(i, 5)] = (0..3).filter(|_| rng.gen_bool(0.6)).count() as f64;
    }
    x
}

/// The six functional coefficients evaluated on the grid (6 x T).
pub fn true_beta(grid: &Grid) -> DMatrix<f64> {
    let pts = grid.points();
    DMatrix::from_fn(6, grid.len(), |r, j| {
        let t = pts[j];
        match r {
            0 => 40.0 - t,
            1 => 2.0 * (4.0 * t).sin(),
            2 => 3.0 - (5.0 * t).cos(),
            3 => 1.5 * (5.0 * t + 0.1).ln(),
            4 => 0.5 * (2.0 * t).sin(),
            _ => 2.0 - 1.5 * t + 1.3 * t * t,
        }
    })
}

/// True mean curve mu_y(t) = E[x]^T beta(t).
pub fn true_mu(grid: &Grid) -> DVector<f64> {
    let beta = true_beta(grid);
    let ex = DVector::from_row_slice(&MEAN_X);
    beta.transpose() * ex
}

/// One generated replicate: the masked dataset handed to the estimators and
/// the full outcome matrix kept for diagnostics.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub y_full: DMatrix<f64>,
}

/// Per-replicate random stream derived from the master seed by a
/// counter-based split, so results do not depend on execution order.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha12Rng {
    // splitmix64 over (master, index) fills the 32-byte ChaCha seed
    let mut state = master_seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut next = || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&next().to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// Stream index reserved for study-level draws (the fixed Q matrix).
const STUDY_STREAM: u64 = u64::MAX;

/// Precomputed study state shared by all replicates.
pub struct StudyContext {
    pub cfg: SimConfig,
    pub grid: Grid,
    pub beta: DMatrix<f64>,
    pub mu_true: DVector<f64>,
    gaussian_factor: Option<DMatrix<f64>>,
    mvt: Option<MvtParams>,
}

impl StudyContext {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid::equidistant(cfg.t_len);
        let beta = true_beta(&grid);
        let mu_true = true_mu(&grid);
        let (gaussian_factor, mvt) = match cfg.error_kind {
            ErrorKind::MaternGaussian => {
                let cov = matern_cov(&grid, &MaternParams::default())?;
                (Some(psd_factor(&cov)?), None)
            }
            ErrorKind::MultivariateT => {
                let params = if cfg.redraw_q {
                    None
                } else {
                    let mut rng = replicate_rng(cfg.seed, STUDY_STREAM);
                    Some(MvtParams::draw(cfg.t_len, &mut rng))
                };
                (None, params)
            }
        };
        Ok(StudyContext {
            cfg,
            grid,
            beta,
            mu_true,
            gaussian_factor,
            mvt,
        })
    }

    fn sample_errors(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        match self.cfg.error_kind {
            ErrorKind::MaternGaussian => {
                sample_gaussian_with_factor(self.gaussian_factor.as_ref().unwrap(), n, rng)
            }
            ErrorKind::MultivariateT => match &self.mvt {
                Some(params) => sample_mvt(params, n, rng),
                None => {
                    let params = MvtParams::draw(self.cfg.t_len, rng);
                    sample_mvt(&params, n, rng)
                }
            },
        }
    }

    /// One draw of the data-generating process.
    pub fn gen_dataset(&self, rng: &mut impl Rng) -> Result<GeneratedData> {
        let n = self.cfg.n;
        let x = gen_covariates(n, rng);
        let gamma = self.cfg.gamma();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let eta: f64 = (0..6).map(|k| x[(i, k)] * gamma[k]).sum();
            z.push(f64::from(rng.gen_bool(inverse_logit(eta))));
        }
        let errors = self.sample_errors(n, rng);
        let y_full = &x * &self.beta + errors;
        let dataset = Dataset::new(x, z, y_full.clone(), self.grid.clone())?;
        Ok(GeneratedData { dataset, y_full })
    }
}

/// Everything recorded for one estimator in one replicate.
#[derive(Debug, Clone)]
pub struct EstimatorRecord {
    pub estimate: MeanEstimate,
    pub scb: Band,
    pub pcb: Band,
    pub scb_covers: bool,
    pub pcb_covers: bool,
}

/// One replicate's output, or the nuisance failure that aborted it.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub index: usize,
    pub outcome: std::result::Result<Vec<(Method, EstimatorRecord)>, String>,
}

/// Runs one seeded replicate: generate, fit under the configured
/// misspecification, estimate, and band.
pub fn run_replication(ctx: &StudyContext, index: usize) -> ReplicateRecord {
    let mut rng = replicate_rng(ctx.cfg.seed, index as u64);
    let outcome = run_replication_inner(ctx, &mut rng);
    ReplicateRecord {
        index,
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

fn run_replication_inner(
    ctx: &StudyContext,
    rng: &mut impl Rng,
) -> Result<Vec<(Method, EstimatorRecord)>> {
    let gen = ctx.gen_dataset(rng)?;
    let ds = &gen.dataset;
    let om = fit_ols(ds, ctx.cfg.misspec.outcome_drop())?;
    let pm = fit_logistic(ds, ctx.cfg.misspec.propensity_drop())?;
    let mut or = estimate_or(ds, &om)?;
    let mut dr = estimate_dr(ds, &om, &pm)?;
    if !ctx.cfg.misspec.outcome_drop().is_empty() {
        // band roughness always comes from the all-covariate residual fit:
        // a deliberately crippled mean model would otherwise smear smooth
        // omitted-covariate variance into the local-variation estimate
        let om_full = fit_ols(ds, &[])?;
        let profile = roughness(&om_full.sigma_eps_hat, ds.grid())?;
        or = or.with_roughness(profile.clone());
        dr = dr.with_roughness(profile);
    }
    let estimates = vec![
        (Method::Or, or),
        (Method::Dr, dr),
        (Method::Cc, estimate_cc(ds)?),
    ];
    let mut records = Vec::with_capacity(3);
    for (method, est) in estimates {
        let scb = build_scb(&est, ctx.cfg.alpha, &ctx.cfg.partition)?;
        let pcb = build_pcb(&est, ctx.cfg.alpha)?;
        let scb_covers = covers(&scb, &ctx.mu_true)?;
        let pcb_covers = covers(&pcb, &ctx.mu_true)?;
        records.push((
            method,
            EstimatorRecord {
                estimate: est,
                scb,
                pcb,
                scb_covers,
                pcb_covers,
            },
        ));
    }
    Ok(records)
}

/// Aggregated metrics for one estimator across replicates.
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub method: Method,
    pub scb_coverage_pct: f64,
    pub pcb_coverage_pct: f64,
    pub bias: DVector<f64>,
    /// Mean over replicates of the estimated variance curve C_jj / n.
    pub mean_est_variance: DVector<f64>,
    /// Across-replicate variance of mu_hat_j (divisor R, so the MSE
    /// decomposition is exact).
    pub mc_variance: DVector<f64>,
    pub mse: DVector<f64>,
}

/// Study output: per-estimator summaries plus the failure log.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub cfg: SimConfig,
    pub summaries: Vec<EstimatorSummary>,
    pub replicates_used: usize,
    pub failures: Vec<(usize, String)>,
}

impl StudyResult {
    pub fn summary(&self, method: Method) -> &EstimatorSummary {
        self.summaries
            .iter()
            .find(|s| s.method == method)
            .expect("summary present for every estimator")
    }

    pub fn coverage_pct(&self, method: Method, kind: BandKind) -> f64 {
        let s = self.summary(method);
        match kind {
            BandKind::Scb => s.scb_coverage_pct,
            BandKind::Pcb => s.pcb_coverage_pct,
        }
    }
}

/// Runs the full replication study. Replicates execute in parallel but each
/// carries its own counter-derived stream and aggregation is sequential over
/// the replicate index, so the result is identical for any thread count.
pub fn run_study(cfg: &SimConfig) -> Result<StudyResult> {
    let ctx = StudyContext::new(cfg.clone())?;
    let records: Vec<ReplicateRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| run_replication(&ctx, i))
        .collect();

    let failures: Vec<(usize, String)> = records
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.index, e.clone())))
        .collect();
    if failures.len() * 100 > cfg.reps {
        return Err(Error::FailureRateExceeded {
            failed: failures.len(),
            total: cfg.reps,
        });
    }
    let used = cfg.reps - failures.len();
    let t_len = cfg.t_len;
    let rf = used as f64;

    let mut summaries = Vec::new();
    for method in [Method::Or, Method::Dr, Method::Cc] {
        let mut scb_cover = 0usize;
        let mut pcb_cover = 0usize;
        let mut sum_mu: DVector<f64> = DVector::zeros(t_len);
        let mut sum_mu_sq: DVector<f64> = DVector::zeros(t_len);
        let mut sum_est_var: DVector<f64> = DVector::zeros(t_len);
        for rec in &records {
            if let Ok(per_method) = &rec.outcome {
                let (_, er) = per_method
                    .iter()
                    .find(|(m, _)| *m == method)
                    .expect("record for every estimator");
                scb_cover += usize::from(er.scb_covers);
                pcb_cover += usize::from(er.pcb_covers);
                for j in 0..t_len {
                    let v = er.estimate.mu_hat[j];
                    sum_mu[j] += v;
                    sum_mu_sq[j] += v * v;
                    sum_est_var[j] += er.estimate.c_hat[(j, j)] / er.estimate.n as f64;
                }
            }
        }
        let mean_mu = &sum_mu / rf;
        let bias = &mean_mu - &ctx.mu_true;
        let mc_variance = DVector::from_fn(t_len, |j, _| {
            f64::max(sum_mu_sq[j] / rf - mean_mu[j] * mean_mu[j], 0.0)
        });
        let mse = DVector::from_fn(t_len, |j, _| bias[j] * bias[j] + mc_variance[j]);
        summaries.push(EstimatorSummary {
            method,
            scb_coverage_pct: 100.0 * scb_cover as f64 / rf,
            pcb_coverage_pct: 100.0 * pcb_cover as f64 / rf,
            bias,
            mean_est_variance: &sum_est_var / rf,
            mc_variance,
            mse,
        });
    }

    Ok(StudyResult {
        cfg: cfg.clone(),
        summaries,
        replicates_used: used,
        failures,
    })
}
