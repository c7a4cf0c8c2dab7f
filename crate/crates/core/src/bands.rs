//! Simultaneous and pointwise confidence bands.
//!
//! The simultaneous band uses a critical value solved from the two-sided
//! Kac-Rice upcrossing bound
//!
//! `2 * [ Phibar(u) + (kappa / 2 pi) * exp(-u^2 / 2) ] = alpha`,
//!
//! where kappa is the integrated roughness of the standardized process.
//! A piecewise-constant "fair" variant balances the false positive budget
//! across a user-supplied partition of [0,1], charging the entry probability
//! to the first interval. The pointwise band uses a constant t-quantile.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Grid, MeanEstimate};

const BISECT_TOL: f64 = 1e-10;
const BISECT_UPPER: f64 = 20.0;

/// Local roughness of the standardized process on grid midpoints.
#[derive(Debug, Clone)]
pub struct RoughnessProfile {
    /// (T-1)-vector: sqrt(2 (1 - rho_{j,j+1})) / delta_j, floored at zero.
    pub tau: Vec<f64>,
    /// Integrated roughness, sum of tau_j * delta_j.
    pub kappa: f64,
    /// Midpoints the tau values live on.
    pub midpoints: Vec<f64>,
    /// Grid spacings delta_j.
    pub deltas: Vec<f64>,
}

/// Simultaneous vs pointwise band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Scb,
    Pcb,
}

/// A confidence band around a mean-curve estimate.
#[derive(Debug, Clone)]
pub struct Band {
    pub kind: BandKind,
    pub alpha: f64,
    pub center: DVector<f64>,
    /// Per-grid-point critical values.
    pub u: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub n: usize,
}

/// Discrete roughness estimate from the near-diagonal correlation of a
/// covariance matrix.
pub fn roughness(c: &DMatrix<f64>, grid: &Grid) -> Result<RoughnessProfile> {
    let t_len = grid.len();
    assert_eq!(c.nrows(), t_len);
    for j in 0..t_len {
        if c[(j, j)] <= 0.0 {
            return Err(Error::ZeroVarianceDiagonal { index: j });
        }
    }
    let points = grid.points();
    let deltas = grid.deltas();
    let mut tau = Vec::with_capacity(t_len - 1);
    let mut midpoints = Vec::with_capacity(t_len - 1);
    let mut kappa = 0.0;
    for j in 0..t_len - 1 {
        let rho = c[(j, j + 1)] / (c[(j, j)] * c[(j + 1, j + 1)]).sqrt();
        let tj = (2.0 * (1.0 - rho)).max(0.0).sqrt() / deltas[j];
        kappa += tj * deltas[j];
        tau.push(tj);
        midpoints.push(0.5 * (points[j] + points[j + 1]));
    }
    Ok(RoughnessProfile {
        tau,
        kappa,
        midpoints,
        deltas,
    })
}

/// Standard normal upper tail.
fn normal_upper_tail(u: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(u / std::f64::consts::SQRT_2)
}

/// Two-sided Kac-Rice exceedance bound at level u.
fn kac_rice_bound(u: f64, kappa: f64, include_entry: bool) -> f64 {
    let entry = if include_entry { normal_upper_tail(u) } else { 0.0 };
    2.0 * (entry + kappa / (2.0 * std::f64::consts::PI) * (-0.5 * u * u).exp())
}

fn solve_kac_rice(kappa: f64, target: f64, include_entry: bool) -> f64 {
    // the bound is strictly decreasing in u; if it is already below the
    // target at u = 0 the constraint is vacuous there
    if kac_rice_bound(0.0, kappa, include_entry) <= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, BISECT_UPPER);
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if kac_rice_bound(mid, kappa, include_entry) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Constant critical value: solves the Kac-Rice equation for the whole
/// domain. At kappa = 0 this is the two-sided normal quantile.
pub fn critical_constant(kappa: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=f64::INFINITY).contains(&kappa) {
        return Err(Error::InvalidConfig(format!("kappa = {kappa} must be >= 0")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { alpha });
    }
    Ok(solve_kac_rice(kappa, alpha, true))
}

/// A partition of [0,1] into consecutive intervals.
#[derive(Debug, Clone)]
pub struct Partition {
    bounds: Vec<(f64, f64)>,
}

impl Partition {
    /// Intervals must tile [0,1] in order without gaps or overlap.
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::BadPartition("empty interval list".into()));
        }
        let eps = 1e-12;
        if (bounds[0].0).abs() > eps {
            return Err(Error::BadPartition("first interval must start at 0".into()));
        }
        if (bounds.last().unwrap().1 - 1.0).abs() > eps {
            return Err(Error::BadPartition("last interval must end at 1".into()));
        }
        for w in bounds.windows(2) {
            if (w[0].1 - w[1].0).abs() > eps {
                return Err(Error::BadPartition(format!(
                    "interval ending at {} does not meet the next starting at {}",
                    w[0].1, w[1].0
                )));
            }
        }
        if bounds.iter().any(|&(a, b)| b <= a) {
            return Err(Error::BadPartition("intervals must have positive length".into()));
        }
        Ok(Partition { bounds })
    }

    /// Breakpoints 0 = b_0 < b_1 < ... < b_K = 1.
    pub fn from_breakpoints(breaks: &[f64]) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::BadPartition("need at least two breakpoints".into()));
        }
        Partition::new(breaks.windows(2).map(|w| (w[0], w[1])).collect())
    }

    pub fn whole_domain() -> Self {
        Partition {
            bounds: vec![(0.0, 1.0)],
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    fn index_of(&self, t: f64) -> usize {
        for (k, &(a, b)) in self.bounds.iter().enumerate() {
            if t < b || (k == self.bounds.len() - 1 && t <= b) {
                if t >= a {
                    return k;
                }
            }
        }
        self.bounds.len() - 1
    }
}

/// Piecewise-constant fair critical values over a partition.
///
/// On interval k the per-interval error budget is alpha * length_k; the
/// Gaussian entry probability is charged to the first interval only. With a
/// single interval this reduces to `critical_constant`.
pub fn critical_fair(
    profile: &RoughnessProfile,
    alpha: f64,
    partition: &Partition,
    grid: &Grid,
) -> Result<DVector<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { alpha });
    }
    let k_count = partition.len();
    let mut kappa_k = vec![0.0; k_count];
    for (j, (&m, &d)) in profile.midpoints.iter().zip(&profile.deltas).enumerate() {
        kappa_k[partition.index_of(m)] += profile.tau[j] * d;
    }
    let mut u_k = Vec::with_capacity(k_count);
    for (k, &(a, b)) in partition.intervals().iter().enumerate() {
        let target = alpha * (b - a);
        u_k.push(solve_kac_rice(kappa_k[k], target, k == 0));
    }
    Ok(DVector::from_fn(grid.len(), |j, _| {
        u_k[partition.index_of(grid.points()[j])]
    }))
}

/// Simultaneous band: center +- u_j * sqrt(C_jj / n), with u from the fair
/// Kac-Rice construction over `partition`.
///
/// Roughness comes from the estimate's attached profile when one is present
/// (the regression estimators supply the residual-covariance profile, whose
/// local variation drives the supremum), otherwise from `c_hat` itself.
pub fn build_scb(est: &MeanEstimate, alpha: f64, partition: &Partition) -> Result<Band> {
    let profile = match &est.roughness {
        Some(p) => {
            if p.tau.len() + 1 != est.grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "roughness profile has {} segments for a {}-point grid",
                    p.tau.len(),
                    est.grid.len()
                )));
            }
            p.clone()
        }
        None => roughness(&est.c_hat, &est.grid)?,
    };
    let u = critical_fair(&profile, alpha, partition, &est.grid)?;
    Ok(envelope(est, alpha, BandKind::Scb, u))
}

/// Pointwise band with the constant t-quantile critical value (n - 1 df).
pub fn build_pcb(est: &MeanEstimate, alpha: f64) -> Result<Band> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { alpha });
    }
    if est.n < 2 {
        return Err(Error::InsufficientObserved {
            observed: est.n,
            needed: 2,
        });
    }
    for j in 0..est.grid.len() {
        if est.c_hat[(j, j)] <= 0.0 {
            return Err(Error::ZeroVarianceDiagonal { index: j });
        }
    }
    let t = StudentsT::new(0.0, 1.0, (est.n - 1) as f64).expect("valid t distribution");
    let mut q = t.inverse_cdf(1.0 - alpha / 2.0);
    // Newton polish: the closed-form inversion loses accuracy at large df
    for _ in 0..4 {
        let density = t.pdf(q);
        if density <= 0.0 {
            break;
        }
        q -= (t.cdf(q) - (1.0 - alpha / 2.0)) / density;
    }
    let u = DVector::from_element(est.grid.len(), q);
    Ok(envelope(est, alpha, BandKind::Pcb, u))
}

fn envelope(est: &MeanEstimate, alpha: f64, kind: BandKind, u: DVector<f64>) -> Band {
    let nf = est.n as f64;
    let half: DVector<f64> =
        DVector::from_fn(est.grid.len(), |j, _| u[j] * (est.c_hat[(j, j)] / nf).sqrt());
    Band {
        kind,
        alpha,
        lower: &est.mu_hat - &half,
        upper: &est.mu_hat + &half,
        center: est.mu_hat.clone(),
        u,
        n: est.n,
    }
}

/// True iff the band contains `truth` at every grid point.
pub fn covers(band: &Band, truth: &DVector<f64>) -> Result<bool> {
    if truth.len() != band.center.len() {
        return Err(Error::DimensionMismatch(format!(
            "band has {} points, truth has {}",
            band.center.len(),
            truth.len()
        )));
    }
    Ok((0..truth.len()).all(|j| band.lower[j] <= truth[j] && truth[j] <= band.upper[j]))
}
