//! Core domain types: model dimensions, the daily mean trajectory with its
//! steady-state tail, onset weights, covariance structures, and subject records.
//!
//! Day indices are 1-based on every public surface. A trajectory spans days
//! `1..=2d-1`: a subject whose first measurement falls on day `j <= d` and whose
//! measurement gaps sum to at most `d-1` never indexes past day `2d-1`. Means
//! and variances are constant from day `d` onward (the steady-state tail).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance below which a materialized covariance is rejected as non-PD.
pub const PD_EIGENVALUE_TOL: f64 = 1e-10;

/// Tolerance for onset-weight normalization.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Problem dimensions: `d` is the latest possible first-observation day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    d: usize,
}

impl ModelDims {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        Ok(Self { d })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Trajectory length `2d - 1`.
    #[inline]
    pub fn full_len(&self) -> usize {
        2 * self.d - 1
    }
}

/// The daily mean vector over days `1..=2d-1`, constant from day `d` onward.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryParams {
    theta: DVector<f64>,
    dims: ModelDims,
}

impl TrajectoryParams {
    /// Builds from a full-length vector; the tail entries must already equal
    /// `theta[d]` exactly.
    pub fn new(theta: DVector<f64>, dims: ModelDims) -> Result<Self> {
        if theta.len() != dims.full_len() {
            return Err(Error::DimensionMismatch {
                what: "trajectory mean",
                expected: dims.full_len(),
                actual: theta.len(),
            });
        }
        let steady = theta[dims.d() - 1];
        if theta.iter().skip(dims.d()).any(|&v| v != steady) {
            return Err(Error::InvalidParameter(
                "trajectory tail entries must equal the day-d value".into(),
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory mean"));
        }
        Ok(Self { theta, dims })
    }

    /// Builds from the `d` free values for days `1..=d`; the tail is filled
    /// with the day-`d` value, making the convention exact by construction.
    pub fn from_active(active: &[f64], dims: ModelDims) -> Result<Self> {
        if active.len() != dims.d() {
            return Err(Error::DimensionMismatch {
                what: "active trajectory mean",
                expected: dims.d(),
                actual: active.len(),
            });
        }
        let mut theta = DVector::zeros(dims.full_len());
        for (k, &v) in active.iter().enumerate() {
            theta[k] = v;
        }
        let steady = active[dims.d() - 1];
        for k in dims.d()..dims.full_len() {
            theta[k] = steady;
        }
        Self::new(theta, dims)
    }

    #[inline]
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    #[inline]
    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Mean for a 1-based day index.
    #[inline]
    pub fn day(&self, day: usize) -> f64 {
        self.theta[day - 1]
    }

    /// 1-based day of the largest mean (smallest day wins ties).
    pub fn peak_day(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.theta.iter().enumerate() {
            if v > self.theta[best] {
                best = k;
            }
        }
        best + 1
    }
}

/// Mixing probabilities of the first-observation day, supported on `1..=d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetWeights {
    q: DVector<f64>,
}

impl OnsetWeights {
    pub fn new(q: DVector<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidParameter("onset weights are empty".into()));
        }
        if q.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "onset weights must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!(
                "onset weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { q })
    }

    /// Normalizes an arbitrary non-negative vector onto the simplex.
    pub fn normalized(raw: DVector<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidParameter(
                "onset weights must have positive finite mass".into(),
            ));
        }
        Self::new(raw / sum)
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            q: DVector::from_element(d, 1.0 / d as f64),
        }
    }

    #[inline]
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.q.len()
    }

    /// Weight for a 1-based first-observation day.
    #[inline]
    pub fn day(&self, day: usize) -> f64 {
        self.q[day - 1]
    }
}

/// Covariance structure over the full trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// Dense symmetric covariance; diagonal entries for days `d..=2d-1` must
    /// all equal the day-`d` variance.
    Full(DMatrix<f64>),
    /// First-order autoregressive structure `sigma2 * rho^|k-l|`.
    Ar1 { sigma2: f64, rho: f64 },
    /// Linear combination `sum_j beta_j * B_j` of known symmetric matrices.
    Linear {
        basis: Vec<DMatrix<f64>>,
        beta: DVector<f64>,
    },
}

impl CovarianceSpec {
    /// Builds the dense `(2d-1) x (2d-1)` matrix and checks it is symmetric
    /// positive definite. The error carries the offending smallest eigenvalue.
    pub fn materialize(&self, dims: ModelDims) -> Result<DMatrix<f64>> {
        let p = dims.full_len();
        let mat = match self {
            CovarianceSpec::Full(m) => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(Error::DimensionMismatch {
                        what: "full covariance",
                        expected: p,
                        actual: m.nrows(),
                    });
                }
                if !is_symmetric(m) {
                    return Err(Error::InvalidParameter(
                        "full covariance must be symmetric".into(),
                    ));
                }
                let steady = m[(dims.d() - 1, dims.d() - 1)];
                if (dims.d()..p).any(|k| m[(k, k)] != steady) {
                    return Err(Error::InvalidParameter(
                        "full covariance tail variances must equal the day-d variance".into(),
                    ));
                }
                m.clone()
            }
            CovarianceSpec::Ar1 { sigma2, rho } => {
                if *sigma2 <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "AR(1) variance must be positive, got {sigma2}"
                    )));
                }
                if rho.abs() >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "AR(1) correlation must lie in (-1, 1), got {rho}"
                    )));
                }
                DMatrix::from_fn(p, p, |k, l| {
                    sigma2 * rho.powi((k as i64 - l as i64).unsigned_abs() as i32)
                })
            }
            CovarianceSpec::Linear { basis, beta } => {
                if basis.len() != beta.len() {
                    return Err(Error::DimensionMismatch {
                        what: "linear covariance coefficients",
                        expected: basis.len(),
                        actual: beta.len(),
                    });
                }
                if basis.is_empty() {
                    return Err(Error::InvalidParameter(
                        "linear covariance basis is empty".into(),
                    ));
                }
                let mut mat = DMatrix::zeros(p, p);
                for (b, &coef) in basis.iter().zip(beta.iter()) {
                    if b.nrows() != p || b.ncols() != p {
                        return Err(Error::DimensionMismatch {
                            what: "linear covariance basis matrix",
                            expected: p,
                            actual: b.nrows(),
                        });
                    }
                    if !is_symmetric(b) {
                        return Err(Error::InvalidParameter(
                            "linear covariance basis matrices must be symmetric".into(),
                        ));
                    }
                    mat += b * coef;
                }
                mat
            }
        };
        check_positive_definite(&mat)?;
        Ok(mat)
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for k in 0..m.nrows() {
        for l in (k + 1)..m.ncols() {
            if m[(k, l)] != m[(l, k)] {
                return false;
            }
        }
    }
    true
}

/// Rejects matrices whose smallest eigenvalue is at or below [`PD_EIGENVALUE_TOL`].
pub fn check_positive_definite(mat: &DMatrix<f64>) -> Result<()> {
    let min = smallest_eigenvalue(mat);
    if !(min > PD_EIGENVALUE_TOL) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

pub fn smallest_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// One subject's observed values (transformed scale) and the day gaps between
/// consecutive measurements. A single measurement has an empty gap vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub values: Vec<f64>,
    pub gaps: Vec<usize>,
}

impl SubjectRecord {
    pub fn new(values: Vec<f64>, gaps: Vec<usize>) -> Self {
        Self { values, gaps }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn gap_sum(&self) -> usize {
        self.gaps.iter().sum()
    }

    /// 1-based trajectory days occupied when the first measurement falls on
    /// day `origin`.
    pub fn days_from(&self, origin: usize) -> Vec<usize> {
        let mut days = Vec::with_capacity(self.len());
        let mut day = origin;
        days.push(day);
        for &g in &self.gaps {
            day += g;
            days.push(day);
        }
        days
    }
}

/// A collection of subject records tied to fixed model dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SubjectRecord>,
    pub dims: ModelDims,
}

impl Dataset {
    pub fn new(records: Vec<SubjectRecord>, dims: ModelDims) -> Self {
        Self { records, dims }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Total number of measurements across records.
    pub fn measurement_count(&self) -> usize {
        self.records.iter().map(|r| r.len()).sum()
    }
}

/// Which record invariant a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// The record has no measurements.
    Empty,
    /// Gap count must be one less than the measurement count.
    GapCount,
    /// Every gap must be a positive number of days.
    GapPositive,
    /// Gap sum must stay below `d` so a day-`d` origin remains feasible.
    GapSumTooLarge,
    /// Values must be finite.
    NonFiniteValue,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rule::Empty => write!(f, "record has no measurements"),
            Rule::GapCount => write!(f, "gap count must equal measurement count minus one"),
            Rule::GapPositive => write!(f, "gap < 1"),
            Rule::GapSumTooLarge => write!(f, "gap sum >= d"),
            Rule::NonFiniteValue => write!(f, "non-finite measurement value"),
        }
    }
}

/// A single record-level invariant violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub record: usize,
    pub rule: Rule,
}

/// Checks every record against the model invariants. Returns an empty list
/// iff the dataset is valid; violations are reported, never raised.
pub fn validate_dataset(data: &Dataset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (i, rec) in data.records.iter().enumerate() {
        if rec.is_empty() {
            out.push(Diagnostic {
                record: i,
                rule: Rule::Empty,
            });
            continue;
        }
        if rec.gaps.len() != rec.len() - 1 {
            out.push(Diagnostic {
                record: i,
                rule: Rule::GapCount,
            });
        }
        if rec.gaps.iter().any(|&g| g == 0) {
            out.push(Diagnostic {
                record: i,
                rule: Rule::GapPositive,
            });
        }
        if rec.gap_sum() >= data.dims.d() {
            out.push(Diagnostic {
                record: i,
                rule: Rule::GapSumTooLarge,
            });
        }
        if rec.values.iter().any(|v| !v.is_finite()) {
            out.push(Diagnostic {
                record: i,
                rule: Rule::NonFiniteValue,
            });
        }
    }
    out
}

/// Maps raw cycle-threshold readings onto the increasing "viral load" scale
/// `ceiling - ct`. The transform is its own inverse.
pub fn ct_transform(ct: &[f64], ceiling: f64) -> Result<Vec<f64>> {
    for (index, &value) in ct.iter().enumerate() {
        if value > ceiling {
            return Err(Error::AboveCeiling {
                index,
                value,
                ceiling,
            });
        }
    }
    Ok(ct.iter().map(|&v| ceiling - v).collect())
}

/// Default detection bound for cycle-threshold data.
pub const DEFAULT_CT_CEILING: f64 = 40.0;
