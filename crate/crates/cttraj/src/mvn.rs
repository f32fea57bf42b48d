//! Multivariate normal primitives: restriction of the full trajectory model to
//! a subject's measurement days, log-densities, and the conditional moments of
//! the unobserved coordinates given the observed ones.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ModelDims, SubjectRecord, TrajectoryParams};

/// The marginal normal model for one subject under a hypothesized origin day:
/// the full mean and covariance restricted to the occupied trajectory days.
#[derive(Debug, Clone)]
pub struct SubModel {
    /// Restricted mean, one entry per measurement.
    pub mean: DVector<f64>,
    /// Restricted covariance, `m x m`.
    pub cov: DMatrix<f64>,
    /// Hypothesized 1-based first-observation day.
    pub origin: usize,
    /// 1-based trajectory days of the measurements, strictly increasing.
    pub index_map: Vec<usize>,
}

impl SubModel {
    #[inline]
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }
}

/// Conditional distribution of the unobserved coordinates given the observed
/// ones, along with the permutation restoring the original day ordering.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    /// Conditional mean of the unobserved coordinates.
    pub mean_unobs: DVector<f64>,
    /// Conditional covariance of the unobserved coordinates, symmetric PSD.
    pub cov_unobs: DMatrix<f64>,
    /// For each position in the stacked `[observed..., unobserved...]` order,
    /// its 0-based position in the original full vector.
    pub stacked_to_full: Vec<usize>,
    /// Number of observed coordinates (prefix length of `stacked_to_full`).
    pub n_observed: usize,
}

/// Restricts `theta` and `cov` to the days a record occupies when its first
/// measurement falls on day `origin`.
pub fn extract_submodel(
    theta: &TrajectoryParams,
    cov: &DMatrix<f64>,
    record: &SubjectRecord,
    origin: usize,
) -> Result<SubModel> {
    let dims = theta.dims();
    let days = record.days_from(origin);
    if origin == 0 || origin > dims.d() {
        return Err(Error::InvalidParameter(format!(
            "origin day {origin} outside 1..={}",
            dims.d()
        )));
    }
    if let Some(&max) = days.last() {
        if max > dims.full_len() {
            return Err(Error::IndexOutOfRange {
                index: max,
                max: dims.full_len(),
            });
        }
    }
    let m = days.len();
    let mean = DVector::from_fn(m, |k, _| theta.theta()[days[k] - 1]);
    let sub_cov = DMatrix::from_fn(m, m, |k, l| cov[(days[k] - 1, days[l] - 1)]);
    Ok(SubModel {
        mean,
        cov: sub_cov,
        origin,
        index_map: days,
    })
}

/// Log-density of `values` under the sub-model, via Cholesky factorization.
pub fn log_density(sub: &SubModel, values: &DVector<f64>) -> Result<f64> {
    if values.len() != sub.len() {
        return Err(Error::DimensionMismatch {
            what: "sub-model values",
            expected: sub.len(),
            actual: values.len(),
        });
    }
    let chol = sub.cov.clone().cholesky().ok_or(Error::CholeskyFailed {
        matrix: Box::new(sub.cov.clone()),
    })?;
    Ok(log_density_prefactored(&chol, &sub.mean, values))
}

/// Log-density given a pre-computed Cholesky factor of the covariance.
pub(crate) fn log_density_prefactored(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: &DVector<f64>,
    values: &DVector<f64>,
) -> f64 {
    let m = mean.len() as f64;
    let diff = values - mean;
    let quad = chol.solve(&diff).dot(&diff);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Conditional mean and covariance of the unobserved trajectory coordinates
/// given the observed `values`, under the full model `(theta_full, cov_full)`.
///
/// Uses the Schur complement `V = S_uu - S_ou' S_oo^-1 S_ou` with triangular
/// solves on the observed block; `V` is symmetrized after computation.
pub fn conditional_moments(
    theta_full: &DVector<f64>,
    cov_full: &DMatrix<f64>,
    sub: &SubModel,
    values: &DVector<f64>,
) -> Result<ConditionalLaw> {
    let p = theta_full.len();
    if cov_full.nrows() != p || cov_full.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "full covariance",
            expected: p,
            actual: cov_full.nrows(),
        });
    }
    if values.len() != sub.len() {
        return Err(Error::DimensionMismatch {
            what: "observed values",
            expected: sub.len(),
            actual: values.len(),
        });
    }

    let obs: Vec<usize> = sub.index_map.iter().map(|&day| day - 1).collect();
    let mut taken = vec![false; p];
    for &o in &obs {
        taken[o] = true;
    }
    let unobs: Vec<usize> = (0..p).filter(|&k| !taken[k]).collect();
    let m = obs.len();
    let u = unobs.len();

    let mut stacked_to_full = obs.clone();
    stacked_to_full.extend_from_slice(&unobs);

    let theta_u = DVector::from_fn(u, |k, _| theta_full[unobs[k]]);
    let sigma_uu = DMatrix::from_fn(u, u, |k, l| cov_full[(unobs[k], unobs[l])]);

    if m == 0 {
        // No conditioning information: the law is the unconditional marginal.
        return Ok(ConditionalLaw {
            mean_unobs: theta_u,
            cov_unobs: sigma_uu,
            stacked_to_full,
            n_observed: 0,
        });
    }

    let theta_o = DVector::from_fn(m, |k, _| theta_full[obs[k]]);
    let sigma_oo = DMatrix::from_fn(m, m, |k, l| cov_full[(obs[k], obs[l])]);
    let sigma_ou = DMatrix::from_fn(m, u, |k, l| cov_full[(obs[k], unobs[l])]);

    let chol = sigma_oo.clone().cholesky().ok_or(Error::CholeskyFailed {
        matrix: Box::new(sigma_oo),
    })?;
    // W = S_oo^-1 S_ou, so e = theta_u + W'(y - theta_o), V = S_uu - S_ou' W.
    let w = chol.solve(&sigma_ou);
    let resid = values - &theta_o;
    let mean_unobs = &theta_u + w.transpose() * &resid;
    let v_raw = &sigma_uu - sigma_ou.transpose() * &w;
    let cov_unobs = (&v_raw + v_raw.transpose()) * 0.5;

    Ok(ConditionalLaw {
        mean_unobs,
        cov_unobs,
        stacked_to_full,
        n_observed: m,
    })
}

/// Assembles the full-length conditional first moment and second-moment matrix,
/// permuted back to original day ordering. Observed slots carry the observed
/// values; the unobserved block of the second moment is `V + e e'`.
pub fn assemble_moments(
    law: &ConditionalLaw,
    values: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = law.stacked_to_full.len();
    let m = law.n_observed;

    let mut y_full = DVector::zeros(p);
    for (s, &pos) in law.stacked_to_full.iter().enumerate() {
        y_full[pos] = if s < m {
            values[s]
        } else {
            law.mean_unobs[s - m]
        };
    }

    // E(yy' | obs) = y_full y_full' plus the conditional covariance embedded
    // in the unobserved block.
    let mut c_full = &y_full * y_full.transpose();
    for k in m..p {
        for l in m..p {
            c_full[(law.stacked_to_full[k], law.stacked_to_full[l])] +=
                law.cov_unobs[(k - m, l - m)];
        }
    }
    (y_full, c_full)
}

/// Convenience wrapper: conditional law plus assembled moments in one call.
pub fn imputed_moments(
    theta: &TrajectoryParams,
    cov_full: &DMatrix<f64>,
    sub: &SubModel,
    values: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let law = conditional_moments(theta.theta(), cov_full, sub, values)?;
    Ok(assemble_moments(&law, values))
}

/// Materialized dimensions consistency check used by callers that accept a
/// dense covariance directly.
pub fn check_cov_dims(cov: &DMatrix<f64>, dims: ModelDims) -> Result<()> {
    if cov.nrows() != dims.full_len() || cov.ncols() != dims.full_len() {
        return Err(Error::DimensionMismatch {
            what: "materialized covariance",
            expected: dims.full_len(),
            actual: cov.nrows(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovarianceSpec;
    use approx::assert_relative_eq;

    fn dims(d: usize) -> ModelDims {
        ModelDims::new(d).unwrap()
    }

    fn theta123() -> TrajectoryParams {
        // head (1, 2, 3) with the d=3 steady tail
        TrajectoryParams::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 3.0, 3.0]), dims(3)).unwrap()
    }

    #[test]
    fn submodel_restriction_examples() {
        // Singleton restriction at origin 2 under an identity covariance.
        let theta = theta123();
        let eye = DMatrix::identity(5, 5);
        let rec = SubjectRecord::new(vec![7.0], vec![]);
        let sub = extract_submodel(&theta, &eye, &rec, 2).unwrap();
        assert_eq!(sub.mean.as_slice(), &[2.0]);
        assert_eq!(sub.cov[(0, 0)], 1.0);
        assert_eq!(sub.index_map, vec![2]);

        // Gap of 2 from origin 1 under AR(1): off-diagonal is sigma2 * rho^2.
        let ar1 = CovarianceSpec::Ar1 {
            sigma2: 10.0,
            rho: 0.9,
        }
        .materialize(dims(3))
        .unwrap();
        let rec = SubjectRecord::new(vec![0.0, 0.0], vec![2]);
        let sub = extract_submodel(&theta, &ar1, &rec, 1).unwrap();
        assert_eq!(sub.mean.as_slice(), &[1.0, 3.0]);
        assert_relative_eq!(sub.cov[(0, 1)], 8.1, epsilon = 1e-12);
        assert_relative_eq!(sub.cov[(0, 0)], 10.0, epsilon = 1e-12);

        // Adjacent pair from origin 2.
        let rec = SubjectRecord::new(vec![0.0, 0.0], vec![1]);
        let sub = extract_submodel(&theta, &ar1, &rec, 2).unwrap();
        assert_eq!(sub.mean.as_slice(), &[2.0, 3.0]);
        assert_eq!(sub.index_map, vec![2, 3]);
    }

    #[test]
    fn submodel_rejects_out_of_range_days() {
        let theta = theta123();
        let eye = DMatrix::identity(5, 5);
        let rec = SubjectRecord::new(vec![0.0, 0.0], vec![4]);
        // origin 3 + gap 4 = day 7 > 2d-1 = 5
        match extract_submodel(&theta, &eye, &rec, 3) {
            Err(Error::IndexOutOfRange { index: 7, max: 5 }) => {}
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn log_density_standard_normal_values() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let sub = SubModel {
            mean: DVector::from_vec(vec![0.0]),
            cov: DMatrix::identity(1, 1),
            origin: 1,
            index_map: vec![1],
        };
        let ld = log_density(&sub, &DVector::from_vec(vec![0.0])).unwrap();
        assert_relative_eq!(ld, -0.5 * two_pi.ln(), epsilon = 1e-14);

        let sub2 = SubModel {
            mean: DVector::zeros(2),
            cov: DMatrix::identity(2, 2),
            origin: 1,
            index_map: vec![1, 2],
        };
        let ld2 = log_density(&sub2, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(ld2, -two_pi.ln(), epsilon = 1e-14);
    }

    #[test]
    fn log_density_matches_dense_bivariate_formula() {
        // Independent oracle: explicit 2x2 inverse and determinant.
        let mean = DVector::from_vec(vec![1.0, 3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[10.0, 8.1, 8.1, 10.0]);
        let value = DVector::from_vec(vec![2.0, 2.0]);

        let det = 10.0 * 10.0 - 8.1 * 8.1;
        let inv = DMatrix::from_row_slice(2, 2, &[10.0 / det, -8.1 / det, -8.1 / det, 10.0 / det]);
        let diff = &value - &mean;
        let quad = (inv * &diff).dot(&diff);
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;

        let sub = SubModel {
            mean,
            cov,
            origin: 1,
            index_map: vec![1, 2],
        };
        let got = log_density(&sub, &value).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn log_density_reports_cholesky_failure() {
        let sub = SubModel {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            origin: 1,
            index_map: vec![1, 2],
        };
        assert!(matches!(
            log_density(&sub, &DVector::zeros(2)),
            Err(Error::CholeskyFailed { .. })
        ));
    }

    #[test]
    fn conditional_independence_case() {
        // Identity covariance: conditioning changes nothing.
        let theta = theta123();
        let eye = DMatrix::identity(5, 5);
        let rec = SubjectRecord::new(vec![9.0], vec![]);
        let sub = extract_submodel(&theta, &eye, &rec, 1).unwrap();
        let law =
            conditional_moments(theta.theta(), &eye, &sub, &DVector::from_vec(vec![9.0])).unwrap();
        assert_eq!(law.mean_unobs.as_slice(), &[2.0, 3.0, 3.0, 3.0]);
        assert_relative_eq!(law.cov_unobs, DMatrix::identity(4, 4), epsilon = 0.0);
    }

    #[test]
    fn conditional_scalar_formula() {
        // AR(1) with rho=0.5, observe day 1: regression weights 0.5 and 0.25.
        let theta =
            TrajectoryParams::new(DVector::from_vec(vec![1.0, 2.0, 2.0]), dims(2)).unwrap();
        let cov = CovarianceSpec::Ar1 {
            sigma2: 1.0,
            rho: 0.5,
        }
        .materialize(dims(2))
        .unwrap();
        let rec = SubjectRecord::new(vec![4.0], vec![]);
        let sub = extract_submodel(&theta, &cov, &rec, 1).unwrap();
        let y = 4.0;
        let law =
            conditional_moments(theta.theta(), &cov, &sub, &DVector::from_vec(vec![y])).unwrap();
        assert_relative_eq!(law.mean_unobs[0], 2.0 + 0.5 * (y - 1.0), epsilon = 1e-12);
        assert_relative_eq!(law.mean_unobs[1], 2.0 + 0.25 * (y - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn conditional_with_empty_unobserved_set() {
        let theta =
            TrajectoryParams::new(DVector::from_vec(vec![1.0, 2.0, 2.0]), dims(2)).unwrap();
        let cov = CovarianceSpec::Ar1 {
            sigma2: 2.0,
            rho: 0.3,
        }
        .materialize(dims(2))
        .unwrap();
        let rec = SubjectRecord::new(vec![1.0, 2.0, 3.0], vec![1, 1]);
        let sub = extract_submodel(&theta, &cov, &rec, 1).unwrap();
        let values = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let law = conditional_moments(theta.theta(), &cov, &sub, &values).unwrap();
        assert_eq!(law.mean_unobs.len(), 0);

        let (y_full, c_full) = assemble_moments(&law, &values);
        assert_relative_eq!(y_full, values, epsilon = 0.0);
        assert_relative_eq!(c_full, &values * values.transpose(), epsilon = 0.0);
    }

    #[test]
    fn conditional_with_empty_observed_set_is_unconditional() {
        let theta =
            TrajectoryParams::new(DVector::from_vec(vec![1.0, 2.0, 2.0]), dims(2)).unwrap();
        let cov = CovarianceSpec::Ar1 {
            sigma2: 2.0,
            rho: 0.3,
        }
        .materialize(dims(2))
        .unwrap();
        let sub = SubModel {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
            origin: 1,
            index_map: vec![],
        };
        let law = conditional_moments(theta.theta(), &cov, &sub, &DVector::zeros(0)).unwrap();
        assert_relative_eq!(law.mean_unobs, theta.theta().clone(), epsilon = 0.0);
        assert_relative_eq!(law.cov_unobs, cov, epsilon = 0.0);
    }

    #[test]
    fn assemble_moments_diagonal_case() {
        // Independence, observe day 1 of 3: unobserved second moments are
        // sigma^2 + theta^2 on the diagonal and theta_k theta_l off it.
        let theta =
            TrajectoryParams::new(DVector::from_vec(vec![1.0, 2.0, 2.0]), dims(2)).unwrap();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0, 4.0]));
        let rec = SubjectRecord::new(vec![5.0], vec![]);
        let sub = extract_submodel(&theta, &cov, &rec, 1).unwrap();
        let values = DVector::from_vec(vec![5.0]);
        let law = conditional_moments(theta.theta(), &cov, &sub, &values).unwrap();
        let (y_full, c_full) = assemble_moments(&law, &values);

        assert_eq!(y_full.as_slice(), &[5.0, 2.0, 2.0]);
        assert_relative_eq!(c_full[(1, 1)], 4.0 + 4.0, epsilon = 1e-12);
        assert_relative_eq!(c_full[(2, 2)], 4.0 + 4.0, epsilon = 1e-12);
        assert_relative_eq!(c_full[(1, 2)], 2.0 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(c_full[(0, 1)], 5.0 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn observed_slots_pass_through_and_residual_cov_is_psd() {
        let theta = theta123();
        let cov = CovarianceSpec::Ar1 {
            sigma2: 10.0,
            rho: 0.9,
        }
        .materialize(dims(3))
        .unwrap();
        let rec = SubjectRecord::new(vec![2.0, 2.0], vec![2]);
        let sub = extract_submodel(&theta, &cov, &rec, 1).unwrap();
        let values = DVector::from_vec(vec![2.0, 2.0]);
        let law = conditional_moments(theta.theta(), &cov, &sub, &values).unwrap();
        let (y_full, c_full) = assemble_moments(&law, &values);

        for (k, &day) in sub.index_map.iter().enumerate() {
            assert_eq!(y_full[day - 1], values[k]);
        }
        // C - y y' equals the conditional covariance embedded in full
        // coordinates, hence PSD.
        let resid = &c_full - &y_full * y_full.transpose();
        let min_eig = crate::model::smallest_eigenvalue(&resid);
        assert!(min_eig > -1e-10, "min eigenvalue {min_eig}");
    }

    #[test]
    fn density_integrates_to_one_on_grid() {
        // 1-D quadrature.
        let sub1 = SubModel {
            mean: DVector::from_vec(vec![1.5]),
            cov: DMatrix::from_element(1, 1, 2.0),
            origin: 1,
            index_map: vec![1],
        };
        let sd = 2.0_f64.sqrt();
        let h = 0.005;
        let steps = ((16.0 * sd) / h) as usize;
        let mut total = 0.0;
        for k in 0..steps {
            let x = 1.5 - 8.0 * sd + (k as f64 + 0.5) * h;
            total += log_density(&sub1, &DVector::from_vec(vec![x])).unwrap().exp() * h;
        }
        assert!((total - 1.0).abs() < 1e-4, "1-D integral {total}");

        // 2-D quadrature with correlation.
        let sub2 = SubModel {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]),
            origin: 1,
            index_map: vec![1, 2],
        };
        let h = 0.05;
        let half = 7.0;
        let steps = (2.0 * half / h) as usize;
        let mut total = 0.0;
        for a in 0..steps {
            let x = -half + (a as f64 + 0.5) * h;
            for b in 0..steps {
                let y = -half + (b as f64 + 0.5) * h;
                total += log_density(&sub2, &DVector::from_vec(vec![x, y]))
                    .unwrap()
                    .exp()
                    * h
                    * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "2-D integral {total}");
    }
}
