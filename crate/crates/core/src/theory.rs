//! High-rate distortion predictions and their Monte Carlo validation on
//! synthetic jointly-Gaussian sources.
//!
//! The closed forms say output distortion at average depth `R` is
//! `(prod_k g_k v_k)^(1/n) * eps^2 * 2^(-2R)` with `g_k`, `v_k` the diagonal
//! entries of the (transformed) gradient and weight covariances. Monte Carlo
//! draws real Gaussian weights, quantizes their transform coefficients under
//! the equal-distortion bit split the proofs prescribe, and measures the
//! output error through a fixed linear map whose Jacobian covariance is the
//! gradient covariance. The efficiency constant `eps^2` cancels in every
//! gain ratio and is fitted, never assumed.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quant::{quantize_value, QuantParams, MAX_BITS};
use crate::rng::substream;
use crate::transform::{coding_gain, TransformKind, TransformPlan};

/// A jointly-Gaussian weight source with a known gradient covariance.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub dim: usize,
    pub c_theta: DMatrix<f64>,
    pub c_gamma: DMatrix<f64>,
    pub seed: u64,
    /// Quantizer-efficiency constant used by the predictors; a fit
    /// parameter, not a law.
    pub epsilon2: f64,
    theta_factor: DMatrix<f64>,
    gamma_factor_t: DMatrix<f64>,
}

impl SyntheticSource {
    pub fn new(c_theta: DMatrix<f64>, c_gamma: DMatrix<f64>, seed: u64) -> Result<Self> {
        let dim = c_theta.nrows();
        if c_gamma.nrows() != dim || c_theta.ncols() != dim || c_gamma.ncols() != dim {
            return Err(Error::shape(
                "synthetic source",
                format!("{dim}x{dim} covariance pair"),
                format!("{}x{} and {}x{}", c_theta.nrows(), c_theta.ncols(), c_gamma.nrows(), c_gamma.ncols()),
            ));
        }
        let theta_factor = nalgebra::Cholesky::new(c_theta.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("weight covariance".into()))?
            .l();
        // Output map A = L^t with C_gamma = L L^t: ||A d||^2 = d^t C_gamma d.
        let gamma_factor_t = nalgebra::Cholesky::new(c_gamma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("gradient covariance".into()))?
            .l()
            .transpose();
        Ok(SyntheticSource {
            dim,
            c_theta,
            c_gamma,
            seed,
            epsilon2: 1.0,
            theta_factor,
            gamma_factor_t,
        })
    }

    /// Unit-variance white source with identity gradient covariance.
    pub fn white(dim: usize, seed: u64) -> Self {
        Self::new(DMatrix::identity(dim, dim), DMatrix::identity(dim, dim), seed)
            .expect("identity covariances are positive-definite")
    }

    /// AR(1)-correlated weights and gradients.
    pub fn ar1(dim: usize, rho_theta: f64, rho_gamma: f64, seed: u64) -> Result<Self> {
        let toeplitz = |rho: f64| {
            DMatrix::from_fn(dim, dim, |i, j| rho.powi((i as i32 - j as i32).abs()))
        };
        Self::new(toeplitz(rho_theta), toeplitz(rho_gamma), seed)
    }

    pub fn with_epsilon2(mut self, epsilon2: f64) -> Self {
        self.epsilon2 = epsilon2;
        self
    }

    fn draw(&self, rng: &mut crate::rng::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        &self.theta_factor * z
    }

    /// Output distortion of a weight error through the fixed linear map.
    fn output_error(&self, d: &DVector<f64>) -> f64 {
        (&self.gamma_factor_t * d).norm_squared()
    }
}

fn log_diag_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].max(f64::MIN_POSITIVE).ln()).sum()
}

/// Transformed diagonal entries entering the distortion formulas:
/// weights `(U^t C_th U)_kk` and gradients `(S^t C_g S)_kk`.
fn transformed_diagonals(src: &SyntheticSource, plan: &TransformPlan) -> (DVector<f64>, DVector<f64>) {
    let t = &plan.analysis * &src.c_theta * plan.analysis.transpose();
    let g = plan.synthesis.transpose() * &src.c_gamma * &plan.synthesis;
    (t.diagonal(), g.diagonal())
}

/// Predicted minimum distortion quantizing the raw source at average
/// bit-depth `r` with optimal per-coordinate depths.
pub fn predict_d_pcm(src: &SyntheticSource, r: f64) -> f64 {
    let n = src.dim as f64;
    let k = ((log_diag_sum(&src.c_theta) + log_diag_sum(&src.c_gamma)) / n).exp();
    k * src.epsilon2 * (-2.0 * r).exp2()
}

/// Predicted minimum distortion quantizing transform coefficients instead.
pub fn predict_d_tc(src: &SyntheticSource, plan: &TransformPlan, r: f64) -> f64 {
    let n = src.dim as f64;
    let (tv, gv) = transformed_diagonals(src, plan);
    let logk: f64 = tv
        .iter()
        .zip(gv.iter())
        .map(|(a, b)| a.max(f64::MIN_POSITIVE).ln() + b.max(f64::MIN_POSITIVE).ln())
        .sum();
    (logk / n).exp() * src.epsilon2 * (-2.0 * r).exp2()
}

/// Monte Carlo configuration. `step_factor` is the quantizer loading:
/// coefficient `k` at fractional depth `R_k` uses step
/// `step_factor * sigma_k * 2^(-R_k)`, realized at a fixed whole-bit depth
/// wide enough that clipping never engages.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub trials: usize,
    pub step_factor: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            trials: 100_000,
            step_factor: 4.0,
        }
    }
}

const CHUNK: usize = 1024;

/// Measures mean output distortion of quantizing the source's transform
/// coefficients at average depth `r`, with the equal-distortion fractional
/// bit split across coefficients. Totals are bit-identical for a fixed seed
/// regardless of worker count.
pub fn monte_carlo_distortion(
    src: &SyntheticSource,
    plan: &TransformPlan,
    r: u8,
    cfg: &McConfig,
) -> Result<f64> {
    if cfg.trials < 1000 {
        return Err(Error::InvalidParam("need at least 1000 trials".into()));
    }
    if r == 0 {
        return Err(Error::InvalidParam("high-rate measurement needs r >= 1".into()));
    }
    let (tv, gv) = transformed_diagonals(src, plan);
    // equal-distortion split: R_k = r + log2(w_k v_k)/2 - mean
    let logs: Vec<f64> = tv
        .iter()
        .zip(gv.iter())
        .map(|(v, w)| {
            if *v <= 0.0 || *w <= 0.0 {
                return Err(Error::InvalidParam(
                    "transformed covariance has a non-positive diagonal entry".into(),
                ));
            }
            Ok(0.5 * (v * w).log2())
        })
        .collect::<Result<_>>()?;
    let mean_log = logs.iter().sum::<f64>() / src.dim as f64;
    let steps: Vec<f64> = (0..src.dim)
        .map(|k| {
            let rk = r as f64 + logs[k] - mean_log;
            cfg.step_factor * tv[k].sqrt() * (-rk).exp2()
        })
        .collect();
    let params: Vec<QuantParams> = steps
        .iter()
        .map(|&s| QuantParams::new(MAX_BITS, s))
        .collect::<Result<_>>()?;

    let chunks = cfg.trials.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(cfg.trials);
            let mut sum = 0.0;
            for trial in lo..hi {
                let mut rng = substream(src.seed, trial as u64);
                let theta = src.draw(&mut rng);
                let t = &plan.analysis * &theta;
                let tq = DVector::from_fn(src.dim, |k, _| quantize_value(t[k], params[k]).1);
                let theta_q = &plan.synthesis * tq;
                sum += src.output_error(&(theta - theta_q));
            }
            sum
        })
        .collect();
    let total: f64 = sums.iter().sum();
    Ok(total / (cfg.trials as f64 * src.dim as f64))
}

/// Least-squares fit of the efficiency constant from measured distortions
/// against the `2^(-2R)` law over the given depths. Errors if the per-depth
/// estimates spread more than 10% around their geometric mean.
pub fn fit_epsilon(src: &SyntheticSource, depths: &[u8], cfg: &McConfig) -> Result<f64> {
    if depths.is_empty() {
        return Err(Error::InvalidParam("need at least one depth".into()));
    }
    let plan = TransformPlan::identity(src.dim, crate::covariance::Axis::Column);
    let reference = src.clone().with_epsilon2(1.0);
    let mut estimates = Vec::with_capacity(depths.len());
    for &r in depths {
        let measured = monte_carlo_distortion(&reference, &plan, r, cfg)?;
        let predicted_unit = predict_d_pcm(&reference, r as f64);
        estimates.push(measured / predicted_unit);
    }
    let log_mean = estimates.iter().map(|e| e.ln()).sum::<f64>() / estimates.len() as f64;
    let fitted = log_mean.exp();
    for (r, e) in depths.iter().zip(&estimates) {
        let rel = (e / fitted - 1.0).abs();
        if rel > 0.10 {
            return Err(Error::InvalidParam(format!(
                "efficiency fit did not converge: estimate {e:.4} at R={r} strays {:.1}% from {fitted:.4} \
                 (raise trials or the depth range)",
                rel * 100.0
            )));
        }
    }
    Ok(fitted)
}

/// One row of the validation report.
#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub source: String,
    pub plan: TransformKind,
    pub depth: u8,
    pub predicted: f64,
    pub measured: f64,
    pub ratio: f64,
}

/// Runs the full validation suite on one source: fits the efficiency
/// constant, then reports predicted vs measured distortion per depth for
/// the identity, KLT, and ELT plans.
pub fn validate_source(
    name: &str,
    src: &SyntheticSource,
    depths: &[u8],
    cfg: &McConfig,
) -> Result<Vec<ValidationRow>> {
    let eps = fit_epsilon(src, depths, cfg)?;
    let fitted = src.clone().with_epsilon2(eps);
    let plans = vec![
        TransformPlan::identity(src.dim, crate::covariance::Axis::Column),
        crate::transform::klt(&src.c_theta, crate::covariance::Axis::Column)?,
        crate::transform::elt(&src.c_theta, &src.c_gamma, crate::covariance::Axis::Column)?,
    ];
    let mut rows = Vec::new();
    for plan in &plans {
        for &r in depths {
            let predicted = predict_d_tc(&fitted, plan, r as f64);
            let measured = monte_carlo_distortion(&fitted, plan, r, cfg)?;
            rows.push(ValidationRow {
                source: name.to_string(),
                plan: plan.kind,
                depth: r,
                predicted,
                measured,
                ratio: measured / predicted,
            });
        }
    }
    Ok(rows)
}

/// Checks the validation rows: per-bit decay in `[3.2, 4.8]` and the
/// transform-vs-none gain within 25% of the closed form.
pub fn validation_passes(src: &SyntheticSource, rows: &[ValidationRow]) -> bool {
    let mut ok = true;
    let kinds = [TransformKind::None, TransformKind::Klt, TransformKind::Elt];
    for kind in kinds {
        let mut per: Vec<&ValidationRow> = rows.iter().filter(|r| r.plan == kind).collect();
        per.sort_by_key(|r| r.depth);
        for w in per.windows(2) {
            if w[1].depth == w[0].depth + 1 {
                let decay = w[0].measured / w[1].measured;
                ok &= (3.2..=4.8).contains(&decay);
            }
        }
    }
    // measured gain vs closed form at the deepest common depth
    if let Some(rmax) = rows.iter().map(|r| r.depth).max() {
        let find = |kind| {
            rows.iter()
                .find(|r| r.plan == kind && r.depth == rmax)
                .map(|r| r.measured)
        };
        if let (Some(none), Some(elt_d)) = (find(TransformKind::None), find(TransformKind::Elt)) {
            let plan = crate::transform::elt(&src.c_theta, &src.c_gamma, crate::covariance::Axis::Column)
                .expect("validated source");
            let g = coding_gain(&src.c_theta, &src.c_gamma, &plan);
            let measured_gain = none / elt_d;
            ok &= (measured_gain / g - 1.0).abs() <= 0.25;
        }
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Axis;
    use crate::transform::{elt, klt};

    fn fast_cfg() -> McConfig {
        McConfig { trials: 20_000, step_factor: 4.0 }
    }

    #[test]
    fn scalar_specialization() {
        let src = SyntheticSource::new(
            DMatrix::from_element(1, 1, 2.25),
            DMatrix::identity(1, 1),
            1,
        )
        .unwrap()
        .with_epsilon2(1.5);
        let d = predict_d_pcm(&src, 3.0);
        assert!((d - 2.25 * 1.5 * 2f64.powi(-6)).abs() < 1e-15);
    }

    #[test]
    fn one_extra_bit_divides_prediction_by_four() {
        let src = SyntheticSource::white(4, 2).with_epsilon2(1.3);
        for r in 1..10 {
            let ratio = predict_d_pcm(&src, r as f64) / predict_d_pcm(&src, r as f64 + 1.0);
            assert_eq!(ratio, 4.0);
        }
    }

    #[test]
    fn two_dim_diagonal_case() {
        let src = SyntheticSource::new(
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            3,
        )
        .unwrap();
        assert!((predict_d_pcm(&src, 3.0) - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn identity_plan_prediction_matches_pcm() {
        let src = SyntheticSource::ar1(4, 0.7, 0.4, 4).unwrap().with_epsilon2(2.0);
        let plan = TransformPlan::identity(4, Axis::Column);
        for r in [2.0, 5.5, 8.0] {
            let a = predict_d_pcm(&src, r);
            let b = predict_d_tc(&src, &plan, r);
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn prediction_ratio_equals_coding_gain() {
        let src = SyntheticSource::ar1(6, 0.8, 0.5, 5).unwrap().with_epsilon2(1.7);
        for plan in [
            klt(&src.c_theta, Axis::Column).unwrap(),
            elt(&src.c_theta, &src.c_gamma, Axis::Column).unwrap(),
        ] {
            let g = coding_gain(&src.c_theta, &src.c_gamma, &plan);
            for r in [4.0, 8.0] {
                let ratio = predict_d_pcm(&src, r) / predict_d_tc(&src, &plan, r);
                assert!((ratio / g - 1.0).abs() <= 1e-12, "ratio {ratio} gain {g}");
            }
        }
    }

    #[test]
    fn elt_prediction_dominates_alternatives() {
        let mut rng = crate::rng::seeded(6);
        use rand_distr::{Distribution, StandardNormal};
        for _ in 0..20 {
            let dim = 4;
            let mk = |rng: &mut crate::rng::Rng| {
                let a: DMatrix<f64> =
                    DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
                &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.2
            };
            let src = SyntheticSource::new(mk(&mut rng), mk(&mut rng), 7).unwrap();
            let d_none = predict_d_tc(&src, &TransformPlan::identity(dim, Axis::Column), 8.0);
            let d_klt = predict_d_tc(&src, &klt(&src.c_theta, Axis::Column).unwrap(), 8.0);
            let d_elt = predict_d_tc(
                &src,
                &elt(&src.c_theta, &src.c_gamma, Axis::Column).unwrap(),
                8.0,
            );
            assert!(d_elt <= d_klt * (1.0 + 1e-9));
            assert!(d_elt <= d_none * (1.0 + 1e-9));
        }
    }

    #[test]
    fn white_source_has_nothing_to_gain() {
        let src = SyntheticSource::white(4, 8);
        let cfg = fast_cfg();
        let id = TransformPlan::identity(4, Axis::Column);
        let d_id = monte_carlo_distortion(&src, &id, 8, &cfg).unwrap();
        let d_klt =
            monte_carlo_distortion(&src, &klt(&src.c_theta, Axis::Column).unwrap(), 8, &cfg).unwrap();
        assert!((d_id / d_klt - 1.0).abs() <= 0.05, "gain {}", d_id / d_klt);
    }

    #[test]
    fn measured_decay_tracks_the_high_rate_law() {
        let src = SyntheticSource::ar1(4, 0.6, 0.3, 9).unwrap();
        let plan = TransformPlan::identity(4, Axis::Column);
        let cfg = fast_cfg();
        let d8 = monte_carlo_distortion(&src, &plan, 8, &cfg).unwrap();
        let d9 = monte_carlo_distortion(&src, &plan, 9, &cfg).unwrap();
        let ratio = d8 / d9;
        assert!((3.2..=4.8).contains(&ratio), "decay {ratio}");
    }

    #[test]
    fn measured_gain_matches_prediction_within_quarter() {
        let src = SyntheticSource::ar1(4, 0.8, 0.5, 10).unwrap();
        let cfg = McConfig { trials: 100_000, step_factor: 4.0 };
        let id = TransformPlan::identity(4, Axis::Column);
        let plan = elt(&src.c_theta, &src.c_gamma, Axis::Column).unwrap();
        let d_none = monte_carlo_distortion(&src, &id, 8, &cfg).unwrap();
        let d_elt = monte_carlo_distortion(&src, &plan, 8, &cfg).unwrap();
        let g = coding_gain(&src.c_theta, &src.c_gamma, &plan);
        let measured = d_none / d_elt;
        assert!((measured / g - 1.0).abs() <= 0.25, "measured {measured} vs {g}");
    }

    #[test]
    fn elt_is_empirically_optimal_across_random_instances() {
        let mut rng = crate::rng::seeded(14);
        use rand_distr::{Distribution, StandardNormal};
        let cfg = McConfig { trials: 4_000, step_factor: 4.0 };
        let mk = |rng: &mut crate::rng::Rng| {
            let a: DMatrix<f64> = DMatrix::from_fn(4, 4, |_, _| StandardNormal.sample(rng));
            let mut c: DMatrix<f64> = &a * a.transpose() / 4.0;
            for i in 0..4 {
                c[(i, i)] += 0.2;
            }
            let ct = c.transpose();
            0.5 * (c + ct)
        };
        for trial in 0..50 {
            let src = SyntheticSource::new(mk(&mut rng), mk(&mut rng), 1000 + trial).unwrap();
            let d_elt = monte_carlo_distortion(
                &src,
                &elt(&src.c_theta, &src.c_gamma, Axis::Column).unwrap(),
                8,
                &cfg,
            )
            .unwrap();
            let d_klt =
                monte_carlo_distortion(&src, &klt(&src.c_theta, Axis::Column).unwrap(), 8, &cfg)
                    .unwrap();
            let d_none =
                monte_carlo_distortion(&src, &TransformPlan::identity(4, Axis::Column), 8, &cfg)
                    .unwrap();
            assert!(d_elt <= d_klt * 1.1, "trial {trial}: elt {d_elt} vs klt {d_klt}");
            assert!(d_elt <= d_none * 1.1, "trial {trial}: elt {d_elt} vs none {d_none}");
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let src = SyntheticSource::ar1(3, 0.5, 0.5, 11).unwrap();
        let plan = TransformPlan::identity(3, Axis::Column);
        let cfg = McConfig { trials: 5_000, step_factor: 4.0 };
        let a = monte_carlo_distortion(&src, &plan, 7, &cfg).unwrap();
        let b = monte_carlo_distortion(&src, &plan, 7, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fitted_epsilon_sits_in_the_uniform_quantizer_regime() {
        let src = SyntheticSource::white(2, 12);
        let eps = fit_epsilon(&src, &[6, 7, 8], &fast_cfg()).unwrap();
        assert!((1.0..=3.0).contains(&eps), "eps^2 {eps}");
    }

    #[test]
    fn fitted_epsilon_ignores_source_scale_and_dimension() {
        let cfg = fast_cfg();
        let base = fit_epsilon(&SyntheticSource::white(1, 13), &[6, 7, 8], &cfg).unwrap();
        let scaled_src = SyntheticSource::new(
            DMatrix::identity(1, 1) * 25.0,
            DMatrix::identity(1, 1),
            13,
        )
        .unwrap();
        let scaled = fit_epsilon(&scaled_src, &[6, 7, 8], &cfg).unwrap();
        assert!((scaled / base - 1.0).abs() <= 0.10, "{base} vs {scaled}");
        let wide = fit_epsilon(&SyntheticSource::white(4, 13), &[6, 7, 8], &cfg).unwrap();
        assert!((wide / base - 1.0).abs() <= 0.10, "{base} vs {wide}");
    }
}
