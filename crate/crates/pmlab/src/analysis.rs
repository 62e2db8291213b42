//! Closed-form error analysis: the asymptotic market-maker bias, the
//! eta ratios comparing IND and LMSR bias, convergence-rate bounds from
//! local strong convexity, empirical strong convexity from simulated gap
//! curves, the effective sample size and sampling-error bound, the three-way
//! error decomposition, and the spectral facts behind the factor-of-two
//! cost comparison.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostKind;
use crate::dynamics::{block_count, DynamicsKind};
use crate::error::{Error, Result};
use crate::expfam::{self, PriceVector};
use crate::linops;

/// Denominators below this are treated as the degenerate uniform case when
/// forming the eta ratios.
const UNIFORM_GUARD: f64 = 1e-12;

/// The three-way split of the forecast error at a point in time.
#[derive(Debug, Clone, Copy)]
pub struct ErrorDecomposition {
    /// || mu_true - mu_bar ||
    pub sampling: f64,
    /// || mu_bar - mu_star ||
    pub bias: f64,
    /// || mu_star - mu_t ||
    pub convergence: f64,
    /// || mu_true - mu_t ||
    pub total: f64,
}

/// Leading-order local strong-convexity bounds and the induced per-trade
/// convergence factors kappa = 1 - sigma / |blocks|.
#[derive(Debug, Clone, Copy)]
pub struct SigmaBounds {
    pub sigma_low: f64,
    /// Absent for SSD, where only a lower bound is known.
    pub sigma_high: Option<f64>,
    pub kappa_high: f64,
    pub kappa_low: Option<f64>,
}

/// First-order market-maker bias -b (a_bar / N) H_T(mu_bar) s_C(mu_bar),
/// where s_C is any conjugate subgradient element of the cost at mu_bar.
/// The result does not depend on which element is used.
pub fn asymptotic_bias(
    mu_bar: &PriceVector,
    kind: CostKind,
    b: f64,
    a_bar: f64,
    n: usize,
) -> Result<DVector<f64>> {
    let h = expfam::payoff_covariance(mu_bar)?;
    let s = kind.state_for_price(mu_bar)?;
    Ok(h * s * (-b * a_bar / n as f64))
}

/// Ratio of the first-order IND bias to the first-order LMSR bias at the
/// same liquidity: || H s_IND || / || H s_LMSR ||. Always in [1, 2].
pub fn eta(mu_bar: &PriceVector) -> Result<f64> {
    let h = expfam::payoff_covariance(mu_bar)?;
    let s_lmsr = centered(CostKind::Lmsr.state_for_price(mu_bar)?);
    let s_ind = centered(CostKind::Ind.state_for_price(mu_bar)?);
    let denom = (&h * s_lmsr).norm();
    if denom < UNIFORM_GUARD {
        return Err(Error::DegenerateUniform);
    }
    Ok((&h * s_ind).norm() / denom)
}

/// H annihilates constant vectors, so removing the mean of a conjugate
/// subgradient leaves every formula unchanged while avoiding cancellation
/// against the large constant component near the uniform price vector.
fn centered(v: DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.add_scalar(-m)
}

/// Like [`eta`] but defines the ratio as 1 at the uniform price vector,
/// where both first-order biases vanish.
pub fn eta_or_uniform(mu_bar: &PriceVector) -> Result<f64> {
    match eta(mu_bar) {
        Err(Error::DegenerateUniform) => Ok(1.0),
        other => other,
    }
}

/// KL-matched analogue of [`eta`]: (s_IND^T H s_IND / s_LMSR^T H s_LMSR)^{1/2}.
/// Also in [1, 2].
pub fn eta_kl(mu_bar: &PriceVector) -> Result<f64> {
    let h = expfam::payoff_covariance(mu_bar)?;
    let s_lmsr = centered(CostKind::Lmsr.state_for_price(mu_bar)?);
    let s_ind = centered(CostKind::Ind.state_for_price(mu_bar)?);
    let denom = s_lmsr.dot(&(&h * &s_lmsr));
    if denom < UNIFORM_GUARD {
        return Err(Error::DegenerateUniform);
    }
    Ok((s_ind.dot(&(&h * &s_ind)) / denom).sqrt())
}

/// KL divergence sum_k p_k log(p_k / q_k). Nonnegative, zero iff p = q.
pub fn kl_divergence(p: &PriceVector, q: &PriceVector) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let mut total = 0.0;
    for (pk, qk) in p.as_vector().iter().zip(q.as_vector().iter()) {
        if *pk > 0.0 {
            if *qk <= 0.0 {
                return Err(Error::NonInterior(
                    "KL undefined: q has a zero where p has mass".into(),
                ));
            }
            total += pk * (pk / qk).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Liquidity for the second cost that equalizes the first-order biases:
/// b' = b / eta.
pub fn match_liquidity(b: f64, eta: f64) -> f64 {
    b / eta
}

/// Leading-order bounds on local strong convexity of the potential under
/// randomized block-coordinate descent, and the induced convergence factors.
/// ASD: sigma = 2 b lambda(P D P) lambda(H_T^{1/2} H_C^+ H_T^{1/2});
/// SSD has only the lower bound b lambda_min(P D P) lambda_min(H_T^{1/2}
/// D_C^+ H_T^{1/2}). O(b^2) corrections are dropped.
pub fn sigma_bounds(
    dynamics: DynamicsKind,
    cost: CostKind,
    mu_bar: &PriceVector,
    risk_aversions: &[f64],
    b: f64,
) -> Result<SigmaBounds> {
    let n = risk_aversions.len();
    let k = mu_bar.dim();
    if n < 2 {
        return Err(Error::PreconditionViolation(
            "strong-convexity bounds need N >= 2 (P D P is zero otherwise)".into(),
        ));
    }
    let h_t = expfam::payoff_covariance(mu_bar)?;
    let h_c = cost.hessian_at_price(mu_bar)?;

    let p = linops::centering_projection(n);
    let d = DMatrix::from_diagonal(&DVector::from_row_slice(risk_aversions));
    let pdp = &p * d * &p;
    let (a_lo, a_hi) = linops::pos_eig_range(&pdp, linops::DEFAULT_RANK_TOL)?;

    let middle_of = |m: &DMatrix<f64>| -> Result<(f64, f64)> {
        let root = linops::sqrt_psd(&h_t);
        let inner = &root * linops::pinv(m, linops::DEFAULT_RANK_TOL) * &root;
        linops::pos_eig_range(&inner, linops::DEFAULT_RANK_TOL)
    };

    let (sigma_low, sigma_high) = match dynamics {
        DynamicsKind::Asd => {
            let (m_lo, m_hi) = middle_of(&h_c)?;
            (2.0 * b * a_lo * m_lo, Some(2.0 * b * a_hi * m_hi))
        }
        DynamicsKind::Ssd => {
            let d_c = DMatrix::from_diagonal(&h_c.diagonal());
            let (m_lo, _) = middle_of(&d_c)?;
            (b * a_lo * m_lo, None)
        }
    };

    let blocks = block_count(dynamics, n, k) as f64;
    Ok(SigmaBounds {
        sigma_low,
        sigma_high,
        kappa_high: 1.0 - sigma_low / blocks,
        kappa_low: sigma_high.map(|s| 1.0 - s / blocks),
    })
}

/// Empirical strong convexity from a gap curve:
/// sigma_hat = |blocks| (1 - (gap(t2) / gap(t1))^{1 / (t2 - t1)}).
/// Exact for exactly geometric gap decay.
pub fn empirical_sigma(
    gaps: &[(usize, f64)],
    t1: usize,
    t2: usize,
    n_blocks: usize,
) -> Result<f64> {
    if t2 <= t1 {
        return Err(Error::PreconditionViolation(format!(
            "need t2 > t1, got t1 = {t1}, t2 = {t2}"
        )));
    }
    let lookup = |t: usize| -> Result<f64> {
        let (_, g) = gaps
            .iter()
            .find(|(tt, _)| *tt == t)
            .ok_or_else(|| Error::PreconditionViolation(format!("no gap recorded at t = {t}")))?;
        if *g <= 0.0 {
            Err(Error::NonPositiveGap { t, gap: *g })
        } else {
            Ok(*g)
        }
    };
    let g1 = lookup(t1)?;
    let g2 = lookup(t2)?;
    let ratio = (g2 / g1).powf(1.0 / (t2 - t1) as f64);
    Ok(n_blocks as f64 * (1.0 - ratio))
}

/// Effective sample size of the risk-aversion-weighted belief average:
/// (sum 1/a_i)^2 / (sum 1/a_i^2). In [1, N], equal to N iff all a_i match.
pub fn n_eff(risk_aversions: &[f64]) -> f64 {
    let s1: f64 = risk_aversions.iter().map(|a| 1.0 / a).sum();
    let s2: f64 = risk_aversions.iter().map(|a| 1.0 / (a * a)).sum();
    s1 * s1 / s2
}

/// High-probability sampling-error bound sigma sqrt(K / (N_eff delta)),
/// with the Chebyshev proof constant of one.
pub fn sampling_error_bound(sigma: f64, k: usize, n_eff: f64, delta: f64) -> f64 {
    sigma * (k as f64 / (n_eff * delta)).sqrt()
}

/// Splits || mu_true - mu_t || into sampling, bias, and convergence parts.
/// Accepts plain vectors so mid-run IND prices (which need not sum to one)
/// can be decomposed too.
pub fn error_decomposition(
    mu_true: &DVector<f64>,
    mu_bar: &DVector<f64>,
    mu_star: &DVector<f64>,
    mu_t: &DVector<f64>,
) -> Result<ErrorDecomposition> {
    let k = mu_true.len();
    if mu_bar.len() != k || mu_star.len() != k || mu_t.len() != k {
        return Err(Error::DimensionMismatch(
            "error decomposition needs four vectors of equal length".into(),
        ));
    }
    Ok(ErrorDecomposition {
        sampling: (mu_true - mu_bar).norm(),
        bias: (mu_bar - mu_star).norm(),
        convergence: (mu_star - mu_t).norm(),
        total: (mu_true - mu_t).norm(),
    })
}

/// Trade-count ratio: running `to_cost` at the bias-matched liquidity takes
/// at most rho times as many trades as `from_cost`, where
/// rho = eta lambda_max(H^{1/2} H_from^+ H^{1/2}) / lambda_min(H^{1/2}
/// H_to^+ H^{1/2}). Requires equal risk aversions.
pub fn trade_ratio_rho(
    mu_bar: &PriceVector,
    risk_aversions: &[f64],
    from_cost: CostKind,
    to_cost: CostKind,
    eta_used: f64,
) -> Result<f64> {
    if risk_aversions.is_empty() {
        return Err(Error::PreconditionViolation("no risk aversions".into()));
    }
    let a0 = risk_aversions[0];
    if risk_aversions
        .iter()
        .any(|a| (a - a0).abs() > 1e-12 * a0.abs())
    {
        return Err(Error::PreconditionViolation(
            "trade-count ratio assumes equal risk aversions".into(),
        ));
    }
    let h_t = expfam::payoff_covariance(mu_bar)?;
    let root = linops::sqrt_psd(&h_t);
    let middle = |kind: CostKind| -> Result<(f64, f64)> {
        let h_c = kind.hessian_at_price(mu_bar)?;
        let inner = &root * linops::pinv(&h_c, linops::DEFAULT_RANK_TOL) * &root;
        linops::pos_eig_range(&inner, linops::DEFAULT_RANK_TOL)
    };
    let (_, from_hi) = middle(from_cost)?;
    let (to_lo, _) = middle(to_cost)?;
    Ok(eta_used * from_hi / to_lo)
}

/// Eigenvalue extrema of x^T H x / x^T D x over range(D^{-1/2} H D^{-1/2}),
/// with H the payoff covariance and D its diagonal. Both lie in [1, 2] for
/// any interior price vector.
pub fn lemma_conv_spectrum(mu: &PriceVector) -> Result<(f64, f64)> {
    mu.require_interior()?;
    let h = expfam::payoff_covariance(mu)?;
    let d = DMatrix::from_diagonal(&h.diagonal());
    linops::restricted_spectrum(&h, &d, linops::DEFAULT_RANK_TOL)
}

/// For sorted vectors s, v whose consecutive differences satisfy
/// d_k(s) <= d_k(v) <= 2 d_k(s), returns (v^T H v / s^T H s,
/// v^T H^2 v / s^T H^2 s) with H the payoff covariance of the sorted price
/// vector mu. Both ratios lie in [1, 4].
pub fn lemma_bias_ratio(
    mu_sorted: &PriceVector,
    s: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(f64, f64)> {
    let k = mu_sorted.dim();
    if s.len() != k || v.len() != k {
        return Err(Error::DimensionMismatch(
            "s and v must match the price dimension".into(),
        ));
    }
    let mv = mu_sorted.as_vector();
    for i in 0..k - 1 {
        if mv[i] < mv[i + 1] - 1e-12 {
            return Err(Error::PreconditionViolation(
                "price vector must be sorted nonincreasing".into(),
            ));
        }
        let ds = s[i] - s[i + 1];
        let dv = v[i] - v[i + 1];
        if ds < -1e-12 || dv < ds - 1e-12 || dv > 2.0 * ds + 1e-12 {
            return Err(Error::PreconditionViolation(format!(
                "difference condition violated at {i}: d(s) = {ds}, d(v) = {dv}"
            )));
        }
    }
    let h = expfam::payoff_covariance(mu_sorted)?;
    let h2 = &h * &h;
    let s = centered(s.clone());
    let v = centered(v.clone());
    let s_h = s.dot(&(&h * &s));
    let s_h2 = s.dot(&(&h2 * &s));
    if s_h <= 0.0 || s_h2 <= 0.0 {
        return Err(Error::PreconditionViolation(
            "s^T H s must be positive".into(),
        ));
    }
    Ok((v.dot(&(&h * &v)) / s_h, v.dot(&(&h2 * &v)) / s_h2))
}
