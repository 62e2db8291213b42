//! Trader population model: exponential-utility traders with
//! exponential-family beliefs, their potential functions and conjugates,
//! the global market potential, and belief generation for experiments.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cost::LiquidCost;
use crate::error::{Error, Result};
use crate::expfam::{self, NaturalParam, PriceVector};

/// One trader: belief natural parameter and risk aversion coefficient a > 0.
#[derive(Debug, Clone)]
pub struct TraderParams {
    pub theta: NaturalParam,
    pub a: f64,
}

impl TraderParams {
    pub fn new(theta: NaturalParam, a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::PreconditionViolation(format!(
                "risk aversion must be positive and finite, got {a}"
            )));
        }
        Ok(Self { theta, a })
    }
}

/// An ordered list of traders sharing the market dimension K.
#[derive(Debug, Clone)]
pub struct Population {
    traders: Vec<TraderParams>,
}

impl Population {
    pub fn new(traders: Vec<TraderParams>) -> Result<Self> {
        if traders.is_empty() {
            return Err(Error::PreconditionViolation("population is empty".into()));
        }
        let k = traders[0].theta.dim();
        if traders.iter().any(|t| t.theta.dim() != k) {
            return Err(Error::DimensionMismatch(
                "traders disagree on the number of securities".into(),
            ));
        }
        Ok(Self { traders })
    }

    pub fn len(&self) -> usize {
        self.traders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traders.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.traders[0].theta.dim()
    }

    pub fn traders(&self) -> &[TraderParams] {
        &self.traders
    }

    pub fn trader(&self, i: usize) -> &TraderParams {
        &self.traders[i]
    }

    pub fn risk_aversions(&self) -> Vec<f64> {
        self.traders.iter().map(|t| t.a).collect()
    }

    /// Replaces every trader's risk aversion, keeping beliefs.
    pub fn set_risk_aversions(&mut self, a: &[f64]) -> Result<()> {
        if a.len() != self.traders.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} risk aversions for {} traders",
                a.len(),
                self.traders.len()
            )));
        }
        for (t, &ai) in self.traders.iter_mut().zip(a) {
            if !(ai > 0.0) || !ai.is_finite() {
                return Err(Error::PreconditionViolation(format!(
                    "risk aversion must be positive and finite, got {ai}"
                )));
            }
            t.a = ai;
        }
        Ok(())
    }
}

/// Mutable market state: per-trader allocations and cash, outstanding shares.
///
/// Traders begin with zero cash and zero securities; only the trade dynamics
/// mutate the state afterwards.
#[derive(Debug, Clone)]
pub struct MarketState {
    pub allocations: Vec<DVector<f64>>,
    pub cash: Vec<f64>,
    pub shares: DVector<f64>,
}

impl MarketState {
    pub fn new(n_traders: usize, k: usize) -> Self {
        Self {
            allocations: vec![DVector::zeros(k); n_traders],
            cash: vec![0.0; n_traders],
            shares: DVector::zeros(k),
        }
    }

    /// Largest deviation between `shares` and the sum of allocations.
    pub fn share_consistency_residual(&self) -> f64 {
        let mut sum = DVector::zeros(self.shares.len());
        for r in &self.allocations {
            sum += r;
        }
        (sum - &self.shares).abs().max()
    }

    /// |sum_i c_i - (C_b(0) - C_b(s))|, zero along any market-maker run.
    pub fn cash_conservation_residual(&self, cost: &LiquidCost) -> f64 {
        let total: f64 = self.cash.iter().sum();
        let zero = DVector::zeros(self.shares.len());
        (total - (cost.value(&zero) - cost.value(&self.shares))).abs()
    }
}

/// How ground-truth beliefs are generated for experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeliefMode {
    Uniform,
    SinglePeaked { nu: f64 },
    /// Caller-supplied natural parameter (used by experiment configs).
    Explicit,
}

/// Ground truth for belief sampling: the true natural parameter and the
/// standard deviation of the per-trader belief noise.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub theta_true: NaturalParam,
    pub sigma: f64,
    pub mode: BeliefMode,
}

impl GroundTruth {
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::PreconditionViolation(format!(
                "belief noise must be nonnegative, got {sigma}"
            )));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// True expected payoffs, softmax of the true natural parameter.
    pub fn true_price(&self) -> PriceVector {
        expfam::mean_payoff(&self.theta_true)
    }
}

/// Builds the ground truth for a mode. Uniform sets theta = 0 (noise 1);
/// single-peaked puts mass 1 - nu (K-1) on the first outcome and nu on each
/// of the others (noise 5).
pub fn ground_truth(mode: BeliefMode, k: usize) -> Result<GroundTruth> {
    let theta_true = match mode {
        BeliefMode::Uniform => NaturalParam::new(DVector::zeros(k))?,
        BeliefMode::SinglePeaked { nu } => {
            let rest = nu * (k as f64 - 1.0);
            if !(nu > 0.0) || rest >= 1.0 {
                return Err(Error::PreconditionViolation(format!(
                    "single-peaked mode needs 0 < nu (K-1) < 1, got nu = {nu}, K = {k}"
                )));
            }
            NaturalParam::new(DVector::from_fn(k, |i, _| {
                if i == 0 {
                    (1.0 - rest).ln()
                } else {
                    nu.ln()
                }
            }))?
        }
        BeliefMode::Explicit => {
            return Err(Error::PreconditionViolation(
                "explicit mode needs a caller-supplied natural parameter".into(),
            ))
        }
    };
    let sigma = match mode {
        BeliefMode::Uniform => 1.0,
        BeliefMode::SinglePeaked { .. } | BeliefMode::Explicit => 5.0,
    };
    Ok(GroundTruth {
        theta_true,
        sigma,
        mode,
    })
}

/// Samples N traders with beliefs Normal(theta_true, sigma^2 I) and unit risk
/// aversion. Deterministic for a fixed (ground truth, N, seed).
pub fn sample_beliefs(gt: &GroundTruth, n: usize, seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::PreconditionViolation("need at least one trader".into()));
    }
    let k = gt.theta_true.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut traders = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = DVector::from_fn(k, |i, _| {
            gt.theta_true.as_vector()[i] + gt.sigma * normal.sample(&mut rng)
        });
        traders.push(TraderParams::new(NaturalParam::new(theta)?, 1.0)?);
    }
    Population::new(traders)
}

/// Trader potential F_i(x) = (1/a) T(theta + a x), a monotone transform of
/// the trader's utility excluding cash.
pub fn trader_potential(t: &TraderParams, x: &DVector<f64>) -> f64 {
    let shifted = t.theta.as_vector() + x * t.a;
    expfam::log_sum_exp(&shifted) / t.a
}

/// Gradient of F_i at x: softmax(theta + a x).
pub fn trader_potential_gradient(t: &TraderParams, x: &DVector<f64>) -> DVector<f64> {
    expfam::softmax(&(t.theta.as_vector() + x * t.a))
}

/// Conjugate F_i*(mu) = (1/a) (T*(mu) - theta . mu).
pub fn trader_conjugate(t: &TraderParams, mu: &PriceVector) -> f64 {
    (expfam::neg_entropy(mu) - t.theta.as_vector().dot(mu.as_vector())) / t.a
}

/// Expected exponential utility of holding bundle r and cash c:
/// -(1/a) exp(T(theta - a r) - T(theta) - a c). Strictly negative and
/// strictly increasing in c.
pub fn expected_utility(t: &TraderParams, r: &DVector<f64>, c: f64) -> f64 {
    let shifted = t.theta.as_vector() - r * t.a;
    let exponent =
        expfam::log_sum_exp(&shifted) - expfam::log_sum_exp(t.theta.as_vector()) - t.a * c;
    -(exponent.exp()) / t.a
}

/// The global potential F(r) = sum_i F_i(-r_i) + C_b(sum_i r_i) whose local
/// minima are exactly the market-maker equilibrium allocations.
pub fn total_potential(pop: &Population, cost: &LiquidCost, state: &MarketState) -> f64 {
    let trader_sum: f64 = pop
        .traders()
        .iter()
        .zip(&state.allocations)
        .map(|(t, r)| trader_potential(t, &(-r)))
        .sum();
    trader_sum + cost.value(&state.shares)
}
