//! Cost functions for the market maker: LMSR and the sum of independent
//! LMSRs (IND), plus the liquidity-scaled family C_b(s) = b C(s/b).
//!
//! Values, prices (gradients), price-space Hessians, conjugates, and
//! conjugate subgradient elements all have closed forms for the complete
//! market, and the worst-case market-maker loss is known for both costs.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::expfam::{log_sum_exp, softmax, PriceVector};

/// The two cost-function families under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostKind {
    Lmsr,
    Ind,
}

impl CostKind {
    pub fn label(&self) -> &'static str {
        match self {
            CostKind::Lmsr => "LMSR",
            CostKind::Ind => "IND",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LMSR" => Some(CostKind::Lmsr),
            "IND" => Some(CostKind::Ind),
            _ => None,
        }
    }

    /// Cost C(s). LMSR: log sum_k e^{s_k}. IND: sum_k log(1 + e^{s_k}).
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        match self {
            CostKind::Lmsr => log_sum_exp(s),
            CostKind::Ind => s.iter().map(|&x| log1p_exp(x)).sum(),
        }
    }

    /// Instantaneous prices, the gradient of C. LMSR prices form a coherent
    /// vector; IND prices are entrywise in (0, 1) and need not sum to one.
    pub fn price(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            CostKind::Lmsr => softmax(s),
            CostKind::Ind => s.map(sigmoid),
        }
    }

    /// Hessian of C expressed as a function of the price vector:
    /// H_C(mu) = diag(mu) - mu mu^T for LMSR, diag(mu_k (1 - mu_k)) for IND.
    pub fn hessian_at_price(&self, mu: &PriceVector) -> Result<DMatrix<f64>> {
        mu.require_interior()?;
        match self {
            CostKind::Lmsr => crate::expfam::payoff_covariance(mu),
            CostKind::Ind => {
                let v = mu.as_vector();
                Ok(DMatrix::from_diagonal(&v.map(|p| p * (1.0 - p))))
            }
        }
    }

    /// Conjugate C*(mu) on coherent prices, with 0 log 0 = 0.
    pub fn conjugate(&self, mu: &PriceVector) -> f64 {
        let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
        match self {
            CostKind::Lmsr => crate::expfam::neg_entropy(mu),
            CostKind::Ind => mu
                .as_vector()
                .iter()
                .map(|&p| xlogx(p) + xlogx(1.0 - p))
                .sum(),
        }
    }

    /// An element of the conjugate subgradient, i.e. a state s with
    /// price(s) = mu: log(mu) for LMSR, logit(mu) for IND.
    pub fn state_for_price(&self, mu: &PriceVector) -> Result<DVector<f64>> {
        mu.require_interior()?;
        let v = mu.as_vector();
        Ok(match self {
            CostKind::Lmsr => v.map(f64::ln),
            CostKind::Ind => v.map(logit),
        })
    }
}

/// A cost function together with its liquidity parameter b > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquidCost {
    pub kind: CostKind,
    pub b: f64,
}

impl LiquidCost {
    pub fn new(kind: CostKind, b: f64) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(crate::Error::PreconditionViolation(format!(
                "liquidity must be positive and finite, got {b}"
            )));
        }
        Ok(Self { kind, b })
    }

    /// C_b(s) = b C(s / b).
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        self.b * self.kind.value(&(s / self.b))
    }

    /// Gradient of C_b at s equals the unscaled price at s / b.
    pub fn price(&self, s: &DVector<f64>) -> DVector<f64> {
        self.kind.price(&(s / self.b))
    }

    /// The Hessian of C_b at s is (1/b) H_C(price), by the chain rule; this
    /// returns the scalar factor 1/b.
    pub fn hessian_factor(&self) -> f64 {
        1.0 / self.b
    }

    /// Worst-case market-maker loss: b log K for LMSR, b K log 2 for IND.
    pub fn worst_case_loss(&self, k: usize) -> f64 {
        match self.kind {
            CostKind::Lmsr => self.b * (k as f64).ln(),
            CostKind::Ind => self.b * (k as f64) * 2.0f64.ln(),
        }
    }
}

/// log(1 + e^x) without overflow for large |x|.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// logit(p) = log(p / (1 - p)), using ln_1p for the complement.
pub(crate) fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}
