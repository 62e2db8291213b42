//! Exponential-family primitives for a complete market over K outcomes:
//! log partition function, mean payoffs (prices), payoff covariance,
//! negative entropy, and gradient inversion.
//!
//! The market is complete: one security per outcome with one-hot payoffs, so
//! expected payoffs live in the probability simplex and the log partition
//! function is the log-sum-exp of the natural parameter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when checking that a price vector sums to one.
pub const COHERENCE_TOL: f64 = 1e-12;

/// Natural parameter of an exponential-family distribution over K outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParam {
    theta: DVector<f64>,
}

impl NaturalParam {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "natural parameter needs K >= 2, got K = {}",
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::PreconditionViolation(
                "natural parameter has non-finite entries".into(),
            ));
        }
        Ok(Self { theta })
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(theta))
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.theta
    }
}

/// Coherent price vector: an element of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector {
    mu: DVector<f64>,
}

impl PriceVector {
    /// Builds a price vector, checking coherence (entries >= 0, sum to one).
    pub fn new(mu: DVector<f64>) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "price vector needs K >= 2, got K = {}",
                mu.len()
            )));
        }
        if mu.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NotCoherent(format!("{:?}", mu.as_slice())));
        }
        let sum: f64 = mu.iter().sum();
        if (sum - 1.0).abs() > COHERENCE_TOL {
            return Err(Error::NotCoherent(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { mu })
    }

    pub fn from_slice(mu: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(mu))
    }

    /// Normalizes a positive vector onto the simplex. Intended for oracle and
    /// sampling code where the input is positive by construction.
    pub fn normalized(raw: DVector<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::NotCoherent("cannot normalize non-positive mass".into()));
        }
        Self::new(raw / sum)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.mu
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.mu.iter().all(|x| *x > 0.0)
    }

    /// Errors unless the vector lies in the relative interior of the simplex.
    pub fn require_interior(&self) -> Result<&Self> {
        if self.is_interior() {
            Ok(self)
        } else {
            Err(Error::NonInterior(format!("{:?}", self.mu.as_slice())))
        }
    }
}

/// Log partition function T(theta) = log sum_k exp(theta_k), computed with
/// max-subtraction so it stays finite for |theta| up to ~700.
pub fn log_partition(theta: &NaturalParam) -> f64 {
    log_sum_exp(theta.as_vector())
}

pub(crate) fn log_sum_exp(v: &DVector<f64>) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Gradient of T: the softmax of theta, which is the expected payoff vector.
/// Entries are strictly positive and normalized by the explicit sum.
pub fn mean_payoff(theta: &NaturalParam) -> PriceVector {
    PriceVector {
        mu: softmax(theta.as_vector()),
    }
}

pub(crate) fn softmax(v: &DVector<f64>) -> DVector<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = v.map(|x| (x - max).exp());
    let sum: f64 = exps.iter().sum();
    exps / sum
}

/// Hessian of T at prices mu: the payoff covariance diag(mu) - mu mu^T.
/// PSD with null space spanned by the all-ones vector.
pub fn payoff_covariance(mu: &PriceVector) -> Result<DMatrix<f64>> {
    mu.require_interior()?;
    let v = mu.as_vector();
    let k = v.len();
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] = if i == j { v[i] - v[i] * v[j] } else { -v[i] * v[j] };
        }
    }
    Ok(h)
}

/// Convex conjugate of T on the simplex: negative entropy sum_k mu_k log mu_k,
/// with 0 log 0 = 0. Ranges over [-log K, 0].
pub fn neg_entropy(mu: &PriceVector) -> f64 {
    mu.as_vector()
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum()
}

/// Canonical inverse of the gradient map: theta = log(mu), the representative
/// of grad T^{-1}(mu) with softmax(theta) = mu. Defined up to constant shifts;
/// this picks the log-mu element used by the bias formulas.
pub fn inverse_mean(mu: &PriceVector) -> Result<NaturalParam> {
    mu.require_interior()?;
    NaturalParam::new(mu.as_vector().map(f64::ln))
}
