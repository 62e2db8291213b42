//! C ABI for the pmlab toolkit. Populations are opaque handles; every
//! function returns a status code and writes results through caller-owned
//! buffers. The header is generated by cbindgen into include/pmlab.h.
//!
//! Buffer contract: price and belief vectors are length K, per-trader
//! arrays length N, and `pm_simulate_gaps` writes trades + 1 entries.
//! Callers own every buffer and must size them accordingly; handles must
//! not be freed while another call uses them. That contract is the safety
//! requirement of every function here.

// Guards written as !(x > 0.0) intentionally reject NaN.
#![allow(clippy::missing_safety_doc, clippy::neg_cmp_op_on_partial_ord)]

use std::ptr;
use std::slice;

use nalgebra::DVector;

use pmlab::analysis;
use pmlab::cost::{CostKind, LiquidCost};
use pmlab::dynamics::{self, DynamicsKind};
use pmlab::equilibrium;
use pmlab::expfam::{NaturalParam, PriceVector};
use pmlab::market::{sample_beliefs, BeliefMode, GroundTruth, Population, TraderParams};
use pmlab::Error;

/// Result of every pmlab call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    PmOk = 0,
    /// Null pointer, bad dimension, or an argument outside its domain.
    PmInvalidArgument = 1,
    /// A price vector was required to be coherent / interior and is not.
    PmBadPrice = 2,
    /// An iterative solve failed to reach tolerance.
    PmSolverFailure = 3,
    /// The quantity is undefined at the given input (e.g. eta at uniform).
    PmDegenerate = 4,
}

/// Cost function selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmCostKind {
    PmLmsr = 0,
    PmInd = 1,
}

/// Trader dynamics selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmDynamicsKind {
    PmAsd = 0,
    PmSsd = 1,
}

/// Opaque trader population handle.
pub struct PmPopulation {
    inner: Population,
}

impl From<PmCostKind> for CostKind {
    fn from(k: PmCostKind) -> Self {
        match k {
            PmCostKind::PmLmsr => CostKind::Lmsr,
            PmCostKind::PmInd => CostKind::Ind,
        }
    }
}

impl From<PmDynamicsKind> for DynamicsKind {
    fn from(k: PmDynamicsKind) -> Self {
        match k {
            PmDynamicsKind::PmAsd => DynamicsKind::Asd,
            PmDynamicsKind::PmSsd => DynamicsKind::Ssd,
        }
    }
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::NonInterior(_) | Error::NotCoherent(_) => PmStatus::PmBadPrice,
        Error::MaxIterations { .. } | Error::BracketFailure { .. } => PmStatus::PmSolverFailure,
        Error::DegenerateUniform | Error::ZeroMatrix => PmStatus::PmDegenerate,
        _ => PmStatus::PmInvalidArgument,
    }
}

unsafe fn price_from_raw(mu: *const f64, k: usize) -> Result<PriceVector, PmStatus> {
    if mu.is_null() || k < 2 {
        return Err(PmStatus::PmInvalidArgument);
    }
    let v = DVector::from_row_slice(slice::from_raw_parts(mu, k));
    PriceVector::new(v).map_err(|e| status_of(&e))
}

/// Builds a population from row-major beliefs (n x k) and per-trader risk
/// aversions. On success writes a heap-allocated handle to `out`; release it
/// with `pm_population_free`.
#[no_mangle]
pub unsafe extern "C" fn pm_population_new(
    thetas: *const f64,
    risk_aversions: *const f64,
    n: usize,
    k: usize,
    out: *mut *mut PmPopulation,
) -> PmStatus {
    if thetas.is_null() || risk_aversions.is_null() || out.is_null() || n == 0 || k < 2 {
        return PmStatus::PmInvalidArgument;
    }
    let theta_all = slice::from_raw_parts(thetas, n * k);
    let aversion = slice::from_raw_parts(risk_aversions, n);
    let mut traders = Vec::with_capacity(n);
    for i in 0..n {
        let theta = match NaturalParam::from_slice(&theta_all[i * k..(i + 1) * k]) {
            Ok(t) => t,
            Err(e) => return status_of(&e),
        };
        match TraderParams::new(theta, aversion[i]) {
            Ok(t) => traders.push(t),
            Err(e) => return status_of(&e),
        }
    }
    match Population::new(traders) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PmPopulation { inner }));
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Samples n traders with beliefs Normal(theta_true, sigma^2 I) and unit
/// risk aversion, deterministically for a fixed seed.
#[no_mangle]
pub unsafe extern "C" fn pm_population_sample(
    theta_true: *const f64,
    k: usize,
    sigma: f64,
    n: usize,
    seed: u64,
    out: *mut *mut PmPopulation,
) -> PmStatus {
    if theta_true.is_null() || out.is_null() || n == 0 || k < 2 {
        return PmStatus::PmInvalidArgument;
    }
    let theta = match NaturalParam::from_slice(slice::from_raw_parts(theta_true, k)) {
        Ok(t) => t,
        Err(e) => return status_of(&e),
    };
    let gt = match (GroundTruth {
        theta_true: theta,
        sigma,
        mode: BeliefMode::Explicit,
    })
    .with_sigma(sigma)
    {
        Ok(g) => g,
        Err(e) => return status_of(&e),
    };
    match sample_beliefs(&gt, n, seed) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PmPopulation { inner }));
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Releases a population handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn pm_population_free(pop: *mut PmPopulation) {
    if !pop.is_null() {
        drop(Box::from_raw(pop));
    }
}

/// Number of traders in the handle, or 0 for null.
#[no_mangle]
pub unsafe extern "C" fn pm_population_len(pop: *const PmPopulation) -> usize {
    pop.as_ref().map_or(0, |p| p.inner.len())
}

/// Number of securities, or 0 for null.
#[no_mangle]
pub unsafe extern "C" fn pm_population_dim(pop: *const PmPopulation) -> usize {
    pop.as_ref().map_or(0, |p| p.inner.dim())
}

/// Market-clearing prices (softmax of the risk-aversion-weighted average
/// belief); writes K entries to `mu_out`.
#[no_mangle]
pub unsafe extern "C" fn pm_market_clearing_price(
    pop: *const PmPopulation,
    mu_out: *mut f64,
) -> PmStatus {
    let Some(p) = pop.as_ref() else {
        return PmStatus::PmInvalidArgument;
    };
    if mu_out.is_null() {
        return PmStatus::PmInvalidArgument;
    }
    let mu = equilibrium::market_clearing_price(&p.inner);
    write_vector(mu.as_vector(), mu_out);
    PmStatus::PmOk
}

/// Market-maker equilibrium prices for the liquid cost (cost, b) at solver
/// tolerance `tol`; writes K prices plus the optimal potential value and the
/// final projected gradient norm.
#[no_mangle]
pub unsafe extern "C" fn pm_solve_equilibrium(
    pop: *const PmPopulation,
    cost: PmCostKind,
    b: f64,
    tol: f64,
    mu_out: *mut f64,
    f_star_out: *mut f64,
    grad_norm_out: *mut f64,
) -> PmStatus {
    let Some(p) = pop.as_ref() else {
        return PmStatus::PmInvalidArgument;
    };
    if mu_out.is_null() {
        return PmStatus::PmInvalidArgument;
    }
    let cost = match LiquidCost::new(cost.into(), b) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    match equilibrium::solve_equilibrium(&p.inner, &cost, tol) {
        Ok(res) => {
            write_vector(res.mu_star.as_vector(), mu_out);
            if !f_star_out.is_null() {
                *f_star_out = res.f_star;
            }
            if !grad_norm_out.is_null() {
                *grad_norm_out = res.grad_norm;
            }
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Closed-form LMSR equilibrium prices for a market started at zero.
#[no_mangle]
pub unsafe extern "C" fn pm_lmsr_closed_form(
    pop: *const PmPopulation,
    b: f64,
    mu_out: *mut f64,
) -> PmStatus {
    let Some(p) = pop.as_ref() else {
        return PmStatus::PmInvalidArgument;
    };
    if mu_out.is_null() {
        return PmStatus::PmInvalidArgument;
    }
    match equilibrium::lmsr_closed_form(&p.inner, CostKind::Lmsr, b) {
        Ok(mu) => {
            write_vector(mu.as_vector(), mu_out);
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// First-order market-maker bias at clearing prices `mu_bar` (length k).
#[no_mangle]
pub unsafe extern "C" fn pm_asymptotic_bias(
    mu_bar: *const f64,
    k: usize,
    cost: PmCostKind,
    b: f64,
    a_bar: f64,
    n_traders: usize,
    bias_out: *mut f64,
) -> PmStatus {
    if bias_out.is_null() || n_traders == 0 {
        return PmStatus::PmInvalidArgument;
    }
    let mu = match price_from_raw(mu_bar, k) {
        Ok(m) => m,
        Err(s) => return s,
    };
    match analysis::asymptotic_bias(&mu, cost.into(), b, a_bar, n_traders) {
        Ok(v) => {
            write_vector(&v, bias_out);
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// The IND/LMSR bias ratios eta and eta_KL at `mu_bar`. Either output may be
/// null to skip it. Returns PmDegenerate at the uniform price vector.
#[no_mangle]
pub unsafe extern "C" fn pm_eta(
    mu_bar: *const f64,
    k: usize,
    eta_out: *mut f64,
    eta_kl_out: *mut f64,
) -> PmStatus {
    let mu = match price_from_raw(mu_bar, k) {
        Ok(m) => m,
        Err(s) => return s,
    };
    if !eta_out.is_null() {
        match analysis::eta(&mu) {
            Ok(v) => *eta_out = v,
            Err(e) => return status_of(&e),
        }
    }
    if !eta_kl_out.is_null() {
        match analysis::eta_kl(&mu) {
            Ok(v) => *eta_kl_out = v,
            Err(e) => return status_of(&e),
        }
    }
    PmStatus::PmOk
}

/// Leading-order local strong-convexity bounds at `mu_bar`. `sigma_high_out`
/// receives NaN when only a lower bound exists (SSD).
#[no_mangle]
pub unsafe extern "C" fn pm_sigma_bounds(
    dynamics: PmDynamicsKind,
    cost: PmCostKind,
    mu_bar: *const f64,
    k: usize,
    risk_aversions: *const f64,
    n: usize,
    b: f64,
    sigma_low_out: *mut f64,
    sigma_high_out: *mut f64,
) -> PmStatus {
    if risk_aversions.is_null() || sigma_low_out.is_null() || n == 0 {
        return PmStatus::PmInvalidArgument;
    }
    let mu = match price_from_raw(mu_bar, k) {
        Ok(m) => m,
        Err(s) => return s,
    };
    let a = slice::from_raw_parts(risk_aversions, n);
    match analysis::sigma_bounds(dynamics.into(), cost.into(), &mu, a, b) {
        Ok(sb) => {
            *sigma_low_out = sb.sigma_low;
            if !sigma_high_out.is_null() {
                *sigma_high_out = sb.sigma_high.unwrap_or(f64::NAN);
            }
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Effective sample size of the risk-aversion-weighted belief average.
#[no_mangle]
pub unsafe extern "C" fn pm_n_eff(
    risk_aversions: *const f64,
    n: usize,
    out: *mut f64,
) -> PmStatus {
    if risk_aversions.is_null() || out.is_null() || n == 0 {
        return PmStatus::PmInvalidArgument;
    }
    let a = slice::from_raw_parts(risk_aversions, n);
    if a.iter().any(|x| !(*x > 0.0)) {
        return PmStatus::PmInvalidArgument;
    }
    *out = analysis::n_eff(a);
    PmStatus::PmOk
}

/// High-probability sampling-error bound sigma sqrt(k / (n_eff delta)).
#[no_mangle]
pub unsafe extern "C" fn pm_sampling_error_bound(
    sigma: f64,
    k: usize,
    n_eff: f64,
    delta: f64,
    out: *mut f64,
) -> PmStatus {
    if out.is_null() || !(delta > 0.0 && delta < 1.0) || !(n_eff > 0.0) || sigma < 0.0 {
        return PmStatus::PmInvalidArgument;
    }
    *out = analysis::sampling_error_bound(sigma, k, n_eff, delta);
    PmStatus::PmOk
}

/// Worst-case market-maker loss of the liquid cost over k securities.
#[no_mangle]
pub unsafe extern "C" fn pm_worst_case_loss(
    cost: PmCostKind,
    b: f64,
    k: usize,
    out: *mut f64,
) -> PmStatus {
    if out.is_null() || k < 2 {
        return PmStatus::PmInvalidArgument;
    }
    match LiquidCost::new(cost.into(), b) {
        Ok(c) => {
            *out = c.worst_case_loss(k);
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Simulates `trades` rounds of the given dynamics from the zero state and
/// writes the suboptimality gap after every trade (trades + 1 values,
/// including the initial state) against the supplied F*.
#[no_mangle]
pub unsafe extern "C" fn pm_simulate_gaps(
    pop: *const PmPopulation,
    cost: PmCostKind,
    b: f64,
    dynamics: PmDynamicsKind,
    trades: usize,
    seed: u64,
    f_star: f64,
    gaps_out: *mut f64,
) -> PmStatus {
    let Some(p) = pop.as_ref() else {
        return PmStatus::PmInvalidArgument;
    };
    if gaps_out.is_null() {
        return PmStatus::PmInvalidArgument;
    }
    let cost = match LiquidCost::new(cost.into(), b) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    match dynamics::run(&p.inner, &cost, dynamics.into(), trades, seed, Some(f_star)) {
        Ok(traj) => {
            for (i, rec) in traj.records.iter().enumerate() {
                *gaps_out.add(i) = rec.gap;
            }
            PmStatus::PmOk
        }
        Err(e) => status_of(&e),
    }
}

unsafe fn write_vector(v: &DVector<f64>, out: *mut f64) {
    ptr::copy_nonoverlapping(v.as_slice().as_ptr(), out, v.len());
}
