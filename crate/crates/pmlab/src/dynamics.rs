//! Trade simulation as randomized block-coordinate descent on the market
//! potential F. Two dynamics: in each round a uniformly random trader either
//! rebalances across all securities at once (ASD) or picks one security
//! uniformly at random and trades only that (SSD). Both are exact block
//! minimizations, so F never increases along a trajectory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{CostKind, LiquidCost};
use crate::error::{Error, Result};
use crate::expfam;
use crate::market::{MarketState, Population, TraderParams};

/// Gradient tolerance used for the per-trade best-response solves.
pub const BEST_RESPONSE_TOL: f64 = 1e-10;

const MAX_BR_ITERS: usize = 100;

/// All-securities or single-security trader dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynamicsKind {
    Asd,
    Ssd,
}

impl DynamicsKind {
    pub fn label(&self) -> &'static str {
        match self {
            DynamicsKind::Asd => "ASD",
            DynamicsKind::Ssd => "SSD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ASD" => Some(DynamicsKind::Asd),
            "SSD" => Some(DynamicsKind::Ssd),
            _ => None,
        }
    }
}

/// Number of descent blocks: N for ASD, N K for SSD.
pub fn block_count(kind: DynamicsKind, n: usize, k: usize) -> usize {
    match kind {
        DynamicsKind::Asd => n,
        DynamicsKind::Ssd => n * k,
    }
}

/// The block picked in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockChoice {
    pub trader: usize,
    /// Security index for SSD; None for an all-securities trade.
    pub security: Option<usize>,
}

/// One point of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct TradeRecord {
    pub t: usize,
    /// Market price after trade t (IND prices need not sum to one).
    pub price: DVector<f64>,
    /// Potential value F(r^t).
    pub potential: f64,
    /// Suboptimality gap F(r^t) - F*.
    pub gap: f64,
}

/// A full simulated trading sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: DynamicsKind,
    pub cost: LiquidCost,
    pub seed: u64,
    /// True when no F* was supplied and gaps are relative to the best seen F.
    pub provisional_gaps: bool,
    pub records: Vec<TradeRecord>,
}

impl Trajectory {
    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Utility-optimal bundle over all securities for one trader: the minimizer
/// of F_i(-r_i - delta) + C_b(s + delta). LMSR takes the closed form with
/// the constant-bundle component pinned to 1^T delta = 0; IND runs a damped
/// Newton solve. The stationarity residual at the returned point is at most
/// `tol`.
pub fn best_response_all(
    t: &TraderParams,
    r_i: &DVector<f64>,
    s: &DVector<f64>,
    cost: &LiquidCost,
    tol: f64,
) -> Result<DVector<f64>> {
    match cost.kind {
        CostKind::Lmsr => {
            let raw = t.theta.as_vector() - r_i * t.a - s / cost.b;
            let c = raw.mean();
            Ok(raw.add_scalar(-c) / (t.a + 1.0 / cost.b))
        }
        CostKind::Ind => best_response_all_newton(t, r_i, s, cost, tol),
    }
}

/// Generic Newton solve of the all-securities block problem. Works for both
/// costs; for LMSR the search is restricted to the zero-sum subspace where
/// the block Hessian is positive definite.
pub fn best_response_all_newton(
    t: &TraderParams,
    r_i: &DVector<f64>,
    s: &DVector<f64>,
    cost: &LiquidCost,
    tol: f64,
) -> Result<DVector<f64>> {
    let k = s.len();
    let objective = |delta: &DVector<f64>| -> f64 {
        let x = -(r_i + delta);
        crate::market::trader_potential(t, &x) + cost.value(&(s + delta))
    };
    let gradient = |delta: &DVector<f64>| -> DVector<f64> {
        let trader_price = expfam::softmax(&(t.theta.as_vector() - (r_i + delta) * t.a));
        let market_price = cost.price(&(s + delta));
        market_price - trader_price
    };
    // Block Hessian: a H_T(trader price) + (1/b) H_C(market price), both in
    // closed form from the current prices.
    let hessian = |delta: &DVector<f64>| -> DMatrix<f64> {
        let pt = expfam::softmax(&(t.theta.as_vector() - (r_i + delta) * t.a));
        let pm = cost.price(&(s + delta));
        let mut h = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                h[(i, j)] += t.a * (if i == j { pt[i] } else { 0.0 } - pt[i] * pt[j]);
            }
        }
        match cost.kind {
            CostKind::Lmsr => {
                for i in 0..k {
                    for j in 0..k {
                        h[(i, j)] += (if i == j { pm[i] } else { 0.0 } - pm[i] * pm[j]) / cost.b;
                    }
                }
            }
            CostKind::Ind => {
                for i in 0..k {
                    h[(i, i)] += pm[i] * (1.0 - pm[i]) / cost.b;
                }
            }
        }
        h
    };

    // For LMSR both Hessian terms annihilate the all-ones vector, so reduce
    // to an orthonormal basis of the zero-sum subspace.
    let basis = match cost.kind {
        CostKind::Lmsr => Some(helmert_basis(k)),
        CostKind::Ind => None,
    };

    let mut delta = DVector::zeros(k);
    for iter in 0..MAX_BR_ITERS {
        let g = gradient(&delta);
        let residual = g.norm();
        if residual <= tol {
            return Ok(delta);
        }
        let h = hessian(&delta);
        let direction = match &basis {
            Some(q) => {
                let hr = q.transpose() * &h * q;
                let gr = q.transpose() * &g;
                let y = hr.lu().solve(&(-gr)).ok_or(Error::MaxIterations {
                    max_iters: iter,
                    residual,
                    tol,
                })?;
                q * y
            }
            None => h.lu().solve(&(-&g)).ok_or(Error::MaxIterations {
                max_iters: iter,
                residual,
                tol,
            })?,
        };

        let value = objective(&delta);
        let slope = g.dot(&direction);
        let mut step = 1.0;
        let mut moved = false;
        let min_step = 1e-14 * (1.0 + delta.norm()) / (1.0 + direction.norm());
        while step > min_step {
            let trial = &delta + &direction * step;
            if objective(&trial) < value + 1e-4 * step * slope {
                delta = trial;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // Value resolution exhausted; take the full step if it still
            // shrinks the gradient.
            let trial = &delta + &direction;
            if gradient(&trial).norm() < residual {
                delta = trial;
            } else {
                return Err(Error::MaxIterations {
                    max_iters: iter,
                    residual,
                    tol,
                });
            }
        }
    }
    let residual = gradient(&delta).norm();
    if residual <= tol {
        Ok(delta)
    } else {
        Err(Error::MaxIterations {
            max_iters: MAX_BR_ITERS,
            residual,
            tol,
        })
    }
}

/// Orthonormal basis of the zero-sum subspace of R^k, as columns.
fn helmert_basis(k: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(k, k - 1);
    for j in 1..k {
        let norm = (j as f64 * (j as f64 + 1.0)).sqrt();
        for i in 0..j {
            q[(i, j - 1)] = 1.0 / norm;
        }
        q[(j, j - 1)] = -(j as f64) / norm;
    }
    q
}

/// Utility-optimal quantity of a single security: the scalar minimizer of
/// the 1-D restriction of the block problem. The objective derivative is
/// strictly increasing, so a bracketed Newton/bisection root find applies.
pub fn best_response_single(
    t: &TraderParams,
    r_i: &DVector<f64>,
    s: &DVector<f64>,
    security: usize,
    cost: &LiquidCost,
    tol: f64,
) -> Result<f64> {
    let k = s.len();
    if security >= k {
        return Err(Error::PreconditionViolation(format!(
            "security index {security} out of range for K = {k}"
        )));
    }
    let deriv = |delta: f64| -> f64 {
        let mut shifted = t.theta.as_vector() - r_i * t.a;
        shifted[security] -= t.a * delta;
        let trader_price = expfam::softmax(&shifted)[security];
        let mut state = s.clone();
        state[security] += delta;
        let market_price = cost.price(&state)[security];
        market_price - trader_price
    };
    let second = |delta: f64| -> f64 {
        let mut shifted = t.theta.as_vector() - r_i * t.a;
        shifted[security] -= t.a * delta;
        let pt = expfam::softmax(&shifted)[security];
        let mut state = s.clone();
        state[security] += delta;
        let pm = cost.price(&state)[security];
        t.a * pt * (1.0 - pt) + pm * (1.0 - pm) / cost.b
    };

    let d0 = deriv(0.0);
    if d0.abs() <= tol {
        return Ok(0.0);
    }

    // Expand a bracket around zero until the derivative changes sign.
    let bound = 1e3 * (1.0 + t.theta.as_vector().norm());
    let (mut lo, mut hi) = if d0 > 0.0 { (-1.0, 0.0) } else { (0.0, 1.0) };
    if d0 > 0.0 {
        while deriv(lo) > 0.0 {
            lo *= 2.0;
            if lo < -bound {
                return Err(Error::BracketFailure { bound });
            }
        }
    } else {
        while deriv(hi) < 0.0 {
            hi *= 2.0;
            if hi > bound {
                return Err(Error::BracketFailure { bound });
            }
        }
    }

    // Safeguarded Newton: fall back to bisection whenever the Newton step
    // leaves the bracket.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let d = deriv(x);
        if d.abs() <= tol {
            return Ok(x);
        }
        if d > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let curvature = second(x);
        let newton = x - d / curvature;
        x = if curvature > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < f64::EPSILON * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    let residual = deriv(x).abs();
    if residual <= tol * 10.0 {
        Ok(x)
    } else {
        Err(Error::MaxIterations {
            max_iters: 200,
            residual,
            tol,
        })
    }
}

/// Executes one trade: picks a block uniformly at random, applies the best
/// response, and settles shares and cash with the market maker.
pub fn step(
    state: &mut MarketState,
    pop: &Population,
    cost: &LiquidCost,
    kind: DynamicsKind,
    rng: &mut ChaCha8Rng,
) -> Result<BlockChoice> {
    let n = pop.len();
    let k = pop.dim();
    let choice = match kind {
        DynamicsKind::Asd => BlockChoice {
            trader: rng.gen_range(0..n),
            security: None,
        },
        DynamicsKind::Ssd => {
            let flat = rng.gen_range(0..n * k);
            BlockChoice {
                trader: flat / k,
                security: Some(flat % k),
            }
        }
    };

    let i = choice.trader;
    let trader = pop.trader(i);
    let delta = match choice.security {
        None => best_response_all(
            trader,
            &state.allocations[i],
            &state.shares,
            cost,
            BEST_RESPONSE_TOL,
        )?,
        Some(sec) => {
            let q = best_response_single(
                trader,
                &state.allocations[i],
                &state.shares,
                sec,
                cost,
                BEST_RESPONSE_TOL,
            )?;
            let mut d = DVector::zeros(k);
            d[sec] = q;
            d
        }
    };

    let cost_before = cost.value(&state.shares);
    state.allocations[i] += &delta;
    state.shares += &delta;
    let cost_after = cost.value(&state.shares);
    state.cash[i] -= cost_after - cost_before;
    Ok(choice)
}

/// Runs `trades` rounds from the all-zero state, recording price, potential,
/// and gap after every trade (plus the initial state, so the trajectory has
/// trades + 1 records). Deterministic for a fixed seed. When no F* is
/// supplied, gaps are measured against the best potential seen in the run
/// and flagged as provisional.
pub fn run(
    pop: &Population,
    cost: &LiquidCost,
    kind: DynamicsKind,
    trades: usize,
    seed: u64,
    f_star: Option<f64>,
) -> Result<Trajectory> {
    let n = pop.len();
    let k = pop.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = MarketState::new(n, k);

    let mut potentials = Vec::with_capacity(trades + 1);
    let mut prices = Vec::with_capacity(trades + 1);
    potentials.push(crate::market::total_potential(pop, cost, &state));
    prices.push(cost.price(&state.shares));

    for _ in 0..trades {
        step(&mut state, pop, cost, kind, &mut rng)?;
        let f = crate::market::total_potential(pop, cost, &state);
        debug_assert!(
            f <= potentials.last().unwrap() + 1e-12,
            "potential increased: {} -> {}",
            potentials.last().unwrap(),
            f
        );
        debug_assert!(state.share_consistency_residual() < 1e-9);
        debug_assert!(state.cash_conservation_residual(cost) < 1e-9);
        potentials.push(f);
        prices.push(cost.price(&state.shares));
    }

    let (reference, provisional) = match f_star {
        Some(f) => (f, false),
        None => (
            potentials.iter().cloned().fold(f64::INFINITY, f64::min),
            true,
        ),
    };
    let records = potentials
        .into_iter()
        .zip(prices)
        .enumerate()
        .map(|(t, (potential, price))| TradeRecord {
            t,
            price,
            potential,
            gap: potential - reference,
        })
        .collect();
    Ok(Trajectory {
        kind,
        cost: *cost,
        seed,
        provisional_gaps: provisional,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium;
    use crate::expfam::NaturalParam;
    use crate::market::{ground_truth, sample_beliefs, BeliefMode};

    fn peaked_population(seed: u64, n: usize, k: usize) -> Population {
        let gt = ground_truth(BeliefMode::SinglePeaked { nu: 0.02 }, k).unwrap();
        sample_beliefs(&gt, n, seed).unwrap()
    }

    #[test]
    fn block_counts() {
        assert_eq!(block_count(DynamicsKind::Asd, 10, 5), 10);
        assert_eq!(block_count(DynamicsKind::Ssd, 10, 5), 50);
        assert_eq!(block_count(DynamicsKind::Asd, 1, 1), 1);
        assert_eq!(block_count(DynamicsKind::Ssd, 1, 1), 1);
    }

    #[test]
    fn best_response_zero_when_aligned() {
        // Trader belief already matches the market price.
        let t = TraderParams::new(NaturalParam::from_slice(&[0.0; 3]).unwrap(), 1.0).unwrap();
        let cost = LiquidCost::new(CostKind::Lmsr, 0.5).unwrap();
        let delta =
            best_response_all(&t, &DVector::zeros(3), &DVector::zeros(3), &cost, 1e-12).unwrap();
        assert!(delta.norm() == 0.0);

        let t2 = TraderParams::new(NaturalParam::from_slice(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
        let cost2 = LiquidCost::new(CostKind::Ind, 0.5).unwrap();
        let delta2 =
            best_response_all(&t2, &DVector::zeros(2), &DVector::zeros(2), &cost2, 1e-12).unwrap();
        assert!(delta2.norm() < 1e-12);
    }

    #[test]
    fn lmsr_closed_form_matches_generic_newton() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let cost = LiquidCost::new(CostKind::Lmsr, 0.3).unwrap();
        for _ in 0..20 {
            let t = TraderParams::new(
                crate::expfam::tests::random_theta(&mut rng, 4, 3.0),
                rng.gen_range(0.5..2.0),
            )
            .unwrap();
            let r = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0f64));
            let s = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0f64));
            let closed = best_response_all(&t, &r, &s, &cost, 1e-12).unwrap();
            let newton = best_response_all_newton(&t, &r, &s, &cost, 1e-12).unwrap();
            assert!(
                (&closed - &newton).norm() < 1e-8,
                "closed form and Newton disagree: {:?} vs {:?}",
                closed.as_slice(),
                newton.as_slice()
            );
        }
    }

    #[test]
    fn best_response_reaches_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let cost = LiquidCost::new(kind, 0.2).unwrap();
            for _ in 0..10 {
                let t = TraderParams::new(
                    crate::expfam::tests::random_theta(&mut rng, 4, 2.0),
                    rng.gen_range(0.5..2.0),
                )
                .unwrap();
                let r = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5f64));
                let s = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5f64));
                let delta = best_response_all(&t, &r, &s, &cost, 1e-11).unwrap();
                let trader_price =
                    crate::expfam::softmax(&(t.theta.as_vector() - (&r + &delta) * t.a));
                let market_price = cost.price(&(&s + &delta));
                assert!((trader_price - market_price).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn single_security_minimizes_restriction() {
        let t =
            TraderParams::new(NaturalParam::from_slice(&[1.0, -1.0, 0.5]).unwrap(), 1.0).unwrap();
        let cost = LiquidCost::new(CostKind::Ind, 0.5).unwrap();
        let r = DVector::zeros(3);
        let s = DVector::zeros(3);
        let q = best_response_single(&t, &r, &s, 0, &cost, 1e-12).unwrap();
        let obj = |delta: f64| {
            let mut d = DVector::zeros(3);
            d[0] = delta;
            crate::market::trader_potential(&t, &(-(&r + &d))) + cost.value(&(&s + &d))
        };
        assert!(obj(q) <= obj(q - 1.0) && obj(q) <= obj(q + 1.0));
        // Coercivity of the restriction: derivative changes sign over a wide
        // bracket.
        assert!(obj(q - 30.0) > obj(q) && obj(q + 30.0) > obj(q));
    }

    #[test]
    fn single_security_zero_when_stationary() {
        let t = TraderParams::new(NaturalParam::from_slice(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
        let cost = LiquidCost::new(CostKind::Ind, 1.0).unwrap();
        let q = best_response_single(&t, &DVector::zeros(2), &DVector::zeros(2), 0, &cost, 1e-12)
            .unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn single_security_matches_golden_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let cost = LiquidCost::new(kind, 0.4).unwrap();
            for _ in 0..10 {
                let t = TraderParams::new(
                    crate::expfam::tests::random_theta(&mut rng, 3, 2.0),
                    rng.gen_range(0.5..2.0),
                )
                .unwrap();
                let r = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5f64));
                let s = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5f64));
                let sec = rng.gen_range(0..3);
                let q = best_response_single(&t, &r, &s, sec, &cost, 1e-12).unwrap();
                let obj = |delta: f64| {
                    let mut d = DVector::zeros(3);
                    d[sec] = delta;
                    crate::market::trader_potential(&t, &(-(&r + &d))) + cost.value(&(&s + &d))
                };
                let oracle = golden_min(obj, -50.0, 50.0);
                assert!(
                    (q - oracle).abs() < 1e-6,
                    "root find {q} vs golden section {oracle}"
                );
            }
        }
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        for _ in 0..300 {
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - phi * (hi - lo);
            d = lo + phi * (hi - lo);
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn step_identity_when_no_trade_improves() {
        let t = TraderParams::new(NaturalParam::from_slice(&[0.0; 3]).unwrap(), 1.0).unwrap();
        let pop = Population::new(vec![t]).unwrap();
        let cost = LiquidCost::new(CostKind::Lmsr, 1.0).unwrap();
        let mut state = MarketState::new(1, 3);
        let before = state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        step(&mut state, &pop, &cost, DynamicsKind::Asd, &mut rng).unwrap();
        assert_eq!(state.allocations[0], before.allocations[0]);
        assert_eq!(state.shares, before.shares);
        assert_eq!(state.cash[0], before.cash[0]);
    }

    #[test]
    fn step_conserves_cash_and_decreases_potential() {
        let pop = peaked_population(21, 6, 4);
        for kind_cost in [CostKind::Lmsr, CostKind::Ind] {
            for kind_dyn in [DynamicsKind::Asd, DynamicsKind::Ssd] {
                let cost = LiquidCost::new(kind_cost, 0.15).unwrap();
                let mut state = MarketState::new(6, 4);
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let mut last_f = crate::market::total_potential(&pop, &cost, &state);
                for _ in 0..50 {
                    step(&mut state, &pop, &cost, kind_dyn, &mut rng).unwrap();
                    let f = crate::market::total_potential(&pop, &cost, &state);
                    assert!(f <= last_f + 1e-12, "potential increased");
                    last_f = f;
                    assert!(state.cash_conservation_residual(&cost) < 1e-9);
                    assert!(state.share_consistency_residual() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn run_empty_and_deterministic() {
        let pop = peaked_population(22, 5, 4);
        let cost = LiquidCost::new(CostKind::Lmsr, 0.1).unwrap();
        let empty = run(&pop, &cost, DynamicsKind::Asd, 0, 7, None).unwrap();
        assert_eq!(empty.len(), 1);
        assert!(empty.provisional_gaps);

        let a = run(&pop, &cost, DynamicsKind::Asd, 40, 7, None).unwrap();
        let b = run(&pop, &cost, DynamicsKind::Asd, 40, 7, None).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.potential, rb.potential);
            assert_eq!(ra.price, rb.price);
        }
    }

    #[test]
    fn run_gap_shrinks_on_reference_setup() {
        let pop = peaked_population(23, 10, 5);
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let cost = LiquidCost::new(kind, 0.1).unwrap();
            let eq = equilibrium::solve_equilibrium(&pop, &cost, 1e-10).unwrap();
            let traj = run(&pop, &cost, DynamicsKind::Asd, 100, 3, Some(eq.f_star)).unwrap();
            let gaps = traj.gaps();
            assert!(gaps[0] > gaps[100], "gap did not shrink");
            assert!(gaps.iter().all(|&g| g >= -1e-9), "negative gap");
        }
    }
}
