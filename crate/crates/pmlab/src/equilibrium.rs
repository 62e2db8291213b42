//! Equilibrium computation: market-clearing prices in closed form and
//! market-maker equilibrium prices by minimizing the convex dual over the
//! relative interior of the simplex.
//!
//! The dual is minimized with a damped Newton method in the softmax
//! parametrization mu = softmax(z) with the last coordinate of z pinned to
//! zero, which keeps every iterate strictly interior. Both the gradient and
//! the Hessian of the parametrized objective are exact: the Euclidean dual
//! Hessian is diagonal for both costs, and the softmax chain-rule terms have
//! closed forms.

use nalgebra::{DMatrix, DVector};

use crate::cost::{CostKind, LiquidCost};
use crate::error::{Error, Result};
use crate::expfam::{self, NaturalParam, PriceVector};
use crate::market::Population;

/// Iteration cap for the dual Newton solve.
pub const MAX_NEWTON_ITERS: usize = 200;

/// Default tolerance on the projected dual gradient norm.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Output of the dual solve.
#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// Market-maker equilibrium prices, strictly interior.
    pub mu_star: PriceVector,
    /// Optimal potential value F* (by strong duality, minus the dual value).
    pub f_star: f64,
    /// Projected-gradient norm at the returned point.
    pub grad_norm: f64,
    /// Newton iterations used.
    pub iterations: usize,
}

/// Risk-aversion-weighted average belief (sum theta_i / a_i) / (sum 1 / a_i).
pub fn weighted_average_belief(pop: &Population) -> NaturalParam {
    let k = pop.dim();
    let mut num = DVector::zeros(k);
    let mut denom = 0.0;
    for t in pop.traders() {
        num += t.theta.as_vector() / t.a;
        denom += 1.0 / t.a;
    }
    NaturalParam::new(num / denom).expect("average of finite beliefs is finite")
}

/// Market-clearing prices: softmax of the risk-aversion-weighted average
/// belief. Closed form, no solve needed.
pub fn market_clearing_price(pop: &Population) -> PriceVector {
    expfam::mean_payoff(&weighted_average_belief(pop))
}

/// Dual objective sum_i F_i*(mu) + b C*(mu) and its gradient projected onto
/// the simplex tangent space {u : 1^T u = 0}. Accepts b = 0, in which case
/// the objective is the market-clearing dual.
pub fn dual_objective(
    pop: &Population,
    kind: CostKind,
    b: f64,
    mu: &PriceVector,
) -> Result<(f64, DVector<f64>)> {
    mu.require_interior()?;
    if b < 0.0 {
        return Err(Error::PreconditionViolation(format!(
            "liquidity must be nonnegative, got {b}"
        )));
    }
    let k = mu.dim();
    let v = mu.as_vector();

    let mut value = 0.0;
    let mut grad = DVector::zeros(k);
    let log_mu = v.map(f64::ln);
    let neg_entropy = expfam::neg_entropy(mu);
    for t in pop.traders() {
        value += (neg_entropy - t.theta.as_vector().dot(v)) / t.a;
        grad += (log_mu.add_scalar(1.0) - t.theta.as_vector()) / t.a;
    }
    if b > 0.0 {
        value += b * kind.conjugate(mu);
        grad += match kind {
            CostKind::Lmsr => log_mu.add_scalar(1.0) * b,
            CostKind::Ind => kind.state_for_price(mu)? * b,
        };
    }
    let mean = grad.mean();
    Ok((value, grad.add_scalar(-mean)))
}

/// Minimizes the dual for the given liquid cost, starting from the
/// market-clearing price.
pub fn solve_equilibrium(
    pop: &Population,
    cost: &LiquidCost,
    tol: f64,
) -> Result<EquilibriumResult> {
    solve_equilibrium_from(pop, cost, tol, &market_clearing_price(pop))
}

/// Same as [`solve_equilibrium`] but with an explicit interior starting point.
pub fn solve_equilibrium_from(
    pop: &Population,
    cost: &LiquidCost,
    tol: f64,
    start: &PriceVector,
) -> Result<EquilibriumResult> {
    if !(tol > 0.0) {
        return Err(Error::PreconditionViolation(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    start.require_interior()?;
    let k = pop.dim();
    let n = k - 1;

    // z parametrizes mu = softmax([z; 0]).
    let s = start.as_vector();
    let mut z = DVector::from_fn(n, |i, _| (s[i] / s[k - 1]).ln());

    let inv_a_sum: f64 = pop.traders().iter().map(|t| 1.0 / t.a).sum();

    let eval = |z: &DVector<f64>| -> Result<(f64, DVector<f64>, PriceVector, DVector<f64>)> {
        let full = DVector::from_fn(k, |i, _| if i < n { z[i] } else { 0.0 });
        let mu = PriceVector::new(expfam::softmax(&full)).expect("softmax is coherent");
        let (value, proj_grad) = dual_objective(pop, cost.kind, cost.b, &mu)?;
        // Chain rule through the softmax: gradient in z is (H(mu) g)[0..n],
        // and H g = H (projected g) since H annihilates constants.
        let h = expfam::payoff_covariance(&mu)?;
        let gz_full = &h * &proj_grad;
        let gz = DVector::from_fn(n, |i, _| gz_full[i]);
        Ok((value, gz, mu, proj_grad))
    };

    // Exact Hessian of z -> dual(softmax([z; 0])). The Euclidean dual Hessian
    // is diagonal: (sum_i 1/a_i) diag(1/mu) plus b diag(1/mu) for LMSR or
    // b diag(1/(mu (1-mu))) for IND. The curvature of the parametrization
    // contributes the softmax second-derivative terms weighted by the
    // Euclidean gradient.
    let hess_z = |mu: &PriceVector, proj_grad: &DVector<f64>| -> DMatrix<f64> {
        let v = mu.as_vector();
        let diag = DVector::from_fn(k, |j, _| {
            let base = inv_a_sum / v[j];
            base + match cost.kind {
                CostKind::Lmsr => cost.b / v[j],
                CostKind::Ind => cost.b / (v[j] * (1.0 - v[j])),
            }
        });
        // First term: J^T diag J restricted to the free coordinates, with
        // J_{j,a} = mu_j (delta_{ja} - mu_a).
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..n {
            for b_idx in a..n {
                let mut acc = 0.0;
                for j in 0..k {
                    let ja = v[j] * (if j == a { 1.0 } else { 0.0 } - v[a]);
                    let jb = v[j] * (if j == b_idx { 1.0 } else { 0.0 } - v[b_idx]);
                    acc += diag[j] * ja * jb;
                }
                hess[(a, b_idx)] = acc;
                hess[(b_idx, a)] = acc;
            }
        }
        // Second term: sum_j g_j d^2 mu_j / dz^2. Constant components of g
        // contribute nothing (softmax curvature sums to zero over j), so the
        // projected gradient can stand in for the Euclidean one.
        let w = DVector::from_fn(k, |j, _| proj_grad[j] * v[j]);
        let w_total: f64 = w.iter().sum();
        for a in 0..n {
            for b_idx in a..n {
                let delta = if a == b_idx { 1.0 } else { 0.0 };
                let term = delta * (w[a] - w_total * v[a]) - w[a] * v[b_idx]
                    - v[a] * w[b_idx]
                    + 2.0 * w_total * v[a] * v[b_idx];
                hess[(a, b_idx)] += term;
                hess[(b_idx, a)] = hess[(a, b_idx)];
            }
        }
        hess
    };

    let mut last = eval(&z)?;
    for iter in 0..MAX_NEWTON_ITERS {
        let (value, gz, mu, proj_grad) = last;
        let residual = proj_grad.norm();
        if residual <= tol {
            return Ok(EquilibriumResult {
                mu_star: mu,
                f_star: -value,
                grad_norm: residual,
                iterations: iter,
            });
        }

        let hess = hess_z(&mu, &proj_grad);

        // Newton direction, with a ridge fallback when the solve fails or
        // does not give descent.
        let mut direction = hess.clone().lu().solve(&(-&gz));
        if let Some(d) = &direction {
            if gz.dot(d) >= 0.0 {
                direction = None;
            }
        }
        let direction = direction.unwrap_or_else(|| {
            let ridge = &hess + DMatrix::identity(n, n) * (1e-8 + hess.amax() * 1e-8);
            ridge
                .lu()
                .solve(&(-&gz))
                .filter(|d| gz.dot(d) < 0.0)
                .unwrap_or_else(|| -&gz)
        });

        // Armijo backtracking with halving. Strict decrease is required so a
        // step too small to change the iterate can never be accepted.
        let slope = gz.dot(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        let min_step = 1e-14 * (1.0 + z.norm()) / (1.0 + direction.norm());
        while step > min_step {
            let trial = &z + &direction * step;
            match eval(&trial) {
                Ok(next) if next.0 < value + 1e-4 * step * slope => {
                    accepted = Some((trial, next));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        // Near the minimum the predicted decrease drops below the floating
        // point resolution of the dual value and Armijo cannot certify
        // progress. Accept the full Newton step as long as it still shrinks
        // the first-order residual.
        if accepted.is_none() {
            let trial = &z + &direction;
            if let Ok(next) = eval(&trial) {
                if next.3.norm() < residual {
                    accepted = Some((trial, next));
                }
            }
        }
        let Some((trial, next)) = accepted else {
            return Err(Error::MaxIterations {
                max_iters: iter,
                residual,
                tol,
            });
        };
        z = trial;
        last = next;
    }

    Err(Error::MaxIterations {
        max_iters: MAX_NEWTON_ITERS,
        residual: last.3.norm(),
        tol,
    })
}

/// Closed-form LMSR market-maker equilibrium prices for a market started at
/// the zero state: the market maker acts as one more exponential trader with
/// risk aversion 1/b and a uniform belief, so
/// mu* = softmax((sum theta_i / a_i) / (sum 1/a_i + b)).
pub fn lmsr_closed_form(pop: &Population, kind: CostKind, b: f64) -> Result<PriceVector> {
    if kind != CostKind::Lmsr {
        return Err(Error::PreconditionViolation(
            "closed form applies to the LMSR cost only".into(),
        ));
    }
    if b < 0.0 {
        return Err(Error::PreconditionViolation(format!(
            "liquidity must be nonnegative, got {b}"
        )));
    }
    let k = pop.dim();
    let mut num = DVector::zeros(k);
    let mut denom = b;
    for t in pop.traders() {
        num += t.theta.as_vector() / t.a;
        denom += 1.0 / t.a;
    }
    let theta = NaturalParam::new(num / denom)?;
    Ok(expfam::mean_payoff(&theta))
}

/// Residual of the explicit equilibrium conditions at a candidate price:
/// max_i || softmax(theta_i - a_i r_i) - mu || for the canonical allocations
/// r_i = (theta_i - log mu) / a_i, plus the tangent-space mismatch between
/// sum_i r_i and b * state_for_price(mu). Zero (up to solver tolerance) only
/// at the true equilibrium. Accepts b = 0 for the market-clearing case.
pub fn verify_equilibrium(
    pop: &Population,
    kind: CostKind,
    b: f64,
    mu_star: &PriceVector,
) -> Result<f64> {
    mu_star.require_interior()?;
    let log_mu = mu_star.as_vector().map(f64::ln);
    let k = pop.dim();

    let mut max_price_residual = 0.0f64;
    let mut alloc_sum = DVector::zeros(k);
    for t in pop.traders() {
        let r = (t.theta.as_vector() - &log_mu) / t.a;
        let implied = expfam::softmax(&(t.theta.as_vector() - &r * t.a));
        max_price_residual = max_price_residual.max((implied - mu_star.as_vector()).norm());
        alloc_sum += r;
    }

    let target = if b > 0.0 {
        kind.state_for_price(mu_star)? * b
    } else {
        DVector::zeros(k)
    };
    let diff = alloc_sum - target;
    let tangent = diff.add_scalar(-diff.mean());
    Ok(max_price_residual + tangent.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{ground_truth, sample_beliefs, BeliefMode, TraderParams};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_population(seed: u64, n: usize, k: usize) -> Population {
        let gt = ground_truth(BeliefMode::SinglePeaked { nu: 0.02 }, k).unwrap();
        sample_beliefs(&gt, n, seed).unwrap()
    }

    #[test]
    fn clearing_price_identical_beliefs() {
        let theta = NaturalParam::from_slice(&[0.4, -0.2, 0.1]).unwrap();
        let pop = Population::new(vec![
            TraderParams::new(theta.clone(), 1.0).unwrap(),
            TraderParams::new(theta.clone(), 3.0).unwrap(),
        ])
        .unwrap();
        let mu = market_clearing_price(&pop);
        let expected = expfam::mean_payoff(&theta);
        assert!((mu.as_vector() - expected.as_vector()).norm() < 1e-14);
    }

    #[test]
    fn clearing_price_equal_aversion_is_arithmetic_mean() {
        let t1 = NaturalParam::from_slice(&[1.0, 0.0]).unwrap();
        let t2 = NaturalParam::from_slice(&[0.0, 1.0]).unwrap();
        let pop = Population::new(vec![
            TraderParams::new(t1.clone(), 2.0).unwrap(),
            TraderParams::new(t2.clone(), 2.0).unwrap(),
        ])
        .unwrap();
        let mu = market_clearing_price(&pop);
        let mean =
            NaturalParam::new((t1.as_vector() + t2.as_vector()) * 0.5).unwrap();
        let expected = expfam::mean_payoff(&mean);
        assert!((mu.as_vector() - expected.as_vector()).norm() < 1e-14);
    }

    #[test]
    fn clearing_price_weighted_average() {
        let t1 = NaturalParam::from_slice(&[0.7, -0.3]).unwrap();
        let t2 = NaturalParam::from_slice(&[-0.5, 0.9]).unwrap();
        let pop = Population::new(vec![
            TraderParams::new(t1.clone(), 1.0).unwrap(),
            TraderParams::new(t2.clone(), 3.0).unwrap(),
        ])
        .unwrap();
        let mu = market_clearing_price(&pop);
        // (theta1 + theta2/3) / (4/3) = 3/4 theta1 + 1/4 theta2.
        let avg =
            NaturalParam::new(t1.as_vector() * 0.75 + t2.as_vector() * 0.25).unwrap();
        let expected = expfam::mean_payoff(&avg);
        assert!((mu.as_vector() - expected.as_vector()).norm() < 1e-14);
    }

    #[test]
    fn dual_gradient_vanishes_at_clearing_price_when_b_zero() {
        let pop = test_population(1, 6, 4);
        let mu_bar = market_clearing_price(&pop);
        let (_, grad) = dual_objective(&pop, CostKind::Lmsr, 0.0, &mu_bar).unwrap();
        assert!(grad.norm() < 1e-8, "gradient norm {}", grad.norm());
    }

    #[test]
    fn dual_value_minimal_at_clearing_price_when_b_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let pop = test_population(2, 5, 4);
        let mu_bar = market_clearing_price(&pop);
        let (v_bar, _) = dual_objective(&pop, CostKind::Lmsr, 0.0, &mu_bar).unwrap();
        for _ in 0..20 {
            let other = crate::expfam::tests::random_interior_mu(&mut rng, 4);
            let (v, _) = dual_objective(&pop, CostKind::Lmsr, 0.0, &other).unwrap();
            assert!(v_bar <= v + 1e-12);
        }
    }

    #[test]
    fn dual_gradient_matches_finite_differences() {
        // Central differences along tangent directions of the Euclidean dual.
        let pop = test_population(3, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let h = 1e-6;
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            for _ in 0..10 {
                let mu = crate::expfam::tests::random_interior_mu(&mut rng, 4);
                let (_, grad) = dual_objective(&pop, kind, 0.7, &mu).unwrap();
                let mut dir = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0f64));
                dir = dir.add_scalar(-dir.mean());
                dir = dir.normalize();
                let plus = PriceVector::new(mu.as_vector() + &dir * h).unwrap();
                let minus = PriceVector::new(mu.as_vector() - &dir * h).unwrap();
                let (vp, _) = dual_objective(&pop, kind, 0.7, &plus).unwrap();
                let (vm, _) = dual_objective(&pop, kind, 0.7, &minus).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                let analytic = grad.dot(&dir);
                assert_relative_eq!(fd, analytic, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn solver_matches_lmsr_closed_form() {
        let pop = test_population(4, 10, 5);
        for b in [1e-3, 1e-2, 0.1, 1.0] {
            let cost = LiquidCost::new(CostKind::Lmsr, b).unwrap();
            let result = solve_equilibrium(&pop, &cost, DEFAULT_TOL).unwrap();
            let oracle = lmsr_closed_form(&pop, CostKind::Lmsr, b).unwrap();
            let err = (result.mu_star.as_vector() - oracle.as_vector()).norm();
            assert!(err < 1e-8, "b = {b}: solver off closed form by {err}");
        }
    }

    #[test]
    fn small_b_approaches_clearing_price() {
        let pop = test_population(5, 10, 5);
        let cost = LiquidCost::new(CostKind::Lmsr, 1e-6).unwrap();
        let result = solve_equilibrium(&pop, &cost, DEFAULT_TOL).unwrap();
        let mu_bar = market_clearing_price(&pop);
        assert!((result.mu_star.as_vector() - mu_bar.as_vector()).norm() < 1e-4);
    }

    #[test]
    fn single_trader_ind_stationarity() {
        // Recover r1 = b logit(mu*) and check the trader gradient condition.
        let theta = NaturalParam::from_slice(&[0.8, -0.4, 0.1]).unwrap();
        let pop =
            Population::new(vec![TraderParams::new(theta.clone(), 1.0).unwrap()]).unwrap();
        let cost = LiquidCost::new(CostKind::Ind, 0.5).unwrap();
        let result = solve_equilibrium(&pop, &cost, DEFAULT_TOL).unwrap();
        let mu = &result.mu_star;
        let r1 = CostKind::Ind.state_for_price(mu).unwrap() * cost.b;
        let trader_price = expfam::softmax(&(theta.as_vector() - &r1));
        let market_price = cost.price(&r1);
        assert!((&trader_price - mu.as_vector()).norm() < 1e-6);
        assert!((&market_price - mu.as_vector()).norm() < 1e-6);
    }

    #[test]
    fn closed_form_limits() {
        let pop = test_population(6, 8, 4);
        let tiny = lmsr_closed_form(&pop, CostKind::Lmsr, 1e-12).unwrap();
        let mu_bar = market_clearing_price(&pop);
        assert!((tiny.as_vector() - mu_bar.as_vector()).norm() < 1e-9);

        let huge = lmsr_closed_form(&pop, CostKind::Lmsr, 1e9).unwrap();
        for k in 0..4 {
            assert_relative_eq!(huge.as_vector()[k], 0.25, epsilon = 1e-6);
        }

        assert!(lmsr_closed_form(&pop, CostKind::Ind, 1.0).is_err());
    }

    #[test]
    fn closed_form_two_traders() {
        let t1 = NaturalParam::from_slice(&[0.3, -0.1]).unwrap();
        let t2 = NaturalParam::from_slice(&[-0.6, 0.2]).unwrap();
        let pop = Population::new(vec![
            TraderParams::new(t1.clone(), 1.0).unwrap(),
            TraderParams::new(t2.clone(), 1.0).unwrap(),
        ])
        .unwrap();
        let mu = lmsr_closed_form(&pop, CostKind::Lmsr, 1.0).unwrap();
        let avg = NaturalParam::new((t1.as_vector() + t2.as_vector()) / 3.0).unwrap();
        let expected = expfam::mean_payoff(&avg);
        assert!((mu.as_vector() - expected.as_vector()).norm() < 1e-14);
    }

    #[test]
    fn verify_accepts_solution_rejects_perturbation() {
        let pop = test_population(7, 10, 5);
        let tol = 1e-10;
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let cost = LiquidCost::new(kind, 0.2).unwrap();
            let result = solve_equilibrium(&pop, &cost, tol).unwrap();
            let residual = verify_equilibrium(&pop, kind, cost.b, &result.mu_star).unwrap();
            assert!(residual <= 10.0 * tol, "residual {residual}");

            let mut perturbed = result.mu_star.as_vector().clone();
            perturbed[0] += 0.01;
            perturbed[1] -= 0.01;
            let perturbed = PriceVector::new(perturbed).unwrap();
            let bad = verify_equilibrium(&pop, kind, cost.b, &perturbed).unwrap();
            assert!(bad > 1e-3, "perturbed residual {bad}");
        }
    }

    #[test]
    fn verify_clearing_allocations_sum_to_zero_tangent() {
        let pop = test_population(8, 6, 4);
        let mu_bar = market_clearing_price(&pop);
        let residual = verify_equilibrium(&pop, CostKind::Lmsr, 0.0, &mu_bar).unwrap();
        assert!(residual < 1e-9, "clearing residual {residual}");
    }

    #[test]
    fn solver_unique_from_different_starts() {
        let pop = test_population(9, 10, 5);
        let tol = 1e-10;
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let cost = LiquidCost::new(kind, 0.3).unwrap();
            let a = solve_equilibrium(&pop, &cost, tol).unwrap();
            let uniform = PriceVector::from_slice(&[0.2; 5]).unwrap();
            let b = solve_equilibrium_from(&pop, &cost, tol, &uniform).unwrap();
            let gap = (a.mu_star.as_vector() - b.mu_star.as_vector()).norm();
            assert!(gap <= 1e-8, "two starts disagree by {gap}");
        }
    }

    #[test]
    fn bias_grows_with_liquidity_and_stays_linear() {
        let pop = test_population(10, 10, 5);
        let mu_bar = market_clearing_price(&pop);
        for kind in [CostKind::Lmsr, CostKind::Ind] {
            let mut last = 0.0;
            let mut ratios = Vec::new();
            for p in 1..=10 {
                let b = 2.0f64.powi(-(11 - p));
                let cost = LiquidCost::new(kind, b).unwrap();
                let r = solve_equilibrium(&pop, &cost, DEFAULT_TOL).unwrap();
                let bias = (r.mu_star.as_vector() - mu_bar.as_vector()).norm();
                assert!(
                    bias + 1e-9 >= last,
                    "{}: bias not monotone at b = {b}: {bias} < {last}",
                    kind.label()
                );
                last = bias;
                ratios.push(bias / b);
            }
            // Global bias bound: bias / b bounded over the grid.
            let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
            let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(max_ratio < 10.0 * min_ratio.max(1e-12) + 10.0);
        }
    }

    #[test]
    fn f_star_matches_primal_value_single_trader() {
        // For N = 1 and LMSR the primal minimum can be written down directly:
        // r1 solves grad F_1(-r1) = grad C_b(r1).
        let theta = NaturalParam::from_slice(&[0.5, -0.5]).unwrap();
        let pop =
            Population::new(vec![TraderParams::new(theta.clone(), 1.0).unwrap()]).unwrap();
        let cost = LiquidCost::new(CostKind::Lmsr, 0.7).unwrap();
        let result = solve_equilibrium(&pop, &cost, DEFAULT_TOL).unwrap();
        // Canonical allocation pinned to the tangent space.
        let log_mu = result.mu_star.as_vector().map(f64::ln);
        let mut r1 = theta.as_vector() - &log_mu;
        r1 = r1.add_scalar(-r1.mean());
        let mut state = crate::market::MarketState::new(1, 2);
        state.allocations[0] = r1.clone();
        state.shares = r1;
        let primal = crate::market::total_potential(&pop, &cost, &state);
        assert_relative_eq!(primal, result.f_star, epsilon = 1e-9);
    }
}
