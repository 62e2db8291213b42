//! Experiment commands: each one maps a validated config to a CSV document.
//! Output is a pure function of (config, seeds) up to the version line of
//! the metadata header. Sweep cells run in parallel; rows are ordered by
//! the (cost, b) position in the config and then by trade count.

use rayon::prelude::*;

use crate::analysis;
use crate::config::ExperimentConfig;
use crate::cost::{CostKind, LiquidCost};
use crate::dynamics::{self, block_count};
use crate::equilibrium;
use crate::error::{Error, Result};
use crate::market::Population;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Floats are printed with 12 significant digits.
fn fmt(x: f64) -> String {
    format!("{x:.11e}")
}

fn header(cfg: &ExperimentConfig, command: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("# pmlab {VERSION} {command}\n"));
    s.push_str(&format!(
        "# config sha256={} belief_seed={} sequence_seed_base={}\n",
        cfg.content_hash, cfg.belief_seed, cfg.sequence_seed_base
    ));
    s
}

/// Market-clearing prices next to ground truth, one row per security, with
/// the effective sample size and the sampling-error bound in the metadata.
pub fn cmd_clearing(cfg: &ExperimentConfig) -> Result<String> {
    let gt = cfg.ground_truth()?;
    let pop = cfg.population()?;
    let mu_bar = equilibrium::market_clearing_price(&pop);
    let mu_true = gt.true_price();

    let n_eff = analysis::n_eff(&cfg.risk_aversions);
    let bound = analysis::sampling_error_bound(cfg.sigma, cfg.k, n_eff, cfg.delta);

    let mut out = header(cfg, "clearing");
    out.push_str(&format!(
        "# n_eff={} sampling_bound={} delta={}\n",
        fmt(n_eff),
        fmt(bound),
        fmt(cfg.delta)
    ));
    out.push_str("k,mu_bar,mu_true\n");
    for k in 0..cfg.k {
        out.push_str(&format!(
            "{},{},{}\n",
            k + 1,
            fmt(mu_bar.as_vector()[k]),
            fmt(mu_true.as_vector()[k])
        ));
    }
    Ok(out)
}

/// Solver bias against the first-order formula over the (cost, b) grid.
pub fn cmd_bias_sweep(cfg: &ExperimentConfig) -> Result<String> {
    let pop = cfg.population()?;
    let mu_bar = equilibrium::market_clearing_price(&pop);
    let a_bar = harmonic_mean(&cfg.risk_aversions);

    let cells = cost_b_cells(cfg);
    let rows: Vec<(usize, String)> = cells
        .par_iter()
        .map(|&(idx, kind, b)| {
            let asymptotic = analysis::asymptotic_bias(&mu_bar, kind, b, a_bar, cfg.n)
                .map(|v| v.norm())
                .unwrap_or(f64::NAN);
            let row = match LiquidCost::new(kind, b)
                .and_then(|cost| equilibrium::solve_equilibrium(&pop, &cost, cfg.solver_tol))
            {
                Ok(res) => {
                    let bias = (res.mu_star.as_vector() - mu_bar.as_vector()).norm();
                    format!(
                        "{},{},{},{},ok\n",
                        kind.label(),
                        fmt(b),
                        fmt(bias),
                        fmt(asymptotic)
                    )
                }
                Err(e) => format!(
                    "{},{},nan,{},{}\n",
                    kind.label(),
                    fmt(b),
                    fmt(asymptotic),
                    status_code(&e)
                ),
            };
            (idx, row)
        })
        .collect();

    let mut out = header(cfg, "bias-sweep");
    out.push_str("cost,b,bias_norm,asymptotic_bias_norm,status\n");
    out.push_str(&sorted_rows(rows));
    Ok(out)
}

/// Mean suboptimality gap and price error per trade over the (cost, b) grid,
/// averaged across trading sequences. The ci95 column is the half width of
/// the normal-approximation 95% interval over per-seed log10 gaps.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.trades == 0 {
        return Err(Error::invalid_config("trades", "simulate needs trades >= 1"));
    }
    let pop = cfg.population()?;

    let cells = cost_b_cells(cfg);
    let blocks: Vec<(usize, Result<String>)> = cells
        .par_iter()
        .map(|&(idx, kind, b)| (idx, simulate_cell(cfg, &pop, kind, b)))
        .collect();

    let mut out = header(cfg, "simulate");
    out.push_str("cost,b,t,mean_gap,mean_price_error,ci95\n");
    let mut sorted = blocks;
    sorted.sort_by_key(|(idx, _)| *idx);
    for (_, block) in sorted {
        out.push_str(&block?);
    }
    Ok(out)
}

fn simulate_cell(
    cfg: &ExperimentConfig,
    pop: &Population,
    kind: CostKind,
    b: f64,
) -> Result<String> {
    let cost = LiquidCost::new(kind, b)?;
    let eq = equilibrium::solve_equilibrium(pop, &cost, cfg.solver_tol)?;
    let trajectories = run_sequences(cfg, pop, &cost, eq.f_star)?;
    let mu_star = eq.mu_star.as_vector();

    let mut block = String::new();
    let n_seq = trajectories.len() as f64;
    for t in 0..=cfg.trades {
        let mut gap_sum = 0.0;
        let mut err_sum = 0.0;
        let mut log_gaps = Vec::with_capacity(trajectories.len());
        for traj in &trajectories {
            let rec = &traj.records[t];
            gap_sum += rec.gap;
            err_sum += (&rec.price - mu_star).norm();
            log_gaps.push(rec.gap.max(1e-300).log10());
        }
        let mean_log = log_gaps.iter().sum::<f64>() / n_seq;
        let var_log = log_gaps
            .iter()
            .map(|l| (l - mean_log).powi(2))
            .sum::<f64>()
            / (n_seq - 1.0).max(1.0);
        let ci95 = 1.96 * (var_log / n_seq).sqrt();
        block.push_str(&format!(
            "{},{},{},{},{},{}\n",
            kind.label(),
            fmt(b),
            t,
            fmt(gap_sum / n_seq),
            fmt(err_sum / n_seq),
            fmt(ci95)
        ));
    }
    Ok(block)
}

/// Empirical strong convexity against the asymptotic bounds for every
/// (cost, b, window) cell.
pub fn cmd_sigma(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.trades == 0 {
        return Err(Error::invalid_config("trades", "sigma needs trades >= 1"));
    }
    let pop = cfg.population()?;
    let mu_bar = equilibrium::market_clearing_price(&pop);
    let n_blocks = block_count(cfg.dynamics, cfg.n, cfg.k);

    let cells = cost_b_cells(cfg);
    let blocks: Vec<(usize, Result<String>)> = cells
        .par_iter()
        .map(|&(idx, kind, b)| {
            let result = (|| -> Result<String> {
                let cost = LiquidCost::new(kind, b)?;
                let eq = equilibrium::solve_equilibrium(&pop, &cost, cfg.solver_tol)?;
                let trajectories = run_sequences(cfg, &pop, &cost, eq.f_star)?;
                let mean_gaps: Vec<(usize, f64)> = (0..=cfg.trades)
                    .map(|t| {
                        let mean = trajectories.iter().map(|tr| tr.records[t].gap).sum::<f64>()
                            / trajectories.len() as f64;
                        (t, mean)
                    })
                    .collect();
                let bounds =
                    analysis::sigma_bounds(cfg.dynamics, kind, &mu_bar, &cfg.risk_aversions, b)?;
                let mut block = String::new();
                for &(t1, t2) in &cfg.sigma_windows {
                    let sigma_hat = match analysis::empirical_sigma(&mean_gaps, t1, t2, n_blocks) {
                        Ok(v) => fmt(v),
                        Err(Error::NonPositiveGap { .. }) => "nan".to_string(),
                        Err(e) => return Err(e),
                    };
                    block.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        kind.label(),
                        cfg.dynamics.label(),
                        fmt(b),
                        t1,
                        t2,
                        sigma_hat,
                        fmt(bounds.sigma_low),
                        bounds.sigma_high.map(fmt).unwrap_or_default()
                    ));
                }
                Ok(block)
            })();
            (idx, result)
        })
        .collect();

    let mut out = header(cfg, "sigma");
    out.push_str("cost,dynamics,b,t1,t2,sigma_hat,sigma_low,sigma_high\n");
    let mut sorted = blocks;
    sorted.sort_by_key(|(idx, _)| *idx);
    for (_, block) in sorted {
        out.push_str(&block?);
    }
    Ok(out)
}

/// Full three-way error decomposition at the configured trade snapshots.
/// Runs a single cost (the config must name exactly one).
pub fn cmd_decompose(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.costs.len() != 1 {
        return Err(Error::invalid_config(
            "costs",
            "decompose reports fixed columns and needs exactly one cost",
        ));
    }
    let kind = cfg.costs[0];
    let gt = cfg.ground_truth()?;
    let pop = cfg.population()?;
    let mu_true = gt.true_price().as_vector().clone();
    let mu_bar = equilibrium::market_clearing_price(&pop).as_vector().clone();

    let rows: Vec<(usize, Result<String>)> = cfg
        .b_grid
        .par_iter()
        .enumerate()
        .map(|(idx, &b)| {
            let result = (|| -> Result<String> {
                let cost = LiquidCost::new(kind, b)?;
                let eq = equilibrium::solve_equilibrium(&pop, &cost, cfg.solver_tol)?;
                let trajectories = run_sequences(cfg, &pop, &cost, eq.f_star)?;
                let mu_star = eq.mu_star.as_vector();
                let mut block = String::new();
                for &t in &cfg.snapshots {
                    let mut conv = 0.0;
                    let mut total = 0.0;
                    for traj in &trajectories {
                        let price = &traj.records[t].price;
                        let d = analysis::error_decomposition(&mu_true, &mu_bar, mu_star, price)?;
                        conv += d.convergence;
                        total += d.total;
                    }
                    let n_seq = trajectories.len() as f64;
                    let d0 =
                        analysis::error_decomposition(&mu_true, &mu_bar, mu_star, mu_star)?;
                    block.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        fmt(b),
                        t,
                        fmt(d0.sampling),
                        fmt(d0.bias),
                        fmt(conv / n_seq),
                        fmt(total / n_seq)
                    ));
                }
                Ok(block)
            })();
            (idx, result)
        })
        .collect();

    let mut out = header(cfg, "decompose");
    out.push_str("b,t,sampling,bias,convergence,total\n");
    let mut sorted = rows;
    sorted.sort_by_key(|(idx, _)| *idx);
    for (_, block) in sorted {
        out.push_str(&block?);
    }
    Ok(out)
}

fn run_sequences(
    cfg: &ExperimentConfig,
    pop: &Population,
    cost: &LiquidCost,
    f_star: f64,
) -> Result<Vec<dynamics::Trajectory>> {
    (0..cfg.n_sequences)
        .into_par_iter()
        .map(|i| {
            dynamics::run(
                pop,
                cost,
                cfg.dynamics,
                cfg.trades,
                cfg.sequence_seed_base + i as u64,
                Some(f_star),
            )
        })
        .collect()
}

fn cost_b_cells(cfg: &ExperimentConfig) -> Vec<(usize, CostKind, f64)> {
    let mut cells = Vec::new();
    for (ci, &kind) in cfg.costs.iter().enumerate() {
        for (bi, &b) in cfg.b_grid.iter().enumerate() {
            cells.push((ci * cfg.b_grid.len() + bi, kind, b));
        }
    }
    cells
}

fn sorted_rows(mut rows: Vec<(usize, String)>) -> String {
    rows.sort_by_key(|(idx, _)| *idx);
    rows.into_iter().map(|(_, row)| row).collect()
}

fn harmonic_mean(a: &[f64]) -> f64 {
    a.len() as f64 / a.iter().map(|x| 1.0 / x).sum::<f64>()
}

fn status_code(e: &Error) -> &'static str {
    match e {
        Error::MaxIterations { .. } => "max_iterations",
        Error::BracketFailure { .. } => "bracket_failure",
        Error::NonInterior(_) => "non_interior",
        Error::NonPositiveGap { .. } => "non_positive_gap",
        _ => "error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg(extra: &str) -> ExperimentConfig {
        let base = format!("k = 3\nn = 4\ntrades = 40\nn_sequences = 3\n{extra}");
        ExperimentConfig::from_toml(&base, None).unwrap()
    }

    #[test]
    fn clearing_header_and_shape() {
        let cfg = quick_cfg("sigma = 1.0\nb_grid = [0.1, 0.2]");
        let csv = cmd_clearing(&cfg).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# pmlab"));
        assert!(lines[2].starts_with("# n_eff="));
        assert_eq!(lines[3], "k,mu_bar,mu_true");
        assert_eq!(lines.len(), 4 + 3);
    }

    #[test]
    fn clearing_zero_noise_matches_truth() {
        let cfg = quick_cfg("sigma = 0.0\nb_grid = [0.1]");
        let csv = cmd_clearing(&cfg).unwrap();
        for line in csv.lines().skip(4) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[1], cols[2], "mu_bar != mu_true in {line}");
        }
    }

    #[test]
    fn clearing_single_peaked_reference_truth() {
        let cfg = ExperimentConfig::from_toml("n_sequences = 1", None).unwrap();
        let csv = cmd_clearing(&cfg).unwrap();
        let first_row = csv.lines().nth(4).unwrap();
        let mu_true: f64 = first_row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((mu_true - 0.92).abs() < 1e-9);
    }

    #[test]
    fn bias_sweep_columns_and_ratio() {
        let cfg = quick_cfg("sigma = 1.0\nb_grid = [0.001, 0.01]");
        let csv = cmd_bias_sweep(&cfg).unwrap();
        let mut data = Vec::new();
        for line in csv.lines().skip(3) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 5);
            assert_eq!(cols[4], "ok");
            data.push((
                cols[0].to_string(),
                cols[1].parse::<f64>().unwrap(),
                cols[2].parse::<f64>().unwrap(),
                cols[3].parse::<f64>().unwrap(),
            ));
        }
        // Small b: measured bias within a few percent of the formula.
        for (cost, b, bias, asym) in &data {
            if *b <= 0.0011 {
                let ratio = bias / asym;
                assert!(
                    (ratio - 1.0).abs() < 0.05,
                    "{cost} at b = {b}: bias/asymptotic = {ratio}"
                );
            }
        }
        // IND bias at least the LMSR bias and at most ~2x at each b.
        for bi in 0..2 {
            let lmsr = data[bi].2;
            let ind = data[2 + bi].2;
            assert!(ind >= lmsr * (1.0 - 1e-6));
            assert!(ind <= 2.0 * lmsr * 1.1);
        }
    }

    #[test]
    fn simulate_deterministic_and_decaying() {
        let cfg = quick_cfg("sigma = 1.0\ncosts = [\"LMSR\"]\nb_grid = [0.1]");
        let a = cmd_simulate(&cfg).unwrap();
        let b = cmd_simulate(&cfg).unwrap();
        assert_eq!(a, b, "same config must give byte-identical output");

        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[2], "cost,b,t,mean_gap,mean_price_error,ci95");
        let first: Vec<&str> = lines[3].split(',').collect();
        let last: Vec<&str> = lines.last().unwrap().split(',').collect();
        let gap0: f64 = first[3].parse().unwrap();
        let gap_end: f64 = last[3].parse().unwrap();
        assert_eq!(first[2], "0");
        assert!(gap_end < gap0);
    }

    #[test]
    fn sigma_lmsr_asd_rows_hit_2b() {
        let cfg = ExperimentConfig::from_toml("k = 3\nn = 4\ntrades = 60\nn_sequences = 3\nsigma = 1.0\ncosts = [\"LMSR\"]\nb_grid = [0.05]\nsigma_windows = [[30, 60]]", None).unwrap();
        let csv = cmd_sigma(&cfg).unwrap();
        let row: Vec<&str> = csv.lines().nth(3).unwrap().split(',').collect();
        let sigma_low: f64 = row[6].parse().unwrap();
        let sigma_high: f64 = row[7].parse().unwrap();
        assert!((sigma_low - 0.1).abs() < 1e-9);
        assert!((sigma_high - 0.1).abs() < 1e-9);
    }

    #[test]
    fn decompose_triangle_and_validation() {
        let cfg = quick_cfg("sigma = 1.0\nb_grid = [0.1, 0.2]\ncosts = [\"LMSR\"]\nsnapshots = [0, 40]");
        let csv = cmd_decompose(&cfg).unwrap();
        assert_eq!(csv.lines().nth(2).unwrap(), "b,t,sampling,bias,convergence,total");
        for line in csv.lines().skip(3) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            let (sampling, bias, conv, total) = (cols[2], cols[3], cols[4], cols[5]);
            assert!(total <= sampling + bias + conv + 1e-12);
        }

        let two_costs = quick_cfg("b_grid = [0.1]");
        assert!(matches!(
            cmd_decompose(&two_costs),
            Err(Error::InvalidConfig { .. })
        ));
    }
}
