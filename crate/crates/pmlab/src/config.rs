//! Experiment configuration: a flat TOML file of scalars and lists, parsed
//! and validated into a typed plan. Every experiment command is a pure
//! function of (config, seeds), so the validated config also carries a hash
//! of the raw input for the output metadata header.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cost::CostKind;
use crate::dynamics::DynamicsKind;
use crate::error::{Error, Result};
use crate::expfam::NaturalParam;
use crate::market::{self, BeliefMode, GroundTruth, Population};

/// Raw on-disk schema. All fields optional; defaults reproduce the reference
/// experiment setup (K = 5, N = 10, unit risk aversion, single-peaked truth
/// with nu = 0.02 and sigma = 5, 20 sequences).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    k: Option<usize>,
    n: Option<usize>,
    risk_aversion: Option<f64>,
    risk_aversions: Option<Vec<f64>>,
    truth: Option<String>,
    nu: Option<f64>,
    theta_true: Option<Vec<f64>>,
    sigma: Option<f64>,
    belief_seed: Option<u64>,
    costs: Option<Vec<String>>,
    b_grid: Option<Vec<f64>>,
    dynamics: Option<String>,
    trades: Option<usize>,
    n_sequences: Option<usize>,
    sequence_seed_base: Option<u64>,
    sigma_windows: Option<Vec<[usize; 2]>>,
    snapshots: Option<Vec<usize>>,
    solver_tol: Option<f64>,
    delta: Option<f64>,
    out: Option<String>,
}

/// Validated experiment plan.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub k: usize,
    pub n: usize,
    pub risk_aversions: Vec<f64>,
    pub truth: TruthSpec,
    pub sigma: f64,
    pub belief_seed: u64,
    pub costs: Vec<CostKind>,
    pub b_grid: Vec<f64>,
    pub dynamics: DynamicsKind,
    pub trades: usize,
    pub n_sequences: usize,
    pub sequence_seed_base: u64,
    /// (t1, t2) windows for the empirical strong-convexity estimate.
    pub sigma_windows: Vec<(usize, usize)>,
    /// Trade counts at which the error decomposition is reported.
    pub snapshots: Vec<usize>,
    pub solver_tol: f64,
    /// Failure probability used for the sampling-error bound metadata.
    pub delta: f64,
    pub out: Option<String>,
    /// SHA-256 of the raw config text plus any seed override, for the
    /// reproducibility header.
    pub content_hash: String,
}

/// Ground-truth specification, the config-level superset of the belief modes.
#[derive(Debug, Clone)]
pub enum TruthSpec {
    Uniform,
    SinglePeaked { nu: f64 },
    Explicit { theta: Vec<f64> },
}

impl ExperimentConfig {
    /// Parses and validates a TOML config. `seed_override` replaces the
    /// belief seed when the CLI passes --seed.
    pub fn from_toml(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| Error::invalid_config("<toml>", e.to_string()))?;

        let k = raw.k.unwrap_or(5);
        if k < 2 {
            return Err(Error::invalid_config("k", "need at least two securities"));
        }
        let n = raw.n.unwrap_or(10);
        if n == 0 {
            return Err(Error::invalid_config("n", "need at least one trader"));
        }

        let risk_aversions = match (raw.risk_aversion, raw.risk_aversions) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid_config(
                    "risk_aversions",
                    "give either risk_aversion or risk_aversions, not both",
                ))
            }
            (Some(a), None) => vec![a; n],
            (None, Some(list)) => {
                if list.len() != n {
                    return Err(Error::invalid_config(
                        "risk_aversions",
                        format!("{} entries for n = {n}", list.len()),
                    ));
                }
                list
            }
            (None, None) => vec![1.0; n],
        };
        if risk_aversions.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid_config(
                "risk_aversions",
                "risk aversions must be positive",
            ));
        }

        let truth = match raw.truth.as_deref().unwrap_or("single_peaked") {
            "uniform" => TruthSpec::Uniform,
            "single_peaked" => {
                let nu = raw.nu.unwrap_or(0.02);
                if !(nu > 0.0) || nu * (k as f64 - 1.0) >= 1.0 {
                    return Err(Error::invalid_config(
                        "nu",
                        format!("single_peaked needs 0 < nu (k-1) < 1, got nu = {nu}"),
                    ));
                }
                TruthSpec::SinglePeaked { nu }
            }
            "explicit" => {
                let theta = raw.theta_true.ok_or_else(|| {
                    Error::invalid_config("theta_true", "required for truth = \"explicit\"")
                })?;
                if theta.len() != k {
                    return Err(Error::invalid_config(
                        "theta_true",
                        format!("{} entries for k = {k}", theta.len()),
                    ));
                }
                TruthSpec::Explicit { theta }
            }
            other => {
                return Err(Error::invalid_config(
                    "truth",
                    format!("unknown mode `{other}` (uniform | single_peaked | explicit)"),
                ))
            }
        };

        let sigma = raw.sigma.unwrap_or(match truth {
            TruthSpec::Uniform => 1.0,
            TruthSpec::SinglePeaked { .. } => 5.0,
            TruthSpec::Explicit { .. } => 1.0,
        });
        if sigma < 0.0 {
            return Err(Error::invalid_config("sigma", "must be nonnegative"));
        }

        let cost_names = raw
            .costs
            .unwrap_or_else(|| vec!["LMSR".into(), "IND".into()]);
        if cost_names.is_empty() {
            return Err(Error::invalid_config("costs", "need at least one cost"));
        }
        let mut costs = Vec::with_capacity(cost_names.len());
        for name in &cost_names {
            costs.push(CostKind::parse(name).ok_or_else(|| {
                Error::invalid_config("costs", format!("unknown cost `{name}` (LMSR | IND)"))
            })?);
        }

        let b_grid = raw.b_grid.unwrap_or_else(|| vec![0.05, 0.1, 0.2]);
        if b_grid.is_empty() {
            return Err(Error::invalid_config("b_grid", "must be nonempty"));
        }
        if b_grid.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::invalid_config("b_grid", "entries must be positive"));
        }

        let dynamics = raw
            .dynamics
            .as_deref()
            .map(|s| {
                DynamicsKind::parse(s).ok_or_else(|| {
                    Error::invalid_config("dynamics", format!("unknown `{s}` (ASD | SSD)"))
                })
            })
            .transpose()?
            .unwrap_or(DynamicsKind::Asd);

        let trades = raw.trades.unwrap_or(600);
        let n_sequences = raw.n_sequences.unwrap_or(20);
        if n_sequences == 0 {
            return Err(Error::invalid_config("n_sequences", "need at least one"));
        }

        let sigma_windows = raw
            .sigma_windows
            .map(|ws| ws.iter().map(|w| (w[0], w[1])).collect::<Vec<_>>())
            .unwrap_or_else(|| vec![(trades / 2, trades)]);
        for &(t1, t2) in &sigma_windows {
            if t1 >= t2 || t2 > trades {
                return Err(Error::invalid_config(
                    "sigma_windows",
                    format!("window ({t1}, {t2}) needs t1 < t2 <= trades = {trades}"),
                ));
            }
        }

        let snapshots = raw.snapshots.unwrap_or_else(|| vec![trades]);
        if snapshots.iter().any(|&t| t > trades) {
            return Err(Error::invalid_config(
                "snapshots",
                format!("snapshots must not exceed trades = {trades}"),
            ));
        }

        let solver_tol = raw.solver_tol.unwrap_or(crate::equilibrium::DEFAULT_TOL);
        if !(solver_tol > 0.0) {
            return Err(Error::invalid_config("solver_tol", "must be positive"));
        }
        let delta = raw.delta.unwrap_or(0.05);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid_config("delta", "must lie in (0, 1)"));
        }

        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        if let Some(seed) = seed_override {
            hasher.update(seed.to_le_bytes());
        }
        let content_hash = hex_string(&hasher.finalize());

        Ok(Self {
            k,
            n,
            risk_aversions,
            truth,
            sigma,
            belief_seed: seed_override.or(raw.belief_seed).unwrap_or(1),
            costs,
            b_grid,
            dynamics,
            trades,
            n_sequences,
            sequence_seed_base: raw.sequence_seed_base.unwrap_or(1000),
            sigma_windows,
            snapshots,
            solver_tol,
            delta,
            out: raw.out,
            content_hash,
        })
    }

    /// Materializes the ground truth for this config.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let gt = match &self.truth {
            TruthSpec::Uniform => market::ground_truth(BeliefMode::Uniform, self.k)?,
            TruthSpec::SinglePeaked { nu } => {
                market::ground_truth(BeliefMode::SinglePeaked { nu: *nu }, self.k)?
            }
            TruthSpec::Explicit { theta } => GroundTruth {
                theta_true: NaturalParam::from_slice(theta)?,
                sigma: self.sigma,
                mode: BeliefMode::Explicit,
            },
        };
        gt.with_sigma(self.sigma)
    }

    /// Samples the trader population for this config (beliefs from the
    /// ground truth, risk aversions from the config).
    pub fn population(&self) -> Result<Population> {
        let gt = self.ground_truth()?;
        let mut pop = market::sample_beliefs(&gt, self.n, self.belief_seed)?;
        pop.set_risk_aversions(&self.risk_aversions)?;
        Ok(pop)
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
