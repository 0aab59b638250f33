//! Run configuration: a TOML file with a schema version, or the built-in
//! pond defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::grid::{AugmentedGrid, POND_LEVELS};
use crate::model::{pond_v1_distribution, DisturbanceDistribution, PondParams, SurfaceFunction, SystemModel};
use crate::monte_carlo::{McRunConfig, BOOTSTRAP_RESAMPLES, J0_SIGMA, W0_SIGMA};
use crate::validation::RISK_LEVELS;
use crate::value_iteration::StageCostSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const POND_PRESET: &str = "pond-v1";

/// Sample count cap under `--quick`.
pub const QUICK_SAMPLES: usize = 10_000;
/// Every `QUICK_STRIDE`-th state is kept under `--quick`.
pub const QUICK_STRIDE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    pub grid: GridSection,
    pub cost: CostSection,
    pub mc: McSection,
    pub sets: SetsSection,
    /// Used when neither `--out` nor `CVAR_REACH_OUT` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Exactly one of `preset` and `params` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub params: Option<PondParams>,
    /// Overrides the preset runoff table.
    #[serde(default)]
    pub disturbance: Option<DisturbanceSection>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

/// States as either an explicit list or `state_range`, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub states: Option<Vec<f64>>,
    #[serde(default)]
    pub state_range: Option<StateRange>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub beta: f64,
    pub m: f64,
    pub surface: SurfaceFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    pub sigma_w0: f64,
    pub sigma_j0: f64,
    pub seed: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    pub policy: PolicySource,
}

fn default_bootstrap() -> usize {
    BOOTSTRAP_RESAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    Fixed { control: f64 },
    /// Greedy tables written by `solve`.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetsSection {
    pub alphas: Vec<f64>,
    pub risks: Vec<f64>,
}

impl RunConfig {
    pub fn pond_v1() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelSection {
                preset: Some(POND_PRESET.into()),
                params: None,
                disturbance: None,
                horizon: 48,
            },
            grid: GridSection {
                states: None,
                state_range: Some(StateRange {
                    min: 0.0,
                    max: 6.5,
                    step: 0.1,
                }),
                levels: POND_LEVELS.to_vec(),
            },
            cost: CostSection {
                beta: 1e-3,
                m: 10.0,
                surface: SurfaceFunction::LinearOffset { c_max: 5.0 },
            },
            mc: McSection {
                samples: 100_000,
                sigma_w0: W0_SIGMA,
                sigma_j0: J0_SIGMA,
                seed: 1,
                bootstrap_resamples: BOOTSTRAP_RESAMPLES,
                policy: PolicySource::Fixed { control: 1.0 },
            },
            sets: SetsSection {
                alphas: POND_LEVELS.to_vec(),
                risks: RISK_LEVELS.to_vec(),
            },
            output_dir: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fewer samples and every fifth state, last state always kept.
    pub fn quick(mut self) -> Result<Self, CliError> {
        let states = resolve_states(&self.grid)?;
        let last = states.len() - 1;
        let coarse = states
            .iter()
            .enumerate()
            .filter(|(i, _)| i % QUICK_STRIDE == 0 || *i == last)
            .map(|(_, &x)| x)
            .collect();
        self.grid.states = Some(coarse);
        self.grid.state_range = None;
        self.mc.samples = self.mc.samples.min(QUICK_SAMPLES);
        Ok(self)
    }

    /// Hash of the sections `solve` depends on.
    pub fn solve_hash(&self) -> String {
        hash_json(&(self.schema_version, &self.model, &self.grid, &self.cost))
    }

    /// Hash of the sections `mc` depends on.
    pub fn mc_hash(&self) -> String {
        hash_json(&(self.solve_hash(), &self.mc, &self.sets.alphas))
    }

    pub fn sets_hash(&self) -> String {
        hash_json(&(self.mc_hash(), &self.sets))
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn resolve_states(grid: &GridSection) -> Result<Vec<f64>, CliError> {
    match (&grid.states, &grid.state_range) {
        (Some(s), None) => Ok(s.clone()),
        (None, Some(r)) => {
            AugmentedGrid::uniform_states(r.min, r.max, r.step).map_err(|e| CliError::config(format!("grid: {e}")))
        }
        _ => Err(CliError::config("grid: give exactly one of `states` and `state_range`")),
    }
}

fn bad(section: &'static str) -> impl Fn(crate::Error) -> CliError {
    move |e| CliError::config(format!("{section}: {e}"))
}

/// Module-level objects built from a config. Construction performs every
/// check that can fail, so no computation starts on a bad config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: SystemModel,
    pub grid: AugmentedGrid,
    pub spec: StageCostSpec,
    pub w0_mc: McRunConfig,
    pub j0_mc: McRunConfig,
    pub policy: PolicySource,
    pub alphas: Vec<f64>,
    pub risks: Vec<f64>,
}

impl Resolved {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let m = &cfg.model;
        let params = match (&m.preset, &m.params) {
            (Some(p), None) if p == POND_PRESET => PondParams::pond_v1(),
            (Some(p), None) => return Err(CliError::config(format!("model.preset: unknown preset {p:?}"))),
            (None, Some(p)) => *p,
            _ => return Err(CliError::config("model: give exactly one of `preset` and `params`")),
        };
        let disturbance = match &m.disturbance {
            Some(d) => DisturbanceDistribution::new(d.values.clone(), d.probs.clone())
                .map_err(bad("model.disturbance"))?,
            None => pond_v1_distribution(),
        };
        let model = SystemModel::pond(PondParams { horizon: params.horizon.max(1), ..params }, disturbance)
            .map_err(bad("model.params"))?
            .with_horizon(m.horizon);

        let grid = AugmentedGrid::new(resolve_states(&cfg.grid)?, cfg.grid.levels.clone()).map_err(bad("grid"))?;
        let spec = StageCostSpec::new(cfg.cost.beta, cfg.cost.m, cfg.cost.surface).map_err(bad("cost"))?;

        let mc = &cfg.mc;
        let base = McRunConfig {
            samples: mc.samples,
            jitter_sigma: mc.sigma_w0,
            seed: mc.seed,
            horizon: m.horizon,
            bootstrap_resamples: mc.bootstrap_resamples,
        };
        base.validate().map_err(bad("mc"))?;
        let j0_mc = base.with_sigma(mc.sigma_j0);
        j0_mc.validate().map_err(bad("mc"))?;
        if let PolicySource::Fixed { control } = mc.policy {
            if !model.controls().contains(&control) {
                return Err(CliError::config(format!(
                    "mc.policy: control {control} is not one of {:?}",
                    model.controls()
                )));
            }
        }
        for &a in &cfg.sets.alphas {
            if grid.level_index(a).is_none() {
                return Err(CliError::config(format!("sets.alphas: {a} is not a grid level")));
            }
        }
        if let Some(r) = cfg.sets.risks.iter().find(|r| !r.is_finite()) {
            return Err(CliError::config(format!("sets.risks: {r} is not finite")));
        }
        Ok(Self {
            model,
            grid,
            spec,
            w0_mc: base,
            j0_mc,
            policy: mc.policy,
            alphas: cfg.sets.alphas.clone(),
            risks: cfg.sets.risks.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::pond_v1();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let r = Resolved::new(&cfg).unwrap();
        assert_eq!(r.grid.len(), 594);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let text = RunConfig::pond_v1().to_toml().replace("[cost]", "[cost]\nbeat = 2.0");
        let e = RunConfig::parse(&text).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("beat"), "{}", e.message);
    }

    #[test]
    fn missing_key_is_rejected() {
        let text = RunConfig::pond_v1().to_toml().replace("seed = 1\n", "");
        let e = RunConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("seed"), "{}", e.message);
    }

    #[test]
    fn bad_values_fail_resolution() {
        let mut cfg = RunConfig::pond_v1();
        cfg.sets.alphas.push(0.3);
        assert_eq!(Resolved::new(&cfg).unwrap_err().code, 2);
        let mut cfg = RunConfig::pond_v1();
        cfg.grid.states = Some(vec![0.0, 1.0]);
        assert_eq!(Resolved::new(&cfg).unwrap_err().code, 2);
        let mut cfg = RunConfig::pond_v1();
        cfg.cost.beta = 0.0;
        assert_eq!(Resolved::new(&cfg).unwrap_err().code, 2);
    }

    #[test]
    fn quick_keeps_both_ends() {
        let cfg = RunConfig::pond_v1().quick().unwrap();
        let s = cfg.grid.states.as_ref().unwrap();
        assert_eq!(s.first(), Some(&0.0));
        assert_eq!(s.last(), Some(&6.5));
        assert_eq!(s.len(), 14);
        assert_eq!(cfg.mc.samples, QUICK_SAMPLES);
    }

    #[test]
    fn hashes_track_their_sections() {
        let a = RunConfig::pond_v1();
        let mut b = a.clone();
        b.mc.seed = 2;
        assert_eq!(a.solve_hash(), b.solve_hash());
        assert_ne!(a.mc_hash(), b.mc_hash());
        let mut c = a.clone();
        c.sets.risks.push(1.0);
        assert_eq!(a.mc_hash(), c.mc_hash());
        assert_ne!(a.sets_hash(), c.sets_hash());
    }
}
