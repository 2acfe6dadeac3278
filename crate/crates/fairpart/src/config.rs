//! Run configuration: one JSON file per run, with dotted-path overrides from
//! flags and from `FAIRPART_`-prefixed environment variables.
//!
//! Override resolution order: file < environment < `--set` flags. Environment
//! variables spell the dotted path with `__` between segments, e.g.
//! `FAIRPART_SOLVER__ITERATIONS=5000` sets `solver.iterations`.

use crate::costmodel::{load_cost_matrix, load_facilities, CostKind, CostModel};
use crate::error::{Error, Result};
use crate::population::{
    load_population, Bounds, GaussianComponent, GroupDensity, GroupMixture, Population,
};
use crate::solver::{Averaging, SolverConfig, SolverMode};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_PREFIX: &str = "FAIRPART_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureGroupSpec {
    pub prior: f64,
    pub components: Vec<GaussianComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub bounds: Bounds,
    pub groups: Vec<MixtureGroupSpec>,
}

/// Exactly one of `csv` / `mixture`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kind: CostKind,
    /// Matrix kind only: path to the cost table CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
}

fn default_iterations() -> u64 {
    100_000
}

fn default_eval_samples() -> usize {
    100_000
}

fn default_checkpoint_samples() -> usize {
    5_000
}

fn default_averaging() -> Averaging {
    Averaging::Full
}

fn default_mode() -> SolverMode {
    SolverMode::OptimalP
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_mode")]
    pub mode: SolverMode,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    /// Stepsize scale; omitted means half the median pairwise facility cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_checkpoint_samples")]
    pub checkpoint_samples: usize,
    #[serde(default = "default_averaging")]
    pub averaging: Averaging,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            mode: default_mode(),
            iterations: default_iterations(),
            alpha: None,
            eval_samples: default_eval_samples(),
            checkpoint_samples: default_checkpoint_samples(),
            averaging: default_averaging(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationSpec,
    pub facilities: PathBuf,
    pub cost: CostSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub output_dir: PathBuf,
    /// Master seed; every module derives its own sub-seed from it.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.population.csv, &self.population.mixture) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "population: give exactly one of `csv` and `mixture`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "population: give exactly one of `csv` and `mixture`".into(),
                ))
            }
            _ => {}
        }
        match self.cost.kind {
            CostKind::Matrix => {
                if self.cost.matrix.is_none() {
                    return Err(Error::Config(
                        "cost.matrix path is required for the matrix kind".into(),
                    ));
                }
                if self.population.csv.is_none() {
                    return Err(Error::Config(
                        "cost.kind = matrix requires a CSV population".into(),
                    ));
                }
            }
            _ => {
                if self.cost.matrix.is_some() {
                    return Err(Error::Config(
                        "cost.matrix is only valid with cost.kind = matrix".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn build_population(&self) -> Result<Population> {
        if let Some(path) = &self.population.csv {
            return Ok(Population::Discrete(load_population(path)?));
        }
        let spec = self.population.mixture.as_ref().expect("validated");
        let priors = spec.groups.iter().map(|g| g.prior).collect();
        let densities = spec
            .groups
            .iter()
            .map(|g| GroupDensity {
                components: g.components.clone(),
            })
            .collect();
        Ok(Population::Mixture(GroupMixture::new(
            priors,
            densities,
            spec.bounds,
        )?))
    }

    pub fn build_cost_model(&self) -> Result<CostModel> {
        let facilities = load_facilities(&self.facilities)?;
        for (j, k) in facilities.coincident_pairs() {
            eprintln!(
                "warning: facilities {} and {} are coincident; ties resolve to the lower index",
                j + 1,
                k + 1
            );
        }
        match self.cost.kind {
            CostKind::Euclidean => Ok(CostModel::euclidean(facilities)),
            CostKind::SquaredEuclidean => Ok(CostModel::squared_euclidean(facilities)),
            CostKind::Matrix => {
                load_cost_matrix(self.cost.matrix.as_ref().expect("validated"), facilities)
            }
        }
    }

    pub fn build_solver_config(&self) -> SolverConfig {
        SolverConfig {
            mode: self.solver.mode.clone(),
            iterations: self.solver.iterations,
            step_scale: self.solver.alpha,
            seed: self.seed,
            eval_samples: self.solver.eval_samples,
            checkpoint_samples: self.solver.checkpoint_samples,
            averaging: self.solver.averaging,
        }
    }
}

/// Set a dotted-path leaf inside a JSON tree, creating objects along the way.
/// The value string is parsed as JSON when possible and kept as a plain
/// string otherwise, so `--set solver.iterations=5000` and
/// `--set population.csv=pop.csv` both do the expected thing.
pub fn set_path(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Config("override path must not be empty".into()));
    }
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!(
                "override path `{path}`: `{part}` is not an object"
            )));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!(
            "override path `{path}` does not address an object field"
        ))),
    }
}

fn env_overrides() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let path = rest.to_lowercase().replace("__", ".");
            Some((path, v))
        })
        .collect();
    out.sort();
    out
}

/// Load a run config: JSON file, then environment overrides, then `--set`
/// flag overrides, each a dotted path to a leaf.
pub fn load_config(path: &Path, sets: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut tree: serde_json::Value = serde_json::from_str(&text)?;
    if !tree.is_object() {
        return Err(Error::Config("config root must be a JSON object".into()));
    }
    for (p, v) in env_overrides() {
        set_path(&mut tree, &p, &v)?;
    }
    for (p, v) in sets {
        set_path(&mut tree, p, v)?;
    }
    let config: RunConfig =
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// The on-disk weights artifact; bit-exact round trip through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub k: usize,
    pub m: usize,
    pub q: Vec<f64>,
    pub mode: SolverMode,
    /// Row-major K x M.
    pub w: Vec<f64>,
    pub seed: u64,
    pub iterations: u64,
    pub alpha: f64,
}

impl WeightsFile {
    pub fn to_weight_matrix(&self) -> Result<crate::solver::WeightMatrix> {
        crate::solver::WeightMatrix::from_flat(self.k, self.m, self.w.clone(), &self.q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightsFile> {
        let text = std::fs::read_to_string(path)?;
        let wf: WeightsFile = serde_json::from_str(&text)?;
        if wf.w.len() != wf.k * wf.m || wf.q.len() != wf.m {
            return Err(Error::DimensionMismatch(format!(
                "weights file {}: shape fields disagree with w length",
                path.display()
            )));
        }
        Ok(wf)
    }
}
