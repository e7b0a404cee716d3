//! Run configuration: one TOML file, overridable per key from the command line.

use std::path::{Path, PathBuf};

use dnnmpc_core::baseline::RuleConfig;
use dnnmpc_core::cycles::FamilyParams;
use dnnmpc_core::dnn::{LmConfig, SearchConfig};
use dnnmpc_core::dp::DpConfig;
use dnnmpc_core::nmpc::NmpcConfig;
use dnnmpc_core::sim::Prices;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Overrides `paths.output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "DNNMPC_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the cycle family, the dataset split and network initialization.
    pub seed: u64,
    pub soc_init: f64,
    /// Where the NMPC equivalence factor comes from.
    pub lambda_source: LambdaSource,
    pub paths: Paths,
    pub family: FamilyConfig,
    pub dp: DpConfig,
    pub nmpc: NmpcConfig,
    pub rule: RuleConfig,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub prices: Prices,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// `lambda_fit.json` written by `dp-lambda` into the output directory.
    #[default]
    Fit,
    /// The `[nmpc.lambda]` table as written.
    Config,
}

/// Relative paths resolve against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub model: PathBuf,
    /// Base cycle the family is synthesized from.
    pub route: PathBuf,
    /// Holds `trained/` and `untrained/` cycle CSVs.
    pub cycles_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            model: "data/reference_vehicle.toml".into(),
            route: "data/route.csv".into(),
            cycles_dir: "data/cycles".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub count: usize,
    /// The first `trained` variants are used for DP and data collection;
    /// the rest are held out.
    pub trained: usize,
    pub noise_scale: f64,
    pub scale_spread: f64,
    pub noise_corr: f64,
    pub taper_speed: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        let p = FamilyParams::default();
        Self {
            count: 12,
            trained: 10,
            noise_scale: p.noise_scale,
            scale_spread: p.scale_spread,
            noise_corr: p.noise_corr,
            taper_speed: p.taper_speed,
        }
    }
}

impl FamilyConfig {
    pub fn params(&self, seed: u64) -> FamilyParams {
        FamilyParams {
            count: self.count,
            seed,
            noise_scale: self.noise_scale,
            scale_spread: self.scale_spread,
            noise_corr: self.noise_corr,
            taper_speed: self.taper_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub target_count: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { target_count: 7500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub init_sizes: Vec<usize>,
    pub max_expansions: usize,
    pub restarts: usize,
    pub min_improvement: f64,
    pub lm: LmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        Self {
            init_sizes: s.init_sizes,
            max_expansions: s.max_expansions,
            restarts: s.restarts,
            min_improvement: s.min_improvement,
            lm: s.lm,
        }
    }
}

impl TrainConfig {
    pub fn search(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            init_sizes: self.init_sizes.clone(),
            max_expansions: self.max_expansions,
            restarts: self.restarts,
            min_improvement: self.min_improvement,
            seed,
            lm: self.lm.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repetitions: usize,
    /// Cycle file stem to benchmark on; the first trained cycle if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repetitions: 3,
            cycle: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            soc_init: 0.6,
            lambda_source: LambdaSource::Fit,
            paths: Paths::default(),
            family: FamilyConfig::default(),
            dp: DpConfig::default(),
            nmpc: NmpcConfig::default(),
            rule: RuleConfig::default(),
            collect: CollectConfig::default(),
            train: TrainConfig::default(),
            prices: Prices::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides and the output
    /// directory variable, resolves relative paths and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(
            &text,
            overrides,
            base,
            std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from),
        )
    }

    pub fn from_toml(
        text: &str,
        overrides: &[String],
        base: &Path,
        output_dir: Option<PathBuf>,
    ) -> Result<Self, Failure> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
        let p = &mut cfg.paths;
        for path in [&mut p.model, &mut p.route, &mut p.cycles_dir, &mut p.output_dir] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(dir) = output_dir {
            cfg.paths.output_dir = dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let invalid = |e: dnnmpc_core::Error| Failure::Usage(e.to_string());
        self.nmpc.validate().map_err(invalid)?;
        self.rule
            .validate(self.nmpc.soc_min, self.nmpc.soc_max)
            .map_err(invalid)?;
        self.train.lm.validate().map_err(invalid)?;
        self.dp.soc_grid().map_err(invalid)?;
        if !(self.nmpc.soc_min..=self.nmpc.soc_max).contains(&self.soc_init) {
            return Err(Failure::Usage(format!(
                "soc_init {} outside [{}, {}]",
                self.soc_init, self.nmpc.soc_min, self.nmpc.soc_max
            )));
        }
        if self.family.trained < 2 || self.family.trained > self.family.count {
            return Err(Failure::Usage(format!(
                "family.trained must lie in [2, family.count = {}], got {}",
                self.family.count, self.family.trained
            )));
        }
        if self.collect.target_count == 0 || self.bench.repetitions == 0 {
            return Err(Failure::Usage(
                "collect.target_count and bench.repetitions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sets `a.b.c` in `table` from `a.b.c=value`. The value is read as a TOML
/// literal when it parses as one and as a bare string otherwise.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Usage(format!("override key `{key}` is malformed")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = parts.split_last().expect("nonempty key");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
