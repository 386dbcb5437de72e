//! Run configuration: one TOML tree, with command-line overrides applied to
//! its leaves before it is deserialized.

use std::path::{Path, PathBuf};

use bflva_core::calibration::CalibConfig;
use bflva_core::ensemble::{EnsembleConfig, Estimand};
use bflva_core::eval::{LodoConfig, Method, ScenarioKind, ScenarioParams};
use bflva_core::lcm::{GibbsConfig, LcmHyper};
use bflva_core::simulate::GeneratorSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub causes: Option<PathBuf>,
    pub symptoms: Option<PathBuf>,
    /// Fully labeled training domains (`train`, `lodo`).
    pub datasets: Vec<PathBuf>,
    pub target: Option<PathBuf>,
    /// Exported summaries, in registry order.
    pub summaries: Vec<PathBuf>,
    /// Directory scanned for `*.summary.json` when `summaries` is empty.
    pub summary_dir: Option<PathBuf>,
    pub posterior: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LodoSection {
    pub methods: Vec<Method>,
    pub scenario: ScenarioKind,
    pub scenario_params: ScenarioParams,
    pub seeds: Vec<u64>,
    pub record_runtime: bool,
}

impl Default for LodoSection {
    fn default() -> Self {
        let d = LodoConfig::default();
        Self {
            methods: d.methods,
            scenario: d.scenario,
            scenario_params: d.scenario_params,
            seeds: d.seeds,
            record_runtime: d.record_runtime,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub lcm: LcmHyper,
    pub gibbs: GibbsConfig,
    pub ensemble: EnsembleConfig,
    pub estimand: Estimand,
    pub calibration: CalibConfig,
    pub lodo: LodoSection,
    pub simulate: Option<GeneratorSpec>,
}

fn parse_leaf(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Set `a.b.c = value` in `table`, creating intermediate tables.
fn set_leaf(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Load `path` (or start empty), apply `key=value` overrides, then resolve
    /// relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("reading config {}: {e}", p.display())))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::validation(format!("parsing config {}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("override {o:?} is not key=value")))?;
            set_leaf(&mut table, k.trim(), parse_leaf(v.trim()))?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::validation(format!("invalid config: {e}")))?;
        cfg.resolve(&base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.causes,
            &mut paths.symptoms,
            &mut paths.target,
            &mut paths.summary_dir,
            &mut paths.posterior,
            &mut paths.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        paths.datasets.iter_mut().for_each(fix);
        paths.summaries.iter_mut().for_each(fix);
    }

    /// One seed for every random component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.gibbs.seed = seed;
        self.ensemble.seed = seed;
        self.calibration.seed = seed;
        self.lodo.seeds = vec![seed];
        if let Some(sim) = self.simulate.as_mut() {
            sim.seed = seed;
        }
    }

    pub fn lodo_config(&self) -> LodoConfig {
        LodoConfig {
            methods: self.lodo.methods.clone(),
            scenario: self.lodo.scenario,
            scenario_params: self.lodo.scenario_params.clone(),
            seeds: self.lodo.seeds.clone(),
            lcm_hyper: self.lcm.clone(),
            lcm_gibbs: self.gibbs.clone(),
            ensemble: self.ensemble.clone(),
            calibration: self.calibration.clone(),
            record_runtime: self.lodo.record_runtime,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_leaves() {
        let cfg = RunConfig::load(
            None,
            &[
                "ensemble.chains=2".into(),
                "ensemble.lambda_prior.kind=logistic_normal".into(),
                "ensemble.lambda_prior.sigma=1.5".into(),
                "lodo.methods=[\"bfl-plain\", \"gbql-50\"]".into(),
                "paths.target=t.csv".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.ensemble.chains, 2);
        assert_eq!(
            cfg.ensemble.lambda_prior,
            bflva_core::ensemble::LambdaPrior::LogisticNormal { sigma: 1.5 }
        );
        assert_eq!(cfg.lodo.methods.len(), 2);
        assert_eq!(cfg.paths.target, Some(PathBuf::from("t.csv")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["lodo.methods=[\"nope\"]".into()]).is_err());
        assert!(RunConfig::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ncauses = \"c.txt\"\ndatasets = [\"a.csv\"]\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.paths.causes.unwrap(), dir.path().join("c.txt"));
        assert_eq!(cfg.paths.datasets[0], dir.path().join("a.csv"));
    }
}
