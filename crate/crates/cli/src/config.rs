//! Run configuration read from a TOML file. Every table rejects unknown keys.
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cfhmm::counterfactual::{ImputationOptions, ReferenceRegime};
use cfhmm::inference::{FitOptions, ImpossibleRecords, ModelSpec};
use cfhmm::pipeline::StudyConfig;
use cfhmm::prediction::{EvaluationOptions, ModelKind, Stratum};
use cfhmm::simulation::ScenarioConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads; absent or 0 uses every core.
    pub threads: Option<usize>,
    pub scenario: ScenarioSection,
    pub simulate: SimulateSection,
    pub study: StudySection,
    pub fit: FitOptions,
    /// Structure of the fitted model; inferred from the data when absent.
    pub model: Option<ModelSpec>,
    /// Starting values for the fit, as written by `fit`.
    pub init: Option<PathBuf>,
    /// Reference testing regime as attribute name to level, e.g. `a1 = 0`.
    /// Unlisted attributes keep each individual's own value. Absent means
    /// every attribute at 0.
    pub reference: Option<BTreeMap<String, f64>>,
    pub models: Vec<ModelKind>,
    /// Stratum labels such as `overall` or `a1=1`; absent means overall plus
    /// both levels of every attribute.
    pub strata: Option<Vec<String>>,
    pub imputation: ImputationOptions,
    pub evaluation: EvaluationOptions,
    /// Training cohort for `fit`, `impute` and `evaluate`.
    pub data: Option<CohortFiles>,
    /// Cohort evaluated by `evaluate`, scored against its observed diagnoses.
    pub validation: Option<CohortFiles>,
    /// Cohort observed under the reference regime, for the ideal model.
    pub ideal: Option<CohortFiles>,
    /// Fitted parameters; defaults to `theta.json` in the output directory.
    pub theta: Option<PathBuf>,
    /// Imputed outcomes; defaults to `imputed.csv` in the output directory.
    pub imputed: Option<PathBuf>,
    pub bootstrap: BootstrapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            threads: None,
            scenario: ScenarioSection::default(),
            simulate: SimulateSection::default(),
            study: StudySection::default(),
            fit: FitOptions::default(),
            model: None,
            init: None,
            reference: None,
            models: ModelKind::ALL.to_vec(),
            strata: None,
            imputation: ImputationOptions::default(),
            evaluation: EvaluationOptions::default(),
            data: None,
            validation: None,
            ideal: None,
            theta: None,
            imputed: None,
            bootstrap: BootstrapSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Simulation scenario 1..=4.
    pub id: u8,
    pub n: usize,
    /// Seven-attribute logistic-emission design instead of a numbered scenario.
    pub multi_attribute: bool,
    pub sensitivity_early: Option<f64>,
    pub sensitivity_late: Option<f64>,
    /// Open cohorts only: apply the reference regime from the new baseline
    /// (true) or over the whole run (false) in counterfactual worlds.
    pub counterfactual_from_baseline: Option<bool>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            id: 1,
            n: 20_000,
            multi_attribute: false,
            sensitivity_early: None,
            sensitivity_late: None,
            counterfactual_from_baseline: None,
        }
    }
}

impl ScenarioSection {
    pub fn resolve(&self) -> CliResult<ScenarioConfig> {
        let mut cfg = if self.multi_attribute {
            ScenarioConfig::multi_attribute(self.n)
        } else {
            ScenarioConfig::scenario(self.id, self.n)?
        };
        if let Some(s) = self.sensitivity_early {
            cfg.sensitivity_early = s;
        }
        if let Some(s) = self.sensitivity_late {
            cfg.sensitivity_late = s;
        }
        if let Some(b) = self.counterfactual_from_baseline {
            cfg.counterfactual_from_baseline = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Also write the same individuals' cohort under the reference regime.
    pub counterfactual: bool,
    /// Write latent stage paths and per-individual truth flags.
    pub truth: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            counterfactual: false,
            truth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub replications: usize,
    pub validation_n: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            replications: 1,
            validation_n: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Bootstrap resamples for optimism correction in `evaluate`; 0 skips it.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFiles {
    pub baseline: PathBuf,
    pub panel: PathBuf,
    /// Follow-up length; the largest panel timepoint when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl RunConfig {
    /// Reads and validates `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}: {}", path.display(), e.to_string().trim()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for files in [&mut self.data, &mut self.validation, &mut self.ideal]
            .into_iter()
            .flatten()
        {
            fix(&mut files.baseline);
            fix(&mut files.panel);
        }
        for p in [&mut self.init, &mut self.theta, &mut self.imputed]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Checks that do not depend on the command.
    pub fn validate(&self) -> CliResult<()> {
        if self.models.is_empty() {
            return Err(CliError::Config(
                "models must name at least one model".into(),
            ));
        }
        let mut seen = self.models.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!(
                "duplicate model names in {:?}",
                self.models
            )));
        }
        if self.evaluation.bins == 0 {
            return Err(CliError::Config(
                "evaluation.bins must be at least 1".into(),
            ));
        }
        if let Some(t) = self
            .evaluation
            .thresholds
            .iter()
            .find(|t| !(**t > 0.0 && **t < 1.0))
        {
            return Err(CliError::Config(format!("threshold {t} outside (0, 1)")));
        }
        self.strata(0)?;
        Ok(())
    }

    pub fn theta_path(&self) -> PathBuf {
        self.theta
            .clone()
            .unwrap_or_else(|| self.out.join("theta.json"))
    }

    pub fn imputed_path(&self) -> PathBuf {
        self.imputed
            .clone()
            .unwrap_or_else(|| self.out.join("imputed.csv"))
    }

    pub fn strata(&self, n_attributes: usize) -> CliResult<Vec<Stratum>> {
        match &self.strata {
            None => Ok(Stratum::standard(n_attributes)),
            Some(labels) => Ok(labels.iter().map(|l| l.parse()).collect::<Result<_, _>>()?),
        }
    }

    /// Reference regime over `n_attributes` attributes named `a1..`.
    pub fn reference_regime(&self, n_attributes: usize) -> CliResult<ReferenceRegime> {
        let Some(map) = &self.reference else {
            return Ok(ReferenceRegime::fixed(vec![0.0; n_attributes]));
        };
        let mut attributes = vec![None; n_attributes];
        for (name, level) in map {
            let j = name
                .strip_prefix('a')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|j| (1..=n_attributes).contains(j))
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "reference key '{name}' is not one of a1..a{n_attributes}"
                    ))
                })?;
            attributes[j - 1] = Some(*level);
        }
        Ok(ReferenceRegime { attributes })
    }

    /// Replication-study settings.
    pub fn study(&self) -> CliResult<StudyConfig> {
        let scenario = self.scenario.resolve()?;
        let n_a = scenario.n_attributes();
        let mut study = StudyConfig::new(scenario, self.study.replications, self.seed);
        study.validation_n = self.study.validation_n;
        // imperfect tests always leave impossible histories out of the fit
        let policy = study.fit.impossible_records;
        study.fit = self.fit.clone();
        if policy == ImpossibleRecords::Exclude {
            study.fit.impossible_records = policy;
        }
        study.model = self.model.clone();
        study.models = self.models.clone();
        study.strata = Some(self.strata(n_a)?);
        if let Some(map) = &self.reference {
            let regime = self.reference_regime(n_a)?;
            study.scenario.reference = regime
                .attributes
                .iter()
                .map(|a| {
                    a.ok_or_else(|| {
                        CliError::Config(format!(
                    "a replication study needs a level for every attribute; reference has {}",
                    map.len()
                ))
                    })
                })
                .collect::<CliResult<_>>()?;
        }
        study.imputation = self.imputation.clone();
        study.evaluation = self.evaluation.clone();
        study.validate()?;
        Ok(study)
    }
}
