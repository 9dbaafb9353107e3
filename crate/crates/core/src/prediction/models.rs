//! The downstream prediction models compared in the studies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::glm::{fit_logistic, Design, GlmModel};
use crate::error::{Error, Result};
use crate::model::IndividualRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Risk and observability covariates, observed outcome.
    Naive,
    /// Risk covariates only, observed outcome.
    Blind,
    /// Risk and observability covariates, imputed counterfactual outcome.
    Imputed,
    /// Risk and observability covariates, trained on a cohort generated under
    /// the reference testing regime.
    Ideal,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Naive,
        ModelKind::Blind,
        ModelKind::Imputed,
        ModelKind::Ideal,
    ];

    pub fn uses_attributes(self) -> bool {
        self != ModelKind::Blind
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Naive => "naive",
            ModelKind::Blind => "blind",
            ModelKind::Imputed => "imputed",
            ModelKind::Ideal => "ideal",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// Accepts the model names, plus `perfect` as another name for `ideal`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "perfect" {
            return Ok(ModelKind::Ideal);
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model '{s}'; expected naive, blind, imputed or ideal"
                ))
            })
    }
}

/// Predictor matrix `(x..., a...)`, or `x` alone when `with_attributes` is false.
pub fn design_matrix(records: &[IndividualRecord], with_attributes: bool) -> Result<Design> {
    let first = records.first().ok_or(Error::Empty("cohort"))?;
    let mut names: Vec<String> = (1..=first.x.len()).map(|j| format!("x{j}")).collect();
    if with_attributes {
        names.extend((1..=first.a.len()).map(|j| format!("a{j}")));
    }
    Design::new(
        names,
        records.iter().map(|r| {
            let mut row = r.x.clone();
            if with_attributes {
                row.extend_from_slice(&r.a);
            }
            row
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub glm: GlmModel,
}

impl TrainedModel {
    pub fn train(kind: ModelKind, records: &[IndividualRecord], outcome: &[bool]) -> Result<Self> {
        let design = design_matrix(records, kind.uses_attributes())?;
        Ok(Self {
            kind,
            glm: fit_logistic(&design, outcome, None)?,
        })
    }

    pub fn predict(&self, records: &[IndividualRecord]) -> Result<Vec<f64>> {
        let design = design_matrix(records, self.kind.uses_attributes())?;
        if design.n_predictors() != self.glm.names.len() {
            return Err(Error::DimensionMismatch {
                what: "predictors",
                expected: self.glm.names.len(),
                found: design.n_predictors(),
            });
        }
        Ok(self.glm.predict(&design))
    }
}
