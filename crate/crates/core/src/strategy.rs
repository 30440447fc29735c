//! Named maintenance strategies: overrides of the policy periods.

use serde::{Deserialize, Deserializer, Serialize};

use crate::model::{FmtModel, MaintenancePolicy};
use crate::parser::parse_duration;

fn duration<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Days(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Days(v)) => Ok(Some(v)),
        Some(Raw::Text(s)) => parse_duration(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// A strategy sets some of the cleaning, overhaul and inspection periods
/// (in days); unset periods keep the model's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    #[serde(default, deserialize_with = "duration")]
    pub trep: Option<f64>,
    #[serde(default, deserialize_with = "duration")]
    pub toh: Option<f64>,
    #[serde(default, deserialize_with = "duration")]
    pub tinsp: Option<f64>,
}

/// Top-level layout of a strategy file: a list of `[[strategy]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySet {
    pub strategy: Vec<Strategy>,
}

impl Strategy {
    pub fn policy(&self, base: &MaintenancePolicy) -> MaintenancePolicy {
        MaintenancePolicy {
            t_rep: self.trep.unwrap_or(base.t_rep),
            t_oh: self.toh.unwrap_or(base.t_oh),
            t_insp: self.tinsp.unwrap_or(base.t_insp),
            ..base.clone()
        }
    }

    pub fn apply(&self, model: &FmtModel) -> FmtModel {
        let mut m = model.clone();
        m.policy = self.policy(&model.policy);
        m
    }
}
