use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPLIT_COUNT: usize = 5;
pub const TRAIN_FRACTION: f64 = 0.8;

/// How training data is assembled around a target dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Organization {
    /// 80/20 splits within the target dataset.
    Canonical,
    /// Canonical splits with every other dataset added to training.
    Augmented,
    /// Train on every other dataset, test on all of the target.
    Transfer,
}

impl Organization {
    pub fn name(self) -> &'static str {
        match self {
            Organization::Canonical => "canonical",
            Organization::Augmented => "augmented",
            Organization::Transfer => "transfer",
        }
    }
}

impl fmt::Display for Organization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Organization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Organization::Canonical),
            "augmented" => Ok(Organization::Augmented),
            "transfer" => Ok(Organization::Transfer),
            other => Err(Error::Config(format!(
                "unknown organization {other:?}, expected canonical, augmented or transfer"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub organization: Organization,
    pub target: String,
    /// 1-based.
    pub split_index: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Five train/test plans for `target`. `datasets` maps dataset names to
/// their video ids.
pub fn make_splits(
    datasets: &BTreeMap<String, Vec<String>>,
    target: &str,
    organization: Organization,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    let target_ids = datasets
        .get(target)
        .filter(|ids| !ids.is_empty())
        .ok_or_else(|| Error::Config(format!("target dataset {target:?} has no videos")))?;
    let auxiliary: Vec<String> = datasets
        .iter()
        .filter(|(name, _)| name.as_str() != target)
        .flat_map(|(_, ids)| ids.iter().cloned())
        .collect();
    if organization != Organization::Canonical && auxiliary.is_empty() {
        return Err(Error::Config(format!(
            "{organization} organization needs at least two datasets"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(SPLIT_COUNT);
    for split_index in 1..=SPLIT_COUNT {
        let (train, test) = match organization {
            Organization::Transfer => (auxiliary.clone(), target_ids.clone()),
            Organization::Canonical | Organization::Augmented => {
                if target_ids.len() < 2 {
                    return Err(Error::Config(format!(
                        "dataset {target:?} needs at least two videos to split"
                    )));
                }
                let mut ids = target_ids.clone();
                ids.shuffle(&mut rng);
                let n_train = ((ids.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, ids.len() - 1);
                let test = ids.split_off(n_train);
                if organization == Organization::Augmented {
                    ids.extend(auxiliary.iter().cloned());
                }
                (ids, test)
            }
        };
        plans.push(SplitPlan {
            organization,
            target: target.to_string(),
            split_index,
            seed,
            train,
            test,
        });
    }
    Ok(plans)
}
