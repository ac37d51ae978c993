use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Client/server feature layouts of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "1-centralized")]
    OneCentralized,
    #[serde(rename = "1-distributed")]
    OneDistributed,
    #[serde(rename = "2-centralized")]
    TwoCentralized,
    #[serde(rename = "2-distributed")]
    TwoDistributed,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::OneCentralized,
        Setting::OneDistributed,
        Setting::TwoCentralized,
        Setting::TwoDistributed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::OneCentralized => "1-centralized",
            Setting::OneDistributed => "1-distributed",
            Setting::TwoCentralized => "2-centralized",
            Setting::TwoDistributed => "2-distributed",
        }
    }

    pub fn is_distributed(self) -> bool {
        matches!(self, Setting::OneDistributed | Setting::TwoDistributed)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DataError::Config(format!("unknown setting {s:?}")))
    }
}

/// Which columns each client observes and which the server trains on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAssignment {
    pub clients: Vec<Vec<String>>,
    pub server: Vec<String>,
}

fn names(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| (*c).to_owned()).collect()
}

pub fn assign_features(setting: Setting) -> FeatureAssignment {
    let clients: Vec<Vec<&str>> = match setting {
        Setting::OneCentralized => vec![vec!["Tdew", "rh", "sh"]],
        Setting::OneDistributed => vec![vec!["Tdew"], vec!["rh"], vec!["sh"]],
        Setting::TwoCentralized => vec![vec!["Tdew", "Tpot", "rh", "p", "sh"]],
        Setting::TwoDistributed => vec![vec!["Tdew", "Tpot"], vec!["rh", "p"], vec!["sh"]],
    };
    let server = clients.iter().flatten().copied().collect::<Vec<_>>();
    FeatureAssignment {
        clients: clients.iter().map(|c| names(c)).collect(),
        server: names(&server),
    }
}

impl FeatureAssignment {
    /// True when no column is observed by two clients.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.clients.iter().flatten().all(|c| seen.insert(c))
    }
}
