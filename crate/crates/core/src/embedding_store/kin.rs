use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Relationship category of a kin pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KinType {
    /// mother-daughter
    MD,
    /// mother-son
    MS,
    /// mixed-sex siblings
    SIBS,
    /// sister-sister
    SS,
    /// brother-brother
    BB,
    /// father-daughter
    FD,
    /// father-son
    FS,
    GFGD,
    GFGS,
    GMGD,
    GMGS,
}

impl KinType {
    pub const ALL: [KinType; 11] = [
        KinType::MD,
        KinType::MS,
        KinType::SIBS,
        KinType::SS,
        KinType::BB,
        KinType::FD,
        KinType::FS,
        KinType::GFGD,
        KinType::GFGS,
        KinType::GMGD,
        KinType::GMGS,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KinType::MD => "MD",
            KinType::MS => "MS",
            KinType::SIBS => "SIBS",
            KinType::SS => "SS",
            KinType::BB => "BB",
            KinType::FD => "FD",
            KinType::FS => "FS",
            KinType::GFGD => "GFGD",
            KinType::GFGS => "GFGS",
            KinType::GMGD => "GMGD",
            KinType::GMGS => "GMGS",
        }
    }
}

impl fmt::Display for KinType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KinType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KinType::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKinType(s.to_string()))
    }
}

impl TryFrom<String> for KinType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<KinType> for String {
    fn from(k: KinType) -> Self {
        k.as_str().to_string()
    }
}
