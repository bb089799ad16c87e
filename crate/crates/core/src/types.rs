use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Width of the pre-projection image features.
pub const FEATURE_DIM: usize = 768;
/// Width of the joint image/text embedding space.
pub const EMBED_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Malicious,
    Benign,
}

impl ClassLabel {
    /// Fixed class order. Ties in prediction resolve to the earlier class.
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Malicious, ClassLabel::Benign];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Malicious => 0,
            ClassLabel::Benign => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Malicious => "malicious",
            ClassLabel::Benign => "benign",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "malicious" => Ok(ClassLabel::Malicious),
            "benign" => Ok(ClassLabel::Benign),
            other => Err(format!(
                "unknown label {other:?} (allowed: malicious, benign)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?} (allowed: train, val, test)"
            )),
        }
    }
}
