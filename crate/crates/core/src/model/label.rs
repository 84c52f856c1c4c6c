use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Error};

/// Valence/arousal quadrant: Q1 = HV/HA, Q2 = LV/HA, Q3 = LV/LA, Q4 = HV/LA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn valence(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q4)
    }

    pub fn arousal(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q2)
    }

    pub fn from_bits(valence: bool, arousal: bool) -> Self {
        match (valence, arousal) {
            (true, true) => Quadrant::Q1,
            (false, true) => Quadrant::Q2,
            (false, false) => Quadrant::Q3,
            (true, false) => Quadrant::Q4,
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.index() + 1)
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Q1" => Ok(Quadrant::Q1),
            "Q2" => Ok(Quadrant::Q2),
            "Q3" => Ok(Quadrant::Q3),
            "Q4" => Ok(Quadrant::Q4),
            other => Err(validation_err!("unknown quadrant {other:?}")),
        }
    }
}

/// Training target: the quadrant and the two bits it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub quadrant: Quadrant,
}

impl EmotionLabel {
    pub fn new(quadrant: Quadrant) -> Self {
        Self { quadrant }
    }

    pub fn valence(&self) -> bool {
        self.quadrant.valence()
    }

    pub fn arousal(&self) -> bool {
        self.quadrant.arousal()
    }
}
