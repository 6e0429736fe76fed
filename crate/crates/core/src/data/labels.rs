use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Claim veracity. Declaration order is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Veracity {
    N,
    T,
    F,
    U,
}

/// Post stance toward the claim. Declaration order is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stance {
    S,
    D,
    Q,
    C,
}

impl Veracity {
    pub const ALL: [Veracity; 4] = [Veracity::N, Veracity::T, Veracity::F, Veracity::U];
    /// Label set of corpora without a non-rumor class.
    pub const RUMOR_ONLY: [Veracity; 3] = [Veracity::T, Veracity::F, Veracity::U];

    pub fn as_str(self) -> &'static str {
        match self {
            Veracity::N => "N",
            Veracity::T => "T",
            Veracity::F => "F",
            Veracity::U => "U",
        }
    }
}

impl Stance {
    pub const ALL: [Stance; 4] = [Stance::S, Stance::D, Stance::Q, Stance::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::S => "S",
            Stance::D => "D",
            Stance::Q => "Q",
            Stance::C => "C",
        }
    }
}

impl fmt::Display for Veracity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Veracity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Veracity::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown veracity label {s:?}")))
    }
}

impl FromStr for Stance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Stance::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown stance label {s:?}")))
    }
}
