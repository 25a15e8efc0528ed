//! Instance families: a size plus the duration model, generated from a seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::instance::{generate_taillard, stochasticize, Instance, InstanceError};

/// `jobs x machines`, written `6x6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Size {
    pub jobs: usize,
    pub machines: usize,
}

impl Size {
    pub fn new(jobs: usize, machines: usize) -> Self {
        Self { jobs, machines }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.jobs, self.machines)
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("size {s:?} is not of the form NxM"))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| format!("size {s:?}: {v:?} is not a positive integer"))
        };
        Ok(Size::new(parse(a)?, parse(b)?))
    }
}

impl TryFrom<String> for Size {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Size> for String {
    fn from(s: Size) -> String {
        s.to_string()
    }
}

/// Comma-separated sizes, e.g. `6x6,10x10`.
pub fn parse_sizes(s: &str) -> Result<Vec<Size>, String> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// How instances of one size are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    pub size: Size,
    pub stochastic: bool,
    /// Lower bound factor for `min` (ignored for deterministic families).
    pub low: f64,
    /// Upper bound factor for `max`.
    pub high: f64,
}

impl Family {
    pub fn deterministic(size: Size) -> Self {
        Self {
            size,
            stochastic: false,
            low: 1.0,
            high: 1.0,
        }
    }

    pub fn stochastic(size: Size) -> Self {
        Self {
            size,
            stochastic: true,
            low: 0.95,
            high: 1.1,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Instance, InstanceError> {
        let base = generate_taillard(self.size.jobs, self.size.machines, seed)?;
        if self.stochastic {
            stochasticize(&base, seed, self.low, self.high)
        } else {
            Ok(base)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_syntax() {
        assert_eq!("6x6".parse::<Size>().unwrap(), Size::new(6, 6));
        assert_eq!(Size::new(10, 5).to_string(), "10x5");
        assert_eq!(parse_sizes("6x6,10x10").unwrap(), vec![Size::new(6, 6), Size::new(10, 10)]);
        assert!("6".parse::<Size>().is_err());
        assert!("0x3".parse::<Size>().is_err());
        let json = serde_json::to_string(&Size::new(4, 3)).unwrap();
        assert_eq!(json, "\"4x3\"");
        assert_eq!(serde_json::from_str::<Size>(&json).unwrap(), Size::new(4, 3));
    }

    #[test]
    fn families() {
        let d = Family::deterministic(Size::new(3, 2)).generate(5).unwrap();
        assert!(!d.is_stochastic());
        let s = Family::stochastic(Size::new(3, 2)).generate(5).unwrap();
        assert!(s.is_stochastic());
        assert_eq!(d.mode_durations(), s.mode_durations());
        assert_eq!(d.machine_rows(), s.machine_rows());
    }
}
