use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    High,
    Medium,
    Low,
    Rare,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::High, Bucket::Medium, Bucket::Low, Bucket::Rare];
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::High => "High",
            Self::Medium => "Medium",
            Self::Low => "Low",
            Self::Rare => "Rare",
        })
    }
}

impl FromStr for Bucket {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Self::High),
            "medium" => Ok(Self::Medium),
            "low" => Ok(Self::Low),
            "rare" => Ok(Self::Rare),
            _ => Err(format!("unknown bucket {s:?}")),
        }
    }
}

/// Word strata by reference-corpus frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBuckets {
    pub high: u64,
    pub medium: u64,
    pub low: u64,
    /// Thresholds are lower bounds of their bucket (`freq ≥ t`); when set,
    /// a word must exceed the threshold instead (`freq > t`).
    pub strict: bool,
    reference: HashMap<String, u64>,
}

impl FrequencyBuckets {
    pub fn new(reference: HashMap<String, u64>) -> Self {
        Self::with_thresholds(reference, 3000, 300, 3).expect("default thresholds are ordered")
    }

    pub fn with_thresholds(reference: HashMap<String, u64>, high: u64, medium: u64, low: u64) -> Result<Self> {
        if !(high > medium && medium > low && low > 0) {
            return Err(Error::contract(format!(
                "bucket thresholds must satisfy high > medium > low > 0, got {high}/{medium}/{low}"
            )));
        }
        Ok(Self {
            high,
            medium,
            low,
            strict: false,
            reference,
        })
    }

    pub fn frequency(&self, word: &str) -> u64 {
        self.reference.get(word).copied().unwrap_or(0)
    }

    pub fn bucket_of_count(&self, freq: u64) -> Bucket {
        let above = |t: u64| if self.strict { freq > t } else { freq >= t };
        if above(self.high) {
            Bucket::High
        } else if above(self.medium) {
            Bucket::Medium
        } else if above(self.low) {
            Bucket::Low
        } else {
            Bucket::Rare
        }
    }

    pub fn bucket_of(&self, word: &str) -> Bucket {
        self.bucket_of_count(self.frequency(word))
    }
}

pub fn bucket_of(word: &str, buckets: &FrequencyBuckets) -> Bucket {
    buckets.bucket_of(word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let mut b = FrequencyBuckets::new(HashMap::new());
        assert_eq!(b.bucket_of_count(3000), Bucket::High);
        assert_eq!(b.bucket_of_count(2999), Bucket::Medium);
        assert_eq!(b.bucket_of_count(300), Bucket::Medium);
        assert_eq!(b.bucket_of_count(3), Bucket::Low);
        assert_eq!(b.bucket_of_count(2), Bucket::Rare);
        assert_eq!(b.bucket_of("never-seen"), Bucket::Rare);
        b.strict = true;
        assert_eq!(b.bucket_of_count(3000), Bucket::Medium);
        assert_eq!(b.bucket_of_count(3), Bucket::Rare);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(FrequencyBuckets::with_thresholds(HashMap::new(), 10, 10, 1).is_err());
        assert!(FrequencyBuckets::with_thresholds(HashMap::new(), 10, 5, 0).is_err());
    }
}
