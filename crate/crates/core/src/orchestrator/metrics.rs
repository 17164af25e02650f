use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::Mode;
use crate::http::ResponseClass;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no HTTP responses to compute a pass rate from")]
    NoResponses,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pass_2xx: u64,
    pub reject_4xx: u64,
    pub error_5xx: u64,
    pub transport: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: ResponseClass) {
        match class {
            ResponseClass::Pass2xx => self.pass_2xx += 1,
            ResponseClass::Reject4xx => self.reject_4xx += 1,
            ResponseClass::Error5xx => self.error_5xx += 1,
            ResponseClass::Transport => self.transport += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.pass_2xx + self.reject_4xx + self.error_5xx + self.transport
    }

    /// Component-wise `self - earlier`.
    pub fn since(&self, earlier: &ClassCounts) -> ClassCounts {
        ClassCounts {
            pass_2xx: self.pass_2xx - earlier.pass_2xx,
            reject_4xx: self.reject_4xx - earlier.reject_4xx,
            error_5xx: self.error_5xx - earlier.error_5xx,
            transport: self.transport - earlier.transport,
        }
    }
}

/// Share of HTTP responses that got past input checking:
/// `(2xx + 5xx) / (2xx + 4xx + 5xx)`. Transport failures are not responses.
pub fn pass_rate(counts: &ClassCounts) -> Result<f64, MetricsError> {
    let accepted = counts.pass_2xx + counts.error_5xx;
    let total = accepted + counts.reject_4xx;
    if total == 0 {
        return Err(MetricsError::NoResponses);
    }
    Ok(accepted as f64 / total as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub counts: ClassCounts,
    pub pass_rate: Option<f64>,
    pub successful_templates: BTreeSet<String>,
    pub unique_request_templates: usize,
    /// Executed sequence length -> number of sequences.
    pub length_histogram: BTreeMap<usize, u64>,
    pub unique_errors: usize,
    /// Executed candidate sequences.
    pub iterations: u64,
    pub requests: u64,
    pub checker_requests: u64,
    pub seeds: usize,
    pub training_iterations: u64,
    /// Request count at the first scheduled training point, whether or not
    /// the mode trains.
    pub first_training_request: Option<u64>,
    pub counts_after_first_training: ClassCounts,
    pub pass_rate_after_first_training: Option<f64>,
    pub wall_time_secs: f64,
}

impl RunMetrics {
    pub fn unique_request_templates(&self) -> usize {
        self.successful_templates.len()
    }

    /// Median of the executed-length histogram (lower median).
    pub fn median_length(&self) -> Option<usize> {
        let total: u64 = self.length_histogram.values().sum();
        if total == 0 {
            return None;
        }
        let mid = total.div_ceil(2);
        let mut seen = 0;
        for (&len, &n) in &self.length_histogram {
            seen += n;
            if seen >= mid {
                return Some(len);
            }
        }
        None
    }

    /// `length,count` rows with a header line.
    pub fn lengths_csv(&self) -> String {
        let mut out = String::from("length,count\n");
        for (len, n) in &self.length_histogram {
            out.push_str(&format!("{len},{n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(p: u64, r: u64, e: u64, t: u64) -> ClassCounts {
        ClassCounts {
            pass_2xx: p,
            reject_4xx: r,
            error_5xx: e,
            transport: t,
        }
    }

    #[test]
    fn pass_rate_examples() {
        assert_eq!(pass_rate(&counts(5, 2, 1, 0)), Ok(0.75));
        assert_eq!(pass_rate(&counts(0, 7, 0, 0)), Ok(0.0));
        assert_eq!(pass_rate(&counts(3, 0, 2, 0)), Ok(1.0));
        assert_eq!(pass_rate(&counts(0, 0, 0, 4)), Err(MetricsError::NoResponses));
        assert_eq!(pass_rate(&counts(5, 2, 1, 9)), Ok(0.75));
    }

    #[test]
    fn median_and_csv() {
        let mut m = RunMetrics::default();
        assert_eq!(m.median_length(), None);
        m.length_histogram = BTreeMap::from([(1, 5), (2, 1), (7, 3)]);
        assert_eq!(m.median_length(), Some(1));
        m.length_histogram.insert(9, 3);
        assert_eq!(m.median_length(), Some(2));
        assert_eq!(m.lengths_csv(), "length,count\n1,5\n2,1\n7,3\n9,3\n");
    }

    proptest! {
        #[test]
        fn rate_moves_the_right_way(p in 0u64..50, r in 0u64..50, e in 0u64..50) {
            let base = counts(p, r, e, 0);
            if let Ok(rate) = pass_rate(&base) {
                prop_assert!((0.0..=1.0).contains(&rate));
                prop_assert!(pass_rate(&counts(p, r + 1, e, 0)).unwrap() < rate || rate == 0.0);
                if rate < 1.0 {
                    prop_assert!(pass_rate(&counts(p + 1, r, e, 0)).unwrap() > rate);
                    prop_assert!(pass_rate(&counts(p, r, e + 1, 0)).unwrap() > rate);
                }
            }
        }
    }
}
