use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-entropy to policy-gradient annealing: `k` pure cross-entropy epochs,
/// then `t` epochs where the last `floor((epoch − k) / m)` phrases of every
/// caption are sampled and trained with the policy gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub k: usize,
    pub t: usize,
    pub m: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self { k: 0, t: 20, m: 5 }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("annealing period m must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.k + self.t
    }

    /// Number of trailing phrases under the policy gradient at `epoch`
    /// (0-based), before capping at the caption length. `None` during the
    /// pure cross-entropy epochs.
    pub fn pg_phrases(&self, epoch: usize) -> Option<usize> {
        (epoch >= self.k).then(|| (epoch - self.k) / self.m)
    }

    /// `(xe, pg)` phrase counts for a caption of `p` phrases.
    pub fn split(&self, epoch: usize, p: usize) -> (usize, usize) {
        let pg = self.pg_phrases(epoch).unwrap_or(0).min(p);
        (p - pg, pg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_points() {
        let s = AnnealSchedule { k: 3, t: 30, m: 5 };
        assert_eq!(s.pg_phrases(2), None);
        assert_eq!(s.split(2, 4), (4, 0));
        assert_eq!(s.split(3, 4), (4, 0));
        assert_eq!(s.split(8, 4), (3, 1));
        assert_eq!(s.split(3 + 5 * 4, 4), (0, 4));
        assert_eq!(s.split(3 + 5 * 9, 4), (0, 4));
        assert!(AnnealSchedule { m: 0, ..s }.validate().is_err());
    }

    proptest! {
        #[test]
        fn xe_count_never_increases(k in 0usize..10, m in 1usize..8, p in 0usize..9, e in 0usize..80) {
            let s = AnnealSchedule { k, t: 100, m };
            let (xe0, pg0) = s.split(e, p);
            let (xe1, _) = s.split(e + 1, p);
            prop_assert_eq!(xe0 + pg0, p);
            prop_assert!(xe1 <= xe0);
        }
    }
}
