//! Temporal train/val/test partition with attack-free buffers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub buffer_len: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.15,
            test: 0.15,
            buffer_len: 5,
        }
    }
}

/// Resolved timestep ranges for one timeline length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitBoundaries {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// The two buffer zones, in time order.
    pub buffers: [Range<usize>; 2],
}

impl SplitBoundaries {
    pub fn segment(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split_of(&self, t: usize) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.segment(s).contains(&t))
    }

    pub fn in_buffer(&self, t: usize) -> bool {
        self.buffers.iter().any(|b| b.contains(&t))
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ratios = [self.train, self.val, self.test];
        if ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Config("split ratios must lie in (0, 1)".into()));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }

    /// Train ends at `round(train*T)`, val at `round((train+val)*T)`; each
    /// later segment starts after a buffer of `buffer_len` steps.
    pub fn boundaries(&self, total: usize) -> Result<SplitBoundaries> {
        self.validate()?;
        let b1 = (self.train * total as f64).round() as usize;
        let b2 = ((self.train + self.val) * total as f64).round() as usize;
        let buf = self.buffer_len;
        if b1 + buf > b2 || b2 + buf > total {
            return Err(Error::Config(format!(
                "timeline of {total} steps is too short for the split with {buf}-step buffers"
            )));
        }
        Ok(SplitBoundaries {
            train: 0..b1,
            val: b1 + buf..b2,
            test: b2 + buf..total,
            buffers: [b1..b1 + buf, b2..b2 + buf],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_step_timeline() {
        let b = SplitSpec::default().boundaries(100).unwrap();
        assert_eq!(b.train, 0..70);
        assert_eq!(b.val, 75..85);
        assert_eq!(b.test, 90..100);
        assert_eq!(b.buffers, [70..75, 85..90]);
        assert_eq!(b.split_of(72), None);
        assert!(b.in_buffer(89));
        assert_eq!(b.split_of(90), Some(Split::Test));
    }

    #[test]
    fn bad_ratios() {
        let s = SplitSpec {
            train: 0.8,
            ..SplitSpec::default()
        };
        assert!(s.validate().is_err());
        assert!(SplitSpec::default().boundaries(8).is_err());
    }
}
