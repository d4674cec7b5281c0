use super::{Dataset, Visit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Segment::Train),
            "validation" | "valid" => Ok(Segment::Validation),
            "test" => Ok(Segment::Test),
            other => Err(Error::Config(format!("unknown segment {other:?}"))),
        }
    }
}

/// Boundaries of one user's chronological segments:
/// train `[0, train_end)`, validation `[train_end, valid_end)`, test `[valid_end, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserSplit {
    pub train_end: usize,
    pub valid_end: usize,
    pub len: usize,
}

impl UserSplit {
    /// 70/10/20 with floor on the first two boundaries, remainder to test.
    pub fn for_length(len: usize) -> UserSplit {
        let train = len * 7 / 10;
        let valid = len / 10;
        UserSplit {
            train_end: train,
            valid_end: train + valid,
            len,
        }
    }

    pub fn range(&self, seg: Segment) -> std::ops::Range<usize> {
        match seg {
            Segment::Train => 0..self.train_end,
            Segment::Validation => self.train_end..self.valid_end,
            Segment::Test => self.valid_end..self.len,
        }
    }
}

/// A prediction instance: the user moved from `prev_poi` (at `prev_time`) to
/// `target` (at `time`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub user: usize,
    pub prev_poi: usize,
    pub prev_time: i64,
    pub time: i64,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub users: Vec<UserSplit>,
}

impl Split {
    pub fn chronological(ds: &Dataset) -> Result<Split> {
        let users = ds
            .sequences
            .iter()
            .zip(&ds.users)
            .map(|(seq, u)| {
                if seq.len() < 3 {
                    return Err(Error::Data(format!(
                        "user {} has {} check-ins; at least 3 are needed to split",
                        u.user_id,
                        seq.len()
                    )));
                }
                Ok(UserSplit::for_length(seq.len()))
            })
            .collect::<Result<_>>()?;
        Ok(Split { users })
    }

    pub fn segment<'a>(&self, ds: &'a Dataset, user: usize, seg: Segment) -> &'a [Visit] {
        &ds.sequences[user][self.users[user].range(seg)]
    }

    /// Prediction instances whose target lies in `seg`. The first training
    /// check-in is never a target; the first validation/test target takes the
    /// last check-in of the preceding segment as its previous POI.
    pub fn transitions(&self, ds: &Dataset, seg: Segment) -> Vec<Transition> {
        let mut out = Vec::new();
        for (user, (seq, bounds)) in ds.sequences.iter().zip(&self.users).enumerate() {
            for i in bounds.range(seg).filter(|&i| i >= 1) {
                out.push(Transition {
                    user,
                    prev_poi: seq[i - 1].poi,
                    prev_time: seq[i - 1].timestamp,
                    time: seq[i].timestamp,
                    target: seq[i].poi,
                });
            }
        }
        out
    }
}
