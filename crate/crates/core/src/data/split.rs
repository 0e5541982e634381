//! Per-dataset train/test protocols.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Category, DatasetRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// 40 images: first 20 by id train, last 20 test
    DriveFixed,
    /// one fold per image, each holding that image out
    StareLoocv,
    /// 28 images: first 20 train, last 8 test
    ChaseFirst20,
    /// first 5 images of every category train, the rest test
    Hrf5PerCat,
    /// seeded random 15% test
    Random15,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::DriveFixed,
        Protocol::StareLoocv,
        Protocol::ChaseFirst20,
        Protocol::Hrf5PerCat,
        Protocol::Random15,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::DriveFixed => "drive_fixed",
            Protocol::StareLoocv => "stare_loocv",
            Protocol::ChaseFirst20 => "chase_first20",
            Protocol::Hrf5PerCat => "hrf_5percat",
            Protocol::Random15 => "random_15",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Protocol::ALL.iter().map(|p| p.name()).collect();
                Error::Data(format!("unknown protocol {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// `fold,id,role` rows, one per assignment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,id,role\n");
        for (k, fold) in self.folds.iter().enumerate() {
            for id in &fold.train {
                out.push_str(&format!("{k},{id},train\n"));
            }
            for id in &fold.test {
                out.push_str(&format!("{k},{id},test\n"));
            }
        }
        out
    }
}

fn expect_count(protocol: Protocol, n: usize, want: usize) -> Result<()> {
    if n != want {
        return Err(Error::Data(format!("{protocol} expects {want} records, got {n}")));
    }
    Ok(())
}

fn fold(train: &[&str], test: &[&str]) -> Fold {
    Fold {
        train: train.iter().map(|s| s.to_string()).collect(),
        test: test.iter().map(|s| s.to_string()).collect(),
    }
}

/// Assigns records to folds. Ids are handled in sorted order, so the plan
/// depends only on the ids, the protocol and (for `random_15`) the seed.
pub fn make_split(records: &[DatasetRecord], protocol: Protocol, seed: u64) -> Result<SplitPlan> {
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("record ids must be unique".into()));
    }
    let n = ids.len();
    let folds = match protocol {
        Protocol::DriveFixed => {
            expect_count(protocol, n, 40)?;
            vec![fold(&ids[..20], &ids[20..])]
        }
        Protocol::ChaseFirst20 => {
            expect_count(protocol, n, 28)?;
            vec![fold(&ids[..20], &ids[20..])]
        }
        Protocol::StareLoocv => {
            if n < 2 {
                return Err(Error::Data(format!("{protocol} needs at least 2 records, got {n}")));
            }
            (0..n)
                .map(|i| {
                    let train: Vec<&str> = ids.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| *s).collect();
                    fold(&train, &ids[i..=i])
                })
                .collect()
        }
        Protocol::Hrf5PerCat => {
            let mut by_cat: BTreeMap<Category, Vec<&str>> = BTreeMap::new();
            let mut sorted: Vec<&DatasetRecord> = records.iter().collect();
            sorted.sort_by(|a, b| a.id.cmp(&b.id));
            for r in sorted {
                let cat = r.category.ok_or_else(|| {
                    Error::Data(format!("{protocol}: record {} has no category (expected suffix _h, _dr or _g)", r.id))
                })?;
                by_cat.entry(cat).or_default().push(&r.id);
            }
            let mut train = Vec::new();
            for (cat, members) in &by_cat {
                if members.len() < 5 {
                    return Err(Error::Data(format!(
                        "{protocol}: category {cat} has {} records, needs at least 5",
                        members.len()
                    )));
                }
                train.extend_from_slice(&members[..5]);
            }
            train.sort_unstable();
            let test: Vec<&str> = ids.iter().copied().filter(|id| !train.contains(id)).collect();
            vec![fold(&train, &test)]
        }
        Protocol::Random15 => {
            if n < 2 {
                return Err(Error::Data(format!("{protocol} needs at least 2 records, got {n}")));
            }
            let n_test = ((0.15 * n as f64).round() as usize).clamp(1, n - 1);
            let mut order = ids.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            vec![fold(&train, &test)]
        }
    };
    Ok(SplitPlan { protocol, folds })
}
