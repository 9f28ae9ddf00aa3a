//! Fragment-level train/test partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::ImageRecord;
use super::patch::Patch;
use crate::error::{Error, Result};

/// Anything that can be partitioned: an id, its fragment and its class.
pub trait SplitUnit {
    fn unit_id(&self) -> &str;
    fn fragment_id(&self) -> &str;
    fn class_key(&self) -> &str;
}

impl SplitUnit for ImageRecord {
    fn unit_id(&self) -> &str {
        &self.image_id
    }
    fn fragment_id(&self) -> &str {
        &self.fragment_id
    }
    fn class_key(&self) -> &str {
        &self.class_key
    }
}

impl SplitUnit for Patch {
    fn unit_id(&self) -> &str {
        &self.patch_id
    }
    fn fragment_id(&self) -> &str {
        &self.fragment_id
    }
    fn class_key(&self) -> &str {
        &self.class_key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub fragments: BTreeMap<String, Side>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitManifest {
    pub fn side_of_fragment(&self, fragment_id: &str) -> Option<Side> {
        self.fragments.get(fragment_id).copied()
    }

    pub fn train_fraction(&self) -> f64 {
        self.train.len() as f64 / (self.train.len() + self.test.len()).max(1) as f64
    }

    /// Partitions `items` according to this manifest's fragment table.
    pub fn partition<U: SplitUnit + Clone>(&self, items: &[U]) -> Result<(Vec<U>, Vec<U>)> {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for it in items {
            match self.side_of_fragment(it.fragment_id()) {
                Some(Side::Train) => train.push(it.clone()),
                Some(Side::Test) => test.push(it.clone()),
                None => {
                    return Err(Error::Data(format!(
                        "fragment {:?} of {:?} is absent from the split manifest",
                        it.fragment_id(),
                        it.unit_id()
                    )))
                }
            }
        }
        Ok((train, test))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Shuffles each class's fragments and assigns them greedily so the train
/// share of units approaches `ratio`; residuals carry across classes.
pub fn split<U: SplitUnit>(items: &[U], ratio: f64, seed: u64) -> Result<SplitManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    // class -> fragment -> unit count
    let mut by_class: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut fragment_class: BTreeMap<&str, &str> = BTreeMap::new();
    for it in items {
        if it.fragment_id().is_empty() {
            return Err(Error::Data(format!("{:?} has no fragment_id", it.unit_id())));
        }
        if let Some(prev) = fragment_class.insert(it.fragment_id(), it.class_key()) {
            if prev != it.class_key() {
                return Err(Error::Data(format!(
                    "fragment {:?} carries classes {prev} and {}",
                    it.fragment_id(),
                    it.class_key()
                )));
            }
        }
        *by_class.entry(it.class_key()).or_default().entry(it.fragment_id()).or_default() += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fragments = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut carry = 0.0;
    for (class, frags) in &by_class {
        let mut order: Vec<(&str, usize)> = frags.iter().map(|(f, n)| (*f, *n)).collect();
        order.shuffle(&mut rng);
        let total: usize = order.iter().map(|(_, n)| n).sum();
        let target = ratio * total as f64 + carry;
        let mut sides = Vec::with_capacity(order.len());
        let mut train = 0usize;
        for &(_, n) in &order {
            if train as f64 + n as f64 <= target + n as f64 / 2.0 {
                train += n;
                sides.push(Side::Train);
            } else {
                sides.push(Side::Test);
            }
        }
        if order.len() == 1 {
            warnings.push(format!("class {class} has a single fragment and cannot appear in both splits"));
            sides[0] = Side::Train;
            train = total;
        } else if !sides.contains(&Side::Test) {
            let last = sides.len() - 1;
            sides[last] = Side::Test;
            train -= order[last].1;
        } else if !sides.contains(&Side::Train) {
            sides[0] = Side::Train;
            train += order[0].1;
        }
        carry = target - train as f64;
        for ((f, _), side) in order.iter().zip(sides) {
            fragments.insert(f.to_string(), side);
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for it in items {
        match fragments[it.fragment_id()] {
            Side::Train => train.push(it.unit_id().to_string()),
            Side::Test => test.push(it.unit_id().to_string()),
        }
    }
    Ok(SplitManifest { seed, ratio, train, test, fragments, warnings })
}
