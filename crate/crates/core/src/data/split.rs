//! Train / validation / test masks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::bundle::DatasetBundle;

pub const SEMI_PER_CLASS: usize = 20;
pub const SEMI_VAL: usize = 500;
pub const SEMI_TEST: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SplitError {
    #[error("class {class} has {have} nodes, need at least {need}")]
    ClassTooSmall { class: usize, have: usize, need: usize },
    #[error("{have} nodes, need at least {need}")]
    TooFewNodes { have: usize, need: usize },
    #[error("mask length {got} does not match {n} nodes")]
    Length { n: usize, got: usize },
    #[error("node {0} is in more than one mask")]
    Overlap(usize),
    #[error("{0} mask is empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn empty(n: usize, seed: u64) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.train.len()
    }

    /// `"train"`, `"val"`, `"test"` or `"none"`.
    pub fn role(&self, i: usize) -> &'static str {
        if self.train[i] {
            "train"
        } else if self.val[i] {
            "val"
        } else if self.test[i] {
            "test"
        } else {
            "none"
        }
    }

    /// Sizes of the train, val and test masks.
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let n = self.n();
        for m in [&self.val, &self.test] {
            if m.len() != n {
                return Err(SplitError::Length { n, got: m.len() });
            }
        }
        for i in 0..n {
            if (self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8) > 1 {
                return Err(SplitError::Overlap(i));
            }
        }
        let (tr, va, te) = self.counts();
        for (name, c) in [("train", tr), ("val", va), ("test", te)] {
            if c == 0 {
                return Err(SplitError::Empty(name));
            }
        }
        Ok(())
    }
}

fn by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    groups
}

/// Semi-supervised split: 20 training nodes per class, then 500 validation
/// and 1000 test nodes from the rest. Masks shipped with the bundle win.
pub fn semi_split(bundle: &DatasetBundle, seed: u64) -> Result<SplitSpec, SplitError> {
    if let Some(masks) = &bundle.masks {
        let mut split = masks.clone();
        split.seed = seed;
        split.validate()?;
        return Ok(split);
    }
    semi_split_labels(&bundle.labels, bundle.classes, seed)
}

pub fn semi_split_labels(labels: &[usize], classes: usize, seed: u64) -> Result<SplitSpec, SplitError> {
    let n = labels.len();
    let need = SEMI_PER_CLASS * classes + SEMI_VAL + SEMI_TEST;
    if n < need {
        return Err(SplitError::TooFewNodes { have: n, need });
    }
    let mut groups = by_class(labels, classes);
    for (class, g) in groups.iter().enumerate() {
        if g.len() < SEMI_PER_CLASS {
            return Err(SplitError::ClassTooSmall {
                class,
                have: g.len(),
                need: SEMI_PER_CLASS,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitSpec::empty(n, seed);
    for g in &mut groups {
        g.shuffle(&mut rng);
        for &i in &g[..SEMI_PER_CLASS] {
            split.train[i] = true;
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !split.train[i]).collect();
    rest.shuffle(&mut rng);
    for &i in &rest[..SEMI_VAL] {
        split.val[i] = true;
    }
    for &i in &rest[SEMI_VAL..SEMI_VAL + SEMI_TEST] {
        split.test[i] = true;
    }
    Ok(split)
}

/// Per-class sizes `(train, val, test)` of the stratified 60/20/20 split.
pub fn full_split_sizes(class_size: usize) -> (usize, usize, usize) {
    let fifth = class_size / 5;
    (class_size - 2 * fifth, fifth, fifth)
}

/// Fully supervised split: stratified 60/20/20, rounding remainders into
/// train. Falls back to an unstratified split when a class has fewer than
/// three members.
pub fn full_split(bundle: &DatasetBundle, seed: u64) -> Result<SplitSpec, SplitError> {
    full_split_labels(&bundle.labels, bundle.classes, seed)
}

pub fn full_split_labels(labels: &[usize], classes: usize, seed: u64) -> Result<SplitSpec, SplitError> {
    let n = labels.len();
    if n < 10 {
        return Err(SplitError::TooFewNodes { have: n, need: 10 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitSpec::empty(n, seed);
    let mut groups = by_class(labels, classes);
    groups.retain(|g| !g.is_empty());
    if let Some(small) = groups.iter().find(|g| g.len() < 3) {
        log::warn!(
            "class of node {} has {} members; using an unstratified 60/20/20 split",
            small[0],
            small.len()
        );
        groups = vec![(0..n).collect()];
    }
    for g in &mut groups {
        g.shuffle(&mut rng);
        let (_, va, te) = full_split_sizes(g.len());
        for (k, &i) in g.iter().enumerate() {
            if k < va {
                split.val[i] = true;
            } else if k < va + te {
                split.test[i] = true;
            } else {
                split.train[i] = true;
            }
        }
    }
    split.validate()?;
    Ok(split)
}
