//! Leak-free train/test assignment at group (procedure) granularity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Manifest, Split};
use crate::error::{Error, Result};
use crate::rng;

/// How many groups go to the test side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    /// Target share of frames, see [`group_split`].
    TestFraction(f64),
    /// Exact number of groups, see [`group_split_count`].
    TestGroups(usize),
}

impl SplitRule {
    pub fn apply(&self, manifest: &Manifest, seed: u64) -> Result<Manifest> {
        match *self {
            SplitRule::TestFraction(f) => group_split(manifest, f, seed),
            SplitRule::TestGroups(n) => group_split_count(manifest, n, seed),
        }
    }
}

/// Group frame counts in seeded visit order. Keys are sorted before the
/// shuffle so the order is independent of entry order.
fn visit_order(manifest: &Manifest, seed: u64) -> Result<Vec<(&str, usize)>> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *sizes.entry(e.group_id.as_str()).or_default() += e.frames;
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "group split needs at least 2 groups, manifest `{}` has {}",
            manifest.name,
            sizes.len()
        )));
    }
    let mut order: Vec<(&str, usize)> = sizes.into_iter().collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT));
    Ok(order)
}

fn assign(manifest: &Manifest, test_groups: &[&str]) -> Manifest {
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = if test_groups.contains(&e.group_id.as_str()) {
            Split::Test
        } else {
            Split::Train
        };
    }
    out
}

/// Assigns whole groups to the test split until the test share of frames
/// reaches `test_fraction`; everything else goes to train.
///
/// Groups are visited in a seeded random order. A first pass takes every
/// group that still fits under the target frame count. If the target is not
/// met exactly, the smallest remaining group is added, so the realized test
/// fraction lies in `[test_fraction, test_fraction + largest group share)`.
/// When that would leave train empty, the last group alone or everything but
/// the smallest group is used instead; the split fails only if no proper
/// subset of groups reaches the target.
pub fn group_split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let order = visit_order(manifest, seed)?;
    let total: usize = order.iter().map(|g| g.1).sum();
    let target = test_fraction * total as f64;
    let mut in_test = alloc::vec![false; order.len()];
    let mut test_frames = 0usize;
    for (i, &(_, size)) in order.iter().enumerate() {
        if (test_frames + size) as f64 <= target {
            in_test[i] = true;
            test_frames += size;
        }
    }
    if (test_frames as f64) < target {
        let outside: Vec<usize> = (0..order.len()).filter(|&i| !in_test[i]).collect();
        let pick = *outside
            .iter()
            .min_by_key(|&&i| order[i].1)
            .expect("target below total leaves a group outside test");
        if outside.len() > 1 {
            in_test[pick] = true;
        } else if order[pick].1 as f64 >= target {
            // The last group alone meets the target.
            in_test.iter_mut().enumerate().for_each(|(i, t)| *t = i == pick);
        } else {
            // Everything except the smallest group, if that still meets it.
            let smallest = (0..order.len()).min_by_key(|&i| order[i].1).expect("at least 2 groups");
            if ((total - order[smallest].1) as f64) < target {
                return Err(Error::InvalidArgument(format!(
                    "test_fraction {test_fraction} leaves no group for training"
                )));
            }
            in_test.iter_mut().enumerate().for_each(|(i, t)| *t = i != smallest);
        }
    }
    let test_groups: Vec<&str> = order
        .iter()
        .zip(&in_test)
        .filter(|(_, &t)| t)
        .map(|(&(g, _), _)| g)
        .collect();
    Ok(assign(manifest, &test_groups))
}

/// Assigns the first `test_groups` groups of the seeded visit order to test.
pub fn group_split_count(manifest: &Manifest, test_groups: usize, seed: u64) -> Result<Manifest> {
    let order = visit_order(manifest, seed)?;
    if test_groups == 0 || test_groups >= order.len() {
        return Err(Error::InvalidArgument(format!(
            "test_groups must lie in [1, {}) for {} groups, got {test_groups}",
            order.len(),
            order.len()
        )));
    }
    let chosen: Vec<&str> = order.iter().take(test_groups).map(|g| g.0).collect();
    Ok(assign(manifest, &chosen))
}

/// Test share of frames in an assigned manifest.
pub fn test_frame_fraction(manifest: &Manifest) -> f64 {
    let total: usize = manifest.entries.iter().map(|e| e.frames).sum();
    let test: usize = manifest.entries_in(Split::Test).map(|e| e.frames).sum();
    test as f64 / total as f64
}
