use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{ManifestEntry, Split};
use crate::error::{config_err, Result};
use crate::model::Quadrant;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl DatasetSplit {
    pub fn get(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Stratified seeded split. Within each quadrant the untagged entries are
/// shuffled and cut so that validation and test get `floor(n·share)` and
/// train the remainder; tagged entries keep their tag.
pub fn split_dataset(
    entries: &[ManifestEntry],
    ratio: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit> {
    if ratio.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(config_err!(
            "split ratio components must be positive, got {ratio:?}"
        ));
    }
    let total: f64 = ratio.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DatasetSplit::default();
    for e in entries.iter().filter(|e| e.split.is_some()) {
        match e.split {
            Some(Split::Train) => out.train.push(e.clone()),
            Some(Split::Val) => out.val.push(e.clone()),
            Some(Split::Test) => out.test.push(e.clone()),
            None => unreachable!(),
        }
    }
    for q in Quadrant::ALL {
        let mut group: Vec<&ManifestEntry> = entries
            .iter()
            .filter(|e| e.split.is_none() && e.quadrant == q)
            .collect();
        if group.is_empty() {
            continue;
        }
        if group.len() < 3 {
            log::warn!(
                "quadrant {q} has only {} untagged clips; all go to train",
                group.len()
            );
            out.train.extend(group.into_iter().cloned());
            continue;
        }
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let n_val = (n * ratio[1] / total + 1e-9).floor() as usize;
        let n_test = (n * ratio[2] / total + 1e-9).floor() as usize;
        let n_train = group.len() - n_val - n_test;
        let mut it = group.into_iter().cloned();
        out.train.extend(it.by_ref().take(n_train));
        out.val.extend(it.by_ref().take(n_val));
        out.test.extend(it);
    }
    Ok(out)
}
