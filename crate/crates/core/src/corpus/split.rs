use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forge::BugRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub warnings: Vec<String>,
}

/// Group-aware split keyed by `correct_code`.
pub fn split(records: Vec<BugRecord>, ratio: f64, seed: u64) -> Result<Split<BugRecord>> {
    split_by_group(records, |r| r.correct_code.clone(), ratio, seed)
}

/// Shuffles groups with `seed` and fills the train side up to
/// `round(ratio * n)` records, never splitting a group.
pub fn split_by_group<T, K, F>(records: Vec<T>, key: F, ratio: f64, seed: u64) -> Result<Split<T>>
where
    K: std::hash::Hash + Eq,
    F: Fn(&T) -> K,
{
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = records.len();
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<Vec<T>> = Vec::new();
    for r in records {
        let g = *index.entry(key(&r)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let target = (ratio * n as f64).round() as usize;
    let capacity = target.min(n - target);
    let mut out = Split {
        train: Vec::with_capacity(target),
        val: Vec::with_capacity(n - target),
        warnings: Vec::new(),
    };
    for g in groups {
        if g.len() > capacity {
            out.warnings.push(format!(
                "a group of {} records exceeds the smaller side's capacity of {capacity}",
                g.len()
            ));
        }
        if out.train.len() + g.len() <= target {
            out.train.extend(g);
        } else {
            out.val.extend(g);
        }
    }
    Ok(out)
}
