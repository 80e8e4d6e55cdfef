use std::collections::HashSet;

use super::{ImageKey, InstructionRecord};

/// Held-out image keys indexed for [`ImageKey`] equality: a hash match when
/// both sides carry a hash, an id-pair match otherwise.
#[derive(Debug, Default)]
pub struct LeakageIndex {
    hashes: HashSet<String>,
    all_pairs: HashSet<(String, String)>,
    unhashed_pairs: HashSet<(String, String)>,
}

impl LeakageIndex {
    pub fn new<'a>(holdout: impl IntoIterator<Item = &'a ImageKey>) -> Self {
        let mut idx = LeakageIndex::default();
        for k in holdout {
            let pair = (k.collection.clone(), k.image_id.clone());
            match &k.content_hash {
                Some(h) => {
                    idx.hashes.insert(h.clone());
                }
                None => {
                    idx.unhashed_pairs.insert(pair.clone());
                }
            }
            idx.all_pairs.insert(pair);
        }
        idx
    }

    pub fn contains(&self, key: &ImageKey) -> bool {
        let pair = (key.collection.clone(), key.image_id.clone());
        match &key.content_hash {
            Some(h) => self.hashes.contains(h) || self.unhashed_pairs.contains(&pair),
            None => self.all_pairs.contains(&pair),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.all_pairs.is_empty()
    }
}

/// Drops records whose image is held out. Order of the kept records is
/// preserved; returns them with the number dropped.
pub fn filter_leakage(records: Vec<InstructionRecord>, holdout: &[ImageKey]) -> (Vec<InstructionRecord>, usize) {
    let index = LeakageIndex::new(holdout);
    let before = records.len();
    let kept: Vec<InstructionRecord> = records.into_iter().filter(|r| !index.contains(&r.image)).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
