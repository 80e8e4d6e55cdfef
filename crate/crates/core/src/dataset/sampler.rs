use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Which stream a draw came from. `Boosted(i)` names the i-th boosted
/// sub-source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Primary,
    Boosted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw<'a, R> {
    pub origin: Origin,
    pub record: &'a R,
}

/// Infinite with-replacement sampler mixing a primary stream with boosted
/// sources.
///
/// Stage one draws only from the primary stream. Stage two takes each draw
/// from the boosted sources with probability `ratio`, independently per draw,
/// and from the primary stream otherwise. The boosted sub-source is chosen by
/// weight (equal by default).
pub struct StageSampler<'a, R> {
    primary: &'a [R],
    boosted: Vec<&'a [R]>,
    pick_boosted: Option<WeightedIndex<f64>>,
    stage: Stage,
    ratio: f64,
    rng: ChaCha8Rng,
}

impl<'a, R> StageSampler<'a, R> {
    pub const DEFAULT_RATIO: f64 = 0.5;

    pub fn new(primary: &'a [R], boosted: Vec<&'a [R]>, stage: Stage, ratio: f64, seed: u64) -> Result<Self, DatasetError> {
        let weights = vec![1.0; boosted.len()];
        Self::with_weights(primary, boosted, weights, stage, ratio, seed)
    }

    pub fn with_weights(
        primary: &'a [R],
        boosted: Vec<&'a [R]>,
        weights: Vec<f64>,
        stage: Stage,
        ratio: f64,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(DatasetError::InvalidRatio(ratio));
        }
        if primary.is_empty() {
            return Err(DatasetError::EmptyPrimaryStream);
        }
        let pick_boosted = match stage {
            Stage::One => None,
            Stage::Two => {
                // empty sub-sources never get picked
                let effective: Vec<f64> = boosted
                    .iter()
                    .zip(weights.iter().chain(std::iter::repeat(&0.0)))
                    .map(|(src, w)| if src.is_empty() { 0.0 } else { w.max(0.0) })
                    .collect();
                Some(WeightedIndex::new(&effective).map_err(|_| DatasetError::EmptyBoostedStream)?)
            }
        };
        Ok(StageSampler {
            primary,
            boosted,
            pick_boosted,
            stage,
            ratio,
            rng: seed::rng(seed),
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }
}

impl<'a, R> Iterator for StageSampler<'a, R> {
    type Item = Draw<'a, R>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(pick) = &self.pick_boosted {
            if self.rng.gen_bool(self.ratio) {
                let src = pick.sample(&mut self.rng);
                let pool = self.boosted[src];
                let record = &pool[self.rng.gen_range(0..pool.len())];
                return Some(Draw {
                    origin: Origin::Boosted(src),
                    record,
                });
            }
        }
        let record = &self.primary[self.rng.gen_range(0..self.primary.len())];
        Some(Draw {
            origin: Origin::Primary,
            record,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_one_never_boosts() {
        let p = [1, 2, 3];
        let b = [9];
        let s = StageSampler::new(&p, vec![&b[..]], Stage::One, 0.9, 1).unwrap();
        assert!(s.take(10_000).all(|d| d.origin == Origin::Primary));
    }

    #[test]
    fn stage_two_hits_ratio() {
        let p: Vec<u32> = (0..100).collect();
        let b: Vec<u32> = (0..10).collect();
        let s = StageSampler::new(&p, vec![&b[..]], Stage::Two, 0.5, 42).unwrap();
        let n = 100_000;
        let boosted = s.take(n).filter(|d| d.origin != Origin::Primary).count();
        let frac = boosted as f64 / n as f64;
        // binomial sd at n=1e5, p=0.5 is 0.00158
        assert!((frac - 0.5).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn empty_boosted_stream_fails_in_stage_two() {
        let p = [1];
        let empty: [i32; 0] = [];
        assert!(matches!(
            StageSampler::new(&p, vec![&empty[..]], Stage::Two, 0.5, 0),
            Err(DatasetError::EmptyBoostedStream)
        ));
        assert!(matches!(
            StageSampler::<i32>::new(&p, vec![], Stage::Two, 0.5, 0),
            Err(DatasetError::EmptyBoostedStream)
        ));
        assert!(StageSampler::new(&p, vec![&empty[..]], Stage::One, 0.5, 0).is_ok());
    }

    #[test]
    fn ratio_must_be_open_interval() {
        let p = [1];
        for r in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                StageSampler::<i32>::new(&p, vec![], Stage::One, r, 0),
                Err(DatasetError::InvalidRatio(_))
            ));
        }
    }

    #[test]
    fn weighted_sub_sources_share_equally_by_default() {
        let p = [0u8];
        let a = [1u8; 5];
        let b = [2u8; 500];
        let s = StageSampler::new(&p, vec![&a[..], &b[..]], Stage::Two, 0.5, 3).unwrap();
        let draws: Vec<_> = s.take(40_000).filter(|d| d.origin != Origin::Primary).collect();
        let from_a = draws.iter().filter(|d| d.origin == Origin::Boosted(0)).count() as f64;
        let share = from_a / draws.len() as f64;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn same_seed_same_stream() {
        let p: Vec<u32> = (0..50).collect();
        let b: Vec<u32> = (100..120).collect();
        let a: Vec<u32> = StageSampler::new(&p, vec![&b[..]], Stage::Two, 0.5, 9).unwrap().take(500).map(|d| *d.record).collect();
        let c: Vec<u32> = StageSampler::new(&p, vec![&b[..]], Stage::Two, 0.5, 9).unwrap().take(500).map(|d| *d.record).collect();
        assert_eq!(a, c);
    }
}
