//! Seeded serialize/parse round-trip checks over random geometry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coord::{parse_regions, BBox, Geometry, Point, Precision};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub cases: usize,
    pub seed: u64,
    pub min_precision: u32,
    pub max_precision: u32,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            cases: 100_000,
            seed: 0,
            min_precision: 1,
            max_precision: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzFailure {
    pub case: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub cases: usize,
    pub passed: usize,
    /// Largest component error relative to half a unit in the last place;
    /// at most 1 for a passing run.
    pub worst_relative_error: f64,
    pub failures: Vec<FuzzFailure>,
}

impl FuzzReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The geometry and precision for case `index`; the same for any thread
/// count.
pub fn case(cfg: &FuzzConfig, index: usize) -> (Geometry, Precision) {
    let mut rng = seed::item_rng(cfg.seed, index as u64);
    let d = rng.gen_range(cfg.min_precision..=cfg.max_precision);
    let prec = Precision::new(d).unwrap_or_default();
    let mut u = || rng.gen_range(0.0..=1.0);
    let g = if index.is_multiple_of(2) {
        Geometry::Point(Point::new(u(), u()).expect("unit values"))
    } else {
        let (a, b, c, d) = (u(), u(), u(), u());
        Geometry::Box(BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).expect("ordered unit values"))
    };
    (g, prec)
}

fn check(g: Geometry, prec: Precision) -> Result<f64, (String, String)> {
    let text = g.serialize(prec);
    let scan = parse_regions(&text);
    let fail = |reason: String| Err((text.clone(), reason));
    if !scan.is_clean() || scan.spans.len() != 1 {
        return fail(format!("expected one clean span, got {} spans and {} malformed", scan.spans.len(), scan.malformed.len()));
    }
    let back = scan.spans[0].geometry;
    if std::mem::discriminant(&back) != std::mem::discriminant(&g) {
        return fail("geometry kind changed".into());
    }
    let mut worst: f64 = 0.0;
    for (a, b) in g.components().iter().zip(back.components()) {
        let rel = (a - b).abs() / prec.half_ulp();
        if rel > 1.0 + 1e-9 {
            return fail(format!("component {a} came back as {b}"));
        }
        worst = worst.max(rel);
    }
    if back.serialize(prec) != text {
        return fail("re-serialization differs".into());
    }
    Ok(worst)
}

pub fn run(cfg: &FuzzConfig) -> FuzzReport {
    let indices: Vec<usize> = (0..cfg.cases).collect();
    let results = par::map(&indices, |_, &i| {
        let (g, prec) = case(cfg, i);
        check(g, prec)
    });
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(w) => worst = worst.max(w),
            Err((text, reason)) => failures.push(FuzzFailure { case: i, text, reason }),
        }
    }
    FuzzReport {
        cases: cfg.cases,
        passed: cfg.cases - failures.len(),
        worst_relative_error: worst,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes_and_is_stable() {
        let cfg = FuzzConfig { cases: 2000, seed: 11, ..Default::default() };
        let a = run(&cfg);
        assert!(a.ok(), "{:?}", a.failures.first());
        assert_eq!(a.passed, 2000);
        let b = par::with_sequential(|| run(&cfg));
        assert_eq!(a, b);
    }
}
