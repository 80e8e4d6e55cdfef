//! Synthetic annotations shared by the integration tests and benches.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use refdial_core::coord::{BBox, ImageSize};
use refdial_core::dataset::{ChainObject, Exchange, ImageKey, Mention, Payload, PixelGeometry, SourceAnnotation};
use refdial_core::seed;
use refdial_core::TaskKind;

const OBJECTS: [&str; 8] = ["dog", "umbrella", "jacket", "bicycle", "cup", "kite", "bench", "horse"];
const COLORS: [&str; 6] = ["red", "green", "blue", "white", "black", "yellow"];

pub fn rng(seed_value: u64) -> ChaCha8Rng {
    seed::rng(seed_value)
}

pub fn pixel_box(rng: &mut impl Rng, w: u32, h: u32) -> [i64; 4] {
    let (w, h) = (w as i64, h as i64);
    let x0 = rng.gen_range(0..w - 1);
    let y0 = rng.gen_range(0..h - 1);
    [x0, y0, rng.gen_range(x0 + 1..=w), rng.gen_range(y0 + 1..=h)]
}

fn pixel_point(rng: &mut impl Rng, w: u32, h: u32) -> [i64; 2] {
    [rng.gen_range(0..=w as i64), rng.gen_range(0..=h as i64)]
}

/// A box strictly inside one random quadrant.
pub fn quadrant_box(rng: &mut impl Rng, w: u32, h: u32) -> [i64; 4] {
    let (w, h) = (w as i64, h as i64);
    let (qx, qy) = (rng.gen_range(0..2i64), rng.gen_range(0..2i64));
    let (xa, xb) = if qx == 0 { (0, w / 2) } else { ((w + 1) / 2, w) };
    let (ya, yb) = if qy == 0 { (0, h / 2) } else { ((h + 1) / 2, h) };
    let x0 = rng.gen_range(xa..xb);
    let y0 = rng.gen_range(ya..yb);
    [x0, y0, rng.gen_range(x0 + 1..=xb), rng.gen_range(y0 + 1..=yb)]
}

/// Text plus a mention for each listed phrase, located by first occurrence.
fn mentions(text: &str, phrases: &[&str], regions: Vec<PixelGeometry>) -> Vec<Mention> {
    let mut from = 0;
    phrases
        .iter()
        .zip(regions)
        .map(|(p, region)| {
            let start = from + text[from..].find(p).expect("phrase present");
            from = start + p.len();
            Mention { start, end: start + p.len(), region }
        })
        .collect()
}

pub fn cot_payload(rng: &mut impl Rng, w: u32, h: u32) -> Payload {
    let n = rng.gen_range(1..=3);
    let objs: Vec<&str> = OBJECTS.choose_multiple(rng, n).copied().collect();
    let color = COLORS.choose(rng).unwrap();
    let mut chain = format!("The {} is {color}.", objs[0]);
    for o in &objs[1..] {
        chain.push_str(&format!(" We can find a {o} with the same color."));
    }
    let mut from = 0;
    let objects = objs
        .iter()
        .map(|o| {
            let start = from + chain[from..].find(o).unwrap();
            from = start + o.len();
            let b = pixel_box(rng, w, h);
            ChainObject {
                start,
                end: start + o.len(),
                bbox: Some(b),
                point: Some([(b[0] + b[2]) / 2, (b[1] + b[3]) / 2]),
            }
        })
        .collect();
    Payload::CotQa {
        question: format!("How many objects are {color}?"),
        chain,
        objects,
        answer: ["one", "two", "three"][n - 1].to_string(),
    }
}

/// A random annotation whose kind can feed `task`.
pub fn annotation_for(task: TaskKind, index: usize, rng: &mut impl Rng) -> SourceAnnotation {
    let (w, h) = (rng.gen_range(64..2000u32), rng.gen_range(64..2000u32));
    let obj = *OBJECTS.choose(rng).unwrap();
    let color = *COLORS.choose(rng).unwrap();
    let payload = match task {
        TaskKind::Rec | TaskKind::Reg => Payload::ReferringExpression {
            expression: format!("the {color} {obj} on the left"),
            bbox: pixel_box(rng, w, h),
        },
        TaskKind::GroundingCaption => Payload::RegionCaption {
            caption: format!("a {color} {obj}"),
            bbox: pixel_box(rng, w, h),
        },
        TaskKind::SpottingCaption => {
            let other = OBJECTS.iter().find(|o| **o != obj).unwrap();
            let caption = format!("A {obj} stands beside a {color} {other}.");
            let regions = vec![
                PixelGeometry::Box(pixel_box(rng, w, h)),
                PixelGeometry::Point(pixel_point(rng, w, h)),
            ];
            let entities = mentions(&caption, &[obj, other], regions);
            Payload::EntityCaption { caption, entities }
        }
        TaskKind::PointQA => Payload::PointQa {
            question: "What color is this object?".into(),
            answer: color.into(),
            region: if rng.gen_bool(0.5) {
                PixelGeometry::Point(pixel_point(rng, w, h))
            } else {
                PixelGeometry::Box(pixel_box(rng, w, h))
            },
        },
        TaskKind::PointQaV7w => Payload::McBoxQa {
            question: format!("Which {obj} is {color}?"),
            options: [pixel_box(rng, w, h), pixel_box(rng, w, h), pixel_box(rng, w, h), pixel_box(rng, w, h)],
            correct: rng.gen_range(0..4),
        },
        TaskKind::VqaQa if index.is_multiple_of(2) => Payload::Vqa {
            question: format!("What color is the {obj}?"),
            answers: (0..10).map(|_| COLORS.choose(rng).unwrap().to_string()).collect(),
        },
        TaskKind::VqaQa | TaskKind::VqaQca | TaskKind::VqaQcPointA | TaskKind::VqaQcBoxA => cot_payload(rng, w, h),
        TaskKind::Captioning => Payload::Caption {
            caption: format!("A {color} {obj} in a field."),
        },
        TaskKind::Rd => {
            let q1 = format!("What is the {obj} doing?");
            let a1 = format!("The {obj} is resting near the {color} wall.");
            let qm = mentions(&q1, &[obj], vec![PixelGeometry::Box(pixel_box(rng, w, h))]);
            let am = mentions(&a1, &["wall"], vec![PixelGeometry::Point(pixel_point(rng, w, h))]);
            Payload::Dialogue {
                exchanges: vec![
                    Exchange { question: q1, answer: a1, question_entities: qm, answer_entities: am },
                    Exchange {
                        question: "Is it alone?".into(),
                        answer: "Yes, nothing else is nearby.".into(),
                        question_entities: vec![],
                        answer_entities: vec![],
                    },
                ],
            }
        }
        TaskKind::Chessboard => Payload::Detection {
            class_name: obj.into(),
            bbox: quadrant_box(rng, w, h),
        },
    };
    SourceAnnotation::new(
        ImageKey::new("synthetic", format!("img{index:05}")),
        ImageSize::new(w, h).unwrap(),
        payload,
    )
}

/// `n` annotations cycling through every task kind.
pub fn mixed_annotations(n: usize, seed_value: u64) -> Vec<(TaskKind, SourceAnnotation)> {
    (0..n)
        .map(|i| {
            let task = TaskKind::ALL[i % TaskKind::ALL.len()];
            let mut r = seed::item_rng(seed_value, i as u64);
            (task, annotation_for(task, i, &mut r))
        })
        .collect()
}

pub fn cot_annotations(n: usize, seed_value: u64) -> Vec<SourceAnnotation> {
    (0..n)
        .map(|i| {
            let mut r = seed::item_rng(seed_value, i as u64);
            let (w, h) = (r.gen_range(64..2000u32), r.gen_range(64..2000u32));
            SourceAnnotation::new(
                ImageKey::new("synthetic-cot", format!("{i}")),
                ImageSize::new(w, h).unwrap(),
                cot_payload(&mut r, w, h),
            )
        })
        .collect()
}

/// A normalized box with corners on the 1/1000 grid.
pub fn grid_box(rng: &mut impl Rng) -> BBox {
    let a = rng.gen_range(0..=1000u32);
    let b = rng.gen_range(0..=1000u32);
    let c = rng.gen_range(0..=1000u32);
    let d = rng.gen_range(0..=1000u32);
    let f = |v: u32| v as f64 / 1000.0;
    BBox::new(f(a.min(c)), f(b.min(d)), f(a.max(c)), f(b.max(d))).unwrap()
}

/// A normalized box with sides of at least `min_side`.
pub fn sized_box(rng: &mut impl Rng, min_side: f64) -> BBox {
    let w = rng.gen_range(min_side..=1.0);
    let h = rng.gen_range(min_side..=1.0);
    let x = rng.gen_range(0.0..=1.0 - w);
    let y = rng.gen_range(0.0..=1.0 - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}
