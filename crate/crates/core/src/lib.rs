//! Toolkit for referential-dialogue data and grounding evaluation.
//!
//! Coordinates live inside ordinary text as normalized numbers in square
//! brackets: `[x, y]` for a point and `[x_min, y_min, x_max, y_max]` for a
//! box. Every other module builds on the grammar in [`coord`].
//!
//! With the default `parallel` feature, per-item work (record building,
//! metric evaluation, fuzzing) runs on the rayon pool. Without it, the same
//! code runs on the calling thread.

pub mod chessboard;
pub mod coord;
pub mod dataset;
pub mod endpoint;
pub mod eval;
pub mod fuzz;
pub mod jsonl;
pub mod par;
pub mod seed;
pub mod templates;

pub use coord::{
    parse_regions, serialize_box, serialize_point, BBox, BoxValidity, CoordError, Geometry,
    ImageSize, MalformedSpan, Point, Precision, RegionScan, RegionSpan,
};
pub use templates::{TaskKind, Template, TemplateRegistry, TemplateSet};

/// Toolkit version, echoed into manifests and reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
