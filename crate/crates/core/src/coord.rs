//! Normalized points and boxes written inside natural-language text.
//!
//! A point prints as `[x, y]` and a box as `[x_min, y_min, x_max, y_max]`,
//! every number normalized by the image size and printed to a fixed number of
//! decimals (3 by default). The parser accepts any whitespace around the
//! commas and reports every bracketed numeric group it finds, valid or not.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordError {
    #[error("coordinate {index} is not finite")]
    NotFinite { index: usize },
    #[error("coordinate {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("pixel coordinate {index} = {value} exceeds image extent {limit}")]
    OutOfBounds { index: usize, value: f64, limit: u32 },
    #[error("inverted {axis} extent: min {min} > max {max}")]
    Inverted { axis: char, min: f64, max: f64 },
    #[error("precision must be 1..=9 decimals, got {0}")]
    InvalidPrecision(u32),
    #[error("image size must be at least 1x1, got {width}x{height}")]
    InvalidImageSize { width: u32, height: u32 },
}

fn check_unit(index: usize, value: f64) -> Result<f64, CoordError> {
    if !value.is_finite() {
        return Err(CoordError::NotFinite { index });
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(CoordError::OutOfRange { index, value });
    }
    Ok(value)
}

/// A normalized center point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct Point {
    x: f64,
    y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self, CoordError> {
        Ok(Point {
            x: check_unit(0, x)?,
            y: check_unit(1, y)?,
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 2]> for Point {
    type Error = CoordError;

    fn try_from([x, y]: [f64; 2]) -> Result<Self, Self::Error> {
        Point::new(x, y)
    }
}

/// A normalized axis-aligned box. Zero-area boxes are representable; see
/// [`BBox::is_degenerate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, CoordError> {
        let x_min = check_unit(0, x_min)?;
        let y_min = check_unit(1, y_min)?;
        let x_max = check_unit(2, x_max)?;
        let y_max = check_unit(3, y_max)?;
        if x_min > x_max {
            return Err(CoordError::Inverted { axis: 'x', min: x_min, max: x_max });
        }
        if y_min > y_max {
            return Err(CoordError::Inverted { axis: 'y', min: y_min, max: y_max });
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() == 0.0
    }

    pub fn center(&self) -> Point {
        Point {
            x: (self.x_min + self.x_max) / 2.0,
            y: (self.y_min + self.y_max) / 2.0,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = CoordError;

    fn try_from([a, b, c, d]: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(a, b, c, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxValidity {
    Ok,
    Degenerate,
    Invalid,
}

/// Classifies four candidate numbers as a box.
pub fn validate_box(candidate: [f64; 4]) -> BoxValidity {
    match BBox::try_from(candidate) {
        Ok(b) if b.is_degenerate() => BoxValidity::Degenerate,
        Ok(_) => BoxValidity::Ok,
        Err(_) => BoxValidity::Invalid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSize")]
pub struct ImageSize {
    width: u32,
    height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, CoordError> {
        if width == 0 || height == 0 {
            return Err(CoordError::InvalidImageSize { width, height });
        }
        Ok(ImageSize { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

#[derive(Deserialize)]
struct RawSize {
    width: u32,
    height: u32,
}

impl TryFrom<RawSize> for ImageSize {
    type Error = CoordError;

    fn try_from(raw: RawSize) -> Result<Self, Self::Error> {
        ImageSize::new(raw.width, raw.height)
    }
}

/// Digits printed after the decimal separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Precision(u32);

impl Precision {
    pub const MIN: u32 = 1;
    pub const MAX: u32 = 9;

    pub fn new(decimals: u32) -> Result<Self, CoordError> {
        if !(Self::MIN..=Self::MAX).contains(&decimals) {
            return Err(CoordError::InvalidPrecision(decimals));
        }
        Ok(Precision(decimals))
    }

    pub fn decimals(self) -> u32 {
        self.0
    }

    /// Largest per-component error introduced by printing at this precision.
    pub fn half_ulp(self) -> f64 {
        0.5 * 10f64.powi(-(self.0 as i32))
    }
}

impl Default for Precision {
    fn default() -> Self {
        Precision(3)
    }
}

impl TryFrom<u32> for Precision {
    type Error = CoordError;

    fn try_from(d: u32) -> Result<Self, Self::Error> {
        Precision::new(d)
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> Self {
        p.0
    }
}

/// Prints `value` with exactly `decimals` fractional digits, rounding the
/// shortest round-trip decimal form to nearest with ties away from zero.
pub fn format_fixed(value: f64, decimals: u32) -> String {
    debug_assert!(value.is_finite());
    let decimals = decimals as usize;
    let shortest = format!("{}", value.abs());
    let (int_part, frac_part) = match shortest.split_once('.') {
        Some((i, f)) => (i, f),
        None => (shortest.as_str(), ""),
    };
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let int_len = digits.len();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend(frac.iter().take(decimals));
    digits.resize(int_len + decimals, 0);

    // Shortest form carries no trailing zeros, so a first dropped digit of 5
    // or more is at or above the halfway point.
    if frac.get(decimals).is_some_and(|&d| d >= 5) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let is_zero = digits.iter().all(|&d| d == 0);
    let mut out = String::with_capacity(digits.len() + 2);
    if value.is_sign_negative() && !is_zero {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| (b'0' + d) as char));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| (b'0' + d) as char));
    }
    out
}

fn write_numbers(values: &[f64], prec: Precision) -> String {
    let parts: Vec<String> = values
        .iter()
        .map(|&v| format_fixed(v, prec.decimals()))
        .collect();
    format!("[{}]", parts.join(", "))
}

pub fn serialize_point(p: Point, prec: Precision) -> String {
    write_numbers(&p.to_array(), prec)
}

pub fn serialize_box(b: BBox, prec: Precision) -> String {
    write_numbers(&b.to_array(), prec)
}

/// A point or a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Point(Point),
    Box(BBox),
}

impl Geometry {
    pub fn serialize(&self, prec: Precision) -> String {
        match self {
            Geometry::Point(p) => serialize_point(*p, prec),
            Geometry::Box(b) => serialize_box(*b, prec),
        }
    }

    pub fn as_box(&self) -> Option<BBox> {
        match self {
            Geometry::Box(b) => Some(*b),
            Geometry::Point(_) => None,
        }
    }

    pub fn as_point(&self) -> Option<Point> {
        match self {
            Geometry::Point(p) => Some(*p),
            Geometry::Box(_) => None,
        }
    }

    pub fn components(&self) -> Vec<f64> {
        match self {
            Geometry::Point(p) => p.to_array().to_vec(),
            Geometry::Box(b) => b.to_array().to_vec(),
        }
    }
}

impl From<Point> for Geometry {
    fn from(p: Point) -> Self {
        Geometry::Point(p)
    }
}

impl From<BBox> for Geometry {
    fn from(b: BBox) -> Self {
        Geometry::Box(b)
    }
}

/// A well-formed coordinate group located in a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpan {
    pub byte_start: usize,
    pub byte_end: usize,
    pub raw_text: String,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Malformation {
    /// Bracketed numbers whose count is neither 2 nor 4.
    Arity { count: usize },
    Invalid { detail: String },
}

impl fmt::Display for Malformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Malformation::Arity { count } => write!(f, "expected 2 or 4 numbers, found {count}"),
            Malformation::Invalid { detail } => f.write_str(detail),
        }
    }
}

/// A bracketed numeric group that is not a valid point or box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedSpan {
    pub byte_start: usize,
    pub byte_end: usize,
    pub raw_text: String,
    pub values: Vec<f64>,
    pub reason: Malformation,
}

/// Result of scanning a text for coordinate groups. Both lists are in byte
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionScan {
    pub spans: Vec<RegionSpan>,
    pub malformed: Vec<MalformedSpan>,
}

impl RegionScan {
    pub fn is_clean(&self) -> bool {
        self.malformed.is_empty()
    }

    pub fn first_box(&self) -> Option<BBox> {
        self.spans.iter().find_map(|s| s.geometry.as_box())
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.spans.iter().filter_map(|s| s.geometry.as_point())
    }

    pub fn boxes(&self) -> impl Iterator<Item = BBox> + '_ {
        self.spans.iter().filter_map(|s| s.geometry.as_box())
    }
}

static BRACKET_GROUP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\[\]]*)\]").unwrap());

static NUMERIC_LIST: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)";
    Regex::new(&format!(r"^\s*{num}(?:\s*,\s*{num})*\s*$")).unwrap()
});

fn classify(values: &[f64]) -> Result<Geometry, Malformation> {
    let invalid = |e: CoordError| Malformation::Invalid { detail: e.to_string() };
    match *values {
        [x, y] => Point::new(x, y).map(Geometry::Point).map_err(invalid),
        [a, b, c, d] => BBox::new(a, b, c, d).map(Geometry::Box).map_err(invalid),
        _ => Err(Malformation::Arity { count: values.len() }),
    }
}

/// Finds every bracketed numeric group in `text`.
///
/// Groups whose contents are not purely comma-separated numbers (for example
/// `[x0,y0,x1,y1]` in a prompt) are not coordinates and are skipped. Numeric
/// groups of the wrong arity or with values outside `[0, 1]` are reported in
/// [`RegionScan::malformed`].
pub fn parse_regions(text: &str) -> RegionScan {
    let mut scan = RegionScan::default();
    for caps in BRACKET_GROUP.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let inner = caps.get(1).unwrap().as_str();
        if !NUMERIC_LIST.is_match(inner) {
            continue;
        }
        let values: Vec<f64> = inner
            .split(',')
            .map(|s| s.trim().parse::<f64>().expect("numeric list regex admits only f64 literals"))
            .collect();
        match classify(&values) {
            Ok(geometry) => scan.spans.push(RegionSpan {
                byte_start: whole.start(),
                byte_end: whole.end(),
                raw_text: whole.as_str().to_string(),
                geometry,
            }),
            Err(reason) => scan.malformed.push(MalformedSpan {
                byte_start: whole.start(),
                byte_end: whole.end(),
                raw_text: whole.as_str().to_string(),
                values,
                reason,
            }),
        }
    }
    scan
}

fn check_pixel(index: usize, value: f64, limit: u32) -> Result<f64, CoordError> {
    if !value.is_finite() {
        return Err(CoordError::NotFinite { index });
    }
    if value < 0.0 || value > limit as f64 {
        return Err(CoordError::OutOfBounds { index, value, limit });
    }
    Ok(value)
}

/// Divides pixel coordinates `[x_min, y_min, x_max, y_max]` by the image size.
pub fn normalize_box(pixel: [f64; 4], size: ImageSize) -> Result<BBox, CoordError> {
    let (w, h) = (size.width(), size.height());
    let x0 = check_pixel(0, pixel[0], w)?;
    let y0 = check_pixel(1, pixel[1], h)?;
    let x1 = check_pixel(2, pixel[2], w)?;
    let y1 = check_pixel(3, pixel[3], h)?;
    if x0 > x1 {
        return Err(CoordError::Inverted { axis: 'x', min: x0, max: x1 });
    }
    if y0 > y1 {
        return Err(CoordError::Inverted { axis: 'y', min: y0, max: y1 });
    }
    BBox::new(x0 / w as f64, y0 / h as f64, x1 / w as f64, y1 / h as f64)
}

pub fn normalize_point(pixel: [f64; 2], size: ImageSize) -> Result<Point, CoordError> {
    let x = check_pixel(0, pixel[0], size.width())?;
    let y = check_pixel(1, pixel[1], size.height())?;
    Point::new(x / size.width() as f64, y / size.height() as f64)
}

pub fn denormalize_box(b: BBox, size: ImageSize) -> [f64; 4] {
    let (w, h) = (size.width() as f64, size.height() as f64);
    [b.x_min * w, b.y_min * h, b.x_max * w, b.y_max * h]
}

pub fn denormalize_point(p: Point, size: ImageSize) -> [f64; 2] {
    [p.x * size.width() as f64, p.y * size.height() as f64]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p3() -> Precision {
        Precision::default()
    }

    fn bbox(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    fn close(a: [f64; 4], b: [f64; 4]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn normalize_examples() {
        let s = ImageSize::new(640, 480).unwrap();
        assert_eq!(normalize_box([0.0, 0.0, 640.0, 480.0], s).unwrap(), bbox(0.0, 0.0, 1.0, 1.0));
        assert_eq!(
            normalize_box([160.0, 120.0, 480.0, 360.0], s).unwrap(),
            bbox(0.25, 0.25, 0.75, 0.75)
        );
        let k = ImageSize::new(1000, 1000).unwrap();
        // manual division: 123/1000, 45/1000, 456/1000, 78/1000
        let got = normalize_box([123.0, 45.0, 456.0, 78.0], k).unwrap();
        assert!(close(got.to_array(), [0.123, 0.045, 0.456, 0.078]));
    }

    #[test]
    fn normalize_errors() {
        let s = ImageSize::new(100, 100).unwrap();
        assert!(matches!(
            normalize_box([0.0, 0.0, 101.0, 50.0], s),
            Err(CoordError::OutOfBounds { index: 2, .. })
        ));
        assert!(matches!(
            normalize_box([60.0, 0.0, 50.0, 50.0], s),
            Err(CoordError::Inverted { axis: 'x', .. })
        ));
        assert!(ImageSize::new(0, 5).is_err());
    }

    #[test]
    fn denormalize_examples() {
        let s = ImageSize::new(640, 480).unwrap();
        assert_eq!(denormalize_box(bbox(0.0, 0.0, 1.0, 1.0), s), [0.0, 0.0, 640.0, 480.0]);
        let c = ImageSize::new(100, 100).unwrap();
        assert_eq!(denormalize_box(bbox(0.5, 0.5, 0.5, 0.5), c), [50.0; 4]);
        let k = ImageSize::new(1000, 1000).unwrap();
        assert!(close(
            denormalize_box(bbox(0.123, 0.045, 0.456, 0.078), k),
            [123.0, 45.0, 456.0, 78.0]
        ));
    }

    #[test]
    fn serialize_point_examples() {
        assert_eq!(serialize_point(Point::new(0.268, 0.372).unwrap(), p3()), "[0.268, 0.372]");
        assert_eq!(serialize_point(Point::new(0.0, 0.0).unwrap(), p3()), "[0.000, 0.000]");
        assert_eq!(
            serialize_point(Point::new(0.12345, 0.99999).unwrap(), p3()),
            "[0.123, 1.000]"
        );
    }

    #[test]
    fn serialize_box_examples() {
        assert_eq!(serialize_box(bbox(0.0, 0.0, 1.0, 1.0), p3()), "[0.000, 0.000, 1.000, 1.000]");
        let p2 = Precision::new(2).unwrap();
        assert_eq!(serialize_box(bbox(0.25, 0.25, 0.75, 0.75), p2), "[0.25, 0.25, 0.75, 0.75]");
        assert_eq!(
            serialize_box(bbox(0.1234, 0.5678, 0.9, 0.95), p3()),
            "[0.123, 0.568, 0.900, 0.950]"
        );
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        assert_eq!(format_fixed(0.125, 2), "0.13");
        assert_eq!(format_fixed(0.1235, 3), "0.124");
        assert_eq!(format_fixed(0.0005, 3), "0.001");
        assert_eq!(format_fixed(0.00049, 3), "0.000");
        assert_eq!(format_fixed(0.9995, 3), "1.000");
        assert_eq!(format_fixed(1.0, 1), "1.0");
        assert_eq!(format_fixed(1e-7, 9), "0.000000100");
        assert_eq!(format_fixed(-0.125, 2), "-0.13");
        assert_eq!(format_fixed(-0.0001, 2), "0.00");
        assert_eq!(format_fixed(99.96, 1), "100.0");
    }

    #[test]
    fn precision_bounds() {
        assert!(Precision::new(0).is_err());
        assert!(Precision::new(10).is_err());
        assert_eq!(Precision::new(9).unwrap().decimals(), 9);
        assert_eq!(Precision::default().decimals(), 3);
    }

    #[test]
    fn parses_reply_sentence() {
        let text = "The jacket [0.268, 0.372] is green. We can find a T-shirt [0.653, 0.532] \
                    and cropped pants [0.569, 0.101]";
        let scan = parse_regions(text);
        assert!(scan.is_clean());
        let pts: Vec<[f64; 2]> = scan.points().map(|p| p.to_array()).collect();
        assert_eq!(pts, vec![[0.268, 0.372], [0.653, 0.532], [0.569, 0.101]]);
        for s in &scan.spans {
            assert_eq!(&text[s.byte_start..s.byte_end], s.raw_text);
        }
    }

    #[test]
    fn no_coordinates() {
        let scan = parse_regions("no coordinates here");
        assert!(scan.spans.is_empty() && scan.malformed.is_empty());
    }

    #[test]
    fn malformed_groups_are_reported() {
        let scan = parse_regions("[0.1,0.2,0.3] and [1.5, 0.2]");
        assert!(scan.spans.is_empty());
        assert_eq!(scan.malformed.len(), 2);
        assert_eq!(scan.malformed[0].reason, Malformation::Arity { count: 3 });
        assert!(matches!(scan.malformed[1].reason, Malformation::Invalid { .. }));
        assert_eq!(scan.malformed[1].raw_text, "[1.5, 0.2]");
        assert!(scan.malformed[0].byte_start < scan.malformed[1].byte_start);
    }

    #[test]
    fn placeholders_in_prompts_are_not_coordinates() {
        let scan = parse_regions("include the coordinates [x0,y0,x1,y1] and [cx, cy] and []");
        assert!(scan.spans.is_empty() && scan.malformed.is_empty());
    }

    #[test]
    fn parser_accepts_loose_whitespace() {
        let scan = parse_regions("box [ 0.1 ,0.2,\t0.3 ,\n 0.4 ] here");
        assert_eq!(scan.first_box().unwrap(), bbox(0.1, 0.2, 0.3, 0.4));
    }

    #[test]
    fn inverted_box_in_text_is_malformed() {
        let scan = parse_regions("[0.4, 0.4, 0.2, 0.9]");
        assert_eq!(scan.malformed.len(), 1);
    }

    #[test]
    fn validate_box_examples() {
        assert_eq!(validate_box([0.1, 0.1, 0.3, 0.3]), BoxValidity::Ok);
        assert_eq!(validate_box([0.5, 0.5, 0.5, 0.9]), BoxValidity::Degenerate);
        assert_eq!(validate_box([0.4, 0.4, 0.2, 0.9]), BoxValidity::Invalid);
        assert_eq!(validate_box([f64::NAN, 0.4, 0.5, 0.9]), BoxValidity::Invalid);
    }

    #[test]
    fn geometry_serde_shape() {
        let g = Geometry::Box(bbox(0.1, 0.2, 0.3, 0.4));
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"box":[0.1,0.2,0.3,0.4]}"#);
        assert_eq!(serde_json::from_str::<Geometry>(&s).unwrap(), g);
        assert!(serde_json::from_str::<Geometry>(r#"{"point":[1.2,0.0]}"#).is_err());
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    fn any_geometry() -> impl Strategy<Value = Geometry> {
        prop_oneof![
            (unit(), unit()).prop_map(|(x, y)| Geometry::Point(Point::new(x, y).unwrap())),
            (unit(), unit(), unit(), unit()).prop_map(|(a, b, c, d)| {
                Geometry::Box(BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap())
            }),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(g in any_geometry(), d in 1u32..=9) {
            let prec = Precision::new(d).unwrap();
            let text = g.serialize(prec);
            let scan = parse_regions(&text);
            prop_assert!(scan.is_clean());
            prop_assert_eq!(scan.spans.len(), 1);
            let back = scan.spans[0].geometry;
            for (a, b) in g.components().iter().zip(back.components()) {
                prop_assert!((a - b).abs() <= prec.half_ulp() * (1.0 + 1e-9));
            }
            // idempotent
            prop_assert_eq!(back.serialize(prec), text);
        }

        #[test]
        fn prefix_shifts_offsets(g in any_geometry(), prefix in "[a-zA-Z ,.!?éü]{0,40}", suffix in "[a-z .]{0,20}") {
            let body = format!("see {} ok{}", g.serialize(Precision::default()), suffix);
            let base = parse_regions(&body);
            let shifted = parse_regions(&format!("{prefix}{body}"));
            prop_assert_eq!(base.spans.len(), shifted.spans.len());
            for (a, b) in base.spans.iter().zip(&shifted.spans) {
                prop_assert_eq!(a.byte_start + prefix.len(), b.byte_start);
                prop_assert_eq!(a.byte_end + prefix.len(), b.byte_end);
                prop_assert_eq!(&a.raw_text, &b.raw_text);
                prop_assert_eq!(a.geometry, b.geometry);
            }
        }

        #[test]
        fn pixel_round_trip(w in 1u32..5000, h in 1u32..5000, fx in 0.0f64..=1.0, fy in 0.0f64..=1.0, gx in 0.0f64..=1.0, gy in 0.0f64..=1.0) {
            let size = ImageSize::new(w, h).unwrap();
            let px = [
                (fx.min(gx) * w as f64).round(),
                (fy.min(gy) * h as f64).round(),
                (fx.max(gx) * w as f64).round(),
                (fy.max(gy) * h as f64).round(),
            ];
            let back = denormalize_box(normalize_box(px, size).unwrap(), size);
            for (a, b) in px.iter().zip(back) {
                prop_assert!((a - b).abs() <= 0.5);
            }
        }
    }
}
