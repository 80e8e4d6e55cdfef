use crate::coord::BBox;

/// Intersection over union. Zero when the union has no area, which covers
/// two identical degenerate boxes.
pub fn iou(a: BBox, b: BBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
