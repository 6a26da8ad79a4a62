//! Brute-force geometry: dense sampling against the collision ellipse and
//! exact convex clipping for the body rectangle.

use acc_core::{Point64, VehicleParams64, VehicleState64};

/// Interior sampling pitch of the dense collision oracle (m).
pub const DENSE_PITCH: f64 = 0.01;

fn cross(o: Point64, a: Point64, b: Point64) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn counterclockwise(poly: &[Point64]) -> Vec<Point64> {
    let area: f64 = (0..poly.len())
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    let mut out = poly.to_vec();
    if area < 0.0 {
        out.reverse();
    }
    out
}

/// Point in (or on) a convex polygon of either orientation.
pub fn inside_convex(poly: &[Point64], p: Point64) -> bool {
    let ccw = counterclockwise(poly);
    (0..ccw.len()).all(|i| cross(ccw[i], ccw[(i + 1) % ccw.len()], p) >= 0.0)
}

/// `sqrt((u/a)^2 + (w/b)^2)` of a world point in the frame of `z`; values at
/// or below one lie in the ellipse.
pub fn ellipse_level(z: &VehicleState64, a: f64, b: f64, p: Point64) -> f64 {
    let (dx, dy) = (p.x - z.x, p.y - z.y);
    let (s, c) = z.theta.sin_cos();
    let u = c * dx + s * dy;
    let w = -s * dx + c * dy;
    ((u / a).powi(2) + (w / b).powi(2)).sqrt()
}

/// Every grid point of pitch `pitch` inside the polygon, plus its boundary
/// sampled at the same pitch.
pub fn dense_samples(poly: &[Point64], pitch: f64) -> Vec<Point64> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let mut out = Vec::new();
    let nx = ((x1 - x0) / pitch).floor() as usize;
    let ny = ((y1 - y0) / pitch).floor() as usize;
    for i in 0..=nx {
        for j in 0..=ny {
            let p = Point64::new(x0 + i as f64 * pitch, y0 + j as f64 * pitch);
            if inside_convex(poly, p) {
                out.push(p);
            }
        }
    }
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        let k = (len / pitch).ceil().max(1.0) as usize;
        for t in 0..k {
            let f = t as f64 / k as f64;
            out.push(Point64::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseVerdict {
    pub collides: bool,
    /// Smallest ellipse level over the samples.
    pub min_level: f64,
    /// `b |min_level - 1|`: a lower bound on the gap when separated, and the
    /// depth along the short axis when overlapping (m).
    pub margin: f64,
}

/// Samples the obstacle at [`DENSE_PITCH`] and tests every sample against the
/// collision ellipse of the vehicle at `z`.
pub fn dense_collision(z: &VehicleState64, poly: &[Point64], params: &VehicleParams64) -> DenseVerdict {
    let a = params.body_length * 0.5 * std::f64::consts::SQRT_2;
    let b = params.body_width * 0.5 * std::f64::consts::SQRT_2;
    let min_level = dense_samples(poly, DENSE_PITCH)
        .into_iter()
        .map(|p| ellipse_level(z, a, b, p))
        .fold(f64::INFINITY, f64::min);
    DenseVerdict {
        collides: min_level <= 1.0,
        min_level,
        margin: b.min(a) * (min_level - 1.0).abs(),
    }
}

/// Corners of the body rectangle at `z`, counterclockwise.
pub fn body_rectangle(z: &VehicleState64, params: &VehicleParams64) -> Vec<Point64> {
    let (hl, hw) = (params.body_length * 0.5, params.body_width * 0.5);
    let (s, c) = z.theta.sin_cos();
    [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)]
        .iter()
        .map(|&(u, w)| Point64::new(z.x + c * u - s * w, z.y + s * u + c * w))
        .collect()
}

/// Sutherland-Hodgman: `subject` clipped by the convex polygon `clip`.
/// Points on a clip edge are kept, so touching polygons give a degenerate but
/// non-empty result.
pub fn clip_convex(subject: &[Point64], clip: &[Point64]) -> Vec<Point64> {
    let clip = counterclockwise(clip);
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(e0, e1, cur), cross(e0, e1, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: Point64, q: Point64, dp: f64, dq: f64) -> Point64 {
    let t = dp / (dp - dq);
    Point64::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

pub fn polygon_area(poly: &[Point64]) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
        .abs()
        * 0.5
}

/// True when the body rectangle at `z` touches or overlaps the obstacle.
pub fn body_hits(z: &VehicleState64, params: &VehicleParams64, obstacle: &[Point64]) -> bool {
    !clip_convex(&body_rectangle(z, params), obstacle).is_empty()
}
