//! Exact body-rectangle clearance against convex obstacle polygons
//! (separating axis test plus segment distances).

use acc_core::{Obstacle64, Point64, VehicleParams64, VehicleState64};

/// Corners of the vehicle body, counter-clockwise, centered on the state's
/// reference point.
pub fn body_polygon(z: &VehicleState64, params: &VehicleParams64) -> [Point64; 4] {
    let (hl, hw) = (params.body_length / 2.0, params.body_width / 2.0);
    let origin = Point64::new(z.x, z.y);
    [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)]
        .map(|(x, y)| Point64::new(x, y).to_world(origin, z.theta))
}

fn project(poly: &[Point64], axis: Point64) -> (f64, f64) {
    poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

fn edge_normals(poly: &[Point64]) -> impl Iterator<Item = Point64> + '_ {
    (0..poly.len()).filter_map(move |i| {
        let e = poly[(i + 1) % poly.len()] - poly[i];
        let n = e.norm();
        (n > 0.0).then(|| Point64::new(e.y / n, -e.x / n))
    })
}

/// Smallest overlap of the two projections over all edge normals; negative
/// when some axis separates the polygons. Touching counts as overlap zero.
fn min_overlap(a: &[Point64], b: &[Point64]) -> f64 {
    edge_normals(a)
        .chain(edge_normals(b))
        .map(|axis| {
            let (a0, a1) = project(a, axis);
            let (b0, b1) = project(b, axis);
            a1.min(b1) - a0.max(b0)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn polygons_intersect(a: &[Point64], b: &[Point64]) -> bool {
    min_overlap(a, b) >= 0.0
}

fn point_segment_distance(p: Point64, a: Point64, b: Point64) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Distance between two convex polygons when disjoint, otherwise minus the
/// penetration depth along the best separating-axis candidate.
pub fn signed_clearance(a: &[Point64], b: &[Point64]) -> f64 {
    let overlap = min_overlap(a, b);
    if overlap >= 0.0 {
        return -overlap;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for &v in p {
            for i in 0..q.len() {
                best = best.min(point_segment_distance(v, q[i], q[(i + 1) % q.len()]));
            }
        }
    }
    best
}

/// Minimum signed clearance of the body over all obstacles (`inf` without obstacles).
pub fn body_clearance(z: &VehicleState64, params: &VehicleParams64, obstacles: &[Obstacle64]) -> f64 {
    let body = body_polygon(z, params);
    obstacles
        .iter()
        .map(|o| signed_clearance(&body, o.vertices()))
        .fold(f64::INFINITY, f64::min)
}
