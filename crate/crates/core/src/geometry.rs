use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    /// Expresses a world point in the frame located at `origin` with heading `theta`.
    pub fn to_local(self, origin: Self, theta: T) -> Self {
        let (sin, cos) = theta.sin_cos();
        let d = self - origin;
        Self::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y)
    }

    pub fn to_world(self, origin: Self, theta: T) -> Self {
        let (sin, cos) = theta.sin_cos();
        Self::new(
            origin.x + cos * self.x - sin * self.y,
            origin.y + sin * self.x + cos * self.y,
        )
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned ellipse centered at the origin of the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse<T> {
    /// Semi-axis along the vehicle's longitudinal direction.
    pub a: T,
    /// Semi-axis along the lateral direction.
    pub b: T,
}

impl<T: Scalar> Ellipse<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }

    /// Boundary points count as contained.
    pub fn contains(&self, p: Point2<T>) -> bool {
        ellipse_contains(p, self.a, self.b)
    }
}

/// True iff `(p.x / a)^2 + (p.y / b)^2 <= 1`.
pub fn ellipse_contains<T: Scalar>(p: Point2<T>, a: T, b: T) -> bool {
    let u = p.x / a;
    let w = p.y / b;
    u * u + w * w <= T::one()
}

/// Static convex obstacle in world coordinates, vertices counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle<T> {
    vertices: Vec<Point2<T>>,
}

impl<T: Scalar> Obstacle<T> {
    /// Validates a convex polygon. Clockwise input is reversed; collinear or
    /// reflex corners are rejected.
    pub fn new(mut vertices: Vec<Point2<T>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidObstacle(format!(
                "needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidObstacle("non-finite vertex".into()));
        }
        if signed_area(&vertices) < T::zero() {
            vertices.reverse();
        }
        let n = vertices.len();
        let mut scale = T::zero();
        for p in &vertices {
            scale = scale.max(p.x.abs()).max(p.y.abs());
        }
        let tol = T::epsilon() * T::lit(16.0) * (T::one() + scale * scale);
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            if (cur - prev).cross(next - cur) <= tol {
                return Err(Error::InvalidObstacle(format!(
                    "not strictly convex at vertex {i}"
                )));
            }
        }
        // A strictly left-turning closed polygon can still wind more than once.
        let mut turning = T::zero();
        for i in 0..n {
            let e0 = vertices[(i + 1) % n] - vertices[i];
            let e1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
            turning += e0.cross(e1).atan2(e0.dot(e1));
        }
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        if (turning - two_pi).abs() > T::lit(1e-3) {
            return Err(Error::InvalidObstacle("self-intersecting polygon".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle centered at `(cx, cy)`.
    pub fn rectangle(cx: T, cy: T, length: T, width: T) -> Result<Self> {
        let hl = length * T::half();
        let hw = width * T::half();
        Self::new(vec![
            Point2::new(cx - hl, cy - hw),
            Point2::new(cx + hl, cy - hw),
            Point2::new(cx + hl, cy + hw),
            Point2::new(cx - hl, cy + hw),
        ])
    }

    pub fn vertices(&self) -> &[Point2<T>] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn centroid(&self) -> Point2<T> {
        let n = T::from_usize(self.vertices.len()).unwrap();
        let sum = self
            .vertices
            .iter()
            .fold(Point2::default(), |acc, &p| acc + p);
        sum * (T::one() / n)
    }

    /// Radius of the circle around `centroid()` that encloses every vertex.
    pub fn bounding_radius(&self) -> T {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|&p| (p - c).norm())
            .fold(T::zero(), T::max)
    }

    /// Inclusive point-in-polygon test.
    pub fn contains(&self, p: Point2<T>) -> bool {
        self.edges().all(|(a, b)| (b - a).cross(p - a) >= T::zero())
    }

    /// Vertices plus points along every edge with spacing no larger than `spacing`.
    pub fn boundary_samples(&self, spacing: T) -> Vec<Point2<T>> {
        let mut out = Vec::new();
        for (a, b) in self.edges() {
            let len = (b - a).norm();
            let pieces = (len / spacing).ceil().to_usize().unwrap_or(1).max(1);
            let step = T::one() / T::from_usize(pieces).unwrap();
            for k in 0..pieces {
                let t = step * T::from_usize(k).unwrap();
                out.push(a + (b - a) * t);
            }
        }
        out
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point2::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    /// Applies the rigid transform `p -> R(angle) p + (dx, dy)`.
    pub fn transformed(&self, angle: T, dx: T, dy: T) -> Self {
        let origin = Point2::new(dx, dy);
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|&p| p.to_world(origin, angle))
                .collect(),
        }
    }
}

fn signed_area<T: Scalar>(vertices: &[Point2<T>]) -> T {
    let n = vertices.len();
    let mut area = T::zero();
    for i in 0..n {
        area += vertices[i].cross(vertices[(i + 1) % n]);
    }
    area * T::half()
}
