//! Planar primitives shared by box fitting and evaluation.
//!
//! Coordinates follow image conventions: `x` to the right, `y` down, pixel
//! `(i, j)` has its center at `(i, j)`. Angles are measured from `+x` toward
//! `+y`.

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

const CONTAIN_EPS: f64 = 1e-9;

/// Oriented rectangle. `angle` is the direction of the `major` side in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotatedBox {
    pub center: Point,
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
}

impl RotatedBox {
    /// Build from any two side lengths; the result satisfies `major ≥ minor`
    /// and `angle ∈ [0, π)`. `angle` is the direction of side `side_a`.
    pub fn new(center: Point, side_a: f64, side_b: f64, angle: f64) -> Self {
        let (major, minor, angle) = if side_a >= side_b {
            (side_a, side_b, angle)
        } else {
            (side_b, side_a, angle + PI / 2.0)
        };
        RotatedBox {
            center,
            major: major.max(0.0),
            minor: minor.max(0.0),
            angle: wrap_half_turn(angle),
        }
    }

    /// Axis-aligned box between two extreme corners.
    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let center = Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        RotatedBox::new(center, (x1 - x0).abs(), (y1 - y0).abs(), 0.0)
    }

    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.angle.sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    pub fn area(&self) -> f64 {
        self.major * self.minor
    }

    /// Corners in counter-clockwise order (in a y-up frame; clockwise on screen).
    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let (a, b) = (self.major / 2.0, self.minor / 2.0);
        let c = self.center;
        let at = |su: f64, sv: f64| Point::new(c.x + su * a * u.x + sv * b * v.x, c.y + su * a * u.y + sv * b * v.y);
        [at(-1.0, -1.0), at(1.0, -1.0), at(1.0, 1.0), at(-1.0, 1.0)]
    }

    /// Inclusive point test with a tiny tolerance.
    pub fn contains(&self, p: Point) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center);
        d.dot(u).abs() <= self.major / 2.0 + CONTAIN_EPS && d.dot(v).abs() <= self.minor / 2.0 + CONTAIN_EPS
    }

    /// Closed interval of `x` values on the horizontal line `y` lying inside
    /// the box, or `None` when the line misses it.
    pub fn row_span(&self, y: f64) -> Option<(f64, f64)> {
        let (u, v) = self.axes();
        let dy = y - self.center.y;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (axis, half) in [(u, self.major / 2.0), (v, self.minor / 2.0)] {
            // |dx·axis.x + dy·axis.y| ≤ half
            let half = half + CONTAIN_EPS;
            let off = dy * axis.y;
            if axis.x.abs() < 1e-15 {
                if off.abs() > half {
                    return None;
                }
                continue;
            }
            let a = (-half - off) / axis.x;
            let b = (half - off) / axis.x;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        (lo <= hi).then(|| (lo + self.center.x, hi + self.center.x))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        RotatedBox {
            center: Point::new(self.center.x + dx, self.center.y + dy),
            ..*self
        }
    }

    pub fn polygon(&self) -> Vec<Point> {
        self.corners().to_vec()
    }
}

pub fn wrap_half_turn(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Signed shoelace area (positive for counter-clockwise in a y-up frame).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() / 2.0
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

fn ccw(poly: &[Point]) -> Vec<Point> {
    let mut p = poly.to_vec();
    if signed_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

/// Intersection of two convex polygons (Sutherland–Hodgman, clipping the
/// subject against each edge of `clip`).
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let clip = ccw(clip);
    let mut out = ccw(subject);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b.sub(a);
        let side = |p: Point| edge.cross(p.sub(a));
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Convex hull by Andrew's monotone chain; counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}
