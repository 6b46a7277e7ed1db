//! Direct least-squares ellipse fit (numerically stable block form of
//! Fitzgibbon's constrained conic fit).

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::geometry::{Point, RotatedBox};

/// Geometric ellipse: semi-axes `a ≥ b`, `angle` of the `a` axis in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: Point,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Circumscribed box: sides `(2a, 2b)` along the ellipse axes.
    pub fn bounding_box(&self) -> RotatedBox {
        RotatedBox::new(self.center, 2.0 * self.a, 2.0 * self.b, self.angle)
    }
}

/// Fit an ellipse to ≥ 6 points. Returns `None` when the points are
/// degenerate or the best conic is not an ellipse.
pub fn fit_ellipse_points(points: &[Point]) -> Option<Ellipse> {
    if points.len() < 6 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let spread = points
        .iter()
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if spread < 1e-9 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / spread;

    // Scatter blocks for quadratic terms [x², xy, y²] and linear terms [x, y, 1].
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p.x - mx) * s, (p.y - my) * s);
        let q = Vector3::new(x * x, x * y, y * y);
        let l = Vector3::new(x, y, 1.0);
        s1 += q * q.transpose();
        s2 += q * l.transpose();
        s3 += l * l.transpose();
    }
    let s3_inv = s3.try_inverse()?;
    let t = -s3_inv * s2.transpose();
    let reduced = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
    let m = Matrix3::new(
        reduced[(2, 0)] / 2.0,
        reduced[(2, 1)] / 2.0,
        reduced[(2, 2)] / 2.0,
        -reduced[(1, 0)],
        -reduced[(1, 1)],
        -reduced[(1, 2)],
        reduced[(0, 0)] / 2.0,
        reduced[(0, 1)] / 2.0,
        reduced[(0, 2)] / 2.0,
    );

    let mut best: Option<Vector3<f64>> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(m - Matrix3::identity() * ev.re)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            best = Some(v);
            break;
        }
    }
    let a1 = best?;
    let a2 = t * a1;
    let conic = denormalize([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]], mx, my, s);
    conic_to_ellipse(conic)
}

/// Kernel direction of a rank-2 3×3 matrix from the largest row cross product.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let cands = [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])];
    let best = cands
        .iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let n = best.norm();
    (n > 1e-300).then(|| best / n)
}

fn denormalize(c: [f64; 6], mx: f64, my: f64, s: f64) -> [f64; 6] {
    let [a, b, cc, d, e, f] = c;
    let s2 = s * s;
    [
        a * s2,
        b * s2,
        cc * s2,
        -2.0 * a * s2 * mx - b * s2 * my + d * s,
        -b * s2 * mx - 2.0 * cc * s2 * my + e * s,
        a * s2 * mx * mx + b * s2 * mx * my + cc * s2 * my * my - d * s * mx - e * s * my + f,
    ]
}

/// Geometric parameters of `A x² + B xy + C y² + D x + E y + F = 0`.
pub fn conic_to_ellipse(c: [f64; 6]) -> Option<Ellipse> {
    let [a, b, cc, d, e, f] = c;
    let det = 4.0 * a * cc - b * b;
    if det <= 0.0 {
        return None;
    }
    let x0 = (b * e - 2.0 * cc * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let f0 = a * x0 * x0 + b * x0 * y0 + cc * y0 * y0 + d * x0 + e * y0 + f;
    let q = Matrix2::new(a, b / 2.0, b / 2.0, cc);
    let eig = q.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let r0 = -f0 / l0;
    let r1 = -f0 / l1;
    if !(r0 > 0.0 && r1 > 0.0) {
        return None;
    }
    let (ax0, ax1) = (r0.sqrt(), r1.sqrt());
    // The major axis belongs to the smaller eigenvalue.
    let (major, minor, col) = if ax0 >= ax1 { (ax0, ax1, 0) } else { (ax1, ax0, 1) };
    let v = eig.eigenvectors.column(col);
    let angle = crate::geometry::wrap_half_turn(v[1].atan2(v[0]));
    Some(Ellipse {
        center: Point::new(x0, y0),
        a: major,
        b: minor,
        angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_points_on_exact_ellipse() {
        let (cx, cy, a, b, th) = (12.0, -3.0, 9.0, 4.0, 0.7f64);
        let pts: Vec<Point> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.157;
                let (x, y) = (a * t.cos(), b * t.sin());
                Point::new(cx + x * th.cos() - y * th.sin(), cy + x * th.sin() + y * th.cos())
            })
            .collect();
        let e = fit_ellipse_points(&pts).unwrap();
        assert!((e.center.x - cx).abs() < 1e-6 && (e.center.y - cy).abs() < 1e-6);
        assert!((e.a - a).abs() < 1e-6 && (e.b - b).abs() < 1e-6);
        assert!((e.angle - th).abs() < 1e-6);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(fit_ellipse_points(&pts).is_none());
    }
}
