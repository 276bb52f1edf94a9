//! Capsule and ellipsoid geometry in voxel coordinates.

pub type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(a: P3, t: f64, d: P3) -> P3 {
    [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]]
}

pub fn dist(a: P3, b: P3) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: P3, a: P3, b: P3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 { 0.0 } else { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) };
    dist(p, axpy(a, t, ab))
}

/// Minimum distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_distance(p1: P3, q1: P3, p2: P3, q2: P3) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let eps = 1e-12;
    let (s, t);
    if a <= eps && e <= eps {
        return dist(p1, p2);
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    dist(axpy(p1, s, d1), axpy(p2, t, d2))
}

/// Axis-aligned ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: P3,
    pub semi_axes: P3,
}

impl Ellipsoid {
    /// `sum ((p - c) / s)^2`; inside when `<= 1`.
    pub fn level(&self, p: P3) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2)).sum()
    }

    pub fn contains(&self, p: P3) -> bool {
        self.level(p) <= 1.0
    }

    /// The ellipsoid with every semi-axis reduced by `margin`, or `None` when
    /// nothing is left.
    pub fn shrunk(&self, margin: f64) -> Option<Ellipsoid> {
        let s = self.semi_axes.map(|v| v - margin);
        s.iter().all(|&v| v > 0.0).then_some(Ellipsoid {
            center: self.center,
            semi_axes: s,
        })
    }
}
