//! Planar pose and velocity types shared by every layer of the stack.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Robot pose in the world/map frame. `theta` is kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    /// Applies a motion expressed in this pose's frame.
    pub fn compose(&self, delta: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.theta + delta.theta,
        )
    }

    /// Inverse of [`compose`](Self::compose): the motion taking `self` to `other`,
    /// expressed in `self`'s frame.
    pub fn relative_to(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }
}

/// Velocity command: linear `v` (m/s) and angular `w` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub v: f64,
    pub w: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.w == 0.0
    }
}

/// Actuation envelope of the chair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            w_max: 1.5,
        }
    }
}

impl VelocityLimits {
    pub fn clamp(&self, t: Twist2D) -> Twist2D {
        Twist2D {
            v: clamp_finite(t.v, self.v_max),
            w: clamp_finite(t.w, self.w_max),
        }
    }

    pub fn contains(&self, t: &Twist2D) -> bool {
        t.v.abs() <= self.v_max && t.w.abs() <= self.w_max
    }
}

fn clamp_finite(x: f64, bound: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-bound, bound)
    }
}

/// Distance from point `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_boundaries() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn clamp_respects_limits() {
        let l = VelocityLimits::default();
        assert_eq!(l.clamp(Twist2D::new(2.0, -9.0)), Twist2D::new(0.5, -1.5));
        assert_eq!(l.clamp(Twist2D::new(f64::NAN, 0.2)), Twist2D::new(0.0, 0.2));
    }

    proptest! {
        #[test]
        fn normalized_range(a in -1e4f64..1e4) {
            let n = normalize_angle(a);
            prop_assert!(n > -PI && n <= PI);
            prop_assert!(((a - n) / TAU - ((a - n) / TAU).round()).abs() < 1e-9);
        }

        #[test]
        fn compose_then_relative(x in -10.0f64..10.0, y in -10.0f64..10.0, t in -3.0f64..3.0,
                                 dx in -2.0f64..2.0, dy in -2.0f64..2.0, dt in -3.0f64..3.0) {
            let a = Pose2D::new(x, y, t);
            let d = Pose2D::new(dx, dy, dt);
            let b = a.compose(&d);
            let r = a.relative_to(&b);
            prop_assert!((r.x - d.x).abs() < 1e-9 && (r.y - d.y).abs() < 1e-9);
            prop_assert!(normalize_angle(r.theta - d.theta).abs() < 1e-9);
        }
    }
}
