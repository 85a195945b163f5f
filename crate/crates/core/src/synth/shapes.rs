//! Procedural foreground shapes, rasterized by testing pixel coordinates.

use std::f64::consts::{PI, TAU};

use crate::binio::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    RoundedRect,
    Disc,
    Triangle,
    Cross,
    Ring,
    Star,
}

impl ShapeKind {
    /// Elongated ellipses and near-square rectangles keep the two marker
    /// scenario classes apart by outline alone.
    pub fn aspect_range(self) -> std::ops::Range<f64> {
        match self {
            ShapeKind::Ellipse => 0.7..0.95,
            ShapeKind::RoundedRect => 0.45..0.7,
            _ => 0.55..0.85,
        }
    }
}

/// A shape placed in image coordinates. `radius` bounds the shape: every
/// inside point lies within `radius` of the center.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub radius: f64,
    /// Minor/major extent ratio for the ellipse and rounded rectangle.
    pub aspect: f64,
    pub rotation: f64,
}

impl Placement {
    pub fn contains(&self, i: f64, j: f64) -> bool {
        let (di, dj) = (i - self.center.0, j - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        // rotate into the shape frame
        let u = c * di + s * dj;
        let v = -s * di + c * dj;
        let r = self.radius;
        match self.kind {
            ShapeKind::Ellipse => {
                let b = r * self.aspect;
                (u / r).powi(2) + (v / b).powi(2) <= 1.0
            }
            ShapeKind::RoundedRect => {
                // half extents chosen so the corners stay inside `radius`
                let a = r / (1.0 + self.aspect * self.aspect).sqrt();
                let b = a * self.aspect;
                let corner = 0.2 * b;
                if u.abs() > a || v.abs() > b {
                    return false;
                }
                let qx = (u.abs() - (a - corner)).max(0.0);
                let qy = (v.abs() - (b - corner)).max(0.0);
                qx * qx + qy * qy <= corner * corner
            }
            ShapeKind::Disc => u * u + v * v <= r * r,
            ShapeKind::Ring => {
                let d2 = u * u + v * v;
                d2 <= r * r && d2 >= (0.55 * r).powi(2)
            }
            ShapeKind::Cross => {
                let arm = 0.3 * r;
                let len = r * (1.0 - 0.09f64).sqrt();
                (u.abs() <= len && v.abs() <= arm) || (v.abs() <= len && u.abs() <= arm)
            }
            ShapeKind::Triangle => inside_polygon(u, v, &regular_polygon(3, r, r)),
            ShapeKind::Star => inside_polygon(u, v, &regular_polygon(5, r, 0.45 * r)),
        }
    }

    pub fn rasterize(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |i, j| self.contains(i as f64, j as f64))
    }
}

/// Polygon alternating between `outer` and `inner` radii; with equal radii it
/// is a regular `points`-gon.
fn regular_polygon(points: usize, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    let star = outer != inner;
    let n = if star { 2 * points } else { points };
    (0..n)
        .map(|k| {
            let angle = -PI / 2.0 + TAU * k as f64 / n as f64;
            let rad = if star && k % 2 == 1 { inner } else { outer };
            (rad * angle.cos(), rad * angle.sin())
        })
        .collect()
}

/// Even-odd rule.
fn inside_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}
