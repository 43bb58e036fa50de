//! Axis-aligned boxes and 2-D affine transforms.

use crate::error::{arg, Result};

/// Axis-aligned box stored as top-left corner plus extent (MOT convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x: cx - 0.5 * w,
            y: cy - 0.5 * h,
            w,
            h,
        }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn cx(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn cy(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn x1(&self) -> f64 {
        self.x + self.w
    }

    pub fn y1(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Intersection with another box, or `None` when they do not overlap.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x1 > x0 && y1 > y0).then(|| BBox::from_corners(x0, y0, x1, y1))
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x1() && py >= self.y && py <= self.y1()
    }
}

/// Intersection-over-union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersect(b).map_or(0.0, |i| i.area());
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// 2x3 affine map `p -> A p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    /// Row-major linear part `[[a00, a01], [a10, a11]]`.
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        linear: [[1.0, 0.0], [0.0, 1.0]],
        translation: [0.0, 0.0],
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            translation: [tx, ty],
            ..Self::IDENTITY
        }
    }

    pub fn scale(s: f64) -> Self {
        Self {
            linear: [[s, 0.0], [0.0, s]],
            translation: [0.0, 0.0],
        }
    }

    pub fn det(&self) -> f64 {
        let a = &self.linear;
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > 1e-9
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.linear;
        (
            a[0][0] * x + a[0][1] * y + self.translation[0],
            a[1][0] * x + a[1][1] * y + self.translation[1],
        )
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineTransform) -> Self {
        let a = &self.linear;
        let b = &first.linear;
        let mut linear = [[0.0; 2]; 2];
        for (i, row) in linear.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let (tx, ty) = self.apply_point(first.translation[0], first.translation[1]);
        Self {
            linear,
            translation: [tx, ty],
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() <= 1e-9 {
            return Err(arg("affine transform is not invertible"));
        }
        let a = &self.linear;
        let linear = [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]];
        let t = self.translation;
        let translation = [
            -(linear[0][0] * t[0] + linear[0][1] * t[1]),
            -(linear[1][0] * t[0] + linear[1][1] * t[1]),
        ];
        Ok(Self {
            linear,
            translation,
        })
    }

    /// Axis-aligned hull of the four transformed corners.
    pub fn apply_box(&self, b: &BBox) -> BBox {
        let corners = [
            self.apply_point(b.x, b.y),
            self.apply_point(b.x1(), b.y),
            self.apply_point(b.x, b.y1()),
            self.apply_point(b.x1(), b.y1()),
        ];
        let (mut x0, mut y0) = corners[0];
        let (mut x1, mut y1) = corners[0];
        for &(x, y) in &corners[1..] {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        BBox::from_corners(x0, y0, x1, y1)
    }
}
