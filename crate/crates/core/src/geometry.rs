//! Axis-aligned boxes in pixel coordinates and the IoU family of overlap measures.

use crate::error::{Error, Result};

/// Axis-aligned box given by its top-left `(x1, y1)` and bottom-right `(x2, y2)` corners.
///
/// Boxes are real rectangles: the area is `(x2 - x1) * (y2 - y1)` with no
/// pixel "+1" convention. A `BBox` always has finite corners and strictly
/// positive width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(invalid("non-positive width or height"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from the MOT-style `left, top, width, height` layout.
    pub fn from_ltwh(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidBox {
                x1: left,
                y1: top,
                x2: left + width,
                y2: top + height,
                reason: "non-positive width or height",
            });
        }
        Self::new(left, top, left + width, top + height)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Uniformly scales all coordinates about the origin.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Builds a valid box from possibly crossed or collapsed corners.
    ///
    /// Each axis whose extent is below `min_size` is replaced by a
    /// `min_size` interval around its midpoint. Returns `None` only for
    /// non-finite input.
    pub fn repaired(x1: f64, y1: f64, x2: f64, y2: f64, min_size: f64) -> Option<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return None;
        }
        let fix = |a: f64, b: f64| {
            if b - a >= min_size {
                (a, b)
            } else {
                let c = 0.5 * (a + b);
                (c - 0.5 * min_size, c + 0.5 * min_size)
            }
        };
        let (x1, x2) = fix(x1, x2);
        let (y1, y2) = fix(y1, y2);
        Self::new(x1, y1, x2, y2).ok()
    }

    /// Clamps the box into the image `[0, width] x [0, height]`.
    ///
    /// A box lying (partly) outside collapses onto the nearest image edge
    /// but keeps at least 1 px of extent on each axis.
    pub fn clamped(&self, width: f64, height: f64) -> Self {
        let clamp_axis = |a: f64, b: f64, limit: f64| {
            let lo = a.clamp(0.0, limit);
            let hi = b.clamp(0.0, limit);
            if hi - lo >= 1.0 {
                (lo, hi)
            } else {
                let size = 1.0f64.min(limit);
                let start = (0.5 * (lo + hi) - 0.5 * size).clamp(0.0, limit - size);
                (start, start + size)
            }
        };
        let (x1, x2) = clamp_axis(self.x1, self.x2, width);
        let (y1, y2) = clamp_axis(self.y1, self.y2, height);
        Self { x1, y1, x2, y2 }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Jaccard distance `1 - iou(a, b)`.
pub fn iou_distance(a: &BBox, b: &BBox) -> f64 {
    1.0 - iou(a, b)
}
