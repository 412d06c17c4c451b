//! Axis-aligned boxes in continuous pixel coordinates (origin top-left).
//!
//! Areas use the half-open convention `(x_max - x_min) * (y_max - y_min)`, so a
//! box `[x, y, x + w, y + h]` covers exactly the `w * h` pixels of its raster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from COCO `[x, y, width, height]`.
    pub fn from_xywh(xywh: [T; 4]) -> Result<Self> {
        let [x, y, w, h] = xywh;
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {self:?}")));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidBox(format!("min exceeds max in {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Clamps into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: T, height: T) -> Self {
        let cx = |v: T| v.max(T::zero()).min(width);
        let cy = |v: T| v.max(T::zero()).min(height);
        BoundingBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    /// Scales about the box center without clamping.
    pub fn scaled(&self, scale: T) -> Self {
        let (cx, cy) = self.center();
        let two = T::lit(2.0);
        let hw = self.width() / two * scale;
        let hh = self.height() / two * scale;
        BoundingBox {
            x_min: cx - hw,
            y_min: cy - hh,
            x_max: cx + hw,
            y_max: cy + hh,
        }
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x_min: U::lit(self.x_min.as_f64()),
            y_min: U::lit(self.y_min.as_f64()),
            x_max: U::lit(self.x_max.as_f64()),
            y_max: U::lit(self.y_max.as_f64()),
        }
    }
}

/// Intersection over union. Zero-area unions yield 0 rather than NaN.
pub fn box_iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Context crop around a proposal: the box scaled by `scale` about its center,
/// then clamped to the image.
pub fn crop_region<T: Scalar>(
    bbox: &BoundingBox<T>,
    scale: T,
    image_width: T,
    image_height: T,
) -> Result<BoundingBox<T>> {
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(Error::Input(format!("crop scale must be positive, got {scale}")));
    }
    bbox.validate()?;
    Ok(bbox.scaled(scale).clamp_to(image_width, image_height))
}
