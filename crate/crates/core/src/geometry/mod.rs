//! Masks, boxes, rasterization, the COCO RLE codec and IoU.
//!
//! Masks are stored row-major in memory; RLE runs are column-major to match
//! the COCO interchange format. Boxes use the COCO `[x, y, w, h]` convention
//! with `x` along columns and `y` along rows.

mod polygon;
mod rle;

pub use polygon::{rasterize_polygon, rasterize_polygons};
pub use rle::{rle_decode, rle_encode, rle_from_compressed, rle_to_compressed, RleMask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary mask at pixel resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskBitmap {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl MaskBitmap {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        if bits.len() != height * width {
            return Err(Error::dim(height * width, bits.len()));
        }
        Ok(MaskBitmap {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        MaskBitmap::new(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// In-place union with a mask of the same size.
    pub fn union_with(&mut self, other: &MaskBitmap) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }
}

/// Axis-aligned box in COCO `[x, y, w, h]` form, serialized as that array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    /// True when the box lies inside a `height x width` image.
    pub fn within(&self, height: usize, width: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= width as f64
            && self.y + self.h <= height as f64
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two same-sized masks; 0 when both are empty.
pub fn mask_iou(a: &MaskBitmap, b: &MaskBitmap) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Tight box around the set pixels.
pub fn bbox_of_mask(m: &MaskBitmap) -> Result<BoundingBox> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..m.height {
        for c in 0..m.width {
            if m.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(BoundingBox::new(
        c0 as f64,
        r0 as f64,
        (c1 - c0 + 1) as f64,
        (r1 - r0 + 1) as f64,
    ))
}
