//! Dense vector and grid numerics.
//!
//! Grid coordinates are row-major throughout the crate: a cell is addressed
//! as `(row, col)`, with `row` playing the role of `x` and `col` of `y` in
//! correspondence formulas. Feature values are stored as `f32` and all
//! dot products and norms accumulate in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty feature or text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::dim("dim >= 1", 0));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptData(format!(
                "non-finite embedding component at index {i}"
            )));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Unclamped cosine on raw slices; callers guarantee equal length and
/// non-zero norms.
pub(crate) fn cosine_unchecked(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    dot(a, b) / (na * nb)
}

/// Cosine similarity of two equal-length slices, clamped to `[-1, 1]`.
pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("zero-norm input to cosine".into()));
    }
    Ok(cosine_unchecked(a, na, b, nb).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::DegenerateVector("cannot normalize a zero vector".into()));
    }
    Ok(Embedding(
        v.0.iter().map(|&x| (f64::from(x) / n) as f32).collect(),
    ))
}

/// One image's dense descriptors: `height * width` cells of `dim` values each,
/// stored contiguously row-major, plus the pooled class token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    image_id: u64,
    height: usize,
    width: usize,
    dim: usize,
    cells: Vec<f32>,
    class_token: Embedding,
}

impl FeatureGrid {
    pub fn new(
        image_id: u64,
        height: usize,
        width: usize,
        cells: Vec<f32>,
        class_token: Embedding,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        let dim = class_token.dim();
        if cells.len() != height * width * dim {
            return Err(Error::dim(
                format!("{height}x{width}x{dim} = {} values", height * width * dim),
                cells.len(),
            ));
        }
        if let Some(i) = cells.iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptData(format!(
                "non-finite feature value at flat index {i} of image {image_id}"
            )));
        }
        Ok(FeatureGrid {
            image_id,
            height,
            width,
            dim,
            cells,
            class_token,
        })
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn class_token(&self) -> &Embedding {
        &self.class_token
    }

    /// All cell values, row-major, `dim` values per cell.
    pub fn cells(&self) -> &[f32] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.cells[start..start + self.dim]
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = &[f32]> {
        self.cells.chunks_exact(self.dim)
    }

    pub fn with_image_id(mut self, image_id: u64) -> Self {
        self.image_id = image_id;
        self
    }
}

/// A dense `height x width` raster stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Part labels at some grid resolution: 0 is background, anything else a
/// part category id.
pub type LabelGrid = Grid<u32>;

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        if data.len() != height * width {
            return Err(Error::dim(height * width, data.len()));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Grid::new(height, width, vec![value; height * width])
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

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Index of the source cell whose center is nearest to the center of
/// destination cell `dst`, when a length-`dst_len` axis is stretched over a
/// length-`src_len` axis. Exact ties go to the lower source index.
///
/// The source-space center of `dst` is `c = (dst + 1/2) * src_len / dst_len - 1/2`
/// and the result is `ceil(c - 1/2)`, evaluated in integers.
pub fn nearest_source_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let num = (2 * dst as i64 + 1) * src_len as i64 - 2 * dst_len as i64;
    let den = 2 * dst_len as i64;
    let idx = -((-num).div_euclid(den));
    idx.clamp(0, src_len as i64 - 1) as usize
}

/// Nearest-neighbour resampling of a grid to `(height, width)` under
/// center-aligned scaling.
pub fn resample_grid_nearest<T: Copy>(src: &Grid<T>, target: (usize, usize)) -> Result<Grid<T>> {
    let (h2, w2) = target;
    if h2 == 0 || w2 == 0 {
        return Err(Error::EmptyGrid);
    }
    let cols: Vec<usize> = (0..w2)
        .map(|c| nearest_source_index(c, w2, src.width))
        .collect();
    let mut data = Vec::with_capacity(h2 * w2);
    for r in 0..h2 {
        let sr = nearest_source_index(r, h2, src.height);
        data.extend(cols.iter().map(|&sc| src.get(sr, sc)));
    }
    Grid::new(h2, w2, data)
}
