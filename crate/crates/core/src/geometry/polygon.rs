use super::MaskBitmap;
use crate::error::{Error, Result};

/// Even-odd fill of a polygon given as `(x, y)` vertices, `x` along columns.
///
/// A pixel `(row, col)` is set when its center `(col + 0.5, row + 0.5)` is
/// inside the polygon. Crossings use a half-open rule on both axes (an edge
/// spans `[y0, y1)` and a span covers `[xa, xb)`), so centers lying exactly
/// on a right or bottom boundary are outside. Vertices are clamped to the
/// image rectangle first.
pub fn rasterize_polygon(vertices: &[(f64, f64)], size: (usize, usize)) -> Result<MaskBitmap> {
    let (h, w) = size;
    let mut mask = MaskBitmap::empty(h, w)?;
    fill(&mut mask, vertices)?;
    Ok(mask)
}

/// Union of several polygons in COCO flat form `[x0, y0, x1, y1, ...]`.
pub fn rasterize_polygons(polygons: &[Vec<f64>], size: (usize, usize)) -> Result<MaskBitmap> {
    let (h, w) = size;
    let mut mask = MaskBitmap::empty(h, w)?;
    for flat in polygons {
        if flat.len() % 2 != 0 {
            return Err(Error::InvalidPolygon(format!(
                "odd number of coordinates ({})",
                flat.len()
            )));
        }
        let vertices: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let mut one = MaskBitmap::empty(h, w)?;
        fill(&mut one, &vertices)?;
        mask.union_with(&one)?;
    }
    Ok(mask)
}

fn fill(mask: &mut MaskBitmap, vertices: &[(f64, f64)]) -> Result<()> {
    if vertices.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "need at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidPolygon("non-finite vertex".into()));
    }
    let (h, w) = mask.shape();
    let pts: Vec<(f64, f64)> = vertices
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, w as f64), y.clamp(0.0, h as f64)))
        .collect();

    let mut xs = Vec::new();
    for row in 0..h {
        let cy = row as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            let crosses = (y0 <= cy && cy < y1) || (y1 <= cy && cy < y0);
            if crosses {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let (xa, xb) = (span[0], span[1]);
            // First center >= xa, last center < xb.
            let start = (xa - 0.5).ceil().max(0.0) as usize;
            let end = ((xb - 0.5).ceil().max(0.0) as usize).min(w);
            for col in start..end {
                mask.set(row, col, true);
            }
        }
    }
    Ok(())
}
