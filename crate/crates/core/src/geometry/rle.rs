use serde::{Deserialize, Serialize};

use super::MaskBitmap;
use crate::error::{Error, Result};

/// Uncompressed COCO run-length encoding.
///
/// Runs scan the mask column by column and alternate zeros/ones, starting
/// with a (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        let expected = (self.height() * self.width()) as u64;
        if total != expected {
            return Err(Error::CorruptRle(format!(
                "counts sum to {total}, expected {}x{} = {expected}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

pub fn rle_encode(m: &MaskBitmap) -> RleMask {
    let (h, w) = m.shape();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let v = m.get(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        size: [h, w],
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<MaskBitmap> {
    rle.validate()?;
    let (h, w) = (rle.height(), rle.width());
    let mut m = MaskBitmap::empty(h, w)?;
    let mut idx = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 {
            for k in idx..idx + run {
                m.set(k % h, k / h, true);
            }
        }
        idx += run;
    }
    Ok(m)
}

/// Decode the compressed COCO string form (6-bit LEB128-like digits with
/// deltas against the run two places back).
pub fn rle_from_compressed(s: &str, height: usize, width: usize) -> Result<RleMask> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&byte) = bytes.get(p) else {
                return Err(Error::CorruptRle("compressed string ends mid-value".into()));
            };
            if !(48..48 + 64).contains(&byte) || k > 12 {
                return Err(Error::CorruptRle(format!("invalid compressed byte {byte:#x}")));
            }
            let c = i64::from(byte) - 48;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    let counts = counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::CorruptRle(format!("run length {c} out of range"))))
        .collect::<Result<Vec<_>>>()?;
    let rle = RleMask {
        size: [height, width],
        counts,
    };
    rle.validate()?;
    Ok(rle)
}

/// Inverse of [`rle_from_compressed`].
pub fn rle_to_compressed(rle: &RleMask) -> String {
    let mut out = String::new();
    for (i, &c) in rle.counts.iter().enumerate() {
        let mut x = i64::from(c);
        if i > 2 {
            x -= i64::from(rle.counts[i - 2]);
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c as u8 + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}
