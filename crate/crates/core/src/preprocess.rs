//! Color-to-gray conversion and contrast enhancement.
//!
//! [`pca_grayscale`] projects every pixel onto the principal axes of the
//! image's RGB distribution and blends the projections with weights
//! proportional to their eigenvalues. [`clahe`] then applies tile-wise
//! contrast-limited histogram equalization with bilinear blending between
//! neighbouring tile mappings.

// symmetric 3x3 matrix code reads best with explicit indices
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::imageio::{GrayImage, RgbImage};
use crate::Flagged;

/// Symmetric 3x3 eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching unit eigenvectors.
pub(crate) fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    // columns of v are the eigenvectors
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        for _sweep in 0..64 {
            let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

/// Orient an eigenvector so it points into the positive (1,1,1) half-space;
/// vectors orthogonal to (1,1,1) get a positive first nonzero entry.
fn fix_sign(e: [f64; 3]) -> [f64; 3] {
    let sum = e[0] + e[1] + e[2];
    let tol = 1e-12;
    let flip = if sum.abs() > tol {
        sum < 0.0
    } else {
        e.iter().find(|c| c.abs() > tol).is_some_and(|&c| c < 0.0)
    };
    if flip {
        e.map(|c| -c)
    } else {
        e
    }
}

/// Eigenvalue-weighted principal-component projection of an RGB image.
///
/// The output is min-max normalized to `[0, 1]`. Images without color
/// variance produce a constant 0.5 image with the degenerate flag set.
pub fn pca_grayscale(image: &RgbImage) -> Flagged<GrayImage> {
    let (w, h) = image.dims();
    let n = image.pixels().len() as f64;
    let unit = |c: u8| c as f64 / 255.0;

    let mut mean = [0.0f64; 3];
    for px in image.pixels() {
        for k in 0..3 {
            mean[k] += unit(px[k]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = [[0.0f64; 3]; 3];
    for px in image.pixels() {
        let c = [unit(px[0]) - mean[0], unit(px[1]) - mean[1], unit(px[2]) - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }

    let degenerate = || Flagged {
        value: GrayImage::from_raw(w, h, vec![0.5; w * h]),
        degenerate: true,
    };

    let (values, vectors) = symmetric_eigen3(cov);
    let values = values.map(|v| v.max(0.0));
    let total: f64 = values.iter().sum();
    if total <= f64::EPSILON * 1e-3 {
        return degenerate();
    }

    // the weighted sum of projections collapses to one direction vector
    let mut direction = [0.0f64; 3];
    for (lambda, e) in values.iter().zip(vectors) {
        let e = fix_sign(e);
        for k in 0..3 {
            direction[k] += lambda / total * e[k];
        }
    }

    let raw: Vec<f64> = image
        .pixels()
        .iter()
        .map(|px| (0..3).map(|k| direction[k] * (unit(px[k]) - mean[k])).sum())
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
    let range = hi - lo;
    if range <= 1e-12 {
        return degenerate();
    }
    let data = raw
        .into_iter()
        .map(|g| ((g - lo) / range).clamp(0.0, 1.0))
        .collect();
    Flagged {
        value: GrayImage::from_raw(w, h, data),
        degenerate: false,
    }
}

/// ITU-R BT.601 luma. Offered as a fallback conversion, not part of the
/// evaluated pipeline.
pub fn luma_grayscale(image: &RgbImage) -> GrayImage {
    let (w, h) = image.dims();
    let data = image
        .pixels()
        .iter()
        .map(|&[r, g, b]| {
            ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::from_raw(w, h, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Histogram clip height as a fraction of the tile's pixel count.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 0.01,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x < 1 || self.tiles_y < 1 {
            return Err(Error::InvalidParams(format!(
                "CLAHE tile grid must be at least 1x1, got {}x{}",
                self.tiles_x, self.tiles_y
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidParams(format!(
                "CLAHE needs at least 2 bins, got {}",
                self.bins
            )));
        }
        if !(self.clip_limit > 0.0 && self.clip_limit <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "CLAHE clip limit must be in (0, 1], got {}",
                self.clip_limit
            )));
        }
        Ok(())
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Equalization lookup table for one tile.
fn tile_mapping(hist: &[f64], pixels: f64, clip_limit: f64) -> Vec<f64> {
    let bins = hist.len();
    let populated = hist.iter().filter(|&&c| c > 0.0).count();
    if populated <= 1 {
        // nothing to equalize: leave intensities at their bin centers
        return (0..bins).map(|b| (b as f64 + 0.5) / bins as f64).collect();
    }
    let limit = clip_limit * pixels;
    let mut excess = 0.0;
    let mut clipped: Vec<f64> = hist
        .iter()
        .map(|&c| {
            if c > limit {
                excess += c - limit;
                limit
            } else {
                c
            }
        })
        .collect();
    let share = excess / bins as f64;
    clipped.iter_mut().for_each(|c| *c += share);

    let mut acc = 0.0;
    clipped
        .iter()
        .map(|&c| {
            acc += c;
            (acc / pixels).clamp(0.0, 1.0)
        })
        .collect()
}

/// Locate `pos` between tile centers: returns the lower and upper tile and
/// the blend weight of the upper one. Positions outside the outermost
/// centers replicate the edge tile.
fn blend_coords(pos: usize, extent: usize, tiles: usize) -> (usize, usize, f64) {
    let tile_size = extent as f64 / tiles as f64;
    let f = (pos as f64 + 0.5) / tile_size - 0.5;
    if f <= 0.0 {
        return (0, 0, 0.0);
    }
    let lower = f.floor() as usize;
    if lower >= tiles - 1 {
        return (tiles - 1, tiles - 1, 0.0);
    }
    (lower, lower + 1, f - lower as f64)
}

/// Contrast-limited adaptive histogram equalization.
pub fn clahe(image: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = image.dims();
    if w < params.tiles_x || h < params.tiles_y {
        return Err(Error::InvalidParams(format!(
            "{w}x{h} image is smaller than the {}x{} tile grid",
            params.tiles_x, params.tiles_y
        )));
    }
    let bins = params.bins;
    let (tx, ty) = (params.tiles_x, params.tiles_y);
    let tile_of = |pos: usize, extent: usize, tiles: usize| (pos * tiles / extent).min(tiles - 1);

    let mut hists = vec![vec![0.0f64; bins]; tx * ty];
    let mut counts = vec![0usize; tx * ty];
    for y in 0..h {
        let row_tile = tile_of(y, h, ty);
        for x in 0..w {
            let t = row_tile * tx + tile_of(x, w, tx);
            hists[t][bin_of(image.get(x, y), bins)] += 1.0;
            counts[t] += 1;
        }
    }
    let maps: Vec<Vec<f64>> = hists
        .iter()
        .zip(&counts)
        .map(|(hist, &n)| tile_mapping(hist, n as f64, params.clip_limit))
        .collect();

    let cols: Vec<(usize, usize, f64)> = (0..w).map(|x| blend_coords(x, w, tx)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (r0, r1, wy) = blend_coords(y, h, ty);
        for (x, &(c0, c1, wx)) in cols.iter().enumerate() {
            let b = bin_of(image.get(x, y), bins);
            let m = |r: usize, c: usize| maps[r * tx + c][b];
            let top = (1.0 - wx) * m(r0, c0) + wx * m(r0, c1);
            let bottom = (1.0 - wx) * m(r1, c0) + wx * m(r1, c1);
            out.push(((1.0 - wy) * top + wy * bottom).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage::from_raw(w, h, out))
}
