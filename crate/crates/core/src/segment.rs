//! From matched filter response to vessel map: Otsu's global threshold,
//! removal of small 8-connected components, field-of-view masking. Also
//! hosts the full per-image pipeline.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::imageio::{quantize, BinaryImage, GrayImage, RgbImage};
use crate::kernelbank::{build_bank, KernelBank, KernelParams};
use crate::mfr::{max_response_with, normalize_response, ResponseImage};
use crate::par::Parallelism;
use crate::preprocess::{clahe, luma_grayscale, pca_grayscale, ClaheParams};
use crate::Flagged;

pub const LEVELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; LEVELS],
    total: u64,
}

impl Histogram {
    pub fn from_counts(counts: [u64; LEVELS]) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64; LEVELS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Class probability, mean and variance of levels `range`, relative to
    /// the whole histogram.
    fn class_stats(&self, range: std::ops::Range<usize>) -> (f64, f64, f64) {
        let p = self.probabilities();
        let omega: f64 = p[range.clone()].iter().sum();
        if omega == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let mu = range.clone().map(|i| i as f64 * p[i]).sum::<f64>() / omega;
        let var = range.map(|i| (i as f64 - mu).powi(2) * p[i]).sum::<f64>() / omega;
        (omega, mu, var)
    }

    /// Within-class variances of the background (levels `<= k`) and object
    /// (levels `> k`) classes.
    pub fn class_variances(&self, k: usize) -> (f64, f64) {
        let (_, _, v0) = self.class_stats(0..k + 1);
        let (_, _, v1) = self.class_stats(k + 1..LEVELS);
        (v0, v1)
    }
}

/// Count quantized levels of `image`, restricted to `mask` when given.
pub fn build_histogram(image: &GrayImage, mask: Option<&BinaryImage>) -> Result<Histogram> {
    if let Some(m) = mask {
        check_same_dims(image.dims(), m.dims())?;
    }
    let mut counts = [0u64; LEVELS];
    match mask {
        Some(m) => {
            for (&v, &keep) in image.pixels().iter().zip(m.pixels()) {
                if keep {
                    counts[quantize(v) as usize] += 1;
                }
            }
        }
        None => {
            for &v in image.pixels() {
                counts[quantize(v) as usize] += 1;
            }
        }
    }
    Histogram::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdDiagnostics {
    /// Highest background level; object pixels are strictly above it.
    pub k_star: u8,
    pub omega0: f64,
    pub omega1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu_t: f64,
    pub sigma_b2: f64,
    pub sigma_t2: f64,
    pub eta: f64,
}

/// `a * b` as a 256-bit `(high, low)` pair.
fn widening_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & MASK);
    let (b_hi, b_lo) = (b >> 64, b & MASK);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let low = (ll & MASK) | (mid << 64);
    let high = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (high, low)
}

/// Between-class variance up to the positive factor `1 / N^2`, held as an
/// exact fraction `num^2 / den`.
#[derive(Clone, Copy)]
struct Separation {
    num: u128,
    den: u128,
}

impl Separation {
    fn exceeds(&self, other: &Separation) -> bool {
        widening_mul(self.num * self.num, other.den) > widening_mul(other.num * other.num, self.den)
    }

    fn as_f64(&self) -> f64 {
        (self.num as f64).powi(2) / self.den as f64
    }
}

/// Otsu's threshold: the level maximizing the between-class variance,
/// smallest level on ties.
///
/// Candidate levels are compared in exact integer arithmetic so ties are
/// detected reliably. A histogram with a single populated level has no
/// valid split; its level is returned with the degenerate flag set.
pub fn otsu_threshold(h: &Histogram) -> Flagged<ThresholdDiagnostics> {
    let n = h.total as u128;
    let sum: u128 = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    // beyond ~2^28 pixels the squared numerator leaves u128
    let exact = n < (1u128 << 28);

    let mut best: Option<(usize, Separation, f64)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for k in 0..LEVELS - 1 {
        n0 += h.counts[k] as u128;
        s0 += k as u128 * h.counts[k] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let num = (n * s0).abs_diff(sum * n0);
        let sep = Separation { num, den: n0 * n1 };
        let approx = sep.as_f64();
        let better = match &best {
            None => true,
            Some((_, b, b_approx)) => {
                if exact {
                    sep.exceeds(b)
                } else {
                    approx > *b_approx
                }
            }
        };
        if better {
            best = Some((k, sep, approx));
        }
    }

    let p = h.probabilities();
    let mu_t: f64 = p.iter().enumerate().map(|(i, &pi)| i as f64 * pi).sum();
    let sigma_t2: f64 = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| (i as f64 - mu_t).powi(2) * pi)
        .sum();

    match best {
        Some((k, _, _)) => {
            let (omega0, mu0, _) = h.class_stats(0..k + 1);
            let (omega1, mu1, _) = h.class_stats(k + 1..LEVELS);
            let sigma_b2 = omega0 * (mu0 - mu_t).powi(2) + omega1 * (mu1 - mu_t).powi(2);
            let eta = if sigma_t2 > 0.0 {
                (sigma_b2 / sigma_t2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            Flagged {
                value: ThresholdDiagnostics {
                    k_star: k as u8,
                    omega0,
                    omega1,
                    mu0,
                    mu1,
                    mu_t,
                    sigma_b2,
                    sigma_t2,
                    eta,
                },
                degenerate: false,
            }
        }
        None => {
            let level = h.counts.iter().position(|&c| c > 0).unwrap_or(0);
            Flagged {
                value: ThresholdDiagnostics {
                    k_star: level as u8,
                    omega0: 1.0,
                    omega1: 0.0,
                    mu0: mu_t,
                    mu1: mu_t,
                    mu_t,
                    sigma_b2: 0.0,
                    sigma_t2,
                    eta: 0.0,
                },
                degenerate: true,
            }
        }
    }
}

fn check_same_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Pixels whose quantized level is strictly above `k_star`, optionally
/// restricted to `mask`.
pub fn binarize(image: &GrayImage, k_star: u8, mask: Option<&BinaryImage>) -> Result<BinaryImage> {
    if let Some(m) = mask {
        check_same_dims(image.dims(), m.dims())?;
    }
    let (w, h) = image.dims();
    let data = image
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| quantize(v) > k_star && mask.is_none_or(|m| m.pixels()[i]))
        .collect();
    Ok(BinaryImage::from_raw(w, h, data))
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        // label 0 is background
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// 8-connected component labels (0 = background) and component sizes
/// indexed by label.
pub fn label_components(image: &BinaryImage) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = image.dims();
    let px = image.pixels();
    let mut labels = vec![0u32; w * h];
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !px[i] {
                continue;
            }
            // previously visited neighbours: W, NW, N, NE
            let mut current = 0u32;
            let mut visit = |label: u32, uf: &mut UnionFind| {
                if label != 0 {
                    current = if current == 0 { label } else { uf.union(current, label) };
                }
            };
            if x > 0 {
                visit(labels[i - 1], &mut uf);
            }
            if y > 0 {
                let up = i - w;
                if x > 0 {
                    visit(labels[up - 1], &mut uf);
                }
                visit(labels[up], &mut uf);
                if x + 1 < w {
                    visit(labels[up + 1], &mut uf);
                }
            }
            labels[i] = if current == 0 { uf.make() } else { current };
        }
    }

    // resolve to dense labels in raster order of first appearance
    let mut dense = vec![0u32; uf.parent.len()];
    let mut sizes = vec![0usize];
    for label in labels.iter_mut() {
        if *label == 0 {
            continue;
        }
        let root = uf.find(*label) as usize;
        if dense[root] == 0 {
            dense[root] = sizes.len() as u32;
            sizes.push(0);
        }
        *label = dense[root];
        sizes[*label as usize] += 1;
    }
    (labels, sizes)
}

/// Drop 8-connected components with fewer than `min_size` pixels.
pub fn length_filter(image: &BinaryImage, min_size: usize) -> BinaryImage {
    let (labels, sizes) = label_components(image);
    let (w, h) = image.dims();
    let data = labels
        .iter()
        .map(|&l| l != 0 && sizes[l as usize] >= min_size)
        .collect();
    BinaryImage::from_raw(w, h, data)
}

/// Pixelwise AND with the field-of-view mask.
pub fn apply_mask(image: &BinaryImage, fov: &BinaryImage) -> Result<BinaryImage> {
    check_same_dims(image.dims(), fov.dims())?;
    let (w, h) = image.dims();
    let data = image
        .pixels()
        .iter()
        .zip(fov.pixels())
        .map(|(&a, &b)| a && b)
        .collect();
    Ok(BinaryImage::from_raw(w, h, data))
}

pub fn complement(image: &BinaryImage) -> BinaryImage {
    let (w, h) = image.dims();
    BinaryImage::from_raw(w, h, image.pixels().iter().map(|&b| !b).collect())
}

/// Which pixels feed the Otsu histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtsuScope {
    #[default]
    FullImage,
    FovOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrayConversion {
    #[default]
    Pca,
    Luma,
}

/// Minimum surviving component size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentSize {
    /// 30 pixels at 565 x 584, scaled with the image area.
    #[default]
    Auto,
    Pixels(usize),
}

impl ComponentSize {
    pub const REFERENCE_PIXELS: usize = 30;
    pub const REFERENCE_AREA: usize = 565 * 584;

    pub fn resolve(self, width: usize, height: usize) -> usize {
        match self {
            ComponentSize::Pixels(n) => n,
            ComponentSize::Auto => {
                let scale = (width * height) as f64 / Self::REFERENCE_AREA as f64;
                (Self::REFERENCE_PIXELS as f64 * scale).round() as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub kernel: KernelParams,
    pub clahe: ClaheParams,
    pub min_component_size: ComponentSize,
    pub otsu_scope: OtsuScope,
    pub gray: GrayConversion,
}

impl PipelineParams {
    pub fn with_kernel(kernel: KernelParams) -> Self {
        Self {
            kernel,
            clahe: ClaheParams::default(),
            min_component_size: ComponentSize::Auto,
            otsu_scope: OtsuScope::FullImage,
            gray: GrayConversion::Pca,
        }
    }

    pub fn drive() -> Self {
        Self::with_kernel(KernelParams::drive())
    }

    pub fn stare() -> Self {
        Self::with_kernel(KernelParams::stare())
    }
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self::drive()
    }
}

/// Intermediate rasters kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct StageImages {
    pub gray: GrayImage,
    pub enhanced: GrayImage,
    pub mfr: GrayImage,
    pub thresholded: BinaryImage,
    pub filtered: BinaryImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Final map, vessel pixels set; always false outside the field of view.
    pub vessel_map: BinaryImage,
    pub mfr: ResponseImage,
    pub diagnostics: ThresholdDiagnostics,
    pub degenerate_flags: BTreeSet<&'static str>,
    pub min_component_size: usize,
    pub stages: StageImages,
}

impl SegmentationResult {
    /// Opposite polarity rendering (vessels dark), as shown in figures.
    pub fn display_map(&self) -> BinaryImage {
        complement(&self.vessel_map)
    }

    /// The normalized response the threshold was chosen on.
    pub fn normalized_mfr(&self) -> &GrayImage {
        &self.stages.mfr
    }
}

/// Run the complete segmentation of one color image.
pub fn run_pipeline(
    rgb: &RgbImage,
    fov: &BinaryImage,
    params: &PipelineParams,
    bank: &KernelBank,
    par: Parallelism,
) -> Result<SegmentationResult> {
    check_same_dims(rgb.dims(), fov.dims()).map_err(|e| e.in_stage("input"))?;
    let (w, h) = rgb.dims();
    let mut flags = BTreeSet::new();

    let gray = match params.gray {
        GrayConversion::Pca => {
            let g = pca_grayscale(rgb);
            if g.degenerate {
                flags.insert("grayscale");
            }
            g.value
        }
        GrayConversion::Luma => luma_grayscale(rgb),
    };
    let enhanced = clahe(&gray, &params.clahe).map_err(|e| e.in_stage("clahe"))?;
    let mfr = max_response_with(&enhanced, bank, par);
    let normalized = normalize_response(&mfr);
    if normalized.degenerate {
        flags.insert("mfr");
    }
    let normalized = normalized.value;

    let scope = match params.otsu_scope {
        OtsuScope::FullImage => None,
        OtsuScope::FovOnly => Some(fov),
    };
    let histogram = build_histogram(&normalized, scope).map_err(|e| e.in_stage("histogram"))?;
    let otsu = otsu_threshold(&histogram);
    if otsu.degenerate {
        flags.insert("otsu");
    }
    let diagnostics = otsu.value;

    let thresholded =
        binarize(&normalized, diagnostics.k_star, None).map_err(|e| e.in_stage("binarize"))?;
    let min_size = params.min_component_size.resolve(w, h);
    let filtered = length_filter(&thresholded, min_size);
    let vessel_map = apply_mask(&filtered, fov).map_err(|e| e.in_stage("mask"))?;

    Ok(SegmentationResult {
        vessel_map,
        mfr,
        diagnostics,
        degenerate_flags: flags,
        min_component_size: min_size,
        stages: StageImages {
            gray,
            enhanced,
            mfr: normalized,
            thresholded,
            filtered,
        },
    })
}

/// Pipeline parameters bundled with their kernel bank.
#[derive(Debug, Clone)]
pub struct Pipeline {
    params: PipelineParams,
    bank: KernelBank,
}

impl Pipeline {
    pub fn new(params: PipelineParams) -> Result<Self> {
        params.clahe.validate()?;
        let bank = build_bank(&params.kernel)?;
        Ok(Self { params, bank })
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn bank(&self) -> &KernelBank {
        &self.bank
    }

    pub fn run(&self, rgb: &RgbImage, fov: &BinaryImage, par: Parallelism) -> Result<SegmentationResult> {
        run_pipeline(rgb, fov, &self.params, &self.bank, par)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(pairs: &[(usize, u64)]) -> Histogram {
        let mut counts = [0u64; LEVELS];
        for &(i, c) in pairs {
            counts[i] = c;
        }
        Histogram::from_counts(counts).unwrap()
    }

    /// Between-class variance evaluated from raw class sums at every split.
    fn brute_force_k(h: &Histogram) -> Option<usize> {
        let n = h.total() as f64;
        let p: Vec<f64> = h.counts().iter().map(|&c| c as f64 / n).collect();
        let mu_t: f64 = (0..LEVELS).map(|i| i as f64 * p[i]).sum();
        let mut best: Option<(usize, f64)> = None;
        for k in 0..LEVELS - 1 {
            let w0: f64 = (0..=k).map(|i| p[i]).sum();
            let w1: f64 = (k + 1..LEVELS).map(|i| p[i]).sum();
            let c0: u64 = h.counts()[..=k].iter().sum();
            if c0 == 0 || c0 == h.total() {
                continue;
            }
            let m0 = (0..=k).map(|i| i as f64 * p[i]).sum::<f64>() / w0;
            let m1 = (k + 1..LEVELS).map(|i| i as f64 * p[i]).sum::<f64>() / w1;
            let sb = w0 * (m0 - mu_t).powi(2) + w1 * (m1 - mu_t).powi(2);
            if best.is_none_or(|(_, b)| sb > b) {
                best = Some((k, sb));
            }
        }
        best.map(|(k, _)| k)
    }

    #[test]
    fn widening_mul_matches_schoolbook() {
        let cases = [
            (u128::MAX, u128::MAX),
            (u128::MAX, 2),
            (1u128 << 100, 1u128 << 100),
            (12345678901234567890123456789, 98765432109876543210),
        ];
        for (a, b) in cases {
            let (hi, lo) = widening_mul(a, b);
            assert_eq!(lo, a.wrapping_mul(b));
            // check high part through splitting b
            let (b_hi, b_lo) = (b >> 64, b & u64::MAX as u128);
            let (h1, l1) = widening_mul(a, b_lo);
            let (h2, l2) = widening_mul(a, b_hi);
            // a*b = a*b_lo + (a*b_hi << 64)
            let (low, carry) = l1.overflowing_add(l2 << 64);
            assert_eq!(low, lo);
            assert_eq!(hi, h1 + (l2 >> 64) + (h2 << 64) + carry as u128);
        }
    }

    #[test]
    fn histogram_basics() {
        let img = GrayImage::filled(2, 2, 0.0).unwrap();
        assert_eq!(build_histogram(&img, None).unwrap().counts()[0], 4);

        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let h = build_histogram(&img, None).unwrap();
        assert_eq!((h.counts()[0], h.counts()[255], h.total()), (1, 1, 2));
        let total: f64 = h.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);

        let mask = BinaryImage::new(2, 1, vec![false, true]).unwrap();
        let h = build_histogram(&img, Some(&mask)).unwrap();
        assert_eq!((h.counts()[0], h.counts()[255]), (0, 1));

        let none = BinaryImage::filled(2, 1, false).unwrap();
        assert!(matches!(build_histogram(&img, Some(&none)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn two_spikes() {
        let h = hist(&[(50, 10), (200, 10)]);
        let out = otsu_threshold(&h);
        assert!(!out.degenerate);
        assert_eq!(out.value.k_star, 50);
        assert!((out.value.eta - 1.0).abs() < 1e-12);
        assert_eq!(h.class_variances(50), (0.0, 0.0));
    }

    #[test]
    fn single_level_is_degenerate() {
        let out = otsu_threshold(&hist(&[(17, 40)]));
        assert!(out.degenerate);
        assert_eq!(out.value.k_star, 17);
        assert_eq!(out.value.sigma_b2, 0.0);
    }

    #[test]
    fn otsu_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1979);
        for _ in 0..200 {
            let mut counts = [0u64; LEVELS];
            let populated = rng.gen_range(2..LEVELS);
            for _ in 0..populated {
                counts[rng.gen_range(0..LEVELS)] = rng.gen_range(0..=1000);
            }
            let Ok(h) = Histogram::from_counts(counts) else { continue };
            let out = otsu_threshold(&h);
            match brute_force_k(&h) {
                Some(k) => assert_eq!(out.value.k_star as usize, k),
                None => assert!(out.degenerate),
            }
        }
    }

    #[test]
    fn large_histograms_fall_back_without_overflow() {
        let h = hist(&[(10, 1 << 29), (12, 1 << 29), (240, 1 << 30)]);
        assert_eq!(otsu_threshold(&h).value.k_star, 12);
    }

    #[test]
    fn binarize_rules() {
        let img = GrayImage::new(4, 1, vec![0.0, 1.0, 0.0, 0.4]).unwrap();
        assert_eq!(binarize(&img, 0, None).unwrap().pixels(), &[false, true, false, true]);
        assert_eq!(binarize(&img, 255, None).unwrap().count_true(), 0);
        let mask = BinaryImage::new(4, 1, vec![true, false, true, true]).unwrap();
        assert_eq!(binarize(&img, 0, Some(&mask)).unwrap().pixels(), &[false, false, false, true]);
    }

    #[test]
    fn length_filter_examples() {
        let single = BinaryImage::new(3, 3, vec![false, false, false, false, true, false, false, false, false]).unwrap();
        assert_eq!(length_filter(&single, 2).count_true(), 0);
        assert_eq!(length_filter(&single, 1).count_true(), 1);

        let mut diag = vec![false; 25];
        for i in 0..5 {
            diag[i * 5 + i] = true;
        }
        let diag = BinaryImage::new(5, 5, diag).unwrap();
        assert_eq!(length_filter(&diag, 5), diag);
        assert_eq!(length_filter(&diag, 6).count_true(), 0);

        // anti-diagonal joins through the NE neighbour
        let mut anti = vec![false; 16];
        for i in 0..4 {
            anti[i * 4 + (3 - i)] = true;
        }
        let anti = BinaryImage::new(4, 4, anti).unwrap();
        assert_eq!(label_components(&anti).1, vec![0, 4]);
    }

    #[test]
    fn u_shape_merges_late() {
        // two arms joined only at the bottom row
        let rows = ["#...#", "#...#", "#...#", "#####"];
        let data: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        let img = BinaryImage::new(5, 4, data).unwrap();
        let (labels, sizes) = label_components(&img);
        assert_eq!(sizes, vec![0, 11]);
        assert!(labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn mask_and_complement() {
        let img = BinaryImage::new(3, 1, vec![true, false, true]).unwrap();
        let all = BinaryImage::filled(3, 1, true).unwrap();
        let none = BinaryImage::filled(3, 1, false).unwrap();
        assert_eq!(apply_mask(&img, &all).unwrap(), img);
        assert_eq!(apply_mask(&img, &none).unwrap(), none);
        assert_eq!(apply_mask(&img, &img).unwrap(), img);
        assert!(apply_mask(&img, &BinaryImage::filled(1, 3, true).unwrap()).is_err());

        assert_eq!(complement(&all), none);
        assert_eq!(complement(&complement(&img)), img);
        assert_eq!(img.count_true() + complement(&img).count_true(), 3);
    }

    #[test]
    fn component_size_scaling() {
        assert_eq!(ComponentSize::Auto.resolve(565, 584), 30);
        // 30 * 423500 / 329960 = 38.505
        assert_eq!(ComponentSize::Auto.resolve(700, 605), 39);
        assert_eq!(ComponentSize::Pixels(7).resolve(10, 10), 7);
    }

    #[test]
    fn pipeline_rejects_mismatched_mask() {
        let rgb = RgbImage::new(20, 20, vec![[100, 50, 20]; 400]).unwrap();
        let fov = BinaryImage::filled(20, 21, true).unwrap();
        let pipeline = Pipeline::new(PipelineParams::drive()).unwrap();
        let err = pipeline.run(&rgb, &fov, Parallelism::Sequential).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "input", .. }));
    }

    fn arb_binary() -> impl Strategy<Value = BinaryImage> {
        (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |d| BinaryImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn otsu_moment_identities(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = [0u64; LEVELS];
            counts.iter_mut().for_each(|c| *c = rng.gen_range(0..50));
            counts[0] += 1;
            counts[255] += 1;
            let h = Histogram::from_counts(counts).unwrap();
            let d = otsu_threshold(&h).value;
            prop_assert!((d.omega0 + d.omega1 - 1.0).abs() <= 1e-12);
            prop_assert!((d.omega0 * d.mu0 + d.omega1 * d.mu1 - d.mu_t).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&d.eta));
            // total variance splits into within- and between-class parts
            let (v0, v1) = h.class_variances(d.k_star as usize);
            let within = d.omega0 * v0 + d.omega1 * v1;
            prop_assert!((within + d.sigma_b2 - d.sigma_t2).abs() <= 1e-6 * d.sigma_t2.max(1.0));
        }

        #[test]
        fn eta_and_between_class_agree_on_argmax(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = [0u64; LEVELS];
            counts.iter_mut().for_each(|c| *c = rng.gen_range(0..100));
            counts[3] = 1;
            counts[250] = 1;
            let h = Histogram::from_counts(counts).unwrap();
            let d = otsu_threshold(&h).value;
            let mut best = (0usize, f64::NEG_INFINITY);
            for k in 0..LEVELS - 1 {
                let (w0, m0, _) = h.class_stats(0..k + 1);
                let (w1, m1, _) = h.class_stats(k + 1..LEVELS);
                if w0 == 0.0 || w1 == 0.0 { continue; }
                let eta = (w0 * (m0 - d.mu_t).powi(2) + w1 * (m1 - d.mu_t).powi(2)) / d.sigma_t2;
                if eta > best.1 * (1.0 + 1e-12) { best = (k, eta); }
            }
            prop_assert_eq!(best.0, d.k_star as usize);
        }

        #[test]
        fn length_filter_is_idempotent_subset(img in arb_binary(), min_size in 0usize..6) {
            let once = length_filter(&img, min_size);
            prop_assert_eq!(length_filter(&once, min_size), once.clone());
            for (a, b) in once.pixels().iter().zip(img.pixels()) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn raising_threshold_never_adds(seed in any::<u64>(), k in 0u8..255) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::new(8, 8, (0..64).map(|_| rng.gen()).collect()).unwrap();
            let lo = binarize(&img, k, None).unwrap();
            let hi = binarize(&img, k + 1, None).unwrap();
            for (a, b) in hi.pixels().iter().zip(lo.pixels()) {
                prop_assert!(!a || *b);
            }
        }
    }
}
