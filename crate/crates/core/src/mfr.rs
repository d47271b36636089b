//! Matched filter response: correlation of the enhanced image with every
//! kernel of the bank, keeping the per-pixel maximum and the orientation
//! that produced it.

use crate::imageio::GrayImage;
use crate::kernelbank::{Kernel, KernelBank};
use crate::par::{for_each_row, Parallelism};
use crate::Flagged;

/// Ranges below this are treated as a constant response.
const FLAT_RESPONSE: f64 = 1e-9;

/// Unbounded real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseImage {
    pub width: usize,
    pub height: usize,
    pub response: Vec<f64>,
    /// Index into the bank of the kernel that won at each pixel.
    pub best_orientation: Vec<u32>,
}

impl ResponseImage {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn response_at(&self, x: usize, y: usize) -> f64 {
        self.response[y * self.width + x]
    }

    pub fn orientation_at(&self, x: usize, y: usize) -> u32 {
        self.best_orientation[y * self.width + x]
    }
}

/// Copy of an image with `pr` replicated rows above and below and `pc`
/// replicated columns either side, so every tap read is in bounds.
struct Padded {
    data: Vec<f64>,
    width: usize,
    pr: usize,
    pc: usize,
}

impl Padded {
    fn new(image: &GrayImage, pr: usize, pc: usize) -> Self {
        let (w, h) = image.dims();
        let img = image.pixels();
        let width = w + 2 * pc;
        let mut data = Vec::with_capacity(width * (h + 2 * pr));
        for r in 0..h + 2 * pr {
            let src = &img[r.saturating_sub(pr).min(h - 1) * w..][..w];
            data.extend(std::iter::repeat_n(src[0], pc));
            data.extend_from_slice(src);
            data.extend(std::iter::repeat_n(src[w - 1], pc));
        }
        Self { data, width, pr, pc }
    }

    fn for_kernels<'a>(image: &GrayImage, kernels: impl Iterator<Item = &'a Kernel> + Clone) -> Self {
        let pr = kernels.clone().map(Kernel::half_rows).max().unwrap_or(0);
        let pc = kernels.map(Kernel::half_cols).max().unwrap_or(0);
        Self::new(image, pr, pc)
    }
}

/// Kernel taps as flat offsets into a padded image.
///
/// Kernels are point-symmetric, so each tap is folded with its mirror and
/// swept over a whole row segment at a time, which vectorizes well.
enum Taps {
    /// Center weight and `(offset, weight)` for taps after the center in
    /// row-major order, each standing for itself and its mirror.
    Folded(f64, Vec<(isize, f64)>),
    Plain(Vec<(isize, f64)>),
}

impl Taps {
    fn new(kernel: &Kernel, width: usize) -> Self {
        let flat = |dv: isize, du: isize| dv * width as isize + du;
        let taps = kernel.taps();
        let mut pairs = Vec::new();
        let mut symmetric = true;
        for &(dv, du, w) in &taps {
            if (dv, du) <= (0, 0) {
                continue;
            }
            if !kernel.in_support(-dv, -du) || kernel.weight(-dv, -du) != w {
                symmetric = false;
                break;
            }
            pairs.push((flat(dv, du), w));
        }
        let has_center = kernel.in_support(0, 0);
        if symmetric && pairs.len() * 2 + has_center as usize == taps.len() {
            let center = if has_center { kernel.weight(0, 0) } else { 0.0 };
            Taps::Folded(center, pairs)
        } else {
            Taps::Plain(taps.iter().map(|&(dv, du, w)| (flat(dv, du), w)).collect())
        }
    }

    /// Correlation along image row `r`.
    fn row(&self, img: &Padded, r: usize, out: &mut [f64]) {
        let n = out.len();
        let base = ((r + img.pr) * img.width + img.pc) as isize;
        let at = |off: isize| {
            let s = (base + off) as usize;
            &img.data[s..s + n]
        };
        match self {
            Taps::Folded(center, pairs) => {
                for (o, &v) in out.iter_mut().zip(at(0)) {
                    *o = center * v;
                }
                for &(off, w) in pairs {
                    for ((o, &a), &b) in out.iter_mut().zip(at(off)).zip(at(-off)) {
                        *o += w * (a + b);
                    }
                }
            }
            Taps::Plain(taps) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for &(off, w) in taps {
                    for (o, &a) in out.iter_mut().zip(at(off)) {
                        *o += w * a;
                    }
                }
            }
        }
    }
}

/// Direct correlation of `image` with `kernel`, borders replicated from
/// the nearest edge pixel.
pub fn convolve(image: &GrayImage, kernel: &Kernel) -> RealImage {
    convolve_with(image, kernel, Parallelism::default())
}

pub fn convolve_with(image: &GrayImage, kernel: &Kernel, par: Parallelism) -> RealImage {
    let (w, h) = image.dims();
    let padded = Padded::for_kernels(image, std::iter::once(kernel));
    let taps = Taps::new(kernel, padded.width);
    let mut data = vec![0.0; w * h];
    for_each_row(&mut data, w, par, |r, row| taps.row(&padded, r, row));
    RealImage {
        width: w,
        height: h,
        data,
    }
}

/// Per-pixel maximum over the bank, ties resolved to the lowest index.
pub fn max_response(image: &GrayImage, bank: &KernelBank) -> ResponseImage {
    max_response_with(image, bank, Parallelism::default())
}

pub fn max_response_with(image: &GrayImage, bank: &KernelBank, par: Parallelism) -> ResponseImage {
    let (w, h) = image.dims();
    let padded = Padded::for_kernels(image, bank.kernels().iter());
    let taps: Vec<Taps> = bank.kernels().iter().map(|k| Taps::new(k, padded.width)).collect();

    // interleaved (response, orientation) rows so one pass fills both
    let mut cells = vec![(f64::NEG_INFINITY, 0u32); w * h];
    for_each_row(&mut cells, w, par, |r, row| {
        let mut scratch = vec![0.0; w];
        for (k, t) in taps.iter().enumerate() {
            t.row(&padded, r, &mut scratch);
            for (cell, &v) in row.iter_mut().zip(&scratch) {
                if v > cell.0 {
                    *cell = (v, k as u32);
                }
            }
        }
    });
    let (response, best_orientation) = cells.into_iter().unzip();
    ResponseImage {
        width: w,
        height: h,
        response,
        best_orientation,
    }
}

/// Linear min-max map of the response onto `[0, 1]`. A flat response maps
/// to zeros and is flagged degenerate.
pub fn normalize_response(resp: &ResponseImage) -> Flagged<GrayImage> {
    let (lo, hi) = resp
        .response
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    // also catches NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(range > FLAT_RESPONSE) {
        return Flagged {
            value: GrayImage::from_raw(resp.width, resp.height, vec![0.0; resp.response.len()]),
            degenerate: true,
        };
    }
    let data = resp
        .response
        .iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect();
    Flagged {
        value: GrayImage::from_raw(resp.width, resp.height, data),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelbank::{build_bank, build_kernel, KernelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(image: &GrayImage, kernel: &Kernel) -> Vec<f64> {
        let (w, h) = image.dims();
        let hr = kernel.half_rows() as isize;
        let hc = kernel.half_cols() as isize;
        let mut out = vec![0.0; w * h];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let mut acc = 0.0;
                for dv in -hr..=hr {
                    for du in -hc..=hc {
                        let rr = (r + dv).clamp(0, h as isize - 1) as usize;
                        let cc = (c + du).clamp(0, w as isize - 1) as usize;
                        acc += kernel.weight(dv, du) * image.get(cc, rr);
                    }
                }
                out[r as usize * w + c as usize] = acc;
            }
        }
        out
    }

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn constant_image_gives_zero_response() {
        let img = GrayImage::filled(40, 40, 0.73).unwrap();
        for params in [KernelParams::drive(), KernelParams::stare()] {
            for k in build_bank(&params).unwrap().kernels() {
                let bound = 1e-9 * k.weights().iter().map(|w| w.abs()).sum::<f64>();
                assert!(convolve(&img, k).data.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn matches_naive_oracle_at_45_degrees() {
        let img = random_image(45, 32, 32);
        let k = build_kernel(&KernelParams::stare(), 3).unwrap();
        assert_eq!(k.theta(), 45.0);
        let expected = naive(&img, &k);
        for par in [Parallelism::Sequential, Parallelism::Parallel] {
            let got = convolve_with(&img, &k, par);
            for (a, b) in got.data.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn small_images_use_border_path() {
        // smaller than the kernel in both directions
        let img = random_image(9, 5, 4);
        let k = build_kernel(&KernelParams::drive(), 1).unwrap();
        let expected = naive(&img, &k);
        for (a, b) in convolve(&img, &k).data.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn self_correlation_peak() {
        let k = build_kernel(&KernelParams::stare(), 0).unwrap();
        // weights shifted by a constant so the field stays in [0, 1]
        let shift = 0.5;
        let (w, h) = (41, 41);
        let mut data = vec![shift; w * h];
        for dv in -8..=8isize {
            for du in -7..=7isize {
                let idx = ((20 + dv) as usize) * w + (20 + du) as usize;
                data[idx] = shift + k.weight(dv, du);
            }
        }
        let img = GrayImage::new(w, h, data).unwrap();
        let out = convolve(&img, &k);
        let energy: f64 = k.weights().iter().map(|v| v * v).sum();
        assert!(energy > 0.0);
        assert!((out.get(20, 20) - energy).abs() <= 1e-12);
    }

    #[test]
    fn single_kernel_bank_is_plain_convolution() {
        let img = random_image(2, 30, 26);
        let params = KernelParams::drive();
        let k = build_kernel(&params, 5).unwrap();
        let bank = KernelBank::single(params, k.clone());
        let resp = max_response(&img, &bank);
        assert_eq!(resp.response, convolve(&img, &k).data);
        assert!(resp.best_orientation.iter().all(|&o| o == 0));
    }

    #[test]
    fn max_dominates_each_orientation() {
        let img = random_image(77, 36, 30);
        let bank = build_bank(&KernelParams::stare()).unwrap();
        let resp = max_response(&img, &bank);
        for (i, k) in bank.kernels().iter().enumerate() {
            let single = convolve(&img, k);
            for (p, (&m, &v)) in resp.response.iter().zip(&single.data).enumerate() {
                assert!(m >= v);
                if resp.best_orientation[p] as usize == i {
                    assert_eq!(m, v);
                }
            }
        }
        let seq = max_response_with(&img, &bank, Parallelism::Sequential);
        assert_eq!(seq, resp);
    }

    #[test]
    fn vertical_stripe_prefers_vertical_kernel() {
        let (w, h) = (48, 48);
        let center = 24.0;
        let data: Vec<f64> = (0..w * h)
            .map(|i| {
                let x = (i % w) as f64;
                0.8 - 0.3 * (-(x - center).powi(2) / (2.0 * 1.0f64.powi(2))).exp()
            })
            .collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let bank = build_bank(&KernelParams::stare()).unwrap();
        let resp = max_response(&img, &bank);
        for y in 12..36 {
            // oracle: evaluate every orientation at the stripe center
            let responses: Vec<f64> = bank
                .kernels()
                .iter()
                .map(|k| convolve(&img, k).get(24, y))
                .collect();
            let mut argmax = 0;
            for (i, &r) in responses.iter().enumerate() {
                if r > responses[argmax] {
                    argmax = i;
                }
            }
            assert_eq!(argmax, 0, "length axis at zero orientation is vertical");
            assert_eq!(resp.orientation_at(24, y), 0);
            assert!(resp.response_at(24, y) > 0.0);
        }
    }

    #[test]
    fn linear_in_the_image() {
        let a = random_image(100, 34, 34);
        let b = random_image(101, 34, 34);
        let (ca, cb) = (0.3, 0.6);
        let mixed = GrayImage::new(
            34,
            34,
            a.pixels().iter().zip(b.pixels()).map(|(x, y)| ca * x + cb * y).collect(),
        )
        .unwrap();
        let k = build_kernel(&KernelParams::drive(), 7).unwrap();
        let (ra, rb, rm) = (convolve(&a, &k), convolve(&b, &k), convolve(&mixed, &k));
        for y in 8..26 {
            for x in 7..27 {
                let lhs = rm.get(x, y);
                let rhs = ca * ra.get(x, y) + cb * rb.get(x, y);
                assert!((lhs - rhs).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn mirror_maps_orientation_to_supplement() {
        // one oblique dark line at 30 degrees from vertical through the center
        let (w, h) = (61, 61);
        let render = |mirror: bool| {
            let theta = 30f64.to_radians();
            let data: Vec<f64> = (0..w * h)
                .map(|i| {
                    let mut x = (i % w) as f64 - 30.0;
                    let y = (i / w) as f64 - 30.0;
                    if mirror {
                        x = -x;
                    }
                    let d = x * theta.cos() - y * theta.sin();
                    0.8 - 0.3 * (-d * d / 2.0).exp()
                })
                .collect();
            GrayImage::new(w, h, data).unwrap()
        };
        let bank = build_bank(&KernelParams::stare()).unwrap();
        let n = bank.len() as u32;
        let plain = max_response(&render(false), &bank);
        let mirrored = max_response(&render(true), &bank);
        let theta = 30f64.to_radians();
        for y in 20..41 {
            for x in 20..41 {
                let d = (x as f64 - 30.0) * theta.cos() - (y as f64 - 30.0) * theta.sin();
                if d.abs() > 2.0 {
                    // flat background: orientation is decided by rounding noise
                    continue;
                }
                let a = plain.orientation_at(x, y);
                let b = mirrored.orientation_at(w - 1 - x, y);
                assert_eq!((n - a) % n, b, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn normalization() {
        let resp = ResponseImage {
            width: 3,
            height: 1,
            response: vec![-2.0, 0.0, 2.0],
            best_orientation: vec![0; 3],
        };
        let out = normalize_response(&resp);
        assert!(!out.degenerate);
        assert_eq!(out.value.pixels(), &[0.0, 0.5, 1.0]);

        let flat = ResponseImage {
            response: vec![1.5; 3],
            ..resp
        };
        let out = normalize_response(&flat);
        assert!(out.degenerate);
        assert_eq!(out.value.pixels(), &[0.0; 3]);
    }

    #[test]
    fn normalization_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let response: Vec<f64> = (0..500).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let resp = ResponseImage {
            width: 500,
            height: 1,
            response: response.clone(),
            best_orientation: vec![0; 500],
        };
        let norm = normalize_response(&resp).value;
        for i in 0..500 {
            for j in 0..500 {
                if response[i] < response[j] {
                    assert!(norm.pixels()[i] <= norm.pixels()[j]);
                }
            }
        }
    }
}
