//! Synthetic fundus-like test images with known vessel maps.
//!
//! A bright field carries dark straight strokes whose cross-section is a
//! Gaussian dip; a disc marks the field of view. Because the strokes are
//! analytic, the true vessel mask is known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imageio::{BinaryImage, GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    /// `(x, y)` endpoints in pixel coordinates.
    pub from: (f64, f64),
    pub to: (f64, f64),
}

impl Stroke {
    pub fn length(&self) -> f64 {
        (self.to.0 - self.from.0).hypot(self.to.1 - self.from.1)
    }

    /// Euclidean distance from `(x, y)` to the segment.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.to.0 - self.from.0, self.to.1 - self.from.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((x - self.from.0) * dx + (y - self.from.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.from.0 + t * dx, self.from.1 + t * dy);
        (x - px).hypot(y - py)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub background: f64,
    /// Intensity drop at a vessel's centerline.
    pub depth: f64,
    /// Gaussian scale of the vessel cross-section.
    pub vessel_sigma: f64,
    pub noise_sigma: f64,
    /// Field-of-view disc radius in pixels, centered in the image.
    pub fov_radius: f64,
    /// Pixels within this distance of a centerline are vessel.
    pub truth_half_width: f64,
    pub strokes: Vec<Stroke>,
}

impl PhantomSpec {
    /// 128 x 128 field at 0.8 with three long dark strokes (depth 0.3,
    /// sigma 1.5) and noise sigma 0.02. Truth is the region where the dip
    /// exceeds half its depth.
    pub fn standard() -> Self {
        let vessel_sigma = 1.5;
        Self {
            width: 128,
            height: 128,
            background: 0.8,
            depth: 0.3,
            vessel_sigma,
            noise_sigma: 0.02,
            fov_radius: 60.0,
            truth_half_width: half_depth_radius(vessel_sigma),
            strokes: vec![
                Stroke { from: (22.0, 40.0), to: (106.0, 58.0) },
                Stroke { from: (44.0, 104.0), to: (88.0, 22.0) },
                Stroke { from: (60.0, 112.0), to: (108.0, 80.0) },
            ],
        }
    }

    /// Standard geometry with `count` random strokes of length at least
    /// `min_length` inside the field of view.
    pub fn random(seed: u64, count: usize, min_length: f64) -> Self {
        let mut spec = Self::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57a0);
        let (cx, cy) = spec.center();
        let r = spec.fov_radius - 6.0;
        let point = |rng: &mut ChaCha8Rng| loop {
            let (x, y) = (rng.gen_range(-r..r), rng.gen_range(-r..r));
            if x.hypot(y) <= r {
                return (cx + x, cy + y);
            }
        };
        spec.strokes.clear();
        while spec.strokes.len() < count {
            let stroke = Stroke {
                from: point(&mut rng),
                to: point(&mut rng),
            };
            if stroke.length() >= min_length {
                spec.strokes.push(stroke);
            }
        }
        spec
    }

    /// Same field without vessels or noise.
    pub fn blank() -> Self {
        Self {
            strokes: Vec::new(),
            noise_sigma: 0.0,
            ..Self::standard()
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

/// Distance at which a Gaussian dip of scale `sigma` falls to half depth.
pub fn half_depth_radius(sigma: f64) -> f64 {
    sigma * (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub gray: GrayImage,
    pub rgb: RgbImage,
    pub fov: BinaryImage,
    pub truth: BinaryImage,
}

pub fn generate(spec: &PhantomSpec, seed: u64) -> Phantom {
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = spec.center();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite noise scale");

    let mut gray = Vec::with_capacity(w * h);
    let mut truth = Vec::with_capacity(w * h);
    let mut fov = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let nearest = spec
                .strokes
                .iter()
                .map(|s| s.distance(xf, yf))
                .fold(f64::INFINITY, f64::min);
            let dip = spec.depth * (-nearest * nearest / (2.0 * spec.vessel_sigma.powi(2))).exp();
            let jitter = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            gray.push((spec.background - dip + jitter).clamp(0.0, 1.0));
            let inside = (xf - cx).hypot(yf - cy) <= spec.fov_radius;
            fov.push(inside);
            truth.push(inside && nearest <= spec.truth_half_width);
        }
    }
    let gray = GrayImage::from_raw(w, h, gray);
    Phantom {
        rgb: RgbImage::from_gray(&gray),
        gray,
        fov: BinaryImage::from_raw(w, h, fov),
        truth: BinaryImage::from_raw(w, h, truth),
    }
}
