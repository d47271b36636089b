//! Modified-Gaussian matched-filter kernels.
//!
//! A kernel models the cross-section of a vessel segment of length `L`: the
//! Gaussian profile `exp(-x^2 / 2 sigma^2)` is inverted against its own peak,
//! made zero-mean over the kernel support and scaled by the sum of the
//! inverted profile. The support is every grid cell whose rotated center
//! satisfies `|x| <= x_limit` and `|y| <= L / 2`.

use std::fmt;

use crate::error::{Error, Result};

/// Slack for classifying cells whose rotated coordinate lands on the support
/// boundary up to trigonometric rounding.
const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// Scale of the Gaussian cross-profile, in pixels.
    pub sigma: f64,
    /// Half-width at which the profile tails are truncated.
    pub x_limit: f64,
    /// Length of the vessel segment along the kernel's long axis.
    pub length: f64,
    pub n_orientations: usize,
    /// Grid columns; spans the profile axis at zero orientation.
    pub grid_cols: usize,
    /// Grid rows; spans the length axis at zero orientation.
    pub grid_rows: usize,
}

impl KernelParams {
    /// Parameters tuned for DRIVE: sigma 0.57, L = 8.
    pub fn drive() -> Self {
        Self::with_profile(0.57, 8.0)
    }

    /// Parameters tuned for STARE: sigma 1.57, L = 9.
    pub fn stare() -> Self {
        Self::with_profile(1.57, 9.0)
    }

    /// Default 12 x (15 x 17) bank with truncation at 6.99.
    pub fn with_profile(sigma: f64, length: f64) -> Self {
        Self {
            sigma,
            x_limit: 6.99,
            length,
            n_orientations: 12,
            grid_cols: 15,
            grid_rows: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.x_limit > 0.0 && self.x_limit.is_finite()) {
            return bad(format!("x_limit must be positive, got {}", self.x_limit));
        }
        if !(self.length >= 1.0 && self.length.is_finite()) {
            return bad(format!("L must be at least 1, got {}", self.length));
        }
        if self.n_orientations < 1 {
            return bad("at least one orientation is required".into());
        }
        if self.grid_cols.is_multiple_of(2) || self.grid_rows.is_multiple_of(2) {
            return bad(format!(
                "kernel grid must have odd dimensions, got {}x{}",
                self.grid_rows, self.grid_cols
            ));
        }
        Ok(())
    }

    pub fn angle_of(&self, orientation_index: usize) -> f64 {
        orientation_index as f64 * 180.0 / self.n_orientations as f64
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::drive()
    }
}

impl fmt::Display for KernelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sigma={} x_limit={} L={} orientations={} grid={}x{}",
            self.sigma, self.x_limit, self.length, self.n_orientations, self.grid_rows, self.grid_cols
        )
    }
}

/// `exp(-x^2 / (2 sigma^2))`.
pub fn gaussian_profile(x: f64, sigma: f64) -> f64 {
    (-(x * x) / (2.0 * sigma * sigma)).exp()
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
pub(crate) fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// A single oriented kernel on a `rows x cols` grid centered at the middle
/// cell. Cells outside the support carry zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    theta: f64,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    support: Vec<bool>,
}

impl Kernel {
    /// Orientation in degrees.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn half_rows(&self) -> usize {
        self.rows / 2
    }

    pub fn half_cols(&self) -> usize {
        self.cols / 2
    }

    /// Row-major weights, top-left first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// Weight at signed offset `(dv, du)` from the center (rows, columns).
    pub fn weight(&self, dv: isize, du: isize) -> f64 {
        let r = (dv + self.half_rows() as isize) as usize;
        let c = (du + self.half_cols() as isize) as usize;
        self.weights[r * self.cols + c]
    }

    pub fn in_support(&self, dv: isize, du: isize) -> bool {
        let r = (dv + self.half_rows() as isize) as usize;
        let c = (du + self.half_cols() as isize) as usize;
        self.support[r * self.cols + c]
    }

    pub fn support_len(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// `(dv, du, weight)` for every support cell in row-major order.
    pub fn taps(&self) -> Vec<(isize, isize, f64)> {
        let hr = self.half_rows() as isize;
        let hc = self.half_cols() as isize;
        let mut taps = Vec::with_capacity(self.support_len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                if self.support[i] {
                    taps.push((r as isize - hr, c as isize - hc, self.weights[i]));
                }
            }
        }
        taps
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Build the kernel for one orientation.
pub fn build_kernel(params: &KernelParams, orientation_index: usize) -> Result<Kernel> {
    params.validate()?;
    if orientation_index >= params.n_orientations {
        return Err(Error::InvalidParams(format!(
            "orientation index {orientation_index} out of range for {} orientations",
            params.n_orientations
        )));
    }
    build_kernel_at(params, params.angle_of(orientation_index))
}

/// Build a kernel at an arbitrary angle in degrees.
pub fn build_kernel_at(params: &KernelParams, theta: f64) -> Result<Kernel> {
    params.validate()?;
    let rows = params.grid_rows;
    let cols = params.grid_cols;
    let hr = (rows / 2) as isize;
    let hc = (cols / 2) as isize;
    let (sin, cos) = sin_cos_deg(theta);
    let half_length = params.length / 2.0;

    let mut support = vec![false; rows * cols];
    let mut profile = vec![0.0; rows * cols];
    for r in 0..rows {
        let v = r as isize - hr;
        for c in 0..cols {
            let u = c as isize - hc;
            // [x, y] = [u, v] * Rm^T
            let x = u as f64 * cos - v as f64 * sin;
            let y = u as f64 * sin + v as f64 * cos;
            let i = r * cols + c;
            if x.abs() <= params.x_limit + SUPPORT_EPS && y.abs() <= half_length + SUPPORT_EPS {
                support[i] = true;
                profile[i] = gaussian_profile(x, params.sigma);
            }
        }
    }

    let failure = |reason: &str| Error::KernelConstruction {
        params: params.to_string(),
        reason: format!("{reason} at theta={theta}"),
    };
    let count = support.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(failure("empty support"));
    }

    let peak = support
        .iter()
        .zip(&profile)
        .filter(|(&s, _)| s)
        .map(|(_, &k)| k)
        .fold(f64::NEG_INFINITY, f64::max);
    let inverted: Vec<f64> = support
        .iter()
        .zip(&profile)
        .map(|(&s, &k)| if s { peak - k } else { 0.0 })
        .collect();
    let total: f64 = inverted.iter().sum();
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(total > 0.0) {
        return Err(failure("inverted profile sums to zero"));
    }
    let mean = total / count as f64;
    let weights = support
        .iter()
        .zip(&inverted)
        .map(|(&s, &k)| if s { (k - mean) / total } else { 0.0 })
        .collect();

    Ok(Kernel {
        theta,
        rows,
        cols,
        weights,
        support,
    })
}

/// Kernels for every orientation `i * 180 / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    params: KernelParams,
    kernels: Vec<Kernel>,
}

impl KernelBank {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.kernels.iter().map(Kernel::theta).collect()
    }

    /// Bank holding a single kernel, for diagnostics.
    pub fn single(params: KernelParams, kernel: Kernel) -> Self {
        Self {
            params: KernelParams {
                n_orientations: 1,
                ..params
            },
            kernels: vec![kernel],
        }
    }
}

pub fn build_bank(params: &KernelParams) -> Result<KernelBank> {
    let kernels = (0..params.n_orientations)
        .map(|i| build_kernel(params, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelBank {
        params: *params,
        kernels,
    })
}

/// Plain-text matrix dump, one grid row per line.
pub fn format_kernel(kernel: &Kernel) -> String {
    let mut out = String::new();
    for row in kernel.weights.chunks(kernel.cols) {
        let line: Vec<String> = row.iter().map(|w| format!("{w:+.6e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn preset_params() -> [KernelParams; 2] {
        [KernelParams::drive(), KernelParams::stare()]
    }

    #[test]
    fn profile_closed_forms() {
        assert_eq!(gaussian_profile(0.0, 0.57), 1.0);
        assert_eq!(gaussian_profile(0.0, 9.0), 1.0);
        assert_abs_diff_eq!(gaussian_profile(1.3, 1.3), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_profile(-2.0, 2.0), 0.6065306597126334, epsilon = 1e-15);
    }

    #[test]
    fn profile_at_truncation_matches_high_precision_value() {
        // exp(-6.99^2 / (2 * 1.57^2)) evaluated with 50-digit arithmetic
        let oracle = 4.961_720_710_015_672e-5;
        let got = gaussian_profile(6.99, 1.57);
        assert!(((got - oracle) / oracle).abs() < 1e-13, "{got}");
    }

    #[test]
    fn drive_support_at_zero_degrees() {
        let k = build_kernel(&KernelParams::drive(), 0).unwrap();
        for dv in -8..=8isize {
            for du in -7..=7isize {
                assert_eq!(k.in_support(dv, du), du.abs() <= 6 && dv.abs() <= 4, "({dv},{du})");
            }
        }
        assert!(k.weight(0, 0) < k.weight(0, 6));
        assert!(k.weight(2, 0) < k.weight(2, -6));
    }

    #[test]
    fn bank_angles() {
        let bank = build_bank(&KernelParams::drive()).unwrap();
        assert_eq!(bank.len(), 12);
        let expected: Vec<f64> = (0..12).map(|i| 15.0 * i as f64).collect();
        assert_eq!(bank.angles(), expected);

        let single = build_bank(&KernelParams {
            n_orientations: 1,
            ..KernelParams::drive()
        })
        .unwrap();
        assert_eq!(single.angles(), vec![0.0]);
    }

    #[test]
    fn zero_sum_and_half_turn_periodicity() {
        for params in preset_params() {
            for kernel in build_bank(&params).unwrap().kernels() {
                assert!(kernel.weight_sum().abs() <= 1e-9, "{params} theta={}", kernel.theta());
                let turned = build_kernel_at(&params, kernel.theta() + 180.0).unwrap();
                assert_eq!(turned.support(), kernel.support());
                for (a, b) in turned.weights().iter().zip(kernel.weights()) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn even_symmetry_at_zero_degrees() {
        for params in preset_params() {
            let k = build_kernel(&params, 0).unwrap();
            for dv in -8..=8isize {
                for du in -7..=7isize {
                    assert_eq!(k.weight(dv, du), k.weight(dv, -du));
                    assert_eq!(k.weight(dv, du), k.weight(-dv, du));
                }
            }
        }
    }

    #[test]
    fn weight_grows_with_distance_from_axis() {
        for params in preset_params() {
            let k = build_kernel(&params, 0).unwrap();
            let mut by_distance: Vec<(isize, f64)> = k
                .taps()
                .into_iter()
                .map(|(_, du, w)| (du.abs(), w))
                .collect();
            by_distance.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for pair in by_distance.windows(2) {
                assert!(pair[0].1 <= pair[1].1, "{params}: {pair:?}");
            }
        }
    }

    #[test]
    fn degenerate_params_fail() {
        let narrow = KernelParams {
            x_limit: 0.5,
            ..KernelParams::drive()
        };
        assert!(matches!(
            build_kernel(&narrow, 0),
            Err(Error::KernelConstruction { .. })
        ));
        assert!(build_kernel(&KernelParams::drive(), 12).is_err());
        let even = KernelParams {
            grid_cols: 14,
            ..KernelParams::drive()
        };
        assert!(build_kernel(&even, 0).is_err());
        let zero_sigma = KernelParams {
            sigma: 0.0,
            ..KernelParams::drive()
        };
        assert!(build_bank(&zero_sigma).is_err());
    }

    #[test]
    fn dump_has_one_line_per_row() {
        let k = build_kernel(&KernelParams::stare(), 3).unwrap();
        let text = format_kernel(&k);
        assert_eq!(text.lines().count(), 17);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 15));
    }

    proptest! {
        #[test]
        fn zero_sum_for_any_valid_params(
            sigma in 0.3f64..10.0,
            x_limit in 1.0f64..10.0,
            length in 1.0f64..15.0,
            index in 0usize..12,
        ) {
            let params = KernelParams { sigma, x_limit, length, ..KernelParams::drive() };
            let k = build_kernel(&params, index).unwrap();
            prop_assert!(k.weight_sum().abs() <= 1e-9);
        }

        #[test]
        fn longer_segments_keep_support(
            length in 1.0f64..14.0,
            extra in 0.0f64..4.0,
            index in 0usize..12,
        ) {
            let short = KernelParams { length, ..KernelParams::stare() };
            let long = KernelParams { length: length + extra, ..short };
            let a = build_kernel(&short, index).unwrap();
            let b = build_kernel(&long, index).unwrap();
            for (sa, sb) in a.support().iter().zip(b.support()) {
                prop_assert!(!sa || *sb);
            }
        }
    }
}
