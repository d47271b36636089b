//! Agreement between a segmentation and its ground truth.

use crate::error::{Error, Result};
use crate::imageio::{quantize, BinaryImage, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Which pixels the metrics are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalScope {
    #[default]
    FullImage,
    Fov,
}

pub fn confusion(seg: &BinaryImage, gt: &BinaryImage, scope: Option<&BinaryImage>) -> Result<ConfusionCounts> {
    check_dims(seg.dims(), gt.dims())?;
    if let Some(s) = scope {
        check_dims(seg.dims(), s.dims())?;
    }
    let mut c = ConfusionCounts::default();
    for (i, (&s, &g)) in seg.pixels().iter().zip(gt.pixels()).enumerate() {
        if scope.is_some_and(|m| !m.pixels()[i]) {
            continue;
        }
        match (s, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Sensitivity, specificity and accuracy; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    BasicMetrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// Root-mean-square pixel difference of two 0/1 maps.
pub fn rmsd(seg: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    check_dims(seg.dims(), gt.dims())?;
    let n = seg.pixels().len() as f64;
    let differing = seg
        .pixels()
        .iter()
        .zip(gt.pixels())
        .filter(|(a, b)| a != b)
        .count() as f64;
    Ok((differing / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MadConvention {
    /// Square root of the mean absolute deviation.
    #[default]
    Root,
    /// Plain mean absolute deviation.
    Plain,
}

/// Dispersion of pixel values around their mean.
pub fn mad(values: &[f64], convention: MadConvention) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    // Shifted by the first value so constant input gives exactly zero.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let dev = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    match convention {
        MadConvention::Root => dev.sqrt(),
        MadConvention::Plain => dev,
    }
}

pub fn mad_binary(image: &BinaryImage, convention: MadConvention) -> f64 {
    mad(image.to_gray().pixels(), convention)
}

pub fn mad_gray(image: &GrayImage, convention: MadConvention) -> f64 {
    mad(image.pixels(), convention)
}

/// `|mad(seg) - mad(gt)|`.
pub fn mad_difference(seg: &BinaryImage, gt: &BinaryImage, convention: MadConvention) -> Result<f64> {
    check_dims(seg.dims(), gt.dims())?;
    Ok((mad_binary(seg, convention) - mad_binary(gt, convention)).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, both coordinates non-decreasing.
    pub points: Vec<(f64, f64)>,
}

/// ROC over the 256 quantized response levels: at threshold `t` a pixel is
/// called vessel iff its level exceeds `t`. Consecutive duplicate points
/// are collapsed.
pub fn roc_curve(response: &GrayImage, gt: &BinaryImage, scope: Option<&BinaryImage>) -> Result<RocCurve> {
    check_dims(response.dims(), gt.dims())?;
    if let Some(s) = scope {
        check_dims(response.dims(), s.dims())?;
    }
    let mut pos = [0u64; 256];
    let mut neg = [0u64; 256];
    for (i, (&v, &g)) in response.pixels().iter().zip(gt.pixels()).enumerate() {
        if scope.is_some_and(|m| !m.pixels()[i]) {
            continue;
        }
        let level = quantize(v) as usize;
        if g {
            pos[level] += 1;
        } else {
            neg[level] += 1;
        }
    }
    let (p, n) = (pos.iter().sum::<u64>(), neg.iter().sum::<u64>());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedCurve);
    }

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // threshold t admits level t + 1 and above; t = 255 admits nothing
    for t in (-1..255i32).rev() {
        let admitted = (t + 1) as usize;
        tp += pos[admitted];
        fp += neg[admitted];
        let point = (fp as f64 / n as f64, tp as f64 / p as f64);
        if points.last() != Some(&point) {
            points.push(point);
        }
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub rmsd: f64,
    pub mad_seg: f64,
    pub mad_gt: f64,
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn mad_diff(&self) -> f64 {
        (self.mad_seg - self.mad_gt).abs()
    }
}

/// Every metric for one image. `response` feeds the ROC when present.
pub fn evaluate(
    seg: &BinaryImage,
    gt: &BinaryImage,
    response: Option<&GrayImage>,
    scope: Option<&BinaryImage>,
    convention: MadConvention,
) -> Result<MetricsReport> {
    let counts = confusion(seg, gt, scope)?;
    let basic = basic_metrics(&counts);
    let auc = match response {
        Some(r) => match roc_curve(r, gt, scope) {
            Ok(curve) => Some(auc(&curve)),
            Err(Error::UndefinedCurve) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(MetricsReport {
        counts,
        sensitivity: basic.sensitivity,
        specificity: basic.specificity,
        accuracy: basic.accuracy,
        rmsd: rmsd(seg, gt)?,
        mad_seg: mad_binary(seg, convention),
        mad_gt: mad_binary(gt, convention),
        auc,
    })
}
