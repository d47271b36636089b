//! Coarse-to-fine parameter selection by mean segmentation accuracy.
//!
//! Round 1 scans a full `(x_limit, sigma)` grid. Rounds 2 and 3 rescan a
//! window around the previous best at finer steps. A separate scan picks the
//! kernel length. Combinations whose kernel cannot be built (too narrow an
//! `x_limit`) are logged with no accuracy and never win.

use crate::error::{Error, Result};
use crate::imageio::{BinaryImage, RgbImage};
use crate::kernelbank::build_bank;
use crate::metrics::{basic_metrics, confusion};
use crate::par::{map_indexed, Parallelism};
use crate::segment::{run_pipeline, PipelineParams};

/// One labelled image of an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub fov: BinaryImage,
    pub truth: BinaryImage,
}

/// Snap grid arithmetic to 1e-9 so that `0.1 * 3` lands on `0.3`.
fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    pub fn single(v: f64) -> Self {
        Self { lo: v, hi: v, step: 1.0 }
    }

    /// 0.5 to 10 in steps of 0.5.
    pub fn coarse() -> Self {
        Self { lo: 0.5, hi: 10.0, step: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite grid {self:?}")));
        }
        if self.lo > self.hi || self.step <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "grid needs lo <= hi and step > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `lo, lo + step, ...` up to `hi` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| snap(self.lo + i as f64 * self.step)).collect()
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lo - 1e-9 && v <= self.hi + 1e-9
    }
}

/// Half-width and step of a refinement round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub half_width: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub x_limit: GridSpec,
    pub sigma: GridSpec,
    pub refinements: Vec<Refinement>,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            x_limit: GridSpec::coarse(),
            sigma: GridSpec::coarse(),
            refinements: vec![
                Refinement { half_width: 0.5, step: 0.1 },
                Refinement { half_width: 0.1, step: 0.01 },
            ],
        }
    }
}

pub const MIN_SIGMA: f64 = 0.01;

/// Window `center +- half_width` at `step`, kept inside `bounds` and above
/// `floor`.
pub fn refine_axis(center: f64, refinement: Refinement, bounds: &GridSpec, floor: f64) -> Vec<f64> {
    let m = (refinement.half_width / refinement.step + 1e-9).floor() as i64;
    (-m..=m)
        .map(|j| snap(center + j as f64 * refinement.step))
        .filter(|&v| bounds.contains(v) && v >= floor - 1e-12)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// 1-based round; the length scan is round 1.
    pub round: usize,
    pub x_limit: f64,
    pub sigma: f64,
    pub length: f64,
    /// `None` when the kernel could not be built.
    pub mean_accuracy: Option<f64>,
    /// Accuracy per sample in dataset order.
    pub per_image: Vec<f64>,
}

impl Evaluation {
    fn key(&self) -> (f64, f64, f64) {
        (self.x_limit, self.sigma, self.length)
    }

    /// Strictly better: higher accuracy, or equal accuracy and smaller
    /// parameters.
    fn beats(&self, other: &Evaluation) -> bool {
        match (self.mean_accuracy, other.mean_accuracy) {
            (Some(a), Some(b)) => a > b || (a == b && self.key() < other.key()),
            (Some(_), None) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Every evaluation in grid order, round by round.
    pub evaluations: Vec<Evaluation>,
    pub best: Evaluation,
    pub round_bests: Vec<Evaluation>,
}

impl SweepResult {
    pub fn round(&self, round: usize) -> impl Iterator<Item = &Evaluation> {
        self.evaluations.iter().filter(move |e| e.round == round)
    }

    /// Per-image variant of the objective: for each sample, the feasible
    /// evaluation with its highest accuracy (same tie-break).
    pub fn per_image_bests(&self) -> Vec<&Evaluation> {
        let n = self.best.per_image.len();
        (0..n)
            .map(|i| {
                let mut best: Option<&Evaluation> = None;
                for e in self.evaluations.iter().filter(|e| e.mean_accuracy.is_some()) {
                    let better = match best {
                        None => true,
                        Some(b) => {
                            e.per_image[i] > b.per_image[i]
                                || (e.per_image[i] == b.per_image[i] && e.key() < b.key())
                        }
                    };
                    if better {
                        best = Some(e);
                    }
                }
                best.expect("best is feasible")
            })
            .collect()
    }
}

fn image_accuracies(dataset: &[Sample], params: &PipelineParams, par: Parallelism) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidParams("empty dataset".into()));
    }
    params.clahe.validate()?;
    let bank = build_bank(&params.kernel)?;
    let results = map_indexed(dataset.len(), par, |i| {
        let s = &dataset[i];
        let seg = run_pipeline(&s.image, &s.fov, params, &bank, Parallelism::Sequential)?;
        let counts = confusion(&seg.vessel_map, &s.truth, None)?;
        basic_metrics(&counts).accuracy.ok_or(Error::EmptyRegion)
    });
    results
        .into_iter()
        .zip(dataset)
        .map(|(r, s)| r.map_err(|e| e.for_image(&s.id)))
        .collect()
}

/// Order-independent mean: summing sorted values makes the result a
/// function of the multiset alone.
fn mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Mean full-image accuracy of the pipeline over `dataset`.
pub fn evaluate_combo(dataset: &[Sample], params: &PipelineParams, par: Parallelism) -> Result<f64> {
    image_accuracies(dataset, params, par).map(|a| mean(&a))
}

fn run_round(
    dataset: &[Sample],
    combos: &[(f64, f64, f64)],
    base: &PipelineParams,
    round: usize,
    par: Parallelism,
) -> Result<Vec<Evaluation>> {
    let results = map_indexed(combos.len(), par, |i| {
        let (x_limit, sigma, length) = combos[i];
        let mut params = *base;
        params.kernel.x_limit = x_limit;
        params.kernel.sigma = sigma;
        params.kernel.length = length;
        let per_image = match image_accuracies(dataset, &params, Parallelism::Sequential) {
            Ok(a) => a,
            Err(Error::KernelConstruction { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(Evaluation {
            round,
            x_limit,
            sigma,
            length,
            mean_accuracy: (!per_image.is_empty()).then(|| mean(&per_image)),
            per_image,
        })
    });
    results.into_iter().collect()
}

fn best_of(evals: &[Evaluation], round: usize) -> Result<Evaluation> {
    let mut best: Option<&Evaluation> = None;
    for e in evals {
        if best.map_or(e.mean_accuracy.is_some(), |b| e.beats(b)) {
            best = Some(e);
        }
    }
    best.cloned().ok_or_else(|| {
        Error::InvalidParams(format!("no buildable kernel among the round {round} combinations"))
    })
}

fn finish(evaluations: Vec<Evaluation>, round_bests: Vec<Evaluation>) -> SweepResult {
    let mut best = round_bests[0].clone();
    for b in &round_bests[1..] {
        if b.beats(&best) {
            best = b.clone();
        }
    }
    SweepResult {
        evaluations,
        best,
        round_bests,
    }
}

/// Joint `(x_limit, sigma)` search at the kernel length in `base`.
pub fn three_round_search(
    dataset: &[Sample],
    spec: &SearchSpec,
    base: &PipelineParams,
    par: Parallelism,
) -> Result<SweepResult> {
    spec.x_limit.validate()?;
    spec.sigma.validate()?;
    for r in &spec.refinements {
        if !(r.step > 0.0 && r.half_width >= 0.0) {
            return Err(Error::InvalidParams(format!("invalid refinement {r:?}")));
        }
    }
    let length = base.kernel.length;
    let grid = |xs: &[f64], ss: &[f64]| -> Vec<(f64, f64, f64)> {
        xs.iter()
            .flat_map(|&x| ss.iter().map(move |&s| (x, s, length)))
            .collect()
    };

    let mut evaluations = Vec::new();
    let mut round_bests = Vec::new();
    let mut combos = grid(&spec.x_limit.values(), &spec.sigma.values());
    for round in 1..=spec.refinements.len() + 1 {
        let evals = run_round(dataset, &combos, base, round, par)?;
        let best = best_of(&evals, round)?;
        evaluations.extend(evals);
        if let Some(r) = spec.refinements.get(round - 1) {
            let xs = refine_axis(best.x_limit, *r, &spec.x_limit, f64::NEG_INFINITY);
            let ss = refine_axis(best.sigma, *r, &spec.sigma, MIN_SIGMA);
            combos = grid(&xs, &ss);
        }
        round_bests.push(best);
    }
    Ok(finish(evaluations, round_bests))
}

/// Scan kernel lengths at the `x_limit` and `sigma` in `base`; ties go to
/// the shortest kernel.
pub fn length_search(
    dataset: &[Sample],
    lengths: &GridSpec,
    base: &PipelineParams,
    par: Parallelism,
) -> Result<SweepResult> {
    lengths.validate()?;
    let combos: Vec<_> = lengths
        .values()
        .into_iter()
        .map(|l| (base.kernel.x_limit, base.kernel.sigma, l))
        .collect();
    let evals = run_round(dataset, &combos, base, 1, par)?;
    let best = best_of(&evals, 1)?;
    Ok(finish(evals, vec![best]))
}
