use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vesselmf::dataset::{discover_dataset, DatasetManifest, Layout, ManifestEntry};
use vesselmf::metrics::{EvalScope, MadConvention};
use vesselmf::segment::{ComponentSize, GrayConversion, OtsuScope};
use vesselmf::sweep::GridSpec;
use vesselmf::{KernelParams, PipelineParams};

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "vesselmf", version, about = "Matched-filter retinal vessel segmentation")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, env = "VESSELMF_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment images and write vessel maps.
    Segment(SegmentArgs),
    /// Score segmentations against ground truth.
    Eval(EvalArgs),
    /// Search kernel parameters by mean accuracy.
    Sweep(SweepArgs),
    /// ROC curves of the normalized filter response.
    Roc(RocArgs),
    /// Inspect the kernel bank.
    Kernel {
        #[command(subcommand)]
        action: KernelAction,
    },
}

#[derive(Subcommand, Debug)]
pub enum KernelAction {
    /// Print every kernel as a matrix; optionally write PGM heatmaps.
    Dump(KernelDumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Drive,
    Stare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Full,
    Fov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GrayArg {
    Pca,
    Luma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Drive,
    Stare,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MadArg {
    Root,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

/// Parse a `ValueEnum` from config-file text.
fn enum_value<T: ValueEnum>(cfg: &ConfigFile, flag: Option<T>, key: &str) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    cfg.raw(key)
        .map(|v| T::from_str(v, true).map_err(|e| anyhow::anyhow!("bad value for `{key}`: {e}")))
        .transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinSize(pub ComponentSize);

impl FromStr for MinSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MinSize(ComponentSize::Auto));
        }
        s.parse::<usize>()
            .map(|n| MinSize(ComponentSize::Pixels(n)))
            .map_err(|_| format!("expected `auto` or a pixel count, got `{s}`"))
    }
}

/// `lo:hi:step`, or a single value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg(pub GridSpec);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number in `{s}`")))
            .collect::<std::result::Result<_, _>>()?;
        let grid = match parts[..] {
            [v] => GridSpec::single(v),
            [lo, hi, step] => GridSpec::new(lo, hi, step).map_err(|e| e.to_string())?,
            _ => return Err(format!("expected `lo:hi:step`, got `{s}`")),
        };
        Ok(GridArg(grid))
    }
}

/// Keys accepted in `--config` files.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "sigma",
    "x-limit",
    "length",
    "orientations",
    "min-size",
    "otsu-scope",
    "gray",
    "clahe-tiles",
    "clahe-clip",
    "dataset-dir",
    "layout",
    "eval-scope",
    "mad",
    "round1-x",
    "round1-sigma",
    "l-grid",
];

#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    /// `key = value` file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter set to start from [default: drive].
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Gaussian scale of the kernel profile.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Profile truncation |x| <= x-limit.
    #[arg(long = "x-limit")]
    pub x_limit: Option<f64>,
    /// Kernel length L along the vessel.
    #[arg(long)]
    pub length: Option<f64>,
    /// Number of kernel orientations over 180 degrees
    #[arg(long)]
    pub orientations: Option<usize>,
    /// Smallest kept component in pixels, or `auto` (30 px at 565x584, scaled).
    #[arg(long = "min-size")]
    pub min_size: Option<MinSize>,
    /// Pixels feeding the Otsu histogram [default: full].
    #[arg(long = "otsu-scope", value_enum)]
    pub otsu_scope: Option<ScopeArg>,
    /// Color-to-gray conversion [default: pca].
    #[arg(long, value_enum)]
    pub gray: Option<GrayArg>,
    /// CLAHE tiles per axis [default: 8].
    #[arg(long = "clahe-tiles")]
    pub clahe_tiles: Option<usize>,
    /// CLAHE clip limit as a fraction of tile pixels [default: 0.01].
    #[arg(long = "clahe-clip")]
    pub clahe_clip: Option<f64>,
}

impl PipelineArgs {
    pub fn load_config(&self) -> Result<ConfigFile> {
        let cfg = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        cfg.check_keys(CONFIG_KEYS)?;
        Ok(cfg)
    }

    pub fn resolve(&self, cfg: &ConfigFile) -> Result<PipelineParams> {
        let mut p = match enum_value(cfg, self.preset, "preset")?.unwrap_or(Preset::Drive) {
            Preset::Drive => PipelineParams::drive(),
            Preset::Stare => PipelineParams::stare(),
        };
        let k: &mut KernelParams = &mut p.kernel;
        if let Some(v) = cfg.pick(self.sigma, "sigma")? {
            k.sigma = v;
        }
        if let Some(v) = cfg.pick(self.x_limit, "x-limit")? {
            k.x_limit = v;
        }
        if let Some(v) = cfg.pick(self.length, "length")? {
            k.length = v;
        }
        if let Some(v) = cfg.pick(self.orientations, "orientations")? {
            k.n_orientations = v;
        }
        if let Some(MinSize(v)) = cfg.pick(self.min_size, "min-size")? {
            p.min_component_size = v;
        }
        if let Some(v) = enum_value(cfg, self.otsu_scope, "otsu-scope")? {
            p.otsu_scope = match v {
                ScopeArg::Full => OtsuScope::FullImage,
                ScopeArg::Fov => OtsuScope::FovOnly,
            };
        }
        if let Some(v) = enum_value(cfg, self.gray, "gray")? {
            p.gray = match v {
                GrayArg::Pca => GrayConversion::Pca,
                GrayArg::Luma => GrayConversion::Luma,
            };
        }
        if let Some(v) = cfg.pick(self.clahe_tiles, "clahe-tiles")? {
            p.clahe.tiles_x = v;
            p.clahe.tiles_y = v;
        }
        if let Some(v) = cfg.pick(self.clahe_clip, "clahe-clip")? {
            p.clahe.clip_limit = v;
        }
        p.kernel.validate()?;
        p.clahe.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Single color image (PPM/PGM).
    #[arg(long, conflicts_with = "dataset_dir")]
    pub image: Option<PathBuf>,
    /// Field-of-view mask for `--image`.
    #[arg(long, requires = "image")]
    pub mask: Option<PathBuf>,
    /// Ground truth for `--image`.
    #[arg(long, requires = "image")]
    pub truth: Option<PathBuf>,
    /// Id for `--image` [default: file stem].
    #[arg(long, requires = "image")]
    pub id: Option<String>,
    /// Dataset root, searched recursively.
    #[arg(long = "dataset-dir")]
    pub dataset_dir: Option<PathBuf>,
    /// File naming scheme under `--dataset-dir` [default: drive].
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
}

impl InputArgs {
    /// The images to process, plus discovery warnings.
    pub fn manifest(&self, cfg: &ConfigFile) -> Result<(DatasetManifest, Vec<String>)> {
        if let Some(image) = &self.image {
            let mask = self.mask.clone().context("--image needs --mask")?;
            let id = match &self.id {
                Some(id) => id.clone(),
                None => stem(image)?,
            };
            let entry = ManifestEntry {
                id,
                image: image.clone(),
                fov: mask,
                truth: self.truth.clone(),
            };
            return Ok((DatasetManifest { entries: vec![entry] }, Vec::new()));
        }
        let dir: PathBuf = match cfg.pick(self.dataset_dir.clone(), "dataset-dir")? {
            Some(d) => d,
            None => bail!("no input: give --image/--mask or --dataset-dir"),
        };
        let layout = match enum_value(cfg, self.layout, "layout")?.unwrap_or(LayoutArg::Drive) {
            LayoutArg::Drive => Layout::Drive,
            LayoutArg::Stare => Layout::Stare,
            LayoutArg::Flat => Layout::Flat,
        };
        let found = discover_dataset(&dir, layout)?;
        Ok((found.manifest, found.warnings))
    }
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("cannot derive an id from {}", path.display()))
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory for `<id>_vessels.pgm` and dumps.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the normalized filter response as `<id>_mfr.pgm`.
    #[arg(long = "dump-mfr")]
    pub dump_mfr: bool,
    /// Also write every intermediate stage under `<id>_stages/`.
    #[arg(long = "dump-stages")]
    pub dump_stages: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Evaluate existing `<id>_vessels.pgm` (and `<id>_mfr.pgm` for AUC)
    /// from this directory instead of running the pipeline.
    #[arg(long = "seg-dir", conflicts_with = "segmentation")]
    pub seg_dir: Option<PathBuf>,
    /// Existing segmentation for `--image`.
    #[arg(long, requires = "image")]
    pub segmentation: Option<PathBuf>,
    /// Pixels counted by the metrics [default: full].
    #[arg(long = "eval-scope", value_enum)]
    pub eval_scope: Option<ScopeArg>,
    /// MAD convention: `root` takes the square root of the mean deviation
    /// [default: root].
    #[arg(long, value_enum)]
    pub mad: Option<MadArg>,
    /// Report path; `.json` selects JSON. Standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

impl EvalArgs {
    pub fn scope(&self, cfg: &ConfigFile) -> Result<EvalScope> {
        Ok(match enum_value(cfg, self.eval_scope, "eval-scope")? {
            Some(ScopeArg::Fov) => EvalScope::Fov,
            _ => EvalScope::FullImage,
        })
    }

    pub fn mad(&self, cfg: &ConfigFile) -> Result<MadConvention> {
        Ok(match enum_value(cfg, self.mad, "mad")? {
            Some(MadArg::Plain) => MadConvention::Plain,
            _ => MadConvention::Root,
        })
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Round-1 x-limit grid `lo:hi:step` [default: 0.5:10:0.5].
    #[arg(long = "round1-x")]
    pub round1_x: Option<GridArg>,
    /// Round-1 sigma grid `lo:hi:step` [default: 0.5:10:0.5].
    #[arg(long = "round1-sigma")]
    pub round1_sigma: Option<GridArg>,
    /// Kernel lengths for the L scan [default: 1:15:1].
    #[arg(long = "l-grid")]
    pub l_grid: Option<GridArg>,
    /// Which searches to run.
    #[arg(long, value_enum, default_value = "both")]
    pub mode: SweepMode,
    /// Also report the best combination per image.
    #[arg(long = "per-image")]
    pub per_image: bool,
    /// Evaluation log path; `.json` selects JSON. Standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    /// Three-round (x-limit, sigma) search.
    XSigma,
    /// L scan at the given x-limit and sigma.
    Length,
    /// (x-limit, sigma) search, then the L scan at its best.
    Both,
}

impl SweepArgs {
    pub fn grids(&self, cfg: &ConfigFile) -> Result<(GridSpec, GridSpec, GridSpec)> {
        let coarse = GridSpec::coarse();
        let x = cfg.pick(self.round1_x, "round1-x")?.map_or(coarse, |g| g.0);
        let s = cfg.pick(self.round1_sigma, "round1-sigma")?.map_or(coarse, |g| g.0);
        let l = cfg
            .pick(self.l_grid, "l-grid")?
            .map_or(GridSpec { lo: 1.0, hi: 15.0, step: 1.0 }, |g| g.0);
        Ok((x, s, l))
    }
}

#[derive(Args, Debug)]
pub struct RocArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory for `<id>_roc.csv` curves and `auc.csv`.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Restrict the curve to field-of-view pixels.
    #[arg(long = "eval-scope", value_enum)]
    pub eval_scope: Option<ScopeArg>,
}

#[derive(Args, Debug)]
pub struct KernelDumpArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Only this orientation index.
    #[arg(long)]
    pub orientation: Option<usize>,
    /// Also write `kernel_NN.pgm` heatmaps and `kernel_NN.txt` here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cfg = ConfigFile::parse("preset = stare\nsigma = 2.0\nmin-size = 12\ngray = luma\n").unwrap();
        let args = PipelineArgs {
            sigma: Some(1.0),
            ..Default::default()
        };
        let p = args.resolve(&cfg).unwrap();
        assert_eq!(p.kernel.sigma, 1.0);
        assert_eq!(p.kernel.length, 9.0);
        assert_eq!(p.min_component_size, ComponentSize::Pixels(12));
        assert_eq!(p.gray, GrayConversion::Luma);
    }

    #[test]
    fn grid_and_size_parsing() {
        assert_eq!("0.5:2:0.5".parse::<GridArg>().unwrap().0.values(), vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!("3".parse::<GridArg>().unwrap().0.values(), vec![3.0]);
        assert!("1:2".parse::<GridArg>().is_err());
        assert!("2:1:0.1".parse::<GridArg>().is_err());
        assert_eq!("auto".parse::<MinSize>().unwrap().0, ComponentSize::Auto);
        assert!("-3".parse::<MinSize>().is_err());
    }

    #[test]
    fn invalid_kernel_flags_are_rejected() {
        let args = PipelineArgs {
            sigma: Some(-1.0),
            ..Default::default()
        };
        assert!(args.resolve(&ConfigFile::default()).is_err());
    }
}
