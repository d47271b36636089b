use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use vesselmf::dataset::{load_entry, load_samples, DatasetManifest, LoadedEntry, ManifestEntry};
use vesselmf::imageio::{load_mask, read_pnm_file, write_pnm_file, PnmFormat, PnmImage};
use vesselmf::kernelbank::format_kernel;
use vesselmf::metrics::{auc, evaluate, roc_curve, EvalScope};
use vesselmf::par::map_indexed;
use vesselmf::preprocess::luma_grayscale;
use vesselmf::segment::{ComponentSize, GrayConversion, OtsuScope};
use vesselmf::sweep::{length_search, three_round_search, SearchSpec, SweepResult};
use vesselmf::{build_bank, BinaryImage, Error, GrayImage, Parallelism, Pipeline, PipelineParams, SegmentationResult};

use crate::cli::{EvalArgs, FormatArg, KernelDumpArgs, RocArgs, ScopeArg, SegmentArgs, SweepArgs, SweepMode};
use crate::report::{self, EvalRow, Format, Metadata};

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn non_empty(manifest: DatasetManifest) -> Result<DatasetManifest> {
    if manifest.is_empty() {
        bail!("no images to process");
    }
    Ok(manifest)
}

/// Run `f` over the manifest, images in parallel when there are several.
/// Results come back in manifest order.
fn per_image<T: Send>(
    manifest: &DatasetManifest,
    par: Parallelism,
    f: impl Fn(&ManifestEntry, Parallelism) -> Result<T> + Sync + Send,
) -> Vec<Result<T>> {
    let entries = &manifest.entries;
    let (outer, inner) = if entries.len() > 1 {
        (par, Parallelism::Sequential)
    } else {
        (Parallelism::Sequential, par)
    };
    map_indexed(entries.len(), outer, |i| {
        f(&entries[i], inner).with_context(|| format!("image `{}`", entries[i].id))
    })
}

/// Split results, failing with every failed image listed.
fn collect<T>(results: Vec<Result<T>>) -> (Vec<T>, Option<anyhow::Error>) {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(format!("{e:#}")),
        }
    }
    let err = (!failed.is_empty()).then(|| {
        anyhow!("{} of {total} images failed:\n  {}", failed.len(), failed.join("\n  "))
    });
    (ok, err)
}

fn finish(err: Option<anyhow::Error>) -> Result<()> {
    err.map_or(Ok(()), Err)
}

pub fn pipeline_metadata(p: &PipelineParams) -> Metadata {
    let mut m = Metadata::new();
    m.insert("sigma".into(), p.kernel.sigma.to_string());
    m.insert("x_limit".into(), p.kernel.x_limit.to_string());
    m.insert("L".into(), p.kernel.length.to_string());
    m.insert("orientations".into(), p.kernel.n_orientations.to_string());
    m.insert(
        "min_size".into(),
        match p.min_component_size {
            ComponentSize::Auto => "auto".into(),
            ComponentSize::Pixels(n) => n.to_string(),
        },
    );
    m.insert(
        "otsu_scope".into(),
        match p.otsu_scope {
            OtsuScope::FullImage => "full",
            OtsuScope::FovOnly => "fov",
        }
        .into(),
    );
    m.insert(
        "gray".into(),
        match p.gray {
            GrayConversion::Pca => "pca",
            GrayConversion::Luma => "luma",
        }
        .into(),
    );
    m.insert(
        "clahe".into(),
        format!("{}x{}/{}", p.clahe.tiles_x, p.clahe.tiles_y, p.clahe.clip_limit),
    );
    m
}

fn report_format(flag: Option<FormatArg>, path: Option<&Path>) -> Format {
    match (flag, path) {
        (Some(FormatArg::Csv), _) => Format::Csv,
        (Some(FormatArg::Json), _) => Format::Json,
        (None, Some(p)) => Format::from_path(p),
        (None, None) => Format::Csv,
    }
}

fn with_report_sink(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let mut f = std::io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            write(&mut f)?;
            f.flush().with_context(|| format!("writing {}", p.display()))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(match read_pnm_file(path)? {
        PnmImage::Gray(g) => g,
        PnmImage::Rgb(c) => luma_grayscale(&c),
    })
}

fn read_binary(path: &Path) -> Result<BinaryImage> {
    Ok(load_mask(&read_pnm_file(path)?))
}

fn truth_of(loaded: &LoadedEntry) -> Result<&BinaryImage> {
    loaded
        .truth
        .as_ref()
        .ok_or_else(|| anyhow!("no ground truth for `{}`", loaded.id))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// segment ---------------------------------------------------------------

fn write_stages(dir: &Path, r: &SegmentationResult) -> Result<()> {
    create_dir(dir)?;
    let s = &r.stages;
    let fmt = PnmFormat::Binary;
    write_pnm_file(dir.join("1_gray.pgm"), &s.gray, fmt)?;
    write_pnm_file(dir.join("2_clahe.pgm"), &s.enhanced, fmt)?;
    write_pnm_file(dir.join("3_mfr.pgm"), &s.mfr, fmt)?;
    write_pnm_file(dir.join("4_otsu.pgm"), &s.thresholded, fmt)?;
    write_pnm_file(dir.join("5_length_filter.pgm"), &s.filtered, fmt)?;
    write_pnm_file(dir.join("6_vessels.pgm"), &r.vessel_map, fmt)?;
    Ok(())
}

pub fn segment(args: &SegmentArgs, par: Parallelism) -> Result<()> {
    let cfg = args.pipeline.load_config()?;
    let params = args.pipeline.resolve(&cfg)?;
    let (manifest, warnings) = args.input.manifest(&cfg)?;
    warn_all(&warnings);
    let manifest = non_empty(manifest)?;
    let pipeline = Pipeline::new(params)?;
    create_dir(&args.out)?;

    let results = per_image(&manifest, par, |entry, inner| {
        let loaded = load_entry(entry)?;
        let r = pipeline.run(&loaded.image, &loaded.fov, inner)?;
        let id = &entry.id;
        write_pnm_file(args.out.join(format!("{id}_vessels.pgm")), &r.vessel_map, PnmFormat::Binary)?;
        if args.dump_mfr {
            write_pnm_file(args.out.join(format!("{id}_mfr.pgm")), r.normalized_mfr(), PnmFormat::Binary)?;
        }
        if args.dump_stages {
            write_stages(&args.out.join(format!("{id}_stages")), &r)?;
        }
        let flags: Vec<&str> = r.degenerate_flags.iter().copied().collect();
        Ok(format!(
            "{id}: {} vessel pixels, threshold {}, min component {}{}",
            r.vessel_map.count_true(),
            r.diagnostics.k_star,
            r.min_component_size,
            if flags.is_empty() {
                String::new()
            } else {
                format!(", degenerate: {}", flags.join(","))
            }
        ))
    });
    let (lines, err) = collect(results);
    for line in lines {
        println!("{line}");
    }
    finish(err)
}

// eval ------------------------------------------------------------------

pub fn eval(args: &EvalArgs, par: Parallelism) -> Result<()> {
    let cfg = args.pipeline.load_config()?;
    let params = args.pipeline.resolve(&cfg)?;
    let scope = args.scope(&cfg)?;
    let mad = args.mad(&cfg)?;
    let (manifest, warnings) = args.input.manifest(&cfg)?;
    warn_all(&warnings);
    let manifest = non_empty(manifest)?;
    let precomputed = args.seg_dir.is_some() || args.segmentation.is_some();
    let pipeline = if precomputed { None } else { Some(Pipeline::new(params)?) };

    let results = per_image(&manifest, par, |entry, inner| {
        let loaded = load_entry(entry)?;
        let truth = truth_of(&loaded)?;
        let (seg, response) = if let Some(dir) = &args.seg_dir {
            let seg = read_binary(&dir.join(format!("{}_vessels.pgm", entry.id)))?;
            let mfr_path = dir.join(format!("{}_mfr.pgm", entry.id));
            let response = if mfr_path.is_file() { Some(read_gray(&mfr_path)?) } else { None };
            (seg, response)
        } else if let Some(path) = &args.segmentation {
            (read_binary(path)?, None)
        } else {
            let r = pipeline.as_ref().expect("pipeline built").run(&loaded.image, &loaded.fov, inner)?;
            let response = r.normalized_mfr().clone();
            (r.vessel_map, Some(response))
        };
        let region = (scope == EvalScope::Fov).then_some(&loaded.fov);
        let report = evaluate(&seg, truth, response.as_ref(), region, mad)?;
        Ok(EvalRow::from_report(&entry.id, &report))
    });
    let (rows, err) = collect(results);

    let mut meta = if precomputed {
        let mut m = Metadata::new();
        m.insert("source".into(), "precomputed".into());
        m
    } else {
        pipeline_metadata(&params)
    };
    meta.insert(
        "scope".into(),
        match scope {
            EvalScope::FullImage => "full",
            EvalScope::Fov => "fov",
        }
        .into(),
    );
    meta.insert("mad".into(), format!("{mad:?}").to_ascii_lowercase());
    let format = report_format(args.format, args.report.as_deref());
    // partial results are still written before reporting failures
    with_report_sink(args.report.as_deref(), |out| report::write_eval(out, format, &meta, &rows))?;
    finish(err)
}

// sweep -----------------------------------------------------------------

fn describe_best(label: &str, r: &SweepResult) {
    let b = &r.best;
    eprintln!(
        "{label}: x_limit {} sigma {} L {} mean accuracy {:.6}",
        b.x_limit,
        b.sigma,
        b.length,
        b.mean_accuracy.unwrap_or(f64::NAN)
    );
}

pub fn sweep(args: &SweepArgs, par: Parallelism) -> Result<()> {
    let cfg = args.pipeline.load_config()?;
    let base = args.pipeline.resolve(&cfg)?;
    let (x_grid, sigma_grid, l_grid) = args.grids(&cfg)?;
    let (manifest, warnings) = args.input.manifest(&cfg)?;
    warn_all(&warnings);
    let data = load_samples(&non_empty(manifest)?)?;
    let ids: Vec<&str> = data.iter().map(|s| s.id.as_str()).collect();

    let mut evaluations = Vec::new();
    let mut results = Vec::new();
    let mut params = base;
    if matches!(args.mode, SweepMode::XSigma | SweepMode::Both) {
        let spec = SearchSpec {
            x_limit: x_grid,
            sigma: sigma_grid,
            ..SearchSpec::default()
        };
        let r = three_round_search(&data, &spec, &params, par)?;
        for (i, b) in r.round_bests.iter().enumerate() {
            eprintln!(
                "round {}: {} combinations, best x_limit {} sigma {} accuracy {:.6}",
                i + 1,
                r.round(i + 1).count(),
                b.x_limit,
                b.sigma,
                b.mean_accuracy.unwrap_or(f64::NAN)
            );
        }
        describe_best("x/sigma search", &r);
        params.kernel.x_limit = r.best.x_limit;
        params.kernel.sigma = r.best.sigma;
        evaluations.extend(r.evaluations.iter().cloned());
        results.push(r);
    }
    if matches!(args.mode, SweepMode::Length | SweepMode::Both) {
        let r = length_search(&data, &l_grid, &params, par)?;
        describe_best("length scan", &r);
        evaluations.extend(r.evaluations.iter().cloned());
        results.push(r);
    }
    if args.per_image {
        for r in &results {
            for (id, e) in ids.iter().zip(r.per_image_bests()) {
                let i = ids.iter().position(|x| x == id).expect("id");
                eprintln!(
                    "per image {id}: x_limit {} sigma {} L {} accuracy {:.6}",
                    e.x_limit, e.sigma, e.length, e.per_image[i]
                );
            }
        }
    }

    let mut meta = pipeline_metadata(&base);
    meta.insert("images".into(), data.len().to_string());
    meta.insert("round1_x".into(), format!("{}:{}:{}", x_grid.lo, x_grid.hi, x_grid.step));
    meta.insert("round1_sigma".into(), format!("{}:{}:{}", sigma_grid.lo, sigma_grid.hi, sigma_grid.step));
    meta.insert("l_grid".into(), format!("{}:{}:{}", l_grid.lo, l_grid.hi, l_grid.step));
    let format = report_format(args.format, args.report.as_deref());
    with_report_sink(args.report.as_deref(), |out| report::write_sweep(out, format, &meta, &evaluations))
}

// roc -------------------------------------------------------------------

pub fn roc(args: &RocArgs, par: Parallelism) -> Result<()> {
    let cfg = args.pipeline.load_config()?;
    let params = args.pipeline.resolve(&cfg)?;
    let fov_only = args.eval_scope == Some(ScopeArg::Fov)
        || (args.eval_scope.is_none() && cfg.raw("eval-scope").is_some_and(|v| v.eq_ignore_ascii_case("fov")));
    let (manifest, warnings) = args.input.manifest(&cfg)?;
    warn_all(&warnings);
    let manifest = non_empty(manifest)?;
    let pipeline = Pipeline::new(params)?;
    create_dir(&args.out)?;

    let results = per_image(&manifest, par, |entry, inner| {
        let loaded = load_entry(entry)?;
        let truth = truth_of(&loaded)?;
        let r = pipeline.run(&loaded.image, &loaded.fov, inner)?;
        let region = fov_only.then_some(&loaded.fov);
        match roc_curve(r.normalized_mfr(), truth, region) {
            Ok(curve) => {
                let path = args.out.join(format!("{}_roc.csv", entry.id));
                with_report_sink(Some(&path), |out| report::write_roc_points(out, &curve.points))?;
                Ok((entry.id.clone(), Some(auc(&curve))))
            }
            Err(Error::UndefinedCurve) => {
                eprintln!("warning: {}: ground truth has one class, ROC undefined", entry.id);
                Ok((entry.id.clone(), None))
            }
            Err(e) => Err(e.into()),
        }
    });
    let (rows, err) = collect(results);
    for (id, a) in &rows {
        match a {
            Some(a) => println!("{id}: AUC {a:.6}"),
            None => println!("{id}: AUC undefined"),
        }
    }
    let mut meta = pipeline_metadata(&params);
    meta.insert("scope".into(), if fov_only { "fov" } else { "full" }.into());
    let summary: PathBuf = args.out.join("auc.csv");
    with_report_sink(Some(&summary), |out| report::write_auc_summary(out, &meta, &rows))?;
    finish(err)
}

// kernel dump -----------------------------------------------------------

/// Nearest-neighbor magnification of the heatmaps.
const HEATMAP_SCALE: usize = 8;

fn heatmap(weights: &[f64], rows: usize, cols: usize) -> GrayImage {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (cols * HEATMAP_SCALE, rows * HEATMAP_SCALE);
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w / HEATMAP_SCALE, i / w / HEATMAP_SCALE);
            let v = weights[y * cols + x];
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.5
            }
        })
        .collect();
    GrayImage::new(w, h, data).expect("values in [0, 1]")
}

pub fn kernel_dump(args: &KernelDumpArgs) -> Result<()> {
    let cfg = args.pipeline.load_config()?;
    let params = args.pipeline.resolve(&cfg)?;
    let bank = build_bank(&params.kernel)?;
    let selected: Vec<usize> = match args.orientation {
        Some(i) if i < bank.len() => vec![i],
        Some(i) => bail!("orientation {i} out of range 0..{}", bank.len()),
        None => (0..bank.len()).collect(),
    };
    if let Some(dir) = &args.out {
        create_dir(dir)?;
    }
    println!("# {}", params.kernel);
    for i in selected {
        let k = &bank.kernels()[i];
        let text = format!(
            "# orientation {i} theta {} sum {:+.3e} support {}\n{}",
            k.theta(),
            k.weight_sum(),
            k.support_len(),
            format_kernel(k)
        );
        print!("{text}");
        if let Some(dir) = &args.out {
            let txt = dir.join(format!("kernel_{i:02}.txt"));
            fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
            let img = heatmap(k.weights(), k.rows(), k.cols());
            write_pnm_file(dir.join(format!("kernel_{i:02}.pgm")), &img, PnmFormat::Binary)?;
        }
    }
    Ok(())
}
