//! Locating image, field-of-view mask and manual segmentation triples on disk.
//!
//! Only PNM rasters are read, so the public datasets have to be converted
//! first; file stems follow the original naming.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::imageio::{load_mask, read_pnm_file, BinaryImage, RgbImage};
use crate::sweep::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `NN_test.ppm`, `NN_test_mask.pgm`, `NN_manual1.pgm` (also `training`).
    Drive,
    /// `im0001.ppm`, `im0001_mask.pgm` or `im0001.mask.pgm`, `im0001.ah.pgm`.
    Stare,
    /// `manifest.csv` with `id,image,mask[,truth]` rows relative to the root.
    Flat,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(Layout::Drive),
            "stare" => Ok(Layout::Stare),
            "flat" => Ok(Layout::Flat),
            _ => Err(Error::InvalidParams(format!("unknown dataset layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub fov: PathBuf,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Sorted by id; ids are unique.
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

const PNM_EXT: &str = r"\.(?:ppm|pgm|pbm|pnm)$";

#[derive(Default)]
struct Parts {
    image: Option<PathBuf>,
    fov: Option<PathBuf>,
    truth: Option<PathBuf>,
}

enum Role {
    Image,
    Fov,
    Truth,
}

pub fn discover_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<Discovery> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let (parts, mut warnings) = match layout {
        Layout::Drive => scan(root, &drive_rules(), true)?,
        Layout::Stare => scan(root, &stare_rules(), false)?,
        Layout::Flat => read_flat(root)?,
    };

    let mut missing = Vec::new();
    let mut entries = Vec::new();
    for (id, p) in parts {
        match (p.image, p.fov) {
            (Some(image), Some(fov)) => {
                if p.truth.is_none() {
                    warnings.push(format!("{id}: no ground truth"));
                }
                entries.push(ManifestEntry {
                    id,
                    image,
                    fov,
                    truth: p.truth,
                });
            }
            (None, _) => missing.push(format!("{id}: image")),
            (Some(_), None) => missing.push(format!("{id}: mask")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Dataset { missing });
    }
    if entries.is_empty() {
        warnings.push(format!("no images found under {}", root.display()));
    }
    Ok(Discovery {
        manifest: DatasetManifest { entries },
        warnings,
    })
}

/// Filename pattern, role, and how the capture maps to the entry id.
type Rule = (Regex, Role, fn(&regex::Captures) -> String);

fn drive_rules() -> Vec<Rule> {
    let re = |p: &str| Regex::new(&format!("^{p}{PNM_EXT}")).expect("static pattern");
    vec![
        (re(r"(\d+)_(test|training)"), Role::Image, |c| format!("{}_{}", &c[1], &c[2])),
        (re(r"(\d+)_(test|training)_mask"), Role::Fov, |c| format!("{}_{}", &c[1], &c[2])),
        (re(r"(\d+)_manual1"), Role::Truth, |c| c[1].to_string()),
    ]
}

fn stare_rules() -> Vec<Rule> {
    let re = |p: &str| Regex::new(&format!("^{p}{PNM_EXT}")).expect("static pattern");
    vec![
        (re(r"(im\d+)"), Role::Image, |c| c[1].to_string()),
        (re(r"(im\d+)[._]mask"), Role::Fov, |c| c[1].to_string()),
        (re(r"(im\d+)\.ah"), Role::Truth, |c| c[1].to_string()),
    ]
}

fn assign(slot: &mut Option<PathBuf>, path: PathBuf, id: &str, warnings: &mut Vec<String>) {
    if let Some(prev) = slot {
        warnings.push(format!(
            "{id}: ignoring {} (already have {})",
            path.display(),
            prev.display()
        ));
    } else {
        *slot = Some(path);
    }
}

/// With `truth_by_number`, truth ids are the leading number shared by
/// several images (DRIVE names manuals `NN_manual1`).
fn scan(root: &Path, rules: &[Rule], truth_by_number: bool) -> Result<(BTreeMap<String, Parts>, Vec<String>)> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }

    let mut parts: BTreeMap<String, Parts> = BTreeMap::new();
    let mut by_number: Vec<(String, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    for path in files {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let name = name.to_string();
        for (re, role, id_of) in rules {
            let Some(c) = re.captures(&name) else {
                continue;
            };
            let id = id_of(&c);
            match role {
                Role::Image => assign(&mut parts.entry(id.clone()).or_default().image, path, &id, &mut warnings),
                Role::Fov => assign(&mut parts.entry(id.clone()).or_default().fov, path, &id, &mut warnings),
                Role::Truth if truth_by_number => by_number.push((id, path)),
                Role::Truth => assign(&mut parts.entry(id.clone()).or_default().truth, path, &id, &mut warnings),
            }
            break;
        }
    }
    for (number, path) in by_number {
        let owners: Vec<String> = parts
            .keys()
            .filter(|id| id.split('_').next() == Some(number.as_str()))
            .cloned()
            .collect();
        if owners.is_empty() {
            warnings.push(format!("{}: ground truth without image", path.display()));
        }
        for id in owners {
            let slot = &mut parts.get_mut(&id).expect("listed key").truth;
            assign(slot, path.clone(), &id, &mut warnings);
        }
    }
    Ok((parts, warnings))
}

fn read_flat(root: &Path) -> Result<(BTreeMap<String, Parts>, Vec<String>)> {
    let path = root.join("manifest.csv");
    let mut parts = BTreeMap::new();
    let mut warnings = Vec::new();
    if !path.exists() {
        warnings.push(format!("{} not found", path.display()));
        return Ok((parts, warnings));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut missing = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("id,")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) || fields[..3].iter().any(|f| f.is_empty()) {
            return Err(Error::InvalidParams(format!(
                "{}:{}: expected id,image,mask[,truth]",
                path.display(),
                lineno + 1
            )));
        }
        let id = fields[0].to_string();
        let resolve = |f: &str, what: &str, missing: &mut Vec<String>| {
            let p = root.join(f);
            if !p.is_file() {
                missing.push(format!("{id}: {what} {}", p.display()));
            }
            p
        };
        let entry = Parts {
            image: Some(resolve(fields[1], "image", &mut missing)),
            fov: Some(resolve(fields[2], "mask", &mut missing)),
            truth: fields
                .get(3)
                .filter(|f| !f.is_empty())
                .map(|f| resolve(f, "truth", &mut missing)),
        };
        if parts.insert(id.clone(), entry).is_some() {
            return Err(Error::InvalidParams(format!("duplicate id `{id}` in {}", path.display())));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Dataset { missing });
    }
    Ok((parts, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEntry {
    pub id: String,
    pub image: RgbImage,
    pub fov: BinaryImage,
    pub truth: Option<BinaryImage>,
}

impl LoadedEntry {
    pub fn into_sample(self) -> Result<Sample> {
        let truth = self.truth.ok_or_else(|| Error::Dataset {
            missing: vec![format!("{}: ground truth", self.id)],
        })?;
        Ok(Sample {
            id: self.id,
            image: self.image,
            fov: self.fov,
            truth,
        })
    }
}

pub fn load_entry(entry: &ManifestEntry) -> Result<LoadedEntry> {
    let wrap = |e: Error| e.for_image(&entry.id);
    let image = read_pnm_file(&entry.image).map_err(wrap)?.into_rgb();
    let fov = load_mask(&read_pnm_file(&entry.fov).map_err(wrap)?);
    let truth = match &entry.truth {
        Some(p) => Some(load_mask(&read_pnm_file(p).map_err(wrap)?)),
        None => None,
    };
    Ok(LoadedEntry {
        id: entry.id.clone(),
        image,
        fov,
        truth,
    })
}

/// Load every entry as a labelled sample; entries without truth are errors.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| load_entry(e)?.into_sample())
        .collect()
}
