//! Dataset manifests, group-aware splitting and training-set compositions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fsutil::{atomic_write, create_dir, list_with_extension, stem_of};
use crate::tiling::parse_tile_stem;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unsplit" => Ok(Split::Unsplit),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub group: String,
    pub split: Split,
}

impl ManifestEntry {
    /// Entry with the default group: the parent image stem before tiling.
    pub fn new(image: PathBuf, label: PathBuf) -> Self {
        let group = default_group(&stem_of(&image));
        Self {
            image,
            label,
            group,
            split: Split::Unsplit,
        }
    }

    pub fn stem(&self) -> String {
        stem_of(&self.image)
    }
}

pub fn default_group(stem: &str) -> String {
    parse_tile_stem(stem).map_or(stem, |(parent, _)| parent).to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image.clone()) {
                return Err(Error::InvalidManifest(format!("duplicate image path {}", e.image.display())));
            }
            let label_name = e.label.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if label_name != format!("{}.txt", e.stem()) {
                return Err(Error::InvalidManifest(format!(
                    "label {} does not match image {}",
                    e.label.display(),
                    e.image.display()
                )));
            }
            if e.group.is_empty() || e.group.contains(['\t', '\n']) {
                return Err(Error::InvalidManifest(format!("bad group id for {}", e.image.display())));
            }
        }
        Ok(Self { entries })
    }

    /// One entry per PNG in `images_dir`, paired with `<stem>.txt` in `labels_dir`.
    pub fn from_dirs(images_dir: &Path, labels_dir: &Path) -> Result<Self> {
        let entries = list_with_extension(images_dir, "png")?
            .into_iter()
            .map(|img| {
                let label = labels_dir.join(format!("{}.txt", stem_of(&img)));
                ManifestEntry::new(img, label)
            })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn in_split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.group.as_str()).collect()
    }

    /// Replaces the group of every entry whose parent stem appears in `regions`.
    pub fn with_regions(mut self, regions: &BTreeMap<String, String>) -> Self {
        for e in &mut self.entries {
            if let Some(g) = regions.get(&default_group(&e.stem())) {
                e.group = g.clone();
            }
        }
        self
    }

    pub fn write(&self, mut sink: impl Write, base: &Path) -> std::io::Result<()> {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        for e in &self.entries {
            writeln!(sink, "{}\t{}\t{}\t{}", rel(&e.image), rel(&e.label), e.group, e.split)?;
        }
        Ok(())
    }

    /// Relative paths are resolved against `base`.
    pub fn read(source: impl BufRead, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                file: None,
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, label, group, split] = fields[..] else {
                return Err(parse_err(format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            entries.push(ManifestEntry {
                image: base.join(image),
                label: base.join(label),
                group: group.to_string(),
                split: split.parse().map_err(parse_err)?,
            });
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut buf = Vec::new();
        self.write(&mut buf, base).map_err(|e| Error::io(path, e))?;
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::read(BufReader::new(file), base).map_err(|e| e.with_file(path))
    }
}

/// Region file: `<parent stem> <group>` per line; `#` starts a comment.
pub fn read_regions(source: impl BufRead) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let parse_err = |message: String| Error::Parse {
            file: None,
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [stem, group] = fields[..] else {
            return Err(parse_err(format!("expected `stem group`, found {} fields", fields.len())));
        };
        out.insert(stem.to_string(), group.to_string());
    }
    Ok(out)
}

pub fn load_regions(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_regions(BufReader::new(file)).map_err(|e| e.with_file(path))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&v| !(v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split ratios {r:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }

    /// Group counts per split by largest remainder; ties favour earlier splits.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        let assigned: usize = counts.iter().sum();
        for &k in order.iter().take(n.saturating_sub(assigned)) {
            counts[k] += 1;
        }
        counts
    }
}

/// Assigns whole groups to train/val/test after a seeded shuffle.
pub fn split_dataset(manifest: &Manifest, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    ratios.validate()?;
    let mut groups: Vec<String> = manifest.groups().into_iter().map(str::to_string).collect();
    if groups.len() < 3 {
        return Err(Error::TooFewGroups(groups.len()));
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = ratios.allocate(groups.len());
    let assignment: BTreeMap<&str, Split> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (g.as_str(), split)
        })
        .collect();
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: assignment[e.group.as_str()],
            ..e.clone()
        })
        .collect();
    Ok(Manifest { entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CompositionName {
    Bomb,
    Moon,
    Synthetic,
    Combined,
}

impl CompositionName {
    pub const ALL: [CompositionName; 4] = [
        CompositionName::Bomb,
        CompositionName::Moon,
        CompositionName::Synthetic,
        CompositionName::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompositionName::Bomb => "bomb",
            CompositionName::Moon => "moon",
            CompositionName::Synthetic => "synthetic",
            CompositionName::Combined => "combined",
        }
    }
}

impl fmt::Display for CompositionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositionName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown composition {s:?}"))
    }
}

/// Available inputs: the split bomb-crater set, prepared moon tiles and
/// translated (synthetic) aerial-style tiles.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub bomb: Option<Manifest>,
    pub moon: Option<Manifest>,
    pub synthetic: Option<Manifest>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    pub name: CompositionName,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Composition {
    pub fn split(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Unsplit => &[],
        }
    }
}

fn union_by_path(parts: [Vec<ManifestEntry>; 2]) -> Vec<ManifestEntry> {
    let mut seen = HashSet::new();
    parts
        .into_iter()
        .flatten()
        .filter(|e| seen.insert(e.image.clone()))
        .collect()
}

/// Training set per composition; validation and test always come from the
/// bomb-crater set.
pub fn compose(sources: &Sources, name: CompositionName) -> Result<Composition> {
    let missing = |source_name: &str| Error::MissingSource {
        composition: name.to_string(),
        source_name: source_name.to_string(),
    };
    let bomb = sources.bomb.as_ref().ok_or_else(|| missing("bomb"))?;
    let train = match name {
        CompositionName::Bomb => bomb.in_split(Split::Train),
        CompositionName::Moon => sources.moon.as_ref().ok_or_else(|| missing("moon"))?.entries.clone(),
        CompositionName::Synthetic => sources.synthetic.as_ref().ok_or_else(|| missing("synthetic"))?.entries.clone(),
        CompositionName::Combined => {
            let synthetic = sources.synthetic.as_ref().ok_or_else(|| missing("synthetic"))?;
            union_by_path([bomb.in_split(Split::Train), synthetic.entries.clone()])
        }
    };
    Ok(Composition {
        name,
        train,
        val: bomb.in_split(Split::Val),
        test: bomb.in_split(Split::Test),
    })
}

/// Copies a composition into `images/{split}` and `labels/{split}` under `root`.
/// A missing label file is written as an empty one.
pub fn export_layout(composition: &Composition, root: &Path) -> Result<()> {
    for split in Split::ASSIGNED {
        let img_dir = root.join("images").join(split.as_str());
        let lbl_dir = root.join("labels").join(split.as_str());
        create_dir(&img_dir)?;
        create_dir(&lbl_dir)?;
        let mut stems = HashSet::new();
        for e in composition.split(split) {
            let stem = e.stem();
            if !stems.insert(stem.clone()) {
                return Err(Error::InvalidManifest(format!("stem {stem} appears twice in {split}")));
            }
            let dst = img_dir.join(format!("{stem}.png"));
            fs::copy(&e.image, &dst).map_err(|err| Error::io(&e.image, err))?;
            let labels = if e.label.is_file() {
                fs::read(&e.label).map_err(|err| Error::io(&e.label, err))?
            } else {
                Vec::new()
            };
            atomic_write(&lbl_dir.join(format!("{stem}.txt")), &labels)?;
        }
    }
    Ok(())
}
