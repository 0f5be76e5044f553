use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{DatasetError, Label, SampleSource};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];
const ID_HEX_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LesionSample {
    /// First 16 hex digits of the SHA-256 of the file contents.
    pub id: String,
    pub image_path: PathBuf,
    pub label: Label,
    pub source: SampleSource,
}

/// Majority/minority bound used when balancing, kept as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BalancingRatio(Ratio<u64>);

impl BalancingRatio {
    pub fn new(numer: u64, denom: u64) -> Result<Self, DatasetError> {
        if denom == 0 || numer < denom {
            return Err(DatasetError::Invalid(format!("balancing ratio {numer}/{denom} must be >= 1")));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    /// Parses a plain decimal such as `1.12` exactly.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let bad = || DatasetError::Invalid(format!("balancing ratio `{text}` is not a plain decimal"));
        let (int, frac) = text.trim().split_once('.').unwrap_or((text.trim(), ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 18 {
            return Err(bad());
        }
        let denom = 10u64.pow(frac.len() as u32);
        let numer = format!("{int}{frac}").parse::<u64>().map_err(|_| bad())?;
        Self::new(numer, denom)
    }

    pub fn from_f64(value: f64) -> Result<Self, DatasetError> {
        if !value.is_finite() {
            return Err(DatasetError::Invalid(format!("balancing ratio {value} is not finite")));
        }
        Self::parse(&format!("{value}"))
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `ceil(ratio * minority)`: the largest majority count allowed.
    pub fn majority_cap(self, minority: usize) -> usize {
        let scaled = self.0 * Ratio::from_integer(minority as u64);
        scaled.ceil().to_integer() as usize
    }
}

impl Default for BalancingRatio {
    fn default() -> Self {
        Self(Ratio::new(112, 100))
    }
}

impl fmt::Display for BalancingRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for BalancingRatio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for BalancingRatio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        BalancingRatio::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Labeled sample inventory after balancing, ordered by id.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    samples: Vec<LesionSample>,
    class_counts: BTreeMap<Label, usize>,
    seed: u64,
    balancing_ratio: BalancingRatio,
}

/// A file excluded from the manifest, with the reason.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    pub rejects: Vec<Reject>,
}

impl DatasetManifest {
    /// Builds a manifest from already-vetted samples; sorts by id and checks
    /// id uniqueness.
    pub fn from_samples(
        root: impl Into<PathBuf>,
        mut samples: Vec<LesionSample>,
        seed: u64,
        balancing_ratio: BalancingRatio,
    ) -> Result<Self, DatasetError> {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = samples.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DatasetError::Format(format!("duplicate sample id `{}`", w[0].id)));
        }
        let mut class_counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
        for s in &samples {
            *class_counts.entry(s.label).or_default() += 1;
        }
        Ok(Self { root: root.into(), samples, class_counts, seed, balancing_ratio })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples(&self) -> &[LesionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn balancing_ratio(&self) -> BalancingRatio {
        self.balancing_ratio
    }

    pub fn get(&self, id: &str) -> Option<&LesionSample> {
        self.samples.binary_search_by(|s| s.id.as_str().cmp(id)).ok().map(|i| &self.samples[i])
    }

    /// `(id, label)` pairs in manifest order.
    pub fn labeled_ids(&self) -> Vec<(String, Label)> {
        self.samples.iter().map(|s| (s.id.clone(), s.label)).collect()
    }

    /// CSV `id,image_path,label,source`, rows sorted by id, paths relative to
    /// the dataset root with `/` separators.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["id", "image_path", "label", "source"]).expect("in-memory write");
        for s in &self.samples {
            let rel = s.image_path.strip_prefix(&self.root).unwrap_or(&s.image_path);
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            w.write_record([s.id.as_str(), rel.as_str(), s.label.as_str(), s.source.as_str()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Reads a manifest CSV; relative image paths resolve against `root`.
    pub fn read_csv(path: &Path, root: &Path, seed: u64, balancing_ratio: BalancingRatio) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["id", "image_path", "label", "source"] {
            return Err(DatasetError::Format(format!("unexpected manifest header {header:?}")));
        }
        let mut samples = Vec::new();
        for row in r.records() {
            let row = row?;
            samples.push(LesionSample {
                id: row[0].to_string(),
                image_path: root.join(&row[1]),
                label: row[2].parse()?,
                source: row[3].parse()?,
            });
        }
        Self::from_samples(root, samples, seed, balancing_ratio)
    }
}

/// Writes the rejects report as CSV `path,reason`.
pub fn write_rejects(rejects: &[Reject], root: &Path, path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["path", "reason"])?;
    for r in rejects {
        let rel = r.path.strip_prefix(root).unwrap_or(&r.path);
        w.write_record([rel.to_string_lossy().as_ref(), r.reason.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

impl ManifestBuild {
    pub fn write_rejects(&self, path: &Path) -> Result<(), DatasetError> {
        write_rejects(&self.rejects, self.manifest.root(), path)
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if is_image && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Scans `<root>/melanoma` and `<root>/benign`, drops undecodable files and
/// content duplicates into the rejects list, then downsamples the majority
/// class (seeded, uniform) so that it holds at most `ceil(ratio * minority)`
/// samples.
pub fn build_manifest(root: &Path, seed: u64, balancing_ratio: BalancingRatio) -> Result<ManifestBuild, DatasetError> {
    let mut rejects = Vec::new();
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    let mut by_class: BTreeMap<Label, Vec<LesionSample>> = BTreeMap::new();

    for label in Label::ALL {
        if !root.join(label.as_str()).is_dir() {
            return Err(DatasetError::MissingClassDir { root: root.to_path_buf(), class: label });
        }
    }
    // melanoma first so that a cross-class duplicate keeps its melanoma copy
    for label in [Label::Melanoma, Label::Benign] {
        let dir = root.join(label.as_str());
        let mut kept = Vec::new();
        for path in list_images(&dir)? {
            let bytes = std::fs::read(&path)?;
            if let Err(e) = image::load_from_memory(&bytes) {
                log::warn!("rejecting undecodable image {}: {e}", path.display());
                rejects.push(Reject { path, reason: format!("undecodable: {e}") });
                continue;
            }
            let digest = hex::encode(Sha256::digest(&bytes));
            let id = digest[..ID_HEX_LEN].to_string();
            if let Some(first) = seen.get(&id) {
                log::warn!("rejecting duplicate image {} (same content as {})", path.display(), first.display());
                let rel = first.strip_prefix(root).unwrap_or(first);
                rejects.push(Reject { reason: format!("duplicate of {}", rel.display()), path });
                continue;
            }
            seen.insert(id.clone(), path.clone());
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            kept.push(LesionSample { id, source: SampleSource::infer(name), image_path: path, label });
        }
        if kept.is_empty() {
            return Err(DatasetError::EmptyClass(label));
        }
        kept.sort_by(|a, b| a.id.cmp(&b.id));
        by_class.insert(label, kept);
    }

    let minority = by_class.values().map(Vec::len).min().expect("two classes");
    let cap = balancing_ratio.majority_cap(minority);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (label, mut class_samples) in by_class {
        if class_samples.len() > cap {
            log::info!("downsampling {label} from {} to {cap}", class_samples.len());
            class_samples.shuffle(&mut rng);
            class_samples.truncate(cap);
        }
        samples.extend(class_samples);
    }
    let manifest = DatasetManifest::from_samples(root, samples, seed, balancing_ratio)?;
    debug_assert_eq!(manifest.samples.iter().map(|s| &s.id).collect::<HashSet<_>>().len(), manifest.len());
    Ok(ManifestBuild { manifest, rejects })
}
