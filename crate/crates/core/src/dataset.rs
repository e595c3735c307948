//! Manifest ingestion, stratified splitting, and reader-study agreement
//! tallying.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classification::CaseLabel;
use crate::detection::{Angulation, BBox, Quadrant};
use crate::error::{Error, Result};

/// Ground-truth detection annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtDetection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub quadrant: Quadrant,
    pub angulation: Angulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
}

/// One manifest row: an image with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default)]
    pub detections: Vec<GtDetection>,
    #[serde(default)]
    pub label: Option<CaseLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// A parsed manifest with its missing-image bookkeeping.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub entries: Vec<ManifestEntry>,
    /// Entries skipped because their image file does not exist.
    pub skipped_missing: usize,
}

// Raw mirror of the JSON schema with label strings left unvalidated, so
// vocabulary errors can name the offending entry.
#[derive(Deserialize)]
struct RawManifest {
    entries: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    image: PathBuf,
    #[serde(default)]
    detections: Vec<RawDetection>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    quadrant: String,
    angulation: String,
}

fn vocab_err(value: &str, entry_idx: usize, field: &str) -> Error {
    Error::Vocabulary {
        value: value.to_string(),
        context: format!("entry {entry_idx}, field `{field}`"),
    }
}

fn parse_entry(raw: RawEntry, idx: usize) -> Result<ManifestEntry> {
    let mut detections = Vec::with_capacity(raw.detections.len());
    for d in raw.detections {
        let quadrant = match d.quadrant.as_str() {
            "UR" => Quadrant::UpperRight,
            "UL" => Quadrant::UpperLeft,
            "LL" => Quadrant::LowerLeft,
            "LR" => Quadrant::LowerRight,
            other => return Err(vocab_err(other, idx, "quadrant")),
        };
        let angulation = match d.angulation.as_str() {
            "vertical" => Angulation::Vertical,
            "mesioangular" => Angulation::Mesioangular,
            "horizontal" => Angulation::Horizontal,
            "distoangular" => Angulation::Distoangular,
            other => return Err(vocab_err(other, idx, "angulation")),
        };
        let [x1, y1, x2, y2] = d.bbox;
        detections.push(GtDetection {
            bbox: BBox::new(x1, y1, x2, y2)
                .map_err(|_| vocab_err(&format!("{:?}", d.bbox), idx, "box"))?,
            quadrant,
            angulation,
        });
    }
    let label = match raw.label.as_deref() {
        None => None,
        Some("normal") => Some(CaseLabel::Normal),
        Some("pericoronitis") => Some(CaseLabel::Pericoronitis),
        Some(other) => return Err(vocab_err(other, idx, "label")),
    };
    let split = match raw.split.as_deref() {
        None => None,
        Some("train") => Some(SplitTag::Train),
        Some("val") => Some(SplitTag::Val),
        Some(other) => return Err(vocab_err(other, idx, "split")),
    };
    Ok(ManifestEntry { image: raw.image, detections, label, split })
}

/// Parse a manifest without touching the filesystem beyond the JSON itself.
/// Relative image paths are resolved against the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    raw.entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            parse_entry(e, i).map(|mut entry| {
                if entry.image.is_relative() {
                    entry.image = base.join(&entry.image);
                }
                entry
            })
        })
        .collect()
}

/// Parse a manifest and drop entries whose image file is missing; each skip
/// is warned on stderr and counted in the result.
pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let parsed = parse_manifest(path)?;
    let mut entries = Vec::with_capacity(parsed.len());
    let mut skipped_missing = 0;
    for entry in parsed {
        if entry.image.exists() {
            entries.push(entry);
        } else {
            eprintln!(
                "warning: skipping entry with missing image {}",
                entry.image.display()
            );
            skipped_missing += 1;
        }
    }
    Ok(LoadedManifest { entries, skipped_missing })
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let manifest = Manifest { entries: entries.to_vec() };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Stratum key for an entry: the case label for classification manifests,
/// the first detection's (quadrant, angulation) for detection manifests.
fn stratum_key(entry: &ManifestEntry) -> String {
    if let Some(label) = entry.label {
        return format!("label:{label:?}");
    }
    match entry.detections.first() {
        Some(d) => format!("det:{:?}:{:?}", d.quadrant, d.angulation),
        None => "unannotated".to_string(),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic seeded stratified split.
///
/// Entries are grouped by stratum; each stratum is shuffled with a generator
/// derived from `(seed, stratum key)` and its first `round(ratio * n)`
/// members go to train. Singleton strata go entirely to train.
pub fn stratified_split(
    entries: &[ManifestEntry],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        strata.entry(stratum_key(e)).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (key, mut members) in strata {
        if members.len() == 1 {
            train_idx.push(members[0]);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key.as_bytes()));
        members.shuffle(&mut rng);
        let n_train = ((ratio * members.len() as f64) + 0.5).floor() as usize;
        let n_train = n_train.min(members.len());
        train_idx.extend(&members[..n_train]);
        val_idx.extend(&members[n_train..]);
    }
    // keep manifest order within each side
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| entries[i].clone()).collect();
    Ok((pick(&train_idx), pick(&val_idx)))
}

// ---------------------------------------------------------------------------
// Reader study
// ---------------------------------------------------------------------------

/// One expert review of a heatmap overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderReview {
    #[serde(rename = "case")]
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_path: Option<PathBuf>,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSet {
    pub reviews: Vec<ReaderReview>,
}

pub fn load_reviews(path: &Path) -> Result<ReviewSet> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Fraction of reviews that agree. Errors on an empty set or duplicate case
/// ids.
pub fn agreement_tally(reviews: &[ReaderReview]) -> Result<f64> {
    if reviews.is_empty() {
        return Err(Error::EmptyInput("review set is empty"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in reviews {
        if !seen.insert(&r.case_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate case id `{}` in review set",
                r.case_id
            )));
        }
    }
    let agrees = reviews.iter().filter(|r| r.agrees).count();
    Ok(agrees as f64 / reviews.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(label: CaseLabel, i: usize) -> ManifestEntry {
        ManifestEntry {
            image: PathBuf::from(format!("img_{i}.png")),
            detections: vec![],
            label: Some(label),
            split: None,
        }
    }

    #[test]
    fn manifest_parses_and_validates_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"entries":[{"image":"a.png","detections":[{"box":[1,2,3,4],"quadrant":"LL","angulation":"mesioangular"}],"label":"pericoronitis"}]}"#,
        )
        .unwrap();
        let entries = parse_manifest(&path).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].detections[0].quadrant, Quadrant::LowerLeft);
        assert_eq!(entries[0].detections[0].angulation, Angulation::Mesioangular);
        assert_eq!(entries[0].label, Some(CaseLabel::Pericoronitis));

        std::fs::write(
            &path,
            r#"{"entries":[{"image":"a.png","detections":[{"box":[1,2,3,4],"quadrant":"LL","angulation":"buccoangular"}]}]}"#,
        )
        .unwrap();
        let err = parse_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("buccoangular") && msg.contains("entry 0"), "{msg}");
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"entries":[]}"#).unwrap();
        assert!(parse_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn load_manifest_skips_missing_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("exists.png");
        let map = crate::explain::Heatmap::new(2, 2, vec![0.0; 4]).unwrap();
        crate::imaging::save_heatmap_png(&map, &img).unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"entries":[{"image":"exists.png"},{"image":"missing.png"}]}"#,
        )
        .unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.entries.len(), 1);
        assert_eq!(loaded.skipped_missing, 1);
    }

    #[test]
    fn split_exact_divisibility() {
        let entries: Vec<_> = (0..10).map(|i| labeled(CaseLabel::Normal, i)).collect();
        let (train, val) = stratified_split(&entries, 0.8, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
    }

    #[test]
    fn split_paper_class_counts() {
        let mut entries = Vec::new();
        for i in 0..775 {
            entries.push(labeled(CaseLabel::Pericoronitis, i));
        }
        for i in 0..775 {
            entries.push(labeled(CaseLabel::Normal, 1000 + i));
        }
        let (train, val) = stratified_split(&entries, 0.8, 7).unwrap();
        for side_label in [CaseLabel::Pericoronitis, CaseLabel::Normal] {
            let t = train.iter().filter(|e| e.label == Some(side_label)).count();
            let v = val.iter().filter(|e| e.label == Some(side_label)).count();
            assert_eq!((t, v), (620, 155));
        }
    }

    #[test]
    fn split_is_seed_deterministic_and_a_partition() {
        let entries: Vec<_> = (0..23)
            .map(|i| {
                labeled(
                    if i % 3 == 0 { CaseLabel::Pericoronitis } else { CaseLabel::Normal },
                    i,
                )
            })
            .collect();
        let (t1, v1) = stratified_split(&entries, 0.8, 99).unwrap();
        let (t2, v2) = stratified_split(&entries, 0.8, 99).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        let mut all: Vec<_> = t1.iter().chain(&v1).map(|e| e.image.clone()).collect();
        all.sort();
        let mut expected: Vec<_> = entries.iter().map(|e| e.image.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn singleton_stratum_goes_to_train() {
        let mut entries: Vec<_> = (0..4).map(|i| labeled(CaseLabel::Normal, i)).collect();
        entries.push(labeled(CaseLabel::Pericoronitis, 99));
        let (train, val) = stratified_split(&entries, 0.5, 3).unwrap();
        assert!(train.iter().any(|e| e.label == Some(CaseLabel::Pericoronitis)));
        assert!(val.iter().all(|e| e.label != Some(CaseLabel::Pericoronitis)));
    }

    #[test]
    fn detection_manifest_stratifies_on_quadrant_angulation() {
        let det = |q, a| GtDetection {
            bbox: BBox { x1: 0.0, y1: 0.0, x2: 10.0, y2: 10.0 },
            quadrant: q,
            angulation: a,
        };
        let mut entries = Vec::new();
        for i in 0..10 {
            entries.push(ManifestEntry {
                image: PathBuf::from(format!("a{i}.png")),
                detections: vec![det(Quadrant::UpperRight, Angulation::Vertical)],
                label: None,
                split: None,
            });
        }
        for i in 0..10 {
            entries.push(ManifestEntry {
                image: PathBuf::from(format!("b{i}.png")),
                detections: vec![det(Quadrant::LowerLeft, Angulation::Horizontal)],
                label: None,
                split: None,
            });
        }
        let (train, val) = stratified_split(&entries, 0.8, 5).unwrap();
        for q in [Quadrant::UpperRight, Quadrant::LowerLeft] {
            let t = train.iter().filter(|e| e.detections[0].quadrant == q).count();
            let v = val.iter().filter(|e| e.detections[0].quadrant == q).count();
            assert_eq!((t, v), (8, 2));
        }
    }

    #[test]
    fn tally_cases() {
        let mk = |n: usize, agree_upto: usize| -> Vec<ReaderReview> {
            (0..n)
                .map(|i| ReaderReview {
                    case_id: format!("case{i}"),
                    overlay_path: None,
                    agrees: i < agree_upto,
                })
                .collect()
        };
        assert_eq!(agreement_tally(&mk(50, 42)).unwrap(), 0.84);
        assert_eq!(agreement_tally(&mk(5, 5)).unwrap(), 1.0);
        assert!(agreement_tally(&[]).is_err());

        // complement identity
        let reviews = mk(10, 3);
        let negated: Vec<_> = reviews
            .iter()
            .map(|r| ReaderReview { agrees: !r.agrees, ..r.clone() })
            .collect();
        let a = agreement_tally(&reviews).unwrap();
        let b = agreement_tally(&negated).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tally_rejects_duplicate_case_ids() {
        let r = ReaderReview { case_id: "x".into(), overlay_path: None, agrees: true };
        assert!(agreement_tally(&[r.clone(), r]).is_err());
    }
}
