//! Deterministic stratified train/val split plus the reader-agreement tally.
//!
//!     cargo run --example stratified_split

use periscan::classification::CaseLabel;
use periscan::dataset::{agreement_tally, stratified_split, ManifestEntry, ReaderReview};

fn main() {
    // 775 normal + 775 pericoronitis cases, as a labeled manifest
    let entries: Vec<ManifestEntry> = (0..1550)
        .map(|i| ManifestEntry {
            image: format!("case_{i:04}.png").into(),
            detections: vec![],
            label: Some(if i % 2 == 0 { CaseLabel::Normal } else { CaseLabel::Pericoronitis }),
            split: None,
        })
        .collect();

    let (train, val) = stratified_split(&entries, 0.8, 42).unwrap();
    for label in [CaseLabel::Normal, CaseLabel::Pericoronitis] {
        let t = train.iter().filter(|e| e.label == Some(label)).count();
        let v = val.iter().filter(|e| e.label == Some(label)).count();
        println!("{label:?}: {t} train / {v} val");
    }

    // same seed, same split; different seed, (almost surely) different split
    let (again, _) = stratified_split(&entries, 0.8, 42).unwrap();
    println!("seed 42 reproducible: {}", again == train);
    let (other, _) = stratified_split(&entries, 0.8, 43).unwrap();
    println!("seed 43 differs: {}", other != train);

    // reader study: 42 of 50 overlay reviews agree
    let reviews: Vec<ReaderReview> = (0..50)
        .map(|i| ReaderReview {
            case_id: format!("case-{i}"),
            overlay_path: None,
            agrees: i < 42,
        })
        .collect();
    println!("reader agreement: {:.2}", agreement_tally(&reviews).unwrap());
}
