//! Model artifacts: export the deterministic reference nets to JSON, load
//! them back with kind validation, and read intermediate activations through
//! a named tap.
//!
//!     cargo run --example model_io

use std::path::PathBuf;

use periscan::graph::{load_model, reference_net, save_model, ModelKind, ReferenceKind,
    TensorValue, LAST_CONV_TAP};

fn main() {
    let out_dir = PathBuf::from("target/examples/model_io");
    std::fs::create_dir_all(&out_dir).unwrap();

    for (kind, model_kind, name) in [
        (ReferenceKind::DetectorStub, ModelKind::Detector, "detector.json"),
        (ReferenceKind::ClassifierStub, ModelKind::Classifier, "classifier.json"),
    ] {
        let model = reference_net(kind);
        let path = out_dir.join(name);
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path, model_kind).unwrap();
        println!(
            "{name}: kind {:?}, input {:?}, output {:?}, head {}",
            loaded.kind(),
            loaded.input_spec(),
            loaded.output_spec(),
            loaded.head().name(),
        );
    }

    // loading with the wrong kind is rejected
    let err = load_model(&out_dir.join("detector.json"), ModelKind::Classifier).unwrap_err();
    println!("kind mismatch rejected: {err}");

    // tapped forward pass: the classifier exposes its last conv activations
    let classifier = load_model(&out_dir.join("classifier.json"), ModelKind::Classifier).unwrap();
    let size = classifier.input_size();
    let input = TensorValue::new(
        vec![1, 1, size, size],
        (0..size * size).map(|i| (i % 11) as f64 / 10.0).collect(),
    )
    .unwrap();
    let (logits, taps) = classifier.forward_with_taps(&input, &[LAST_CONV_TAP]).unwrap();
    let act = &taps[LAST_CONV_TAP];
    println!("logits: {:?}", logits.data);
    println!("tap `{LAST_CONV_TAP}`: shape {:?}", act.shape);

    // re-entering the graph at the tap reproduces the same logits
    let replay = classifier.forward_from_tap(LAST_CONV_TAP, act).unwrap();
    println!("replay from tap matches: {}", replay.data == logits.data);
}
