use std::path::{Path, PathBuf};

use cyclecap_core::domain::{validate_entry, ImageSource, Severity};
use cyclecap_core::ingest::{dataset_summary, load_coco_annotations, load_dataset, DatasetFormat};
use cyclecap_core::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn coco_fixture_has_four_images_of_five_captions() {
    let root = Path::new("/images");
    let entries = load_coco_annotations(&fixture("coco_captions.json"), root).unwrap();
    let ids: Vec<&str> = entries.iter().map(|e| e.id()).collect();
    assert_eq!(ids, ["139", "285", "632", "724"]);
    assert!(entries.iter().all(|e| e.references.len() == 5));
    assert_eq!(
        entries[1].image.source,
        ImageSource::File {
            path: root.join("000000000285.jpg")
        }
    );
    assert_eq!(
        (entries[1].image.width, entries[1].image.height),
        (Some(586), Some(640))
    );
    assert_eq!(
        entries[3].references[0].text,
        "A red stop sign on a pole by the road."
    );
    assert!(entries.iter().all(|e| validate_entry(e).is_empty()));

    let summary = dataset_summary(&entries);
    assert_eq!((summary.n_images, summary.n_captions), (4, 20));
}

#[test]
fn three_captions_warn_but_do_not_fail() {
    let entries = load_dataset(
        &fixture("coco_three_captions.json"),
        DatasetFormat::Coco,
        None,
    )
    .unwrap();
    let report = validate_entry(&entries[0]);
    assert!(!report.has_errors());
    let warnings: Vec<_> = report.warnings().collect();
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0].severity, Severity::Warning);
    assert!(validate_entry(&entries[1]).is_empty());
}

#[test]
fn dangling_annotation_is_rejected() {
    match load_coco_annotations(&fixture("coco_dangling.json"), Path::new(".")) {
        Err(Error::DanglingImageId { image_id, .. }) => assert_eq!(image_id, 99),
        other => panic!("expected a dangling image id, got {other:?}"),
    }
}
