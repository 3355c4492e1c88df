//! Dataset loaders: MSCOCO-style caption annotation files and a
//! line-delimited JSON format.
//!
//! The JSON-lines format holds one entry per line:
//!
//! ```json
//! {"image": {"id": "000123", "path": "images/000123.jpg"}, "captions": ["...", "..."]}
//! {"image": {"id": "sim-000001", "seed": 42, "index": 1}, "captions": ["..."]}
//! ```
//!
//! `path` is resolved against the file's directory; `seed`/`index` name an
//! image of a simulated world.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{DatasetEntry, ImageRef, ImageSource};
use crate::error::{Error, Result};
use crate::store::write_atomic;

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    /// Absent in instance/keypoint annotation files, which are skipped.
    #[serde(default)]
    caption: Option<String>,
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split(|b| *b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// One entry per image with its caption annotations in file order; entries
/// sorted by numeric image id. Only ids, file names, sizes and captions are
/// read.
pub fn load_coco_annotations(path: &Path, image_root: &Path) -> Result<Vec<DatasetEntry>> {
    let bytes = read(path)?;
    let file: CocoFile = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: byte_offset(&bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut seen_names = HashSet::new();
    let mut by_id: BTreeMap<u64, (ImageRef, Vec<String>)> = BTreeMap::new();
    for image in file.images {
        if !seen_names.insert(image.file_name.clone()) {
            return Err(Error::Invalid(format!(
                "duplicate file_name {:?}",
                image.file_name
            )));
        }
        let mut image_ref =
            ImageRef::file(image.id.to_string(), image_root.join(&image.file_name))?;
        image_ref.width = image.width;
        image_ref.height = image.height;
        image_ref.validate()?;
        if by_id.insert(image.id, (image_ref, Vec::new())).is_some() {
            return Err(Error::DuplicateImageId(image.id.to_string()));
        }
    }

    for annotation in file.annotations {
        let Some(caption) = annotation.caption else {
            continue;
        };
        let (_, captions) = by_id
            .get_mut(&annotation.image_id)
            .ok_or(Error::DanglingImageId {
                annotation_id: annotation.id,
                image_id: annotation.image_id,
            })?;
        if caption.trim().is_empty() {
            return Err(Error::Invalid(format!(
                "annotation {} has an empty caption",
                annotation.id
            )));
        }
        captions.push(caption);
    }

    by_id
        .into_values()
        .map(|(image, captions)| DatasetEntry::from_texts(image, &captions))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlImage {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlLine {
    image: JsonlImage,
    captions: Vec<String>,
}

fn parse_line(line: &str, base: &Path) -> std::result::Result<DatasetEntry, String> {
    let parsed: JsonlLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let img = parsed.image;
    let source = match (img.path, img.seed) {
        (Some(p), None) if img.index.is_none() => ImageSource::File { path: base.join(p) },
        (None, Some(world_seed)) => ImageSource::Synthetic {
            world_seed,
            index: img.index.unwrap_or(0),
            latent: None,
        },
        _ => return Err("image needs exactly one of \"path\" or \"seed\"".into()),
    };
    let mut image = ImageRef::new(img.id, source).map_err(|e| e.to_string())?;
    image.width = img.width;
    image.height = img.height;
    image.validate().map_err(|e| e.to_string())?;
    DatasetEntry::from_texts(image, &parsed.captions).map_err(|e| e.to_string())
}

/// One entry per non-blank line, in file order.
pub fn load_jsonl_dataset(path: &Path) -> Result<Vec<DatasetEntry>> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "file is not UTF-8".into(),
    })?;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let base = std::fs::canonicalize(parent).map_err(|e| Error::io(parent, e))?;

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_error = |message: String| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry = parse_line(line, &base).map_err(line_error)?;
        if !seen.insert(entry.image.id.clone()) {
            return Err(line_error(
                Error::DuplicateImageId(entry.image.id).to_string(),
            ));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes entries in the JSON-lines format. Only file-backed and world
/// (latent-free synthetic) images can be written.
pub fn write_jsonl_dataset(entries: &[DatasetEntry], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for entry in entries {
        let (path_field, seed, index) = match &entry.image.source {
            ImageSource::File { path } => (Some(path.clone()), None, None),
            ImageSource::Synthetic {
                world_seed,
                index,
                latent: None,
            } => (None, Some(*world_seed), Some(*index)),
            _ => {
                return Err(Error::Invalid(format!(
                    "image {} cannot be written to a JSON-lines dataset",
                    entry.image.id
                )))
            }
        };
        let line = JsonlLine {
            image: JsonlImage {
                id: entry.image.id.clone(),
                path: path_field,
                seed,
                index,
                width: entry.image.width,
                height: entry.image.height,
            },
            captions: entry.references.iter().map(|c| c.text.clone()).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    write_atomic(path, |f| f.write_all(&out).map_err(|e| Error::io(path, e)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Coco,
    Jsonl,
}

impl DatasetFormat {
    /// `.jsonl` / `.ndjson` are JSON lines; anything else is COCO.
    pub fn detect(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => DatasetFormat::Jsonl,
            _ => DatasetFormat::Coco,
        }
    }
}

/// Loads either format. COCO images resolve against `image_root`, or the
/// annotation file's directory when absent.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    image_root: Option<&Path>,
) -> Result<Vec<DatasetEntry>> {
    match format {
        DatasetFormat::Jsonl => load_jsonl_dataset(path),
        DatasetFormat::Coco => {
            let root = image_root
                .map(Path::to_path_buf)
                .or_else(|| path.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            load_coco_annotations(path, &root)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_images: usize,
    pub n_captions: usize,
    /// Caption count → number of images with that many captions.
    pub captions_per_image: BTreeMap<usize, usize>,
}

pub fn dataset_summary(entries: &[DatasetEntry]) -> DatasetSummary {
    let mut histogram: HashMap<usize, usize> = HashMap::new();
    for entry in entries {
        *histogram.entry(entry.references.len()).or_default() += 1;
    }
    DatasetSummary {
        n_images: entries.len(),
        n_captions: entries.iter().map(|e| e.references.len()).sum(),
        captions_per_image: histogram.into_iter().collect(),
    }
}
