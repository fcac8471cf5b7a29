//! Dataset ingestion: a JSONL manifest (one metadata line, then one sample
//! per line) referencing image files on disk. Samples may ship a combined
//! image, both halves, or both; combined images are split on load.

mod cache;
mod cached;

pub use cache::{CacheError, CacheKey, FileCache};
pub use cached::{CacheStats, CachedAnalyzer, CachedCaptioner, CachedReasoner, CachedTagger};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{normalize_tag, ImageRef, ImageSample};
use crate::decouple::{split_image, DecoupleError, SplitRule};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("sample '{sample_id}' references missing image file {path}")]
    MissingFile { sample_id: String, path: PathBuf },
    #[error("duplicate sample id '{id}' (lines {first_line} and {second_line})")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("sample '{sample_id}': {source}")]
    Split {
        sample_id: String,
        #[source]
        source: DecoupleError,
    },
}

/// First line of every manifest. Extra fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    version: String,
}

/// One manifest line. Unknown fields are accepted and ignored so richer
/// annotation exports load unchanged.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    yes_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    but_path: Option<String>,
    #[serde(default)]
    gold_description: String,
    #[serde(default)]
    gold_objects: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    synonyms: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vocabulary: Vec<String>,
}

fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

fn extension_for(media_type: &str) -> &'static str {
    match media_type {
        "image/png" => "png",
        "image/jpeg" => "jpg",
        _ => "bin",
    }
}

fn read_image(
    base: &Path,
    sample_id: &str,
    rel: &str,
    image_id: String,
) -> Result<ImageRef, DatasetError> {
    let path = base.join(rel);
    let bytes = std::fs::read(&path).map_err(|_| DatasetError::MissingFile {
        sample_id: sample_id.to_string(),
        path: path.clone(),
    })?;
    ImageRef::new(image_id, bytes, media_type_for(&path)).map_err(|e| DatasetError::Schema {
        line: 0,
        message: format!("sample '{sample_id}': {e}"),
    })
}

fn normalize_set(raw: &[String]) -> BTreeSet<String> {
    raw.iter()
        .map(|s| normalize_tag(s))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Load a manifest, resolving halves (splitting combined images when no
/// halves are given) and returning samples sorted by id.
pub fn load_dataset(path: &Path) -> Result<Vec<ImageSample>, DatasetError> {
    load_dataset_with_rule(path, SplitRule::default())
}

pub fn load_dataset_with_rule(
    path: &Path,
    rule: SplitRule,
) -> Result<Vec<ImageSample>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let reader = BufReader::new(file);

    let mut samples: Vec<ImageSample> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut header_seen = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !header_seen {
            let header: ManifestHeader =
                serde_json::from_str(trimmed).map_err(|e| DatasetError::Schema {
                    line: line_no,
                    message: format!("metadata line: {e}"),
                })?;
            if header.version != MANIFEST_VERSION {
                return Err(DatasetError::Schema {
                    line: line_no,
                    message: format!(
                        "unsupported manifest version '{}' (expected '{MANIFEST_VERSION}')",
                        header.version
                    ),
                });
            }
            header_seen = true;
            continue;
        }

        let entry: SampleEntry =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
        if entry.id.trim().is_empty() {
            return Err(DatasetError::Schema {
                line: line_no,
                message: "field 'id' must be a non-empty string".to_string(),
            });
        }
        if let Some(first_line) = seen.get(&entry.id) {
            return Err(DatasetError::DuplicateId {
                id: entry.id,
                first_line: *first_line,
                second_line: line_no,
            });
        }
        seen.insert(entry.id.clone(), line_no);

        let image_full = entry
            .image_path
            .as_deref()
            .map(|rel| read_image(&base, &entry.id, rel, entry.id.clone()))
            .transpose()?;

        let (image_yes, image_but) = match (&entry.yes_path, &entry.but_path) {
            (Some(yes), Some(but)) => (
                read_image(&base, &entry.id, yes, format!("{}::yes", entry.id))?,
                read_image(&base, &entry.id, but, format!("{}::but", entry.id))?,
            ),
            (None, None) => {
                let full = image_full.as_ref().ok_or_else(|| DatasetError::Schema {
                    line: line_no,
                    message: format!(
                        "sample '{}' needs either 'image_path' or both 'yes_path' and 'but_path'",
                        entry.id
                    ),
                })?;
                split_image(full, rule).map_err(|source| DatasetError::Split {
                    sample_id: entry.id.clone(),
                    source,
                })?
            }
            _ => {
                return Err(DatasetError::Schema {
                    line: line_no,
                    message: format!(
                        "sample '{}' has only one of 'yes_path'/'but_path'",
                        entry.id
                    ),
                })
            }
        };

        let gold_objects = normalize_set(&entry.gold_objects);
        let synonyms: BTreeMap<String, BTreeSet<String>> = entry
            .synonyms
            .iter()
            .map(|(k, v)| (normalize_tag(k), normalize_set(v)))
            .filter(|(k, _)| !k.is_empty())
            .collect();
        let mut mention_vocabulary = normalize_set(&entry.vocabulary);
        mention_vocabulary.extend(gold_objects.iter().cloned());

        samples.push(ImageSample {
            id: entry.id,
            image_yes,
            image_but,
            image_full,
            gold_description: entry.gold_description,
            gold_objects,
            synonyms,
            mention_vocabulary,
        });
    }

    if !header_seen {
        return Err(DatasetError::Schema {
            line: 1,
            message: "manifest is empty; expected a metadata line".to_string(),
        });
    }

    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

/// Export samples (halves plus combined image when present) and a manifest
/// into `dir`. The result loads back to equal samples.
pub fn save_dataset(dir: &Path, samples: &[ImageSample]) -> Result<PathBuf, DatasetError> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| DatasetError::Io {
        path: images_dir.clone(),
        source,
    })?;
    let io_err = |path: &Path, source: std::io::Error| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };

    let manifest_path = dir.join("dataset.jsonl");
    let mut manifest = std::fs::File::create(&manifest_path)
        .map_err(|e| io_err(&manifest_path, e))?;
    let header = serde_json::json!({"version": MANIFEST_VERSION});
    writeln!(manifest, "{header}").map_err(|e| io_err(&manifest_path, e))?;

    for sample in samples {
        let stem = file_stem_for(&sample.id);
        let write_image = |suffix: &str, image: &ImageRef| -> Result<String, DatasetError> {
            let name = format!("{stem}{suffix}.{}", extension_for(&image.media_type));
            let path = images_dir.join(&name);
            std::fs::write(&path, &image.bytes).map_err(|e| io_err(&path, e))?;
            Ok(format!("images/{name}"))
        };
        let yes_path = write_image("__yes", &sample.image_yes)?;
        let but_path = write_image("__but", &sample.image_but)?;
        let image_path = sample
            .image_full
            .as_ref()
            .map(|full| write_image("__full", full))
            .transpose()?;

        let entry = SampleEntry {
            id: sample.id.clone(),
            image_path,
            yes_path: Some(yes_path),
            but_path: Some(but_path),
            gold_description: sample.gold_description.clone(),
            gold_objects: sample.gold_objects.iter().cloned().collect(),
            synonyms: sample
                .synonyms
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
            vocabulary: sample.mention_vocabulary.iter().cloned().collect(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| DatasetError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(manifest, "{line}").map_err(|e| io_err(&manifest_path, e))?;
    }
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{DynamicImage, ImageFormat, RgbImage};
    use std::io::Cursor;

    fn png_bytes(width: u32, height: u32, tint: u8) -> Vec<u8> {
        let img = RgbImage::from_fn(width, height, |x, y| {
            image::Rgb([tint, (x % 256) as u8, (y % 256) as u8])
        });
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(img)
            .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        bytes
    }

    fn write_manifest(dir: &Path, lines: &[String]) -> PathBuf {
        let path = dir.join("dataset.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn loads_two_sample_manifest_sorted_by_id() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.png"), png_bytes(8, 4, 0)).unwrap();
        std::fs::write(dir.path().join("a_yes.png"), png_bytes(4, 4, 1)).unwrap();
        std::fs::write(dir.path().join("a_but.png"), png_bytes(4, 4, 2)).unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"version":"1"}"#.to_string(),
                r#"{"id":"zz","image_path":"b.png","gold_description":"z","gold_objects":["Dog"],"unknown_field":42}"#.to_string(),
                r#"{"id":"aa","yes_path":"a_yes.png","but_path":"a_but.png","gold_description":"a"}"#.to_string(),
            ],
        );
        let samples = load_dataset(&manifest).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].id, "aa");
        assert_eq!(samples[1].id, "zz");
        // combined image was split and retained
        assert!(samples[1].image_full.is_some());
        assert_eq!(samples[1].image_yes.id, "zz::yes");
        assert!(samples[1].gold_objects.contains("dog"));
        // pre-split halves: no combined image
        assert!(samples[0].image_full.is_none());
    }

    #[test]
    fn missing_image_names_path_and_sample() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"version":"1"}"#.to_string(),
                r#"{"id":"s1","image_path":"absent.png"}"#.to_string(),
            ],
        );
        match load_dataset(&manifest) {
            Err(DatasetError::MissingFile { sample_id, path }) => {
                assert_eq!(sample_id, "s1");
                assert!(path.ends_with("absent.png"));
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_list_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("i.png"), png_bytes(8, 4, 0)).unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"version":"1"}"#.to_string(),
                r#"{"id":"dup","image_path":"i.png"}"#.to_string(),
                r#"{"id":"dup","image_path":"i.png"}"#.to_string(),
            ],
        );
        match load_dataset(&manifest) {
            Err(DatasetError::DuplicateId {
                id,
                first_line,
                second_line,
            }) => {
                assert_eq!(id, "dup");
                assert_eq!(first_line, 2);
                assert_eq!(second_line, 3);
            }
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"version":"1"}"#.to_string(),
                r#"{"id":"s1"}"#.to_string(), // no image source at all
            ],
        );
        match load_dataset(&manifest) {
            Err(DatasetError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("image_path"));
            }
            other => panic!("expected Schema, got {other:?}"),
        }
        // wrong version
        let manifest = write_manifest(dir.path(), &[r#"{"version":"9"}"#.to_string()]);
        assert!(matches!(
            load_dataset(&manifest),
            Err(DatasetError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("full.png"), png_bytes(10, 6, 3)).unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"version":"1"}"#.to_string(),
                r#"{"id":"s1","image_path":"full.png","gold_description":"two scenes","gold_objects":["dog","Soccer Ball"],"synonyms":{"soccer ball":["football"]},"vocabulary":["goal"]}"#.to_string(),
            ],
        );
        let original = load_dataset(&manifest).unwrap();

        let out = tempfile::tempdir().unwrap();
        let saved_manifest = save_dataset(out.path(), &original).unwrap();
        let reloaded = load_dataset(&saved_manifest).unwrap();
        assert_eq!(original, reloaded);
    }
}
