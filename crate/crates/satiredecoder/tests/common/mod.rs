//! Shared helpers for integration tests: tiny synthetic datasets and
//! ready-made mock configurations.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};

use satiredecoder::cli::{AppConfig, BackendsConfig};
use satiredecoder::uncertainty::SweepConfig;

pub fn png_bytes(width: u32, height: u32, tint: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(width, height, |x, y| {
        image::Rgb([tint, (x * 7 % 256) as u8, (y * 13 % 256) as u8])
    });
    let mut bytes = Vec::new();
    DynamicImage::ImageRgb8(img)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .unwrap();
    bytes
}

/// Write an n-sample dataset of combined images with gold annotations.
/// Returns the manifest path.
pub fn write_demo_dataset(dir: &Path, n: usize) -> PathBuf {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut lines = vec![r#"{"version":"1"}"#.to_string()];
    for i in 0..n {
        let id = format!("s{i:02}");
        let file = format!("images/{id}.png");
        std::fs::write(dir.join(&file), png_bytes(16, 8, i as u8 * 31)).unwrap();
        lines.push(format!(
            concat!(
                r#"{{"id":"{id}","image_path":"{file}","#,
                r#""gold_description":"A person waters a plant on the left. The plant is wilting on the right.","#,
                r#""gold_objects":["person","plant"],"#,
                r#""synonyms":{{"person":["man","woman"]}},"#,
                r#""vocabulary":["dog","ghost","dragon","unicorn"]}}"#
            ),
            id = id,
            file = file
        ));
    }
    let manifest = dir.join("dataset.jsonl");
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    manifest
}

pub fn mock_config(dataset_path: &Path, output_dir: &Path) -> AppConfig {
    AppConfig {
        dataset_path: dataset_path.to_path_buf(),
        output_dir: output_dir.to_path_buf(),
        cache_dir: None,
        global_seed: 7,
        parallelism: 2,
        log_level: satiredecoder::cli::LogLevel::Error,
        cache_reasoner: true,
        backends: BackendsConfig::all_mock(),
        sweep: SweepConfig::default(),
    }
}
