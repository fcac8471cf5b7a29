//! Generates a small runnable demo dataset: three two-panel images, a
//! manifest with gold annotations, mock fixtures that give the agent
//! stage meaningful outputs, and a ready-to-run config.
//!
//! ```bash
//! cargo run --example gen_demo            # writes ./demo
//! cargo run -- run --config demo/config.json
//! ```

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

struct DemoSample {
    id: &'static str,
    left_color: Rgb<u8>,
    right_color: Rgb<u8>,
    yes_tags: &'static str,
    but_tags: &'static str,
    yes_caption: &'static str,
    but_caption: &'static str,
    gold_description: &'static str,
    gold_objects: &'static [&'static str],
}

const SAMPLES: &[DemoSample] = &[
    DemoSample {
        id: "watering",
        left_color: Rgb([90, 170, 90]),
        right_color: Rgb([150, 120, 70]),
        yes_tags: "person, watering can, plant",
        but_tags: "plant, dry soil",
        yes_caption: "a person waters a small plant",
        but_caption: "the same plant wilts in dry soil",
        gold_description: "A person diligently waters a plant. The plant wilts anyway, mocking \
                           effort without understanding.",
        gold_objects: &["person", "watering can", "plant", "dry soil"],
    },
    DemoSample {
        id: "recycling",
        left_color: Rgb([100, 140, 200]),
        right_color: Rgb([120, 120, 120]),
        yes_tags: "person, recycling bin, bottle",
        but_tags: "truck, landfill, bottle",
        yes_caption: "a person sorts bottles into a recycling bin",
        but_caption: "a truck dumps the sorted bottles into a landfill",
        gold_description: "A person carefully sorts recycling. A truck dumps it all into a \
                           landfill, satirizing performative environmentalism.",
        gold_objects: &["person", "recycling bin", "bottle", "truck", "landfill"],
    },
    DemoSample {
        id: "fitness",
        left_color: Rgb([220, 180, 80]),
        right_color: Rgb([200, 90, 90]),
        yes_tags: "person, treadmill, gym",
        but_tags: "person, sofa, pizza",
        yes_caption: "a person runs hard on a gym treadmill",
        but_caption: "the same person eats pizza on a sofa",
        gold_description: "A person exercises intensely at the gym. Afterwards they eat pizza on \
                           the sofa, mocking fitness routines undone by habit.",
        gold_objects: &["person", "treadmill", "gym", "sofa", "pizza"],
    },
];

fn two_panel_png(left: Rgb<u8>, right: Rgb<u8>) -> Vec<u8> {
    let (width, height) = (64u32, 32u32);
    let img = RgbImage::from_fn(width, height, |x, y| {
        let base = if x < width / 2 { left } else { right };
        // simple texture so the halves aren't flat color
        if (x / 4 + y / 4) % 2 == 0 {
            base
        } else {
            Rgb([
                base.0[0].saturating_sub(30),
                base.0[1].saturating_sub(30),
                base.0[2].saturating_sub(30),
            ])
        }
    });
    let mut bytes = Vec::new();
    DynamicImage::ImageRgb8(img)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("png encoding");
    bytes
}

fn main() -> std::io::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "demo".to_string());
    let root = Path::new(&root);
    std::fs::create_dir_all(root.join("images"))?;

    let mut manifest = vec![r#"{"version":"1"}"#.to_string()];
    let mut fixtures = Vec::new();

    for sample in SAMPLES {
        let file = format!("images/{}.png", sample.id);
        std::fs::write(
            root.join(&file),
            two_panel_png(sample.left_color, sample.right_color),
        )?;
        manifest.push(
            serde_json::json!({
                "id": sample.id,
                "image_path": file,
                "gold_description": sample.gold_description,
                "gold_objects": sample.gold_objects,
                "synonyms": {"person": ["man", "woman", "runner"]},
                // the mock reasoner can hallucinate these at high temperature
                "vocabulary": ["dragon", "ghost", "unicorn"],
            })
            .to_string(),
        );
        // script the agent stage so bundles carry the scene semantics;
        // halves split from a combined image get "::yes" / "::but" ids
        for (role, key, response) in [
            ("tagger", format!("{}::yes", sample.id), sample.yes_tags),
            ("tagger", format!("{}::but", sample.id), sample.but_tags),
            ("captioner", format!("{}::yes", sample.id), sample.yes_caption),
            ("captioner", format!("{}::but", sample.id), sample.but_caption),
        ] {
            fixtures.push(serde_json::json!({
                "role": role,
                "key": key,
                "response": response,
            }));
        }
    }

    std::fs::write(root.join("dataset.jsonl"), manifest.join("\n") + "\n")?;
    std::fs::write(
        root.join("fixtures.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "version": "1",
            "fixtures": fixtures,
        }))? + "\n",
    )?;

    let config = serde_json::json!({
        "dataset_path": root.join("dataset.jsonl"),
        "output_dir": root.join("out"),
        "global_seed": 7,
        "parallelism": 2,
        "log_level": "info",
        "backends": {
            "tagger": "mock",
            "captioner": "mock",
            "analyzer": "mock",
            "reasoner": "mock",
            "embedder": "mock",
            "fixtures": root.join("fixtures.json"),
        },
        "sweep": {
            "temperatures": [0.2, 0.4, 0.6, 0.8, 1.0],
            "w1": 0.5,
            "w2": 0.5,
            "similarity": "token_greedy_f"
        }
    });
    std::fs::write(
        root.join("config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;

    println!("demo written to {}/", root.display());
    println!("  satiredecoder run --config {}/config.json", root.display());
    println!(
        "  satiredecoder eval --run {root}/out --dataset {root}/dataset.jsonl",
        root = root.display()
    );
    println!("  satiredecoder report --run {}/out", root.display());
    Ok(())
}
