//! Visual cascaded decoupling: split the satirical image into its yes/but
//! halves and drive the three agents to produce a [`SemanticBundle`]. The
//! four leaf calls (two taggings, two captionings) run concurrently; the
//! two discrepancy calls start only once their inputs exist.

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    AnalyzerClient, CaptionerClient, ClientError, DiscrepancyMode, Role, TaggerClient,
};
use crate::core::{Caption, ImageRef, ImageSample, SemanticBundle, TagSet};

pub const DEFAULT_AGENT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Yes,
    But,
}

impl Half {
    pub fn as_str(self) -> &'static str {
        match self {
            Half::Yes => "yes",
            Half::But => "but",
        }
    }
}

impl std::fmt::Display for Half {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum DecoupleError {
    #[error("cannot decode image '{id}': {message}")]
    Decode { id: String, message: String },
    #[error("split of image '{id}' ({width}px wide) at position {position} would leave an empty half")]
    EmptyHalf {
        id: String,
        width: u32,
        position: f64,
    },
    #[error("invalid split position {0}: must be inside (0, 1)")]
    InvalidPosition(f64),
    #[error("{role} failed{}: {source}", half_suffix(.half))]
    Agent {
        role: Role,
        half: Option<Half>,
        #[source]
        source: ClientError,
    },
}

fn half_suffix(half: &Option<Half>) -> String {
    match half {
        Some(h) => format!(" on half '{h}'"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub axis: SplitAxis,
    /// Fraction of the width assigned to the left (yes) half, in (0, 1).
    pub position: f64,
}

impl Default for SplitRule {
    fn default() -> Self {
        Self {
            axis: SplitAxis::Vertical,
            position: 0.5,
        }
    }
}

impl SplitRule {
    pub fn validate(&self) -> Result<(), DecoupleError> {
        if !(self.position > 0.0 && self.position < 1.0) {
            return Err(DecoupleError::InvalidPosition(self.position));
        }
        Ok(())
    }
}

fn encode_png(id: &str, image: &DynamicImage) -> Result<ImageRef, DecoupleError> {
    let mut bytes = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| DecoupleError::Decode {
            id: id.to_string(),
            message: format!("cannot encode half: {e}"),
        })?;
    ImageRef::new(id, bytes, "image/png").map_err(|e| DecoupleError::Decode {
        id: id.to_string(),
        message: e.to_string(),
    })
}

/// Split a combined satirical image into its left (yes) and right (but)
/// halves. At position 0.5 the left half gets the floor of an odd width, so
/// the two widths differ by at most one pixel; heights are preserved.
pub fn split_image(image: &ImageRef, rule: SplitRule) -> Result<(ImageRef, ImageRef), DecoupleError> {
    rule.validate()?;
    let decoded = image::load_from_memory(&image.bytes).map_err(|e| DecoupleError::Decode {
        id: image.id.clone(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width(), decoded.height());
    let left_width = (f64::from(width) * rule.position).floor() as u32;
    let right_width = width - left_width;
    if left_width == 0 || right_width == 0 {
        return Err(DecoupleError::EmptyHalf {
            id: image.id.clone(),
            width,
            position: rule.position,
        });
    }
    let left = decoded.crop_imm(0, 0, left_width, height);
    let right = decoded.crop_imm(left_width, 0, right_width, height);
    Ok((
        encode_png(&format!("{}::yes", image.id), &left)?,
        encode_png(&format!("{}::but", image.id), &right)?,
    ))
}

/// Run up to `cap` tasks concurrently, preserving input order in the
/// results.
pub(crate) fn parallel_map<T, F>(cap: usize, tasks: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let n = tasks.len();
    let workers = cap.max(1).min(n);
    if workers <= 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<F>>> = tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let task = slots[i]
                    .lock()
                    .expect("task slot mutex")
                    .take()
                    .expect("each task runs once");
                *results[i].lock().expect("result slot mutex") = Some(task());
            });
        }
    });
    results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result mutex")
                .expect("worker filled every slot")
        })
        .collect()
}

enum LeafOutput {
    Tags(TagSet),
    Text(Caption),
}

/// Produce the six-field bundle for one sample. Leaf agent calls run
/// concurrently up to `parallelism`; errors are annotated with the failing
/// role and half and no partial bundle is returned.
pub fn decouple(
    sample: &ImageSample,
    tagger: &dyn TaggerClient,
    captioner: &dyn CaptionerClient,
    analyzer: &dyn AnalyzerClient,
    parallelism: usize,
) -> Result<SemanticBundle, DecoupleError> {
    type LeafTask<'a> = Box<dyn FnOnce() -> Result<LeafOutput, DecoupleError> + Send + 'a>;

    let leaf = |role: Role, half: Half| {
        move |source: ClientError| DecoupleError::Agent {
            role,
            half: Some(half),
            source,
        }
    };

    let tasks: Vec<LeafTask> = vec![
        Box::new(|| {
            tagger
                .tag_image(&sample.image_yes)
                .map(LeafOutput::Tags)
                .map_err(leaf(Role::Tagger, Half::Yes))
        }),
        Box::new(|| {
            tagger
                .tag_image(&sample.image_but)
                .map(LeafOutput::Tags)
                .map_err(leaf(Role::Tagger, Half::But))
        }),
        Box::new(|| {
            captioner
                .caption_image(&sample.image_yes)
                .map(LeafOutput::Text)
                .map_err(leaf(Role::Captioner, Half::Yes))
        }),
        Box::new(|| {
            captioner
                .caption_image(&sample.image_but)
                .map(LeafOutput::Text)
                .map_err(leaf(Role::Captioner, Half::But))
        }),
    ];

    let mut outputs = parallel_map(parallelism, tasks).into_iter();
    let le_yes = match outputs.next().expect("four leaf results")? {
        LeafOutput::Tags(t) => t,
        LeafOutput::Text(_) => unreachable!("task order is fixed"),
    };
    let le_but = match outputs.next().expect("four leaf results")? {
        LeafOutput::Tags(t) => t,
        LeafOutput::Text(_) => unreachable!("task order is fixed"),
    };
    let gs_yes = match outputs.next().expect("four leaf results")? {
        LeafOutput::Text(c) => c,
        LeafOutput::Tags(_) => unreachable!("task order is fixed"),
    };
    let gs_but = match outputs.next().expect("four leaf results")? {
        LeafOutput::Text(c) => c,
        LeafOutput::Tags(_) => unreachable!("task order is fixed"),
    };

    // The cascade: discrepancy analysis consumes the leaf outputs verbatim.
    let local_a = le_yes.render();
    let local_b = le_but.render();
    let analyze = |a: &str, b: &str, mode: DiscrepancyMode| {
        analyzer
            .analyze_discrepancy(a, b, mode)
            .map_err(|source| DecoupleError::Agent {
                role: Role::Analyzer,
                half: None,
                source,
            })
    };
    type AnalyzeTask<'a> = Box<dyn FnOnce() -> Result<String, DecoupleError> + Send + 'a>;
    let analyze_tasks: Vec<AnalyzeTask> = vec![
        Box::new(|| analyze(&local_a, &local_b, DiscrepancyMode::Local)),
        Box::new(|| analyze(gs_yes.text(), gs_but.text(), DiscrepancyMode::Global)),
    ];
    let mut analyzed = parallel_map(parallelism.min(2), analyze_tasks).into_iter();
    let d_local = analyzed.next().expect("two analyze results")?;
    let d_global = analyzed.next().expect("two analyze results")?;

    Ok(SemanticBundle {
        le_yes,
        le_but,
        gs_yes,
        gs_but,
        d_local,
        d_global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockAnalyzer, MockCaptioner, MockTagger};
    use image::RgbImage;

    fn png_image(id: &str, width: u32, height: u32) -> ImageRef {
        let img = RgbImage::from_fn(width, height, |x, y| {
            image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8])
        });
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(img)
            .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        ImageRef::new(id, bytes, "image/png").unwrap()
    }

    fn dims(image: &ImageRef) -> (u32, u32) {
        let decoded = image::load_from_memory(&image.bytes).unwrap();
        (decoded.width(), decoded.height())
    }

    #[test]
    fn split_even_width() {
        let (yes, but) = split_image(&png_image("a", 100, 40), SplitRule::default()).unwrap();
        assert_eq!(dims(&yes), (50, 40));
        assert_eq!(dims(&but), (50, 40));
        assert_eq!(yes.id, "a::yes");
        assert_eq!(but.id, "a::but");
    }

    #[test]
    fn split_odd_width_left_gets_floor() {
        let (yes, but) = split_image(&png_image("a", 101, 40), SplitRule::default()).unwrap();
        assert_eq!(dims(&yes), (50, 40));
        assert_eq!(dims(&but), (51, 40));
    }

    #[test]
    fn split_rejects_text_bytes() {
        let bogus = ImageRef::new("t", b"this is not an image".to_vec(), "text/plain").unwrap();
        assert!(matches!(
            split_image(&bogus, SplitRule::default()),
            Err(DecoupleError::Decode { .. })
        ));
    }

    #[test]
    fn split_rejects_bad_position() {
        let img = png_image("a", 10, 10);
        for position in [0.0, 1.0, -0.5, 1.5] {
            let rule = SplitRule {
                axis: SplitAxis::Vertical,
                position,
            };
            assert!(matches!(
                split_image(&img, rule),
                Err(DecoupleError::InvalidPosition(_))
            ));
        }
    }

    #[test]
    fn split_then_reconcat_preserves_dimensions() {
        for width in [2u32, 7, 100, 101, 33] {
            let original = png_image("a", width, 9);
            let (yes, but) = split_image(&original, SplitRule::default()).unwrap();
            let (wy, hy) = dims(&yes);
            let (wb, hb) = dims(&but);
            assert_eq!(wy + wb, width);
            assert_eq!(hy, 9);
            assert_eq!(hb, 9);
            assert!(wy.abs_diff(wb) <= 1);
        }
    }

    fn sample() -> ImageSample {
        ImageSample {
            id: "s1".into(),
            image_yes: png_image("s1::yes", 4, 4),
            image_but: png_image("s1::but", 4, 4),
            image_full: None,
            gold_description: "gold".into(),
            gold_objects: Default::default(),
            synonyms: Default::default(),
            mention_vocabulary: Default::default(),
        }
    }

    #[test]
    fn decouple_composes_scripted_agents() {
        let tagger = MockTagger::standalone(0)
            .with_response("s1::yes", "dog, ball")
            .with_response("s1::but", "dog, goal");
        let captioner = MockCaptioner::standalone(0)
            .with_response("s1::yes", "a dog plays")
            .with_response("s1::but", "an empty goal");
        let analyzer = MockAnalyzer::standalone().with_template("DIFF({a}|{b})");

        let bundle = decouple(&sample(), &tagger, &captioner, &analyzer, 4).unwrap();
        assert_eq!(bundle.le_yes, TagSet::from_raw(["dog", "ball"]));
        assert_eq!(bundle.le_but, TagSet::from_raw(["dog", "goal"]));
        assert_eq!(bundle.gs_yes.text(), "a dog plays");
        assert_eq!(bundle.gs_but.text(), "an empty goal");
        assert_eq!(bundle.d_local, "DIFF(ball, dog|dog, goal)");
        assert_eq!(bundle.d_global, "DIFF(a dog plays|an empty goal)");
    }

    #[test]
    fn cascade_feeds_exact_leaf_outputs_to_analyzer() {
        let tagger = MockTagger::standalone(0)
            .with_response("s1::yes", "Zebra , apple")
            .with_response("s1::but", "apple");
        let captioner = MockCaptioner::standalone(0)
            .with_response("s1::yes", " left scene ")
            .with_response("s1::but", "right scene");
        let analyzer = MockAnalyzer::standalone();

        decouple(&sample(), &tagger, &captioner, &analyzer, 4).unwrap();
        let calls = analyzer.recorded_calls();
        assert_eq!(calls.len(), 2);
        let local = calls
            .iter()
            .find(|c| c.2 == DiscrepancyMode::Local)
            .unwrap();
        assert_eq!(local.0, "apple, zebra");
        assert_eq!(local.1, "apple");
        let global = calls
            .iter()
            .find(|c| c.2 == DiscrepancyMode::Global)
            .unwrap();
        assert_eq!(global.0, "left scene");
        assert_eq!(global.1, "right scene");
    }

    #[test]
    fn decouple_annotates_failures_with_role_and_half() {
        let tagger = MockTagger::standalone(0).with_response("s1::yes", "dog");
        tagger.fail_for_image("s1::but");
        let captioner = MockCaptioner::standalone(0)
            .with_response("s1::yes", "a")
            .with_response("s1::but", "b");
        let analyzer = MockAnalyzer::standalone();

        match decouple(&sample(), &tagger, &captioner, &analyzer, 4) {
            Err(DecoupleError::Agent { role, half, .. }) => {
                assert_eq!(role, Role::Tagger);
                assert_eq!(half, Some(Half::But));
            }
            other => panic!("expected agent error, got {other:?}"),
        }
        assert_eq!(analyzer.calls(), 0, "no partial cascade on failure");
    }

    #[test]
    fn decouple_handles_empty_tag_sets() {
        let tagger = MockTagger::standalone(0)
            .with_response("s1::yes", " , ")
            .with_response("s1::but", "");
        let captioner = MockCaptioner::standalone(0)
            .with_response("s1::yes", "a")
            .with_response("s1::but", "b");
        let analyzer = MockAnalyzer::standalone().with_template("DIFF({a}|{b})");

        let bundle = decouple(&sample(), &tagger, &captioner, &analyzer, 1).unwrap();
        assert!(bundle.le_yes.is_empty());
        assert_eq!(bundle.d_local, "DIFF((none)|(none))");
    }

    #[test]
    fn decouple_is_deterministic_under_fixed_seed() {
        let run = || {
            let tagger = MockTagger::standalone(11);
            let captioner = MockCaptioner::standalone(11);
            let analyzer = MockAnalyzer::standalone();
            decouple(&sample(), &tagger, &captioner, &analyzer, 4).unwrap()
        };
        assert_eq!(run(), run());
    }
}
