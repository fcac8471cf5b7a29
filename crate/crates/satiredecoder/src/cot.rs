//! Chain-of-thought prompt construction and three-subtask response
//! parsing. The prompt text lives in versioned template files under
//! `templates/`, so prompt ablations are file or flag changes, not code
//! changes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ChatMessage, ChatRequest, ClientError, ReasonerClient};
use crate::core::{Caption, ImageRef, SemanticBundle, TagSet};

/// Section labels shared between the prompt template, the response parser,
/// and the mock reasoner.
pub mod labels {
    pub const LE_YES: &str = "LOCAL TAGS (YES):";
    pub const LE_BUT: &str = "LOCAL TAGS (BUT):";
    pub const GS_YES: &str = "CAPTION (YES):";
    pub const GS_BUT: &str = "CAPTION (BUT):";
    pub const D_LOCAL: &str = "LOCAL DISCREPANCY:";
    pub const D_GLOBAL: &str = "GLOBAL DISCREPANCY:";
    pub const SUBTASK1: &str = "SUBTASK1:";
    pub const SUBTASK2: &str = "SUBTASK2:";
    pub const SUBTASK3: &str = "SUBTASK3:";
}

const DEFAULT_MAX_TOKENS: u32 = 1024;

/// Appended to the user text for the single parse-failure retry.
pub const FORMAT_REMINDER: &str = "\n\nREMINDER: Your previous answer was not parseable. Respond \
again with exactly three sections labeled SUBTASK1:, SUBTASK2:, and SUBTASK3:, each starting \
on its own line.";

#[derive(Debug, Error)]
pub enum CotError {
    #[error("bundle field '{0}' is empty; run decoupling first")]
    EmptyBundleField(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("response unparseable after one format-reminder retry: {error}; first raw output: {first_raw:?}; second raw output: {second_raw:?}")]
    ParseAfterRetry {
        error: ParseError,
        first_raw: String,
        second_raw: String,
    },
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("subtask {section} section is {kind}")]
pub struct ParseError {
    /// 1, 2, or 3: the first missing or empty section.
    pub section: u8,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Missing,
    Empty,
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Missing => "missing",
            ParseErrorKind::Empty => "empty",
        })
    }
}

/// The assembled prompt: instruction preamble, evidence-bearing user text,
/// and the satirical image itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CotPrompt {
    pub system_text: String,
    pub user_text: String,
    pub attachments: Vec<ImageRef>,
}

/// System/user template pair with `{le_yes}`-style placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// The v1 templates shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            system: include_str!("../templates/cot_system_v1.txt").to_string(),
            user: include_str!("../templates/cot_user_v1.txt").to_string(),
        }
    }

    pub fn from_files(
        system_path: &std::path::Path,
        user_path: &std::path::Path,
    ) -> std::io::Result<Self> {
        Ok(Self {
            system: std::fs::read_to_string(system_path)?,
            user: std::fs::read_to_string(user_path)?,
        })
    }
}

/// Which evidence sections to include; disabling one removes its template
/// lines entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSections {
    pub le: bool,
    pub gs: bool,
    pub da: bool,
}

impl Default for PromptSections {
    fn default() -> Self {
        Self {
            le: true,
            gs: true,
            da: true,
        }
    }
}

/// Newlines inside substituted values would break the line-oriented section
/// structure, so they flatten to spaces.
fn flatten(value: &str) -> String {
    value.replace(['\r', '\n'], " ")
}

pub fn build_prompt(
    bundle: &SemanticBundle,
    attachments: Vec<ImageRef>,
) -> Result<CotPrompt, CotError> {
    build_prompt_with(
        &PromptTemplate::builtin(),
        PromptSections::default(),
        bundle,
        attachments,
    )
}

pub fn build_prompt_with(
    template: &PromptTemplate,
    sections: PromptSections,
    bundle: &SemanticBundle,
    attachments: Vec<ImageRef>,
) -> Result<CotPrompt, CotError> {
    // TagSet::render yields "(none)" for empty sets; only captions and
    // discrepancy strings can be genuinely empty here.
    if bundle.gs_yes.text().is_empty() {
        return Err(CotError::EmptyBundleField("gs_yes"));
    }
    if bundle.gs_but.text().is_empty() {
        return Err(CotError::EmptyBundleField("gs_but"));
    }
    if bundle.d_local.trim().is_empty() {
        return Err(CotError::EmptyBundleField("d_local"));
    }
    if bundle.d_global.trim().is_empty() {
        return Err(CotError::EmptyBundleField("d_global"));
    }

    let user_text = template
        .user
        .lines()
        .filter(|line| {
            if line.contains("{le_yes}") || line.contains("{le_but}") {
                sections.le
            } else if line.contains("{gs_yes}") || line.contains("{gs_but}") {
                sections.gs
            } else if line.contains("{d_local}") || line.contains("{d_global}") {
                sections.da
            } else {
                true
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        .replace("{le_yes}", &flatten(&bundle.le_yes.render()))
        .replace("{le_but}", &flatten(&bundle.le_but.render()))
        .replace("{gs_yes}", &flatten(bundle.gs_yes.text()))
        .replace("{gs_but}", &flatten(bundle.gs_but.text()))
        .replace("{d_local}", &flatten(&bundle.d_local))
        .replace("{d_global}", &flatten(&bundle.d_global));

    Ok(CotPrompt {
        system_text: template.system.trim_end().to_string(),
        user_text,
        attachments,
    })
}

/// The parsed three-subtask answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskResponse {
    pub r1: TagSet,
    pub r2: Caption,
    pub r3: String,
}

impl SubtaskResponse {
    /// Canonical labeled rendering; `parse_subtask_response` inverts it.
    pub fn render(&self) -> String {
        format!(
            "{} {}\n{} {}\n{} {}",
            labels::SUBTASK1,
            self.r1.render(),
            labels::SUBTASK2,
            self.r2.text(),
            labels::SUBTASK3,
            self.r3
        )
    }
}

/// Extract the three labeled sections from raw model output. Sections may
/// appear in any order; each runs until the next label or end of text.
pub fn parse_subtask_response(raw: &str) -> Result<SubtaskResponse, ParseError> {
    let all_labels = [labels::SUBTASK1, labels::SUBTASK2, labels::SUBTASK3];
    let mut marks: Vec<(usize, usize)> = Vec::new(); // (byte offset, label index)
    for (idx, label) in all_labels.iter().enumerate() {
        if let Some(pos) = raw.find(label) {
            marks.push((pos, idx));
        }
    }
    marks.sort_unstable();

    let mut sections: [Option<String>; 3] = [None, None, None];
    for (i, &(pos, idx)) in marks.iter().enumerate() {
        let start = pos + all_labels[idx].len();
        let end = marks.get(i + 1).map(|&(p, _)| p).unwrap_or(raw.len());
        sections[idx] = Some(raw[start..end].trim().to_string());
    }

    let section = |idx: usize| -> Result<String, ParseError> {
        let text = sections[idx].clone().ok_or(ParseError {
            section: idx as u8 + 1,
            kind: ParseErrorKind::Missing,
        })?;
        if text.is_empty() {
            return Err(ParseError {
                section: idx as u8 + 1,
                kind: ParseErrorKind::Empty,
            });
        }
        Ok(text)
    };

    let r1 = TagSet::from_delimited(&section(0)?);
    if r1.is_empty() {
        return Err(ParseError {
            section: 1,
            kind: ParseErrorKind::Empty,
        });
    }
    let r2 = Caption::new(section(1)?).map_err(|_| ParseError {
        section: 2,
        kind: ParseErrorKind::Empty,
    })?;
    let r3 = section(2)?;
    Ok(SubtaskResponse { r1, r2, r3 })
}

/// Outcome of one reasoner round at a given temperature.
#[derive(Debug, Clone)]
pub struct SubtaskRun {
    pub response: SubtaskResponse,
    /// 0 when the first answer parsed, 1 when the format-reminder retry was
    /// needed.
    pub retry_count: u32,
    pub raw: String,
}

fn chat_request(prompt: &CotPrompt, user_text: String, temperature: f64, seed: Option<u64>) -> ChatRequest {
    ChatRequest {
        messages: vec![
            ChatMessage::system(prompt.system_text.clone()),
            ChatMessage::user(user_text, prompt.attachments.clone()),
        ],
        temperature,
        max_tokens: DEFAULT_MAX_TOKENS,
        seed,
    }
}

/// One chat call with the prompt and image at the given temperature. On a
/// parse failure, exactly one retry with an appended format reminder;
/// a second failure propagates with both raw outputs attached.
pub fn run_subtasks(
    reasoner: &dyn ReasonerClient,
    prompt: &CotPrompt,
    temperature: f64,
    seed: Option<u64>,
) -> Result<SubtaskRun, CotError> {
    let first_req = chat_request(prompt, prompt.user_text.clone(), temperature, seed);
    let first_raw = reasoner.chat_complete(&first_req)?;
    let first_err = match parse_subtask_response(&first_raw) {
        Ok(response) => {
            return Ok(SubtaskRun {
                response,
                retry_count: 0,
                raw: first_raw,
            })
        }
        Err(e) => e,
    };

    let retry_req = chat_request(
        prompt,
        format!("{}{FORMAT_REMINDER}", prompt.user_text),
        temperature,
        seed,
    );
    let second_raw = reasoner.chat_complete(&retry_req)?;
    match parse_subtask_response(&second_raw) {
        Ok(response) => Ok(SubtaskRun {
            response,
            retry_count: 1,
            raw: second_raw,
        }),
        Err(_) => Err(CotError::ParseAfterRetry {
            error: first_err,
            first_raw,
            second_raw,
        }),
    }
}
