//! Text prompts: template rendering, a byte-level tokenizer and fixed-width
//! left padding so every prompt in a corpus has the same token count.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::WindowSample;
use crate::error::{Error, Result};

/// 256 byte values plus one padding id.
pub const VOCAB_SIZE: usize = 257;
pub const PAD_ID: usize = 256;

/// Default layout: one line per field; `{avs}` expands to several lines.
pub const DEFAULT_TEMPLATE: &str = "{background}\ntime: {time}\n{avs}\n{instruction}\n";

pub const DEFAULT_BACKGROUND: &str = "Rotary air preheater. V1 flue gas inlet temp, V2 flue gas outlet temp, \
V3 air inlet temp, V4 air outlet temp, V5 sector plate displacement.";
pub const DEFAULT_INSTRUCTION: &str = "Predict rotor thermal deformation.";

/// Short prefix fields sized to leave room for a 96-step data window.
pub const SHORT_BACKGROUND: &str = "Air preheater";
pub const SHORT_INSTRUCTION: &str = "Predict deformation";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    /// Layout text with `{background}`, `{time}`, `{avs}`, `{instruction}`.
    pub layout: String,
    pub background: String,
    pub instruction: String,
    /// Names of the input variables in column order.
    pub names: Vec<String>,
}

impl PromptTemplate {
    pub fn new(background: &str, instruction: &str, names: &[&str]) -> Self {
        Self {
            layout: DEFAULT_TEMPLATE.into(),
            background: background.into(),
            instruction: instruction.into(),
            names: names.iter().map(|s| String::from(*s)).collect(),
        }
    }

    /// `V1..Vm` with the default background and instruction.
    pub fn standard(vars: usize) -> Self {
        let names: Vec<String> = (1..=vars).map(|i| format!("V{i}")).collect();
        Self { layout: DEFAULT_TEMPLATE.into(), background: DEFAULT_BACKGROUND.into(), instruction: DEFAULT_INSTRUCTION.into(), names }
    }

    pub fn with_layout(mut self, layout: &str) -> Self {
        self.layout = layout.into();
        self
    }

    fn render(&self, time: &str, avs: &str) -> String {
        let mut out = String::new();
        for line in self.layout.lines() {
            let text = line
                .replace("{background}", &self.background)
                .replace("{time}", time)
                .replace("{instruction}", &self.instruction)
                .replace("{avs}", avs);
            if text.is_empty() {
                continue;
            }
            out.push_str(&text);
            if !text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

/// Seconds as a fixed-width `HH:MM:SS` clock reading.
pub fn clock_time(seconds: f64) -> String {
    let s = libm::floor(seconds).max(0.0) as u64 % 86_400;
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Every step's `name: value` lines (4 decimals) between the fixed fields.
pub fn render_text_prompt(template: &PromptTemplate, window: &WindowSample, time: &str) -> Result<String> {
    if template.names.len() != window.vars {
        return Err(Error::Config(format!("template names {} variables, window has {}", template.names.len(), window.vars)));
    }
    let mut avs = String::new();
    for step in window.values.chunks_exact(window.vars) {
        for (name, v) in template.names.iter().zip(step) {
            if !avs.is_empty() {
                avs.push('\n');
            }
            avs.push_str(&format!("{name}: {v:.4}"));
        }
    }
    Ok(template.render(time, &avs))
}

/// Like [`render_text_prompt`] but listing variable names without values.
pub fn render_prefix_prompt(template: &PromptTemplate, time: &str) -> String {
    template.render(time, &template.names.join(","))
}

pub fn tokenize_text(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Bytes for every non-padding id.
pub fn detokenize(ids: &[usize]) -> Vec<u8> {
    ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect()
}

/// Left-pad `ids` with [`PAD_ID`] to exactly `len` tokens.
pub fn pad_left(ids: &[usize], len: usize) -> Result<Vec<usize>> {
    if ids.len() > len {
        return Err(Error::SequenceTooLong { len: ids.len(), n_ctx: len });
    }
    let mut out = vec![PAD_ID; len - ids.len()];
    out.extend_from_slice(ids);
    Ok(out)
}
