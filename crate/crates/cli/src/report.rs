//! Machine-readable reports. Field order is the serialization order.
//! Everything derived from wall-clock measurements sits under `timing`.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Report<B: Serialize, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub input_digest: String,
    #[serde(flatten)]
    pub body: B,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<T>,
}

impl<B: Serialize, T: Serialize> Report<B, T> {
    pub fn new(command: &'static str, input: &[u8], body: B, timing: Option<T>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            input_digest: digest(input),
            body,
            timing,
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Pretty JSON to `path`, or to stdout when no path is given.
pub fn emit(report: &impl Serialize, path: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(report).context("serializing report")?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes()).context("writing report")?,
    }
    Ok(())
}
