//! Plaintext RFC acquisition and normalization.
//!
//! Fetched documents are cached verbatim under `<cache_dir>/rfc<N>.txt`;
//! pagination cleanup happens on load so cached bytes stay pristine.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use thiserror::Error;

/// Default remote source, templated with the RFC number via `{n}`.
pub const DEFAULT_BASE_URI: &str = "https://www.rfc-editor.org/rfc/rfc{n}.txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("rfc number must be positive")]
    InvalidRfcNumber,
    #[error("rfc {rfc} not found at {uri}")]
    NotFound { rfc: u32, uri: String },
    #[error("network error fetching rfc {rfc} and no cached copy: {detail}")]
    NetworkError { rfc: u32, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A cleaned, line-addressable RFC document.
#[derive(Debug, Clone)]
pub struct RfcDocument {
    pub rfc_number: u32,
    pub lines: Vec<String>,
    pub source_uri: String,
    pub fetched_at: SystemTime,
}

impl RfcDocument {
    pub fn from_raw(rfc_number: u32, raw: &str, source_uri: &str) -> Self {
        RfcDocument {
            rfc_number,
            lines: clean_document(raw),
            source_uri: source_uri.to_string(),
            fetched_at: SystemTime::now(),
        }
    }

    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

fn is_page_trailer(line: &str) -> bool {
    let t = line.trim_end();
    if !t.ends_with(']') {
        return false;
    }
    match t.rfind("[Page ") {
        Some(i) => t[i + 6..t.len() - 1].trim().chars().all(|c| c.is_ascii_digit())
            && t.len() - 1 > i + 6,
        None => false,
    }
}

fn is_form_feed_line(line: &str) -> bool {
    !line.is_empty() && line.chars().all(|c| c == '\x0c' || c.is_whitespace())
        && line.contains('\x0c')
}

/// Strips form feeds and the repeated `[Page N]` / title-banner pairs that
/// RFC pagination inserts. Every removed line matches one of those
/// predicates; all other lines keep their order.
pub fn clean_document(raw: &str) -> Vec<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut remove = vec![false; lines.len()];
    for (i, line) in lines.iter().enumerate() {
        if is_form_feed_line(line) {
            remove[i] = true;
        }
        if is_page_trailer(line) {
            remove[i] = true;
            // The banner is the next non-blank line (skipping form feeds).
            for next in lines.iter().enumerate().skip(i + 1) {
                let (j, l) = next;
                if is_form_feed_line(l) {
                    remove[j] = true;
                    continue;
                }
                if l.trim().is_empty() {
                    continue;
                }
                remove[j] = true;
                break;
            }
        }
    }
    lines
        .iter()
        .enumerate()
        .filter(|(i, _)| !remove[*i])
        .map(|(_, l)| l.replace('\x0c', ""))
        .collect()
}

pub fn cache_path(cache_dir: &Path, rfc_number: u32) -> PathBuf {
    cache_dir.join(format!("rfc{rfc_number}.txt"))
}

/// Fetches an RFC, preferring the local cache. A cache hit never touches the
/// network; a miss downloads from `base_uri` and writes the exact remote
/// bytes to the cache.
pub fn fetch_rfc(rfc_number: u32, cache_dir: &Path) -> Result<RfcDocument, CorpusError> {
    fetch_rfc_from(rfc_number, cache_dir, DEFAULT_BASE_URI)
}

pub fn fetch_rfc_from(
    rfc_number: u32,
    cache_dir: &Path,
    base_uri: &str,
) -> Result<RfcDocument, CorpusError> {
    if rfc_number == 0 {
        return Err(CorpusError::InvalidRfcNumber);
    }
    let path = cache_path(cache_dir, rfc_number);
    if path.exists() {
        let raw = fs::read_to_string(&path)?;
        return Ok(RfcDocument::from_raw(rfc_number, &raw, &path.display().to_string()));
    }
    let uri = base_uri.replace("{n}", &rfc_number.to_string());
    let raw = download(rfc_number, &uri)?;
    fs::create_dir_all(cache_dir)?;
    fs::write(&path, &raw)?;
    Ok(RfcDocument::from_raw(rfc_number, &raw, &uri))
}

/// Loads a previously cached RFC without any network fallback.
pub fn load_cached(rfc_number: u32, cache_dir: &Path) -> Result<RfcDocument, CorpusError> {
    if rfc_number == 0 {
        return Err(CorpusError::InvalidRfcNumber);
    }
    let path = cache_path(cache_dir, rfc_number);
    if !path.exists() {
        return Err(CorpusError::NotFound {
            rfc: rfc_number,
            uri: path.display().to_string(),
        });
    }
    let raw = fs::read_to_string(&path)?;
    Ok(RfcDocument::from_raw(rfc_number, &raw, &path.display().to_string()))
}

fn download(rfc: u32, uri: &str) -> Result<String, CorpusError> {
    let agent = ureq::AgentBuilder::new()
        .timeout(std::time::Duration::from_secs(30))
        .build();
    match agent.get(uri).call() {
        Ok(resp) => resp.into_string().map_err(|e| CorpusError::NetworkError {
            rfc,
            detail: e.to_string(),
        }),
        Err(ureq::Error::Status(404, _)) => {
            Err(CorpusError::NotFound { rfc, uri: uri.to_string() })
        }
        Err(e) => Err(CorpusError::NetworkError { rfc, detail: e.to_string() }),
    }
}
