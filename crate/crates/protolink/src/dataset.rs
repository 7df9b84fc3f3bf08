//! Training triples: header field + description + knowledge-base entity.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RfcDocument;
use crate::diagram::{HeaderDiagram, HeaderField};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown label {label:?} for field key {key}")]
    UnknownLabel { label: String, key: String },
    #[error("annotation {key} matches no parsed field")]
    DanglingAnnotation { key: String },
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("need at least {k} samples for {k} folds, have {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The Protocol Knowledge Base: declared entities plus the active subset
/// used as the classifier label space. Active order fixes class indices.
#[derive(Debug, Clone)]
pub struct PkbSchema {
    pub entities: Vec<String>,
    pub active: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaRecord {
    name: String,
    active: bool,
}

impl PkbSchema {
    pub fn new(entries: Vec<(String, bool)>) -> Self {
        let entities: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
        let active = entries.into_iter().filter(|(_, a)| *a).map(|(n, _)| n).collect();
        PkbSchema { entities, active }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.active.iter().position(|l| l == label)
    }

    pub fn num_classes(&self) -> usize {
        self.active.len()
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SchemaRecord = serde_json::from_str(&line)
                .map_err(|e| DatasetError::ParseError { line: i + 1, detail: e.to_string() })?;
            entries.push((rec.name, rec.active));
        }
        Ok(PkbSchema::new(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut out = fs::File::create(path)?;
        for name in &self.entities {
            let rec = SchemaRecord {
                name: name.clone(),
                active: self.active.contains(name),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("schema record"))?;
        }
        Ok(())
    }
}

/// One training triple. Keys `rfc`/`diagram`/`offset` identify the parsed
/// field the annotation referred to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub rfc: u32,
    pub diagram: usize,
    pub offset: usize,
    pub field: String,
    pub description: String,
    pub label: String,
}

/// Field-key annotation: (rfc, diagram, offset) -> label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub rfc: u32,
    pub diagram: usize,
    pub offset: usize,
    pub label: String,
}

fn normalize_tokens(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            toks.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    toks
}

fn looks_like_diagram_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('+') || t.starts_with('|')
}

fn is_caption_line(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || c == ' ')
}

/// Blank-line-separated prose blocks after a line index; diagram rows and
/// bit-index captions never join a paragraph.
fn paragraphs_after(doc: &RfcDocument, after_line: usize, window: usize) -> Vec<String> {
    let mut paras = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in doc.lines.iter().skip(after_line + 1) {
        let breaking =
            line.trim().is_empty() || looks_like_diagram_line(line) || is_caption_line(line);
        if breaking {
            if !cur.is_empty() {
                paras.push(cur.join(" "));
                cur.clear();
                if paras.len() >= window {
                    return paras;
                }
            }
        } else {
            cur.push(line.trim());
        }
    }
    if !cur.is_empty() && paras.len() < window {
        paras.push(cur.join(" "));
    }
    paras
}

/// Finds the description paragraph for a parsed field: the first paragraph
/// within `window` paragraphs after the diagram whose leading tokens match
/// the field-name tokens (exact or prefix, per token); falls back to the
/// nearest paragraph containing the name as a case-insensitive substring;
/// returns an empty string when nothing matches.
pub fn link_description(doc: &RfcDocument, diagram: &HeaderDiagram, field: &HeaderField, window: usize) -> String {
    let paras = paragraphs_after(doc, diagram.end_line, window);
    let name_toks = normalize_tokens(&field.name);
    if !name_toks.is_empty() {
        for p in &paras {
            let p_toks = normalize_tokens(p);
            if p_toks.len() >= name_toks.len()
                && name_toks
                    .iter()
                    .zip(&p_toks)
                    .all(|(ft, pt)| pt == ft || pt.starts_with(ft.as_str()))
            {
                return p.clone();
            }
        }
    }
    let lower = field.name.to_lowercase();
    if !lower.trim().is_empty() {
        for p in &paras {
            if p.to_lowercase().contains(&lower) {
                return p.clone();
            }
        }
    }
    String::new()
}

/// A parsed field together with its linked description text (possibly empty).
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub field: HeaderField,
    pub description: String,
}

/// Builds triples from an annotated field catalog. Annotated fields with an
/// empty description are dropped; labels must name an active entity and
/// every annotation key must match a field.
pub fn build_samples(
    catalog: &[CatalogEntry],
    annotations: &[Annotation],
    schema: &PkbSchema,
) -> Result<Vec<Sample>, DatasetError> {
    let mut by_key: BTreeMap<(u32, usize, usize), &CatalogEntry> = BTreeMap::new();
    for e in catalog {
        by_key.insert((e.field.rfc_number, e.field.diagram_index, e.field.bit_offset), e);
    }
    let mut samples = Vec::new();
    for ann in annotations {
        let key = format!("{}/{}/{}", ann.rfc, ann.diagram, ann.offset);
        if schema.class_index(&ann.label).is_none() {
            return Err(DatasetError::UnknownLabel { label: ann.label.clone(), key });
        }
        let entry = by_key
            .get(&(ann.rfc, ann.diagram, ann.offset))
            .ok_or(DatasetError::DanglingAnnotation { key })?;
        if entry.description.is_empty() {
            continue;
        }
        samples.push(Sample {
            rfc: entry.field.rfc_number,
            diagram: entry.field.diagram_index,
            offset: entry.field.bit_offset,
            field: entry.field.name.clone(),
            description: entry.description.clone(),
            label: ann.label.clone(),
        });
    }
    Ok(samples)
}

/// Disjoint fold assignment for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub folds: Vec<Vec<usize>>,
}

/// Stratified folds: within each label the indices are shuffled by a seeded
/// PRNG, then all samples are dealt round-robin with one continuing cursor,
/// so per-label and total fold sizes each differ by at most one.
pub fn make_folds(
    n: usize,
    k: usize,
    seed: u64,
    labels: &[String],
) -> Result<DatasetSplit, DatasetError> {
    assert_eq!(labels.len(), n, "labels must cover all samples");
    if k < 2 || n < k {
        return Err(DatasetError::TooFewSamples { n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l.as_str()).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for (_, mut idxs) in by_label {
        idxs.shuffle(&mut rng);
        for i in idxs {
            folds[cursor % k].push(i);
            cursor += 1;
        }
    }
    Ok(DatasetSplit { folds })
}

pub fn save_samples(samples: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let mut out = fs::File::create(path)?;
    for s in samples {
        writeln!(out, "{}", serde_json::to_string(s).expect("sample record"))?;
    }
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| DatasetError::ParseError { line: i + 1, detail: e.to_string() })?;
        samples.push(s);
    }
    Ok(samples)
}

pub fn save_annotations(anns: &[Annotation], path: &Path) -> Result<(), DatasetError> {
    let mut out = fs::File::create(path)?;
    for a in anns {
        writeln!(out, "{}", serde_json::to_string(a).expect("annotation record"))?;
    }
    Ok(())
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut anns = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(&line)
            .map_err(|e| DatasetError::ParseError { line: i + 1, detail: e.to_string() })?;
        anns.push(a);
    }
    Ok(anns)
}

/// The bundled knowledge-base schema: twelve declared entities of which nine
/// are active classification targets.
pub fn bundled_schema() -> PkbSchema {
    PkbSchema::new(vec![
        ("Identifier-label".into(), true),
        ("Length".into(), true),
        ("Data".into(), true),
        ("Boolean".into(), true),
        ("Identifier-address".into(), true),
        ("Enum".into(), true),
        ("Version Number".into(), true),
        ("Reserved".into(), true),
        ("Checksum".into(), true),
        ("Timestamp".into(), false),
        ("Pointer".into(), false),
        ("Padding".into(), false),
    ])
}
