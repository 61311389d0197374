//! On-disk dataset formats.
//!
//! A dataset is described by a JSON manifest naming five files (paths are
//! resolved relative to the manifest's directory):
//!
//! - `features`: `USEF` magic, little-endian `u32` N and d, then N*d
//!   little-endian `f32` values, row-major.
//! - `labels`: TSV `instance_index<TAB>leaf_name`, one row per instance.
//! - `taxonomy`: TSV `child_name<TAB>parent_name` edge list.
//! - `attributes`: one attribute name per line.
//! - `class_attributes`: TSV `class_name<TAB>attr_name<TAB>{0|1}`; omitted
//!   pairs are 0.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AttributeTable, Dataset, NodeId, Taxonomy};
use crate::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"USEF";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub taxonomy: PathBuf,
    pub attributes: PathBuf,
    pub class_attributes: PathBuf,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            features: "features.bin".into(),
            labels: "labels.tsv".into(),
            taxonomy: "taxonomy.tsv".into(),
            attributes: "attributes.txt".into(),
            class_attributes: "class_attributes.tsv".into(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn tsv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r').split('\t').collect()))
}

/// Decodes a `USEF` feature block into an `N x d` matrix.
pub fn decode_features(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 12 || &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::Format("feature file lacks USEF magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("feature header overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "feature header declares {n}x{d} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n, d), values).expect("shape checked above"))
}

/// Encodes an `N x d` matrix as a `USEF` block (values narrowed to `f32`).
pub fn encode_features(features: &Array2<f64>) -> Vec<u8> {
    let (n, d) = features.dim();
    let mut out = Vec::with_capacity(12 + 4 * n * d);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn parse_taxonomy(text: &str) -> Result<Taxonomy> {
    let mut edges = Vec::new();
    for (line, fields) in tsv_lines(text) {
        if fields.len() != 2 {
            return Err(Error::Format(format!(
                "taxonomy line {line}: expected child<TAB>parent"
            )));
        }
        edges.push((fields[0].to_string(), fields[1].to_string()));
    }
    Taxonomy::from_edges(edges)
}

pub fn parse_attributes(
    names_text: &str,
    class_text: &str,
    taxonomy: &Taxonomy,
) -> Result<AttributeTable> {
    let names: Vec<String> = names_text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let mut labels = Array2::<u8>::zeros((taxonomy.num_leaves(), names.len()));
    let mut seen = HashSet::new();
    for (line, fields) in tsv_lines(class_text) {
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "class attribute line {line}: expected class<TAB>attribute<TAB>value"
            )));
        }
        let class = taxonomy.id_of(fields[0])?;
        if !taxonomy.is_leaf(class) {
            return Err(Error::Validation(format!(
                "class attribute line {line}: {} is a supercategory",
                fields[0]
            )));
        }
        let attr = names.iter().position(|n| n == fields[1]).ok_or_else(|| {
            Error::Validation(format!(
                "class attribute line {line}: unknown attribute {}",
                fields[1]
            ))
        })?;
        let value = match fields[2].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Validation(format!(
                    "class attribute line {line}: value {other:?} outside {{0,1}}"
                )))
            }
        };
        if !seen.insert((class, attr)) {
            return Err(Error::Validation(format!(
                "class attribute line {line}: duplicate pair ({}, {})",
                fields[0], fields[1]
            )));
        }
        labels[[class.index(), attr]] = value;
    }
    AttributeTable::new(names, labels)
}

pub fn parse_labels(text: &str, n: usize, taxonomy: &Taxonomy) -> Result<Vec<NodeId>> {
    let mut labels: Vec<Option<NodeId>> = vec![None; n];
    let mut rows = 0usize;
    for (line, fields) in tsv_lines(text) {
        rows += 1;
        if fields.len() != 2 {
            return Err(Error::Format(format!(
                "labels line {line}: expected index<TAB>leaf_name"
            )));
        }
        let idx: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("labels line {line}: bad index {:?}", fields[0])))?;
        if idx >= n {
            return Err(Error::DimensionMismatch(format!(
                "labels line {line}: index {idx} but feature file has {n} rows"
            )));
        }
        let id = taxonomy.id_of(fields[1])?;
        if !taxonomy.is_leaf(id) {
            return Err(Error::Validation(format!(
                "labels line {line}: {} is not a leaf category",
                fields[1]
            )));
        }
        if labels[idx].replace(id).is_some() {
            return Err(Error::Validation(format!(
                "labels line {line}: duplicate index {idx}"
            )));
        }
    }
    if rows != n {
        return Err(Error::DimensionMismatch(format!(
            "feature file has {n} rows but labels file has {rows}"
        )));
    }
    Ok(labels
        .into_iter()
        .map(|l| l.expect("all indices filled"))
        .collect())
}

/// Loads and validates the dataset described by a JSON manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = serde_json::from_str(&read_text(manifest_path)?)
        .map_err(|e| Error::Format(format!("manifest {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| base.join(p);

    let features_path = resolve(&manifest.features);
    let features =
        decode_features(&fs::read(&features_path).map_err(|e| Error::io(&features_path, e))?)?;
    let taxonomy = parse_taxonomy(&read_text(&resolve(&manifest.taxonomy))?)?;
    let attributes = parse_attributes(
        &read_text(&resolve(&manifest.attributes))?,
        &read_text(&resolve(&manifest.class_attributes))?,
        &taxonomy,
    )?;
    let labels = parse_labels(
        &read_text(&resolve(&manifest.labels))?,
        features.nrows(),
        &taxonomy,
    )?;
    Dataset::new(features, labels, taxonomy, attributes)
}

/// Writes the dataset files plus `manifest.json` into `dir`; returns the
/// manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest::default();
    let taxonomy = dataset.taxonomy();

    write_file(
        &dir.join(&manifest.features),
        encode_features(dataset.features()),
    )?;

    let mut labels = String::new();
    for (i, y) in dataset.labels().iter().enumerate() {
        labels.push_str(&format!("{i}\t{}\n", taxonomy.name(*y)?));
    }
    write_file(&dir.join(&manifest.labels), labels)?;

    let mut edges = String::new();
    for (child, parent) in taxonomy.edges() {
        edges.push_str(&format!("{child}\t{parent}\n"));
    }
    write_file(&dir.join(&manifest.taxonomy), edges)?;

    let attrs = dataset.attributes();
    let mut names = String::new();
    for n in attrs.names() {
        names.push_str(n);
        names.push('\n');
    }
    write_file(&dir.join(&manifest.attributes), names)?;

    let mut class_attrs = String::new();
    for leaf in taxonomy.leaf_ids() {
        for a in attrs.present(leaf.index()) {
            class_attrs.push_str(&format!(
                "{}\t{}\t1\n",
                taxonomy.name(leaf)?,
                attrs.names()[a]
            ));
        }
    }
    write_file(&dir.join(&manifest.class_attributes), class_attrs)?;

    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path, json)?;
    Ok(manifest_path)
}
