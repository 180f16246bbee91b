//! Canonical on-disk dataset format.
//!
//! A dataset directory holds
//!
//! - `meta.json`: `{"num_nodes": .., "feature_dim": .., "num_classes": ..}`
//!   (an optional `"name"` is carried along),
//! - `edges.csv`: one `i,j` pair per line, 0-indexed, either direction,
//! - `features.csv`: one comma-separated row per node,
//! - `labels.csv`: one class index per line.
//!
//! Blank lines are ignored and a first line containing letters is treated
//! as a column header.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use autodiff::Matrix;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty data lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|&(k, l)| !l.is_empty() && !(k == 1 && l.chars().any(|c| c.is_ascii_alphabetic())))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_usize(path: &Path, line: usize, field: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a node or class index, got {field:?}")))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta =
        serde_json::from_str(&read(&meta_path)?).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;

    let edges_path = dir.join("edges.csv");
    let mut edges = Vec::new();
    for (line, text) in data_lines(&read(&edges_path)?) {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(&edges_path, line, "expected `i,j`"));
        };
        let (a, b) = (parse_usize(&edges_path, line, a)?, parse_usize(&edges_path, line, b)?);
        if a >= meta.num_nodes || b >= meta.num_nodes {
            return Err(Error::DatasetMismatch(format!(
                "edge ({a}, {b}) at {}:{line} exceeds num_nodes {}",
                edges_path.display(),
                meta.num_nodes
            )));
        }
        edges.push((a, b));
    }

    let features_path = dir.join("features.csv");
    let mut data = Vec::with_capacity(meta.num_nodes * meta.feature_dim);
    let mut rows = 0;
    for (line, text) in data_lines(&read(&features_path)?) {
        let before = data.len();
        for field in text.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(&features_path, line, format!("bad feature value {field:?}")))?;
            data.push(v);
        }
        if data.len() - before != meta.feature_dim {
            return Err(Error::DatasetMismatch(format!(
                "{}:{line} has {} features, header says {}",
                features_path.display(),
                data.len() - before,
                meta.feature_dim
            )));
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(Error::DatasetMismatch(format!(
            "{} feature rows, header says {} nodes",
            rows, meta.num_nodes
        )));
    }

    let labels_path = dir.join("labels.csv");
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for (line, text) in data_lines(&read(&labels_path)?) {
        labels.push(parse_usize(&labels_path, line, text)?);
    }
    if labels.len() != meta.num_nodes {
        return Err(Error::DatasetMismatch(format!(
            "{} labels, header says {} nodes",
            labels.len(),
            meta.num_nodes
        )));
    }

    let features = Matrix::from_vec(meta.num_nodes, meta.feature_dim, data)?;
    Graph::new(meta.num_nodes, edges, features, labels, meta.num_classes)
}

fn write_file(path: PathBuf, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
}

/// Writes `g` in the canonical format, creating `dir` if needed.
pub fn save_dataset(g: &Graph, dir: impl AsRef<Path>, name: Option<&str>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        num_nodes: g.num_nodes(),
        feature_dim: g.feature_dim(),
        num_classes: g.num_classes(),
        name: name.map(str::to_owned),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(dir.join("meta.json"), |w| writeln!(w, "{json}"))?;
    write_file(dir.join("edges.csv"), |w| {
        g.edges().iter().try_for_each(|(i, j)| writeln!(w, "{i},{j}"))
    })?;
    write_file(dir.join("features.csv"), |w| {
        for r in 0..g.num_nodes() {
            let row = g.features().row(r);
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_file(dir.join("labels.csv"), |w| {
        g.labels().iter().try_for_each(|l| writeln!(w, "{l}"))
    })
}
