//! Dataset resolution and the text formats the commands exchange.
//!
//! `--dataset` takes a path prefix: `<prefix>.bin` (binary cache) wins over
//! `<prefix>.content` + `<prefix>.cites` (citation text format, with an
//! optional `<prefix>.splits`). Pointing at a directory uses the directory
//! name as the prefix inside it, so `--dataset data/cora` finds
//! `data/cora/cora.content`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gmi_core::eval::EvalReport;
use gmi_core::graph::{self, Graph};
use gmi_core::Matrix;

use crate::failure::{from_graph, CliResult, Failure};

pub struct Loaded {
    pub graph: Graph,
    pub source: String,
    /// Oddities worth surfacing (duplicate edges, dropped self-loops).
    pub notes: Vec<String>,
}

fn resolve_prefix(spec: &str) -> PathBuf {
    let path = Path::new(spec);
    match (path.is_dir(), path.file_name()) {
        (true, Some(name)) => path.join(name),
        _ => path.to_path_buf(),
    }
}

pub fn load(spec: &str) -> CliResult<Loaded> {
    let prefix = resolve_prefix(spec);
    let cache = prefix.with_extension("bin");
    if cache.is_file() {
        let graph = graph::read_cache(&cache)
            .map_err(from_graph)
            .map_err(|f| f.context("reading dataset cache"))?;
        return Ok(Loaded {
            graph,
            source: format!("cache {}", cache.display()),
            notes: Vec::new(),
        });
    }

    let content = prefix.with_extension("content");
    let cites = prefix.with_extension("cites");
    if !content.is_file() {
        return Err(Failure::data(anyhow!(
            "dataset {spec}: neither {} nor {} exists",
            cache.display(),
            content.display()
        )));
    }
    if !cites.is_file() {
        return Err(Failure::data(anyhow!("dataset {spec}: missing {}", cites.display())));
    }
    let report = graph::load_citation_dataset(&content, &cites).map_err(from_graph)?;
    let mut graph = report.graph;
    let mut notes = Vec::new();
    if report.duplicate_edges > 0 {
        notes.push(format!("{} duplicate edges collapsed", report.duplicate_edges));
    }
    if report.self_loop_edges > 0 {
        notes.push(format!("{} self-loops dropped", report.self_loop_edges));
    }
    if report.unknown_endpoint_edges > 0 {
        notes.push(format!(
            "{} edges referenced unknown node ids",
            report.unknown_endpoint_edges
        ));
    }

    let splits = prefix.with_extension("splits");
    let mut source = format!("{} + {}", content.display(), cites.display());
    if splits.is_file() {
        let masks = graph::read_split_masks(&splits, graph.n_nodes())
            .map_err(from_graph)
            .map_err(|f| f.context("reading split masks"))?;
        graph = graph.with_masks(masks).map_err(from_graph)?;
        source.push_str(" + ");
        source.push_str(&splits.display().to_string());
    }
    Ok(Loaded { graph, source, notes })
}

/// One line per node: id, a tab, then the embedding values space-separated.
/// Values use the shortest representation that parses back to the same f64.
pub fn write_embeddings(path: &Path, ids: &[String], embeddings: &Matrix) -> CliResult<()> {
    let mut out = String::new();
    for i in 0..embeddings.rows() {
        out.push_str(&ids[i]);
        for (c, v) in embeddings.row(i).iter().enumerate() {
            out.push(if c == 0 { '\t' } else { ' ' });
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

/// Reads an embeddings file back, insisting the node ids line up with the
/// dataset so silently misaligned evaluations are impossible.
pub fn read_embeddings(path: &Path, expected_ids: &[String]) -> CliResult<Matrix> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading embeddings {}", path.display()))
        .map_err(Failure::data)?;
    let mut data: Vec<f64> = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let at = || format!("{}:{}", path.display(), lineno + 1);
        if line.is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Failure::data(anyhow!("{}: expected `id<TAB>values`", at())))?;
        if rows >= expected_ids.len() {
            return Err(Failure::data(anyhow!(
                "{}: more embeddings than the dataset's {} nodes",
                at(),
                expected_ids.len()
            )));
        }
        if id != expected_ids[rows] {
            return Err(Failure::data(anyhow!(
                "{}: node id {id:?} does not match the dataset's {:?}",
                at(),
                expected_ids[rows]
            )));
        }
        let mut count = 0usize;
        for token in values.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|e| Failure::data(anyhow!("{}: bad value {token:?}: {e}", at())))?;
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Failure::data(anyhow!(
                    "{}: {count} values but earlier rows had {c}",
                    at()
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != expected_ids.len() {
        return Err(Failure::data(anyhow!(
            "{}: {rows} embeddings for {} dataset nodes",
            path.display(),
            expected_ids.len()
        )));
    }
    let cols = cols.unwrap_or(0);
    Matrix::from_vec(rows, cols, data).map_err(Failure::data)
}

/// Writes report.txt and report.ndjson. The on-disk copies zero the wall
/// clock so re-running a command from its resolved config reproduces every
/// output byte for byte; the timed copy goes to stdout instead.
pub fn write_report(report: &EvalReport, dir: &Path) -> CliResult<()> {
    let mut stable = report.clone();
    stable.wall_clock_seconds = 0.0;
    fs::write(dir.join("report.txt"), stable.text())
        .with_context(|| format!("writing report into {}", dir.display()))
        .map_err(Failure::data)?;
    fs::write(dir.join("report.ndjson"), stable.ndjson())
        .with_context(|| format!("writing report into {}", dir.display()))
        .map_err(Failure::data)
}
