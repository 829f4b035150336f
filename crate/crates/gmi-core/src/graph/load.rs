//! Citation-format dataset parsing and split-mask files.
//!
//! Content file: one node per line, `<id> <f_1> ... <f_D> <label>`,
//! whitespace-separated. Cites file: one edge per line, `<src> <dst>`.
//! Node order follows the content file; the label vocabulary is indexed in
//! first-seen order so loads are deterministic without side files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::diffmath::{CsrMatrix, Matrix};

use super::{Graph, GraphError, NodeMasks};

/// A loaded graph plus counters for everything the parser tolerated.
/// Nonzero counters are worth surfacing to users; they are not errors.
#[derive(Debug)]
pub struct LoadReport {
    pub graph: Graph,
    /// Cites lines whose endpoints never appear in the content file.
    pub unknown_endpoint_edges: usize,
    /// Repeated (or reversed-duplicate) cites lines collapsed into one edge.
    pub duplicate_edges: usize,
    /// Cites lines of the form (v, v), dropped.
    pub self_loop_edges: usize,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Loads a citation dataset from its content (nodes) and cites (edges) files.
pub fn load_citation_dataset(
    content_path: &Path,
    cites_path: &Path,
) -> Result<LoadReport, GraphError> {
    let content = fs::read_to_string(content_path)?;

    let mut node_index: HashMap<String, u32> = HashMap::new();
    let mut node_ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut class_index: HashMap<String, u32> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut n_features: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(GraphError::Parse {
                path: path_str(content_path),
                line: lineno,
                detail: format!("expected id, features, label; got {} fields", tokens.len()),
            });
        }
        let id = tokens[0];
        let label = tokens[tokens.len() - 1];
        let feature_tokens = &tokens[1..tokens.len() - 1];
        match n_features {
            None => n_features = Some(feature_tokens.len()),
            Some(d) if d != feature_tokens.len() => {
                return Err(GraphError::Parse {
                    path: path_str(content_path),
                    line: lineno,
                    detail: format!("{} feature values, expected {d}", feature_tokens.len()),
                });
            }
            Some(_) => {}
        }
        if node_index.contains_key(id) {
            return Err(GraphError::DuplicateNode {
                path: path_str(content_path),
                id: id.to_string(),
                line: lineno,
            });
        }
        let mut feats = Vec::with_capacity(feature_tokens.len());
        for tok in feature_tokens {
            let v: f64 = tok.parse().map_err(|_| GraphError::Parse {
                path: path_str(content_path),
                line: lineno,
                detail: format!("non-numeric feature value {tok:?}"),
            })?;
            feats.push(v);
        }
        node_index.insert(id.to_string(), node_ids.len() as u32);
        node_ids.push(id.to_string());
        rows.push(feats);
        let class = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            class_names.len() as u32 - 1
        });
        labels.push(class);
    }

    let n = node_ids.len();
    let cites = fs::read_to_string(cites_path)?;
    let mut unknown_endpoint_edges = 0;
    let mut duplicate_edges = 0;
    let mut self_loop_edges = 0;
    let mut seen = std::collections::HashSet::new();
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    for (lineno, line) in cites.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(GraphError::Parse {
                path: path_str(cites_path),
                line: lineno,
                detail: format!("expected two node ids, got {} fields", tokens.len()),
            });
        }
        let (src, dst) = (node_index.get(tokens[0]), node_index.get(tokens[1]));
        let (Some(&src), Some(&dst)) = (src, dst) else {
            unknown_endpoint_edges += 1;
            continue;
        };
        if src == dst {
            self_loop_edges += 1;
            continue;
        }
        let key = (src.min(dst), src.max(dst));
        if !seen.insert(key) {
            duplicate_edges += 1;
            continue;
        }
        triplets.push((key.0, key.1, 1.0));
        triplets.push((key.1, key.0, 1.0));
    }

    let features = Matrix::from_rows(&rows)
        .map_err(|e| GraphError::Invalid { detail: e.to_string() })?;
    let features = if n == 0 { Matrix::zeros(0, 0) } else { features };
    let adjacency = CsrMatrix::from_triplets(n, n, triplets)
        .map_err(|e| GraphError::Invalid { detail: e.to_string() })?;
    let graph = Graph::new(adjacency, features)?
        .with_labels(labels)?
        .with_node_ids(node_ids)?
        .with_class_names(class_names)?;
    Ok(LoadReport { graph, unknown_endpoint_edges, duplicate_edges, self_loop_edges })
}

/// Reads a node-split file: one token per line, `train`, `val`, `test`, or
/// `none`, in node order.
pub fn read_split_masks(path: &Path, n_nodes: usize) -> Result<NodeMasks, GraphError> {
    let text = fs::read_to_string(path)?;
    let mut masks = NodeMasks {
        train: Vec::with_capacity(n_nodes),
        val: Vec::with_capacity(n_nodes),
        test: Vec::with_capacity(n_nodes),
    };
    for (lineno, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let (tr, va, te) = match token {
            "train" => (true, false, false),
            "val" => (false, true, false),
            "test" => (false, false, true),
            "none" => (false, false, false),
            other => {
                return Err(GraphError::Parse {
                    path: path_str(path),
                    line: lineno + 1,
                    detail: format!("unknown split token {other:?}"),
                });
            }
        };
        masks.train.push(tr);
        masks.val.push(va);
        masks.test.push(te);
    }
    if masks.train.len() != n_nodes {
        return Err(GraphError::Invalid {
            detail: format!("split file has {} rows for {} nodes", masks.train.len(), n_nodes),
        });
    }
    Ok(masks)
}

pub fn write_split_masks(path: &Path, masks: &NodeMasks) -> Result<(), GraphError> {
    let mut out = String::new();
    for i in 0..masks.train.len() {
        let token = if masks.train[i] {
            "train"
        } else if masks.val[i] {
            "val"
        } else if masks.test[i] {
            "test"
        } else {
            "none"
        };
        out.push_str(token);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn three_node_fixture_matches_hand_built_csr() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(
            dir.path(),
            "toy.content",
            "A\t1\t0\tml\nB\t0\t1\tdb\nC\t1\t1\tml\n",
        );
        let cites = write_file(dir.path(), "toy.cites", "A\tB\nB\tC\n");
        let report = load_citation_dataset(&content, &cites).unwrap();
        let g = &report.graph;
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.adjacency().offsets(), &[0, 1, 3, 4]);
        assert_eq!(g.adjacency().indices(), &[1, 0, 2, 1]);
        assert_eq!(g.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(g.class_names().unwrap(), &["ml", "db"]);
        assert_eq!(g.node_ids(), &["A", "B", "C"]);
        assert_eq!(report.unknown_endpoint_edges, 0);
    }

    #[test]
    fn empty_cites_file_gives_edgeless_graph() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(dir.path(), "n.content", "A\t1\tx\nB\t0\tx\nC\t1\ty\n");
        let cites = write_file(dir.path(), "n.cites", "");
        let report = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(report.graph.n_nodes(), 3);
        assert_eq!(report.graph.n_edges(), 0);
    }

    #[test]
    fn tolerated_edge_defects_are_counted_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(dir.path(), "t.content", "A\t1\tx\nB\t0\ty\n");
        let cites = write_file(
            dir.path(),
            "t.cites",
            "A\tB\nB\tA\nA\tA\nA\tMISSING\n",
        );
        let report = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(report.graph.n_edges(), 1);
        assert_eq!(report.duplicate_edges, 1);
        assert_eq!(report.self_loop_edges, 1);
        assert_eq!(report.unknown_endpoint_edges, 1);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(dir.path(), "bad.content", "A\t1\tx\nB\toops\ty\n");
        let cites = write_file(dir.path(), "bad.cites", "");
        let err = load_citation_dataset(&content, &cites).unwrap_err().to_string();
        assert!(err.contains(":2:"), "missing line number: {err}");
        assert!(err.contains("oops"), "missing offending token: {err}");
    }

    #[test]
    fn inconsistent_feature_width_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(dir.path(), "w.content", "A\t1\t0\tx\nB\t1\ty\n");
        let cites = write_file(dir.path(), "w.cites", "");
        let err = load_citation_dataset(&content, &cites).unwrap_err().to_string();
        assert!(err.contains("expected 2"), "unexpected message: {err}");
    }

    #[test]
    fn duplicate_node_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let content = write_file(dir.path(), "d.content", "A\t1\tx\nA\t0\ty\n");
        let cites = write_file(dir.path(), "d.cites", "");
        assert!(matches!(
            load_citation_dataset(&content, &cites),
            Err(GraphError::DuplicateNode { line: 2, .. })
        ));
    }

    #[test]
    fn split_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let masks = NodeMasks {
            train: vec![true, false, false, false],
            val: vec![false, true, false, false],
            test: vec![false, false, true, false],
        };
        let path = dir.path().join("splits.txt");
        write_split_masks(&path, &masks).unwrap();
        let back = read_split_masks(&path, 4).unwrap();
        assert_eq!(back, masks);
    }

    #[test]
    fn split_masks_reject_unknown_tokens_and_bad_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "s.txt", "train\nvalidation\n");
        let err = read_split_masks(&path, 2).unwrap_err().to_string();
        assert!(err.contains("validation"));

        let path = write_file(dir.path(), "s2.txt", "train\n");
        assert!(read_split_masks(&path, 2).is_err());
    }
}
