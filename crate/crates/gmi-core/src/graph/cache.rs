//! Versioned binary graph cache.
//!
//! Layout, all integers and floats little-endian:
//! magic `GMIG`, format version u32, node/feature/nnz counts as u64, then the
//! CSR arrays (offsets u64, columns u32, values f64), the dense feature
//! matrix (f64, row-major), optional labels (u32 per node), optional masks
//! (one byte per node per mask), node id strings, and optional class names.
//! Strings are u32-length-prefixed UTF-8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffmath::{CsrMatrix, Matrix};

use super::{Graph, GraphError, NodeMasks};

const MAGIC: &[u8; 4] = b"GMIG";
const VERSION: u32 = 1;

pub fn write_cache(path: &Path, graph: &Graph) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let adj = graph.adjacency();
    let n = graph.n_nodes() as u64;
    let d = graph.n_features() as u64;
    let nnz = adj.nnz() as u64;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&nnz.to_le_bytes())?;
    for &o in adj.offsets() {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &c in adj.indices() {
        w.write_all(&c.to_le_bytes())?;
    }
    for &v in adj.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &f in graph.features().data() {
        w.write_all(&f.to_le_bytes())?;
    }

    match graph.labels() {
        Some(labels) => {
            w.write_all(&[1u8])?;
            for &l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    match graph.masks() {
        Some(masks) => {
            w.write_all(&[1u8])?;
            for mask in [&masks.train, &masks.val, &masks.test] {
                for &b in mask {
                    w.write_all(&[b as u8])?;
                }
            }
        }
        None => w.write_all(&[0u8])?,
    }
    for id in graph.node_ids() {
        write_string(&mut w, id)?;
    }
    match graph.class_names() {
        Some(names) => {
            w.write_all(&[1u8])?;
            w.write_all(&(names.len() as u32).to_le_bytes())?;
            for name in names {
                write_string(&mut w, name)?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Graph, GraphError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| GraphError::Cache {
        detail: "file too short for a header".into(),
    })?;
    if &magic != MAGIC {
        return Err(GraphError::Cache { detail: format!("bad magic {magic:?}") });
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(GraphError::Cache {
            detail: format!("unsupported version {version} (this build reads {VERSION})"),
        });
    }

    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let nnz = read_u64(&mut r)? as usize;
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(read_u64(&mut r)? as usize);
    }
    let mut indices = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        indices.push(read_u32(&mut r)?);
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        values.push(read_f64(&mut r)?);
    }
    let mut feat_data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        feat_data.push(read_f64(&mut r)?);
    }

    let labels = if read_u8(&mut r)? == 1 {
        let mut ls = Vec::with_capacity(n);
        for _ in 0..n {
            ls.push(read_u32(&mut r)?);
        }
        Some(ls)
    } else {
        None
    };
    let masks = if read_u8(&mut r)? == 1 {
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                m.push(read_u8(&mut r)? != 0);
            }
            parts.push(m);
        }
        let test = parts.pop().unwrap();
        let val = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        Some(NodeMasks { train, val, test })
    } else {
        None
    };
    let mut node_ids = Vec::with_capacity(n);
    for _ in 0..n {
        node_ids.push(read_string(&mut r)?);
    }
    let class_names = if read_u8(&mut r)? == 1 {
        let count = read_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(read_string(&mut r)?);
        }
        Some(names)
    } else {
        None
    };

    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(GraphError::Cache { detail: "trailing bytes after cache payload".into() });
    }

    let adjacency = CsrMatrix::new(n, n, offsets, indices, values)
        .map_err(|e| GraphError::Cache { detail: e.to_string() })?;
    let features = Matrix::from_vec(n, d, feat_data)
        .map_err(|e| GraphError::Cache { detail: e.to_string() })?;
    let mut graph = Graph::new(adjacency, features)?.with_node_ids(node_ids)?;
    if let Some(labels) = labels {
        graph = graph.with_labels(labels)?;
    }
    if let Some(masks) = masks {
        graph = graph.with_masks(masks)?;
    }
    if let Some(names) = class_names {
        graph = graph.with_class_names(names)?;
    }
    Ok(graph)
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_string(r: &mut impl Read) -> Result<String, GraphError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf)
        .map_err(|_| GraphError::Cache { detail: "string field is not UTF-8".into() })
}

fn truncated(_: std::io::Error) -> GraphError {
    GraphError::Cache { detail: "truncated file".into() }
}

fn read_u8(r: &mut impl Read) -> Result<u8, GraphError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32, GraphError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, GraphError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, GraphError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}
