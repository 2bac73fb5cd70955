//! Result directories: one histogram file per node plus a CSV manifest.
//!
//! `manifest.csv` has the columns `node_id,parent_id,level,groups,file`; the root has
//! an empty `parent_id`. `run.json` records the seed and budget split.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consistency::{audit, AuditNode, Cell, Violation};
use crate::error::{Error, Result};
use crate::format::{read_raw, write_count, Representation};
use crate::hierarchy::HierarchyTree;
use crate::hist::CountHistogram;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub algorithm: String,
    pub kinds: Vec<String>,
    pub merge: String,
    pub size_bound: u64,
    pub bound_epsilon: f64,
    pub level_epsilons: Vec<f64>,
    pub total_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub node_id: String,
    pub parent_id: String,
    pub level: usize,
    pub groups: u64,
    pub file: String,
}

/// Writes one count histogram per node of `tree`.
pub fn write_release(
    dir: &Path,
    tree: &HierarchyTree,
    released: &[CountHistogram],
    info: &RunInfo,
) -> Result<()> {
    if released.len() != tree.len() {
        return Err(Error::Structure(format!("{} histograms for {} nodes", released.len(), tree.len())));
    }
    std::fs::create_dir_all(dir)?;
    let mut manifest = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    for (i, (node, h)) in tree.nodes().iter().zip(released).enumerate() {
        let file = format!("node_{i}.coc");
        write_count(BufWriter::new(File::create(dir.join(&file))?), h)?;
        manifest.serialize(ManifestRow {
            node_id: node.id.clone(),
            parent_id: node.parent.map(|p| tree.node(p).id.clone()).unwrap_or_default(),
            level: node.level,
            groups: node.groups,
            file,
        })?;
    }
    manifest.flush()?;
    let f = BufWriter::new(File::create(dir.join(RUN_FILE))?);
    serde_json::to_writer_pretty(f, info)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_path(dir.join(MANIFEST_FILE))?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Reads a result directory without enforcing any invariant, for auditing.
pub fn read_audit_nodes(dir: &Path) -> Result<Vec<AuditNode>> {
    let rows = read_manifest(dir)?;
    let index: HashMap<&str, usize> = rows.iter().enumerate().map(|(i, r)| (r.node_id.as_str(), i)).collect();
    let manifest: PathBuf = dir.join(MANIFEST_FILE);
    let mut nodes = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let parent = if row.parent_id.is_empty() {
            None
        } else {
            Some(*index.get(row.parent_id.as_str()).ok_or_else(|| Error::MalformedRow {
                path: manifest.clone(),
                line: i as u64 + 2,
                reason: format!("unknown parent `{}`", row.parent_id),
            })?)
        };
        let raw = read_raw(BufReader::new(File::open(dir.join(&row.file))?))?;
        if raw.representation != Representation::Count {
            return Err(Error::Format(format!("{} is not a count histogram", row.file)));
        }
        nodes.push(AuditNode {
            id: row.node_id.clone(),
            parent,
            groups: row.groups,
            cells: raw.values.iter().map(|v| Cell::parse(v)).collect(),
        });
    }
    Ok(nodes)
}

/// Audits a result directory.
pub fn check_release(dir: &Path) -> Result<Vec<Violation>> {
    Ok(audit(&read_audit_nodes(dir)?))
}

/// Released histograms keyed by node id; fails on any invalid value.
pub fn read_release(dir: &Path) -> Result<Vec<(ManifestRow, CountHistogram)>> {
    read_manifest(dir)?
        .into_iter()
        .map(|row| {
            let raw = read_raw(BufReader::new(File::open(dir.join(&row.file))?))?;
            let h = CountHistogram::new(raw.to_u64()?);
            Ok((row, h))
        })
        .collect()
}
