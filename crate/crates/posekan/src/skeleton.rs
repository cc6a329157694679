//! Skeleton files: a joint count and an undirected edge list.
//!
//! ```text
//! # comment
//! joints = 16
//! edge = 0 1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use posekan_core::SkeletonGraph;

use crate::error::{Error, Result};

/// Name accepted wherever a skeleton path is expected, selecting the
/// built-in 16-joint skeleton.
pub const BUILTIN_H36M16: &str = "builtin:h36m16";

pub fn parse_skeleton(text: &str, path: &Path) -> Result<SkeletonGraph> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut joints = None;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let value = value.trim();
        match key.trim() {
            "joints" => {
                let n: usize = value.parse().map_err(|_| err(line_no, format!("bad joint count `{value}`")))?;
                if joints.replace(n).is_some() {
                    return Err(err(line_no, "joint count given twice".into()));
                }
            }
            "edge" => {
                let ends: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(line_no, format!("bad joint index `{t}`"))))
                    .collect::<Result<_>>()?;
                match ends[..] {
                    [a, b] => edges.push((a, b)),
                    _ => return Err(err(line_no, format!("edge needs two joint indices, got `{value}`"))),
                }
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }
    let joints = joints.ok_or_else(|| err(0, "missing `joints = N`".into()))?;
    Ok(SkeletonGraph::new(joints, &edges)?)
}

pub fn load_skeleton(path: &Path) -> Result<SkeletonGraph> {
    if path.as_os_str() == BUILTIN_H36M16 {
        return Ok(SkeletonGraph::h36m16());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_skeleton(&text, path)
}

pub fn format_skeleton(graph: &SkeletonGraph) -> String {
    let mut out = format!("joints = {}\n", graph.joint_count());
    for &(a, b) in graph.edges() {
        writeln!(out, "edge = {a} {b}").expect("writing to a String");
    }
    out
}
