//! Dataset files, text and binary. Byte-level layouts are in `docs/FORMATS.md`.

use std::fmt::Write as _;
use std::path::Path;

use posekan_core::data::{Dataset, NormalizationMeta, PoseSample};
use posekan_core::{Matrix, SkeletonGraph};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PKDS";
pub const BINARY_VERSION: u32 = 1;

/// A dataset together with the file-level details the core type does not keep.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub ids: Vec<String>,
    /// False when the file carried no `y3d` fields; targets are then zero.
    pub has_ground_truth: bool,
}

impl LoadedDataset {
    /// Wraps an in-memory dataset, numbering samples from zero.
    pub fn from_dataset(dataset: Dataset) -> Self {
        let ids = (0..dataset.len()).map(|i| i.to_string()).collect();
        Self { dataset, ids, has_ground_truth: true }
    }

    pub fn require_ground_truth(&self) -> Result<&Dataset> {
        if self.has_ground_truth {
            Ok(&self.dataset)
        } else {
            Err(posekan_core::Error::MissingGroundTruth.into())
        }
    }
}

pub fn load_dataset(path: &Path, skeleton: &SkeletonGraph) -> Result<LoadedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return decode_binary(&bytes, path, skeleton);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::BadMagic { path: path.to_path_buf(), expected: "dataset" })?;
    parse_text(&text, path, skeleton)
}

struct Record {
    id: String,
    action: Option<String>,
    subject: Option<String>,
    x2d: Vec<f64>,
    y3d: Option<Vec<f64>>,
}

fn parse_values(field: &str, tag: &str) -> std::result::Result<Vec<f64>, String> {
    let rest = field.trim().strip_prefix(tag).ok_or_else(|| format!("expected `{tag}` field, got `{}`", field.trim()))?;
    rest.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}` in {tag}"))).collect()
}

fn parse_record(line: &str) -> std::result::Result<Record, String> {
    let mut fields = line.split('|');
    let head = fields.next().unwrap_or("");
    let mut words = head.split_whitespace();
    if words.next() != Some("sample") {
        return Err("record must start with `sample <id>`".into());
    }
    let id = words.next().ok_or("missing sample id")?.to_string();
    let (mut action, mut subject) = (None, None);
    for w in words {
        match w.split_once('=') {
            Some(("action", v)) => action = Some(v.to_string()),
            Some(("subject", v)) => subject = Some(v.to_string()),
            _ => return Err(format!("unexpected attribute `{w}`")),
        }
    }
    let x2d = parse_values(fields.next().ok_or("missing x2d field")?, "x2d:")?;
    let y3d = fields.next().map(|f| parse_values(f, "y3d:")).transpose()?;
    if fields.next().is_some() {
        return Err("too many `|` separated fields".into());
    }
    Ok(Record { id, action, subject, x2d, y3d })
}

fn parse_meta(line: &str) -> std::result::Result<NormalizationMeta, String> {
    let (mut w, mut h) = (None, None);
    for word in line.split_whitespace().skip(1) {
        let parse = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}` in meta"));
        match word.split_once('=') {
            Some(("width", v)) => w = Some(parse(v)?),
            Some(("height", v)) => h = Some(parse(v)?),
            _ => return Err(format!("unexpected meta attribute `{word}`")),
        }
    }
    Ok(NormalizationMeta { image_width: w.ok_or("meta needs width")?, image_height: h.ok_or("meta needs height")? })
}

pub fn parse_text(text: &str, path: &Path, skeleton: &SkeletonGraph) -> Result<LoadedDataset> {
    let j = skeleton.joint_count();
    let mut meta = None;
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    let mut with_gt = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("meta ") {
            meta = Some(parse_meta(line).map_err(|message| Error::Parse { path: path.to_path_buf(), line: i + 1, message })?);
            continue;
        }
        let record_no = samples.len();
        let bad =
            |message: String| Error::Record { path: path.to_path_buf(), record: record_no, message: format!("{message} (line {})", i + 1) };
        let rec = parse_record(line).map_err(bad)?;
        if rec.x2d.len() % 2 != 0 || rec.y3d.as_ref().is_some_and(|y| y.len() % 3 != 0) {
            return Err(bad("x2d needs 2 values and y3d 3 values per joint".into()));
        }
        for n in [Some(rec.x2d.len() / 2), rec.y3d.as_ref().map(|y| y.len() / 3)].into_iter().flatten() {
            if n != j {
                return Err(posekan_core::Error::JointCountMismatch { expected: j, actual: n }.into());
            }
        }
        if *with_gt.get_or_insert(rec.y3d.is_some()) != rec.y3d.is_some() {
            return Err(bad("either every record or none carries y3d".into()));
        }
        let target = rec.y3d.unwrap_or_else(|| vec![0.0; 3 * j]);
        let mut sample = PoseSample::new(Matrix::from_vec(j, 2, rec.x2d), Matrix::from_vec(j, 3, target));
        sample.action = rec.action;
        sample.subject = rec.subject;
        samples.push(sample);
        ids.push(rec.id);
    }
    let dataset = Dataset::new(samples, skeleton.clone(), meta)?;
    Ok(LoadedDataset { dataset, ids, has_ground_truth: with_gt.unwrap_or(true) })
}

/// Text form; numbers use the shortest representation that parses back exactly.
pub fn format_text(data: &LoadedDataset) -> String {
    let mut out = String::from("# posekan dataset v1\n");
    if let Some(m) = data.dataset.normalization() {
        writeln!(out, "meta width={} height={}", m.image_width, m.image_height).unwrap();
    }
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    for (s, id) in data.dataset.samples().iter().zip(&data.ids) {
        write!(out, "sample {id}").unwrap();
        if let Some(a) = &s.action {
            write!(out, " action={a}").unwrap();
        }
        if let Some(sub) = &s.subject {
            write!(out, " subject={sub}").unwrap();
        }
        write!(out, " | x2d: {}", join(s.input_2d.as_slice())).unwrap();
        if data.has_ground_truth {
            write!(out, " | y3d: {}", join(s.target_3d.as_slice())).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn encode_binary(dataset: &Dataset) -> Vec<u8> {
    let j = dataset.skeleton().joint_count();
    let mut out = Vec::with_capacity(16 + dataset.len() * j * 5 * 8);
    out.extend_from_slice(BINARY_MAGIC);
    for v in [BINARY_VERSION, dataset.len() as u32, j as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in dataset.samples() {
        for v in s.input_2d.as_slice().iter().chain(s.target_3d.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8], path: &Path, skeleton: &SkeletonGraph) -> Result<LoadedDataset> {
    let truncated = || Error::Truncated { path: path.to_path_buf() };
    let u32_at =
        |off: usize| -> Result<u32> { Ok(u32::from_le_bytes(bytes.get(off..off + 4).ok_or_else(truncated)?.try_into().expect("4 bytes"))) };
    if !bytes.starts_with(BINARY_MAGIC) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "PKDS dataset" });
    }
    let version = u32_at(4)?;
    if version != BINARY_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, supported: BINARY_VERSION });
    }
    let (n, j) = (u32_at(8)? as usize, u32_at(12)? as usize);
    if j != skeleton.joint_count() {
        return Err(posekan_core::Error::JointCountMismatch { expected: skeleton.joint_count(), actual: j }.into());
    }
    let body = &bytes[16..];
    if body.len() != n * j * 5 * 8 {
        return Err(truncated());
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let samples = values
        .chunks_exact(j * 5)
        .map(|v| PoseSample::new(Matrix::from_vec(j, 2, v[..2 * j].to_vec()), Matrix::from_vec(j, 3, v[2 * j..].to_vec())))
        .collect();
    let dataset = Dataset::new(samples, skeleton.clone(), None)?;
    Ok(LoadedDataset::from_dataset(dataset))
}

pub fn save_dataset(path: &Path, data: &LoadedDataset, binary: bool) -> Result<()> {
    let bytes = if binary { encode_binary(&data.dataset) } else { format_text(data).into_bytes() };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
