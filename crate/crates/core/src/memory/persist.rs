//! Snapshot layout, one directory per store:
//!
//! * `records.jsonl` - one JSON record per line, UTF-8, without the vector
//! * `vectors.bin`   - magic `TRVS`, format version (u32 LE), dim (u32 LE),
//!   then one row of `dim` little-endian f32 per record, in record order
//! * `manifest.json` - format version, counts, app vocabulary and a
//!   length + CRC-32 for every segment, including caller-supplied extras
//!
//! Files are written to a temporary name and renamed; the manifest goes last.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{LabelVector, MemoryError, Origin, PersonalDatabase, RecordId, UsageRecord};
use crate::encoder::{ContextSnapshot, FeatureVector};

pub const FORMAT_VERSION: u32 = 1;
pub const VECTOR_MAGIC: [u8; 4] = *b"TRVS";
const HEADER_LEN: usize = 12;
const MANIFEST: &str = "manifest.json";
const RECORDS: &str = "records.jsonl";
const VECTORS: &str = "vectors.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub file: String,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub user_id: String,
    pub dim: u32,
    pub count: u64,
    pub next_id: RecordId,
    pub app_vocab: Vec<String>,
    pub segments: BTreeMap<String, Segment>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: RecordId,
    user_id: String,
    query: String,
    context: ContextSnapshot,
    label: LabelVector,
    chosen: String,
    chat: bool,
    timestamp: DateTime<Utc>,
    origin: Origin,
}

impl RecordLine {
    fn of(r: &UsageRecord) -> Self {
        Self {
            id: r.id,
            user_id: r.user_id.clone(),
            query: r.query.clone(),
            context: r.context.clone(),
            label: r.label.clone(),
            chosen: r.chosen.clone(),
            chat: r.chat,
            timestamp: r.timestamp,
            origin: r.origin,
        }
    }

    fn into_record(self, feature: FeatureVector) -> UsageRecord {
        UsageRecord {
            id: self.id,
            user_id: self.user_id,
            query: self.query,
            feature,
            context: self.context,
            label: self.label,
            chosen: self.chosen,
            chat: self.chat,
            timestamp: self.timestamp,
            origin: self.origin,
        }
    }
}

fn corrupt(msg: impl Into<String>) -> MemoryError {
    MemoryError::CorruptSnapshot(msg.into())
}

fn record_line(r: &UsageRecord) -> Vec<u8> {
    let mut line = serde_json::to_vec(&RecordLine::of(r)).expect("record serializes");
    line.push(b'\n');
    line
}

fn vector_row(r: &UsageRecord) -> Vec<u8> {
    r.feature
        .0
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<Segment, MemoryError> {
    let tmp = dir.join(format!("{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    Ok(Segment {
        file: name.to_string(),
        bytes: bytes.len() as u64,
        crc32: crc32fast::hash(bytes),
    })
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), MemoryError> {
    let bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
    write_atomic(dir, MANIFEST, &bytes)?;
    Ok(())
}

/// Writes a full snapshot of `db` plus named opaque `extras` segments.
pub fn save(
    db: &PersonalDatabase,
    dir: &Path,
    extras: &[(&str, Vec<u8>)],
) -> Result<Manifest, MemoryError> {
    fs::create_dir_all(dir)?;
    let dim = db.dim().unwrap_or(0);
    let mut records = Vec::new();
    let mut vectors = Vec::with_capacity(HEADER_LEN + db.len() * dim * 4);
    vectors.extend_from_slice(&VECTOR_MAGIC);
    vectors.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    vectors.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in db.records() {
        records.extend(record_line(r));
        vectors.extend(vector_row(r));
    }
    let mut segments = BTreeMap::new();
    segments.insert("records".to_string(), write_atomic(dir, RECORDS, &records)?);
    segments.insert("vectors".to_string(), write_atomic(dir, VECTORS, &vectors)?);
    for (name, bytes) in extras {
        let file = format!("{name}.json");
        segments.insert(name.to_string(), write_atomic(dir, &file, bytes)?);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        user_id: db.user_id().to_string(),
        dim: dim as u32,
        count: db.len() as u64,
        next_id: db.next_id(),
        app_vocab: db.app_vocab().to_vec(),
        segments,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Appends the last record of `db` to an existing snapshot in place,
/// falling back to a full rewrite when the snapshot is not exactly one
/// record behind or the layout changed.
pub fn append_to_snapshot(
    db: &PersonalDatabase,
    dir: &Path,
    extras: &[(&str, Vec<u8>)],
) -> Result<Manifest, MemoryError> {
    let current = fs::read(dir.join(MANIFEST))
        .ok()
        .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok());
    let Some(mut m) = current else {
        return save(db, dir, extras);
    };
    let Some(last) = db.records().last() else {
        return save(db, dir, extras);
    };
    if m.count + 1 != db.len() as u64
        || m.count == 0
        || m.dim as usize != last.feature.dim()
        || m.app_vocab != db.app_vocab()
    {
        return save(db, dir, extras);
    }
    for (name, file, bytes) in [
        ("records", RECORDS, record_line(last)),
        ("vectors", VECTORS, vector_row(last)),
    ] {
        let seg = m.segments.get_mut(name).ok_or_else(|| corrupt("missing segment"))?;
        let mut f = OpenOptions::new().append(true).open(dir.join(file))?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        let mut h = crc32fast::Hasher::new_with_initial_len(seg.crc32, seg.bytes);
        h.update(&bytes);
        seg.crc32 = h.finalize();
        seg.bytes += bytes.len() as u64;
    }
    for (name, bytes) in extras {
        let file = format!("{name}.json");
        m.segments.insert(name.to_string(), write_atomic(dir, &file, bytes)?);
    }
    m.count += 1;
    m.next_id = db.next_id();
    write_manifest(dir, &m)?;
    Ok(m)
}

fn read_segment(dir: &Path, m: &Manifest, name: &str) -> Result<Vec<u8>, MemoryError> {
    let seg = m
        .segments
        .get(name)
        .ok_or_else(|| corrupt(format!("manifest lists no '{name}' segment")))?;
    let bytes = fs::read(dir.join(&seg.file)).map_err(|e| corrupt(format!("{}: {e}", seg.file)))?;
    if bytes.len() as u64 != seg.bytes {
        return Err(corrupt(format!(
            "{}: expected {} bytes, found {}",
            seg.file,
            seg.bytes,
            bytes.len()
        )));
    }
    if crc32fast::hash(&bytes) != seg.crc32 {
        return Err(corrupt(format!("{}: checksum mismatch", seg.file)));
    }
    Ok(bytes)
}

/// Loads a snapshot, verifying version, lengths and checksums. Returns the
/// database and the raw bytes of every extra segment.
pub fn load(dir: &Path) -> Result<(PersonalDatabase, BTreeMap<String, Vec<u8>>), MemoryError> {
    let raw = fs::read(dir.join(MANIFEST)).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let probe: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if let Some(v) = probe.get("format_version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err(MemoryError::VersionMismatch {
                found: v as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let m: Manifest = serde_json::from_value(probe).map_err(|e| corrupt(format!("manifest: {e}")))?;

    let vectors = read_segment(dir, &m, "vectors")?;
    if vectors.len() < HEADER_LEN || vectors[..4] != VECTOR_MAGIC {
        return Err(corrupt("vector sidecar has a bad header"));
    }
    let version = u32::from_le_bytes(vectors[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(MemoryError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = u32::from_le_bytes(vectors[8..12].try_into().unwrap()) as usize;
    if dim != m.dim as usize {
        return Err(corrupt("sidecar dimension disagrees with manifest"));
    }
    let body = &vectors[HEADER_LEN..];
    let row_bytes = dim * 4;
    let rows = if row_bytes == 0 { 0 } else { body.len() / row_bytes };
    if rows as u64 != m.count || rows * row_bytes != body.len() {
        return Err(corrupt("sidecar row count disagrees with manifest"));
    }

    let text = read_segment(dir, &m, "records")?;
    let text = std::str::from_utf8(&text).map_err(|_| corrupt("records are not UTF-8"))?;
    let mut records = Vec::with_capacity(rows);
    for (i, line) in text.lines().enumerate() {
        let parsed: RecordLine =
            serde_json::from_str(line).map_err(|e| corrupt(format!("record {i}: {e}")))?;
        let row = body
            .get(i * row_bytes..(i + 1) * row_bytes)
            .ok_or_else(|| corrupt("more records than vectors"))?;
        let feature = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        records.push(parsed.into_record(FeatureVector(feature)));
    }
    if records.len() != rows {
        return Err(corrupt("record count disagrees with manifest"));
    }

    let mut extras = BTreeMap::new();
    for name in m.segments.keys().filter(|k| *k != "records" && *k != "vectors") {
        extras.insert(name.clone(), read_segment(dir, &m, name)?);
    }
    let db = PersonalDatabase::from_parts(m.user_id.clone(), records, m.next_id, m.app_vocab.clone());
    Ok((db, extras))
}
