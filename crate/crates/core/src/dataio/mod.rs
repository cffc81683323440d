//! File formats: detection streams, ground truth, scene snapshots, label banks.
//!
//! Detection streams are newline-delimited JSON: one header line, then one
//! frame record per line. Quaternions are written `[w, x, y, z]`, poses are
//! `world_from_cam`, and floats use shortest round-trip decimal text so a
//! write/load cycle is bit-exact.

pub mod sim;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Translation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Intrinsics, OrientedBox3D, Pose, Rotation3, Vec3};
use crate::semantics::{Feature, TextQuery};
use crate::stream::{FrameInput, ProposalInput, SceneSnapshot, SnapshotObject};
use sim::{GtObject, ObjectKind, SimScene};

pub const STREAM_FORMAT: &str = "mvbox-stream";
pub const GROUNDTRUTH_FORMAT: &str = "mvbox-groundtruth";
pub const SNAPSHOT_FORMAT: &str = "mvbox-snapshot";
pub const SCHEMA_VERSION: u32 = 1;

/// Quaternions further than this from unit norm are rejected.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frame {frame_id}: {message}")]
    Invalid { frame_id: u64, message: String },
    #[error("{what}: {message}")]
    InvalidRecord { what: String, message: String },
    #[error("unsupported {format} schema version {found} (expected {expected})")]
    SchemaVersion { format: String, found: u32, expected: u32 },
    #[error("expected a {expected} file, found '{found}'")]
    WrongFormat { expected: &'static str, found: String },
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotone { previous: u64, got: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// `[w, x, y, z]`
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        let t = p.translation.vector;
        Self { quaternion: [q.w, q.i, q.j, q.k], translation: [t.x, t.y, t.z] }
    }

    pub fn to_pose(&self) -> Result<Pose, String> {
        let rotation = rotation_from_wxyz(self.quaternion)?;
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err("pose translation is not finite".into());
        }
        Ok(Pose::from_parts(Translation3::from(Vec3::from(self.translation)), rotation))
    }
}

/// Unit quaternion from `[w, x, y, z]`; renormalized only when off by more
/// than rounding, so written quaternions load back bit-exactly.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Result<Rotation3, String> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(format!("quaternion norm {norm} is not 1"));
    }
    if (norm - 1.0).abs() > 1e-12 {
        Ok(Rotation3::from_quaternion(quat))
    } else {
        Ok(Rotation3::new_unchecked(quat))
    }
}

fn wxyz(r: &Rotation3) -> [f64; 4] {
    let q = r.quaternion();
    [q.w, q.i, q.j, q.k]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
}

impl BoxRecord {
    pub fn from_box(b: &OrientedBox3D) -> Self {
        Self { center: b.center.into(), size: b.size.into(), rotation: wxyz(&b.rotation) }
    }

    pub fn to_box(&self) -> Result<OrientedBox3D, String> {
        let b = OrientedBox3D { center: self.center.into(), size: self.size.into(), rotation: rotation_from_wxyz(self.rotation)? };
        b.validate().map_err(|e| e.to_string())?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    #[serde(flatten)]
    pub bbox: BoxRecord,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    pub pose: PoseRecord,
    pub proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub version: u32,
    pub units: String,
    /// Used by frames that carry no intrinsics of their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
}

impl StreamHeader {
    pub fn new(intrinsics: Option<Intrinsics>) -> Self {
        Self { format: STREAM_FORMAT.into(), version: SCHEMA_VERSION, units: "meters".into(), intrinsics }
    }
}

fn check_schema(format: &str, expected_format: &'static str, version: u32) -> Result<(), DataError> {
    if format != expected_format {
        return Err(DataError::WrongFormat { expected: expected_format, found: format.into() });
    }
    if version != SCHEMA_VERSION {
        return Err(DataError::SchemaVersion { format: format.into(), found: version, expected: SCHEMA_VERSION });
    }
    Ok(())
}

pub fn frame_to_record(f: &FrameInput) -> FrameRecord {
    FrameRecord {
        frame_id: f.frame_id,
        timestamp: f.timestamp,
        intrinsics: Some(f.intrinsics),
        pose: PoseRecord::from_pose(&f.world_from_cam),
        proposals: f
            .proposals
            .iter()
            .map(|p| ProposalRecord {
                bbox: BoxRecord::from_box(&p.box_cam),
                score: p.score,
                feature: p.feature.as_ref().map(|f| f.values().to_vec()),
            })
            .collect(),
    }
}

pub fn record_to_frame(r: FrameRecord, default_intrinsics: Option<&Intrinsics>) -> Result<FrameInput, DataError> {
    let invalid = |message: String| DataError::Invalid { frame_id: r.frame_id, message };
    let intrinsics = r
        .intrinsics
        .or(default_intrinsics.copied())
        .ok_or_else(|| invalid("no intrinsics in the frame or the header".into()))?;
    let world_from_cam = r.pose.to_pose().map_err(invalid)?;
    let mut proposals = Vec::with_capacity(r.proposals.len());
    for (i, p) in r.proposals.iter().enumerate() {
        let box_cam = p.bbox.to_box().map_err(|e| invalid(format!("proposal {i}: {e}")))?;
        let feature = match &p.feature {
            Some(v) => Some(Feature::new(v.clone()).map_err(|e| invalid(format!("proposal {i}: {e}")))?),
            None => None,
        };
        proposals.push(ProposalInput { box_cam, score: p.score, feature });
    }
    let frame = FrameInput { frame_id: r.frame_id, timestamp: r.timestamp, intrinsics, world_from_cam, proposals };
    frame.validate().map_err(|e| match e {
        crate::stream::StreamError::InvalidFrame { reason, .. } => invalid(reason),
        other => invalid(other.to_string()),
    })?;
    Ok(frame)
}

pub fn write_stream<'a>(frames: impl IntoIterator<Item = &'a FrameInput>, path: &Path) -> Result<(), DataError> {
    fn line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut frames = frames.into_iter().peekable();
    line(&mut w, &StreamHeader::new(frames.peek().map(|f| f.intrinsics))).map_err(io_err(path))?;
    for f in frames {
        line(&mut w, &frame_to_record(f)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Streaming reader over a detection-stream file.
pub struct StreamReader {
    lines: Lines<BufReader<File>>,
    line_no: usize,
    header: Option<StreamHeader>,
    last_frame_id: Option<u64>,
    feature_dim: Option<usize>,
    failed: bool,
}

impl StreamReader {
    pub fn header(&self) -> Option<&StreamHeader> {
        self.header.as_ref()
    }

    fn next_line(&mut self) -> Option<Result<String, DataError>> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(Ok(l)),
                Err(e) => return Some(Err(DataError::Parse { line: self.line_no, message: e.to_string() })),
            }
        }
    }

    fn read_frame(&mut self, line: &str) -> Result<FrameInput, DataError> {
        let record: FrameRecord = serde_json::from_str(line)
            .map_err(|e| DataError::Parse { line: self.line_no, message: format!("malformed frame record: {e}") })?;
        if let Some(previous) = self.last_frame_id {
            if record.frame_id <= previous {
                return Err(DataError::NonMonotone { previous, got: record.frame_id });
            }
        }
        let frame = record_to_frame(record, self.header.as_ref().and_then(|h| h.intrinsics.as_ref()))?;
        for p in &frame.proposals {
            if let Some(f) = &p.feature {
                let dim = *self.feature_dim.get_or_insert(f.dim());
                if f.dim() != dim {
                    return Err(DataError::Invalid {
                        frame_id: frame.frame_id,
                        message: format!("feature dimension {} differs from the stream's {dim}", f.dim()),
                    });
                }
            }
        }
        self.last_frame_id = Some(frame.frame_id);
        Ok(frame)
    }
}

impl Iterator for StreamReader {
    type Item = Result<FrameInput, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let result = match self.next_line()? {
            Ok(line) => self.read_frame(&line),
            Err(e) => Err(e),
        };
        self.failed = result.is_err();
        Some(result)
    }
}

/// Opens a stream and validates its header. An empty file is an empty stream.
pub fn load_stream(path: &Path) -> Result<StreamReader, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = StreamReader {
        lines: BufReader::new(file).lines(),
        line_no: 0,
        header: None,
        last_frame_id: None,
        feature_dim: None,
        failed: false,
    };
    if let Some(first) = reader.next_line() {
        let first = first?;
        let header: StreamHeader = serde_json::from_str(&first)
            .map_err(|e| DataError::Parse { line: reader.line_no, message: format!("malformed stream header: {e}") })?;
        check_schema(&header.format, STREAM_FORMAT, header.version)?;
        if let Some(k) = &header.intrinsics {
            k.validate().map_err(|e| DataError::InvalidRecord { what: "stream header".into(), message: e.to_string() })?;
        }
        reader.header = Some(header);
    }
    Ok(reader)
}

pub fn read_stream(path: &Path) -> Result<Vec<FrameInput>, DataError> {
    load_stream(path)?.collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub id: u64,
    #[serde(flatten)]
    pub bbox: BoxRecord,
    pub kind: ObjectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub format: String,
    pub version: u32,
    pub room: [f64; 3],
    pub seed: u64,
    pub objects: Vec<GtRecord>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| DataError::Io { path: path.to_path_buf(), source: e.into() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| DataError::Parse { line: e.line(), message: e.to_string() })
}

pub fn write_groundtruth(scene: &SimScene, path: &Path) -> Result<(), DataError> {
    let file = GroundTruthFile {
        format: GROUNDTRUTH_FORMAT.into(),
        version: SCHEMA_VERSION,
        room: scene.room.into(),
        seed: scene.seed,
        objects: scene
            .objects
            .iter()
            .map(|o| GtRecord {
                id: o.id,
                bbox: BoxRecord::from_box(&o.bbox),
                kind: o.kind,
                embedding: o.embedding.as_ref().map(|e| e.values().to_vec()),
            })
            .collect(),
    };
    write_json(&file, path)
}

pub fn load_groundtruth(path: &Path) -> Result<SimScene, DataError> {
    let file: GroundTruthFile = read_json(path)?;
    check_schema(&file.format, GROUNDTRUTH_FORMAT, file.version)?;
    let mut objects = Vec::with_capacity(file.objects.len());
    for r in file.objects {
        let what = || format!("ground-truth object {}", r.id);
        let bbox = r.bbox.to_box().map_err(|message| DataError::InvalidRecord { what: what(), message })?;
        let embedding = match r.embedding {
            Some(v) => Some(Feature::new(v).map_err(|e| DataError::InvalidRecord { what: what(), message: e.to_string() })?),
            None => None,
        };
        objects.push(GtObject { id: r.id, bbox, kind: r.kind, embedding });
    }
    Ok(SimScene { objects, room: file.room.into(), seed: file.seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub id: u64,
    #[serde(flatten)]
    pub bbox: BoxRecord,
    pub score: f64,
    pub n_views: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub format: String,
    pub version: u32,
    pub objects: Vec<SnapshotRecord>,
}

pub fn snapshot_to_file(s: &SceneSnapshot) -> SnapshotFile {
    SnapshotFile {
        format: SNAPSHOT_FORMAT.into(),
        version: SCHEMA_VERSION,
        objects: s
            .objects
            .iter()
            .map(|o| SnapshotRecord {
                id: o.id,
                bbox: BoxRecord::from_box(&o.bbox),
                score: o.score,
                n_views: o.n_views,
                feature: o.feature.as_ref().map(|f| f.values().to_vec()),
            })
            .collect(),
    }
}

pub fn snapshot_from_file(file: SnapshotFile) -> Result<SceneSnapshot, DataError> {
    check_schema(&file.format, SNAPSHOT_FORMAT, file.version)?;
    let mut objects = Vec::with_capacity(file.objects.len());
    for r in file.objects {
        let what = || format!("snapshot object {}", r.id);
        let bbox = r.bbox.to_box().map_err(|message| DataError::InvalidRecord { what: what(), message })?;
        let feature = match r.feature {
            Some(v) => Some(Feature::new(v).map_err(|e| DataError::InvalidRecord { what: what(), message: e.to_string() })?),
            None => None,
        };
        objects.push(SnapshotObject { id: r.id, bbox, score: r.score, n_views: r.n_views, feature });
    }
    Ok(SceneSnapshot { objects })
}

pub fn write_snapshot(s: &SceneSnapshot, path: &Path) -> Result<(), DataError> {
    write_json(&snapshot_to_file(s), path)
}

pub fn load_snapshot(path: &Path) -> Result<SceneSnapshot, DataError> {
    snapshot_from_file(read_json(path)?)
}

/// Reads `[{label, embedding}, ...]`.
pub fn load_label_bank(path: &Path) -> Result<Vec<TextQuery>, DataError> {
    read_json(path)
}

pub fn write_label_bank(bank: &[TextQuery], path: &Path) -> Result<(), DataError> {
    write_json(&bank, path)
}

/// Reads either a single `{label, embedding}` record or a bare embedding array.
pub fn load_query(path: &Path) -> Result<TextQuery, DataError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum QueryFile {
        Labeled(TextQuery),
        Bare(Feature),
    }
    Ok(match read_json::<QueryFile>(path)? {
        QueryFile::Labeled(q) => q,
        QueryFile::Bare(embedding) => TextQuery { label: String::new(), embedding },
    })
}

/// Wavefront OBJ line set: 8 vertices and 12 edges per box.
pub fn write_obj_lines(boxes: &[OrientedBox3D], path: &Path) -> Result<(), DataError> {
    const EDGES: [(usize, usize); 12] =
        [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        out.push_str(&format!("o box_{i}\n"));
        for c in b.corners() {
            out.push_str(&format!("v {} {} {}\n", c.x, c.y, c.z));
        }
        let base = i * 8 + 1;
        for (a, b) in EDGES {
            out.push_str(&format!("l {} {}\n", base + a, base + b));
        }
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::sim::{simulate, NoiseModel, SimSpec};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write_lines(path: &Path, lines: &[&str]) {
        let mut f = File::create(path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
    }

    const HEADER: &str = r#"{"format":"mvbox-stream","version":1,"units":"meters"}"#;
    const K: &str = r#""intrinsics":{"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480}"#;

    fn frame_line(id: u64, size: f64) -> String {
        format!(
            r#"{{"frame_id":{id},"timestamp":0.0,{K},"pose":{{"quaternion":[1,0,0,0],"translation":[0,0,0]}},"proposals":[{{"center":[0,0,2],"size":[{size},0.5,0.5],"rotation":[1,0,0,0],"score":0.9}}]}}"#
        )
    }

    #[test]
    fn empty_stream_is_empty() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        File::create(&p).unwrap();
        assert_eq!(read_stream(&p).unwrap().len(), 0);
        write_lines(&p, &[HEADER]);
        assert_eq!(read_stream(&p).unwrap().len(), 0);
        write_stream(std::iter::empty(), &p).unwrap();
        assert_eq!(read_stream(&p).unwrap().len(), 0);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        let run = simulate(&SimSpec { n_frames: 15, feature_dim: 6, noise: NoiseModel::default(), ..Default::default() }).unwrap();
        let frames: Vec<FrameInput> = run.inputs().cloned().collect();
        write_stream(&frames, &p).unwrap();
        let back = read_stream(&p).unwrap();
        assert_eq!(back, frames);
        for (a, b) in back.iter().zip(&frames) {
            for (pa, pb) in a.proposals.iter().zip(&b.proposals) {
                assert_eq!(pa.box_cam.center.x.to_bits(), pb.box_cam.center.x.to_bits());
                assert_eq!(pa.box_cam.rotation.quaternion().w.to_bits(), pb.box_cam.rotation.quaternion().w.to_bits());
            }
        }
    }

    #[test]
    fn zero_size_is_rejected_with_frame_id() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        write_lines(&p, &[HEADER, &frame_line(3, 1.0), &frame_line(4, 0.0)]);
        let mut it = load_stream(&p).unwrap();
        assert!(it.next().unwrap().is_ok());
        match it.next().unwrap() {
            Err(DataError::Invalid { frame_id, message }) => {
                assert_eq!(frame_id, 4);
                assert!(message.contains("proposal 0"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(it.next().is_none());
    }

    #[test]
    fn non_monotone_and_malformed_records_are_rejected() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        write_lines(&p, &[HEADER, &frame_line(3, 1.0), &frame_line(3, 1.0)]);
        assert!(matches!(read_stream(&p), Err(DataError::NonMonotone { previous: 3, got: 3 })));
        write_lines(&p, &[HEADER, "{\"frame_id\": 1"]);
        assert!(matches!(read_stream(&p), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn quaternion_norm_rules() {
        assert!(rotation_from_wxyz([1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(rotation_from_wxyz([1.0 + 5e-7, 0.0, 0.0, 0.0]).is_ok());
        assert!(rotation_from_wxyz([1.0 + 2e-6, 0.0, 0.0, 0.0]).is_err());
        assert!(rotation_from_wxyz([f64::NAN, 0.0, 0.0, 0.0]).is_err());
        let d = tmp();
        let p = d.path().join("s.ndjson");
        let bad = frame_line(0, 1.0).replace("\"quaternion\":[1,0,0,0]", "\"quaternion\":[0.9,0,0,0]");
        write_lines(&p, &[HEADER, &bad]);
        assert!(matches!(read_stream(&p), Err(DataError::Invalid { frame_id: 0, .. })));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        write_lines(&p, &[&HEADER.replace("\"version\":1", "\"version\":2")]);
        assert!(matches!(load_stream(&p), Err(DataError::SchemaVersion { found: 2, .. })));
        write_lines(&p, &[&HEADER.replace("mvbox-stream", "other")]);
        assert!(matches!(load_stream(&p), Err(DataError::WrongFormat { .. })));

        let run = simulate(&SimSpec { n_frames: 1, ..Default::default() }).unwrap();
        let g = d.path().join("gt.json");
        write_groundtruth(&run.scene, &g).unwrap();
        let text = std::fs::read_to_string(&g).unwrap().replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&g, text).unwrap();
        assert!(matches!(load_groundtruth(&g), Err(DataError::SchemaVersion { found: 9, .. })));
    }

    #[test]
    fn header_intrinsics_fill_in() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        let header = HEADER.replace("}", &format!(",{K}}}"));
        let line = frame_line(0, 1.0).replace(&format!("{K},"), "");
        write_lines(&p, &[&header, &line]);
        assert_eq!(read_stream(&p).unwrap()[0].intrinsics, Intrinsics::default());
        write_lines(&p, &[HEADER, &line]);
        assert!(matches!(read_stream(&p), Err(DataError::Invalid { frame_id: 0, .. })));
    }

    #[test]
    fn feature_dimension_must_be_consistent() {
        let d = tmp();
        let p = d.path().join("s.ndjson");
        let with = |id: u64, f: &str| frame_line(id, 1.0).replace("\"score\":0.9", &format!("\"score\":0.9,\"feature\":{f}"));
        write_lines(&p, &[HEADER, &with(0, "[1.0,0.0]"), &with(1, "[1.0,0.0,0.0]")]);
        assert!(matches!(read_stream(&p), Err(DataError::Invalid { frame_id: 1, .. })));
        write_lines(&p, &[HEADER, &with(0, "[3.0,4.0]")]);
        assert!(matches!(read_stream(&p), Err(DataError::Invalid { frame_id: 0, .. })));
    }

    #[test]
    fn groundtruth_and_snapshot_round_trip() {
        let d = tmp();
        let run = simulate(&SimSpec { n_frames: 1, feature_dim: 4, ..Default::default() }).unwrap();
        let g = d.path().join("gt.json");
        write_groundtruth(&run.scene, &g).unwrap();
        let back = load_groundtruth(&g).unwrap();
        assert_eq!(back, run.scene);
        assert_eq!(back.objects.len(), 20);

        let snap = SceneSnapshot {
            objects: run
                .scene
                .objects
                .iter()
                .map(|o| SnapshotObject { id: o.id, bbox: o.bbox, score: 0.5, n_views: 3, feature: o.embedding.clone() })
                .collect(),
        };
        let s = d.path().join("snap.json");
        write_snapshot(&snap, &s).unwrap();
        assert_eq!(load_snapshot(&s).unwrap(), snap);
        write_snapshot(&SceneSnapshot::default(), &s).unwrap();
        assert!(load_snapshot(&s).unwrap().objects.is_empty());
    }

    #[test]
    fn label_bank_and_query_files() {
        let d = tmp();
        let bank = vec![
            TextQuery { label: "chair".into(), embedding: Feature::normalized(&[1.0, 0.0]).unwrap() },
            TextQuery { label: "mug".into(), embedding: Feature::normalized(&[0.0, 1.0]).unwrap() },
        ];
        let p = d.path().join("bank.json");
        write_label_bank(&bank, &p).unwrap();
        assert_eq!(load_label_bank(&p).unwrap(), bank);
        let q = d.path().join("q.json");
        std::fs::write(&q, "[0.6, 0.8]").unwrap();
        assert_eq!(load_query(&q).unwrap().embedding.dim(), 2);
        std::fs::write(&q, r#"{"label":"mug","embedding":[0.0,1.0]}"#).unwrap();
        assert_eq!(load_query(&q).unwrap().label, "mug");
    }

    #[test]
    fn obj_export_has_twelve_edges_per_box() {
        let d = tmp();
        let p = d.path().join("boxes.obj");
        let b = OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(1.0));
        write_obj_lines(&[b, b], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 16);
        assert_eq!(text.lines().filter(|l| l.starts_with("l ")).count(), 24);
        // every edge joins corners that differ in exactly one axis
        for l in text.lines().filter(|l| l.starts_with("l ")) {
            let ids: Vec<usize> = l[2..].split(' ').map(|x| x.parse::<usize>().unwrap() - 1).collect();
            assert_eq!(((ids[0] % 8) ^ (ids[1] % 8)).count_ones(), 1);
        }
    }
}
