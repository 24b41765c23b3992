//! CSV and JSON emission with matching readers.
//!
//! CSV files carry a header row and print floats with 17 significant digits,
//! so every value read back is bit-identical to the value written.

use std::fs::File;
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagation::{ImuSample, LandmarkMap, LandmarkObservation};
use crate::sim::generate::{CameraFrame, RangeEpoch, TruthSample};
use crate::sim::pipeline::TraceRow;
use crate::sim::AnchorSpec;
use crate::state::{ImuState, Rotation3, ANCHOR_DIM};
use crate::uwb::RangingMeasurement;

pub const TRUTH_HEADER: [&str; 17] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "bgx", "bgy", "bgz", "bax", "bay", "baz",
];
pub const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
pub const CAMERA_HEADER: [&str; 5] = ["t", "imu_index", "landmark_id", "u", "v"];
pub const RANGES_HEADER: [&str; 5] = ["epoch_t", "imu_index", "anchor_id", "t", "distance"];
pub const LANDMARKS_HEADER: [&str; 4] = ["id", "x", "y", "z"];
pub const ANCHORS_HEADER: [&str; 6] = ["id", "x", "y", "z", "beta", "gamma"];
const ANCHOR_FIELDS: [&str; ANCHOR_DIM] = ["px", "py", "pz", "beta", "gamma"];

/// Fixed 17-significant-digit float format.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: format!("line {line}: {e}"),
    }
}

/// Header plus string records; the common shape of every CSV this crate emits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&table.header).map_err(|e| io_err(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| parse_err(path, 1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

/// Typed access to one table row with line-numbered errors.
struct Row<'a> {
    path: &'a Path,
    line: usize,
    fields: &'a [String],
}

impl Row<'_> {
    fn f64(&self, i: usize) -> Result<f64> {
        self.parse(i)
    }

    fn parse<T: std::str::FromStr>(&self, i: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self
            .fields
            .get(i)
            .ok_or_else(|| parse_err(self.path, self.line, format!("missing column {i}")))?;
        s.parse().map_err(|e| parse_err(self.path, self.line, format!("column {i} ({s:?}): {e}")))
    }

    fn vec3(&self, i: usize) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64(i)?, self.f64(i + 1)?, self.f64(i + 2)?))
    }
}

fn rows<'a>(path: &'a Path, table: &'a Table, expected: &[&str]) -> Result<impl Iterator<Item = Row<'a>>> {
    if table.header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(parse_err(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(table.rows.iter().enumerate().map(move |(i, fields)| Row {
        path,
        line: i + 2,
        fields,
    }))
}

fn floats(xs: impl IntoIterator<Item = f64>) -> impl Iterator<Item = String> {
    xs.into_iter().map(fmt_f64)
}

pub fn write_truth(path: &Path, truth: &[TruthSample]) -> Result<()> {
    let mut t = Table::new(&TRUTH_HEADER);
    for s in truth {
        let imu = &s.imu;
        let row = floats(
            [s.t]
                .into_iter()
                .chain(imu.pos.iter().copied())
                .chain(imu.rot.wxyz())
                .chain(imu.vel.iter().copied())
                .chain(imu.bg.iter().copied())
                .chain(imu.ba.iter().copied()),
        )
        .collect();
        t.push(row);
    }
    write_table(path, &t)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthSample>> {
    let table = read_table(path)?;
    let out = rows(path, &table, &TRUTH_HEADER)?
        .map(|r| {
            let q = [r.f64(4)?, r.f64(5)?, r.f64(6)?, r.f64(7)?];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(parse_err(path, r.line, format!("quaternion norm {norm} is not 1")));
            }
            let rot = Rotation3::from_wxyz_unchecked(q[0], q[1], q[2], q[3]);
            Ok(TruthSample {
                t: r.f64(0)?,
                imu: ImuState {
                    rot,
                    bg: r.vec3(11)?,
                    vel: r.vec3(8)?,
                    ba: r.vec3(14)?,
                    pos: r.vec3(1)?,
                },
            })
        })
        .collect();
    out
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<()> {
    let mut t = Table::new(&IMU_HEADER);
    for s in imu {
        let row = floats([s.t].into_iter().chain(s.gyro.iter().copied()).chain(s.accel.iter().copied())).collect();
        t.push(row);
    }
    write_table(path, &t)
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let table = read_table(path)?;
    let out = rows(path, &table, &IMU_HEADER)?
        .map(|r| {
            Ok(ImuSample {
                t: r.f64(0)?,
                gyro: r.vec3(1)?,
                accel: r.vec3(4)?,
            })
        })
        .collect();
    out
}

/// One row per observation; frames without observations are not written.
pub fn write_camera(path: &Path, frames: &[CameraFrame]) -> Result<()> {
    let mut t = Table::new(&CAMERA_HEADER);
    for f in frames {
        for o in &f.observations {
            t.push(vec![
                fmt_f64(f.t),
                f.index.to_string(),
                o.landmark_id.to_string(),
                fmt_f64(o.u),
                fmt_f64(o.v),
            ]);
        }
    }
    write_table(path, &t)
}

pub fn read_camera(path: &Path) -> Result<Vec<CameraFrame>> {
    let table = read_table(path)?;
    let mut frames: Vec<CameraFrame> = Vec::new();
    for r in rows(path, &table, &CAMERA_HEADER)? {
        let t = r.f64(0)?;
        let index: usize = r.parse(1)?;
        let obs = LandmarkObservation {
            landmark_id: r.parse(2)?,
            u: r.f64(3)?,
            v: r.f64(4)?,
            t,
        };
        match frames.last_mut() {
            Some(f) if f.index == index => f.observations.push(obs),
            _ => frames.push(CameraFrame {
                t,
                index,
                observations: vec![obs],
            }),
        }
    }
    Ok(frames)
}

pub fn write_ranges(path: &Path, epochs: &[RangeEpoch]) -> Result<()> {
    let mut t = Table::new(&RANGES_HEADER);
    for e in epochs {
        for m in &e.ranges {
            t.push(vec![
                fmt_f64(e.t),
                e.index.to_string(),
                m.anchor_id.to_string(),
                fmt_f64(m.timestamp),
                fmt_f64(m.distance),
            ]);
        }
    }
    write_table(path, &t)
}

pub fn read_ranges(path: &Path) -> Result<Vec<RangeEpoch>> {
    let table = read_table(path)?;
    let mut epochs: Vec<RangeEpoch> = Vec::new();
    for r in rows(path, &table, &RANGES_HEADER)? {
        let index: usize = r.parse(1)?;
        let m = RangingMeasurement {
            anchor_id: r.parse(2)?,
            timestamp: r.f64(3)?,
            distance: r.f64(4)?,
        };
        match epochs.last_mut() {
            Some(e) if e.index == index => e.ranges.push(m),
            _ => epochs.push(RangeEpoch {
                t: r.f64(0)?,
                index,
                ranges: vec![m],
            }),
        }
    }
    Ok(epochs)
}

pub fn write_landmarks(path: &Path, map: &LandmarkMap) -> Result<()> {
    let mut t = Table::new(&LANDMARKS_HEADER);
    for (id, p) in map.iter() {
        t.push([id.to_string()].into_iter().chain(floats(p.iter().copied())).collect());
    }
    write_table(path, &t)
}

/// Ids must be `0..n` in order.
pub fn read_landmarks(path: &Path) -> Result<LandmarkMap> {
    let table = read_table(path)?;
    let mut points = Vec::with_capacity(table.rows.len());
    for r in rows(path, &table, &LANDMARKS_HEADER)? {
        let id: usize = r.parse(0)?;
        if id != points.len() {
            return Err(parse_err(path, r.line, format!("landmark id {id} out of sequence")));
        }
        points.push(r.vec3(1)?);
    }
    Ok(LandmarkMap::new(points))
}

pub fn write_anchors(path: &Path, anchors: &[AnchorSpec]) -> Result<()> {
    let mut t = Table::new(&ANCHORS_HEADER);
    for a in anchors {
        t.push(
            [a.id.to_string()]
                .into_iter()
                .chain(floats(a.position.into_iter().chain([a.beta, a.gamma])))
                .collect(),
        );
    }
    write_table(path, &t)
}

pub fn read_anchors(path: &Path) -> Result<Vec<AnchorSpec>> {
    let table = read_table(path)?;
    let out = rows(path, &table, &ANCHORS_HEADER)?
        .map(|r| {
            Ok(AnchorSpec {
                id: r.parse(0)?,
                position: [r.f64(1)?, r.f64(2)?, r.f64(3)?],
                beta: r.f64(4)?,
                gamma: r.f64(5)?,
            })
        })
        .collect();
    out
}

pub fn trace_header(anchor_ids: &[u32]) -> Vec<String> {
    let mut h: Vec<String> = ["t", "truth_px", "truth_py", "truth_pz", "truth_qw", "truth_qx", "truth_qy", "truth_qz"]
        .iter()
        .chain(&["est_px", "est_py", "est_pz", "est_qw", "est_qx", "est_qy", "est_qz"])
        .map(|s| s.to_string())
        .collect();
    for id in anchor_ids {
        h.extend(ANCHOR_FIELDS.iter().map(|f| format!("a{id}_{f}")));
    }
    for id in anchor_ids {
        h.extend(ANCHOR_FIELDS.iter().map(|f| format!("a{id}_3sigma_{f}")));
    }
    h
}

/// Anchor columns follow `anchor_ids`; `NaN` marks an uninitialized anchor.
pub fn write_trace(path: &Path, rows: &[TraceRow], anchor_ids: &[u32]) -> Result<()> {
    let mut t = Table::new(&trace_header(anchor_ids));
    for r in rows {
        if r.anchors.len() != anchor_ids.len() || r.sigma3.len() != anchor_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: anchor_ids.len(),
                got: r.anchors.len(),
            });
        }
        let values = [r.t]
            .into_iter()
            .chain(r.truth_pos)
            .chain(r.truth_q)
            .chain(r.est_pos)
            .chain(r.est_q)
            .chain(r.anchors.iter().flatten().copied())
            .chain(r.sigma3.iter().flatten().copied());
        t.push(floats(values).collect());
    }
    write_table(path, &t)
}

/// Returns the anchor ids parsed from the header and the rows.
pub fn read_trace(path: &Path) -> Result<(Vec<u32>, Vec<TraceRow>)> {
    let table = read_table(path)?;
    let ids: Vec<u32> = table
        .header
        .iter()
        .filter_map(|h| h.strip_prefix('a')?.strip_suffix("_px")?.parse().ok())
        .collect();
    let header = trace_header(&ids);
    let n = ids.len();
    let rows = rows(path, &table, &header.iter().map(String::as_str).collect::<Vec<_>>())?
        .map(|r| {
            let arr = |base: usize| -> Result<Vec<[f64; ANCHOR_DIM]>> {
                (0..n)
                    .map(|a| {
                        let mut v = [0.0; ANCHOR_DIM];
                        for (k, x) in v.iter_mut().enumerate() {
                            *x = r.f64(base + a * ANCHOR_DIM + k)?;
                        }
                        Ok(v)
                    })
                    .collect()
            };
            Ok(TraceRow {
                t: r.f64(0)?,
                truth_pos: [r.f64(1)?, r.f64(2)?, r.f64(3)?],
                truth_q: [r.f64(4)?, r.f64(5)?, r.f64(6)?, r.f64(7)?],
                est_pos: [r.f64(8)?, r.f64(9)?, r.f64(10)?],
                est_q: [r.f64(11)?, r.f64(12)?, r.f64(13)?, r.f64(14)?],
                anchors: arr(15)?,
                sigma3: arr(15 + n * ANCHOR_DIM)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, rows))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Parse {
            path: String::new(),
            message: e.to_string(),
        })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
