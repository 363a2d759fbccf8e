//! Text file formats: frame CSV, ground-truth CSV, per-step diagnostics and
//! cluster dumps. Floats are written in shortest round-trip form so files
//! reload bit-exactly.
//!
//! A frame with no points is written as a single row with empty coordinate
//! fields so that its timestamp survives the round trip.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::clustering::ClusterSummary;
use crate::error::{Error, Result};
use crate::filter::StateVector;
use crate::pointcloud::{Point3, PointCloud};
use crate::sim::{GroundTruth, TruthSample};
use crate::track::TrackStatus;
use crate::tracker::StepReport;

pub const FRAMES_HEADER: &str = "frame_id,t,x,y,z";
pub const TRUTH_HEADER: &str = "frame_id,t,px,py,pz,vx,vy,vz,ax,ay,az";
pub const DIAG_HEADER: &str =
    "k,t,status,px,py,pz,vx,vy,vz,ax,ay,az,trace_p,trace_q,trace_r,d_norm,d_m2,accepted,filter";
pub const CLUSTERS_HEADER: &str = "frame_id,cluster_id,size,cx,cy,cz,max_eig,accepted";

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Data rows as `(line number, fields)`, after checking the header.
fn rows<'a>(
    path: &'a Path,
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(parse_err(path, 1, format!("expected header '{header}', found '{h}'")))
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str], i: usize, name: &str) -> Result<T> {
    let raw = fields
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column '{name}'")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("bad value '{raw}' for '{name}'")))
}

fn opt_field(path: &Path, line: usize, fields: &[&str], i: usize, name: &str) -> Result<Option<f64>> {
    match fields.get(i) {
        Some(&"") => Ok(None),
        _ => field(path, line, fields, i, name).map(Some),
    }
}

pub fn frames_to_csv(frames: &[PointCloud]) -> String {
    let mut out = String::from(FRAMES_HEADER);
    out.push('\n');
    for f in frames {
        if f.points.is_empty() {
            let _ = writeln!(out, "{},{},,,", f.frame_id, f.timestamp);
        }
        for p in &f.points {
            let _ = writeln!(out, "{},{},{},{},{}", f.frame_id, f.timestamp, p.x, p.y, p.z);
        }
    }
    out
}

/// Parses frame CSV text. Rows must be grouped by frame id in increasing
/// order.
pub fn frames_from_csv(path: &Path, text: &str) -> Result<Vec<PointCloud>> {
    let mut frames: Vec<PointCloud> = Vec::new();
    for (line, f) in rows(path, text, FRAMES_HEADER)? {
        let frame_id: u64 = field(path, line, &f, 0, "frame_id")?;
        let t: f64 = field(path, line, &f, 1, "t")?;
        let coords = [
            opt_field(path, line, &f, 2, "x")?,
            opt_field(path, line, &f, 3, "y")?,
            opt_field(path, line, &f, 4, "z")?,
        ];
        let point = match coords {
            [Some(x), Some(y), Some(z)] => Some(Point3::new(x, y, z)),
            [None, None, None] => None,
            _ => return Err(parse_err(path, line, "partially empty point")),
        };

        match frames.last_mut() {
            Some(last) if last.frame_id == frame_id => {
                if last.timestamp != t {
                    return Err(parse_err(path, line, "timestamp changes within a frame"));
                }
                last.points.extend(point);
            }
            Some(last) if frame_id < last.frame_id => {
                return Err(parse_err(path, line, "frame ids must be increasing"));
            }
            Some(last) if t <= last.timestamp => {
                return Err(parse_err(path, line, "timestamps must be strictly increasing"));
            }
            _ => frames.push(PointCloud::new(frame_id, t, point.into_iter().collect())),
        }
    }
    Ok(frames)
}

pub fn truth_to_csv(truth: &GroundTruth) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for s in &truth.frames {
        let _ = write!(out, "{},{}", s.frame_id, s.t);
        for v in s.state.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn truth_from_csv(path: &Path, text: &str) -> Result<GroundTruth> {
    let mut frames = Vec::new();
    for (line, f) in rows(path, text, TRUTH_HEADER)? {
        let frame_id = field(path, line, &f, 0, "frame_id")?;
        let t = field(path, line, &f, 1, "t")?;
        let mut state = StateVector::zeros();
        for i in 0..9 {
            state[i] = field(path, line, &f, i + 2, "state")?;
        }
        frames.push(TruthSample { frame_id, t, state });
    }
    Ok(GroundTruth { frames })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn diagnostics_to_csv(filter: &str, reports: &[StepReport]) -> String {
    let mut out = String::from(DIAG_HEADER);
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{},{}", r.k, r.t, r.status);
        for i in 0..9 {
            let _ = write!(out, ",{}", opt(r.estimate.map(|s| s[i])));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{}",
            r.trace_p,
            r.trace_q,
            r.trace_r,
            opt(r.d_norm),
            opt(r.d_m2),
            u8::from(r.accepted),
            filter
        );
    }
    out
}

/// A diagnostic CSV reloaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticLog {
    pub filter: String,
    pub reports: Vec<StepReport>,
}

pub fn diagnostics_from_csv(path: &Path, text: &str) -> Result<DiagnosticLog> {
    let mut filter = String::new();
    let mut reports = Vec::new();
    for (line, f) in rows(path, text, DIAG_HEADER)? {
        let status = match f.get(2).copied() {
            Some("uninitialized") => TrackStatus::Uninitialized,
            Some("tracking") => TrackStatus::Tracking,
            Some("lost") => TrackStatus::Lost,
            Some(c) if c.starts_with("coasting(") && c.ends_with(')') => c["coasting(".len()..c.len() - 1]
                .parse()
                .map(TrackStatus::Coasting)
                .map_err(|_| parse_err(path, line, format!("bad coasting count in {c:?}")))?,
            other => return Err(parse_err(path, line, format!("unknown status {other:?}"))),
        };
        let mut values = [None; 9];
        for (i, v) in values.iter_mut().enumerate() {
            *v = opt_field(path, line, &f, 3 + i, "state")?;
        }
        let estimate = if values.iter().all(Option::is_some) {
            Some(StateVector::from_iterator(values.iter().map(|v| v.unwrap_or_default())))
        } else {
            None
        };
        let accepted: u8 = field(path, line, &f, 17, "accepted")?;
        let name: String = field(path, line, &f, 18, "filter")?;
        if filter.is_empty() {
            filter = name;
        } else if filter != name {
            return Err(parse_err(path, line, "mixed filter names in one log"));
        }
        reports.push(StepReport {
            k: field(path, line, &f, 0, "k")?,
            t: field(path, line, &f, 1, "t")?,
            status,
            estimate,
            trace_p: field(path, line, &f, 12, "trace_p")?,
            trace_q: field(path, line, &f, 13, "trace_q")?,
            trace_r: field(path, line, &f, 14, "trace_r")?,
            d_norm: opt_field(path, line, &f, 15, "d_norm")?,
            d_m2: opt_field(path, line, &f, 16, "d_m2")?,
            accepted: accepted != 0,
        });
    }
    Ok(DiagnosticLog { filter, reports })
}

pub fn clusters_to_csv(rows: &[(u64, Vec<ClusterSummary>)]) -> String {
    let mut out = String::from(CLUSTERS_HEADER);
    out.push('\n');
    for (frame_id, clusters) in rows {
        for c in clusters {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                frame_id,
                c.cluster_id,
                c.size,
                c.centroid.x,
                c.centroid.y,
                c.centroid.z,
                opt(c.max_eig),
                u8::from(c.accepted)
            );
        }
    }
    out
}
