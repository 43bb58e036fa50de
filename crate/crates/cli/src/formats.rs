//! Text and binary interchange formats.
//!
//! Detection file:
//! ```text
//! # detections v1 dim=D
//! frame,x,y,w,h,score,e0,...,e{D-1}
//! 1,1.0000000000000000e-1,...
//! ```
//! Reals are written with 17 significant digits, which round-trips every
//! `f64` exactly. Track and ground-truth files are MOT-style CSV with the
//! header `frame,id,x,y,w,h,score`.
//!
//! Scene file: `# scene v1 seed=S dim=D`, header
//! `id,x,y,w,h,vx,vy,a0..`, one instance per line.
//! View-pair file: `# viewpair v1 dim=D`, header
//! `view,instance_id,x,y,w,h,partner_id,mix_weight,f0..`; `partner_id`
//! and `mix_weight` are empty for unmixed proposals. Correspondence is
//! implied by instance ids.
//!
//! Head file (little-endian): magic `IAHEAD\0\0`, `u32` version, `u32`
//! activation code, `u32` layer count, then per layer `u32 in, u32 out`,
//! then per layer the `out x in` row-major weights followed by the bias,
//! all `f64`.

use std::io::{Read, Write};
use std::path::Path;

use instassoc_core::embed::{Activation, DenseLayer, EmbeddingHead, LossRecord};
use instassoc_core::eval::{MatchReport, TrajectorySet};
use instassoc_core::sim::{Instance, MixRecord, Proposal, Scene, ViewPair};
use instassoc_core::tracker::{Detection, TrackRecord};
use instassoc_core::BBox;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("head file: {0}")]
    Binary(String),
}

impl FormatError {
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// 17 significant digits, enough to parse back to the same `f64`.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

/// Data records of a CSV body with `#` comments; yields `(line, fields)`.
/// The first non-comment record is treated as the column header and must
/// equal `header`.
fn records(text: &str, header: &[String]) -> Result<Vec<(usize, Vec<String>)>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if !seen_header {
            if fields != header {
                return Err(parse_err(line, format!("expected column header `{}`", header.join(","))));
            }
            seen_header = true;
            continue;
        }
        out.push((line, fields));
    }
    if !seen_header {
        return Err(parse_err(1, format!("missing column header `{}`", header.join(","))));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T, FormatError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("field `{name}`: cannot parse `{s}`")))
}

fn finite(line: usize, name: &str, s: &str) -> Result<f64, FormatError> {
    let v: f64 = num(line, name, s)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, format!("field `{name}` is not finite")))
    }
}

/// Parses `# <kind> v1 key=value ...` from the first line.
fn magic_line(text: &str, kind: &str) -> Result<Vec<(String, String)>, FormatError> {
    let first = text.lines().next().unwrap_or("");
    let mut parts = first.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some(kind) {
        return Err(parse_err(1, format!("expected `# {kind} v1 ...` header")));
    }
    match parts.next() {
        Some("v1") => {}
        Some(v) => return Err(parse_err(1, format!("unsupported {kind} format version `{v}`"))),
        None => return Err(parse_err(1, "missing format version")),
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(1, format!("malformed header field `{kv}`")))
        })
        .collect()
}

fn header_value<T: std::str::FromStr>(fields: &[(String, String)], key: &str) -> Result<T, FormatError> {
    let (_, v) = fields
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| parse_err(1, format!("header lacks `{key}=`")))?;
    num(1, key, v)
}

fn columns(fixed: &[&str], prefix: &str, dim: usize) -> Vec<String> {
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|k| format!("{prefix}{k}")))
        .collect()
}

fn check_arity(line: usize, fields: &[String], expected: usize) -> Result<(), FormatError> {
    if fields.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

fn bbox_at(line: usize, f: &[String]) -> Result<BBox, FormatError> {
    let b = BBox::new(
        finite(line, "x", &f[0])?,
        finite(line, "y", &f[1])?,
        finite(line, "w", &f[2])?,
        finite(line, "h", &f[3])?,
    );
    if !b.is_valid() {
        return Err(parse_err(line, "box has non-positive size"));
    }
    Ok(b)
}

// ---- detections ------------------------------------------------------------

const DET_FIXED: [&str; 6] = ["frame", "x", "y", "w", "h", "score"];

pub fn write_detections(dets: &[Detection], dim: usize) -> Result<Vec<u8>, FormatError> {
    let mut w = csv_writer();
    let mut out = format!("# detections v1 dim={dim}\n").into_bytes();
    w.write_record(columns(&DET_FIXED, "e", dim)).expect("in-memory");
    let mut last = 0;
    for d in dets {
        if d.embedding.len() != dim {
            return Err(parse_err(0, format!("detection embedding has {} values, file dim {dim}", d.embedding.len())));
        }
        if d.frame < last {
            return Err(parse_err(0, "detections must be sorted by frame"));
        }
        last = d.frame;
        let mut rec = vec![d.frame.to_string()];
        rec.extend([d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score].map(real));
        rec.extend(d.embedding.iter().map(|&v| real(v)));
        w.write_record(&rec).expect("in-memory");
    }
    out.extend(finish(w));
    Ok(out)
}

/// Detections and their declared embedding dimension.
pub fn read_detections(text: &str) -> Result<(Vec<Detection>, usize), FormatError> {
    let dim: usize = header_value(&magic_line(text, "detections")?, "dim")?;
    let mut dets = Vec::new();
    let mut last = 0u64;
    for (line, f) in records(text, &columns(&DET_FIXED, "e", dim))? {
        check_arity(line, &f, DET_FIXED.len() + dim)?;
        let frame: u64 = num(line, "frame", &f[0])?;
        if frame < last {
            return Err(parse_err(line, format!("frame {frame} after frame {last}")));
        }
        last = frame;
        let score = finite(line, "score", &f[5])?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse_err(line, format!("score {score} is not in [0, 1]")));
        }
        let embedding = f[6..]
            .iter()
            .enumerate()
            .map(|(k, s)| finite(line, &format!("e{k}"), s))
            .collect::<Result<Vec<_>, _>>()?;
        dets.push(Detection {
            frame,
            bbox: bbox_at(line, &f[1..5])?,
            score,
            embedding,
        });
    }
    Ok((dets, dim))
}

/// Groups frame-sorted detections into `(frame, detections)` pairs.
pub fn group_by_frame(dets: Vec<Detection>) -> Vec<(u64, Vec<Detection>)> {
    let mut out: Vec<(u64, Vec<Detection>)> = Vec::new();
    for d in dets {
        match out.last_mut() {
            Some((f, v)) if *f == d.frame => v.push(d),
            _ => out.push((d.frame, vec![d])),
        }
    }
    out
}

// ---- tracks and ground truth ---------------------------------------------

const TRACK_HEADER: [&str; 7] = ["frame", "id", "x", "y", "w", "h", "score"];

pub fn write_tracks(records: &[TrackRecord]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(TRACK_HEADER).expect("in-memory");
    for r in records {
        let mut rec = vec![r.frame.to_string(), r.id.to_string()];
        rec.extend([r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.score].map(real));
        w.write_record(&rec).expect("in-memory");
    }
    finish(w)
}

pub fn read_tracks(text: &str) -> Result<Vec<TrackRecord>, FormatError> {
    let header: Vec<String> = TRACK_HEADER.iter().map(|s| s.to_string()).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (line, f) in records(text, &header)? {
        check_arity(line, &f, TRACK_HEADER.len())?;
        let frame: u64 = num(line, "frame", &f[0])?;
        let id: u64 = num(line, "id", &f[1])?;
        if id == 0 {
            return Err(parse_err(line, "track ids must be positive"));
        }
        if !seen.insert((frame, id)) {
            return Err(parse_err(line, format!("duplicate (frame {frame}, id {id})")));
        }
        out.push(TrackRecord {
            frame,
            id,
            bbox: bbox_at(line, &f[2..6])?,
            score: finite(line, "score", &f[6])?,
        });
    }
    Ok(out)
}

pub fn trajectories(records: &[TrackRecord]) -> Result<TrajectorySet, FormatError> {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.id, r.frame));
    let mut set = TrajectorySet::new();
    for r in sorted {
        set.push(r.id, r.frame, r.bbox)
            .map_err(|e| parse_err(0, e.to_string()))?;
    }
    Ok(set)
}

/// Ground truth in track-file form, score fixed at 1.
pub fn write_ground_truth(gt: &TrajectorySet) -> Vec<u8> {
    let mut rows: Vec<TrackRecord> = gt
        .iter()
        .flat_map(|(id, t)| {
            t.iter().map(move |&(frame, bbox)| TrackRecord {
                frame,
                id,
                bbox,
                score: 1.0,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    write_tracks(&rows)
}

// ---- scenes and view pairs -------------------------------------------------

const SCENE_FIXED: [&str; 7] = ["id", "x", "y", "w", "h", "vx", "vy"];

pub fn write_scene(scene: &Scene) -> Vec<u8> {
    let dim = scene.feature_dim();
    let mut out = format!("# scene v1 seed={} dim={dim}\n", scene.seed).into_bytes();
    let mut w = csv_writer();
    w.write_record(columns(&SCENE_FIXED, "a", dim)).expect("in-memory");
    for i in &scene.instances {
        let mut rec = vec![i.id.to_string()];
        rec.extend([i.bbox.x, i.bbox.y, i.bbox.w, i.bbox.h, i.velocity.0, i.velocity.1].map(real));
        rec.extend(i.appearance.iter().map(|&v| real(v)));
        w.write_record(&rec).expect("in-memory");
    }
    out.extend(finish(w));
    out
}

pub fn read_scene(text: &str) -> Result<Scene, FormatError> {
    let head = magic_line(text, "scene")?;
    let seed: u64 = header_value(&head, "seed")?;
    let dim: usize = header_value(&head, "dim")?;
    let mut instances = Vec::new();
    for (line, f) in records(text, &columns(&SCENE_FIXED, "a", dim))? {
        check_arity(line, &f, SCENE_FIXED.len() + dim)?;
        instances.push(Instance {
            id: num(line, "id", &f[0])?,
            bbox: bbox_at(line, &f[1..5])?,
            velocity: (finite(line, "vx", &f[5])?, finite(line, "vy", &f[6])?),
            appearance: f[7..]
                .iter()
                .map(|s| finite(line, "appearance", s))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(Scene { seed, instances })
}

const PAIR_FIXED: [&str; 8] = ["view", "instance_id", "x", "y", "w", "h", "partner_id", "mix_weight"];

pub fn write_view_pair(pair: &ViewPair) -> Vec<u8> {
    let dim = pair
        .view1
        .iter()
        .chain(&pair.view2)
        .next()
        .map_or(0, |p| p.raw_feature.len());
    let mut out = format!("# viewpair v1 dim={dim}\n").into_bytes();
    let mut w = csv_writer();
    w.write_record(columns(&PAIR_FIXED, "f", dim)).expect("in-memory");
    for p in pair.view1.iter().chain(&pair.view2) {
        let mut rec = vec![p.view_id.to_string(), p.instance_id.to_string()];
        rec.extend([p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h].map(real));
        match p.mix {
            Some(m) => rec.extend([m.partner_id.to_string(), real(m.weight)]),
            None => rec.extend([String::new(), String::new()]),
        }
        rec.extend(p.raw_feature.iter().map(|&v| real(v)));
        w.write_record(&rec).expect("in-memory");
    }
    out.extend(finish(w));
    out
}

pub fn read_view_pair(text: &str) -> Result<ViewPair, FormatError> {
    let dim: usize = header_value(&magic_line(text, "viewpair")?, "dim")?;
    let mut view1 = Vec::new();
    let mut view2: Vec<Proposal> = Vec::new();
    for (line, f) in records(text, &columns(&PAIR_FIXED, "f", dim))? {
        check_arity(line, &f, PAIR_FIXED.len() + dim)?;
        let view_id: u8 = num(line, "view", &f[0])?;
        let mix = match (f[6].as_str(), f[7].as_str()) {
            ("", "") => None,
            (p, w) => Some(MixRecord {
                partner_id: num(line, "partner_id", p)?,
                weight: finite(line, "mix_weight", w)?,
            }),
        };
        let p = Proposal {
            instance_id: num(line, "instance_id", &f[1])?,
            view_id,
            bbox: bbox_at(line, &f[2..6])?,
            raw_feature: f[8..].iter().map(|s| finite(line, "feature", s)).collect::<Result<_, _>>()?,
            mix,
        };
        match view_id {
            1 if view2.is_empty() => view1.push(p),
            2 => view2.push(p),
            _ => return Err(parse_err(line, format!("view {view_id} out of order or not in {{1, 2}}"))),
        }
    }
    let correspondence = view1
        .iter()
        .map(|a| view2.iter().position(|b| b.instance_id == a.instance_id))
        .collect();
    Ok(ViewPair {
        view1,
        view2,
        correspondence,
    })
}

// ---- head ----------------------------------------------------------------

const HEAD_MAGIC: &[u8; 8] = b"IAHEAD\0\0";
const HEAD_VERSION: u32 = 1;

pub fn write_head(head: &EmbeddingHead) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HEAD_MAGIC);
    for v in [HEAD_VERSION, head.activation.code(), head.layers.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &head.layers {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
    }
    for l in &head.layers {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_head(mut bytes: &[u8]) -> Result<EmbeddingHead, FormatError> {
    let bin = |m: &str| FormatError::Binary(m.to_string());
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic).map_err(|_| bin("truncated magic"))?;
    if &magic != HEAD_MAGIC {
        return Err(bin("bad magic bytes"));
    }
    let mut u32_at = |what: &str| -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        bytes.read_exact(&mut b).map_err(|_| bin(&format!("truncated {what}")))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = u32_at("version")?;
    if version != HEAD_VERSION {
        return Err(bin(&format!("unsupported version {version}")));
    }
    let code = u32_at("activation")?;
    let activation = Activation::from_code(code).ok_or_else(|| bin(&format!("unknown activation code {code}")))?;
    let n = u32_at("layer count")? as usize;
    if n == 0 || n > 64 {
        return Err(bin(&format!("implausible layer count {n}")));
    }
    let dims = (0..n)
        .map(|_| Ok((u32_at("layer shape")? as usize, u32_at("layer shape")? as usize)))
        .collect::<Result<Vec<_>, FormatError>>()?;
    let mut layers = Vec::with_capacity(n);
    for (i, o) in dims {
        let mut vals = vec![0.0; i * o + o];
        for v in &mut vals {
            let mut b = [0u8; 8];
            bytes.read_exact(&mut b).map_err(|_| bin("truncated parameters"))?;
            *v = f64::from_le_bytes(b);
        }
        let bias = vals.split_off(i * o);
        layers.push(DenseLayer {
            in_dim: i,
            out_dim: o,
            weight: vals,
            bias,
        });
    }
    if !bytes.is_empty() {
        return Err(bin("trailing bytes after parameters"));
    }
    EmbeddingHead::new(layers, activation).map_err(|e| bin(&e.to_string()))
}

// ---- reports ---------------------------------------------------------------

pub fn write_loss_csv(history: &[LossRecord]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["epoch", "batch", "total", "mean", "anchors", "learning_rate"])
        .expect("in-memory");
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.batch.to_string(),
            real(r.total),
            real(r.mean),
            r.anchors.to_string(),
            real(r.learning_rate),
        ])
        .expect("in-memory");
    }
    finish(w)
}

pub const METRICS_HEADER: [&str; 8] = [
    "label", "idf1", "idtp", "idfp", "idfn", "id_switches", "assoc_accuracy", "sequences",
];

pub fn metrics_row(label: &str, r: &MatchReport) -> Vec<String> {
    vec![
        label.to_string(),
        real(r.idf1),
        r.idtp.to_string(),
        r.idfp.to_string(),
        r.idfn.to_string(),
        r.id_switches.to_string(),
        real(r.assoc_accuracy),
        r.per_sequence.len().to_string(),
    ]
}

pub fn write_metrics_csv(rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(METRICS_HEADER).expect("in-memory");
    for r in rows {
        w.write_record(r).expect("in-memory");
    }
    finish(w)
}

/// Human-readable report.
pub fn write_report(r: &MatchReport) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "IDF1            {:.6}", r.idf1).expect("in-memory");
    writeln!(out, "IDTP            {}", r.idtp).expect("in-memory");
    writeln!(out, "IDFP            {}", r.idfp).expect("in-memory");
    writeln!(out, "IDFN            {}", r.idfn).expect("in-memory");
    writeln!(out, "ID switches     {}", r.id_switches).expect("in-memory");
    writeln!(out, "Assoc accuracy  {:.6}", r.assoc_accuracy).expect("in-memory");
    for (k, s) in r.per_sequence.iter().enumerate() {
        writeln!(
            out,
            "sequence {k}: idf1 {:.6} switches {} links {}/{}",
            s.idf1(),
            s.id_switches,
            s.correct_links,
            s.links
        )
        .expect("in-memory");
    }
    out
}
