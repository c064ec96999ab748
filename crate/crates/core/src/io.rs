//! File formats: lab and segment CSVs, raw stream CSV and binary payloads,
//! JSON-lines for segments, and the feature matrix CSV.
//!
//! Numbers are written in Rust's shortest round-trip form, so every
//! reader/writer pair is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cohort::{Biomarker, LabRecord, SegmentMeta};
use crate::features::{FeatureRow, FEATURE_NAMES, N_FEATURES};
use crate::signal::RawPpgStream;
use crate::{Error, Result};

pub const LABS_HEADER: [&str; 4] = ["subject_id", "biomarker", "value", "drawn_at_unix"];
pub const SEGMENTS_HEADER: [&str; 3] = ["subject_id", "segment_id", "median_ts_unix"];
pub const FEATURE_PREFIX: [&str; 5] = ["subject_id", "segment_id", "biomarker", "delta_t_days", "label"];

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: {what} '{field}': {e}")))
}

fn check_header(found: &csv::StringRecord, want: &[&str], file: &str) -> Result<()> {
    let ok = found.len() >= want.len() && want.iter().zip(found.iter()).all(|(w, f)| f.trim() == *w);
    if ok {
        Ok(())
    } else {
        Err(Error::Parse(format!(
            "{file}: expected header starting with {}, found {}",
            want.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_labs<R: Read>(reader: R) -> Result<Vec<LabRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &LABS_HEADER, "labs CSV")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != LABS_HEADER.len() {
            return Err(Error::Parse(format!("line {line}: expected 4 fields, got {}", rec.len())));
        }
        let value = parse_f64(&rec[2], "value", line)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("lab value on line {line}")));
        }
        out.push(LabRecord {
            subject_id: rec[0].to_string(),
            biomarker: rec[1].parse::<Biomarker>()?,
            value,
            drawn_at: parse_f64(&rec[3], "drawn_at_unix", line)?,
        });
    }
    Ok(out)
}

pub fn write_labs<W: Write>(writer: W, labs: &[LabRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LABS_HEADER)?;
    for l in labs {
        w.write_record([l.subject_id.clone(), l.biomarker.to_string(), l.value.to_string(), l.drawn_at.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segments<R: Read>(reader: R) -> Result<Vec<SegmentMeta>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &SEGMENTS_HEADER, "segments CSV")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != SEGMENTS_HEADER.len() {
            return Err(Error::Parse(format!("line {line}: expected 3 fields, got {}", rec.len())));
        }
        out.push(SegmentMeta {
            subject_id: rec[0].to_string(),
            segment_id: rec[1].to_string(),
            median_timestamp: parse_f64(&rec[2], "median_ts_unix", line)?,
        });
    }
    Ok(out)
}

pub fn write_segments<W: Write>(writer: W, segments: &[SegmentMeta]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SEGMENTS_HEADER)?;
    for s in segments {
        w.write_record([s.subject_id.clone(), s.segment_id.clone(), s.median_timestamp.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One stream per row: `subject_id,start_ts_unix,sample_rate,v0,v1,...`.
/// A first line starting with `subject_id` is treated as a header.
pub fn read_streams_csv<R: Read>(reader: R) -> Result<Vec<RawPpgStream>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if i == 0 && rec.get(0).map(str::trim) == Some("subject_id") {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::Parse(format!("line {line}: stream row needs at least 3 fields")));
        }
        let samples = rec
            .iter()
            .skip(3)
            .map(|v| parse_f64(v, "sample", line))
            .collect::<Result<Vec<f64>>>()?;
        let stream = RawPpgStream {
            subject_id: rec[0].to_string(),
            start_timestamp: parse_f64(&rec[1], "start_ts_unix", line)?,
            sample_rate_hz: parse_f64(&rec[2], "sample_rate", line)?,
            samples,
        };
        stream.validate()?;
        out.push(stream);
    }
    Ok(out)
}

pub fn write_streams_csv<W: Write>(writer: W, streams: &[RawPpgStream]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(["subject_id", "start_ts_unix", "sample_rate", "values..."])?;
    for s in streams {
        let mut rec = vec![s.subject_id.clone(), s.start_timestamp.to_string(), s.sample_rate_hz.to_string()];
        rec.extend(s.samples.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Header stored next to a binary stream payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSidecar {
    pub subject_id: String,
    pub start_ts_unix: f64,
    pub sample_rate: f64,
    pub n_samples: usize,
}

/// Sidecar path for a payload: `x.f32` -> `x.json`.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Writes little-endian f32 samples to `payload` and the JSON header beside it.
pub fn write_stream_binary(payload: &Path, stream: &RawPpgStream) -> Result<()> {
    let mut w = create(payload)?;
    for v in &stream.samples {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let side = StreamSidecar {
        subject_id: stream.subject_id.clone(),
        start_ts_unix: stream.start_timestamp,
        sample_rate: stream.sample_rate_hz,
        n_samples: stream.samples.len(),
    };
    std::fs::write(sidecar_path(payload), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_stream_binary(payload: &Path) -> Result<RawPpgStream> {
    let side: StreamSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(payload))?)?;
    let bytes = std::fs::read(payload)?;
    if bytes.len() != 4 * side.n_samples {
        return Err(Error::Parse(format!(
            "{}: {} bytes, sidecar declares {} samples",
            payload.display(),
            bytes.len(),
            side.n_samples
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let stream = RawPpgStream {
        subject_id: side.subject_id,
        start_timestamp: side.start_ts_unix,
        sample_rate_hz: side.sample_rate,
        samples,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn write_jsonl<W: Write, T: Serialize>(writer: W, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn feature_header() -> Vec<&'static str> {
    FEATURE_PREFIX.iter().chain(FEATURE_NAMES.iter()).copied().collect()
}

/// Feature matrix CSV; failed featurizations are written as empty cells.
pub fn write_features<W: Write>(writer: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(feature_header())?;
    for r in rows {
        let mut rec = vec![
            r.subject_id.clone(),
            r.segment_id.clone(),
            r.biomarker.to_string(),
            r.delta_t_days.to_string(),
            r.label.to_string(),
        ];
        match &r.features {
            Some(f) => rec.extend(f.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), N_FEATURES)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let want = feature_header();
    if header.len() != want.len() || header.iter().zip(&want).any(|(h, w)| h.trim() != *w) {
        return Err(Error::Parse("feature CSV header does not match the frozen feature table".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = match rec[4].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Parse(format!("line {line}: label must be 0 or 1, got '{other}'"))),
        };
        let cells: Vec<&str> = rec.iter().skip(FEATURE_PREFIX.len()).collect();
        let features = if cells.iter().all(|c| c.trim().is_empty()) {
            None
        } else {
            let v = cells
                .iter()
                .zip(FEATURE_NAMES)
                .map(|(c, name)| parse_f64(c, name, line))
                .collect::<Result<Vec<f64>>>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("feature value on line {line}")));
            }
            Some(v)
        };
        let delta_t_days = parse_f64(&rec[3], "delta_t_days", line)?;
        if !(delta_t_days >= 0.0) {
            return Err(Error::Parse(format!("line {line}: delta_t_days must be >= 0")));
        }
        out.push(FeatureRow {
            subject_id: rec[0].to_string(),
            segment_id: rec[1].to_string(),
            biomarker: rec[2].parse()?,
            delta_t_days,
            label,
            features,
        });
    }
    Ok(out)
}

/// Opens `path` for reading with the path in the error message.
pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Creates `path` for writing with the path in the error message.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}
