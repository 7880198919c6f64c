use std::io::Write;
use std::path::Path;

use super::{io_err, CellRecord, CellStatus, RegionMap, SweepError};

pub const CSV_HEADER: &str = "param1,param2,status,k_min,score,iters,ms";

/// `v` with 12 significant digits, using the shortest decimal that reads
/// back to the rounded value.
pub fn fmt12(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let r: f64 = format!("{v:.11e}").parse().expect("float syntax");
    let a = r.abs();
    if (1e-5..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// `v` rounded to what the CSV stores; idempotent.
pub fn quantize(v: f64) -> f64 {
    fmt12(v).parse().expect("float syntax")
}

pub fn render_csv(map: &RegionMap) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in &map.records {
        w.write_record([
            fmt12(r.param1),
            fmt12(r.param2),
            r.status.as_str().to_string(),
            r.k_min.map(|k| k.to_string()).unwrap_or_default(),
            r.score.map(fmt12).unwrap_or_default(),
            r.iters.to_string(),
            r.ms.map(|m| m.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

/// Replaces `path` by `bytes` through a sibling temporary file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn emit_csv(map: &RegionMap, path: &Path) -> Result<(), SweepError> {
    write_atomic(path, render_csv(map).as_bytes())
}

/// Parses a region CSV. A final line without its newline is an interrupted
/// write and is dropped; any other malformed line is an error.
pub fn parse_csv(text: &str, path: &Path) -> Result<RegionMap, SweepError> {
    let corrupt = |line: usize, reason: String| SweepError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => return Err(corrupt(1, format!("unexpected header {h:?}"))),
        None => return Ok(RegionMap::default()),
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(complete.as_bytes());
    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate().skip(1) {
        let line = n + 1;
        let row = row.map_err(|e| corrupt(line, e.to_string()))?;
        if row.len() != 7 {
            return Err(corrupt(line, format!("expected 7 fields, found {}", row.len())));
        }
        let float = |i: usize| -> Result<f64, SweepError> {
            row[i].parse().map_err(|_| corrupt(line, format!("bad number {:?}", &row[i])))
        };
        let opt = |i: usize| -> Result<Option<u64>, SweepError> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                row[i]
                    .parse()
                    .map(Some)
                    .map_err(|_| corrupt(line, format!("bad integer {:?}", &row[i])))
            }
        };
        let status = CellStatus::parse(&row[2]).ok_or_else(|| corrupt(line, format!("bad status {:?}", &row[2])))?;
        let k_min = opt(3)?.map(|k| k as usize);
        if (status == CellStatus::Cycle) != k_min.is_some() {
            return Err(corrupt(line, "k_min must be set exactly for cycle cells".into()));
        }
        records.push(CellRecord {
            param1: float(0)?,
            param2: float(1)?,
            status,
            k_min,
            score: if row[4].is_empty() { None } else { Some(float(4)?) },
            iters: opt(5)?.ok_or_else(|| corrupt(line, "missing iteration count".into()))? as usize,
            ms: opt(6)?,
        });
    }
    Ok(RegionMap { records })
}
