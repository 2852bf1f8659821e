//! File formats.
//!
//! * TNS3: `b"TNS3"`, `u32` version (1), `u32` d1, d2, d3, then
//!   `d1 d2 d3` little-endian `f64` in canonical order (`j` fastest, `l`
//!   slowest).
//! * Observations: JSON lines, a header `{dims, n, sigma_xi, seed,
//!   truth_ref}` followed by one `{j, k, l, y}` record per observation.
//! * CSV tensors: one frontal slice per file, or long format `j,k,l,value`.
//!
//! Every index in a file is one-based.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::TraceRow;
use crate::sampling::{Observation, ObservationSet};
use crate::tensor::Tensor3;
use crate::tsvd::TsvdFactors;

pub const TNS3_MAGIC: &[u8; 4] = b"TNS3";
pub const TNS3_VERSION: u32 = 1;
/// Version written on the first line of every exported CSV table.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn write_tns3_to<W: Write>(mut w: W, t: &Tensor3) -> Result<()> {
    w.write_all(TNS3_MAGIC)?;
    w.write_all(&TNS3_VERSION.to_le_bytes())?;
    for d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tns3_from<R: Read>(mut r: R) -> Result<Tensor3> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if &word != TNS3_MAGIC {
        return Err(Error::Format("missing TNS3 magic".into()));
    }
    let mut next_u32 = || -> Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32()?;
    if version != TNS3_VERSION {
        return Err(Error::Format(format!("unsupported TNS3 version {version}")));
    }
    let dims = [next_u32()? as usize, next_u32()? as usize, next_u32()? as usize];
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    let len = dims[0] * dims[1] * dims[2];
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated TNS3 payload, expected {len} values")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after TNS3 payload".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor3::from_vec(dims, data)
}

pub fn write_tns3(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_tns3_to(BufWriter::new(File::create(path)?), t)
}

pub fn read_tns3(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tns3_from(BufReader::new(File::open(path)?))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} '{field}'")))
}

/// One `d1 x d2` frontal slice per reader, in slice order.
pub fn read_csv_slices<R: Read>(readers: Vec<R>) -> Result<Tensor3> {
    let mut slices = Vec::with_capacity(readers.len());
    for (l, r) in readers.into_iter().enumerate() {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in csv_reader(r).records() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .map(|f| parse_f64(f, &format!("value in slice {}", l + 1)))
                    .collect::<Result<_>>()?,
            );
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Format(format!("slice {} is empty or ragged", l + 1)));
        }
        slices.push(faer::Mat::from_fn(rows.len(), width, |j, k| rows[j][k]));
    }
    if slices.is_empty() {
        return Err(Error::Format("no slice files".into()));
    }
    Tensor3::from_frontal_slices(&slices)
}

/// Long-format `j,k,l,value` rows (one-based). A non-numeric first row is
/// treated as a header. Dimensions are inferred from the largest indices
/// unless given; every entry must appear exactly once.
pub fn read_csv_long<R: Read>(r: R, dims: Option<[usize; 3]>) -> Result<Tensor3> {
    let mut items = Vec::new();
    for (line, rec) in csv_reader(r).records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Format(format!("line {}: expected 4 fields", line + 1)));
        }
        let idx: std::result::Result<Vec<usize>, _> = (0..3).map(|c| rec[c].parse::<usize>()).collect();
        let idx = match idx {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(_) => return Err(Error::Format(format!("line {}: bad index", line + 1))),
        };
        if idx.contains(&0) {
            return Err(Error::Format(format!("line {}: indices are one-based", line + 1)));
        }
        items.push(([idx[0] - 1, idx[1] - 1, idx[2] - 1], parse_f64(&rec[3], "value")?));
    }
    let dims = dims.unwrap_or_else(|| {
        let mut d = [0; 3];
        for (i, _) in &items {
            for a in 0..3 {
                d[a] = d[a].max(i[a] + 1);
            }
        }
        d
    });
    if dims.contains(&0) {
        return Err(Error::Format("no entries".into()));
    }
    let mut data = vec![f64::NAN; dims.iter().product()];
    for ([j, k, l], v) in items {
        if j >= dims[0] || k >= dims[1] || l >= dims[2] {
            return Err(Error::Format(format!("index ({}, {}, {}) out of range", j + 1, k + 1, l + 1)));
        }
        let off = j + dims[0] * (k + dims[1] * l);
        if !data[off].is_nan() {
            return Err(Error::Format(format!("duplicate entry ({}, {}, {})", j + 1, k + 1, l + 1)));
        }
        data[off] = v;
    }
    if let Some(off) = data.iter().position(|v| v.is_nan()) {
        let j = off % dims[0];
        let k = (off / dims[0]) % dims[1];
        let l = off / (dims[0] * dims[1]);
        return Err(Error::Format(format!("missing entry ({}, {}, {})", j + 1, k + 1, l + 1)));
    }
    Tensor3::from_vec(dims, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ObsHeader {
    dims: [usize; 3],
    n: usize,
    sigma_xi: f64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_ref: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct ObsRecord {
    j: usize,
    k: usize,
    l: usize,
    y: f64,
}

pub fn write_observations_to<W: Write>(mut w: W, obs: &ObservationSet) -> Result<()> {
    let header = ObsHeader {
        dims: obs.dims,
        n: obs.n(),
        sigma_xi: obs.sigma_xi,
        seed: obs.seed,
        truth_ref: obs.truth_ref.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for o in &obs.entries {
        let rec = ObsRecord {
            j: o.index[0] + 1,
            k: o.index[1] + 1,
            l: o.index[2] + 1,
            y: o.y,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations_from<R: BufRead>(r: R) -> Result<ObservationSet> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Format("empty observation file".into()))?;
    let header: ObsHeader = serde_json::from_str(&first?)?;
    let mut entries = Vec::with_capacity(header.n);
    for (line, text) in lines {
        let rec: ObsRecord = serde_json::from_str(&text?)
            .map_err(|e| Error::Format(format!("line {}: {e}", line + 1)))?;
        if rec.j == 0 || rec.k == 0 || rec.l == 0 {
            return Err(Error::Format(format!("line {}: indices are one-based", line + 1)));
        }
        entries.push(Observation {
            index: [rec.j - 1, rec.k - 1, rec.l - 1],
            y: rec.y,
        });
    }
    if entries.len() != header.n {
        return Err(Error::Format(format!(
            "header announces {} observations, found {}",
            header.n,
            entries.len()
        )));
    }
    let mut obs = ObservationSet::new(header.dims, entries, header.sigma_xi, header.seed)?;
    obs.truth_ref = header.truth_ref;
    Ok(obs)
}

pub fn write_observations(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    write_observations_to(BufWriter::new(File::create(path)?), obs)
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    read_observations_from(BufReader::new(File::open(path)?))
}

/// JSON sidecar of a factor export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSidecar {
    pub r: usize,
    pub tol: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Writes `<stem>_U.tns3`, `<stem>_S.tns3`, `<stem>_V.tns3` and
/// `<stem>.json` into `dir`.
pub fn write_factors(dir: impl AsRef<Path>, stem: &str, f: &TsvdFactors, tol: f64) -> Result<()> {
    let dir = dir.as_ref();
    write_tns3(dir.join(format!("{stem}_U.tns3")), &f.u)?;
    write_tns3(dir.join(format!("{stem}_S.tns3")), &f.s)?;
    write_tns3(dir.join(format!("{stem}_V.tns3")), &f.v)?;
    let (lambda_min, lambda_max) = f.lambda_range();
    let sidecar = FactorSidecar {
        r: f.rank,
        tol,
        lambda_min,
        lambda_max,
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// CSV writer whose first line is `# schema_version=1`.
pub fn csv_table<W: Write>(mut w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    writeln!(w, "# schema_version={CSV_SCHEMA_VERSION}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    let mut out = csv_table(w, &["iteration", "objective", "step"])?;
    for row in trace {
        out.serialize((row.iteration, row.objective, row.step))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a table written by [`csv_table`], returning the header and rows.
pub fn read_csv_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}
