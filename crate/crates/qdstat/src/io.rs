//! File formats: timestamp streams (binary and CSV), correlation histograms,
//! model curves, decay histograms and fit results.
//!
//! All CSV files are comma separated with `.` decimals, LF line endings and a
//! header naming each column with its unit. Floats are written in Rust's
//! shortest round-trip form, so parsing a file back gives identical values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use qdstat_core::correlator::{CorrelationHistogram, DecayHistogram, NormalizedHistogram};
use qdstat_core::fit::FitResult;
use qdstat_core::sim::{Channel, LineTag, PhotonRecord};

pub const MAGIC: &[u8; 4] = b"QDTS";
pub const FORMAT_VERSION: u8 = 1;
const RECORD_BYTES: usize = 10;
const FS_PER_PS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampFormat {
    Binary,
    Csv,
}

fn to_fs(time_ps: f64) -> Result<u64> {
    ensure!(time_ps.is_finite() && time_ps >= 0.0, "timestamp {time_ps} ps cannot be stored");
    let fs = (time_ps * FS_PER_PS).round();
    ensure!(fs < u64::MAX as f64, "timestamp {time_ps} ps overflows");
    Ok(fs as u64)
}

fn record_from(time_fs: u64, channel: u8, line: u8) -> Result<PhotonRecord> {
    let channel = Channel::from_index(channel).with_context(|| format!("unknown channel {channel}"))?;
    Ok(PhotonRecord { time_ps: time_fs as f64 / FS_PER_PS, channel, line: LineTag::from_byte(line) })
}

/// `QDTS`, version byte, then `{u64 time_fs, u8 channel, u8 line}` little
/// endian per record. Times are rounded to whole femtoseconds.
pub fn write_timestamps_binary<W: Write>(mut w: W, records: &[PhotonRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    for r in records {
        let mut buf = [0u8; RECORD_BYTES];
        buf[..8].copy_from_slice(&to_fs(r.time_ps)?.to_le_bytes());
        buf[8] = r.channel.index() as u8;
        buf[9] = r.line.to_byte();
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_timestamps_binary<R: Read>(mut r: R) -> Result<Vec<PhotonRecord>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    ensure!(bytes.len() >= 5 && &bytes[..4] == MAGIC, "not a QDTS timestamp file");
    ensure!(bytes[4] == FORMAT_VERSION, "unsupported QDTS version {}", bytes[4]);
    let body = &bytes[5..];
    ensure!(body.len() % RECORD_BYTES == 0, "truncated record at byte {}", 5 + body.len() / RECORD_BYTES * RECORD_BYTES);
    body.chunks_exact(RECORD_BYTES)
        .map(|c| {
            let t = u64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            record_from(t, c[8], c[9])
        })
        .collect()
}

/// Text form with header `time_fs,channel,line`; channel is 0 (A) or 1 (B),
/// line is the line number or 255 for a dark count.
pub fn write_timestamps_csv<W: Write>(mut w: W, records: &[PhotonRecord]) -> Result<()> {
    writeln!(w, "time_fs,channel,line")?;
    for r in records {
        writeln!(w, "{},{},{}", to_fs(r.time_ps)?, r.channel.index(), r.line.to_byte())?;
    }
    Ok(())
}

pub fn read_timestamps_csv<R: Read>(r: R) -> Result<Vec<PhotonRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    ensure!(
        headers.iter().collect::<Vec<_>>() == ["time_fs", "channel", "line"],
        "expected header time_fs,channel,line"
    );
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |j: usize| -> Result<&str> { row.get(j).with_context(|| format!("row {}: missing column", i + 2)) };
        let t: u64 = field(0)?.parse().with_context(|| format!("row {}: bad time", i + 2))?;
        let c: u8 = field(1)?.parse().with_context(|| format!("row {}: bad channel", i + 2))?;
        let l: u8 = field(2)?.parse().with_context(|| format!("row {}: bad line", i + 2))?;
        out.push(record_from(t, c, l)?);
    }
    Ok(out)
}

pub fn write_timestamps(path: &Path, records: &[PhotonRecord], format: TimestampFormat) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        TimestampFormat::Binary => write_timestamps_binary(&mut w, records)?,
        TimestampFormat::Csv => write_timestamps_csv(&mut w, records)?,
    }
    w.flush()?;
    Ok(())
}

/// Read either format, recognizing the binary one by its magic bytes.
pub fn read_timestamps(path: &Path) -> Result<Vec<PhotonRecord>> {
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let records = if bytes.starts_with(MAGIC) {
        read_timestamps_binary(&bytes[..])
    } else {
        read_timestamps_csv(&bytes[..])
    };
    records.with_context(|| format!("reading {}", path.display()))
}

/// Histogram with header `tau_ps,counts` and, when `normalized` is given,
/// `g2,g2_err` columns.
pub fn write_histogram_csv<W: Write>(
    mut w: W,
    h: &CorrelationHistogram,
    normalized: Option<&NormalizedHistogram>,
) -> Result<()> {
    let centers = h.bin_centers();
    match normalized {
        None => {
            writeln!(w, "tau_ps,counts")?;
            for (t, c) in centers.iter().zip(&h.counts) {
                writeln!(w, "{t},{c}")?;
            }
        }
        Some(n) => {
            ensure!(n.len() == h.counts.len(), "normalized histogram does not match counts");
            writeln!(w, "tau_ps,counts,g2,g2_err")?;
            for i in 0..centers.len() {
                writeln!(w, "{},{},{},{}", centers[i], h.counts[i], n.g2[i], n.g2_err[i])?;
            }
        }
    }
    Ok(())
}

/// Columns of a numeric CSV file, keyed by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let i = self
            .headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column {name} (have {})", self.headers.join(",")))?;
        Ok(&self.columns[i])
    }

    pub fn has(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_table<R: Read>(r: R) -> Result<Table> {
    let mut reader = csv::Reader::from_reader(r);
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        ensure!(row.len() == headers.len(), "row {}: {} fields, expected {}", i + 2, row.len(), headers.len());
        for (j, v) in row.iter().enumerate() {
            let x: f64 = v.trim().parse().with_context(|| format!("row {}: cannot parse {v:?}", i + 2))?;
            columns[j].push(x);
        }
    }
    Ok(Table { headers, columns })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_table(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// A normalized histogram written by [`write_histogram_csv`].
pub fn read_normalized(path: &Path) -> Result<NormalizedHistogram> {
    let t = read_table_file(path)?;
    if !t.has("g2") {
        bail!("{} has no g2 column; correlate with --normalize", path.display());
    }
    Ok(NormalizedHistogram {
        tau_ps: t.column("tau_ps")?.to_vec(),
        g2: t.column("g2")?.to_vec(),
        g2_err: t.column("g2_err")?.to_vec(),
    })
}

/// Write named columns of equal length.
pub fn write_columns<W: Write>(mut w: W, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    ensure!(headers.len() == columns.len(), "header/column count mismatch");
    let n = columns.first().map_or(0, |c| c.len());
    ensure!(columns.iter().all(|c| c.len() == n), "columns differ in length");
    writeln!(w, "{}", headers.join(","))?;
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_f64(c[i])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Shortest round-trip decimal; keeps the sign of negative zero.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 && x.is_sign_negative() {
        "-0".to_string()
    } else {
        format!("{x}")
    }
}

/// Decay histogram, header `t_ps` then `counts_line<k>` per line and
/// `counts_dark` if dark counts were recorded. Only bins lying wholly inside
/// the period are written.
pub fn write_decay_csv<W: Write>(mut w: W, h: &DecayHistogram) -> Result<()> {
    let tags: Vec<LineTag> = h.lines.keys().copied().collect();
    let mut header = vec!["t_ps".to_string()];
    for t in &tags {
        header.push(match t {
            LineTag::Line(k) => format!("counts_line{k}"),
            LineTag::DarkCount => "counts_dark".to_string(),
        });
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..h.complete_bins() {
        let mut row = vec![fmt_f64(h.bin_center(i))];
        for t in &tags {
            row.push(h.lines[t][i].to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// One `name estimate std_error` line per parameter, then summary lines.
pub fn write_fit_text<W: Write>(mut w: W, r: &FitResult) -> Result<()> {
    for i in 0..r.names.len() {
        writeln!(w, "{} {} {}", r.names[i], r.values[i], r.std_errors[i])?;
    }
    writeln!(w, "# residual_norm {}", r.residual_norm)?;
    writeln!(w, "# reduced_chi2 {}", r.reduced_chi2())?;
    writeln!(w, "# converged {}", r.converged)?;
    writeln!(w, "# iterations {}", r.iterations)?;
    Ok(())
}

/// Header `parameter,estimate,std_error`.
pub fn write_fit_csv<W: Write>(mut w: W, r: &FitResult) -> Result<()> {
    writeln!(w, "parameter,estimate,std_error")?;
    for i in 0..r.names.len() {
        writeln!(w, "{},{},{}", r.names[i], r.values[i], r.std_errors[i])?;
    }
    Ok(())
}
