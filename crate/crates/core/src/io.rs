//! CSV layouts for pulses, waveforms, scans, Jacobian tensors and crosstalk
//! matrices. Metadata lines start with `#` and read as `# key: value`.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array2, Array4};

use crate::distortion::CrosstalkTensor;
use crate::error::{validation, Result};

pub type Metadata = Vec<(String, String)>;

fn write_metadata<W: Write>(w: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        if v.is_empty() {
            writeln!(w, "# {k}: ")?;
        }
        for (i, line) in v.lines().enumerate() {
            if i == 0 {
                writeln!(w, "# {k}: {line}")?;
            } else {
                writeln!(w, "#   {line}")?;
            }
        }
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Splits a CSV document into metadata and body.
fn split<R: Read>(r: R) -> Result<(Metadata, String)> {
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(cont) = rest.strip_prefix("   ") {
                if let Some(last) = meta.last_mut() {
                    let (_, v): &mut (String, String) = last;
                    v.push('\n');
                    v.push_str(cont);
                }
            } else if let Some((k, v)) = rest.trim_start().split_once(": ") {
                meta.push((k.to_string(), v.to_string()));
            }
        } else if !line.trim().is_empty() {
            body.push_str(&line);
            body.push('\n');
        }
    }
    Ok((meta, body))
}

fn parse(s: &str, what: &str, row: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| {
        validation(format!(
            "{what}, data row {row}: cannot parse {s:?} as a number"
        ))
    })
}

/// Header row plus numeric rows of a metadata-prefixed CSV document.
fn read_table<R: Read>(r: R, what: &str) -> Result<(Metadata, Vec<String>, Vec<Vec<f64>>)> {
    let (meta, body) = split(r)?;
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = rd.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| parse(s, what, i + 1))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((meta, header, rows))
}

/// Pulse layout: `step`, then one column per channel.
pub fn write_pulse_csv<W: Write>(
    mut w: W,
    values: &Array2<f64>,
    channels: &[&str],
    meta: &[(String, String)],
) -> Result<()> {
    if channels.len() != values.ncols() {
        return Err(validation(format!(
            "{} channel names for {} channels",
            channels.len(),
            values.ncols()
        )));
    }
    write_metadata(&mut w, meta)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(std::iter::once("step").chain(channels.iter().copied()))?;
    for (n, row) in values.rows().into_iter().enumerate() {
        wr.write_record(std::iter::once(n.to_string()).chain(row.iter().map(|&v| fmt(v))))?;
    }
    wr.flush()?;
    Ok(())
}

pub struct PulseTable {
    pub metadata: Metadata,
    pub channels: Vec<String>,
    pub values: Array2<f64>,
}

pub fn read_pulse_csv<R: Read>(r: R) -> Result<PulseTable> {
    let (metadata, header, rows) = read_table(r, "pulse CSV")?;
    if header.first().map(String::as_str) != Some("step") || header.len() < 2 {
        return Err(validation("pulse CSV needs a header `step,<channel>...`"));
    }
    let k = header.len() - 1;
    let mut values = Array2::zeros((rows.len(), k));
    for (n, row) in rows.iter().enumerate() {
        if row.len() != k + 1 {
            return Err(validation(format!(
                "pulse CSV, data row {}: expected {} columns",
                n + 1,
                k + 1
            )));
        }
        if row[0] != n as f64 {
            return Err(validation(format!(
                "pulse CSV, data row {}: step index {} out of order",
                n + 1,
                row[0]
            )));
        }
        values
            .row_mut(n)
            .iter_mut()
            .zip(&row[1..])
            .for_each(|(d, s)| *d = *s);
    }
    Ok(PulseTable {
        metadata,
        channels: header[1..].to_vec(),
        values,
    })
}

/// Waveform layout: `time_s`, then one column per channel.
pub fn write_waveform_csv<W: Write>(
    mut w: W,
    times: &[f64],
    values: &Array2<f64>,
    channels: &[&str],
    meta: &[(String, String)],
) -> Result<()> {
    if times.len() != values.nrows() || channels.len() != values.ncols() {
        return Err(validation(
            "waveform times, values and channel names disagree in shape",
        ));
    }
    write_metadata(&mut w, meta)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(std::iter::once("time_s").chain(channels.iter().copied()))?;
    for (t, row) in times.iter().zip(values.rows()) {
        wr.write_record(std::iter::once(fmt(*t)).chain(row.iter().map(|&v| fmt(v))))?;
    }
    wr.flush()?;
    Ok(())
}

/// Generic numeric table with named columns.
pub fn write_table_csv<W: Write>(
    mut w: W,
    header: &[&str],
    rows: &[Vec<f64>],
    meta: &[(String, String)],
) -> Result<()> {
    write_metadata(&mut w, meta)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(validation("table row length differs from header"));
        }
        wr.write_record(row.iter().map(|&v| fmt(v)))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(r: R) -> Result<(Metadata, Vec<String>, Vec<Vec<f64>>)> {
    read_table(r, "table CSV")
}

/// Rank-4 tensor as `m,l,n,k,value` rows in row-major `(m, l, n, k)` order,
/// with the shape in the metadata.
pub fn write_tensor_csv<W: Write>(
    mut w: W,
    t: &Array4<f64>,
    meta: &[(String, String)],
) -> Result<()> {
    let (m, l, n, k) = t.dim();
    let mut all = meta.to_vec();
    all.push(("shape".into(), format!("{m} {l} {n} {k}")));
    write_metadata(&mut w, &all)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["m", "l", "n", "k", "value"])?;
    for ((a, b, c, d), v) in t.indexed_iter() {
        wr.write_record([
            a.to_string(),
            b.to_string(),
            c.to_string(),
            d.to_string(),
            fmt(*v),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_tensor_csv<R: Read>(r: R) -> Result<Array4<f64>> {
    let (meta, header, rows) = read_table(r, "tensor CSV")?;
    if header != ["m", "l", "n", "k", "value"] {
        return Err(validation("tensor CSV needs the header `m,l,n,k,value`"));
    }
    let shape = meta
        .iter()
        .find(|(k, _)| k == "shape")
        .ok_or_else(|| validation("tensor CSV lacks a `# shape:` line"))?;
    let dims = shape
        .1
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| validation(format!("bad tensor shape {:?}", shape.1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let [m, l, n, k] = dims[..] else {
        return Err(validation(format!(
            "tensor shape needs 4 sizes, got {}",
            dims.len()
        )));
    };
    let mut t = Array4::zeros((m, l, n, k));
    for (i, row) in rows.iter().enumerate() {
        let idx = row[..4].iter().map(|&v| v as usize).collect::<Vec<_>>();
        let slot = t.get_mut((idx[0], idx[1], idx[2], idx[3])).ok_or_else(|| {
            validation(format!(
                "tensor CSV, data row {}: index out of range",
                i + 1
            ))
        })?;
        *slot = row[4];
    }
    Ok(t)
}

/// Crosstalk matrix in block layout: one row per `(subsystem, channel)`
/// seen, one column per `(subsystem, channel)` sent, no header.
pub fn read_crosstalk_csv<R: Read>(
    r: R,
    subsystems: usize,
    channels: usize,
) -> Result<CrosstalkTensor> {
    let (_, body) = split(r)?;
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    let rows = rd
        .records()
        .enumerate()
        .map(|(i, rec)| {
            rec?.iter()
                .map(|s| parse(s, "crosstalk CSV", i + 1))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let size = subsystems * channels;
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(validation(format!("crosstalk CSV must be {size}x{size}")));
    }
    let m = Array2::from_shape_fn((size, size), |(i, j)| rows[i][j]);
    CrosstalkTensor::new(m, subsystems, channels)
}

pub fn write_crosstalk_csv<W: Write>(
    mut w: W,
    chi: &CrosstalkTensor,
    meta: &[(String, String)],
) -> Result<()> {
    write_metadata(&mut w, meta)?;
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in chi.matrix().rows() {
        wr.write_record(row.iter().map(|&v| fmt(v)))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Metadata {
        vec![
            ("version".into(), "v1".into()),
            ("config".into(), "{\n  \"a\": 1\n}".into()),
        ]
    }

    #[test]
    fn pulse_round_trip() {
        let v = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 * 0.1 - j as f64 * 1e-9);
        let mut buf = Vec::new();
        write_pulse_csv(&mut buf, &v, &["x", "y"], &meta()).unwrap();
        let t = read_pulse_csv(buf.as_slice()).unwrap();
        assert_eq!(t.values, v);
        assert_eq!(t.channels, ["x", "y"]);
        assert_eq!(t.metadata, meta());
    }

    #[test]
    fn tensor_round_trip() {
        let t = Array4::from_shape_fn((2, 1, 3, 2), |(a, b, c, d)| {
            (a * 12 + b * 6 + c * 2 + d) as f64 / 7.0
        });
        let mut buf = Vec::new();
        write_tensor_csv(&mut buf, &t, &[]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("0,0,0,0,"));
        assert_eq!(read_tensor_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn bad_number_names_the_row() {
        let err = read_pulse_csv("step,x\n0,1\n1,abc\n".as_bytes())
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn crosstalk_shape_checked() {
        assert!(read_crosstalk_csv("1,0\n0,1\n".as_bytes(), 1, 2).is_ok());
        assert!(read_crosstalk_csv("1,0\n0,1\n".as_bytes(), 2, 2).is_err());
    }
}
