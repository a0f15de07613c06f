//! File formats: sample sets (CSV, JSONL), policies (single-row CSV),
//! instances (JSON) and distribution tables (CSV).
//!
//! Floats are written with Rust's shortest round-trip formatting.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::distributions::{CorrelatedSource, SampleSet};
use crate::dp_policy::{Price, PricePolicy};
use crate::error::{Error, Result};

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("not a number: {token:?}") })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Parse { line, msg: format!("value {v} outside [0, 1]") });
    }
    Ok(v)
}

fn push_row(values: &mut Vec<f64>, width: &mut Option<usize>, row: Vec<f64>, line: usize) -> Result<()> {
    match *width {
        None => *width = Some(row.len()),
        Some(w) if w != row.len() => {
            return Err(Error::Parse { line, msg: format!("expected {w} columns, found {}", row.len()) })
        }
        _ => {}
    }
    values.extend(row);
    Ok(())
}

fn finish(values: Vec<f64>, width: Option<usize>) -> Result<SampleSet> {
    match width {
        Some(n) => SampleSet::from_flat(n, values),
        None => Err(Error::EmptySampleSet),
    }
}

/// Headerless CSV, one trajectory per row.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let row = rec.iter().map(|tok| parse_value(tok, line)).collect::<Result<Vec<_>>>()?;
        push_row(&mut values, &mut width, row, line)?;
    }
    finish(values, width)
}

/// One JSON array of reals per line; blank lines are skipped.
pub fn read_samples_jsonl<R: Read>(reader: R) -> Result<SampleSet> {
    let mut values = Vec::new();
    let mut width = None;
    for (idx, text) in BufReader::new(reader).lines().enumerate() {
        let line = idx + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> =
            serde_json::from_str(&text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if let Some(bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parse { line, msg: format!("value {bad} outside [0, 1]") });
        }
        push_row(&mut values, &mut width, row, line)?;
    }
    finish(values, width)
}

pub fn write_samples_csv<W: Write>(s: &SampleSet, mut w: W) -> Result<()> {
    for row in s.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_samples_jsonl<W: Write>(s: &SampleSet, mut w: W) -> Result<()> {
    for row in s.rows() {
        let line = serde_json::to_string(row).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"))
}

/// Format chosen by extension: `.jsonl`/`.ndjson`, otherwise CSV.
pub fn load_samples(path: &Path) -> Result<SampleSet> {
    let file = fs::File::open(path)?;
    if is_jsonl(path) {
        read_samples_jsonl(file)
    } else {
        read_samples_csv(file)
    }
}

pub fn save_samples(s: &SampleSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    if is_jsonl(path) {
        write_samples_jsonl(s, &mut buf)?;
    } else {
        write_samples_csv(s, &mut buf)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// A policy is one CSV row of `n` prices, each a decimal or `REJECT`.
pub fn parse_policy(text: &str) -> Result<PricePolicy> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (idx, line) = lines.next().ok_or(Error::Empty("policy"))?;
    if let Some((extra, _)) = lines.next() {
        return Err(Error::Parse { line: extra + 1, msg: "policy file must hold a single row".into() });
    }
    let prices = line
        .split(',')
        .map(|tok| tok.parse::<Price>().map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    PricePolicy::new(prices)
}

pub fn format_policy(p: &PricePolicy) -> String {
    let cells: Vec<String> = p.prices().iter().map(|x| x.to_string()).collect();
    cells.join(",") + "\n"
}

pub fn load_policy(path: &Path) -> Result<PricePolicy> {
    parse_policy(&fs::read_to_string(path)?)
}

pub fn save_policy(p: &PricePolicy, path: &Path) -> Result<()> {
    fs::write(path, format_policy(p))?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<CorrelatedSource> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}

pub fn save_instance(src: &CorrelatedSource, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(src).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Long-format table `component,weight,buyer,value,prob` with 1-based buyers.
pub fn write_distribution_table<W: Write>(src: &CorrelatedSource, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(["component", "weight", "buyer", "value", "prob"]).map_err(io_err)?;
    for (c, (weight, pd)) in src.components().into_iter().enumerate() {
        for (i, d) in pd.marginals().iter().enumerate() {
            for (v, p) in d.iter() {
                out.write_record([c.to_string(), weight.to_string(), (i + 1).to_string(), v.to_string(), p.to_string()])
                    .map_err(io_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiscreteDist, ProductDist};

    #[test]
    fn csv_round_trip() {
        let s = SampleSet::from_rows(vec![vec![0.1, 0.25], vec![1.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0.1,0.25\n1,0\n");
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = SampleSet::from_rows(vec![vec![0.3], vec![0.7]]).unwrap();
        let mut buf = Vec::new();
        write_samples_jsonl(&s, &mut buf).unwrap();
        assert_eq!(read_samples_jsonl(&buf[..]).unwrap(), s);
    }

    #[test]
    fn loader_rejects_ragged_and_out_of_range() {
        assert!(matches!(read_samples_csv("0.1,0.2\n0.3\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_samples_csv("0.1,1.5\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_samples_csv("".as_bytes()), Err(Error::EmptySampleSet)));
        assert!(matches!(read_samples_jsonl("[0.1]\n[0.2, 0.3]\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_samples_jsonl("[-0.1]\n".as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn policy_text() {
        let p = parse_policy("0.5,REJECT,0\n").unwrap();
        assert_eq!(p.prices(), &[Price::Offer(0.5), Price::Reject, Price::Offer(0.0)]);
        assert_eq!(format_policy(&p), "0.5,REJECT,0\n");
        assert!(parse_policy("0.5\n0.6\n").is_err());
        assert!(parse_policy("abc").is_err());
        assert!(parse_policy("").is_err());
    }

    #[test]
    fn table_lists_every_support_point() {
        let pd = ProductDist::new(vec![
            DiscreteDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap(),
            DiscreteDist::point_mass(0.25).unwrap(),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_distribution_table(&pd.into(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "component,weight,buyer,value,prob\n0,1,1,0,0.5\n0,1,1,1,0.5\n0,1,2,0.25,1\n");
    }
}
