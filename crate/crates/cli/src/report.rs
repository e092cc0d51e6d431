//! Machine-readable run artifacts: a schema-versioned JSON report plus CSV
//! tables for bulk numeric output.
//!
//! Floats are serialized with 17 significant digits so identical runs
//! produce byte-identical files; keys are emitted in sorted order. Values
//! that can legitimately be infinite are carried as the strings
//! `"Infinity"` / `"-Infinity"` / `"NaN"` rather than capped numbers.

use std::io::{self, Write};
use std::path::Path;

use serde_json::ser::Formatter;
use serde_json::{Map, Value};

/// JSON number from a float, with non-finite values made explicit.
pub fn num(v: f64) -> Value {
    if v.is_nan() {
        Value::String("NaN".into())
    } else if v.is_infinite() {
        Value::String(if v > 0.0 { "Infinity" } else { "-Infinity" }.into())
    } else {
        serde_json::Number::from_f64(v).map(Value::Number).unwrap()
    }
}

pub fn vec_num(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

/// Formatter printing every float with 17 significant digits.
struct SciFormatter;

impl Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize the report with deterministic formatting and a trailing
/// newline.
pub fn write_report(dir: &Path, report: &Value) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("report.json"))?;
    let mut writer = io::BufWriter::new(file);
    let mut ser = serde_json::Serializer::with_formatter(&mut writer, SciFormatter);
    serde::Serialize::serialize(report, &mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::Other, e))?;
    writer.write_all(b"\n")?;
    writer.flush()
}

/// One CSV table with a header row; numbers at 17 significant digits.
pub fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(name))?;
    let mut w = io::BufWriter::new(file);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

/// Builder for the report envelope shared by every command.
pub fn envelope(command: &str, system: &str, seed: u64, status: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".into(), Value::from(1u32));
    m.insert("command".into(), Value::String(command.into()));
    m.insert("system".into(), Value::String(system.into()));
    m.insert("seed".into(), Value::from(seed));
    m.insert("status".into(), Value::String(status.into()));
    m
}
