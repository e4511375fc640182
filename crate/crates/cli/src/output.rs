//! File formats: trajectory CSV and JSON reports with round-trip-exact
//! floating-point text.

use std::io::{self, Write};

use replab_core::dynamics::Trajectory;
use serde::Serialize;

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trajectory CSV: header `t,x1..xn,p1..pn`, one row per output sample.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> io::Result<()> {
    let n = traj.meta.strategy_count;
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",p{i}"));
    }
    writeln!(w, "{header}")?;
    for k in 0..traj.len() {
        let mut row = format_f64(traj.t[k]);
        for &v in traj.x[k].as_slice() {
            row.push(',');
            row.push_str(&format_f64(v));
        }
        for &v in traj.p[k].as_slice() {
            row.push(',');
            row.push_str(&format_f64(v));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// JSON formatter that writes every float with 17 significant digits.
/// Non-finite values (possible only in degenerate reports) become null.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

/// Serialize a report to JSON text with full-precision floats.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}
