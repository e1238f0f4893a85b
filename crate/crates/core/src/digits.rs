//! Fixed 17-significant-digit rendering of reals for CSV and JSON output.

use std::io;

/// `x` in scientific notation with 17 significant digits; parses back to the
/// same `f64`.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Compact JSON formatter that writes every float with [`fmt_real`].
#[derive(Debug, Default, Clone, Copy)]
pub struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_real(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as one compact JSON object with 17-digit floats.
///
/// Non-finite floats are rejected by the caller's types, not here.
pub fn to_json_sig17<T: serde::Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}
