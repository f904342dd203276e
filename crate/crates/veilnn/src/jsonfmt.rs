//! JSON rendering shared by every artifact writer.
//!
//! All floating-point numbers are printed in scientific form with 17
//! significant digits — enough to round-trip any finite f64 bit pattern
//! exactly — so two runs that compute the same values emit byte-identical
//! files, and a parsed file reproduces the original floats to the bit.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::Result;

/// `serde_json` formatter that renders every f64 as `d.dddddddddddddddde±x`.
/// Non-finite values never reach it: `serde_json` maps them to `null` before
/// calling the formatter.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sig17Formatter;

impl Formatter for Sig17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Compact JSON with 17-significant-digit floats.
pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn to_writer<W: Write, T: Serialize>(writer: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, Sig17Formatter);
    value.serialize(&mut ser)?;
    Ok(())
}

/// One record as a JSONL line (value + newline).
pub fn write_jsonl_line<W: Write, T: Serialize>(mut writer: W, value: &T) -> Result<()> {
    to_writer(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_to_the_exact_bit_pattern() {
        let cases = [
            0.1,
            1.0 / 3.0,
            -2.0 / 7.0,
            1e-300,
            6.022_140_76e23,
            f64::MIN_POSITIVE,
            f64::MAX,
            -0.0,
            1.0,
        ];
        for v in cases {
            let s = to_string(&v).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} rendered as {s}");
        }
    }

    #[test]
    fn rendering_is_fixed_scientific_with_17_digits() {
        assert_eq!(to_string(&0.1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(to_string(&1.0).unwrap(), "1.0000000000000000e0");
        assert_eq!(to_string(&-0.5).unwrap(), "-5.0000000000000000e-1");
    }

    #[test]
    fn integers_and_strings_are_untouched() {
        #[derive(Serialize)]
        struct Row {
            epoch: usize,
            loss: f64,
            tag: &'static str,
        }
        let s = to_string(&Row { epoch: 3, loss: 0.25, tag: "ok" }).unwrap();
        assert_eq!(s, r#"{"epoch":3,"loss":2.5000000000000000e-1,"tag":"ok"}"#);
    }

    #[test]
    fn jsonl_lines_end_with_a_newline() {
        let mut buf = Vec::new();
        write_jsonl_line(&mut buf, &serde_json::json!({"a": 1})).unwrap();
        write_jsonl_line(&mut buf, &serde_json::json!({"a": 2})).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"a\":1}\n{\"a\":2}\n");
    }
}
