//! Line-oriented text serialization for fitted artifacts.
//!
//! Serialized pipelines and models are plain UTF-8 text: a format-version
//! line followed by whitespace-separated tagged records. Floats are written
//! in scientific notation with 17 significant digits, which round-trips any
//! `f64` exactly.

use crate::error::Error;
use crate::Result;

/// Formats an `f64` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_floats(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

pub fn write_usizes(out: &mut String, tag: &str, values: &[usize]) {
    out.push_str(tag);
    for v in values {
        out.push(' ');
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

/// Cursor over the lines of a serialized artifact.
pub struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Lines { iter: text.lines().enumerate() }
    }

    /// Next non-empty line, split into whitespace-separated fields.
    pub fn next_record(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (lineno, line) in self.iter.by_ref() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !fields.is_empty() {
                return Ok((lineno + 1, fields));
            }
        }
        Err(Error::Format("unexpected end of file".into()))
    }

    /// Consumes a record and checks its leading tag.
    pub fn expect_tag(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let (lineno, fields) = self.next_record()?;
        if fields[0] != tag {
            return Err(Error::Format(format!(
                "line {lineno}: expected '{tag}', found '{}'",
                fields[0]
            )));
        }
        Ok(fields[1..].to_vec())
    }

    pub fn expect_floats(&mut self, tag: &str, expected: usize) -> Result<Vec<f64>> {
        let fields = self.expect_tag(tag)?;
        if fields.len() != expected {
            return Err(Error::Format(format!(
                "'{tag}' carries {} values, expected {expected}",
                fields.len()
            )));
        }
        fields.iter().map(|f| parse_f64(tag, f)).collect()
    }

    pub fn expect_usizes(&mut self, tag: &str) -> Result<Vec<usize>> {
        let fields = self.expect_tag(tag)?;
        fields
            .iter()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|e| Error::Format(format!("'{tag}': bad integer '{f}': {e}")))
            })
            .collect()
    }

    pub fn expect_usize(&mut self, tag: &str) -> Result<usize> {
        let values = self.expect_usizes(tag)?;
        if values.len() != 1 {
            return Err(Error::Format(format!(
                "'{tag}' carries {} values, expected 1",
                values.len()
            )));
        }
        Ok(values[0])
    }
}

pub fn parse_f64(context: &str, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::Format(format!("'{context}': bad float '{field}': {e}")))
}

/// Checks a format-version header line.
pub fn expect_version(lines: &mut Lines<'_>, version: &str) -> Result<()> {
    let (lineno, fields) = lines.next_record()?;
    if fields != [version] {
        return Err(Error::Format(format!(
            "line {lineno}: unsupported format '{}', this build reads '{version}'",
            fields.join(" ")
        )));
    }
    Ok(())
}
