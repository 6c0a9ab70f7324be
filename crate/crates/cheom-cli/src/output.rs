//! CSV rendering and atomic artifact writes.
//!
//! Floats are emitted at 17 significant digits so every 64-bit value
//! round-trips exactly; files are written to a temporary sibling and
//! renamed into place.

use std::path::Path;

/// 17-significant-digit scientific notation (round-trip exact for f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column-oriented CSV assembly: first column is the axis, every added
/// column must match its length.
pub struct CsvTable {
    axis_name: String,
    axis: Vec<f64>,
    columns: Vec<(String, Vec<f64>)>,
}

impl CsvTable {
    pub fn new(axis_name: &str) -> Self {
        Self { axis_name: axis_name.to_string(), axis: Vec::new(), columns: Vec::new() }
    }

    pub fn set_axis(&mut self, axis: &[f64]) {
        self.axis = axis.to_vec();
    }

    pub fn add_column(&mut self, name: &str, values: &[f64]) {
        assert_eq!(
            values.len(),
            self.axis.len(),
            "column {name} length {} != axis length {}",
            values.len(),
            self.axis.len()
        );
        self.columns.push((name.to_string(), values.to_vec()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.axis_name);
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, t) in self.axis.iter().enumerate() {
            out.push_str(&fmt_f64(*t));
            for (_, values) in &self.columns {
                out.push(',');
                out.push_str(&fmt_f64(values[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes via a temporary sibling file plus rename, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> cheom::Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
