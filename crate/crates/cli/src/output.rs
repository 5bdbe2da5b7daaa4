use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Output directory; every write maps failures to the io exit code.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes a CSV file from a header and string rows.
    pub fn write_csv<I, R>(&self, name: &str, header: &[String], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let p = self.path(name);
        let to_io = |e: csv::Error| {
            let msg = e.to_string();
            match e.into_kind() {
                csv::ErrorKind::Io(io) => CliError::io(&p, io),
                _ => CliError::io(&p, std::io::Error::other(msg)),
            }
        };
        let mut w = csv::Writer::from_path(&p).map_err(to_io)?;
        w.write_record(header).map_err(to_io)?;
        for r in rows {
            w.write_record(r).map_err(to_io)?;
        }
        w.flush().map_err(|e| CliError::io(&p, e))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn sci(v: f64) -> String {
    format!("{v:e}")
}
