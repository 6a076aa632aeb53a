//! Output files. Every CSV starts with `# scenario_hash=<hex>`, then any
//! extra `# key=value` lines, then the column header. Numbers carry 17
//! significant digits so they round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{io_error, CliError};

pub fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// A directory collecting output files for one run.
pub struct OutputDir {
    root: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path, hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Writes a numeric table.
    pub fn csv<I>(
        &mut self,
        name: &str,
        comments: &[(&str, String)],
        header: &[&str],
        rows: I,
    ) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        self.records(
            name,
            comments,
            header,
            rows.into_iter().map(|r| r.into_iter().map(number).collect()),
        )
    }

    /// Writes a table of preformatted fields.
    pub fn records<I>(
        &mut self,
        name: &str,
        comments: &[(&str, String)],
        header: &[&str],
        rows: I,
    ) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.root.join(name);
        let err = |e: &dyn std::fmt::Display| io_error(&path, e);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| err(&e))?);
        writeln!(out, "# scenario_hash={}", self.hash).map_err(|e| err(&e))?;
        for (k, v) in comments {
            writeln!(out, "# {k}={v}").map_err(|e| err(&e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header).map_err(|e| err(&e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value).expect("json value serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// A CSV written by this tool: its scenario hash and named columns.
pub struct ReadTable {
    pub hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ReadTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<ReadTable, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let hash = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# scenario_hash=").map(str::to_string));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io_error(path, e))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io_error(path, e))?;
        rows.push(row);
    }
    Ok(ReadTable { hash, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(number(v).parse::<f64>().unwrap(), v);
        }
        assert!(number(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn tables_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), "abc").unwrap();
        out.csv("t.csv", &[("tau", number(1.5))], &["a", "b"], vec![vec![1.0, 2.0], vec![3.0, 0.1]])
            .unwrap();
        let t = read_csv(&dir.path().join("t.csv")).unwrap();
        assert_eq!(t.hash.as_deref(), Some("abc"));
        assert_eq!(t.column("b").unwrap(), vec![2.0, 0.1]);
    }
}
