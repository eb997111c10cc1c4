//! Artifact writing. Every file goes through [`OutputDir`], which keeps the
//! list of completed files for the manifest and for partial-output errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lpsv_core::spde::{io as grid_io, DensityGrid};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    reports: Vec<u8>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Io {
            message: format!("cannot create {}: {e}", root.display()),
            completed: Vec::new(),
        })?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new(), reports: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn io_error(&self, name: &str, e: impl std::fmt::Display) -> CliError {
        CliError::Io {
            message: format!("writing {name}: {e}"),
            completed: self.files.iter().map(|f| f.path.clone()).collect(),
        }
    }

    /// Writes `bytes` to `name` and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| self.io_error(name, e))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// A CSV with `header` and one row per item of `rows`.
    pub fn write_csv<I, R>(&mut self, name: &str, header: &str, rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "{header}").expect("in-memory write");
        for row in rows {
            let line: Vec<String> = row.as_ref().iter().map(|v| v.to_string()).collect();
            writeln!(buf, "{}", line.join(",")).expect("in-memory write");
        }
        self.write(name, &buf)
    }

    /// `t,loss` rows.
    pub fn write_loss(&mut self, name: &str, times: &[f64], loss: &[f64]) -> CliResult<()> {
        self.write_csv(name, "t,loss", times.iter().zip(loss).map(|(t, l)| [*t, *l]))
    }

    pub fn write_grid_csv(&mut self, name: &str, grid: &DensityGrid) -> CliResult<()> {
        let mut buf = Vec::new();
        grid_io::write_csv(grid, &mut buf).map_err(|e| self.io_error(name, e))?;
        self.write(name, &buf)
    }

    pub fn write_grid_binary(&mut self, name: &str, grid: &DensityGrid) -> CliResult<()> {
        let mut buf = Vec::new();
        grid_io::write_binary(grid, &mut buf).map_err(|e| self.io_error(name, e))?;
        self.write(name, &buf)
    }

    /// Queues one JSON line for `reports.jsonl`.
    pub fn report<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.reports, value).map_err(|e| self.io_error("reports.jsonl", e))?;
        self.reports.push(b'\n');
        Ok(())
    }

    /// Writes the queued reports, if any.
    pub fn flush_reports(&mut self) -> CliResult<()> {
        if self.reports.is_empty() {
            return Ok(());
        }
        let bytes = std::mem::take(&mut self.reports);
        self.write("reports.jsonl", &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_csv_has_header_plus_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write_loss("loss.csv", &[0.0, 0.5, 1.0], &[0.0, 0.1, 0.25]).unwrap();
        let text = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(text, "t,loss\n0,0\n0.5,0.1\n1,0.25\n");
        assert_eq!(out.files()[0].bytes, text.len() as u64);
    }

    #[test]
    fn grid_dump_reloads_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let mut g = DensityGrid::zeros(0.1, 3, -1.0, 0.5, 4);
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 / (i as f64 + 3.0));
        out.write_grid_binary("g.lpsv", &g).unwrap();
        let back = grid_io::read_binary(fs::File::open(dir.path().join("g.lpsv")).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn io_failure_lists_completed_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x\n").unwrap();
        let err = out.write("missing/b.csv", b"y\n").unwrap_err();
        match err {
            CliError::Io { completed, .. } => assert_eq!(completed, vec!["a.csv".to_string()]),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
