//! Run directories and the run log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cascnn_core::{Error, Result};

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Creates `override_dir`, or `<runs_dir>/<timestamp>-<label>` with a numeric
/// suffix if that already exists.
pub fn create_run_dir(runs_dir: &Path, override_dir: Option<&Path>, label: &str) -> Result<PathBuf> {
    let dir = match override_dir {
        Some(d) => d.to_path_buf(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = runs_dir.join(format!("{stamp}-{label}"));
            let mut dir = base.clone();
            let mut k = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Mirrors progress lines to stdout and `run.log`.
pub struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("run.log");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(RunLog { file, path })
    }

    pub fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        let msg = msg.as_ref();
        println!("{msg}");
        writeln!(self.file, "{msg}").map_err(|e| io_err(&self.path, e))
    }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn create_file(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| io_err(path, e))
}
