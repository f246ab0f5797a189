//! Output directory bookkeeping: every file written by a run is tracked so a
//! failed run can remove what it produced.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cbtnet_core::checkpoint::write_atomic;

#[derive(Debug, Default)]
pub struct Outputs {
    dir: Option<PathBuf>,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self::default());
        };
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            created_dir,
            written: Vec::new(),
        })
    }

    pub fn is_active(&self) -> bool {
        self.dir.is_some()
    }

    /// Writes `name` inside the output directory (temp file + rename).
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.dir.as_ref().context("this command was given no --out directory")?;
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    pub fn commit(&mut self) {
        self.written.clear();
        self.created_dir = false;
    }

    /// Removes everything written so far, and the directory if this run made it.
    pub fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = std::fs::remove_file(p);
        }
        if let (Some(dir), true) = (&self.dir, self.created_dir) {
            let _ = std::fs::remove_dir(dir);
        }
    }
}
