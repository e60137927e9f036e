//! In-memory artifact collection, written out together with a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qlevel_core::io::csv_writer;
use sha2::{Digest, Sha256};

use crate::failure::CliError;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Default)]
pub struct ArtifactSet {
    files: BTreeMap<String, Vec<u8>>,
}

impl ArtifactSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Render one artifact with a CSV writer closure.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        render: impl FnOnce(&mut Vec<u8>) -> qlevel_core::Result<()>,
    ) -> Result<(), CliError> {
        let name = name.into();
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| CliError::from_core(e, &name))?;
        self.files.insert(name, buf);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// `file,sha256,bytes`, sorted by file name.
    pub fn manifest(&self) -> Vec<u8> {
        let mut out = csv_writer(Vec::new());
        out.write_record(["file", "sha256", "bytes"]).expect("in-memory write");
        for (name, bytes) in &self.files {
            let digest = hex::encode(Sha256::digest(bytes));
            out.write_record([name.as_str(), digest.as_str(), bytes.len().to_string().as_str()])
                .expect("in-memory write");
        }
        out.into_inner().expect("in-memory flush")
    }

    /// Write every artifact and the manifest into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        let shown = dir.display().to_string();
        fs::create_dir_all(dir).map_err(|e| CliError::io(&shown, &e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| CliError::io(&path.display().to_string(), &e))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, self.manifest()).map_err(|e| CliError::io(&path.display().to_string(), &e))
    }
}
