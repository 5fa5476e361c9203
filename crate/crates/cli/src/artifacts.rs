//! Output files. Every artifact carries the tool versions and the SHA-256 of
//! the configuration bytes; nothing time-dependent is written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub struct Stamp {
    pub config_sha256: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(config_bytes: &[u8], seed: u64) -> Self {
        let digest = Sha256::digest(config_bytes);
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Stamp { config_sha256, seed }
    }

    fn provenance(&self) -> Value {
        json!({
            "degctl": env!("CARGO_PKG_VERSION"),
            "degenerate_control": degenerate_control::VERSION,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
        })
    }

    fn csv_header(&self) -> String {
        format!(
            "# degctl {} degenerate-control {} config_sha256={} seed={}\n",
            env!("CARGO_PKG_VERSION"),
            degenerate_control::VERSION,
            self.config_sha256,
            self.seed
        )
    }
}

pub struct OutputDir {
    root: PathBuf,
    stamp: Stamp,
}

impl OutputDir {
    pub fn create(root: &Path, stamp: Stamp) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), stamp })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `{"provenance": …, "command": …, <body fields>}`.
    pub fn json<T: Serialize>(&self, name: &str, command: &str, body: &T) -> std::io::Result<()> {
        let mut doc = json!({ "provenance": self.stamp.provenance(), "command": command });
        let body = serde_json::to_value(body)?;
        if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
            d.extend(b);
        }
        let mut w = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()
    }

    /// Opens a CSV file whose first line is the provenance comment.
    pub fn csv(&self, name: &str) -> std::io::Result<BufWriter<File>> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        w.write_all(self.stamp.csv_header().as_bytes())?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256_hex() {
        let s = Stamp::new(b"abc", 0);
        assert_eq!(s.config_sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
