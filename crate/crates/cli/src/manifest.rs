use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use seqihr::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "run_manifest.txt";

/// Collects the files a command reads and writes. The manifest is itself a
/// valid config file: hashes sit in comments, the resolved config follows.
pub struct Run {
    pub dir: PathBuf,
    command: &'static str,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<(String, String)>,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    pub fn new(dir: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push((path.to_path_buf(), sha256(bytes)));
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        self.outputs.push((name.to_string(), sha256(contents.as_bytes())));
        Ok(path)
    }

    pub fn finish(mut self, config: &RunConfig) -> Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "# {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "# command: {}", self.command);
        for (p, h) in &self.inputs {
            let _ = writeln!(text, "# input {} sha256 {h}", p.display());
        }
        for (n, h) in &self.outputs {
            let _ = writeln!(text, "# output {n} sha256 {h}");
        }
        text.push_str(&config.to_text());
        self.outputs.clear();
        self.write(MANIFEST_NAME, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_reloads_as_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.seed = 7;
        let mut run = Run::new(dir.path(), "simulate").unwrap();
        run.input(Path::new("x.csv"), b"abc");
        run.write("a.csv", "t\n0\n").unwrap();
        let path = run.finish(&config).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.contains(
            "# input x.csv sha256 ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        ));
        assert!(text.contains("# output a.csv sha256 "));
        assert_eq!(RunConfig::from_text(&text).unwrap(), config);
    }
}
