//! Plain-text run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<(String, PathBuf, String)>,
    pub outputs: Vec<String>,
    pub timings: Vec<(String, f64)>,
    started: SystemTime,
    clock: Instant,
    stage: Instant,
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_error(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let now = Instant::now();
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            started: SystemTime::now(),
            clock: now,
            stage: now,
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let digest = file_digest(path)?;
        self.inputs.push((role.to_string(), path.to_path_buf(), digest));
        Ok(())
    }

    /// Closes the current stage under `name`.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push((name.to_string(), (now - self.stage).as_secs_f64()));
        self.stage = now;
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let started = self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let _ = writeln!(s, "software = jnirm {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "started-unix = {started}");
        let _ = writeln!(s, "wall-clock-seconds = {:.3}", self.clock.elapsed().as_secs_f64());
        let _ = writeln!(s, "\n[config]");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[inputs]");
        for (role, path, digest) in &self.inputs {
            let _ = writeln!(s, "{role} = {} sha256:{digest}", path.display());
        }
        let _ = writeln!(s, "\n[outputs]");
        for o in &self.outputs {
            let _ = writeln!(s, "{o}");
        }
        let _ = writeln!(s, "\n[timings-seconds]");
        for (name, t) in &self.timings {
            let _ = writeln!(s, "{name} = {t:.3}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render()).map_err(|e| io_error(&path, e))
    }
}

/// Reads the `[config]` section of a manifest.
pub fn read_config(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let mut in_config = false;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            in_config = line == "[config]";
            continue;
        }
        if in_config {
            if let Some((k, v)) = line.split_once(" = ") {
                map.insert(k.to_string(), v.to_string());
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            file_digest(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("fit");
        m.config.insert("k".into(), "4".into());
        m.config.insert("network".into(), "a b.csv".into());
        m.stage("sampling");
        m.write(dir.path()).unwrap();
        let back = read_config(dir.path()).unwrap();
        assert_eq!(back, m.config);
    }
}
