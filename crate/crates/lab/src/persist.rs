//! Artifact directories: metadata JSON, CSV tables, little-endian snapshot
//! files and the `index.csv` listing everything written.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use lle_core::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"LLESNAP\0";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub length: f64,
    pub psi: Vec<Complex64>,
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * s.psi.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(s.psi.len() as u64).to_le_bytes());
    out.extend_from_slice(&s.t.to_le_bytes());
    out.extend_from_slice(&s.length.to_le_bytes());
    for z in &s.psi {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let bad = |m: &str| Error::InvalidField(format!("snapshot: {m}"));
    if bytes.len() < HEADER_LEN || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("missing header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != SNAPSHOT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64_at(16) as usize;
    if bytes.len() != HEADER_LEN + 16 * n {
        return Err(bad(&format!("expected {} bytes of data for {n} points", 16 * n)));
    }
    let psi = (0..n)
        .map(|j| {
            let o = HEADER_LEN + 16 * j;
            Complex64::new(f64_at(o), f64_at(o + 8))
        })
        .collect();
    Ok(Snapshot { t: f64_at(24), length: f64_at(32), psi })
}

/// One scenario output directory with its running index.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    entries: Vec<(String, String, String)>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<ArtifactDir> {
        fs::create_dir_all(root)?;
        Ok(ArtifactDir { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record(&mut self, rel: &str, kind: &str, description: &str) {
        self.entries.retain(|e| e.0 != rel);
        self.entries.push((rel.to_string(), kind.to_string(), description.to_string()));
    }

    pub fn write_bytes(&mut self, rel: &str, kind: &str, description: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.record(rel, kind, description);
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, kind: &str, description: &str, text: &str) -> Result<()> {
        self.write_bytes(rel, kind, description, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, description: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, "json", description, &text)
    }

    pub fn write_csv(&mut self, rel: &str, description: &str, text: &str) -> Result<()> {
        self.write_text(rel, "csv", description, text)
    }

    /// Writes snapshots under `dir/` with their own `dir/index.csv`.
    pub fn write_snapshots(&mut self, dir: &str, description: &str, snaps: &[Snapshot]) -> Result<()> {
        let mut idx = String::from("file,t,n_points,length\n");
        for (i, s) in snaps.iter().enumerate() {
            let name = format!("{dir}/snap_{i:05}.bin");
            self.write_bytes(&name, "snapshot", description, &encode_snapshot(s))?;
            let _ = writeln!(idx, "snap_{i:05}.bin,{:.10e},{},{:.17e}", s.t, s.psi.len(), s.length);
        }
        self.write_csv(&format!("{dir}/index.csv"), &format!("{description} (snapshot list)"), &idx)
    }

    /// Writes `index.csv` listing every artifact in write order.
    pub fn finish(&mut self) -> Result<()> {
        let mut s = String::from("file,kind,description\n");
        for (f, k, d) in &self.entries {
            let _ = writeln!(s, "{f},{k},\"{}\"", d.replace('"', "'"));
        }
        fs::write(self.root.join("index.csv"), s)?;
        Ok(())
    }
}

pub fn read_index(root: &Path) -> Result<Vec<(String, String)>> {
    let path = root.join("index.csv");
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Config(format!("{} is missing; expected an artifact directory containing index.csv, metadata.json and summary.json", path.display()))
    })?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.splitn(3, ',');
            Some((it.next()?.to_string(), it.next()?.to_string()))
        })
        .collect())
}
