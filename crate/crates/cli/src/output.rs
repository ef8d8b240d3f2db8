//! CSV and manifest emission. Every file opens with `# manifest_sha256=<hash>`,
//! then a header row; columns are fixed per file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pardec_core::config::ScenarioConfig;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Shortest round-tripping form; scientific outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn pair((x, p): (f64, f64)) -> String {
    format!("{};{}", num(x), num(p))
}

/// Destination directory plus the hash stamped on every file written there.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn create(dir: &Path, cfg: &ScenarioConfig) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let hash = cfg.manifest_hash();
        let path = dir.join(MANIFEST_FILE);
        let mut f = BufWriter::new(File::create(&path)?);
        writeln!(f, "# manifest_sha256={hash}")?;
        f.write_all(cfg.manifest().as_bytes())?;
        f.flush()?;
        Ok(Sink { dir: dir.to_path_buf(), hash, written: vec![path] })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        writeln!(f, "# manifest_sha256={}", self.hash)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        for r in rows {
            debug_assert_eq!(r.len(), header.len(), "{name}");
            w.write_record(r)?;
        }
        w.flush()?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, -0.0, 1.0, -2.5, 3.8000000000000003, 4.5e-14, 7.7e-33, 1e20, 0.1 + 0.2, f64::MIN_POSITIVE] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(4.5e-14), "4.5e-14");
        assert_eq!(pair((1.0, -0.5)), "1;-0.5");
    }
}
