//! Append-only result cache: one JSON record per line, keyed by the
//! SHA-256 of a canonical configuration string.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_DIR_ENV: &str = "FSS_CACHE_DIR";
const FILE_NAME: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cache {
    file: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    key: String,
    record: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub record: Option<Value>,
    /// Lines that could not be parsed.
    pub corrupt_lines: usize,
}

/// Hex SHA-256 of a canonical configuration string.
pub fn cache_key(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Cache {
    /// Cache in the directory named by `FSS_CACHE_DIR`; `None` when unset.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::open(Path::new(&dir)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            file: dir.join(FILE_NAME),
        })
    }

    pub fn path(&self) -> &Path {
        &self.file
    }

    pub fn store(&self, key: &str, record: &Value) -> Result<()> {
        let line = serde_json::to_string(&Line {
            key: key.to_string(),
            record: record.clone(),
        })
        .map_err(|e| Error::Io(e.to_string()))?;
        let mut f = OpenOptions::new().create(true).append(true).open(&self.file)?;
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }

    /// Newest record stored under `key`.
    pub fn lookup(&self, key: &str) -> Result<Lookup> {
        let f = match fs::File::open(&self.file) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(Lookup {
                    record: None,
                    corrupt_lines: 0,
                })
            }
            Err(e) => return Err(e.into()),
        };
        let mut record = None;
        let mut corrupt_lines = 0;
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line) {
                Ok(l) if l.key == key => record = Some(l.record),
                Ok(_) => {}
                Err(_) => corrupt_lines += 1,
            }
        }
        Ok(Lookup {
            record,
            corrupt_lines,
        })
    }
}
