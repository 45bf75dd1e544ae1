//! Line-delimited JSON record files with a `#schema=<tag>` header line, plus the
//! content digests used for cache keys, bank ids and audit trails.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest as _, Sha256};

pub const SCHEMA_CORPUS: &str = "qream-corpus-v1";
pub const SCHEMA_CC: &str = "qream-cc-v1";
pub const SCHEMA_SEEDS: &str = "qream-seeds-v1";
pub const SCHEMA_POOL: &str = "qream-pool-v1";
pub const SCHEMA_SCORE: &str = "qream-score-v1";
pub const SCHEMA_FT: &str = "qream-ft-v1";
pub const SCHEMA_REPORT: &str = "qream-report-v1";

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: expected schema `{expected}`, found `{found}`")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

impl RecordError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        RecordError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Hex sha256 digest of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical JSON encoding. Struct fields serialize in
/// declaration order and maps used in digested values are ordered, so the
/// encoding is stable.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digestable values serialize");
    digest_bytes(&bytes)
}

/// Digest of a file's bytes.
pub fn digest_file(path: &Path) -> Result<String, RecordError> {
    let bytes = fs::read(path).map_err(|e| RecordError::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

pub fn schema_header(tag: &str) -> String {
    format!("#schema={tag}")
}

/// A raw record line with its 1-based line number.
#[derive(Debug, Clone)]
pub struct RawLine {
    pub line: usize,
    pub text: String,
}

/// Reads the non-comment lines of a record file after checking its schema header.
/// A file with no header is accepted; a header naming another schema is not.
pub fn read_lines(path: &Path, schema: &str) -> Result<Vec<RawLine>, RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(tag) = trimmed.strip_prefix("#schema=") {
            if tag != schema {
                return Err(RecordError::Schema {
                    path: path.to_path_buf(),
                    expected: schema.to_string(),
                    found: tag.to_string(),
                });
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        out.push(RawLine {
            line: idx + 1,
            text: line,
        });
    }
    Ok(out)
}

pub fn read_records<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, RecordError> {
    read_lines(path, schema)?
        .into_iter()
        .map(|raw| {
            serde_json::from_str(&raw.text).map_err(|e| RecordError::Parse {
                path: path.to_path_buf(),
                line: raw.line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Serializes records to the exact bytes `write_records` produces.
pub fn encode_records<T: Serialize>(schema: &str, records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(schema_header(schema).as_bytes());
    buf.push(b'\n');
    for record in records {
        serde_json::to_writer(&mut buf, record).expect("records serialize");
        buf.push(b'\n');
    }
    buf
}

/// Writes a complete record file atomically: either the whole file lands or
/// nothing is left behind.
pub fn write_records<T: Serialize>(path: &Path, schema: &str, records: &[T]) -> Result<(), RecordError> {
    write_atomic(path, &encode_records(schema, records))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RecordError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| RecordError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| RecordError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| RecordError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| RecordError::io(path, e))?;
    tmp.persist(path).map_err(|e| RecordError::io(path, e.error))?;
    Ok(())
}

/// Append-only record log used for resumable stage outputs.
///
/// Opening an existing log validates every line and truncates a trailing
/// partial line left by an interrupted writer.
pub struct AppendLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl AppendLog {
    /// Opens (or creates) the log and returns it together with the records
    /// already present.
    pub fn open<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<(Self, Vec<T>), RecordError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| RecordError::io(dir, e))?;
            }
        }
        let mut existing = Vec::new();
        let mut valid_len: u64 = 0;
        let fresh = !path.exists();
        if !fresh {
            let bytes = fs::read(path).map_err(|e| RecordError::io(path, e))?;
            let mut offset = 0usize;
            for (idx, chunk) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
                if !chunk.ends_with(b"\n") {
                    break;
                }
                let text = String::from_utf8_lossy(chunk);
                let trimmed = text.trim();
                if let Some(tag) = trimmed.strip_prefix("#schema=") {
                    if tag != schema {
                        return Err(RecordError::Schema {
                            path: path.to_path_buf(),
                            expected: schema.to_string(),
                            found: tag.to_string(),
                        });
                    }
                } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                    let record = serde_json::from_str(trimmed).map_err(|e| RecordError::Parse {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                    existing.push(record);
                }
                offset += chunk.len();
            }
            valid_len = offset as u64;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| RecordError::io(path, e))?;
        file.set_len(valid_len).map_err(|e| RecordError::io(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| RecordError::io(path, e))?;
        let mut writer = BufWriter::new(file);
        if valid_len == 0 {
            writeln!(writer, "{}", schema_header(schema)).map_err(|e| RecordError::io(path, e))?;
            writer.flush().map_err(|e| RecordError::io(path, e))?;
        }
        Ok((
            AppendLog {
                path: path.to_path_buf(),
                writer,
            },
            existing,
        ))
    }

    /// Appends one record and flushes it to the OS.
    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), RecordError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| RecordError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
