//! Binary recording and checkpoint files.
//!
//! Both share one framing, little-endian throughout:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic (`BTRNEEG1` or `BTRNCKP1`) |
//! | 4 | header length `n`, u32 |
//! | n | UTF-8 JSON header |
//! | 8·k | payload of f64 values, count given by the header |
//! | 4 | CRC32 (IEEE) of the payload bytes, u32 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use btrn_core::dataset::{ContinuousRecording, DatasetError, Event, Session};
use btrn_core::model::{Architecture, BtrnModel, HyperParams, InputStats, ModelError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORDING_MAGIC: &[u8; 8] = b"BTRNEEG1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BTRNCKP1";

/// Refuses headers above this size before allocating for them.
const MAX_HEADER_BYTES: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after the checksum")]
    TrailingBytes(u64),
    #[error("invalid recording: {0}")]
    Recording(#[from] DatasetError),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(#[from] ModelError),
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingHeader {
    subject_id: String,
    session: Session,
    fs_hz: f64,
    channel_labels: Vec<String>,
    n_channels: usize,
    n_samples: usize,
    events: Vec<Event>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    architecture: Architecture,
    hyper: HyperParams,
    n_channels: usize,
    n_samples: usize,
    n_parameters: usize,
    /// Cells of the stored input statistics; zero when absent.
    n_input_stats: usize,
}

/// Writes the framing around a payload produced row by row.
fn write_framed<'a, W: Write>(
    mut w: W,
    magic: &[u8; 8],
    header: &impl Serialize,
    rows: impl Iterator<Item = &'a [f64]>,
) -> std::io::Result<()> {
    let json = serde_json::to_vec(header).map_err(std::io::Error::other)?;
    let len = u32::try_from(json.len()).map_err(std::io::Error::other)?;
    w.write_all(magic)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut crc = crc32fast::Hasher::new();
    let mut buf = Vec::new();
    for row in rows {
        buf.clear();
        buf.extend(row.iter().flat_map(|v| v.to_le_bytes()));
        crc.update(&buf);
        w.write_all(&buf)?;
    }
    w.write_all(&crc.finalize().to_le_bytes())?;
    w.flush()
}

/// Reads exactly `buf.len()` bytes, reporting a short read as truncation.
fn read_section(r: &mut impl Read, buf: &mut [u8], section: &'static str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(FormatError::Truncated {
                    section,
                    expected: buf.len() as u64,
                    found: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FormatError::MalformedHeader(e.to_string())),
        }
    }
    Ok(())
}

struct FramedReader<R> {
    inner: R,
    crc: crc32fast::Hasher,
}

impl<R: Read> FramedReader<R> {
    fn open<H: DeserializeOwned>(mut inner: R, magic: &[u8; 8]) -> Result<(Self, H)> {
        let mut m = [0u8; 8];
        read_section(&mut inner, &mut m, "magic").map_err(|_| {
            FormatError::MalformedHeader("file is shorter than the magic bytes".into())
        })?;
        if &m != magic {
            return Err(FormatError::MalformedHeader(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut len = [0u8; 4];
        read_section(&mut inner, &mut len, "header length")?;
        let len = u32::from_le_bytes(len);
        if len > MAX_HEADER_BYTES {
            return Err(FormatError::MalformedHeader(format!(
                "header length {len} exceeds {MAX_HEADER_BYTES}"
            )));
        }
        let mut json = vec![0u8; len as usize];
        read_section(&mut inner, &mut json, "header")?;
        let header = serde_json::from_slice(&json)
            .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
        Ok((
            Self {
                inner,
                crc: crc32fast::Hasher::new(),
            },
            header,
        ))
    }

    fn read_values(&mut self, n: usize, section: &'static str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        read_section(&mut self.inner, &mut bytes, section)?;
        self.crc.update(&bytes);
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn finish(mut self) -> Result<()> {
        let mut stored = [0u8; 4];
        read_section(&mut self.inner, &mut stored, "checksum")?;
        let stored = u32::from_le_bytes(stored);
        let computed = self.crc.finalize();
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed });
        }
        let mut rest = Vec::new();
        self.inner
            .read_to_end(&mut rest)
            .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
        match rest.len() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n as u64)),
        }
    }
}

pub fn encode_recording<W: Write>(rec: &ContinuousRecording, w: W) -> std::io::Result<()> {
    let header = RecordingHeader {
        subject_id: rec.subject_id.clone(),
        session: rec.session,
        fs_hz: rec.fs_hz,
        channel_labels: rec.channel_labels.clone(),
        n_channels: rec.n_channels(),
        n_samples: rec.n_samples(),
        events: rec.events.clone(),
    };
    write_framed(
        w,
        RECORDING_MAGIC,
        &header,
        rec.samples.iter().map(Vec::as_slice),
    )
}

pub fn decode_recording<R: Read>(r: R) -> Result<ContinuousRecording> {
    let (mut fr, h): (_, RecordingHeader) = FramedReader::open(r, RECORDING_MAGIC)?;
    if h.channel_labels.len() != h.n_channels {
        return Err(FormatError::MalformedHeader(format!(
            "{} channel labels for n_channels {}",
            h.channel_labels.len(),
            h.n_channels
        )));
    }
    let samples = (0..h.n_channels)
        .map(|_| fr.read_values(h.n_samples, "payload"))
        .collect::<Result<Vec<_>>>()?;
    fr.finish()?;
    Ok(ContinuousRecording::new(
        h.subject_id,
        h.session,
        h.fs_hz,
        h.channel_labels,
        samples,
        h.events,
    )?)
}

pub fn write_recording(rec: &ContinuousRecording, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    encode_recording(rec, BufWriter::new(file)).map_err(|e| FormatError::io(path, e))
}

pub fn read_recording(path: &Path) -> Result<ContinuousRecording> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    decode_recording(BufReader::new(file))
}

pub fn encode_checkpoint<W: Write>(model: &BtrnModel, w: W) -> std::io::Result<()> {
    let header = CheckpointHeader {
        architecture: model.architecture.clone(),
        hyper: model.hyper.clone(),
        n_channels: model.n_channels,
        n_samples: model.n_samples,
        n_parameters: model.n_parameters(),
        n_input_stats: model.input_stats.as_ref().map_or(0, |s| s.mean.len()),
    };
    let params = model.flat_parameters();
    let mut rows = vec![params.as_slice()];
    if let Some(s) = &model.input_stats {
        rows.push(&s.mean);
        rows.push(&s.inv_std);
    }
    write_framed(w, CHECKPOINT_MAGIC, &header, rows.into_iter())
}

pub fn decode_checkpoint<R: Read>(r: R) -> Result<BtrnModel> {
    let (mut fr, h): (_, CheckpointHeader) = FramedReader::open(r, CHECKPOINT_MAGIC)?;
    let mut model = BtrnModel::new(h.architecture, h.hyper, h.n_channels, h.n_samples)?;
    if model.n_parameters() != h.n_parameters {
        return Err(FormatError::MalformedHeader(format!(
            "architecture has {} parameters, header says {}",
            model.n_parameters(),
            h.n_parameters
        )));
    }
    let params = fr.read_values(h.n_parameters, "parameters")?;
    model.load_flat_parameters(&params)?;
    if h.n_input_stats > 0 {
        let mean = fr.read_values(h.n_input_stats, "input statistics")?;
        let inv_std = fr.read_values(h.n_input_stats, "input statistics")?;
        model.input_stats = Some(InputStats { mean, inv_std });
    }
    fr.finish()?;
    Ok(model)
}

pub fn write_checkpoint(model: &BtrnModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    encode_checkpoint(model, BufWriter::new(file)).map_err(|e| FormatError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<BtrnModel> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    decode_checkpoint(BufReader::new(file))
}
