//! Packet info-string normalization, one-hot character encoding and
//! fixed-length window assembly.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diff::Tensor;
use crate::scalar::Scalar;

/// Alphabet size: NUL pad, OOV, then printable ASCII `0x20..=0x7E`.
pub const ALPHABET_SIZE: usize = 97;
/// Alphabet index of the padding character.
pub const NUL_INDEX: u32 = 0;
/// Alphabet index of the out-of-vocabulary marker.
pub const OOV_INDEX: u32 = 1;
/// Character that [`normalize_string`] substitutes for anything unprintable.
pub const OOV_CHAR: char = '\u{1A}';
/// Packets per window.
pub const WINDOW_LEN: usize = 20;
pub const DEFAULT_MAX_LEN: usize = 96;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} contains no packet lines")]
    EmptyTrace { path: PathBuf },
    #[error("{path}: no <device>.csv files found")]
    EmptyCorpus { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    alphabet_size: usize,
    max_len: usize,
    window_len: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_LEN)
    }
}

impl CodecConfig {
    pub fn new(max_len: usize) -> Self {
        assert!(max_len >= 1, "max_len must be at least 1");
        Self {
            alphabet_size: ALPHABET_SIZE,
            max_len,
            window_len: WINDOW_LEN,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }
}

/// Maps every character outside printable ASCII to [`OOV_CHAR`].
pub fn normalize_string(s: &str) -> String {
    s.chars()
        .map(|c| if (' '..='~').contains(&c) { c } else { OOV_CHAR })
        .collect()
}

/// Alphabet index of one normalized character.
pub fn char_index(c: char) -> u32 {
    match c {
        ' '..='~' => 2 + (c as u32 - 0x20),
        _ => OOV_INDEX,
    }
}

/// Character for an alphabet index; `None` for the pad index.
pub fn index_char(i: u32) -> Option<char> {
    match i {
        NUL_INDEX => None,
        OOV_INDEX => Some(OOV_CHAR),
        _ => char::from_u32(i - 2 + 0x20),
    }
}

/// One packet as an `L × A` one-hot character matrix, held as the hot
/// index of each row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PacketSample {
    hot: Vec<u32>,
    raw: String,
}

impl PacketSample {
    /// Hot alphabet index per row.
    pub fn hot(&self) -> &[u32] {
        &self.hot
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.hot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hot.is_empty()
    }

    /// Dense `L × A` matrix.
    pub fn matrix<T: Scalar>(&self, alphabet_size: usize) -> Tensor<T> {
        let mut m = Tensor::zeros(&[self.hot.len(), alphabet_size]);
        for (row, &h) in self.hot.iter().enumerate() {
            m.data_mut()[row * alphabet_size + h as usize] = T::one();
        }
        m
    }

    /// Reads the string back from the row indices, dropping padding.
    pub fn decode(&self) -> String {
        self.hot.iter().filter_map(|&h| index_char(h)).collect()
    }
}

/// One-hot encodes an already normalized string, truncating at `L`.
pub fn encode_packet(s: &str, cfg: &CodecConfig) -> PacketSample {
    let mut hot: Vec<u32> = s.chars().take(cfg.max_len).map(char_index).collect();
    hot.resize(cfg.max_len, NUL_INDEX);
    PacketSample {
        hot,
        raw: s.to_string(),
    }
}

/// The all-NUL "silent" packet.
pub fn null_sample(cfg: &CodecConfig) -> PacketSample {
    encode_packet("", cfg)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum WindowLabel {
    Device(String),
    Null,
}

/// `W` consecutive packets in trace order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub samples: Vec<PacketSample>,
    pub label: WindowLabel,
}

impl Window {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceTrace {
    pub device_id: String,
    pub lines: Vec<String>,
}

impl DeviceTrace {
    pub fn new(device_id: impl Into<String>, lines: Vec<String>) -> Self {
        Self {
            device_id: device_id.into(),
            lines,
        }
    }

    /// Window of lines `[offset, offset + W)`.
    pub fn window_at(&self, offset: usize, cfg: &CodecConfig) -> Window {
        let w = cfg.window_len;
        assert!(
            offset + w <= self.lines.len(),
            "window [{offset}, {}) past end of {} lines",
            offset + w,
            self.lines.len()
        );
        Window {
            samples: self.lines[offset..offset + w]
                .iter()
                .map(|l| encode_packet(l, cfg))
                .collect(),
            label: WindowLabel::Device(self.device_id.clone()),
        }
    }
}

/// Windows at offsets `0, stride, 2·stride, …` that fit inside the trace.
pub fn build_windows(trace: &DeviceTrace, cfg: &CodecConfig, stride: usize) -> Vec<Window> {
    assert!(stride >= 1, "stride must be at least 1");
    let w = cfg.window_len;
    if trace.lines.len() < w {
        return Vec::new();
    }
    (0..=trace.lines.len() - w)
        .step_by(stride)
        .map(|i| trace.window_at(i, cfg))
        .collect()
}

pub fn null_window(cfg: &CodecConfig) -> Window {
    Window {
        samples: vec![null_sample(cfg); cfg.window_len],
        label: WindowLabel::Null,
    }
}

/// Parses one-info-string-per-line text. Lines are normalized; blank lines
/// and a trailing newline produce no entries.
pub fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
        .map(normalize_string)
        .collect()
}

/// Loads `<device_id>.csv`, normalizing each line.
pub fn load_device_csv(path: &Path) -> Result<DeviceTrace, CodecError> {
    let text = fs::read_to_string(path).map_err(|source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines = parse_lines(&text);
    if lines.is_empty() {
        return Err(CodecError::EmptyTrace {
            path: path.to_path_buf(),
        });
    }
    let device_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DeviceTrace { device_id, lines })
}

/// Every `*.csv` in `dir`, sorted by device id. Empty files are skipped.
pub fn load_corpus(dir: &Path) -> Result<Vec<DeviceTrace>, CodecError> {
    let io = |source| CodecError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let mut traces = Vec::with_capacity(paths.len());
    for p in paths {
        match load_device_csv(&p) {
            Ok(t) => traces.push(t),
            Err(CodecError::EmptyTrace { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if traces.is_empty() {
        return Err(CodecError::EmptyCorpus {
            path: dir.to_path_buf(),
        });
    }
    Ok(traces)
}

/// Writes `trace` as `<dir>/<device_id>.csv`.
pub fn write_device_csv(dir: &Path, trace: &DeviceTrace) -> std::io::Result<PathBuf> {
    let path = dir.join(format!("{}.csv", trace.device_id));
    let mut text = trace.lines.join("\n");
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
