//! Fingerprint models: build one from a target's first `W` packets, persist
//! it, and scan packet streams against it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

use crate::codec::{encode_packet, parse_lines, CodecConfig, DeviceTrace, PacketSample, ALPHABET_SIZE, WINDOW_LEN};
use crate::convlstm::ConvLstmConfig;
use crate::diff::{ParamStore, Tensor};
use crate::format::{Container, FormatError, FORMAT_VERSION};
use crate::network::Network;
use crate::protonet::{posterior, ClassId, EmbedConfig, Prototype};
use crate::scalar::Scalar;

pub const DEFAULT_TAU: f64 = 0.5;
const PROTO_TARGET: &str = "proto.target";
const PROTO_NULL: &str = "proto.null";

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "insufficient fingerprint material in {device}: {found} packets, need {needed} ({} short)",
        needed - found
    )]
    InsufficientMaterial {
        device: String,
        found: usize,
        needed: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelMeta {
    pub version: u32,
    /// Seed the network parameters were drawn from.
    pub seed: u64,
    /// Device id of the fingerprinted target.
    pub target: String,
}

/// Everything a scan needs: the frozen network, both prototypes and `τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintModel<T> {
    pub network: Network<T>,
    pub c_t: Prototype<T>,
    pub c_n: Prototype<T>,
    pub tau: f64,
    pub meta: ModelMeta,
}

impl<T: Scalar> FingerprintModel<T> {
    /// Fingerprint from the first `W` packets of `trace`.
    pub fn from_trace(trace: &DeviceTrace, network: &Network<T>, tau: f64) -> Result<Self, MatchError> {
        let cfg = network.codec();
        let needed = cfg.window_len();
        if trace.lines.len() < needed {
            return Err(MatchError::InsufficientMaterial {
                device: trace.device_id.clone(),
                found: trace.lines.len(),
                needed,
            });
        }
        Ok(Self {
            c_t: network.window_prototype(&trace.window_at(0, cfg), ClassId::Target),
            c_n: network.null_prototype(),
            network: network.clone(),
            tau,
            meta: ModelMeta {
                version: FORMAT_VERSION,
                seed: network.theta.seed(),
                target: trace.device_id.clone(),
            },
        })
    }

    pub fn codec(&self) -> &CodecConfig {
        self.network.codec()
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> FingerprintModel<U> {
        let proto = |p: &Prototype<T>| Prototype {
            vector: p.vector.cast(),
            class: p.class,
            support_count: p.support_count,
        };
        FingerprintModel {
            network: self.network.cast(),
            c_t: proto(&self.c_t),
            c_n: proto(&self.c_n),
            tau: self.tau,
            meta: self.meta.clone(),
        }
    }

    /// Target posterior of every sample.
    pub fn p_targets(&self, samples: &[PacketSample]) -> Vec<f64> {
        self.network
            .query_embeddings(samples)
            .iter()
            .map(|q| posterior(q, &self.c_t, &self.c_n).p_target.to_f64_lossy())
            .collect()
    }
}

/// Reads the target trace at `target_csv` and builds its fingerprint.
pub fn build_fingerprint(
    target_csv: &Path,
    network: &Network<f64>,
    tau: f64,
) -> Result<FingerprintModel<f64>, MatchError> {
    let lines = read_lines(target_csv)?;
    let device = target_csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FingerprintModel::from_trace(&DeviceTrace::new(device, lines), network, tau)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanRecord {
    pub index: usize,
    pub p_target: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub records: Vec<ScanRecord>,
    pub flagged: usize,
    pub total: usize,
}

impl ScanResult {
    pub fn from_records(records: Vec<ScanRecord>) -> Self {
        Self {
            flagged: records.iter().filter(|r| r.flagged).count(),
            total: records.len(),
            records,
        }
    }

    /// Joins results of consecutive chunks of one stream.
    pub fn concat(parts: impl IntoIterator<Item = ScanResult>) -> Self {
        Self::from_records(parts.into_iter().flat_map(|p| p.records).collect())
    }

    /// `flagged / total`, zero for an empty stream.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.flagged as f64 / self.total as f64
        }
    }

    /// Line-oriented scan log followed by the summary line.
    pub fn log(&self) -> String {
        let mut s = String::from("# index\tp_target\tflag\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{:.6}\t{}\n",
                r.index,
                r.p_target,
                if r.flagged { "TARGET" } else { "-" }
            ));
        }
        s.push_str(&format!("{self}\n"));
        s
    }
}

impl fmt::Display for ScanResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "# {}/{} flagged (rate {:.6})", self.flagged, self.total, self.rate())
    }
}

/// Scans already-read stream lines; record indices start at `first_index`.
pub fn scan_lines_from<T: Scalar>(model: &FingerprintModel<T>, lines: &[String], first_index: usize) -> ScanResult {
    let cfg = model.codec();
    let samples: Vec<PacketSample> = lines
        .iter()
        .map(|l| encode_packet(&crate::codec::normalize_string(l), cfg))
        .collect();
    let records = model
        .p_targets(&samples)
        .into_iter()
        .enumerate()
        .map(|(i, p)| ScanRecord {
            index: first_index + i,
            p_target: p,
            flagged: p > model.tau,
        })
        .collect();
    ScanResult::from_records(records)
}

pub fn scan_lines<T: Scalar>(model: &FingerprintModel<T>, lines: &[String]) -> ScanResult {
    scan_lines_from(model, lines, 0)
}

/// Scans every non-blank line of `stream_csv`. An empty file yields an
/// empty result.
pub fn scan_stream<T: Scalar>(model: &FingerprintModel<T>, stream_csv: &Path) -> Result<ScanResult, MatchError> {
    Ok(scan_lines(model, &read_lines(stream_csv)?))
}

fn read_lines(path: &Path) -> Result<Vec<String>, MatchError> {
    let text = fs::read_to_string(path).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_lines(&text))
}

fn architecture_header(network: &Network<f64>, kind: &str, seed: u64) -> IndexMap<String, String> {
    let cfg = network.codec();
    let cell = &network.autoencoder.cell;
    let emb = &network.embedder.cfg;
    [
        ("version", FORMAT_VERSION.to_string()),
        ("kind", kind.to_string()),
        ("A", cfg.alphabet_size().to_string()),
        ("L", cfg.max_len().to_string()),
        ("W", cfg.window_len().to_string()),
        ("Hc", cell.hidden.to_string()),
        ("k", cell.kernel.to_string()),
        ("E", emb.embed_dim.to_string()),
        ("embed_channels", emb.channels.to_string()),
        ("embed_kernel", emb.kernel.to_string()),
        ("seed", seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn network_tensors(network: &Network<f64>) -> IndexMap<String, Tensor<f64>> {
    network
        .theta
        .iter()
        .chain(network.phi.iter())
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn expect_kind(c: &Container, kind: &str) -> Result<(), FormatError> {
    let found = c.get("kind")?;
    if found != kind {
        return Err(FormatError::Header(format!("expected a {kind} file, found kind={found}")));
    }
    Ok(())
}

/// Rebuilds the network described by the header, checking every tensor
/// against the architecture's parameter list.
fn network_from(c: &Container) -> Result<Network<f64>, FormatError> {
    let fixed = [("A", ALPHABET_SIZE), ("W", WINDOW_LEN)];
    for (key, want) in fixed {
        let got: usize = c.parse(key)?;
        if got != want {
            return Err(FormatError::Header(format!("{key}={got}, this build supports {want}")));
        }
    }
    let max_len: usize = c.parse("L")?;
    if max_len == 0 {
        return Err(FormatError::Header("L must be positive".into()));
    }
    let cell = ConvLstmConfig {
        hidden: c.parse("Hc")?,
        kernel: c.parse("k")?,
    };
    let embed = EmbedConfig {
        embed_dim: c.parse("E")?,
        channels: c.parse("embed_channels")?,
        kernel: c.parse("embed_kernel")?,
    };
    let valid = cell.hidden > 0 && cell.kernel % 2 == 1 && embed.embed_dim >= 2 && embed.kernel % 2 == 1;
    if !valid {
        return Err(FormatError::Header("invalid architecture".into()));
    }
    let seed: u64 = c.parse("seed")?;
    let template = Network::<f64>::init(CodecConfig::new(max_len), cell, embed, seed);

    let fill = |like: &ParamStore<f64>, seed: u64| -> Result<ParamStore<f64>, FormatError> {
        let mut store = ParamStore::new(seed);
        for (name, t) in like.iter() {
            let got = c.tensor(name)?;
            if got.shape() != t.shape() {
                return Err(FormatError::Header(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
            store.insert(name, got.clone());
        }
        Ok(store)
    };
    Ok(Network {
        theta: fill(&template.theta, template.theta.seed())?,
        phi: fill(&template.phi, template.phi.seed())?,
        autoencoder: template.autoencoder,
        embedder: template.embedder,
    })
}

/// Weights container holding θ and φ.
pub fn weights_container(network: &Network<f64>) -> Container {
    Container {
        header: architecture_header(network, "weights", network.theta.seed()),
        tensors: network_tensors(network),
    }
}

pub fn save_weights(network: &Network<f64>, path: &Path) -> Result<(), MatchError> {
    Ok(weights_container(network).write(path)?)
}

pub fn load_weights(path: &Path) -> Result<Network<f64>, MatchError> {
    let c = Container::read(path)?;
    expect_kind(&c, "weights")?;
    let network = network_from(&c)?;
    if c.tensors.len() != network.theta.len() + network.phi.len() {
        return Err(FormatError::Header("unexpected extra tensors".into()).into());
    }
    Ok(network)
}

pub fn model_container(model: &FingerprintModel<f64>) -> Container {
    let mut header = architecture_header(&model.network, "model", model.meta.seed);
    header.insert("tau".into(), model.tau.to_string());
    header.insert("target".into(), model.meta.target.clone());
    header.insert("support_target".into(), model.c_t.support_count.to_string());
    header.insert("support_null".into(), model.c_n.support_count.to_string());
    let mut tensors = network_tensors(&model.network);
    tensors.insert(PROTO_TARGET.into(), model.c_t.vector.clone());
    tensors.insert(PROTO_NULL.into(), model.c_n.vector.clone());
    Container { header, tensors }
}

pub fn save_model(model: &FingerprintModel<f64>, path: &Path) -> Result<(), MatchError> {
    Ok(model_container(model).write(path)?)
}

pub fn model_from_container(c: &Container) -> Result<FingerprintModel<f64>, FormatError> {
    expect_kind(c, "model")?;
    let network = network_from(c)?;
    if c.tensors.len() != network.theta.len() + network.phi.len() + 2 {
        return Err(FormatError::Header("unexpected extra tensors".into()));
    }
    let w = network.codec().window_len();
    let proto = |name: &str, key: &str, class: ClassId| -> Result<Prototype<f64>, FormatError> {
        let vector = c.tensor(name)?.clone();
        if vector.shape() != [network.embedder.cfg.embed_dim] {
            return Err(FormatError::Header(format!("prototype {name:?} has the wrong dimension")));
        }
        let support_count: usize = c.parse(key)?;
        if support_count != w {
            return Err(FormatError::Header(format!("{key}={support_count}, expected {w}")));
        }
        Ok(Prototype {
            vector,
            class,
            support_count,
        })
    };
    let tau: f64 = c.parse("tau")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(FormatError::Header(format!("tau={tau} outside [0, 1]")));
    }
    Ok(FingerprintModel {
        c_t: proto(PROTO_TARGET, "support_target", ClassId::Target)?,
        c_n: proto(PROTO_NULL, "support_null", ClassId::Null)?,
        tau,
        meta: ModelMeta {
            version: c.parse("version")?,
            seed: c.parse("seed")?,
            target: c.get("target")?.to_string(),
        },
        network,
    })
}

pub fn load_model(path: &Path) -> Result<FingerprintModel<f64>, MatchError> {
    Ok(model_from_container(&Container::read(path)?)?)
}
