//! Two-phase training and the per-packet identification evaluation.
//!
//! Phase 1 fits the autoencoder to windows of the training devices. Phase 2
//! freezes θ and fits the embedder φ on positive and negative pairs: a
//! target window plus a single query packet from the same device or from a
//! different one.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::codec::{build_windows, encode_packet, null_window, CodecConfig, DeviceTrace, PacketSample, Window};
use crate::convlstm::{AeCurve, AeTrainConfig, ConvLstmConfig};
use crate::diff::{adam_step, grad_check, AdamConfig, GradCheckOptions, GradCheckReport, ParamStore, Rng, Tape, Tensor, Var};
use crate::network::Network;
use crate::protonet::{posterior, record_proto_loss, ClassId, EmbedConfig, Embedding, PairKind};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("need at least 2 training devices with more than {needed} packets, found {found}")]
    TooFewDevices { found: usize, needed: usize },
    #[error("training devices yield no {window}-packet windows")]
    NoWindows { window: usize },
    #[error("split ratio must lie in [0, 1], got {0}")]
    BadRatio(f64),
    #[error("pair batch size must be positive and pos_fraction in [0, 1]")]
    BadBatch,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    pub held_out: BTreeSet<String>,
}

impl SplitSpec {
    pub fn is_train(&self, device: &str) -> bool {
        self.train.contains(device)
    }

    /// `train <id>` / `held_out <id>` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for d in &self.train {
            s.push_str(&format!("train\t{d}\n"));
        }
        for d in &self.held_out {
            s.push_str(&format!("held_out\t{d}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut split = SplitSpec {
            train: BTreeSet::new(),
            held_out: BTreeSet::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (kind, id) = line.split_once('\t')?;
            match kind {
                "train" => split.train.insert(id.to_string()),
                "held_out" => split.held_out.insert(id.to_string()),
                _ => return None,
            };
        }
        Some(split)
    }
}

/// Seeded shuffle of the device ids; the first `⌈ratio · N⌉` train.
pub fn split_devices(device_ids: &[String], ratio: f64, seed: u64) -> Result<SplitSpec, TrainError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TrainError::BadRatio(ratio));
    }
    let mut ids: Vec<String> = device_ids.to_vec();
    ids.sort();
    ids.dedup();
    Rng::derive(seed, 0x5B17).shuffle(&mut ids);
    // The epsilon keeps ratios such as 12/23 from rounding up past an exact count.
    let n_train = ((ratio * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let held_out = ids.split_off(n_train.min(ids.len()));
    Ok(SplitSpec {
        train: ids.into_iter().collect(),
        held_out: held_out.into_iter().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairEntry {
    /// Index of the target device in the corpus.
    pub target_device: usize,
    /// First line of the target window.
    pub window_offset: usize,
    pub query_device: usize,
    pub query_index: usize,
    pub kind: PairKind,
}

impl PairEntry {
    pub fn window(&self, corpus: &[DeviceTrace], cfg: &CodecConfig) -> Window {
        corpus[self.target_device].window_at(self.window_offset, cfg)
    }

    pub fn query(&self, corpus: &[DeviceTrace], cfg: &CodecConfig) -> PacketSample {
        encode_packet(&corpus[self.query_device].lines[self.query_index], cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub entries: Vec<PairEntry>,
}

/// Corpus indices of training devices with at least `W + 1` packets.
pub fn usable_train_devices(corpus: &[DeviceTrace], split: &SplitSpec, window_len: usize) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, t)| split.is_train(&t.device_id) && t.lines.len() > window_len)
        .map(|(i, _)| i)
        .collect()
}

/// Draws `round(pos_fraction · batch_size)` positive pairs and fills the
/// rest with negatives. Devices are drawn uniformly, then window offsets
/// and query packets uniformly within the device.
pub fn sample_pairs(
    corpus: &[DeviceTrace],
    split: &SplitSpec,
    cfg: &CodecConfig,
    batch_size: usize,
    pos_fraction: f64,
    seed: u64,
) -> Result<PairBatch, TrainError> {
    if batch_size == 0 || !(0.0..=1.0).contains(&pos_fraction) {
        return Err(TrainError::BadBatch);
    }
    let w = cfg.window_len();
    let devices = usable_train_devices(corpus, split, w);
    if devices.len() < 2 {
        return Err(TrainError::TooFewDevices {
            found: devices.len(),
            needed: w,
        });
    }
    let mut rng = Rng::derive(seed, 0x9A1E);
    let n_pos = (pos_fraction * batch_size as f64).round() as usize;
    let entries = (0..batch_size)
        .map(|i| {
            let d = devices[rng.below(devices.len())];
            let n = corpus[d].lines.len();
            let offset = rng.below(n - w + 1);
            if i < n_pos {
                // Query from the same trace, outside the window.
                let mut q = rng.below(n - w);
                if q >= offset {
                    q += w;
                }
                PairEntry {
                    target_device: d,
                    window_offset: offset,
                    query_device: d,
                    query_index: q,
                    kind: PairKind::Positive,
                }
            } else {
                let mut o = rng.below(devices.len() - 1);
                if devices[o] == d {
                    o = devices.len() - 1;
                }
                let od = devices[o];
                PairEntry {
                    target_device: d,
                    window_offset: offset,
                    query_device: od,
                    query_index: rng.below(corpus[od].lines.len()),
                    kind: PairKind::Negative,
                }
            }
        })
        .collect();
    Ok(PairBatch { entries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrainConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub pos_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            batches: 2000,
            batch_size: 32,
            pos_fraction: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Fits φ on pair batches with θ frozen. Returns the new φ and the mean
/// pair loss of every batch.
pub fn train_phase2(
    network: &Network<f64>,
    corpus: &[DeviceTrace],
    split: &SplitSpec,
    hp: &MetaTrainConfig,
) -> Result<(ParamStore<f64>, Vec<f64>), TrainError> {
    let cfg = *network.codec();
    let ae = &network.autoencoder;
    let theta = &network.theta;
    let null_encs: Vec<Tensor<f64>> = ae
        .encode(theta, &null_window(&cfg))
        .into_iter()
        .map(|e| e.0)
        .collect();
    let mut window_cache: HashMap<(usize, usize), Vec<Tensor<f64>>> = HashMap::new();
    let mut query_cache: HashMap<(usize, usize), Tensor<f64>> = HashMap::new();

    let mut phi = network.phi.clone();
    let mut curve = Vec::with_capacity(hp.batches);
    for b in 0..hp.batches {
        let batch_seed = Rng::derive(hp.seed, 0x0B00 + b as u64).next_u64();
        let batch = sample_pairs(corpus, split, &cfg, hp.batch_size, hp.pos_fraction, batch_seed)?;

        let mut tape = Tape::new();
        tape.bind_all(&phi);
        let null_vars: Vec<Var> = null_encs.iter().map(|e| tape.constant(e.clone())).collect();
        let null_embs: Vec<Var> = null_vars
            .iter()
            .map(|&e| network.embedder.record_embed(&mut tape, &phi, e))
            .collect();
        let c_n = tape.mean_of(&null_embs);

        let mut losses = Vec::with_capacity(batch.entries.len());
        for e in &batch.entries {
            let encs = window_cache
                .entry((e.target_device, e.window_offset))
                .or_insert_with(|| {
                    ae.encode(theta, &e.window(corpus, &cfg))
                        .into_iter()
                        .map(|x| x.0)
                        .collect()
                });
            let target_embs: Vec<Var> = encs
                .iter()
                .map(|t| {
                    let v = tape.constant(t.clone());
                    network.embedder.record_embed(&mut tape, &phi, v)
                })
                .collect();
            let c_t = tape.mean_of(&target_embs);
            let q_enc = query_cache
                .entry((e.query_device, e.query_index))
                .or_insert_with(|| ae.encode_single(theta, &e.query(corpus, &cfg)).0);
            let q = tape.constant(q_enc.clone());
            let q = network.embedder.record_embed(&mut tape, &phi, q);
            losses.push(record_proto_loss(
                &mut tape,
                q,
                c_t,
                c_n,
                e.kind.label(),
            ));
        }
        let loss = tape.mean_of(&losses);
        curve.push(tape.value(loss).item());
        let grads = tape.backward(loss);
        adam_step(&mut phi, &grads, &hp.adam);
    }
    Ok((phi.frozen(), curve))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub cell: ConvLstmConfig,
    pub embed: EmbedConfig,
    pub codec: CodecConfig,
    /// Offset step between phase-1 windows.
    pub window_stride: usize,
    pub phase1: AeTrainConfig,
    pub phase2: MetaTrainConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let codec = CodecConfig::default();
        Self {
            cell: ConvLstmConfig::default(),
            embed: EmbedConfig::default(),
            window_stride: codec.window_len(),
            codec,
            phase1: AeTrainConfig::default(),
            phase2: MetaTrainConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Propagates the top-level seed into both phases.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.phase1.seed = seed;
        self.phase2.seed = seed.wrapping_add(0x2);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub network: Network<f64>,
    pub phase1: AeCurve,
    pub phase2: Vec<f64>,
}

/// Phase 1 then phase 2 over the training devices of `split`.
pub fn train(corpus: &[DeviceTrace], split: &SplitSpec, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let w = cfg.codec.window_len();
    let found = usable_train_devices(corpus, split, w).len();
    if found < 2 {
        return Err(TrainError::TooFewDevices { found, needed: w });
    }
    let windows: Vec<Window> = corpus
        .iter()
        .filter(|t| split.is_train(&t.device_id))
        .flat_map(|t| build_windows(t, &cfg.codec, cfg.window_stride))
        .collect();
    if windows.is_empty() {
        return Err(TrainError::NoWindows { window: w });
    }
    let mut network = Network::init(cfg.codec, cfg.cell, cfg.embed, cfg.seed);
    let (theta, phase1) = network.autoencoder.train(&windows, &cfg.phase1);
    network.theta = theta;
    let (phi, phase2) = train_phase2(&network, corpus, split, &cfg.phase2)?;
    network.phi = phi;
    Ok(TrainOutcome {
        network,
        phase1,
        phase2,
    })
}

/// One per-packet decision of the evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub target: String,
    pub source: String,
    pub packet_index: usize,
    pub p_target: f64,
    pub flagged: bool,
}

impl Decision {
    pub fn correct(&self) -> bool {
        self.flagged == (self.target == self.source)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.6}\t{}",
            self.target,
            self.source,
            self.packet_index,
            self.p_target,
            if self.flagged { "TARGET" } else { "NULL" }
        )
    }
}

/// Results with one device as the target.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceEval {
    pub device: String,
    pub seen: bool,
    pub queries: usize,
    pub true_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    /// Sources whose majority decision was right.
    pub sources_correct: usize,
    pub sources: usize,
}

impl DeviceEval {
    pub fn query_accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.queries)
    }

    /// Mean of the true-positive and true-negative rates.
    pub fn balanced_accuracy(&self) -> f64 {
        let tpr = ratio(self.true_pos, self.true_pos + self.false_neg);
        let tnr = ratio(self.true_neg, self.true_neg + self.false_pos);
        0.5 * (tpr + tnr)
    }

    pub fn device_accuracy(&self) -> f64 {
        ratio(self.sources_correct, self.sources)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Aggregate rates weighted by query count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub query_accuracy: f64,
    pub balanced_accuracy: f64,
    pub device_accuracy: f64,
    pub targets: usize,
}

impl Aggregate {
    fn over<'a>(rows: impl Iterator<Item = &'a DeviceEval>) -> Self {
        let mut agg = Aggregate::default();
        let mut weight = 0.0;
        for r in rows {
            let w = r.queries as f64;
            agg.query_accuracy += w * r.query_accuracy();
            agg.balanced_accuracy += w * r.balanced_accuracy();
            agg.device_accuracy += w * r.device_accuracy();
            agg.targets += 1;
            weight += w;
        }
        if weight > 0.0 {
            agg.query_accuracy /= weight;
            agg.balanced_accuracy /= weight;
            agg.device_accuracy /= weight;
        }
        agg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_device: Vec<DeviceEval>,
    /// Devices too short to serve as a target, with their packet counts.
    pub skipped: Vec<(String, usize)>,
    pub overall: Aggregate,
    pub unseen: Aggregate,
    pub decisions: Vec<Decision>,
    pub tau: f64,
}

impl EvalReport {
    /// Rebuilds the report from a decision log.
    pub fn from_decisions(
        decisions: Vec<Decision>,
        split: &SplitSpec,
        skipped: Vec<(String, usize)>,
        tau: f64,
    ) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, DeviceEval> = HashMap::new();
        let mut votes: HashMap<(String, String), (usize, usize)> = HashMap::new();
        for d in &decisions {
            let row = rows.entry(d.target.clone()).or_insert_with(|| {
                order.push(d.target.clone());
                DeviceEval {
                    device: d.target.clone(),
                    seen: split.is_train(&d.target),
                    queries: 0,
                    true_pos: 0,
                    false_neg: 0,
                    true_neg: 0,
                    false_pos: 0,
                    sources_correct: 0,
                    sources: 0,
                }
            });
            row.queries += 1;
            match (d.target == d.source, d.flagged) {
                (true, true) => row.true_pos += 1,
                (true, false) => row.false_neg += 1,
                (false, false) => row.true_neg += 1,
                (false, true) => row.false_pos += 1,
            }
            let v = votes.entry((d.target.clone(), d.source.clone())).or_default();
            v.0 += usize::from(d.flagged);
            v.1 += 1;
        }
        for ((target, source), (flagged, total)) in &votes {
            let row = rows.get_mut(target).expect("row exists for every vote");
            let says_target = 2 * flagged > *total;
            row.sources += 1;
            if says_target == (target == source) {
                row.sources_correct += 1;
            }
        }
        let per_device: Vec<DeviceEval> = order.iter().map(|t| rows.remove(t).unwrap()).collect();
        let overall = Aggregate::over(per_device.iter());
        let unseen = Aggregate::over(per_device.iter().filter(|r| !r.seen));
        Self {
            per_device,
            skipped,
            overall,
            unseen,
            decisions,
            tau,
        }
    }

    /// Aligned text table: one row per target and aggregate rows.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>6} {:>8} {:>9} {:>9} {:>9}\n",
            "target", "seen", "queries", "query_acc", "balanced", "device"
        );
        for r in &self.per_device {
            s.push_str(&format!(
                "{:<24} {:>6} {:>8} {:>9.4} {:>9.4} {:>9.4}\n",
                r.device,
                if r.seen { "yes" } else { "no" },
                r.queries,
                r.query_accuracy(),
                r.balanced_accuracy(),
                r.device_accuracy()
            ));
        }
        for (name, a) in [("ALL", &self.overall), ("UNSEEN", &self.unseen)] {
            let queries: usize = self
                .per_device
                .iter()
                .filter(|r| name == "ALL" || !r.seen)
                .map(|r| r.queries)
                .sum();
            s.push_str(&format!(
                "{:<24} {:>6} {:>8} {:>9.4} {:>9.4} {:>9.4}\n",
                name, a.targets, queries, a.query_accuracy, a.balanced_accuracy, a.device_accuracy
            ));
        }
        for (d, n) in &self.skipped {
            s.push_str(&format!("# skipped {d}: {n} packets, fewer than a window\n"));
        }
        s
    }

    /// Per-decision log, one tab-separated record per line.
    pub fn decision_log(&self) -> String {
        let mut s = String::from("# target\tsource\tpacket_index\tp_target\tdecision\n");
        for d in &self.decisions {
            s.push_str(&d.to_string());
            s.push('\n');
        }
        s
    }
}

/// Runs the evaluation with an arbitrary posterior: `p(target, source,
/// packet)` over corpus indices. Targets shorter than a window are skipped.
pub fn evaluate_with(
    corpus: &[DeviceTrace],
    split: &SplitSpec,
    window_len: usize,
    tau: f64,
    mut p_target: impl FnMut(usize, usize, usize) -> f64,
) -> EvalReport {
    let mut decisions = Vec::new();
    let mut skipped = Vec::new();
    for (ti, target) in corpus.iter().enumerate() {
        if target.lines.len() < window_len {
            skipped.push((target.device_id.clone(), target.lines.len()));
            continue;
        }
        for (si, source) in corpus.iter().enumerate() {
            for qi in 0..source.lines.len() {
                let p = p_target(ti, si, qi);
                decisions.push(Decision {
                    target: target.device_id.clone(),
                    source: source.device_id.clone(),
                    packet_index: qi,
                    p_target: p,
                    flagged: p > tau,
                });
            }
        }
    }
    EvalReport::from_decisions(decisions, split, skipped, tau)
}

/// Each device in turn is the target: its first `W` packets form the
/// fingerprint window, and every packet of every device is classified
/// against the Target and Null prototypes.
pub fn evaluate(network: &Network<f64>, corpus: &[DeviceTrace], split: &SplitSpec, tau: f64) -> EvalReport {
    let cfg = *network.codec();
    let w = cfg.window_len();
    let c_n = network.null_prototype();
    let queries: Vec<Vec<Embedding<f64>>> = corpus
        .iter()
        .map(|t| {
            let samples: Vec<PacketSample> = t.lines.iter().map(|l| encode_packet(l, &cfg)).collect();
            network.query_embeddings(&samples)
        })
        .collect();
    let targets: Vec<_> = corpus
        .iter()
        .map(|t| {
            (t.lines.len() >= w).then(|| network.window_prototype(&t.window_at(0, &cfg), ClassId::Target))
        })
        .collect();
    evaluate_with(corpus, split, w, tau, |ti, si, qi| {
        let c_t = targets[ti].as_ref().expect("targets shorter than W are skipped");
        posterior(&queries[si][qi], c_t, &c_n).p_target
    })
}

/// Finite-difference check of the composed pair loss, from one-hot packets
/// through the encoder and the embedder to the posterior, over the encoder
/// and embedder parameters of a freshly initialized default network.
///
/// The graph averages one positive and one negative pair drawn from a small
/// synthetic corpus generated with `seed`.
pub fn gradcheck_composed(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let codec = CodecConfig::default();
    let w = codec.window_len();
    let corpus = crate::synth::make_corpus(2, w + 1, 0.6, seed);
    let network: Network<f64> = Network::init(codec, ConvLstmConfig::default(), EmbedConfig::default(), seed);
    let target = corpus.traces[0].window_at(0, &codec);
    let positive = encode_packet(&corpus.traces[0].lines[w], &codec);
    let negative = encode_packet(&corpus.traces[1].lines[0], &codec);
    let params = network.joint_params();
    grad_check(
        &params,
        |tape, p| {
            let a = network.record_pair_loss(tape, p, &target, &positive, PairKind::Positive);
            let b = network.record_pair_loss(tape, p, &target, &negative, PairKind::Negative);
            tape.mean_of(&[a, b])
        },
        opts,
    )
}
