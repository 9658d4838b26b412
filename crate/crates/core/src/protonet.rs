//! One-class prototypical network: an embedding of encoder states, Target
//! and Null prototypes, the two-way posterior and its losses.

use crate::convlstm::Encoding;
use crate::diff::{Init, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const CONV_W: &str = "emb.conv.w";
pub const CONV_B: &str = "emb.conv.b";
pub const DENSE_W: &str = "emb.dense.w";
pub const DENSE_B: &str = "emb.dense.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedConfig {
    pub embed_dim: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            channels: 16,
            kernel: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassId {
    Target,
    Null,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairKind {
    Positive,
    Negative,
}

impl PairKind {
    /// The class a query of this pair should be assigned to.
    pub fn label(self) -> ClassId {
        match self {
            PairKind::Positive => ClassId::Target,
            PairKind::Negative => ClassId::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T>(pub Tensor<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype<T> {
    pub vector: Tensor<T>,
    pub class: ClassId,
    pub support_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior<T> {
    pub p_target: T,
    pub p_null: T,
}

/// `f_φ`: conv1d → tanh → mean over positions → dense.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedder {
    pub cfg: EmbedConfig,
    /// Channels of the incoming encodings.
    pub input_channels: usize,
}

impl Embedder {
    pub fn new(cfg: EmbedConfig, input_channels: usize) -> Self {
        assert!(cfg.embed_dim >= 2, "embedding dimension must be at least 2");
        assert!(cfg.kernel % 2 == 1, "embedding kernel must be odd");
        Self {
            cfg,
            input_channels,
        }
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut s = ParamStore::new(seed);
        let sc = [self.cfg.kernel, self.input_channels, self.cfg.channels];
        s.add(CONV_W, &sc, Init::glorot_conv(&sc));
        s.add(CONV_B, &[self.cfg.channels], Init::Zeros);
        let sd = [self.cfg.channels, self.cfg.embed_dim];
        s.add(DENSE_W, &sd, Init::glorot_dense(&sd));
        s.add(DENSE_B, &[self.cfg.embed_dim], Init::Zeros);
        s
    }

    pub fn record_embed<T: Scalar>(&self, tape: &mut Tape<T>, phi: &ParamStore<T>, enc: Var) -> Var {
        let cw = tape.param(phi, CONV_W);
        let cb = tape.param(phi, CONV_B);
        let dw = tape.param(phi, DENSE_W);
        let db = tape.param(phi, DENSE_B);
        let conv = tape.conv1d(enc, cw, Some(cb));
        let act = tape.tanh(conv);
        let pooled = tape.mean_pool(act);
        tape.dense(pooled, dw, db)
    }

    pub fn embed<T: Scalar>(&self, phi: &ParamStore<T>, enc: &Encoding<T>) -> Embedding<T> {
        let mut tape = Tape::new();
        let e = tape.constant(enc.0.clone());
        let out = self.record_embed(&mut tape, phi, e);
        Embedding(tape.value(out).clone())
    }

    /// Embeds many encodings on one tape.
    pub fn embed_all<T: Scalar>(&self, phi: &ParamStore<T>, encs: &[Encoding<T>]) -> Vec<Embedding<T>> {
        let mut tape = Tape::new();
        for name in [CONV_W, CONV_B, DENSE_W, DENSE_B] {
            tape.param(phi, name);
        }
        let mark = tape.checkpoint();
        encs.iter()
            .map(|enc| {
                tape.rewind(mark);
                let e = tape.constant(enc.0.clone());
                let out = self.record_embed(&mut tape, phi, e);
                Embedding(tape.value(out).clone())
            })
            .collect()
    }

    /// Cross-entropy of one pair: the Target prototype is the mean embedding
    /// of `target_encs`, the Null prototype that of `null_encs`, and the
    /// query should land in the Target class for a positive pair and in the
    /// Null class for a negative one.
    pub fn record_pair_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        phi: &ParamStore<T>,
        target_encs: &[Var],
        null_encs: &[Var],
        query: Var,
        kind: PairKind,
    ) -> Var {
        let embed_all = |tape: &mut Tape<T>, encs: &[Var]| -> Vec<Var> {
            encs.iter().map(|&e| self.record_embed(tape, phi, e)).collect()
        };
        let t = embed_all(tape, target_encs);
        let c_t = tape.mean_of(&t);
        let n = embed_all(tape, null_encs);
        let c_n = tape.mean_of(&n);
        let q = self.record_embed(tape, phi, query);
        record_proto_loss(tape, q, c_t, c_n, kind.label())
    }

    /// Tape-free [`record_pair_loss`](Self::record_pair_loss).
    pub fn pair_loss<T: Scalar>(
        &self,
        phi: &ParamStore<T>,
        target_encs: &[Encoding<T>],
        null_encs: &[Encoding<T>],
        query: &Encoding<T>,
        kind: PairKind,
    ) -> T {
        assert_eq!(
            target_encs.len(),
            null_encs.len(),
            "target and null windows must have equal length"
        );
        let mut tape = Tape::new();
        let t: Vec<Var> = target_encs.iter().map(|e| tape.constant(e.0.clone())).collect();
        let n: Vec<Var> = null_encs.iter().map(|e| tape.constant(e.0.clone())).collect();
        let q = tape.constant(query.0.clone());
        let l = self.record_pair_loss(&mut tape, phi, &t, &n, q, kind);
        tape.value(l).item()
    }
}

/// Records `−log p(label | q)` given the two prototypes.
pub fn record_proto_loss<T: Scalar>(tape: &mut Tape<T>, q: Var, c_t: Var, c_n: Var, label: ClassId) -> Var {
    let d_t = tape.sq_dist(q, c_t);
    let d_n = tape.sq_dist(q, c_n);
    tape.two_class_nll(d_t, d_n, label == ClassId::Target)
}

/// Mean of the support embeddings.
pub fn prototype<T: Scalar>(embeddings: &[Embedding<T>], class: ClassId) -> Prototype<T> {
    assert!(!embeddings.is_empty(), "prototype of an empty support set");
    let dim = embeddings[0].0.shape().to_vec();
    let mut acc = Tensor::zeros(&dim);
    for e in embeddings {
        assert_eq!(e.0.shape(), &dim[..], "embedding dimension mismatch");
        for (a, &v) in acc.data_mut().iter_mut().zip(e.0.data()) {
            *a += v;
        }
    }
    let n = T::of(embeddings.len() as f64);
    Prototype {
        vector: acc.map(|v| v / n),
        class,
        support_count: embeddings.len(),
    }
}

pub fn squared_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "distance between different dimensions");
    a.data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
}

/// Softmax over negated squared distances, evaluated relative to the
/// nearer prototype.
pub fn posterior_from_distances<T: Scalar>(d_target: T, d_null: T) -> Posterior<T> {
    let m = d_target.min(d_null);
    let et = (m - d_target).exp();
    let en = (m - d_null).exp();
    let z = et + en;
    Posterior {
        p_target: et / z,
        p_null: en / z,
    }
}

pub fn posterior<T: Scalar>(q: &Embedding<T>, c_t: &Prototype<T>, c_n: &Prototype<T>) -> Posterior<T> {
    posterior_from_distances(
        squared_distance(&q.0, &c_t.vector),
        squared_distance(&q.0, &c_n.vector),
    )
}

/// `−log p(label | q)`, never evaluating `log 0`.
pub fn proto_loss<T: Scalar>(q: &Embedding<T>, c_t: &Prototype<T>, c_n: &Prototype<T>, label: ClassId) -> T {
    let (loss, _) = crate::diff::two_class_nll(
        squared_distance(&q.0, &c_t.vector),
        squared_distance(&q.0, &c_n.vector),
        label == ClassId::Target,
    );
    loss
}
