//! The full network: autoencoder parameters θ plus embedder parameters φ.

use crate::codec::{null_window, CodecConfig, PacketSample, Window};
use crate::convlstm::{Autoencoder, ConvLstmConfig, ENCODER};
use crate::diff::{ParamStore, Tape, Var};
use crate::protonet::{prototype, ClassId, EmbedConfig, Embedder, Embedding, PairKind, Prototype};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub autoencoder: Autoencoder,
    pub embedder: Embedder,
    pub theta: ParamStore<T>,
    pub phi: ParamStore<T>,
}

impl<T: Scalar> Network<T> {
    /// Untrained network with θ and φ drawn from `seed`.
    pub fn init(codec: CodecConfig, cell: ConvLstmConfig, embed: EmbedConfig, seed: u64) -> Self {
        let autoencoder = Autoencoder::new(codec, cell);
        let embedder = Embedder::new(embed, cell.hidden);
        Self {
            theta: autoencoder.init_params(seed),
            phi: embedder.init_params(seed.wrapping_add(1)),
            autoencoder,
            embedder,
        }
    }

    pub fn codec(&self) -> &CodecConfig {
        &self.autoencoder.codec
    }

    /// Per-packet encodings of a window, each embedded.
    pub fn window_embeddings(&self, window: &Window) -> Vec<Embedding<T>> {
        let encs = self.autoencoder.encode(&self.theta, window);
        self.embedder.embed_all(&self.phi, &encs)
    }

    pub fn window_prototype(&self, window: &Window, class: ClassId) -> Prototype<T> {
        prototype(&self.window_embeddings(window), class)
    }

    pub fn null_prototype(&self) -> Prototype<T> {
        self.window_prototype(&null_window(self.codec()), ClassId::Null)
    }

    /// Embedding of a single query packet encoded from the zero state.
    pub fn query_embedding(&self, sample: &PacketSample) -> Embedding<T> {
        let enc = self.autoencoder.encode_single(&self.theta, sample);
        self.embedder.embed(&self.phi, &enc)
    }

    pub fn query_embeddings(&self, samples: &[PacketSample]) -> Vec<Embedding<T>> {
        let encs = self.autoencoder.encode_each(&self.theta, samples);
        self.embedder.embed_all(&self.phi, &encs)
    }

    /// Encoder tensors of θ followed by φ, in one store.
    pub fn joint_params(&self) -> ParamStore<T> {
        let mut joint = ParamStore::new(self.theta.seed());
        let prefix = format!("{ENCODER}.");
        for (name, t) in self.theta.iter().filter(|(n, _)| n.starts_with(&prefix)) {
            joint.insert(name, t.clone());
        }
        for (name, t) in self.phi.iter() {
            joint.insert(name, t.clone());
        }
        joint
    }

    /// Pair loss from raw packets: encoder, embedder and posterior recorded
    /// on one tape. `params` supplies both the `enc.*` and the `emb.*`
    /// tensors, as in [`joint_params`](Self::joint_params).
    pub fn record_pair_loss(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        target: &Window,
        query: &PacketSample,
        kind: PairKind,
    ) -> Var {
        let ae = &self.autoencoder;
        let t = ae.record_encode(tape, params, &target.samples);
        let n = ae.record_encode(tape, params, &null_window(self.codec()).samples);
        let q = ae.record_encode(tape, params, std::slice::from_ref(query))[0];
        self.embedder.record_pair_loss(tape, params, &t, &n, q, kind)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            autoencoder: self.autoencoder,
            embedder: self.embedder,
            theta: self.theta.cast(),
            phi: self.phi.cast(),
        }
    }
}
