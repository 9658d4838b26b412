//! ConvLSTM autoencoder over packet windows.
//!
//! Time runs over the packets of a window; the convolution runs over
//! character positions. The encoder consumes one-hot packet matrices
//! (`L × A`) and its hidden state `H_t` (`L × Hc`) is the encoding of packet
//! `t`. A second ConvLSTM decodes the encodings and a width-1 convolution
//! projects each hidden state back to `L × A`.

use crate::codec::{CodecConfig, PacketSample, Window};
use crate::diff::{adam_step, AdamConfig, Gradients, Init, ParamStore, Rng, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const ENCODER: &str = "enc";
pub const DECODER: &str = "dec";
pub const PROJ_W: &str = "dec.proj.w";
pub const PROJ_B: &str = "dec.proj.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLstmConfig {
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            kernel: 5,
        }
    }
}

impl ConvLstmConfig {
    pub fn validate(&self) {
        assert!(self.hidden >= 1, "hidden channels must be at least 1");
        assert!(self.kernel % 2 == 1, "kernel width must be odd, got {}", self.kernel);
    }
}

/// Hidden and cell state, each `L × Hc`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> CellState<T> {
    pub fn zeros(len: usize, hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[len, hidden]),
            c: Tensor::zeros(&[len, hidden]),
        }
    }
}

/// Gate activations of one step, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Gates<T> {
    pub input: Tensor<T>,
    pub forget: Tensor<T>,
    pub output: Tensor<T>,
}

/// Encoder hidden state after one packet, `L × Hc`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<T>(pub Tensor<T>);

/// Input of one cell step.
#[derive(Clone, Copy, Debug)]
pub enum CellInput<'a> {
    /// One-hot rows given by their hot index.
    OneHot(&'a [u32]),
    Dense(Var),
}

/// Vars produced by one recorded step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub i: Var,
    pub f: Var,
    pub o: Var,
    pub c: Var,
    pub h: Var,
}

/// Parameter names of one ConvLSTM cell under `prefix`.
#[derive(Clone, Debug)]
pub struct CellNames {
    pub w_x: [String; 4],
    pub w_h: [String; 4],
    pub b: [String; 4],
    pub peep: [String; 3],
}

const GATES: [&str; 4] = ["i", "f", "c", "o"];

impl CellNames {
    pub fn new(prefix: &str) -> Self {
        let n = |kind: &str, g: &str| format!("{prefix}.{kind}{g}");
        Self {
            w_x: GATES.map(|g| n("w_x", g)),
            w_h: GATES.map(|g| n("w_h", g)),
            b: GATES.map(|g| n("b_", g)),
            peep: ["i", "f", "o"].map(|g| n("w_c", g)),
        }
    }
}

/// Adds one cell's parameters: input/hidden kernels per gate, per-element
/// peephole weights for the input, forget and output gates, and biases
/// (forget bias starts at one).
pub fn add_cell_params<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    len: usize,
    cin: usize,
    cfg: &ConvLstmConfig,
) {
    let names = CellNames::new(prefix);
    let (k, hc) = (cfg.kernel, cfg.hidden);
    for g in 0..4 {
        let sx = [k, cin, hc];
        store.add(&names.w_x[g], &sx, Init::glorot_conv(&sx));
        let sh = [k, hc, hc];
        store.add(&names.w_h[g], &sh, Init::glorot_conv(&sh));
        let bias = if GATES[g] == "f" { Init::Ones } else { Init::Zeros };
        store.add(&names.b[g], &[hc], bias);
    }
    for p in &names.peep {
        store.add(p, &[len, hc], Init::Zeros);
    }
}

/// Records `I, F, C, O, H` for one step:
///
/// ```text
/// I = σ(Wxi*X + Whi*H' + Wci∘C' + bi)
/// F = σ(Wxf*X + Whf*H' + Wcf∘C' + bf)
/// C = F∘C' + I∘tanh(Wxc*X + Whc*H' + bc)
/// O = σ(Wxo*X + Who*H' + Wco∘C + bo)
/// H = O∘tanh(C)
/// ```
pub fn record_step<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    names: &CellNames,
    channels: usize,
    input: CellInput<'_>,
    h_prev: Var,
    c_prev: Var,
) -> StepVars {
    let pre = |tape: &mut Tape<T>, g: usize| {
        let wx = tape.param(params, &names.w_x[g]);
        let wh = tape.param(params, &names.w_h[g]);
        let b = tape.param(params, &names.b[g]);
        let x = match input {
            CellInput::OneHot(hot) => tape.conv1d_onehot(hot, channels, wx, Some(b)),
            CellInput::Dense(x) => tape.conv1d(x, wx, Some(b)),
        };
        let h = tape.conv1d(h_prev, wh, None);
        tape.add(x, h)
    };
    let peep = |tape: &mut Tape<T>, idx: usize, c: Var, acc: Var| {
        let w = tape.param(params, &names.peep[idx]);
        let p = tape.hadamard(w, c);
        tape.add(acc, p)
    };

    let a_i = pre(tape, 0);
    let a_i = peep(tape, 0, c_prev, a_i);
    let i = tape.sigmoid(a_i);

    let a_f = pre(tape, 1);
    let a_f = peep(tape, 1, c_prev, a_f);
    let f = tape.sigmoid(a_f);

    let a_c = pre(tape, 2);
    let cand = tape.tanh(a_c);
    let keep = tape.hadamard(f, c_prev);
    let write = tape.hadamard(i, cand);
    let c = tape.add(keep, write);

    let a_o = pre(tape, 3);
    let a_o = peep(tape, 2, c, a_o);
    let o = tape.sigmoid(a_o);

    let tc = tape.tanh(c);
    let h = tape.hadamard(o, tc);
    StepVars { i, f, o, c, h }
}

/// Autoencoder architecture: codec shape plus cell hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Autoencoder {
    pub codec: CodecConfig,
    pub cell: ConvLstmConfig,
}

impl Autoencoder {
    pub fn new(codec: CodecConfig, cell: ConvLstmConfig) -> Self {
        cell.validate();
        Self { codec, cell }
    }

    fn len(&self) -> usize {
        self.codec.max_len()
    }

    fn alphabet(&self) -> usize {
        self.codec.alphabet_size()
    }

    /// Fresh encoder, decoder and projection parameters.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut store = ParamStore::new(seed);
        let (len, hc) = (self.len(), self.cell.hidden);
        add_cell_params(&mut store, ENCODER, len, self.alphabet(), &self.cell);
        add_cell_params(&mut store, DECODER, len, hc, &self.cell);
        let sp = [1, hc, self.alphabet()];
        store.add(PROJ_W, &sp, Init::glorot_conv(&sp));
        store.add(PROJ_B, &[self.alphabet()], Init::Zeros);
        store
    }

    fn zero_state<T: Scalar>(&self, tape: &mut Tape<T>) -> (Var, Var) {
        let z = Tensor::zeros(&[self.len(), self.cell.hidden]);
        (tape.constant(z.clone()), tape.constant(z))
    }

    /// Records the encoder over `samples` from a zero state; returns `H_t`
    /// for every step.
    pub fn record_encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        samples: &[PacketSample],
    ) -> Vec<Var> {
        let names = CellNames::new(ENCODER);
        let (mut h, mut c) = self.zero_state(tape);
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            assert_eq!(s.len(), self.len(), "packet length does not match codec");
            let step = record_step(
                tape,
                params,
                &names,
                self.alphabet(),
                CellInput::OneHot(s.hot()),
                h,
                c,
            );
            h = step.h;
            c = step.c;
            out.push(h);
        }
        out
    }

    /// Records the decoder and projection; one `L × A` reconstruction per
    /// encoding.
    pub fn record_decode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        encodings: &[Var],
    ) -> Vec<Var> {
        assert!(!encodings.is_empty(), "decode needs at least one encoding");
        let names = CellNames::new(DECODER);
        let (mut h, mut c) = self.zero_state(tape);
        let pw = tape.param(params, PROJ_W);
        let pb = tape.param(params, PROJ_B);
        let mut out = Vec::with_capacity(encodings.len());
        for &e in encodings {
            let step = record_step(
                tape,
                params,
                &names,
                self.cell.hidden,
                CellInput::Dense(e),
                h,
                c,
            );
            h = step.h;
            c = step.c;
            out.push(tape.conv1d(h, pw, Some(pb)));
        }
        out
    }

    /// Records the mean squared reconstruction error over all `W·L·A`
    /// elements of the window.
    pub fn record_recon_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        window: &Window,
    ) -> Var {
        let enc = self.record_encode(tape, params, &window.samples);
        let rec = self.record_decode(tape, params, &enc);
        let per_step: Vec<Var> = window
            .samples
            .iter()
            .zip(rec)
            .map(|(s, r)| {
                let target = tape.constant(s.matrix(self.alphabet()));
                tape.mse(r, target)
            })
            .collect();
        tape.mean_of(&per_step)
    }

    /// One encoder step from an explicit state, with its gate activations.
    pub fn cell_step<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &PacketSample,
        state: &CellState<T>,
    ) -> (CellState<T>, Gates<T>) {
        let mut tape = Tape::new();
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let s = record_step(
            &mut tape,
            params,
            &CellNames::new(ENCODER),
            self.alphabet(),
            CellInput::OneHot(x.hot()),
            h,
            c,
        );
        (
            CellState {
                h: tape.value(s.h).clone(),
                c: tape.value(s.c).clone(),
            },
            Gates {
                input: tape.value(s.i).clone(),
                forget: tape.value(s.f).clone(),
                output: tape.value(s.o).clone(),
            },
        )
    }

    /// Per-step encodings of a sequence (a full window, or a single query).
    pub fn encode_samples<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        samples: &[PacketSample],
    ) -> Vec<Encoding<T>> {
        let mut tape = Tape::new();
        let vars = self.record_encode(&mut tape, params, samples);
        vars.into_iter()
            .map(|v| Encoding(tape.value(v).clone()))
            .collect()
    }

    pub fn encode<T: Scalar>(&self, params: &ParamStore<T>, window: &Window) -> Vec<Encoding<T>> {
        assert_eq!(
            window.len(),
            self.codec.window_len(),
            "window must hold exactly {} packets",
            self.codec.window_len()
        );
        self.encode_samples(params, &window.samples)
    }

    /// Query-point encoding: one step from the zero state.
    pub fn encode_single<T: Scalar>(&self, params: &ParamStore<T>, sample: &PacketSample) -> Encoding<T> {
        self.encode_samples(params, std::slice::from_ref(sample))
            .pop()
            .expect("one step")
    }

    /// Independent single-step encodings of many query packets.
    pub fn encode_each<T: Scalar>(&self, params: &ParamStore<T>, samples: &[PacketSample]) -> Vec<Encoding<T>> {
        let mut tape = Tape::new();
        let prefix = format!("{ENCODER}.");
        let names: Vec<String> = params
            .names()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect();
        for n in &names {
            tape.param(params, n);
        }
        let mark = tape.checkpoint();
        samples
            .iter()
            .map(|s| {
                tape.rewind(mark);
                let v = self.record_encode(&mut tape, params, std::slice::from_ref(s));
                Encoding(tape.value(v[0]).clone())
            })
            .collect()
    }

    pub fn decode<T: Scalar>(&self, params: &ParamStore<T>, encodings: &[Encoding<T>]) -> Vec<Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = encodings.iter().map(|e| tape.constant(e.0.clone())).collect();
        let out = self.record_decode(&mut tape, params, &vars);
        out.into_iter().map(|v| tape.value(v).clone()).collect()
    }

    pub fn recon_loss<T: Scalar>(&self, params: &ParamStore<T>, window: &Window) -> T {
        let mut tape = Tape::new();
        let l = self.record_recon_loss(&mut tape, params, window);
        tape.value(l).item()
    }

    /// Mean reconstruction loss over `windows`.
    pub fn mean_recon_loss<T: Scalar>(&self, params: &ParamStore<T>, windows: &[Window]) -> T {
        let mut total = T::zero();
        for w in windows {
            total += self.recon_loss(params, w);
        }
        total / T::of(windows.len() as f64)
    }

    /// Minimizes the mean reconstruction loss with mini-batch Adam.
    pub fn train(&self, windows: &[Window], hp: &AeTrainConfig) -> (ParamStore<f64>, AeCurve) {
        assert!(!windows.is_empty(), "autoencoder corpus is empty");
        assert!(hp.batch_size >= 1, "batch size must be at least 1");
        let mut params = self.init_params::<f64>(hp.seed);
        let initial = self.mean_recon_loss(&params, windows);
        let mut epochs = Vec::with_capacity(hp.epochs);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        for epoch in 0..hp.epochs {
            Rng::derive(hp.seed, 0xAE00 + epoch as u64).shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(hp.batch_size) {
                let mut tape = Tape::new();
                tape.bind_all(&params);
                let mark = tape.checkpoint();
                let scale = 1.0 / batch.len() as f64;
                let mut grads = Gradients::empty();
                for &wi in batch {
                    tape.rewind(mark);
                    let loss = self.record_recon_loss(&mut tape, &params, &windows[wi]);
                    epoch_loss += tape.value(loss).item();
                    grads.accumulate(&tape.backward(loss), scale);
                }
                adam_step(&mut params, &grads, &hp.adam);
            }
            epochs.push(epoch_loss / windows.len() as f64);
        }
        let final_loss = self.mean_recon_loss(&params, windows);
        (
            params.frozen(),
            AeCurve {
                initial,
                epochs,
                final_loss,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Reconstruction loss before training, per epoch (running mean over the
/// epoch's batches) and after training.
#[derive(Clone, Debug, PartialEq)]
pub struct AeCurve {
    pub initial: f64,
    pub epochs: Vec<f64>,
    pub final_loss: f64,
}

impl AeCurve {
    pub fn is_finite(&self) -> bool {
        self.initial.is_finite()
            && self.final_loss.is_finite()
            && self.epochs.iter().all(|v| v.is_finite())
    }
}
