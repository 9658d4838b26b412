//! Straight-line references shared by the integration tests.
#![allow(dead_code)]

use netprint::codec::{PacketSample, ALPHABET_SIZE};
use netprint::convlstm::{Autoencoder, CellState};
use netprint::diff::{ParamStore, Rng, Tensor};

pub const L: usize = 4;
pub const HC: usize = 2;
pub const K: usize = 3;

pub fn randomized(ae: &Autoencoder, seed: u64, scale: f64) -> ParamStore<f64> {
    let mut p = ae.init_params::<f64>(seed);
    let mut rng = Rng::new(seed ^ 0xABCD);
    let names: Vec<String> = p.names().map(str::to_string).collect();
    for n in names {
        for v in p.get_mut(&n).unwrap().data_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
    p
}

pub fn random_line(rng: &mut Rng, max: usize) -> String {
    let n = rng.below(max + 1);
    (0..n).map(|_| char::from(b' ' + rng.below(95) as u8)).collect()
}

pub fn random_state(rng: &mut Rng) -> CellState<f64> {
    CellState {
        h: Tensor::from_fn(&[L, HC], |_| rng.uniform(-1.0, 1.0)),
        c: Tensor::from_fn(&[L, HC], |_| rng.uniform(-2.0, 2.0)),
    }
}

/// Same-padded convolution written out over a dense `len × cin` input.
pub fn conv(x: &[Vec<f64>], w: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Vec<Vec<f64>> {
    let (k, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let len = x.len();
    let mut out = vec![vec![0.0; cout]; len];
    for p in 0..len {
        for co in 0..cout {
            let mut s = bias.map_or(0.0, |b| b.data()[co]);
            for dk in 0..k {
                let q = p as isize + dk as isize - (k / 2) as isize;
                if q < 0 || q >= len as isize {
                    continue;
                }
                for ci in 0..cin {
                    s += x[q as usize][ci] * w.data()[(dk * cin + ci) * cout + co];
                }
            }
            out[p][co] = s;
        }
    }
    out
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Reference {
    pub i: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub o: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

/// One cell step, element by element, from the textbook equations.
pub fn reference_step(p: &ParamStore<f64>, x: &PacketSample, s: &CellState<f64>) -> Reference {
    let onehot: Vec<Vec<f64>> = x
        .hot()
        .iter()
        .map(|&h| (0..ALPHABET_SIZE).map(|a| f64::from(a as u32 == h)).collect())
        .collect();
    let (hp, cp) = (rows(&s.h), rows(&s.c));
    let g = |name: &str| p.get(&format!("enc.{name}")).unwrap();
    let pre = |gate: &str| {
        let a = conv(&onehot, g(&format!("w_x{gate}")), Some(g(&format!("b_{gate}"))));
        let b = conv(&hp, g(&format!("w_h{gate}")), None);
        (0..L)
            .map(|r| (0..HC).map(|c| a[r][c] + b[r][c]).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let peep = |gate: &str, r: usize, c: usize| g(&format!("w_c{gate}")).data()[r * HC + c];
    let (ai, af, ac, ao) = (pre("i"), pre("f"), pre("c"), pre("o"));
    let mut out = Reference {
        i: vec![vec![0.0; HC]; L],
        f: vec![vec![0.0; HC]; L],
        o: vec![vec![0.0; HC]; L],
        c: vec![vec![0.0; HC]; L],
        h: vec![vec![0.0; HC]; L],
    };
    for r in 0..L {
        for c in 0..HC {
            let i = sig(ai[r][c] + peep("i", r, c) * cp[r][c]);
            let f = sig(af[r][c] + peep("f", r, c) * cp[r][c]);
            let cn = f * cp[r][c] + i * ac[r][c].tanh();
            let o = sig(ao[r][c] + peep("o", r, c) * cn);
            out.i[r][c] = i;
            out.f[r][c] = f;
            out.o[r][c] = o;
            out.c[r][c] = cn;
            out.h[r][c] = o * cn.tanh();
        }
    }
    out
}

pub fn assert_close(got: &Tensor<f64>, want: &[Vec<f64>], tol: f64) {
    for (g, w) in got.data().iter().zip(want.iter().flatten()) {
        assert!((g - w).abs() <= tol, "{g} vs {w}");
    }
}
