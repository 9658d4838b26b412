//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::rng::Rng;
use super::tape::{Gradients, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many elements, sampled without replacement.
    /// Stores with fewer elements are checked exhaustively.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat offset of the worst element.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(params: &ParamStore<f64>, build: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    tape.value(loss).item()
}

/// Records `build` on a fresh tape, takes its reverse-mode gradient and
/// compares it with finite differences.
pub fn grad_check<F>(params: &ParamStore<f64>, build: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let mut tape = Tape::new();
    tape.bind_all(params);
    let loss = build(&mut tape, params);
    let grads = tape.backward(loss);
    check_gradients(params, &grads, build, opts)
}

/// Compares externally supplied gradients against finite differences of
/// the scalar produced by `build`.
pub fn check_gradients<F>(
    params: &ParamStore<f64>,
    grads: &Gradients<f64>,
    build: F,
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let mut elements = params.element_index();
    if elements.len() > opts.max_elements {
        let mut rng = Rng::new(opts.seed);
        rng.shuffle(&mut elements);
        elements.truncate(opts.max_elements);
    }

    let mut probe = params.frozen();
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (name, idx) in &elements {
        let original = probe.get(name).expect("element of store").data()[*idx];
        probe.get_mut(name).unwrap().data_mut()[*idx] = original + opts.step;
        let plus = eval(&probe, &build);
        probe.get_mut(name).unwrap().data_mut()[*idx] = original - opts.step;
        let minus = eval(&probe, &build);
        probe.get_mut(name).unwrap().data_mut()[*idx] = original;

        let fd = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[*idx]);
        let err = relative_error(analytic, fd);
        if err > max_rel_error || worst.is_none() {
            max_rel_error = err.max(max_rel_error);
            worst = Some((name.clone(), *idx));
        }
    }
    GradCheckReport {
        checked: elements.len(),
        max_rel_error,
        worst,
        tolerance: opts.tolerance,
    }
}
