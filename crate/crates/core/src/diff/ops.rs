//! Tape-free tensor operations. These share kernels with [`super::Tape`] and
//! are what inference code and the public API call.

use super::kernels;
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
}

/// Same-padded convolution of `x: L × Cin` with `w: k × Cin × Cout` plus bias.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.len(), 2, "conv1d input must be L×Cin");
    assert_eq!(ws.len(), 3, "conv1d kernel must be k×Cin×Cout");
    assert_eq!(xs[1], ws[1], "conv1d channel mismatch");
    assert!(ws[0] % 2 == 1, "conv1d kernel width must be odd");
    assert_eq!(b.shape(), [ws[2]], "conv1d bias shape");
    let mut out = Tensor::zeros(&[xs[0], ws[2]]);
    kernels::conv1d(
        x.data(),
        xs[0],
        xs[1],
        w.data(),
        ws[0],
        ws[2],
        Some(b.data()),
        out.data_mut(),
    );
    out
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "hadamard shape mismatch");
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect(),
    )
}

pub fn pointwise<T: Scalar>(op: Pointwise, x: &Tensor<T>) -> Tensor<T> {
    match op {
        Pointwise::Sigmoid => x.map(kernels::sigmoid),
        Pointwise::Tanh => x.map(T::tanh),
    }
}

pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.rank(), 1, "dense input must be a vector");
    assert_eq!(w.shape(), [x.len(), b.len()], "dense weight shape");
    let mut out = Tensor::zeros(b.shape());
    kernels::dense(x.data(), w.data(), b.data(), out.data_mut());
    out
}

/// Column means of an `L × C` tensor.
pub fn mean_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.rank(), 2, "mean_pool input must be L×C");
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    assert!(rows > 0, "mean_pool over zero rows");
    let mut out = Tensor::zeros(&[cols]);
    kernels::mean_rows(x.data(), rows, cols, out.data_mut());
    out
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
    let s = a
        .data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
    s / T::of(a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    // Straight triple loop, written without the kernel's index helpers.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (l, cin) = (x.shape()[0] as i64, x.shape()[1]);
        let (k, cout) = (w.shape()[0] as i64, w.shape()[2]);
        let mut out = vec![0.0; l as usize * cout];
        for p in 0..l {
            for co in 0..cout {
                let mut s = b.data()[co];
                for dk in 0..k {
                    let q = p + dk - (k - 1) / 2;
                    if q < 0 || q >= l {
                        continue;
                    }
                    for ci in 0..cin {
                        s += x.at2(q as usize, ci)
                            * w.data()[(dk as usize * cin + ci) * cout + co];
                    }
                }
                out[p as usize * cout + co] = s;
            }
        }
        Tensor::new(&[l as usize, cout], out)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(1);
        let x = random(&[6, 3], &mut rng);
        let mut w = Tensor::zeros(&[1, 3, 3]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv1d(&x, &w, &Tensor::zeros(&[3])), x);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut rng = Rng::new(2);
        let w = random(&[3, 2, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let out = conv1d(&Tensor::zeros(&[5, 2]), &w, &b);
        for p in 0..5 {
            for c in 0..4 {
                assert_eq!(out.at2(p, c), b.data()[c]);
            }
        }
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let x = random(&[5, 2], &mut rng);
        let w = random(&[3, 2, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let got = conv1d(&x, &w, &b);
        assert!(got.max_abs_diff(&conv_oracle(&x, &w, &b)) <= 1e-12);
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut rng = Rng::new(4);
        let x = random(&[9, 3], &mut rng);
        let y = random(&[9, 3], &mut rng);
        let w = random(&[5, 3, 4], &mut rng);
        let zero = Tensor::zeros(&[4]);
        let (a, c) = (0.7, -1.3);
        let mix = Tensor::new(
            &[9, 3],
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + c * q).collect(),
        );
        let lhs = conv1d(&mix, &w, &zero);
        let cx = conv1d(&x, &w, &zero);
        let cy = conv1d(&y, &w, &zero);
        let rhs = Tensor::new(
            lhs.shape(),
            cx.data().iter().zip(cy.data()).map(|(p, q)| a * p + c * q).collect(),
        );
        assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    #[should_panic(expected = "channel mismatch")]
    fn conv_shape_mismatch_panics() {
        conv1d::<f64>(&Tensor::zeros(&[4, 2]), &Tensor::zeros(&[3, 3, 1]), &Tensor::zeros(&[1]));
    }

    #[test]
    fn hadamard_identities() {
        let mut rng = Rng::new(5);
        let a = random(&[4, 3], &mut rng);
        let b = random(&[4, 3], &mut rng);
        assert_eq!(hadamard(&a, &Tensor::full(&[4, 3], 1.0)), a);
        assert_eq!(hadamard(&a, &Tensor::zeros(&[4, 3])), Tensor::zeros(&[4, 3]));
        assert_eq!(hadamard(&a, &b), hadamard(&b, &a));
    }

    #[test]
    fn pointwise_values() {
        let z = Tensor::scalar(0.0f64);
        assert_eq!(pointwise(Pointwise::Sigmoid, &z).item(), 0.5);
        assert_eq!(pointwise(Pointwise::Tanh, &z).item(), 0.0);
        // 1 − σ(40) = e^−40/(1+e^−40) ≈ 4.25e-18, well under 1e-12.
        let hi = pointwise(Pointwise::Sigmoid, &Tensor::scalar(40.0f64)).item();
        let lo = pointwise(Pointwise::Sigmoid, &Tensor::scalar(-40.0f64)).item();
        assert!((hi - 1.0).abs() <= 1e-12 && hi.is_finite());
        assert!(lo.abs() <= 1e-12 && lo > 0.0);
        let big = pointwise(Pointwise::Sigmoid, &Tensor::new(&[2], vec![-1e4f64, 1e4]));
        assert!(big.is_finite());
    }

    #[test]
    fn dense_cases() {
        let mut rng = Rng::new(6);
        let x = random(&[4], &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])), x);
        let w = random(&[4, 3], &mut rng);
        let b = random(&[3], &mut rng);
        assert_eq!(dense(&Tensor::zeros(&[4]), &w, &b), b);
        let got = dense(&x, &w, &b);
        for j in 0..3 {
            let mut s = b.data()[j];
            for i in 0..4 {
                s += x.data()[i] * w.at2(i, j);
            }
            assert!((got.data()[j] - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn mean_pool_cases() {
        let row = [1.5, -2.0, 3.0];
        let c = Tensor::from_fn(&[7, 3], |i| row[i % 3]);
        assert_eq!(mean_pool(&c).data(), row);
        let one = Tensor::new(&[1, 3], row.to_vec());
        assert_eq!(mean_pool(&one).data(), row);
        let mut rng = Rng::new(7);
        let x = random(&[11, 4], &mut rng);
        let got = mean_pool(&x);
        for col in 0..4 {
            let avg = (0..11).map(|r| x.at2(r, col)).sum::<f64>() / 11.0;
            assert!((got.data()[col] - avg).abs() <= 1e-12);
        }
    }

    #[test]
    fn mse_cases() {
        let mut rng = Rng::new(8);
        let a = random(&[5, 5], &mut rng);
        assert_eq!(mse(&a, &a), 0.0);
        assert_eq!(mse(&Tensor::full(&[3, 2], 1.0), &Tensor::zeros(&[3, 2])), 1.0);
        let b = random(&[5, 5], &mut rng);
        let mut s = 0.0;
        for i in 0..25 {
            s += (a.data()[i] - b.data()[i]).powi(2);
        }
        assert!((mse(&a, &b) - s / 25.0).abs() <= 1e-12);
    }
}
