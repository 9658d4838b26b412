use netprint::convlstm::Encoding;
use netprint::diff::{grad_check, GradCheckOptions, Rng, Tape, Tensor, Var};
use netprint::protonet::{
    posterior, posterior_from_distances, proto_loss, prototype, squared_distance, ClassId, EmbedConfig, Embedder,
    Embedding, PairKind, Prototype,
};
use proptest::prelude::*;

fn vector(rng: &mut Rng, n: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(&[n], |_| rng.uniform(-scale, scale))
}

fn proto(v: Tensor<f64>, class: ClassId) -> Prototype<f64> {
    Prototype {
        vector: v,
        class,
        support_count: 1,
    }
}

#[test]
fn prototype_is_the_support_mean() {
    let mut rng = Rng::new(1);
    for _ in 0..100 {
        let n = 1 + rng.below(25);
        let dim = 1 + rng.below(8);
        let support: Vec<Embedding<f64>> = (0..n).map(|_| Embedding(vector(&mut rng, dim, 5.0))).collect();
        let p = prototype(&support, ClassId::Target);
        assert_eq!(p.support_count, n);
        assert_eq!(p.class, ClassId::Target);
        for j in 0..dim {
            let mut s = 0.0;
            for e in &support {
                s += e.0.data()[j];
            }
            assert!((p.vector.data()[j] - s / n as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn posterior_and_loss_match_the_softmax_formula() {
    let mut rng = Rng::new(2);
    for _ in 0..100 {
        let dim = 1 + rng.below(6);
        let q = Embedding(vector(&mut rng, dim, 2.0));
        let ct = proto(vector(&mut rng, dim, 2.0), ClassId::Target);
        let cn = proto(vector(&mut rng, dim, 2.0), ClassId::Null);
        let dt: f64 = q.0.data().iter().zip(ct.vector.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let dn: f64 = q.0.data().iter().zip(cn.vector.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((squared_distance(&q.0, &ct.vector) - dt).abs() <= 1e-12);
        let pt = (-dt).exp() / ((-dt).exp() + (-dn).exp());
        let p = posterior(&q, &ct, &cn);
        assert!((p.p_target - pt).abs() <= 1e-12);
        assert!((p.p_null - (1.0 - pt)).abs() <= 1e-12);
        let log_z = ((-dt).exp() + (-dn).exp()).ln();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(proto_loss(&q, &ct, &cn, ClassId::Target), dt + log_z));
        assert!(close(proto_loss(&q, &ct, &cn, ClassId::Null), dn + log_z));
    }
}

#[test]
fn equidistant_query_costs_ln_two() {
    let q = Embedding(Tensor::new(&[2], vec![0.0, 0.0]));
    let ct = proto(Tensor::new(&[2], vec![1.0, 0.0]), ClassId::Target);
    let cn = proto(Tensor::new(&[2], vec![0.0, -1.0]), ClassId::Null);
    let p = posterior(&q, &ct, &cn);
    assert_eq!(p.p_target, 0.5);
    for label in [ClassId::Target, ClassId::Null] {
        assert!((proto_loss(&q, &ct, &cn, label) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn far_queries_saturate_without_overflow() {
    let p = posterior_from_distances(0.0, 1e6);
    assert_eq!(p.p_target, 1.0);
    assert_eq!(p.p_null, 0.0);
    let q = Embedding(Tensor::new(&[1], vec![0.0]));
    let ct = proto(Tensor::new(&[1], vec![0.0]), ClassId::Target);
    let cn = proto(Tensor::new(&[1], vec![1000.0]), ClassId::Null);
    assert_eq!(proto_loss(&q, &ct, &cn, ClassId::Target), 0.0);
    let wrong = proto_loss(&q, &ct, &cn, ClassId::Null);
    assert!((wrong - 1e6).abs() < 1e-6, "{wrong}");
}

proptest! {
    #[test]
    fn posterior_is_normalized(dt in 0.0f64..1e6, dn in 0.0f64..1e6) {
        let p = posterior_from_distances(dt, dn);
        prop_assert!(p.p_target.is_finite() && p.p_null.is_finite());
        prop_assert!((p.p_target + p.p_null - 1.0).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&p.p_target));
    }

    #[test]
    fn losses_are_complementary(dt in 0.0f64..50.0, dn in 0.0f64..50.0) {
        let q = Embedding(Tensor::new(&[2], vec![0.0, 0.0]));
        let ct = proto(Tensor::new(&[2], vec![dt.sqrt(), 0.0]), ClassId::Target);
        let cn = proto(Tensor::new(&[2], vec![0.0, dn.sqrt()]), ClassId::Null);
        let lp = proto_loss(&q, &ct, &cn, ClassId::Target);
        let ln = proto_loss(&q, &ct, &cn, ClassId::Null);
        prop_assert!(lp >= 0.0 && ln >= 0.0);
        prop_assert!(((-lp).exp() + (-ln).exp() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn posterior_is_translation_invariant(
        seed in any::<u64>(),
        shift in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let mut rng = Rng::new(seed);
        let q = vector(&mut rng, 4, 1.0);
        let ct = vector(&mut rng, 4, 1.0);
        let cn = vector(&mut rng, 4, 1.0);
        let s = Tensor::new(&[4], shift);
        let add = |t: &Tensor<f64>| Tensor::new(&[4], t.data().iter().zip(s.data()).map(|(a, b)| a + b).collect());
        let p0 = posterior(&Embedding(q.clone()), &proto(ct.clone(), ClassId::Target), &proto(cn.clone(), ClassId::Null));
        let p1 = posterior(&Embedding(add(&q)), &proto(add(&ct), ClassId::Target), &proto(add(&cn), ClassId::Null));
        prop_assert!((p0.p_target - p1.p_target).abs() <= 1e-9);
    }

    #[test]
    fn posterior_falls_as_the_target_recedes(dn in 0.0f64..100.0, dt in 0.0f64..100.0, step in 0.0f64..10.0) {
        let near = posterior_from_distances(dt, dn).p_target;
        let far = posterior_from_distances(dt + step, dn).p_target;
        prop_assert!(far <= near);
    }
}

fn encodings(rng: &mut Rng, n: usize, len: usize, ch: usize) -> Vec<Encoding<f64>> {
    (0..n)
        .map(|_| Encoding(Tensor::from_fn(&[len, ch], |_| rng.uniform(-1.0, 1.0))))
        .collect()
}

#[test]
fn embedding_shape_and_batched_agreement() {
    let emb = Embedder::new(EmbedConfig::default(), 16);
    let phi = emb.init_params::<f64>(3);
    let mut rng = Rng::new(3);
    let encs = encodings(&mut rng, 5, 96, 16);
    let all = emb.embed_all(&phi, &encs);
    for (e, a) in encs.iter().zip(&all) {
        let one = emb.embed(&phi, e);
        assert_eq!(one.0.shape(), [32]);
        assert_eq!(&one, a);
    }
}

#[test]
fn pair_loss_composes_embed_prototype_and_loss() {
    let emb = Embedder::new(
        EmbedConfig {
            embed_dim: 4,
            channels: 3,
            kernel: 3,
        },
        2,
    );
    let phi = emb.init_params::<f64>(9);
    let mut rng = Rng::new(9);
    let t = encodings(&mut rng, 3, 6, 2);
    let n = encodings(&mut rng, 3, 6, 2);
    let q = encodings(&mut rng, 1, 6, 2).pop().unwrap();
    let ct = prototype(&emb.embed_all(&phi, &t), ClassId::Target);
    let cn = prototype(&emb.embed_all(&phi, &n), ClassId::Null);
    let qe = emb.embed(&phi, &q);
    for kind in [PairKind::Positive, PairKind::Negative] {
        let want = proto_loss(&qe, &ct, &cn, kind.label());
        let got = emb.pair_loss(&phi, &t, &n, &q, kind);
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }
}

#[test]
fn pair_loss_gradient_passes_finite_differences() {
    let emb = Embedder::new(
        EmbedConfig {
            embed_dim: 6,
            channels: 5,
            kernel: 3,
        },
        4,
    );
    let phi = emb.init_params::<f64>(12);
    let mut rng = Rng::new(12);
    let t = encodings(&mut rng, 4, 8, 4);
    let n = encodings(&mut rng, 4, 8, 4);
    let q = encodings(&mut rng, 2, 8, 4);
    let consts = |tape: &mut Tape<f64>, xs: &[Encoding<f64>]| -> Vec<Var> {
        xs.iter().map(|e| tape.constant(e.0.clone())).collect()
    };
    let r = grad_check(
        &phi,
        |tape, p| {
            let tv = consts(tape, &t);
            let nv = consts(tape, &n);
            let qv = consts(tape, &q);
            let a = emb.record_pair_loss(tape, p, &tv, &nv, qv[0], PairKind::Positive);
            let b = emb.record_pair_loss(tape, p, &tv, &nv, qv[1], PairKind::Negative);
            tape.mean_of(&[a, b])
        },
        &GradCheckOptions::default(),
    );
    assert_eq!(r.checked, phi.numel().min(256));
    assert!(r.passed(), "{r:?}");
}
