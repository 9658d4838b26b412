use netprint::codec::{encode_packet, null_sample, write_device_csv, CodecConfig, DeviceTrace};
use netprint::convlstm::ConvLstmConfig;
use netprint::format::{Container, FormatError, MAGIC};
use netprint::matcher::{
    build_fingerprint, load_model, load_weights, model_container, model_from_container, save_model, save_weights,
    scan_lines, scan_lines_from, scan_stream, FingerprintModel, MatchError, ScanResult,
};
use netprint::network::Network;
use netprint::protonet::{posterior, prototype, ClassId, EmbedConfig};
use netprint::synth::{make_corpus, noise_lines};
use proptest::prelude::*;
use std::sync::OnceLock;

fn small_network(seed: u64) -> Network<f64> {
    Network::init(
        CodecConfig::new(24),
        ConvLstmConfig { hidden: 3, kernel: 3 },
        EmbedConfig {
            embed_dim: 5,
            channels: 4,
            kernel: 3,
        },
        seed,
    )
}

struct Fixture {
    model: FingerprintModel<f64>,
    stream: Vec<String>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = make_corpus(3, 40, 0.5, 4);
        let model = FingerprintModel::from_trace(&corpus.traces[0], &small_network(4), 0.5).unwrap();
        let mut stream: Vec<String> = corpus.traces.iter().flat_map(|t| t.lines[20..].to_vec()).collect();
        stream.extend(noise_lines(10, 30, 4));
        Fixture { model, stream }
    })
}

#[test]
fn fingerprint_needs_a_full_window() {
    let net = small_network(1);
    let lines: Vec<String> = make_corpus(2, 20, 0.5, 1).traces[0].lines.clone();
    let m = FingerprintModel::from_trace(&DeviceTrace::new("cam", lines.clone()), &net, 0.5).unwrap();
    assert_eq!(m.c_t.support_count, 20);
    assert_eq!(m.c_n.support_count, 20);
    assert_eq!(m.meta.target, "cam");

    let err = FingerprintModel::from_trace(&DeviceTrace::new("cam", lines[..19].to_vec()), &net, 0.5).unwrap_err();
    match &err {
        MatchError::InsufficientMaterial { found, needed, .. } => assert_eq!((*found, *needed), (19, 20)),
        e => panic!("unexpected {e}"),
    }
    assert!(err.to_string().contains("1 short"), "{err}");
}

#[test]
fn fingerprint_from_file_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trace = make_corpus(2, 30, 0.5, 2).traces[1].clone();
    let path = write_device_csv(dir.path(), &trace).unwrap();
    let net = small_network(2);
    let a = build_fingerprint(&path, &net, 0.5).unwrap();
    let b = build_fingerprint(&path, &net, 0.5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.meta.target, trace.device_id);
    assert_eq!(a, FingerprintModel::from_trace(&trace, &net, 0.5).unwrap());
}

#[test]
fn missing_target_file_is_an_io_error() {
    let err = build_fingerprint(std::path::Path::new("/nonexistent/x.csv"), &small_network(0), 0.5).unwrap_err();
    assert!(matches!(err, MatchError::Io { .. }), "{err}");
}

#[test]
fn model_files_round_trip_byte_for_byte() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.dnp");
    let p2 = dir.path().join("b.dnp");
    save_model(&f.model, &p1).unwrap();
    let loaded = load_model(&p1).unwrap();
    assert_eq!(loaded, f.model);
    save_model(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(scan_lines(&loaded, &f.stream), scan_lines(&f.model, &f.stream));
}

#[test]
fn weight_files_round_trip() {
    let net = small_network(6);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.dnp");
    save_weights(&net, &p).unwrap();
    assert_eq!(load_weights(&p).unwrap(), net);
    assert!(load_model(&p).is_err());
}

#[test]
fn corrupt_and_foreign_files_are_rejected() {
    let f = fixture();
    let bytes = model_container(&f.model).to_bytes();
    assert_eq!(&bytes[..4], MAGIC);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Container::from_bytes(&bad), Err(FormatError::Corrupt { offset: 0, .. })));

    let mut future = model_container(&f.model);
    future.header.insert("version".into(), "99".into());
    let err = Container::from_bytes(&future.to_bytes()).unwrap_err();
    assert!(matches!(err, FormatError::Version { .. }), "{err}");

    let mut tau = model_container(&f.model);
    tau.header.insert("tau".into(), "1.5".into());
    assert!(model_from_container(&tau).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.dnp");
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_model(&p), Err(MatchError::Format(FormatError::Corrupt { .. }))));
}

#[test]
fn cached_prototypes_equal_a_fresh_computation() {
    let f = fixture();
    let net = &f.model.network;
    let cfg = *net.codec();
    let target = make_corpus(3, 40, 0.5, 4).traces[0].clone();
    let result = scan_lines(&f.model, &f.stream);
    for (line, r) in f.stream.iter().zip(&result.records) {
        // Prototypes rebuilt from scratch for every query.
        let c_t = prototype(&net.window_embeddings(&target.window_at(0, &cfg)), ClassId::Target);
        let c_n = net.null_prototype();
        let q = net.query_embedding(&encode_packet(line, &cfg));
        assert_eq!(posterior(&q, &c_t, &c_n).p_target, r.p_target);
        assert_eq!(r.flagged, r.p_target > 0.5);
    }
}

#[test]
fn null_packet_posterior_is_normalized() {
    let f = fixture();
    let cfg = *f.model.codec();
    let q = f.model.network.query_embedding(&null_sample(&cfg));
    let p = posterior(&q, &f.model.c_t, &f.model.c_n);
    assert!((p.p_target + p.p_null - 1.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&p.p_target));
}

#[test]
fn empty_stream_flags_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    std::fs::write(&p, "").unwrap();
    let r = scan_stream(&fixture().model, &p).unwrap();
    assert_eq!((r.flagged, r.total), (0, 0));
    assert_eq!(r.rate(), 0.0);
    assert!(r.to_string().contains("0/0 flagged"));
}

#[test]
fn scan_log_lists_every_query_then_the_summary() {
    let f = fixture();
    let r = scan_lines(&f.model, &f.stream[..5]);
    let log = r.log();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "# index\tp_target\tflag");
    assert!(lines[1].starts_with("0\t"));
    assert_eq!(lines[6], r.to_string());
}

#[test]
fn f32_scan_tracks_f64() {
    let f = fixture();
    let m32 = f.model.cast::<f32>();
    let a = scan_lines(&f.model, &f.stream);
    let b = scan_lines(&m32, &f.stream);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.p_target - y.p_target).abs() < 1e-4, "{} vs {}", x.p_target, y.p_target);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chunked_scans_equal_one_pass(cuts in prop::collection::vec(0usize..70, 0..4)) {
        let f = fixture();
        let n = f.stream.len();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(n)).collect();
        cuts.push(0);
        cuts.push(n);
        cuts.sort_unstable();
        let parts = cuts.windows(2).map(|w| scan_lines_from(&f.model, &f.stream[w[0]..w[1]], w[0]));
        prop_assert_eq!(ScanResult::concat(parts), scan_lines(&f.model, &f.stream));
    }

    #[test]
    fn raising_tau_never_adds_flags(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let f = fixture();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut m = f.model.clone();
        m.tau = lo;
        let at_lo = scan_lines(&m, &f.stream);
        m.tau = hi;
        let at_hi = scan_lines(&m, &f.stream);
        prop_assert!(at_hi.flagged <= at_lo.flagged);
        for (x, y) in at_lo.records.iter().zip(&at_hi.records) {
            prop_assert!(!y.flagged || x.flagged);
        }
    }
}
