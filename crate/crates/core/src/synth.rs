//! Seeded synthetic device traces with tunable inter-device similarity.
//!
//! Every device draws lines from a grammar made of templates. Shared
//! templates come from one protocol pool and render identically for every
//! device; the remaining templates embed the device's own token. The
//! similarity knob is the fraction of a device's templates that are shared.

use crate::codec::DeviceTrace;
use crate::diff::Rng;

/// Token-free protocol lines in the style of captured TCP/HTTP/DNS info
/// fields. Holes: `{eph}` ephemeral port, `{port}` service port, `{seq}`,
/// `{ack}`, `{win}`, `{len}`, `{hex}` 16-bit id, `{ip}` private address.
const SHARED_POOL: [&str; 12] = [
    "{eph} -> {port} [ACK] Seq={seq} Ack={ack} Win={win} Len=0",
    "{port} -> {eph} [SYN, ACK] Seq=0 Ack=1 Win={win} Len=0 MSS=1380",
    "{port} -> {eph} [FIN, ACK] Seq={seq} Ack={ack} Win={win} Len=0",
    "HTTP/1.1 200 OK (text/plain)",
    "{eph} -> {port} [PSH, ACK] Seq={seq} Ack={ack} Win={win} Len={len}",
    "Who has {ip}? Tell {ip}",
    "Standard query 0x{hex} A pool.ntp.org",
    "NTP Version 4, client",
    "{eph} -> {port} [SYN] Seq=0 Win={win} Len=0 MSS=1460",
    "M-SEARCH * HTTP/1.1",
    "Standard query response 0x{hex} A {ip}",
    "{port} -> {eph} [RST, ACK] Seq={seq} Ack={ack} Win=0 Len=0",
];

/// Device-specific lines; `{tok}` is replaced by the device token.
const TOKEN_POOL: [&str; 12] = [
    "POST /cgi-bin/{tok} HTTP/1.1 (application/x-www-form-urlencoded)",
    "GET /{tok}/status.json HTTP/1.1",
    "Standard query 0x{hex} A {tok}.cloud-svc.net",
    "DHCP Request - Transaction ID 0x{hex}{hex} host {tok}",
    "HTTP/1.1 200 OK (application/{tok}+json)",
    "NOTIFY * HTTP/1.1 NT: urn:{tok}:device:1",
    "{eph} -> {port} [PSH, ACK] Len={len} id={tok}",
    "GET /api/{tok}/v{len}/config HTTP/1.1",
    "Standard query response 0x{hex} A {tok}.cloud-svc.net A {ip}",
    "POST /{tok}/events HTTP/1.1 (application/json)",
    "MQTT Publish Message [{tok}/telemetry]",
    "SSDP {tok} ST: upnp:rootdevice",
];

/// Templates per device grammar.
pub const TEMPLATES_PER_DEVICE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceGrammar {
    pub device_id: String,
    pub device_token: String,
    pub templates: Vec<String>,
    pub template_weights: Vec<f64>,
}

impl DeviceGrammar {
    /// Whether template `i` carries the device token.
    pub fn is_token_template(&self, i: usize) -> bool {
        self.templates[i].contains("{tok}")
    }

    pub fn render_line(&self, rng: &mut Rng) -> String {
        let t = rng.weighted(&self.template_weights);
        render(&self.templates[t], &self.device_token, rng)
    }
}

fn render(template: &str, token: &str, rng: &mut Rng) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("unterminated hole");
        let hole = &rest[open + 1..close];
        match hole {
            "tok" => out.push_str(token),
            "eph" => out.push_str(&rng.range_inclusive(49152, 65535).to_string()),
            "port" => out.push_str(["80", "443", "8080", "1883"][rng.below(4)]),
            "seq" | "ack" => out.push_str(&rng.range_inclusive(1, 99_999).to_string()),
            "win" => out.push_str(&rng.range_inclusive(1024, 65535).to_string()),
            "len" => out.push_str(&rng.range_inclusive(1, 1460).to_string()),
            "hex" => out.push_str(&format!("{:04x}", rng.below(0x10000))),
            "ip" => out.push_str(&format!(
                "192.168.{}.{}",
                rng.range_inclusive(0, 3),
                rng.range_inclusive(2, 254)
            )),
            other => panic!("unknown template hole {{{other}}}"),
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

fn make_token(rng: &mut Rng) -> String {
    const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    let n = 5 + rng.below(3);
    (0..n).map(|_| ALNUM[rng.below(ALNUM.len())] as char).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub grammars: Vec<DeviceGrammar>,
    pub traces: Vec<DeviceTrace>,
}

/// Builds `n_devices` grammars and renders `lines_per_device` lines each.
///
/// All devices share the same `round(similarity · 10)` protocol templates;
/// the rest of each grammar consists of token templates, so at similarity
/// 0 every line names its device and at similarity 1 none does.
pub fn make_corpus(n_devices: usize, lines_per_device: usize, similarity: f64, seed: u64) -> SynthCorpus {
    assert!(n_devices >= 2, "need at least two devices");
    assert!(
        (0.0..=1.0).contains(&similarity),
        "similarity must lie in [0, 1], got {similarity}"
    );
    let mut rng = Rng::derive(seed, 0x5EED);
    let n_shared = (similarity * TEMPLATES_PER_DEVICE as f64).round() as usize;
    let n_token = TEMPLATES_PER_DEVICE - n_shared;

    let mut shared: Vec<&str> = SHARED_POOL.to_vec();
    rng.shuffle(&mut shared);
    shared.truncate(n_shared);

    let mut tokens: Vec<String> = Vec::with_capacity(n_devices);
    while tokens.len() < n_devices {
        let t = make_token(&mut rng);
        if !tokens.iter().any(|o| o.contains(&t) || t.contains(o.as_str())) {
            tokens.push(t);
        }
    }

    let grammars: Vec<DeviceGrammar> = tokens
        .into_iter()
        .enumerate()
        .map(|(d, token)| {
            let mut own: Vec<&str> = TOKEN_POOL.to_vec();
            rng.shuffle(&mut own);
            let templates: Vec<String> = shared
                .iter()
                .chain(own.iter().take(n_token))
                .map(|s| s.to_string())
                .collect();
            DeviceGrammar {
                device_id: format!("device{d:02}"),
                device_token: token,
                template_weights: vec![1.0; templates.len()],
                templates,
            }
        })
        .collect();

    let traces = grammars
        .iter()
        .enumerate()
        .map(|(d, g)| {
            let mut lr = Rng::derive(seed, 0x11AE_0000 + d as u64);
            DeviceTrace::new(
                g.device_id.clone(),
                (0..lines_per_device).map(|_| g.render_line(&mut lr)).collect(),
            )
        })
        .collect();
    SynthCorpus { grammars, traces }
}

/// Random printable-ASCII lines of random length.
pub fn noise_lines(n: usize, max_len: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::derive(seed, 0x0015E);
    (0..n)
        .map(|_| loop {
            let len = 1 + rng.below(max_len);
            let line: String = (0..len)
                .map(|_| char::from(b' ' + rng.below(95) as u8))
                .collect();
            if !line.trim().is_empty() {
                break line;
            }
        })
        .collect()
}
