//! Brute-force reference semantics for protocol stacks.
//!
//! Stacks are generated from a plain description (`Spec`) and interpreted
//! back from their text form, so nothing here relies on the library's own
//! subset, intersection or concretization code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use mudscope_core::{Direction, Proto, ProtocolStack};
use rand::Rng;

pub const MAX_PORT: u16 = 12;
const SENTINEL: u16 = 60000;

pub type Tuple = (u8, u8, u16, u16);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spec {
    pub net: Option<Vec<Proto>>,
    pub tr: Option<Vec<Proto>>,
    pub sp: Option<Vec<(u16, u16)>>,
    pub dp: Option<Vec<(u16, u16)>>,
}

fn protos_text(v: &Option<Vec<Proto>>) -> String {
    match v {
        None => "any".into(),
        Some(ps) => ps.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("|"),
    }
}

fn ports_text(v: &Option<Vec<(u16, u16)>>) -> String {
    match v {
        None => "any".into(),
        Some(rs) => rs
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") })
            .collect::<Vec<_>>()
            .join("|"),
    }
}

impl Spec {
    pub fn text(&self) -> String {
        format!(
            "[{},{},{},{}]",
            protos_text(&self.net),
            protos_text(&self.tr),
            ports_text(&self.sp),
            ports_text(&self.dp)
        )
    }

    pub fn stack(&self, direction: Direction) -> ProtocolStack {
        ProtocolStack::parse(&self.text(), direction).unwrap()
    }

    pub fn admits(&self, t: &Tuple) -> bool {
        let proto_ok = |v: &Option<Vec<Proto>>, code: u8| v.as_ref().is_none_or(|ps| ps.iter().any(|p| code_of(*p) == code));
        let port_ok = |v: &Option<Vec<(u16, u16)>>, port: u16| {
            v.as_ref().is_none_or(|rs| rs.iter().any(|&(lo, hi)| lo <= port && port <= hi))
        };
        proto_ok(&self.net, t.0) && proto_ok(&self.tr, t.1) && port_ok(&self.sp, t.2) && port_ok(&self.dp, t.3)
    }
}

fn code_of(p: Proto) -> u8 {
    match p {
        Proto::Ipv4 => 4,
        Proto::Ipv6 => 6,
        Proto::Tcp => 10,
        Proto::Udp => 11,
        Proto::Icmp => 12,
    }
}

fn proto_of(s: &str) -> Proto {
    match s {
        "IPv4" => Proto::Ipv4,
        "IPv6" => Proto::Ipv6,
        "TCP" => Proto::Tcp,
        "UDP" => Proto::Udp,
        "ICMP" => Proto::Icmp,
        other => panic!("unexpected protocol {other}"),
    }
}

/// Reads a stack back through its display text.
pub fn spec_of(stack: &ProtocolStack) -> Spec {
    let text = stack.to_string();
    let inner = text.trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<&str> = inner.split(", ").collect();
    assert_eq!(parts.len(), 4, "{text}");
    let protos = |s: &str| (s != "any").then(|| s.split('|').map(proto_of).collect());
    let ports = |s: &str| {
        (s != "any").then(|| {
            s.split('|')
                .map(|r| match r.split_once('-') {
                    Some((a, b)) => (a.parse().unwrap(), b.parse().unwrap()),
                    None => {
                        let p = r.parse().unwrap();
                        (p, p)
                    }
                })
                .collect()
        })
    };
    Spec { net: protos(parts[0]), tr: protos(parts[1]), sp: ports(parts[2]), dp: ports(parts[3]) }
}

pub fn universe() -> Vec<Tuple> {
    let ports: Vec<u16> = (0..=MAX_PORT + 1).chain([SENTINEL]).collect();
    let mut out = Vec::new();
    for n in [4, 6] {
        for t in [10, 11, 12] {
            for &sp in &ports {
                for &dp in &ports {
                    out.push((n, t, sp, dp));
                }
            }
        }
    }
    out
}

pub fn semantics_of_specs(specs: &[Spec], u: &[Tuple]) -> BTreeSet<Tuple> {
    u.iter().filter(|t| specs.iter().any(|s| s.admits(t))).copied().collect()
}

pub fn semantics(stacks: &[ProtocolStack], u: &[Tuple]) -> BTreeSet<Tuple> {
    let specs: Vec<Spec> = stacks.iter().map(spec_of).collect();
    semantics_of_specs(&specs, u)
}

fn random_protos<R: Rng>(rng: &mut R, pool: &[Proto]) -> Option<Vec<Proto>> {
    if rng.gen_bool(0.4) {
        return None;
    }
    loop {
        let picked: Vec<Proto> = pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !picked.is_empty() {
            return Some(picked);
        }
    }
}

fn random_ports<R: Rng>(rng: &mut R) -> Option<Vec<(u16, u16)>> {
    if rng.gen_bool(0.4) {
        return None;
    }
    let n = rng.gen_range(1..=2);
    Some(
        (0..n)
            .map(|_| {
                let lo = rng.gen_range(0..=MAX_PORT);
                let hi = if rng.gen_bool(0.5) { lo } else { rng.gen_range(lo..=MAX_PORT) };
                (lo, hi)
            })
            .collect(),
    )
}

/// A random stack description; `single` restricts named layers to one
/// protocol (no wildcard widening in trees).
pub fn random_spec<R: Rng>(rng: &mut R, single: bool) -> Spec {
    let mut net = random_protos(rng, &[Proto::Ipv4, Proto::Ipv6]);
    let mut tr = random_protos(rng, &[Proto::Tcp, Proto::Udp, Proto::Icmp]);
    if single {
        for ps in [&mut net, &mut tr].into_iter().flatten() {
            ps.truncate(1);
        }
    }
    Spec { net, tr, sp: random_ports(rng), dp: random_ports(rng) }
}

pub fn random_specs<R: Rng>(rng: &mut R, max: usize, single: bool) -> Vec<Spec> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| random_spec(rng, single)).collect()
}
