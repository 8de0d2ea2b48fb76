#![allow(dead_code)]

use std::fmt::Write;

use ecogrid::{parse_case, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small meshed network with light loading, shunts of both signs, line
/// charging, a two-unit bus and at least one voltage-regulated bus. Solves
/// from a flat start for every seed.
pub fn random_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: u32 = rng.random_range(3..=8);
    let mut text = String::from("mpc.baseMVA = 100;\nmpc.bus = [\n");
    let pv_bus = rng.random_range(2..=n);
    for id in 1..=n {
        let kind = match id {
            1 => 3,
            _ if id == pv_bus => 2,
            _ => 1,
        };
        let pd = rng.random_range(0.0..40.0);
        let qd = rng.random_range(-10.0..20.0);
        let (gs, bs) = match rng.random_range(0..4) {
            0 => (rng.random_range(0.0..2.0), rng.random_range(5.0..15.0)),
            1 => (0.0, -rng.random_range(5.0..15.0)),
            _ => (0.0, 0.0),
        };
        writeln!(text, "{id} {kind} {pd} {qd} {gs} {bs} 1 1 0 230 1 1.1 0.9;").unwrap();
    }
    text.push_str("];\nmpc.gen = [\n");
    let v1 = rng.random_range(0.99..1.04);
    for _ in 0..2 {
        let pg = rng.random_range(0.0..30.0);
        writeln!(text, "1 {pg} 0 300 -300 {v1} 100 1 250 0;").unwrap();
    }
    let pg = rng.random_range(0.0..30.0);
    let vpv = rng.random_range(0.98..1.04);
    writeln!(text, "{pv_bus} {pg} 0 300 -300 {vpv} 100 1 100 0;").unwrap();
    text.push_str("];\nmpc.branch = [\n");
    let mut edges = Vec::new();
    for id in 2..=n {
        edges.push((rng.random_range(1..id), id));
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            edges.push((a, b));
        }
    }
    for (f, t) in edges {
        let x = rng.random_range(0.05..0.2);
        let r = x * rng.random_range(0.0..0.3);
        let b = rng.random_range(0.0..0.05);
        writeln!(text, "{f} {t} {r} {x} {b} 0 0 0 0 0 1;").unwrap();
    }
    text.push_str("];\n");
    parse_case(&text).expect("generated case parses")
}
