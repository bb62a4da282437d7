//! Small randomized HLS kernels for tests, smoke runs and benchmarks.
//!
//! Every kernel is drawn from a handful of families (accumulators, masked
//! shifts, manual unrolling, split buffers, counting loops). Identifiers,
//! sizes, constants, operators and pragmas vary with the seed, and each
//! family offers mutation sites for several bug types.

use std::collections::HashSet;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Origin, SampleRecord};

const FUNCS: &[&str] = &["kernel", "process", "filter", "accum", "scale", "mix", "update", "compute", "transform", "reduce"];
const ARRAYS: &[&str] = &["in", "out", "src", "dst", "data", "buf", "coef", "vec", "mem", "res"];
const SCALARS: &[&str] = &["acc", "sum", "tmp", "val", "gain", "bias", "cnt", "mask", "shift", "prod"];
const INDICES: &[&str] = &["i", "j", "k", "n"];
const SIZES: &[u32] = &[8, 16, 32, 64];
const OPS: &[&str] = &["+", "-", "^", "|"];
const PIPELINE: &[&str] = &[
    "#pragma HLS PIPELINE II=1",
    "#pragma HLS PIPELINE",
    "#pragma HLS UNROLL factor=2",
    "#pragma HLS LOOP_TRIPCOUNT min=8 max=64",
];

struct Names {
    func: &'static str,
    a: &'static str,
    b: &'static str,
    x: &'static str,
    y: &'static str,
    i: &'static str,
}

fn names(rng: &mut ChaCha8Rng) -> Names {
    let arrays: Vec<&str> = ARRAYS.choose_multiple(rng, 2).copied().collect();
    let scalars: Vec<&str> = SCALARS.choose_multiple(rng, 2).copied().collect();
    Names {
        func: FUNCS.choose(rng).expect("non-empty"),
        a: arrays[0],
        b: arrays[1],
        x: scalars[0],
        y: scalars[1],
        i: INDICES.choose(rng).expect("non-empty"),
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty")
}

fn interface(rng: &mut ChaCha8Rng, port: &str) -> String {
    if rng.gen_bool(0.5) {
        format!("#pragma HLS INTERFACE m_axi port={port}\n")
    } else {
        String::new()
    }
}

fn accumulator(rng: &mut ChaCha8Rng) -> String {
    let Names { func, a, b, x, i, .. } = names(rng);
    let n = pick(rng, SIZES);
    let c = rng.gen_range(1..10);
    let op = pick(rng, OPS);
    let s = rng.gen_range(1..8);
    let mut out = format!("void {func}(int {a}[{n}], int {b}[{n}]) {{\n");
    out += &interface(rng, a);
    let _ = writeln!(out, "  int {x} = {c};");
    let _ = writeln!(out, "  for (int {i} = 0; {i} < {n}; {i}++) {{");
    let _ = writeln!(out, "{}", pick(rng, PIPELINE));
    let _ = writeln!(out, "    {x} {op}= {a}[{i}];");
    let _ = writeln!(out, "    {b}[{i}] = {x} >> {s};");
    out += "  }\n}\n";
    out
}

fn masked_shift(rng: &mut ChaCha8Rng) -> String {
    let Names { func, a, b, x, y, i } = names(rng);
    let n = pick(rng, SIZES);
    let mask = pick(rng, &[15, 63, 255, 1023]);
    let s = rng.gen_range(1..12);
    let mut out = format!("void {func}(unsigned int {a}[{n}], long {b}[{n}]) {{\n");
    out += &interface(rng, b);
    let _ = writeln!(out, "  unsigned int {x} = {mask};");
    let _ = writeln!(out, "  for (int {i} = 0; {i} < {n}; {i}++) {{");
    let _ = writeln!(out, "{}", pick(rng, PIPELINE));
    let _ = writeln!(out, "    unsigned int {y} = {a}[{i}] & {x};");
    let _ = writeln!(out, "    {b}[{i}] = {y} << {s};");
    out += "  }\n}\n";
    out
}

fn unrolled(rng: &mut ChaCha8Rng) -> String {
    let Names { func, a, b, i, .. } = names(rng);
    let n = pick(rng, &[16, 32, 64]);
    let factor = rng.gen_range(2..=4);
    let op = pick(rng, &["*", "+", "-"]);
    let k = rng.gen_range(2..9);
    let mut out = format!("void {func}(int {a}[{n}], int {b}[{n}]) {{\n");
    let _ = writeln!(out, "  for (int {i} = 0; {i} < {n}; {i} += {factor}) {{");
    out += "#pragma HLS PIPELINE II=1\n";
    for u in 0..factor {
        let _ = writeln!(out, "    {b}[{i} + {u}] = {a}[{i} + {u}] {op} {k};");
    }
    out += "  }\n}\n";
    out
}

fn split_buffer(rng: &mut ChaCha8Rng) -> String {
    let Names { func, a, b, x, i, .. } = names(rng);
    let n = pick(rng, SIZES);
    let c = rng.gen_range(2..8);
    let named = rng.gen_bool(0.5);
    let mut out = String::new();
    if named {
        let _ = writeln!(out, "#define HALF {n}");
    }
    let _ = writeln!(out, "void {func}(int {a}[{}], int {b}[{n}]) {{", 2 * n);
    let _ = writeln!(out, "#pragma HLS ARRAY_PARTITION variable={a} cyclic factor=2");
    let _ = writeln!(out, "  int {x} = {c};");
    let _ = writeln!(out, "  for (int {i} = 0; {i} < {n}; {i}++) {{");
    let _ = writeln!(out, "{}", pick(rng, PIPELINE));
    let off = if named { "HALF".to_string() } else { n.to_string() };
    let _ = writeln!(out, "    {b}[{i}] = {a}[{i}] * {x} + {a}[{i} + {off}];");
    out += "  }\n}\n";
    out
}

fn counting(rng: &mut ChaCha8Rng) -> String {
    let Names { func, x, y, .. } = names(rng);
    let v = pick(rng, &["v", "w", "z"]);
    let c = rng.gen_range(1..5);
    let k = rng.gen_range(0..4);
    let s = rng.gen_range(1..4);
    let mut out = format!("int {func}(int {v}) {{\n");
    let _ = writeln!(out, "  int {x} = {c};");
    let _ = writeln!(out, "  int {y} = {v};");
    let _ = writeln!(out, "  while ({y} > {k}) {{");
    out += "#pragma HLS LOOP_TRIPCOUNT max=32\n";
    let _ = writeln!(out, "    {y} = {y} >> {s};");
    let _ = writeln!(out, "    {x} += 1;");
    out += "  }\n";
    let _ = writeln!(out, "  return {x};");
    out += "}\n";
    out
}

const FAMILIES: [fn(&mut ChaCha8Rng) -> String; 5] = [accumulator, masked_shift, unrolled, split_buffer, counting];

/// `count` distinct kernels; families rotate so every family appears once
/// per five samples.
pub fn synthetic_samples(count: usize, seed: u64) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        let family = FAMILIES[out.len() % FAMILIES.len()];
        let code = family(&mut rng);
        attempts += 1;
        assert!(attempts < 1000 + 100 * count, "template space exhausted");
        if seen.insert(code.clone()) {
            out.push(SampleRecord {
                id: format!("syn{seed}-{:04}", out.len()),
                code,
                origin: Origin::Synthetic,
            });
        }
    }
    out
}
