//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line to the
//! raw stderr handle, so the line shows up even when libtest captures output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use kq_core::intervals::kqi::{decode_kqi, read_kqi, write_kqi};
use kq_core::intervals::{
    error_intervals, expand_intervals, intersect_intervals, interval_stats, noise_defense_eval, nonsoundness_toy,
    overapprox_fraction, project_weights, FreezeStrategy, IntervalSet, LambdaMode,
};
use kq_core::kquant::{
    decode_kqb, dequantize_tensor, encode_kqb, quantize_superblock, quantize_superblock_baseline, quantize_tensor,
    read_kqb, weighted_objective, write_kqb, QuantType,
};
use kq_core::tensor_io::{load_tensor, save_tensor, SeedSpec, QK_K};
use kq_core::zeroshot::{absmax_error_intervals, exact_intervals_evenly_spaced};
use kq_core::{SuperBlock, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

const TENSOR_LEN: usize = 1 << 20;
const TENSOR_STD: f32 = 0.02;
const SEED: u64 = 0;

const DOMINANCE_BLOCKS: usize = 1000;
const NONZERO_RANGE: (f64, f64) = (0.70, 0.85);
const WIDTH_RATIO_RANGE: (f64, f64) = (1.3, 3.2);
const OVERAPPROX_MAX: f64 = 0.25;
const OVERAPPROX_TRIALS: u32 = 10;
const CHAIN_SLACK: f64 = 0.02;
const COLLAPSE_MAX: f64 = 0.10;
const PARTIAL_RANGE: (f64, f64) = (0.25, 0.55);
const SOUNDNESS_GROUPS: usize = 100_000;
const SOUNDNESS_LAMBDAS: [f64; 3] = [0.25, 0.5, 1.0];
const NOISE_SIGMAS: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];
const NOISE_TRIALS: u32 = 3;

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("\ncriterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect()
}

/// The shared 1M-weight N(0, 0.02) tensor.
fn tensor() -> &'static [f32] {
    static DATA: OnceLock<Vec<f32>> = OnceLock::new();
    DATA.get_or_init(|| gaussian(&mut ChaCha8Rng::seed_from_u64(SEED), TENSOR_LEN, TENSOR_STD))
}

/// Error-based intervals with Both freezing on the shared tensor, per type.
fn both_intervals() -> &'static BTreeMap<QuantType, IntervalSet> {
    static SETS: OnceLock<BTreeMap<QuantType, IntervalSet>> = OnceLock::new();
    SETS.get_or_init(|| {
        QuantType::ALL
            .iter()
            .map(|&qt| {
                (
                    qt,
                    error_intervals(tensor(), &qt.config(), FreezeStrategy::Both).unwrap(),
                )
            })
            .collect()
    })
}

fn fmt_all(v: &[f64], digits: usize) -> String {
    v.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_01_optimization_dominance() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for qt in QuantType::ALL {
        let cfg = qt.config();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + qt.code() as u64);
        let mut worse = 0;
        let mut worst = 0.0f64;
        for _ in 0..DOMINANCE_BLOCKS {
            let x = SuperBlock::from_slice(&gaussian(&mut rng, QK_K, 1.0), cfg.layout).unwrap();
            let opt = weighted_objective(&x, &quantize_superblock(&x, &cfg).unwrap().dequantize(), &cfg);
            let base = weighted_objective(&x, &quantize_superblock_baseline(&x, &cfg).unwrap().dequantize(), &cfg);
            if opt > base {
                worse += 1;
                worst = worst.max(opt / base - 1.0);
            }
        }
        pass &= worse == 0;
        details.push(format!(
            "{qt} {worse}/{DOMINANCE_BLOCKS} worse (max +{:.1}%)",
            100.0 * worst
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    details.push(format!("{secs:.1}s"));
    verdict(1, pass && secs < 60.0, &details.join(", "));
}

#[test]
fn criterion_02_bitwidth_monotonicity() {
    let start = Instant::now();
    let x = tensor();
    let errs: Vec<f64> = QuantType::ALL
        .iter()
        .map(|qt| {
            let deq = dequantize_tensor(&quantize_tensor(x, &qt.config()).unwrap());
            x.iter().zip(&deq).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / x.len() as f64
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = errs.windows(2).all(|p| p[0] > p[1]) && secs < 120.0;
    verdict(
        2,
        pass,
        &format!("mean |x - deq| Q2..Q6 = {}, {secs:.1}s", fmt_all(&errs, 7)),
    );
}

#[test]
fn criterion_03_nonzero_fraction() {
    let fr: Vec<f64> = both_intervals()
        .values()
        .map(|iv| interval_stats(iv).nonzero_fraction)
        .collect();
    let pass = fr.iter().all(|f| (NONZERO_RANGE.0..=NONZERO_RANGE.1).contains(f));
    verdict(3, pass, &format!("nonzero fraction Q2..Q6 = {}", fmt_all(&fr, 4)));
}

#[test]
fn criterion_04_width_ordering() {
    let widths: Vec<f64> = both_intervals()
        .values()
        .map(|iv| interval_stats(iv).mean_width)
        .collect();
    let ratios: Vec<f64> = widths.windows(2).map(|p| p[0] / p[1]).collect();
    let pass = widths.windows(2).all(|p| p[0] > p[1])
        && ratios
            .iter()
            .all(|r| (WIDTH_RATIO_RANGE.0..=WIDTH_RATIO_RANGE.1).contains(r));
    verdict(
        4,
        pass,
        &format!(
            "mean width Q2..Q6 = {}, ratios = {}",
            fmt_all(&widths, 7),
            fmt_all(&ratios, 2)
        ),
    );
}

#[test]
fn criterion_05_overapproximation() {
    let seed = SeedSpec::new(SEED);
    let strategies = [
        FreezeStrategy::Base,
        FreezeStrategy::MaxMin,
        FreezeStrategy::Subblock,
        FreezeStrategy::Both,
    ];
    let mut bounded = true;
    let mut chain = true;
    let mut details = Vec::new();
    for qt in QuantType::ALL {
        let cfg = qt.config();
        let fr: Vec<f64> = strategies
            .iter()
            .map(|&s| {
                let iv = if s == FreezeStrategy::Both {
                    both_intervals()[&qt].clone()
                } else {
                    error_intervals(tensor(), &cfg, s).unwrap()
                };
                overapprox_fraction(&iv, &cfg, OVERAPPROX_TRIALS, seed)
                    .unwrap()
                    .fraction
            })
            .collect();
        let ok_bound = fr[3] <= OVERAPPROX_MAX;
        let ok_chain = fr.windows(2).all(|p| p[0] + CHAIN_SLACK >= p[1]);
        bounded &= ok_bound;
        chain &= ok_chain;
        details.push(format!(
            "{qt} base/maxmin/subblock/both = {}{}",
            fmt_all(&fr, 4),
            if ok_chain { "" } else { " (chain broken)" }
        ));
    }
    details.push(format!(
        "both <= {OVERAPPROX_MAX}: {}, chain within {CHAIN_SLACK}: {}",
        if bounded { "yes" } else { "no" },
        if chain { "yes" } else { "no" }
    ));
    verdict(5, bounded && chain, &details.join("; "));
}

#[test]
fn criterion_06_intersection_collapse() {
    let sets: Vec<IntervalSet> = both_intervals().values().cloned().collect();
    let plain = interval_stats(&intersect_intervals(&sets).unwrap()).nonzero_fraction;
    let expanded: Vec<IntervalSet> = both_intervals()
        .iter()
        .map(|(&qt, iv)| expand_intervals(iv, LambdaMode::Partial.for_type(qt), qt.layout().n).unwrap())
        .collect();
    let partial = interval_stats(&intersect_intervals(&expanded).unwrap()).nonzero_fraction;
    let pass = plain < COLLAPSE_MAX && (PARTIAL_RANGE.0..=PARTIAL_RANGE.1).contains(&partial);
    verdict(6, pass, &format!("unexpanded {plain:.4}, partial {partial:.4}"));
}

#[test]
fn criterion_07_soundness() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let mut violations = 0u64;
    let mut checks = 0u64;
    for _ in 0..SOUNDNESS_GROUPS {
        let len = [8, 16, 32, 64][rng.random_range(0..4)];
        let bits = rng.random_range(2..=8);
        let scale = 10f32.powi(rng.random_range(-4..=2));
        let group: Vec<f32> = match rng.random_range(0..3) {
            0 => gaussian(&mut rng, len, scale),
            1 => (0..len).map(|_| rng.random_range(-scale..=scale)).collect(),
            // heavy tail: a few large outliers
            _ => (0..len)
                .map(|_| {
                    let v: f32 = rng.sample(StandardNormal);
                    if rng.random_bool(0.05) {
                        v * scale * 20.0
                    } else {
                        v * scale
                    }
                })
                .collect(),
        };
        let exact = exact_intervals_evenly_spaced(&group, bits).unwrap();
        let err = absmax_error_intervals(&group, bits).unwrap();
        for lambda in SOUNDNESS_LAMBDAS {
            let ex = expand_intervals(&err, lambda, len).unwrap();
            for (a, b) in ex.bounds().iter().zip(exact.bounds()) {
                checks += 1;
                if !a.is_within(b) {
                    violations += 1;
                }
            }
        }
    }
    verdict(
        7,
        violations == 0,
        &format!("{violations} violations in {checks} interval checks"),
    );
}

#[test]
fn criterion_08_nonsoundness_toy() {
    let t = nonsoundness_toy();
    let pass = t.q.abs() < 1e-9
        && (t.error - 1.0).abs() < 1e-12
        && t.perturbed_inside
        && (t.error_at_q - 0.3).abs() < 1e-12
        && t.error_at_q < t.error
        && t.q_perturbed.abs() > 1e-3
        && t.error_perturbed <= t.error_at_q + 1e-12;
    verdict(
        8,
        pass,
        &format!(
            "l1 at q=0: {:.3} -> {:.3} after moving inside the intervals; optimum moves to {:.4} (l1 {:.3})",
            t.error, t.error_at_q, t.q_perturbed, t.error_perturbed
        ),
    );
}

fn fixture(rng: &mut ChaCha8Rng, blocks: usize) -> Vec<f32> {
    let std = 10f32.powi(rng.random_range(-6..=2));
    let mut data = gaussian(rng, blocks * QK_K, std);
    // a few awkward values: signed zero, subnormal, exact duplicates
    data[0] = -0.0;
    data[1] = f32::from_bits(1);
    data[2] = data[3];
    data
}

#[test]
fn criterion_09_round_trips() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let mut failures = Vec::new();
    let fixtures = 40;
    for i in 0..fixtures {
        let qt = QuantType::ALL[i % 5];
        let blocks = rng.random_range(1..=6);
        let data = fixture(&mut rng, blocks);
        let t = Tensor::new(format!("fixture_{i}"), vec![blocks, QK_K], data.clone()).unwrap();

        let kqt = dir.path().join("t.kqt");
        save_tensor(&t, &kqt).unwrap();
        let back = load_tensor(&kqt).unwrap();
        if back.dims() != t.dims() || back.data().iter().zip(&data).any(|(a, b)| a.to_bits() != b.to_bits()) {
            failures.push(format!("kqt #{i}"));
        }

        let q = quantize_tensor(&data, &qt.config()).unwrap();
        let kqb = dir.path().join("t.kqb");
        write_kqb(&kqb, qt, &q).unwrap();
        let (qt_back, q_back) = read_kqb(&kqb).unwrap();
        let bytes = fs::read(&kqb).unwrap();
        if qt_back != qt
            || q_back != q
            || encode_kqb(qt, &q_back).unwrap() != bytes
            || decode_kqb(&bytes).unwrap().1 != q
        {
            failures.push(format!("kqb #{i}"));
        }

        let iv = error_intervals(&data, &qt.config(), FreezeStrategy::Both).unwrap();
        let iv = expand_intervals(&iv, LambdaMode::Full.for_type(qt), qt.layout().n).unwrap();
        let kqi = dir.path().join("t.kqi");
        write_kqi(&iv, &kqi).unwrap();
        let iv_back = read_kqi(&kqi, &data).unwrap();
        let same =
            iv_back.bounds().iter().zip(iv.bounds()).all(|(a, b)| {
                a.lo.to_bits() == b.lo.to_bits() && a.hi.to_bits() == b.hi.to_bits() && a.frozen == b.frozen
            });
        if !same || decode_kqi(&fs::read(&kqi).unwrap()).unwrap() != iv.bounds() {
            failures.push(format!("kqi #{i}"));
        }
    }
    verdict(
        9,
        failures.is_empty(),
        &format!("{fixtures} fixtures x 3 formats, failures: {failures:?}"),
    );
}

#[test]
fn criterion_10_projection_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut problems = 0usize;
    let mut weights = 0usize;
    for i in 0..20 {
        let qt = QuantType::ALL[i % 5];
        let data = fixture(&mut rng, 4);
        let iv = error_intervals(&data, &qt.config(), FreezeStrategy::Both).unwrap();
        let iv = expand_intervals(&iv, LambdaMode::Partial.for_type(qt), qt.layout().n).unwrap();
        let step = 10f32.powi(rng.random_range(-8..=1));
        let trained: Vec<f32> = data
            .iter()
            .map(|&w| match rng.random_range(0..20) {
                0 => f32::NAN,
                1 => f32::INFINITY,
                2 => f32::NEG_INFINITY,
                _ => w + rng.sample::<f32, _>(StandardNormal) * step,
            })
            .collect();
        let p = project_weights(&trained, &iv).unwrap();
        let again = project_weights(&p, &iv).unwrap();
        for (k, (b, &v)) in iv.bounds().iter().zip(&p).enumerate() {
            weights += 1;
            let inside = b.contains(v);
            let frozen_ok = !b.frozen || v.to_bits() == data[k].to_bits();
            if !inside || !frozen_ok || v.to_bits() != again[k].to_bits() {
                problems += 1;
            }
        }
    }
    verdict(
        10,
        problems == 0,
        &format!("{problems} contract violations over {weights} projected weights"),
    );
}

#[test]
fn criterion_11_noise_defense_direction() {
    let seed = SeedSpec::new(SEED);
    let mut pass = true;
    let mut details = Vec::new();
    for qt in QuantType::ALL {
        let cfg = qt.config();
        let zero = noise_defense_eval(tensor(), &cfg, 0.0, NOISE_TRIALS, seed)
            .unwrap()
            .fraction;
        let fr: Vec<f64> = NOISE_SIGMAS
            .iter()
            .map(|&s| {
                noise_defense_eval(tensor(), &cfg, s, NOISE_TRIALS, seed)
                    .unwrap()
                    .fraction
            })
            .collect();
        pass &= zero == 0.0 && fr.windows(2).all(|p| p[0] <= p[1]);
        details.push(format!("{qt} sigma 0: {zero}, sweep: {}", fmt_all(&fr, 4)));
    }
    verdict(11, pass, &details.join("; "));
}

/// Runs every subcommand on a pool of `threads` workers and returns the
/// bytes of every report and output file left in `dir`. Arguments starting
/// with `@` name files inside `dir`.
fn cli_session(dir: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let runs: &[&[&str]] = &[
        &[
            "quantize",
            "--input",
            "@w.kqt",
            "--type",
            "q3_k",
            "--out",
            "@w.kqb",
            "--report",
            "@r00.json",
        ],
        &[
            "quantize",
            "--input",
            "@m.json",
            "--mix",
            "@mix.json",
            "--out",
            "@qdir",
            "--format",
            "csv",
            "--report",
            "@r01.csv",
        ],
        &["dequantize", "--input", "@w.kqb", "--dims", "16,256", "--out", "@d.kqt"],
        &[
            "intervals",
            "--input",
            "@w.kqt",
            "--types",
            "q4_k",
            "--overapprox",
            "--out",
            "@a.kqi",
            "--report",
            "@r03.json",
        ],
        &[
            "intervals",
            "--input",
            "@w.kqt",
            "--types",
            "q2_k,q3_k,q4_k,q5_k,q6_k",
            "--lambda",
            "partial",
            "--overapprox",
            "--trials",
            "3",
            "--out",
            "@x.kqi",
            "--report",
            "@r04.json",
        ],
        &[
            "expand",
            "--input",
            "@w.kqt",
            "--intervals",
            "@a.kqi",
            "--type",
            "q4_k",
            "--lambda",
            "full",
            "--out",
            "@ae.kqi",
        ],
        &[
            "intersect",
            "--input",
            "@w.kqt",
            "--intervals",
            "@ae.kqi,@x.kqi",
            "--out",
            "@i.kqi",
        ],
        &[
            "project",
            "--input",
            "@t.kqt",
            "--origin",
            "@w.kqt",
            "--intervals",
            "@i.kqi",
            "--out",
            "@p.kqt",
        ],
        &[
            "overapprox",
            "--input",
            "@w.kqt",
            "--types",
            "q3_k,q6_k",
            "--freeze",
            "base,maxmin,subblock,both",
            "--seed",
            "5",
            "--report",
            "@r08.json",
        ],
        &[
            "overapprox",
            "--input",
            "@w.kqt",
            "--intervals",
            "@x.kqi",
            "--types",
            "q5_k",
            "--format",
            "csv",
            "--report",
            "@r09.csv",
        ],
        &[
            "defend",
            "--input",
            "@w.kqt",
            "--types",
            "q2_k,q6_k",
            "--trials",
            "4",
            "--seed",
            "3",
            "--report",
            "@r10.json",
        ],
        &[
            "stats",
            "--input",
            "@w.kqt",
            "--intervals",
            "@i.kqi",
            "--freeze",
            "both",
            "--report",
            "@r11.json",
        ],
        &["roundtrip", "--blocks", "4", "--seed", "2", "--report", "@r12.json"],
    ];
    for args in runs {
        let argv: Vec<String> = std::iter::once("kq".to_string())
            .chain(args.iter().map(|a| {
                a.split(',')
                    .map(|p| match p.strip_prefix('@') {
                        Some(name) => dir.join(name).display().to_string(),
                        None => p.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            }))
            .collect();
        let cli = kq_cli::parse_args(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        kq_cli::run_with_threads(cli, Some(threads)).unwrap_or_else(|e| panic!("{argv:?}: {e:#}"));
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn cli_inputs(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 12);
    let w = gaussian(&mut rng, 16 * QK_K, TENSOR_STD);
    let t: Vec<f32> = w
        .iter()
        .map(|v| v + rng.sample::<f32, _>(StandardNormal) * 1e-3)
        .collect();
    save_tensor(
        &Tensor::new("blk.0.attn_q", vec![16, QK_K], w.clone()).unwrap(),
        dir.join("w.kqt"),
    )
    .unwrap();
    save_tensor(
        &Tensor::new("blk.0.attn_q", vec![16, QK_K], t).unwrap(),
        dir.join("t.kqt"),
    )
    .unwrap();
    save_tensor(
        &Tensor::new("blk.0.ffn_up", vec![4, QK_K], w[..4 * QK_K].to_vec()).unwrap(),
        dir.join("f.kqt"),
    )
    .unwrap();
    fs::write(
        dir.join("m.json"),
        r#"[{"name": "blk.0.attn_q", "file": "w.kqt"}, {"name": "blk.0.ffn_up", "file": "f.kqt"}]"#,
    )
    .unwrap();
    fs::write(
        dir.join("mix.json"),
        r#"{"default": "q4_k", "rules": [{"pattern": "*ffn*", "type": "q6_k"}]}"#,
    )
    .unwrap();
}

#[test]
fn criterion_12_thread_determinism() {
    let one = TempDir::new().unwrap();
    let many = TempDir::new().unwrap();
    cli_inputs(one.path());
    cli_inputs(many.path());
    let a = cli_session(one.path(), 1);
    let b = cli_session(many.path(), 4);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let pass = a.len() == b.len() && differing.is_empty();
    verdict(
        12,
        pass,
        &format!(
            "{} outputs compared between 1 and 4 threads, differing: {differing:?}",
            a.len()
        ),
    );
}
