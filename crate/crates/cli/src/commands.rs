use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use kq_core::intervals::kqi::{decode_kqi, encode_kqi, read_kqi, write_kqi};
use kq_core::intervals::{
    error_intervals, expand_intervals, intersect_intervals, interval_stats, noise_defense_eval, overapprox_fraction,
    project_tensor, AnalysisReport, FreezeStrategy, IntervalSet, LambdaMode, OverApproxReport,
};
use kq_core::kquant::{
    decode_kqb, dequantize_tensor, encode_kqb, quantize_tensor, read_kqb, write_kqb, KQuantConfig, QuantType,
};
use kq_core::tensor_io::{load_tensor, save_tensor, Manifest, MixConfig, SeedSpec, QK_K};
use kq_core::Tensor;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::emit;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn config(qt: QuantType, q: &QuantArgs) -> KQuantConfig {
    qt.config().with_grid_steps(q.grid_steps)
}

fn load(path: &Path) -> Result<Tensor> {
    load_tensor(path).with_context(|| format!("reading tensor {}", path.display()))
}

fn load_intervals(path: &Path, origin: &Tensor) -> Result<IntervalSet> {
    read_kqi(path, origin.data()).with_context(|| format!("reading intervals {}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn joined(types: &[QuantType]) -> String {
    types.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+")
}

/// Flat report row shared by the interval commands' CSV output.
#[derive(Serialize)]
struct CsvRow {
    tensor: String,
    #[serde(rename = "type")]
    qtype: String,
    target: String,
    freeze: String,
    lambda: String,
    nonzero_fraction: f64,
    mean_width: f64,
    overapprox_fraction: Option<f64>,
    trials: Option<u32>,
    seed: Option<u64>,
}

impl CsvRow {
    fn new(tensor: &str, r: &AnalysisReport) -> Self {
        Self {
            tensor: tensor.to_string(),
            qtype: r.qtype.clone(),
            target: r.target.clone().unwrap_or_default(),
            freeze: r.freeze.map(|f| f.to_string()).unwrap_or_default(),
            lambda: r.lambda.clone().unwrap_or_default(),
            nonzero_fraction: r.nonzero_fraction,
            mean_width: r.mean_width,
            overapprox_fraction: r.overapprox.as_ref().map(|o| o.fraction),
            trials: r.overapprox.as_ref().map(|o| o.trials),
            seed: r.overapprox.as_ref().map(|o| o.seed),
        }
    }
}

/// Resolved settings of a run, echoed into JSON reports. Paths are reduced
/// to file names so reports do not depend on the working directory.
fn run_config(command: &str, settings: Value) -> Value {
    let mut v = json!({ "command": command, "tool_version": TOOL_VERSION });
    if let (Some(dst), Value::Object(src)) = (v.as_object_mut(), settings) {
        dst.extend(src);
    }
    v
}

fn opt_name(path: Option<&Path>) -> Value {
    path.map_or(Value::Null, |p| Value::String(file_name(p)))
}

#[derive(Serialize)]
struct AnalysisDoc<'a> {
    config: &'a Value,
    tensor: &'a str,
    reports: &'a [AnalysisReport],
}

fn emit_analysis(report: &ReportArgs, config: &Value, tensor: &str, rows: &[AnalysisReport]) -> Result<()> {
    let csv: Vec<CsvRow> = rows.iter().map(|r| CsvRow::new(tensor, r)).collect();
    emit(
        report,
        &AnalysisDoc {
            config,
            tensor,
            reports: rows,
        },
        &csv,
    )
}

#[derive(Serialize)]
struct QuantizeRow {
    tensor: String,
    #[serde(rename = "type")]
    qtype: QuantType,
    blocks: usize,
    mean_abs_error: f64,
    max_abs_error: f64,
    output: String,
}

#[derive(Serialize)]
struct QuantizeDoc<'a> {
    config: &'a Value,
    tensors: &'a [QuantizeRow],
}

fn quantize_one(t: &Tensor, qt: QuantType, quant: &QuantArgs, out: &Path) -> Result<QuantizeRow> {
    let blocks = quantize_tensor(t.data(), &config(qt, quant)).with_context(|| format!("quantizing {}", t.name()))?;
    let deq = dequantize_tensor(&blocks);
    let (sum, max) = t
        .data()
        .iter()
        .zip(&deq)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .fold((0.0, 0.0f64), |(s, m), e| (s + e, m.max(e)));
    write_kqb(out, qt, &blocks).with_context(|| format!("writing {}", out.display()))?;
    Ok(QuantizeRow {
        tensor: t.name().to_string(),
        qtype: qt,
        blocks: blocks.len(),
        mean_abs_error: sum / t.len() as f64,
        max_abs_error: max,
        output: file_name(out),
    })
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let mix = match &a.mix {
        Some(p) => MixConfig::load(p)?,
        None => MixConfig::new(a.qtype),
    };
    let is_manifest = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let rows = if is_manifest {
        let manifest = Manifest::load(&a.input)?;
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        let mut rows = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let t = Tensor::from_bytes(
                entry.name.clone(),
                &fs::read(manifest.resolve(entry)).with_context(|| format!("reading tensor {}", entry.file))?,
            )?;
            let out = a.out.join(format!("{}.kqb", entry.name.replace(['/', '\\'], "_")));
            rows.push(quantize_one(&t, manifest.type_for(entry, &mix), &a.quant, &out)?);
        }
        rows
    } else {
        let t = load(&a.input)?;
        let qt = kq_core::tensor_io::resolve_type(&mix, t.name());
        vec![quantize_one(&t, qt, &a.quant, &a.out)?]
    };
    let config = run_config(
        "quantize",
        json!({
            "input": file_name(&a.input),
            "type": a.qtype,
            "mix": opt_name(a.mix.as_deref()),
            "grid_steps": a.quant.grid_steps,
            "out": file_name(&a.out),
        }),
    );
    emit(
        &a.report,
        &QuantizeDoc {
            config: &config,
            tensors: &rows,
        },
        &rows,
    )
}

pub fn dequantize(a: DequantizeArgs) -> Result<()> {
    let (_, blocks) = read_kqb(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let data = dequantize_tensor(&blocks);
    let dims = if a.dims.is_empty() { vec![data.len()] } else { a.dims };
    let name = a
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let t = Tensor::new(name, dims, data)?;
    save_tensor(&t, &a.out)?;
    Ok(())
}

pub fn intervals(a: IntervalsArgs) -> Result<()> {
    let t = load(&a.input)?;
    let seed = SeedSpec::for_tensor(a.seed.seed, t.name());
    // the last override for a type wins
    let lambda_for = |qt: QuantType| {
        a.lambda_for
            .iter()
            .rev()
            .find(|(t, _)| *t == qt)
            .map(|&(_, l)| l)
            .or(a.lambda.map(|m| m.for_type(qt)))
    };
    let overrides: Vec<String> = a.lambda_for.iter().map(|(t, l)| format!("{t}={l}")).collect();
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for &qt in &a.types {
        let cfg = config(qt, &a.quant);
        let mut iv = error_intervals(t.data(), &cfg, a.freeze)?;
        let lambda = lambda_for(qt);
        if let Some(l) = lambda {
            iv = expand_intervals(&iv, l, qt.layout().n)?;
        }
        let mut row = AnalysisReport::new(
            qt.as_str(),
            Some(a.freeze),
            lambda.map(|l| l.to_string()),
            &interval_stats(&iv),
        );
        if a.overapprox && a.types.len() == 1 {
            row = row.with_overapprox(&overapprox_fraction(&iv, &cfg, a.seed.trials, seed)?);
        }
        rows.push(row);
        sets.push(iv);
    }
    let result = if sets.len() == 1 {
        sets.pop().expect("one set")
    } else {
        let x = intersect_intervals(&sets)?;
        let label = joined(&a.types);
        let lambda = match (a.lambda, overrides.is_empty()) {
            (None, true) => None,
            (mode, _) => Some(
                mode.map(|m| m.to_string())
                    .into_iter()
                    .chain(overrides.iter().cloned())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        };
        let stats = interval_stats(&x);
        rows.push(AnalysisReport::new(&label, Some(a.freeze), lambda.clone(), &stats));
        if a.overapprox {
            for &qt in &a.types {
                let r = overapprox_fraction(&x, &config(qt, &a.quant), a.seed.trials, seed)?;
                rows.push(
                    AnalysisReport::new(&label, Some(a.freeze), lambda.clone(), &stats)
                        .with_overapprox(&r)
                        .with_target(qt.as_str()),
                );
            }
        }
        x
    };
    if let Some(out) = &a.out {
        write_kqi(&result, out)?;
    }
    let config = run_config(
        "intervals",
        json!({
            "input": file_name(&a.input),
            "types": a.types,
            "freeze": a.freeze,
            "lambda": a.lambda.map(|m| m.to_string()),
            "lambda_for": overrides,
            "overapprox": a.overapprox,
            "trials": a.seed.trials,
            "seed": a.seed.seed,
            "grid_steps": a.quant.grid_steps,
            "out": opt_name(a.out.as_deref()),
        }),
    );
    emit_analysis(&a.report, &config, t.name(), &rows)
}

pub fn expand(a: ExpandArgs) -> Result<()> {
    let t = load(&a.input)?;
    let iv = load_intervals(&a.intervals, &t)?;
    let out = expand_intervals(&iv, a.lambda.for_type(a.qtype), a.qtype.layout().n)?;
    write_kqi(&out, &a.out)?;
    Ok(())
}

pub fn intersect(a: IntersectArgs) -> Result<()> {
    let t = load(&a.input)?;
    let sets = a
        .intervals
        .iter()
        .map(|p| load_intervals(p, &t))
        .collect::<Result<Vec<_>>>()?;
    write_kqi(&intersect_intervals(&sets)?, &a.out)?;
    Ok(())
}

pub fn project(a: ProjectArgs) -> Result<()> {
    let trained = load(&a.input)?;
    let origin = load(&a.origin)?;
    ensure!(
        trained.dims() == origin.dims(),
        "shape {:?} of {} does not match origin shape {:?}",
        trained.dims(),
        a.input.display(),
        origin.dims()
    );
    let iv = load_intervals(&a.intervals, &origin)?;
    save_tensor(&project_tensor(&trained, &iv)?, &a.out)?;
    Ok(())
}

pub fn overapprox(a: OverapproxArgs) -> Result<()> {
    let t = load(&a.input)?;
    let seed = SeedSpec::for_tensor(a.seed.seed, t.name());
    let mut rows = Vec::new();
    if let Some(path) = &a.intervals {
        let iv = load_intervals(path, &t)?;
        let stats = interval_stats(&iv);
        let label = file_name(path);
        for &qt in &a.types {
            let r = overapprox_fraction(&iv, &config(qt, &a.quant), a.seed.trials, seed)?;
            rows.push(
                AnalysisReport::new(&label, None, None, &stats)
                    .with_overapprox(&r)
                    .with_target(qt.as_str()),
            );
        }
    } else {
        for &qt in &a.types {
            let cfg = config(qt, &a.quant);
            for &fs in &a.freeze {
                let iv = error_intervals(t.data(), &cfg, fs)?;
                let r = overapprox_fraction(&iv, &cfg, a.seed.trials, seed)?;
                rows.push(AnalysisReport::new(qt.as_str(), Some(fs), None, &interval_stats(&iv)).with_overapprox(&r));
            }
        }
    }
    let config = run_config(
        "overapprox",
        json!({
            "input": file_name(&a.input),
            "intervals": opt_name(a.intervals.as_deref()),
            "types": a.types,
            "freeze": if a.intervals.is_some() { Value::Null } else { json!(a.freeze) },
            "trials": a.seed.trials,
            "seed": a.seed.seed,
            "grid_steps": a.quant.grid_steps,
        }),
    );
    emit_analysis(&a.report, &config, t.name(), &rows)
}

#[derive(Serialize)]
struct DefendRow {
    tensor: String,
    #[serde(rename = "type")]
    qtype: QuantType,
    sigma: f64,
    trials: u32,
    seed: u64,
    fraction: f64,
}

#[derive(Serialize)]
struct DefendDoc<'a> {
    config: &'a Value,
    rows: &'a [DefendRow],
}

pub fn defend(a: DefendArgs) -> Result<()> {
    let t = load(&a.input)?;
    let seed = SeedSpec::for_tensor(a.seed.seed, t.name());
    let mut rows = Vec::new();
    for &qt in &a.types {
        let cfg = config(qt, &a.quant);
        for &sigma in &a.sigma {
            let r: OverApproxReport = noise_defense_eval(t.data(), &cfg, sigma, a.seed.trials, seed)?;
            rows.push(DefendRow {
                tensor: t.name().to_string(),
                qtype: qt,
                sigma,
                trials: r.trials,
                seed: r.seed,
                fraction: r.fraction,
            });
        }
    }
    let config = run_config(
        "defend",
        json!({
            "input": file_name(&a.input),
            "types": a.types,
            "sigma": a.sigma,
            "trials": a.seed.trials,
            "seed": a.seed.seed,
            "grid_steps": a.quant.grid_steps,
        }),
    );
    emit(
        &a.report,
        &DefendDoc {
            config: &config,
            rows: &rows,
        },
        &rows,
    )
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let t = load(&a.input)?;
    let iv = load_intervals(&a.intervals, &t)?;
    let label = if a.label.is_empty() {
        file_name(&a.intervals)
    } else {
        a.label.clone()
    };
    let row = AnalysisReport::new(label, a.freeze, None, &interval_stats(&iv));
    let config = run_config(
        "stats",
        json!({
            "input": file_name(&a.input),
            "intervals": file_name(&a.intervals),
            "label": a.label,
            "freeze": a.freeze,
        }),
    );
    emit_analysis(&a.report, &config, t.name(), &[row])
}

#[derive(Serialize)]
struct RoundtripRow {
    #[serde(rename = "type")]
    qtype: QuantType,
    blocks: usize,
    kqb_bytes: usize,
    kqt: &'static str,
    kqb: &'static str,
    kqi: &'static str,
}

#[derive(Serialize)]
struct RoundtripDoc<'a> {
    config: &'a Value,
    status: &'a str,
    checks: &'a [RoundtripRow],
}

fn random_tensor(seed: u64, qt: QuantType, blocks: usize) -> Result<Tensor> {
    let spec = SeedSpec::for_tensor(seed, qt.as_str());
    let mut data = Vec::with_capacity(blocks * QK_K);
    for b in 0..blocks {
        let mut rng = spec.rng(b as u64, 0);
        let scale = 10f32.powi(rng.random_range(-4..=1));
        data.extend((0..QK_K).map(|_| rng.random_range(-scale..=scale)));
    }
    Ok(Tensor::from_vec(format!("random_{qt}"), data)?)
}

pub fn roundtrip(a: RoundtripArgs) -> Result<()> {
    ensure!(a.blocks > 0 || a.input.is_some(), "--blocks must be at least 1");
    let given = a.input.as_deref().map(load).transpose()?;
    let mut rows = Vec::new();
    for &qt in &a.types {
        let t = match &given {
            Some(t) => t.clone(),
            None => random_tensor(a.seed, qt, a.blocks)?,
        };
        let back = Tensor::from_bytes(t.name(), &t.to_bytes())?;
        let same_bits = back.dims() == t.dims()
            && back
                .data()
                .iter()
                .zip(t.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same_bits {
            bail!("KQT round trip changed tensor {}", t.name());
        }

        let blocks = quantize_tensor(t.data(), &qt.config())?;
        let bytes = encode_kqb(qt, &blocks)?;
        let (qt_back, blocks_back) = decode_kqb(&bytes)?;
        if qt_back != qt || blocks_back != blocks {
            bail!("KQB round trip changed {qt} blocks of {}", t.name());
        }
        if dequantize_tensor(&blocks_back) != dequantize_tensor(&blocks) {
            bail!("KQB round trip changed {qt} dequantization of {}", t.name());
        }

        let iv = error_intervals(t.data(), &qt.config(), FreezeStrategy::Both)?;
        let iv = expand_intervals(&iv, LambdaMode::Partial.for_type(qt), qt.layout().n)?;
        let bounds = decode_kqi(&encode_kqi(iv.bounds()))?;
        if IntervalSet::new(t.data().to_vec(), bounds)? != iv {
            bail!("KQI round trip changed {qt} intervals of {}", t.name());
        }
        rows.push(RoundtripRow {
            qtype: qt,
            blocks: blocks.len(),
            kqb_bytes: bytes.len(),
            kqt: "ok",
            kqb: "ok",
            kqi: "ok",
        });
    }
    let config = run_config(
        "roundtrip",
        json!({
            "input": opt_name(a.input.as_deref()),
            "types": a.types,
            "blocks": if a.input.is_some() { Value::Null } else { json!(a.blocks) },
            "seed": a.seed,
        }),
    );
    emit(
        &a.report,
        &RoundtripDoc {
            config: &config,
            status: "ok",
            checks: &rows,
        },
        &rows,
    )
}
