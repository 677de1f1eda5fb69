use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use gwn_core::codec::{train, Arch, BatchSource, Codec, TrainedCodec, VALIDATION_OFFSET};
use gwn_core::common_info::{
    check_theorem1, gk_common_information_lossless, gw_objective_discrete, wyner_common_information_lossless,
    GwSearchOptions, LossyOptions, LossyTarget, WynerOptions,
};
use gwn_core::evaluation::{
    bd_matrix, bd_rate, curve_of, empirical_mi, points_from_csv, points_from_json, points_to_csv, GWRatePoint,
    RateKind,
};
use gwn_core::pmf::{mutual_information, JointPmf};
use gwn_core::rate_distortion::{ba_joint, ba_marginal, BaOptions, DistortionMatrix, RDCurve};
use gwn_core::source_gen::{AttributePmfSpec, AttributeSource, SyntheticSource};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{csv_table, seed_override, validation, RunConfig, RunDir, SourceConfig};
use crate::{Command, JointArgs};

/// Flags shared by `train` and `sweep`, applied on top of the config file.
#[derive(Args, Clone, Debug)]
pub struct RunOverrides {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Master seed; takes precedence over `GWN_SEED`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(a) = self.arch {
            cfg.codec.arch = a;
        }
        if let Some(b) = self.beta {
            cfg.codec.beta = b;
        }
        if let Some(e) = self.eta {
            cfg.codec.eta = e;
        }
        if let Some(e) = self.latent_dim {
            cfg.codec.latent_dim = e;
        }
        if let Some(n) = self.epochs {
            cfg.training.max_epochs = n;
        }
        if let Some(n) = self.steps_per_epoch {
            cfg.training.steps_per_epoch = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

pub(crate) fn dispatch(out: &Path, command: Command) -> Result<()> {
    match command {
        Command::GenSource { config, samples } => gen_source(out, config.as_deref(), samples),
        Command::BaCurves { config, joint, distortion, slopes } => {
            ba_curves(out, config.as_deref(), &joint, &distortion, slopes)
        }
        Command::CommonInfo { joint, aux_size } => common_info(out, &joint, aux_size),
        Command::CheckBounds { joint, distortion, slopes, targets, grid } => {
            check_bounds(out, &joint, &distortion, slopes, targets, grid)
        }
        Command::GwDiscrete { joint, distortion, targets, alphas, sizes } => {
            gw_discrete(out, &joint, &distortion, &targets, &alphas, &sizes)
        }
        Command::Train { run } => train_one(out, &run),
        Command::Sweep { run, archs, betas, etas, seeds, jobs } => sweep(out, &run, &archs, &betas, &etas, seeds, jobs),
        Command::Encode { run, batches, batch_size } => encode(out, &run, batches, batch_size),
        Command::Decode { run, input, samples } => decode(out, &run, &input, samples),
        Command::Bdrate { reference, test, matrix, rate } => bdrate(out, reference, test, matrix, &rate),
        Command::EmpiricalMi { joint, independent } => emp_mi(out, &joint, &independent),
    }
}

fn finish(dir: &RunDir) {
    println!("{}", dir.path.display());
}

fn gen_source(out: &Path, config: Option<&Path>, samples: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = RunDir::create(out, "gen-source", &json!({ "source": cfg.source, "samples": samples }), cfg.seed)?;
    match &cfg.source {
        SourceConfig::Synthetic(spec) => {
            let src = SyntheticSource::new(spec.clone()).context("source_gen")?;
            dir.write_json(
                "source.json",
                &json!({
                    "kind": "synthetic",
                    "spec": spec,
                    "sigma": src.sigma(),
                    "base_pmf": src.base_pmf().probs(),
                    "copies": src.map().copies(),
                    "copy_fraction": src.map().copy_fraction(),
                    "measures": src.theoretical_measures(),
                }),
            )?;
            let b = src.sample_batch(samples.max(1), 0).context("source_gen")?;
            let rows = (0..b.n * b.positions).map(|k| {
                vec![
                    (k / b.positions).to_string(),
                    (k % b.positions).to_string(),
                    b.x1[k].to_string(),
                    b.x2[k].to_string(),
                    b.z1[k].to_string(),
                    b.z2[k].to_string(),
                ]
            });
            dir.write_csv("samples.csv", &csv_table(&["sample", "position", "x1", "x2", "z1", "z2"], rows))?;
        }
        SourceConfig::Attribute(a) => {
            let spec = AttributePmfSpec::new(a.attribute, a.embedding_dim, a.noise_scale, a.seed).context("source_gen")?;
            let (h, i) = spec.measures();
            dir.write_json(
                "source.json",
                &json!({
                    "kind": "attribute",
                    "attribute": a.attribute,
                    "joint": spec.joint.probs(),
                    "joint_entropy": h,
                    "mutual_information": i,
                }),
            )?;
            let src = AttributeSource::new(spec).context("source_gen")?;
            let b = src.sample_batch(samples.max(1), 0).context("source_gen")?;
            let mut header = vec!["sample".to_string(), "digit".into(), "color".into()];
            header.extend((0..b.dim).map(|j| format!("v{j}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows = (0..b.n).map(|k| {
                let mut r = vec![k.to_string(), b.digits[k].to_string(), b.colors[k].to_string()];
                r.extend(b.inputs[k * b.dim..(k + 1) * b.dim].iter().map(f64::to_string));
                r
            });
            dir.write_csv("samples.csv", &csv_table(&header, rows))?;
        }
    }
    finish(&dir);
    Ok(())
}

fn preset_joint(name: &str, a0: f64) -> Result<JointPmf> {
    let sized = |prefix: &str| name.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok());
    let j = match name {
        "copy-bits" => JointPmf::from_fn(vec![2, 2], |i| (i[0] == i[1]) as u8 as f64),
        "independent-bits" => JointPmf::from_fn(vec![2, 2], |_| 1.0),
        "dsbs" => JointPmf::new(vec![2, 2], vec![(1.0 - a0) / 2.0, a0 / 2.0, a0 / 2.0, (1.0 - a0) / 2.0]),
        _ => {
            if let Some(n) = sized("copy-") {
                JointPmf::from_fn(vec![n, n], |i| (i[0] == i[1]) as u8 as f64)
            } else if let Some(n) = sized("independent-") {
                JointPmf::from_fn(vec![n, n], |_| 1.0)
            } else {
                return Err(validation(format!(
                    "unknown preset '{name}' (expected copy-bits, independent-bits, copy-N, independent-N or dsbs)"
                )));
            }
        }
    };
    Ok(j.context("pmf")?)
}

impl JointArgs {
    fn load(&self) -> Result<(JointPmf, serde_json::Value)> {
        let (j, desc) = match (&self.joint, &self.preset) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let j = JointPmf::from_text(&text).context("pmf")?;
                (j, json!({ "joint": text }))
            }
            (None, Some(name)) => (preset_joint(name, self.a0)?, json!({ "preset": name, "a0": self.a0 })),
            (None, None) => return Err(validation("pass --joint FILE or --preset NAME")),
        };
        if j.num_axes() != 2 {
            return Err(validation(format!("expected a two-axis joint, got shape {:?}", j.shape())));
        }
        Ok((j, desc))
    }
}

fn distortion_matrix(kind: &str, n: usize) -> Result<DistortionMatrix> {
    match kind {
        "hamming" => Ok(DistortionMatrix::hamming(n)),
        "squared" => Ok(DistortionMatrix::squared_error(n)),
        _ => return Err(validation(format!("unknown distortion '{kind}' (expected hamming or squared)"))),
    }
}

fn default_slopes() -> Vec<f64> {
    (0..40).map(|k| -0.05 * 1.2f64.powi(k)).collect()
}

fn ba_curves(out: &Path, config: Option<&Path>, joint: &JointArgs, distortion: &str, slopes: Vec<f64>) -> Result<()> {
    let slopes = if slopes.is_empty() { default_slopes() } else { slopes };
    if slopes.iter().any(|s| !(*s <= 0.0)) {
        return Err(validation("slopes must be non-positive"));
    }
    let opts = BaOptions::default();
    // Each entry: a two-axis joint and its weight in the curve.
    let (parts, desc, seed): (Vec<(JointPmf, f64)>, serde_json::Value, u64) =
        if joint.joint.is_some() || joint.preset.is_some() {
            let (j, desc) = joint.load()?;
            (vec![(j, 1.0)], desc, seed_override()?.unwrap_or(0))
        } else {
            let cfg = RunConfig::load(config)?;
            let SourceConfig::Synthetic(spec) = &cfg.source else {
                return Err(validation("ba-curves needs a synthetic source config or a joint"));
            };
            let src = SyntheticSource::new(spec.clone()).context("source_gen")?;
            let c = src.map().copy_fraction();
            let parts = vec![
                (src.element_joint(true).context("source_gen")?, c),
                (src.element_joint(false).context("source_gen")?, 1.0 - c),
            ];
            (parts, json!({ "source": spec }), cfg.seed)
        };
    let dir = RunDir::create(
        out,
        "ba-curves",
        &json!({ "input": desc, "distortion": distortion, "slopes": slopes }),
        seed,
    )?;
    let (n1, n2) = (parts[0].0.shape()[0], parts[0].0.shape()[1]);
    let (d1, d2) = (distortion_matrix(distortion, n1)?, distortion_matrix(distortion, n2)?);
    let rows = slopes
        .par_iter()
        .map(|&s| {
            let mut m1 = [0.0; 2];
            let mut m2 = [0.0; 2];
            let mut jt = [0.0; 3];
            for (j, w) in &parts {
                let p1 = ba_marginal(&j.marginal(0)?, &d1, s, &opts)?;
                let p2 = ba_marginal(&j.marginal(1)?, &d2, s, &opts)?;
                let r = ba_joint(j, &d1, &d2, (s, s), &opts)?;
                m1 = [m1[0] + w * p1.rate, m1[1] + w * p1.distortion];
                m2 = [m2[0] + w * p2.rate, m2[1] + w * p2.distortion];
                jt = [jt[0] + w * r.rate, jt[1] + w * r.d1, jt[2] + w * r.d2];
            }
            Ok([
                vec!["x1".into(), s.to_string(), m1[0].to_string(), m1[1].to_string(), String::new()],
                vec!["x2".into(), s.to_string(), m2[0].to_string(), String::new(), m2[1].to_string()],
                vec!["joint".into(), s.to_string(), jt[0].to_string(), jt[1].to_string(), jt[2].to_string()],
            ])
        })
        .collect::<gwn_core::Result<Vec<_>>>()
        .context("rate_distortion")?;
    let mut all: Vec<Vec<String>> = rows.into_iter().flatten().collect();
    // Group by curve while keeping slope order.
    all.sort_by_key(|r| ["x1", "x2", "joint"].iter().position(|c| *c == r[0]).unwrap_or(3));
    dir.write_csv("curves.csv", &csv_table(&["curve", "slope", "rate", "d1", "d2"], all))?;
    finish(&dir);
    Ok(())
}

fn common_info(out: &Path, joint: &JointArgs, aux_size: Option<usize>) -> Result<()> {
    let (j, desc) = joint.load()?;
    let dir = RunDir::create(out, "common-info", &json!({ "input": desc, "aux_size": aux_size }), 0)?;
    let gk = gk_common_information_lossless(&j).context("common_info")?;
    let opts = WynerOptions { aux_size, ..WynerOptions::default() };
    let wy = wyner_common_information_lossless(&j, &opts).context("common_info")?;
    let report = json!({
        "h1": j.entropy_of(&[0])?,
        "h2": j.entropy_of(&[1])?,
        "h_joint": j.entropy_of(&[0, 1])?,
        "mutual_information": mutual_information(&j, &[0], &[1])?,
        "gacs_korner": gk.value_bits,
        "gacs_korner_components": gk.aux_alphabet_size,
        "wyner": wy.value_bits,
        "wyner_feasible": wy.feasible,
        "wyner_residual_cmi": wy.residual_cmi,
        "wyner_aux_size": wy.aux_alphabet_size,
    });
    dir.write_json("common_info.json", &report)?;
    finish(&dir);
    Ok(())
}

fn check_bounds(
    out: &Path,
    joint: &JointArgs,
    distortion: &str,
    slopes: Vec<f64>,
    targets: Vec<f64>,
    grid: usize,
) -> Result<()> {
    let (j, desc) = joint.load()?;
    let target = match (slopes.as_slice(), targets.as_slice()) {
        ([s1, s2], []) => LossyTarget::Slopes(*s1, *s2),
        ([], [d1, d2]) => LossyTarget::Distortions(*d1, *d2),
        ([], []) => LossyTarget::Slopes(-2.0, -2.0),
        _ => return Err(validation("--slopes and --targets take exactly two values")),
    };
    let dir = RunDir::create(
        out,
        "check-bounds",
        &json!({ "input": desc, "distortion": distortion, "target": target, "grid": grid }),
        0,
    )?;
    let d1 = distortion_matrix(distortion, j.shape()[0])?;
    let d2 = distortion_matrix(distortion, j.shape()[1])?;
    let opts = LossyOptions { grid, ..LossyOptions::default() };
    let report = check_theorem1(&j, &d1, &d2, target, &opts).context("common_info")?;
    dir.write_json("bounds.json", &report)?;
    finish(&dir);
    Ok(())
}

fn gw_discrete(
    out: &Path,
    joint: &JointArgs,
    distortion: &str,
    targets: &[f64],
    alphas: &[f64],
    sizes: &[usize],
) -> Result<()> {
    let (j, desc) = joint.load()?;
    let ([t1, t2], [a1, a2], [k0, k1, k2]) = (targets, alphas, sizes) else {
        return Err(validation("--targets and --alphas take two values, --sizes three"));
    };
    let dir = RunDir::create(
        out,
        "gw-discrete",
        &json!({ "input": desc, "distortion": distortion, "targets": targets, "alphas": alphas, "sizes": sizes }),
        0,
    )?;
    let d1 = distortion_matrix(distortion, j.shape()[0])?;
    let d2 = distortion_matrix(distortion, j.shape()[1])?;
    let r = gw_objective_discrete(&j, &d1, &d2, (*t1, *t2), (*a1, *a2), (*k0, *k1, *k2), &GwSearchOptions::default())
        .context("common_info")?;
    dir.write_json("gw.json", &r)?;
    finish(&dir);
    Ok(())
}

fn train_run(cfg: &RunConfig, source: &dyn BatchSource, seed: u64) -> Result<TrainedCodec> {
    let codec_cfg = cfg.codec.resolve(seed);
    train(&codec_cfg, source, &cfg.training).with_context(|| format!("codec ({} arch)", cfg.codec.arch))
}

fn history_csv(t: &TrainedCodec) -> String {
    csv_table(
        &["epoch", "validation_loss"],
        t.history.iter().enumerate().map(|(e, l)| vec![e.to_string(), l.to_string()]),
    )
}

fn train_one(out: &Path, run: &RunOverrides) -> Result<()> {
    let cfg = run.resolve()?;
    let dir = RunDir::create(out, "train", &cfg, cfg.seed)?;
    let source = cfg.source.build()?;
    let t = train_run(&cfg, source.as_ref(), cfg.seed)?;
    t.codec.save(&dir.path.join("model")).context("codec")?;
    dir.write_json("point.json", &t.point)?;
    dir.write_csv("points.csv", &points_to_csv(std::slice::from_ref(&t.point)))?;
    dir.write_csv("history.csv", &history_csv(&t))?;
    finish(&dir);
    Ok(())
}

fn sweep(
    out: &Path,
    run: &RunOverrides,
    archs: &[String],
    betas: &[f64],
    etas: &[f64],
    seeds: Vec<u64>,
    jobs: usize,
) -> Result<()> {
    let base = run.resolve()?;
    let archs = archs
        .iter()
        .map(|a| a.parse::<Arch>().context("codec"))
        .collect::<Result<Vec<_>>>()?;
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds };
    if jobs == 0 {
        return Err(validation("--jobs must be at least 1"));
    }
    let dir = RunDir::create(
        out,
        "sweep",
        &json!({ "base": base, "archs": archs, "betas": betas, "etas": etas, "seeds": seeds }),
        base.seed,
    )?;
    let mut grid = Vec::new();
    for &arch in &archs {
        for &beta in betas {
            for &eta in etas {
                for &seed in &seeds {
                    let mut cfg = base.clone();
                    cfg.codec.arch = arch;
                    cfg.codec.beta = beta;
                    cfg.codec.eta = eta;
                    grid.push((cfg, seed));
                }
            }
        }
    }
    let source = base.source.build()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    // Results come back in grid order regardless of scheduling.
    let points: Vec<GWRatePoint> = pool.install(|| {
        grid.par_iter()
            .map(|(cfg, seed)| train_run(cfg, source.as_ref(), *seed).map(|t| t.point))
            .collect::<Result<Vec<_>>>()
    })?;
    dir.write_csv("points.csv", &points_to_csv(&points))?;
    dir.write_json("points.json", &points)?;
    finish(&dir);
    Ok(())
}

/// Run config and codec of a `train` run directory.
fn load_trained(run: &Path) -> Result<(RunConfig, Codec, String)> {
    let text = std::fs::read_to_string(run.join("config.json"))
        .with_context(|| format!("reading {}", run.join("config.json").display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).context("config.json")?;
    if v["command"] != "train" {
        return Err(validation(format!("{} is not a train run directory", run.display())));
    }
    let cfg: RunConfig = serde_json::from_value(v["config"].clone()).context("config.json")?;
    let hash = v["config_hash"].as_str().unwrap_or_default().to_string();
    let codec = Codec::load(&run.join("model")).context("codec")?;
    Ok((cfg, codec, hash))
}

#[derive(Serialize)]
struct EncodedBatch {
    file: String,
    samples: usize,
    container_bits: usize,
    payload_bits: usize,
    model_bits: f64,
}

fn encode(out: &Path, run: &Path, batches: usize, batch_size: usize) -> Result<()> {
    let (cfg, codec, train_hash) = load_trained(run)?;
    let dir = RunDir::create(
        out,
        "encode",
        &json!({ "train_run": train_hash, "batches": batches, "batch_size": batch_size }),
        cfg.seed,
    )?;
    let source = cfg.source.build()?;
    let mut summary = Vec::with_capacity(batches);
    for i in 0..batches {
        // Held out from both training and validation batches.
        let b = source.batch(batch_size, 2 * VALIDATION_OFFSET + i as u64).context("source_gen")?;
        let codes = codec.evaluate(&b).context("codec")?.codes;
        let bytes = codec.encode(&codes).context("range_coder")?;
        let model_bits: f64 = codec.rate_terms(&codes).context("codec")?.iter().sum();
        let file = format!("batch-{i:03}.gwn");
        dir.write(&file, &bytes)?;
        summary.push(EncodedBatch {
            file,
            samples: batch_size,
            container_bits: 8 * bytes.len(),
            payload_bits: 8 * (bytes.len() - CONTAINER_HEADER_BYTES),
            model_bits,
        });
    }
    dir.write_json("encode.json", &json!({ "batches": summary }))?;
    finish(&dir);
    Ok(())
}

/// Magic plus two `u32` fields for each of the three channels.
const CONTAINER_HEADER_BYTES: usize = 4 + 3 * 8;

fn decode(out: &Path, run: &Path, input: &Path, samples: usize) -> Result<()> {
    let (cfg, codec, train_hash) = load_trained(run)?;
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let dir = RunDir::create(
        out,
        "decode",
        &json!({ "train_run": train_hash, "input": input.file_name().map(|f| f.to_string_lossy()), "bytes": bytes.len(), "samples": samples }),
        cfg.seed,
    )?;
    let codes = codec.decode(&bytes, samples).context("range_coder")?;
    let mut rows = Vec::new();
    for (name, t) in [("y0", &codes.y0), ("y1", &codes.y1), ("y2", &codes.y2)] {
        if let Some(t) = t {
            let w = t.cols();
            for (k, v) in t.data().iter().enumerate() {
                rows.push(vec![name.to_string(), (k / w).to_string(), (k % w).to_string(), (*v as i64).to_string()]);
            }
        }
    }
    dir.write_csv("codes.csv", &csv_table(&["channel", "sample", "index", "value"], rows))?;
    finish(&dir);
    Ok(())
}

/// Reads points from CSV or JSON (plain or as written by the CLI).
fn read_points(path: &Path) -> Result<Vec<GWRatePoint>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let pts = if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).context("evaluation")?;
        let inner = v.get("data").cloned().unwrap_or(v);
        points_from_json(&inner.to_string())
    } else {
        points_from_csv(&text)
    }
    .with_context(|| format!("evaluation: {}", path.display()))?;
    if pts.is_empty() {
        return Err(validation(format!("{} holds no points", path.display())));
    }
    Ok(pts)
}

fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

fn bdrate(
    out: &Path,
    reference: Option<PathBuf>,
    test: Option<PathBuf>,
    matrix: Option<PathBuf>,
    rate: &str,
) -> Result<()> {
    let kind: RateKind = rate.parse().context("evaluation")?;
    match (reference, test, matrix) {
        (Some(r), Some(t), None) => {
            let dir = RunDir::create(
                out,
                "bdrate",
                &json!({ "reference": file_digest(&r)?, "test": file_digest(&t)?, "rate": rate }),
                0,
            )?;
            let value = bd_rate(&curve_of(&read_points(&r)?, kind), &curve_of(&read_points(&t)?, kind))
                .context("evaluation")?;
            dir.write_json("bdrate.json", &json!({ "rate": rate, "bd_rate_percent": value }))?;
            println!("{value}");
            eprintln!("{}", dir.path.display());
        }
        (None, None, Some(m)) => {
            let dir = RunDir::create(out, "bdrate", &json!({ "matrix": file_digest(&m)? }), 0)?;
            let entries = bd_matrix(&read_points(&m)?);
            dir.write_json("bd_matrix.json", &json!({ "entries": entries }))?;
            finish(&dir);
        }
        _ => return Err(validation("pass --reference and --test, or --matrix")),
    }
    Ok(())
}

fn emp_mi(out: &Path, joint: &Path, independent: &Path) -> Result<()> {
    let dir = RunDir::create(
        out,
        "empirical-mi",
        &json!({ "joint": file_digest(joint)?, "independent": file_digest(independent)? }),
        0,
    )?;
    let j = read_points(joint)?;
    let ind = read_points(independent)?;
    let curve = |pts: &[GWRatePoint], f: &dyn Fn(&GWRatePoint) -> (f64, f64)| {
        RDCurve::from_pairs(&pts.iter().map(f).collect::<Vec<_>>())
    };
    let mi = empirical_mi(
        &curve(&j, &|p| (p.rt, p.distortion())),
        &curve(&ind, &|p| (p.r1, p.d1)),
        &curve(&ind, &|p| (p.r2, p.d2)),
    )
    .context("evaluation")?;
    let rows = mi
        .iter()
        .map(|m| vec![m.distortion.to_string(), m.mi.to_string(), m.extrapolated.to_string()]);
    dir.write_csv("mi.csv", &csv_table(&["distortion", "mi", "extrapolated"], rows))?;
    finish(&dir);
    Ok(())
}
