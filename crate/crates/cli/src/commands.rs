use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use vdepth_core::align::{align_global, PairGraph};
use vdepth_core::container::{read_container, write_container};
use vdepth_core::fusion::{fuse_video, FusionConfig, FusionError};
use vdepth_core::metrics::{align_shared, evaluate, MetricOptions, RmseMode};
use vdepth_core::schedule::{ScheduleTable, TimestepSpacing};
use vdepth_core::spectral::{
    amplitude_ratio, band_metrics, band_rows, band_table_csv, magnitude_spectrum, ratio_csv, spectrum_csv,
    BandPartition, BandScheme, ErrorSequence,
};
use vdepth_core::synth::{generate_bench, BenchError, BenchSpec, SceneError, SceneSpec, SurrogateError};
use vdepth_core::tempcons::{read_correspondences, temporal_consistency, write_correspondences, TempConsOptions};
use vdepth_core::video::DepthVideo;

use crate::config::{EvaluateConfig, RunConfig};
use crate::{Command, EvalFlags, Failure};

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    write_text(path, &(text + "\n"))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))
}

/// Deterministic run record; wall-clock data goes to `timings.json`.
fn write_manifest(out: &Path, command: &str, config: Value, inputs: Value) -> Result<(), Failure> {
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "inputs": inputs,
        }),
    )
}

fn write_timings(out: &Path, frames: usize, stages: &[(&str, f64)]) -> Result<(), Failure> {
    let seconds: serde_json::Map<String, Value> = stages.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let per_frame: serde_json::Map<String, Value> =
        stages.iter().map(|(k, v)| (k.to_string(), json!(v / frames.max(1) as f64))).collect();
    write_json(&out.join("timings.json"), &json!({ "frames": frames, "seconds": seconds, "seconds_per_frame": per_frame }))
}

fn read_video(dir: &Path) -> Result<(DepthVideo, Option<vdepth_core::camera::CameraTrack>, Option<vdepth_core::video::RegionMasks>), Failure> {
    read_container(dir).map_err(|e| data(format!("{}: {e}", dir.display())))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn merge_eval(mut base: EvaluateConfig, flags: &EvalFlags) -> EvaluateConfig {
    if flags.per_frame {
        base.per_frame = true;
    }
    if let Some(d) = flags.absrel_denominator {
        base.absrel_denominator = d.into();
    }
    if flags.rmse_paper_literal {
        base.rmse = RmseMode::PaperLiteral;
    }
    base
}

fn metric_options(cfg: &EvaluateConfig) -> MetricOptions {
    MetricOptions { absrel_denominator: cfg.absrel_denominator, rmse: cfg.rmse }
}

struct FuseFlags {
    alpha: Option<f64>,
    cutoff_hz: Option<f64>,
    window_length: Option<usize>,
    overlap: Option<usize>,
    no_blend: bool,
}

fn merge_fuse(mut base: FusionConfig, flags: FuseFlags) -> FusionConfig {
    if let Some(a) = flags.alpha {
        base.alpha = a;
    }
    if let Some(c) = flags.cutoff_hz {
        base.cutoff_hz = c;
    }
    if let Some(w) = flags.window_length {
        base.window_length = w;
    }
    if let Some(o) = flags.overlap {
        base.overlap = o;
    }
    if flags.no_blend {
        base.blend = false;
    }
    base
}

fn fusion_failure(e: FusionError) -> Failure {
    match e {
        FusionError::Config(_) | FusionError::Overlap { .. } | FusionError::EmptyWindow | FusionError::Schedule(_) => usage(e),
        other => data(other),
    }
}

pub fn dispatch(command: Command, cfg: RunConfig) -> Result<(), Failure> {
    let seed = cfg.seed.unwrap_or(0);
    match command {
        Command::Synth { spec, out } => synth(&spec, &out, cfg.seed),
        Command::Evaluate { pred, gt, out, eval } => {
            let ecfg = merge_eval(cfg.evaluate, &eval);
            evaluate_cmd(&pred, &gt, &out, &ecfg)
        }
        Command::Spectrum { pred, gt, pred2, metric, bands, out, eval } => {
            let mut scfg = cfg.spectrum;
            scfg.evaluate = merge_eval(scfg.evaluate, &eval);
            if let Some(m) = metric {
                scfg.metric = m.into();
            }
            if let Some(b) = bands {
                scfg.bands = b;
            }
            spectrum_cmd(&pred, &gt, pred2.as_deref(), &out, &scfg)
        }
        Command::Fuse { pairs, out, alpha, cutoff_hz, window_length, overlap, no_blend } => {
            let fcfg = merge_fuse(cfg.fuse, FuseFlags { alpha, cutoff_hz, window_length, overlap, no_blend });
            fuse_cmd(&pairs, &out, &fcfg, seed)
        }
        Command::Denoise { input, out, alpha, cutoff_hz, window_length, overlap, no_blend } => {
            let fcfg = merge_fuse(cfg.fuse, FuseFlags { alpha, cutoff_hz, window_length, overlap, no_blend });
            denoise_cmd(&input, &out, &fcfg, seed)
        }
        Command::Tempcons { pred, gt, delta, correspondences, all_regions, out } => {
            let mut tcfg = cfg.tempcons;
            if let Some(d) = delta {
                tcfg.delta = d;
            }
            if all_regions {
                tcfg.static_only = false;
            }
            let corr = correspondences.unwrap_or_else(|| gt.join("correspondences.bin"));
            tempcons_cmd(&pred, &gt, &corr, &out, TempConsOptions { delta: tcfg.delta, static_only: tcfg.static_only })
        }
        Command::Schedule { out } => schedule_cmd(&out, &cfg.fuse),
    }
}

fn load_bench_spec(path: &Path) -> Result<(BenchSpec, String), Failure> {
    let bytes = fs::read(path).map_err(|e| usage(format!("cannot read spec {}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| usage(format!("spec {}: {e}", path.display())))?;
    let spec = if value.get("scene").is_some() {
        serde_json::from_value::<BenchSpec>(value)
    } else {
        serde_json::from_value::<SceneSpec>(value).map(BenchSpec::from_scene)
    }
    .map_err(|e| usage(format!("spec {}: {e}", path.display())))?;
    Ok((spec, hash))
}

fn bench_failure(e: BenchError) -> Failure {
    match e {
        BenchError::Invalid(_)
        | BenchError::Scene(SceneError::Invalid(_) | SceneError::Visibility { .. })
        | BenchError::Surrogate(SurrogateError::Invalid(_) | SurrogateError::EmptyBand { .. }) => usage(e),
        other => data(other),
    }
}

fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let (mut spec, hash) = load_bench_spec(spec_path)?;
    if let Some(s) = seed {
        spec.reseed(s);
    }
    spec.validate().map_err(bench_failure)?;
    let start = Instant::now();
    let bench = generate_bench(&spec).map_err(bench_failure)?;
    let elapsed = start.elapsed().as_secs_f64();

    create_dir(out)?;
    let scene = &bench.scene;
    let gt_dir = out.join("gt");
    write_container(&scene.depth, Some(&scene.track), Some(&scene.masks), &gt_dir).map_err(data)?;
    write_correspondences(&gt_dir.join("correspondences.bin"), &scene.correspondences).map_err(data)?;
    write_container(&bench.stereo, Some(&scene.track), Some(&scene.masks), &out.join("stereo")).map_err(data)?;
    write_container(&bench.drift, Some(&scene.track), Some(&scene.masks), &out.join("drift")).map_err(data)?;
    bench.pairs.write(&out.join("pairs")).map_err(data)?;

    let mut effective = spec.clone();
    effective.drift = bench.drift_spec.clone();
    write_json(&out.join("bench.json"), &effective)?;
    write_manifest(
        out,
        "synth",
        json!({ "spec": spec, "calibrated_drift_amplitude": bench.drift_spec.drift_amplitude }),
        json!({ "spec": show(spec_path), "spec_sha256": hash, "seed": spec.scene.seed }),
    )?;
    write_timings(out, spec.scene.frame_count, &[("synth", elapsed)])
}

fn evaluate_cmd(pred_dir: &Path, gt_dir: &Path, out: &Path, cfg: &EvaluateConfig) -> Result<(), Failure> {
    let (pred, _, _) = read_video(pred_dir)?;
    let (gt, _, masks) = read_video(gt_dir)?;
    let (report, _) = evaluate(&pred, &gt, masks.as_ref(), cfg.per_frame, metric_options(cfg)).map_err(data)?;
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_text(&out.join("metrics.csv"), &report.overall.to_csv())?;
    if let Some(r) = &report.regions {
        write_text(&out.join("metrics_dynamic.csv"), &r.dynamic.to_csv())?;
        write_text(&out.join("metrics_static.csv"), &r.static_.to_csv())?;
    }
    write_manifest(out, "evaluate", json!(cfg), json!({ "pred": show(pred_dir), "gt": show(gt_dir) }))
}

fn metric_sequence(pred_dir: &Path, gt: &DepthVideo, cfg: &crate::config::SpectrumConfig) -> Result<ErrorSequence, Failure> {
    let (pred, _, _) = read_video(pred_dir)?;
    let (report, _) = evaluate(&pred, gt, None, cfg.evaluate.per_frame, metric_options(&cfg.evaluate)).map_err(data)?;
    ErrorSequence::from_report(&report.overall, cfg.metric).map_err(data)
}

fn spectrum_cmd(
    pred_dir: &Path,
    gt_dir: &Path,
    pred2: Option<&Path>,
    out: &Path,
    cfg: &crate::config::SpectrumConfig,
) -> Result<(), Failure> {
    if cfg.scheme == BandScheme::Custom {
        return Err(usage("spectrum.scheme must be exponential or linear"));
    }
    if !(cfg.fps > 0.0) {
        return Err(usage("spectrum.fps must be positive"));
    }
    let (gt, _, _) = read_video(gt_dir)?;
    let seq = metric_sequence(pred_dir, &gt, cfg)?;
    let partition = BandPartition::new(seq.len(), cfg.bands, cfg.scheme).map_err(usage)?;
    create_dir(out)?;
    write_text(&out.join("spectrum.csv"), &spectrum_csv(&magnitude_spectrum(&seq), seq.len(), cfg.fps))?;
    let values = band_metrics(&seq, &partition).map_err(data)?;
    write_text(&out.join("bands.csv"), &band_table_csv(cfg.metric, &values))?;
    write_json(&out.join("bands.json"), &band_rows(&partition, &values))?;
    let mut inputs = json!({ "pred": show(pred_dir), "gt": show(gt_dir) });
    if let Some(p2) = pred2 {
        let seq2 = metric_sequence(p2, &gt, cfg)?;
        let values2 = band_metrics(&seq2, &partition).map_err(data)?;
        write_text(&out.join("spectrum_pred2.csv"), &spectrum_csv(&magnitude_spectrum(&seq2), seq2.len(), cfg.fps))?;
        write_text(&out.join("bands_pred2.csv"), &band_table_csv(cfg.metric, &values2))?;
        let ratio = amplitude_ratio(&seq2, &seq).map_err(data)?;
        write_text(&out.join("ratio.csv"), &ratio_csv(&ratio, seq.len(), cfg.fps))?;
        inputs["pred2"] = json!(show(p2));
    }
    write_manifest(out, "spectrum", json!(cfg), inputs)
}

fn fuse_cmd(pairs_dir: &Path, out: &Path, cfg: &FusionConfig, seed: u64) -> Result<(), Failure> {
    cfg.denoiser().map_err(fusion_failure)?;
    let graph = PairGraph::read(pairs_dir).map_err(|e| data(format!("{}: {e}", pairs_dir.display())))?;
    let start = Instant::now();
    let stage1 = align_global(&graph, &cfg.align).map_err(data)?;
    let t1 = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (fused, plan) = fuse_video(&stage1.depth, cfg, seed).map_err(fusion_failure)?;
    let t2 = start.elapsed().as_secs_f64();

    create_dir(out)?;
    write_container(&stage1.depth, Some(&stage1.track), None, &out.join("stage1")).map_err(data)?;
    write_container(&fused, Some(&stage1.track), None, &out.join("fused")).map_err(data)?;
    write_json(&out.join("plan.json"), &plan)?;
    write_json(&out.join("tree.json"), &stage1.tree)?;
    write_manifest(out, "fuse", json!({ "seed": seed, "fuse": cfg }), json!({ "pairs": show(pairs_dir) }))?;
    write_timings(out, graph.frame_count, &[("stage1", t1), ("stage2", t2)])
}

fn denoise_cmd(input: &Path, out: &Path, cfg: &FusionConfig, seed: u64) -> Result<(), Failure> {
    cfg.denoiser().map_err(fusion_failure)?;
    let (video, track, masks) = read_video(input)?;
    let start = Instant::now();
    let (denoised, plan) = fuse_video(&video, cfg, seed).map_err(fusion_failure)?;
    let elapsed = start.elapsed().as_secs_f64();
    create_dir(out)?;
    write_container(&denoised, track.as_ref(), masks.as_ref(), &out.join("denoised")).map_err(data)?;
    write_json(&out.join("plan.json"), &plan)?;
    write_manifest(out, "denoise", json!({ "seed": seed, "fuse": cfg }), json!({ "input": show(input) }))?;
    write_timings(out, video.frame_count(), &[("stage2", elapsed)])
}

fn tempcons_cmd(pred_dir: &Path, gt_dir: &Path, corr: &Path, out: &Path, opts: TempConsOptions) -> Result<(), Failure> {
    let (pred, _, _) = read_video(pred_dir)?;
    let (gt, track, masks) = read_video(gt_dir)?;
    let track = track.ok_or_else(|| data(format!("{}: ground truth has no camera track", gt_dir.display())))?;
    let correspondences = read_correspondences(corr).map_err(data)?;
    let aligned = align_shared(&pred, &gt).map_err(data)?;
    let report = temporal_consistency(&aligned.video, &track, &correspondences, masks.as_ref(), opts).map_err(data)?;
    create_dir(out)?;
    write_json(&out.join("tempcons.json"), &report)?;
    write_text(&out.join("tempcons.csv"), &report.to_csv())?;
    write_manifest(
        out,
        "tempcons",
        json!(opts),
        json!({ "pred": show(pred_dir), "gt": show(gt_dir), "correspondences": show(corr) }),
    )
}

fn schedule_cmd(out: &Path, cfg: &FusionConfig) -> Result<(), Failure> {
    let table = ScheduleTable::build(cfg.schedule, cfg.beta_start, cfg.beta_end, cfg.train_steps).map_err(usage)?;
    let spacing = TimestepSpacing::new(cfg.train_steps, cfg.inference_steps, cfg.spacing).map_err(usage)?;
    create_dir(out)?;
    write_text(&out.join("schedule.csv"), &table.to_csv())?;
    let steps: Vec<Value> = spacing
        .timesteps
        .iter()
        .map(|&t| {
            let (a, b) = table.coefficients(t).expect("spacing lies within the schedule");
            json!({ "timestep": t, "alpha_bar": table.alpha_bar(t).expect("in range"), "sqrt_alpha_bar": a, "sqrt_one_minus_alpha_bar": b })
        })
        .collect();
    write_json(&out.join("spacing.json"), &json!({ "mode": spacing.mode, "steps": steps }))?;
    write_manifest(
        out,
        "schedule",
        json!({ "schedule": cfg.schedule, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end, "train_steps": cfg.train_steps, "inference_steps": cfg.inference_steps, "spacing": cfg.spacing }),
        json!({}),
    )
}
