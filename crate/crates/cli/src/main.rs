//! Command-line front end: scene generation, hole filling, compression,
//! rendering, motion descriptions and evaluation over .momap files.
//!
//! Every command prints a JSON summary on stdout and a small aligned
//! table on stderr. Settings resolve per field as: command flag, then
//! the --config file, then the built-in default; the resolved values are
//! echoed in the summary. Exit code 1 means the inputs could not be read
//! or parsed, 2 means they were readable but inconsistent.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use momap::compress::{compress, read_momapz, reconstruction_rmse, write_momapz};
use momap::dsl;
use momap::infill::{infill, InfillConfig};
use momap::io::{read_momap, write_momap};
use momap::metrics::{evaluate_best_of_n, MetricConfig};
use momap::render::{coverage, render_sized, write_frames};
use momap::synth::{generate, SceneSpec};
use momap::types::{Camera, MoMap, SegMap};
use momap::{Error, Result};

#[derive(Parser)]
#[command(name = "momap", version, about = "Pixel-aligned 3D trajectory maps")]
struct Cli {
    /// JSON settings file; command flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; 0 keeps the library default.
    #[arg(long, global = true, env = "MOMAP_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene from a JSON description.
    Gen {
        /// Scene description file.
        #[arg(long)]
        scene: PathBuf,
        /// Output .momap path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scene file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fill hidden trajectory entries.
    Infill {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: InfillFlags,
    },
    /// Project trajectories onto a shared low-rank basis.
    Compress {
        #[arg(long)]
        input: PathBuf,
        /// Output .momapz path.
        #[arg(long)]
        out: PathBuf,
        /// Basis size.
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Reconstruct a dense map from a compressed one.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproject a map into per-frame images.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Output directory for frame_*.{ppm,pgm,seg}.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        radius: Option<f64>,
        /// Output image height; the map's height when absent.
        #[arg(long)]
        out_height: Option<usize>,
        /// Output image width; the map's width when absent.
        #[arg(long)]
        out_width: Option<usize>,
    },
    /// Patch-level motion descriptions.
    Dsl {
        #[command(subcommand)]
        action: DslCommand,
    },
    /// Score candidate maps against ground truth, keeping each metric's
    /// best.
    Eval {
        /// Ground-truth .momap (must carry a segmentation).
        #[arg(long)]
        gt: PathBuf,
        /// Candidate .momap files, repeatable.
        #[arg(long = "pred", required = true, num_args = 1..)]
        preds: Vec<PathBuf>,
        #[command(flatten)]
        overrides: MetricFlags,
    },
}

#[derive(Subcommand)]
enum DslCommand {
    /// Write the motion description of a map.
    Emit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stay-band half-width in meters.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Paint a description's per-axis signs onto the pixel grid.
    Ground {
        /// Description JSON.
        #[arg(long)]
        dsl: PathBuf,
        /// Map providing the segmentation.
        #[arg(long)]
        input: PathBuf,
        /// Output raw int8 grid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a description file.
    Check {
        #[arg(long)]
        dsl: PathBuf,
        /// Skip unknown fields instead of rejecting them.
        #[arg(long)]
        lenient: bool,
    },
}

#[derive(Args, Clone, Copy, Default)]
struct InfillFlags {
    #[arg(long)]
    w_accel: Option<f64>,
    #[arg(long)]
    w_arap: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct MetricFlags {
    #[arg(long)]
    fg_threshold: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    quantize_eps: Option<f64>,
    /// Frame strides for the direction-agreement metric, repeatable.
    #[arg(long = "dt", num_args = 1..)]
    dt_values: Option<Vec<usize>>,
    #[arg(long)]
    n_samples: Option<usize>,
}

/// Optional per-tool sections of the --config file. Unknown fields are
/// rejected so typos surface instead of silently reverting to defaults.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    infill: InfillSection,
    metrics: MetricSection,
    compress: CompressSection,
    render: RenderSection,
    dsl: DslSection,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct InfillSection {
    w_accel: Option<f64>,
    w_arap: Option<f64>,
    knn: Option<usize>,
    max_iters: Option<usize>,
    grad_tol: Option<f64>,
    step: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MetricSection {
    fg_threshold: Option<f64>,
    knn: Option<usize>,
    quantize_eps: Option<f64>,
    dt_values: Option<Vec<usize>>,
    n_samples: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CompressSection {
    channels: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RenderSection {
    splat_radius: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DslSection {
    eps: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
    }
}

fn resolve_infill(flags: &InfillFlags, file: &InfillSection) -> InfillConfig {
    let d = InfillConfig::default();
    InfillConfig {
        w_accel: flags.w_accel.or(file.w_accel).unwrap_or(d.w_accel),
        w_arap: flags.w_arap.or(file.w_arap).unwrap_or(d.w_arap),
        knn: flags.knn.or(file.knn).unwrap_or(d.knn),
        max_iters: flags.max_iters.or(file.max_iters).unwrap_or(d.max_iters),
        grad_tol: flags.grad_tol.or(file.grad_tol).unwrap_or(d.grad_tol),
        step: flags.step.or(file.step).unwrap_or(d.step),
    }
}

fn resolve_metrics(flags: &MetricFlags, file: &MetricSection) -> MetricConfig {
    let d = MetricConfig::default();
    MetricConfig {
        fg_threshold: flags.fg_threshold.or(file.fg_threshold).unwrap_or(d.fg_threshold),
        knn: flags.knn.or(file.knn).unwrap_or(d.knn),
        quantize_eps: flags.quantize_eps.or(file.quantize_eps).unwrap_or(d.quantize_eps),
        dt_values: flags
            .dt_values
            .clone()
            .or_else(|| file.dt_values.clone())
            .unwrap_or(d.dt_values),
        n_samples: flags.n_samples.or(file.n_samples).unwrap_or(d.n_samples),
    }
}

fn read_map(path: &Path) -> Result<(MoMap, Option<SegMap>, Option<Camera>)> {
    read_momap(path)
}

fn need_seg(seg: Option<SegMap>, path: &Path) -> Result<SegMap> {
    seg.ok_or_else(|| Error::Validation {
        message: format!("{} carries no segmentation", path.display()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Tests call back into this binary repeatedly; a pool that is
        // already set keeps its size, which the output never depends on.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(&cli) {
        Ok((summary, table)) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain JSON"));
            eprint!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_decode_error() { 1 } else { 2 })
        }
    }
}

fn kv_table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

fn run(cli: &Cli) -> Result<(Value, String)> {
    let file_cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen { scene, out, seed } => cmd_gen(scene, out, *seed),
        Command::Infill { input, out, overrides } => {
            cmd_infill(input, out, resolve_infill(overrides, &file_cfg.infill))
        }
        Command::Compress { input, out, channels } => {
            let channels = channels.or(file_cfg.compress.channels).unwrap_or(32);
            cmd_compress(input, out, channels)
        }
        Command::Decompress { input, out } => cmd_decompress(input, out),
        Command::Render { input, out, radius, out_height, out_width } => {
            let radius = radius.or(file_cfg.render.splat_radius).unwrap_or(1.0);
            cmd_render(input, out, radius, *out_height, *out_width)
        }
        Command::Dsl { action } => match action {
            DslCommand::Emit { input, out, eps } => {
                let eps = eps.or(file_cfg.dsl.eps).unwrap_or(0.02);
                cmd_dsl_emit(input, out, eps)
            }
            DslCommand::Ground { dsl, input, out } => cmd_dsl_ground(dsl, input, out),
            DslCommand::Check { dsl, lenient } => cmd_dsl_check(dsl, *lenient),
        },
        Command::Eval { gt, preds, overrides } => {
            cmd_eval(gt, preds, resolve_metrics(overrides, &file_cfg.metrics))
        }
    }
}

fn cmd_gen(scene: &Path, out: &Path, seed: Option<u64>) -> Result<(Value, String)> {
    let mut spec = SceneSpec::from_json(&std::fs::read_to_string(scene)?)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (m, seg, cam) = generate(&spec)?;
    let bytes = write_momap(&m, Some(&seg), Some(&cam), out)?;
    let summary = json!({
        "command": "gen",
        "scene": scene.display().to_string(),
        "out": out.display().to_string(),
        "config": { "seed": spec.seed },
        "height": m.height(),
        "width": m.width(),
        "frames": m.frames(),
        "time_step": m.time_step,
        "bodies": spec.bodies.len(),
        "binary_bytes": bytes,
    });
    let table = kv_table(&[
        ("scene", scene.display().to_string()),
        ("size", format!("{} x {} x {}", m.height(), m.width(), m.frames())),
        ("bodies", spec.bodies.len().to_string()),
        ("seed", spec.seed.to_string()),
        ("written", format!("{bytes} bytes -> {}", out.display())),
    ]);
    Ok((summary, table))
}

fn cmd_infill(input: &Path, out: &Path, cfg: InfillConfig) -> Result<(Value, String)> {
    let (m, seg, cam) = read_map(input)?;
    let hidden: usize = {
        let (h, w, t) = (m.height(), m.width(), m.frames());
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| m.is_covered(y, x))
            .map(|(y, x)| (0..t).filter(|&k| !m.valid[[y, x, k]]).count())
            .sum()
    };
    let r = infill(&m, &cfg)?;
    let bytes = write_momap(&r.momap, seg.as_ref(), cam.as_ref(), out)?;
    let summary = json!({
        "command": "infill",
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "config": {
            "w_accel": cfg.w_accel,
            "w_arap": cfg.w_arap,
            "knn": cfg.knn,
            "max_iters": cfg.max_iters,
            "grad_tol": cfg.grad_tol,
            "step": cfg.step,
        },
        "hidden_entries": hidden,
        "energy": r.energy,
        "iterations": r.iterations,
        "converged": r.converged,
        "binary_bytes": bytes,
    });
    let table = kv_table(&[
        ("hidden entries", hidden.to_string()),
        ("energy", format!("{:.6e}", r.energy)),
        ("iterations", r.iterations.to_string()),
        ("converged", r.converged.to_string()),
        ("written", format!("{bytes} bytes -> {}", out.display())),
    ]);
    Ok((summary, table))
}

fn cmd_compress(input: &Path, out: &Path, channels: usize) -> Result<(Value, String)> {
    let (m, _, _) = read_map(input)?;
    let c = compress(&m, channels)?;
    let rmse = reconstruction_rmse(&m, &c)?;
    let bytes = write_momapz(&c, out)?;
    let summary = json!({
        "command": "compress",
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "config": { "channels": channels },
        "rmse": rmse,
        "coefficient_ratio": c.coefficient_ratio(),
        "binary_bytes": bytes,
    });
    let table = kv_table(&[
        ("channels", channels.to_string()),
        ("rmse", format!("{rmse:.6e}")),
        ("ratio", format!("{:.4}", c.coefficient_ratio())),
        ("written", format!("{bytes} bytes -> {}", out.display())),
    ]);
    Ok((summary, table))
}

fn cmd_decompress(input: &Path, out: &Path) -> Result<(Value, String)> {
    let c = read_momapz(input)?;
    let m = momap::compress::decompress(&c, c.frames())?;
    let bytes = write_momap(&m, None, None, out)?;
    let summary = json!({
        "command": "decompress",
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "height": m.height(),
        "width": m.width(),
        "frames": m.frames(),
        "channels": c.channels(),
        "binary_bytes": bytes,
    });
    let table = kv_table(&[
        ("size", format!("{} x {} x {}", m.height(), m.width(), m.frames())),
        ("channels", c.channels().to_string()),
        ("written", format!("{bytes} bytes -> {}", out.display())),
    ]);
    Ok((summary, table))
}

fn cmd_render(
    input: &Path,
    out: &Path,
    radius: f64,
    out_height: Option<usize>,
    out_width: Option<usize>,
) -> Result<(Value, String)> {
    let (m, seg, cam) = read_map(input)?;
    let seg = need_seg(seg, input)?;
    let cam = cam.ok_or_else(|| Error::Validation {
        message: format!("{} carries no camera", input.display()),
    })?;
    let (h, w) = (out_height.unwrap_or(m.height()), out_width.unwrap_or(m.width()));
    let frames = render_sized(&m, &seg, &cam, radius, h, w)?;
    write_frames(&frames, out)?;
    let cov = coverage(&frames);
    let mean_cov = cov.iter().sum::<f64>() / cov.len() as f64;
    let summary = json!({
        "command": "render",
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "config": { "splat_radius": radius, "out_height": h, "out_width": w },
        "frames": frames.len(),
        "mean_coverage": mean_cov,
        "coverage": cov,
    });
    let table = kv_table(&[
        ("frames", frames.len().to_string()),
        ("image size", format!("{h} x {w}")),
        ("splat radius", radius.to_string()),
        ("mean coverage", format!("{mean_cov:.4}")),
        ("written", out.display().to_string()),
    ]);
    Ok((summary, table))
}

fn cmd_dsl_emit(input: &Path, out: &Path, eps: f64) -> Result<(Value, String)> {
    let (m, seg, _) = read_map(input)?;
    let seg = need_seg(seg, input)?;
    let d = dsl::emit_dsl(&m, &seg, eps)?;
    std::fs::write(out, d.to_json_string())?;
    let summary = json!({
        "command": "dsl-emit",
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "config": { "eps": eps },
        "horizon": d.horizon,
        "patches": d.patches.len(),
    });
    let table = kv_table(&[
        ("patches", d.patches.len().to_string()),
        ("horizon", d.horizon.to_string()),
        ("written", out.display().to_string()),
    ]);
    Ok((summary, table))
}

fn cmd_dsl_ground(dsl_path: &Path, input: &Path, out: &Path) -> Result<(Value, String)> {
    let d = dsl::parse_dsl(&std::fs::read_to_string(dsl_path)?)?;
    let (_, seg, _) = read_map(input)?;
    let seg = need_seg(seg, input)?;
    let grid = dsl::ground_dsl(&d, &seg)?;
    dsl::write_grounded(&grid, out)?;
    let summary = json!({
        "command": "dsl-ground",
        "dsl": dsl_path.display().to_string(),
        "input": input.display().to_string(),
        "out": out.display().to_string(),
        "height": seg.height(),
        "width": seg.width(),
        "patches": d.patches.len(),
    });
    let table = kv_table(&[
        ("grid", format!("{} x {} x 3", seg.height(), seg.width())),
        ("patches", d.patches.len().to_string()),
        ("written", out.display().to_string()),
    ]);
    Ok((summary, table))
}

fn cmd_dsl_check(dsl_path: &Path, lenient: bool) -> Result<(Value, String)> {
    let text = std::fs::read_to_string(dsl_path)?;
    let (d, warnings) = if lenient {
        dsl::parse_dsl_lenient(&text)?
    } else {
        (dsl::parse_dsl(&text)?, Vec::new())
    };
    let summary = json!({
        "command": "dsl-check",
        "dsl": dsl_path.display().to_string(),
        "lenient": lenient,
        "valid": true,
        "horizon": d.horizon,
        "patches": d.patches.len(),
        "warnings": warnings,
    });
    let mut rows = vec![
        ("valid", "true".to_string()),
        ("patches", d.patches.len().to_string()),
    ];
    if !warnings.is_empty() {
        rows.push(("warnings", warnings.join("; ")));
    }
    Ok((summary, kv_table(&rows)))
}

fn cmd_eval(gt_path: &Path, preds: &[PathBuf], cfg: MetricConfig) -> Result<(Value, String)> {
    let (gt, seg, _) = read_map(gt_path)?;
    let seg = need_seg(seg, gt_path)?;
    let mut candidates = Vec::with_capacity(preds.len());
    for p in preds {
        let (m, _, _) = read_map(p)?;
        candidates.push(m);
    }
    let report = evaluate_best_of_n(&gt, &candidates, &seg, &cfg)?;
    let summary = json!({
        "command": "eval",
        "gt": gt_path.display().to_string(),
        "preds": preds.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "config": {
            "fg_threshold": cfg.fg_threshold,
            "knn": cfg.knn,
            "quantize_eps": cfg.quantize_eps,
            "dt_values": cfg.dt_values,
            "n_samples": cfg.n_samples,
        },
        "report": report,
    });
    let table = report.to_table();
    Ok((summary, table))
}
