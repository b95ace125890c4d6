use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use panoavoid::evaluation::{
    evaluate_file, heading_ablation, replay_svg, report_json, sr_stats, summary_grid, sweep_noise,
    sweep_size, trajectory_csv, EvalConfig, EvalReport, TaskGoal, TaskSpec, DEFAULT_SIZE_RADII,
};
use panoavoid::geometry::{EquirectGrid, Vec3};
use panoavoid::render::{render_cubefaces, render_equirect, render_pinhole, to_pgm};
use panoavoid::training::{train, TrainConfig};
use panoavoid::world::{Aabb, Scene};

#[derive(Parser)]
#[command(name = "panoavoid", version, about = "Panoramic depth avoidance: train, evaluate, and inspect policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize a policy from a training config.
    Train {
        /// Training config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Shrink to the 16x32-input, 150-step desk preset.
        #[arg(long)]
        desk_scale: bool,
        /// Output directory for checkpoints, loss CSV, and the config echo.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run repeated trials of a checkpoint on a task.
    Eval {
        /// Task config JSON (a task spec, optionally wrapped with eval settings).
        #[arg(long)]
        config: PathBuf,
        /// Policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report, summary, and per-trial CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint across a parameter sweep.
    Sweep {
        /// Sweep config JSON (task plus optional sweep lists).
        #[arg(long)]
        config: PathBuf,
        /// Policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sweep kind.
        #[arg(long, value_enum)]
        mode: Option<SweepMode>,
        /// Trials per sweep point.
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for reports and the summary grid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a depth image of a scene to 16-bit PGM.
    Render {
        /// Render config JSON (scene path, pose, image parameters).
        #[arg(long)]
        config: PathBuf,
        /// Camera model.
        #[arg(long, value_enum)]
        mode: Option<RenderMode>,
        /// Output directory for the PGM file(s).
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a flown trial as a top-down SVG.
    Replay {
        /// Trial CSV, or a JSON config naming the trajectory and scene.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the SVG.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SweepMode {
    Noise,
    Size,
    Heading,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RenderMode {
    Equirect,
    Pinhole,
    Cube,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

impl From<String> for CliError {
    fn from(msg: String) -> Self {
        CliError::Runtime(msg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train { config, seed, desk_scale, out } => cmd_train(&config, seed, desk_scale, &out),
        Cmd::Eval { config, checkpoint, trials, seed, out } => {
            cmd_eval(&config, checkpoint, trials, seed, &out)
        }
        Cmd::Sweep { config, checkpoint, mode, trials, seed, out } => {
            cmd_sweep(&config, checkpoint, mode, trials, seed, &out)
        }
        Cmd::Render { config, mode, out } => cmd_render(&config, mode, &out),
        Cmd::Replay { config, out } => cmd_replay(&config, &out),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {}", path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {}", path.display(), e))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {}", dir.display(), e)))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {}", path.display(), e)))?;
    Ok(path)
}

fn echo_config<T: Serialize>(dir: &Path, resolved: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(resolved).expect("config serialization");
    text.push('\n');
    write_file(dir, "resolved_config.json", text.as_bytes())?;
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

fn cmd_train(config: &Path, seed: Option<u64>, desk_scale: bool, out: &Path) -> Result<(), CliError> {
    let mut cfg = TrainConfig::from_json_file(config).map_err(CliError::Runtime)?;
    if desk_scale {
        // Scale preset only; the step budget stays with the config file.
        let desk = TrainConfig::desk();
        cfg.rollout_steps = desk.rollout_steps;
        cfg.tbptt_window = desk.tbptt_window;
        cfg.obstacle_density = desk.obstacle_density;
        cfg.obstacle_speed = desk.obstacle_speed;
        cfg.obstacle_size = desk.obstacle_size;
        cfg.spawn_radius = desk.spawn_radius;
        cfg.desk_scale = true;
        cfg.policy = None;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    echo_config(out, &cfg)?;
    let outcome =
        train::<f64>(&cfg, out).map_err(|e| CliError::Runtime(format!("training failed: {e}")))?;
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    println!("loss curve: {}", outcome.loss_csv.display());
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────────

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFileConfig {
    task: TaskSpec,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    noise_gamma: Option<f64>,
}

/// Accepts either a bare task spec or a task wrapped with eval settings.
fn read_eval_config(path: &Path) -> Result<EvalFileConfig, String> {
    let value: serde_json::Value = read_json(path)?;
    let wrap = |e: serde_json::Error| format!("invalid config {}: {}", path.display(), e);
    if value.get("task").is_some() {
        serde_json::from_value(value).map_err(wrap)
    } else {
        let task: TaskSpec = serde_json::from_value(value).map_err(wrap)?;
        Ok(EvalFileConfig { task, checkpoint: None, trials: None, seed: None, noise_gamma: None })
    }
}

fn cmd_eval(
    config: &Path,
    checkpoint: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let file = read_eval_config(config).map_err(CliError::Runtime)?;
    file.task.validate().map_err(CliError::Runtime)?;
    let Some(checkpoint) = checkpoint.or(file.checkpoint) else {
        return usage("eval needs --checkpoint or a \"checkpoint\" entry in the config");
    };
    let cfg = EvalConfig {
        trials: trials.or(file.trials).unwrap_or(10),
        seed_base: seed.or(file.seed).unwrap_or(1000),
        noise_gamma: file.noise_gamma.unwrap_or(0.0),
    };
    if cfg.trials == 0 {
        return usage("--trials must be at least 1");
    }
    let resolved = EvalFileConfig {
        task: file.task.clone(),
        checkpoint: Some(checkpoint.clone()),
        trials: Some(cfg.trials),
        seed: Some(cfg.seed_base),
        noise_gamma: Some(cfg.noise_gamma),
    };
    echo_config(out, &resolved)?;

    let run = evaluate_file::<f64>(&file.task, &checkpoint, &cfg)
        .map_err(|e| CliError::Runtime(format!("cannot evaluate {}: {}", checkpoint.display(), e)))?;
    write_file(out, "report.json", report_json(&run.report).as_bytes())?;
    for (i, log) in run.logs.iter().enumerate() {
        write_file(out, &format!("trial_{i:03}.csv"), trajectory_csv(log).as_bytes())?;
    }
    let grid = summary_grid(&[(format!("gamma {:.2}", cfg.noise_gamma), &run.report)]);
    write_file(out, "summary.txt", grid.as_bytes())?;
    print!("{grid}");
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────────

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFileConfig {
    task: TaskSpec,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    /// Second checkpoint compared by the heading sweep.
    #[serde(default)]
    checkpoint_free: Option<PathBuf>,
    #[serde(default)]
    mode: Option<SweepMode>,
    #[serde(default)]
    gammas: Option<Vec<f64>>,
    #[serde(default)]
    radii: Option<Vec<f64>>,
    #[serde(default)]
    n_headings: Option<usize>,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct SrStats {
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum SweepReport<'a> {
    Noise { gammas: &'a [f64], reports: Vec<&'a EvalReport> },
    Size { radii: &'a [f64], reports: Vec<&'a EvalReport> },
    Heading {
        headings: Vec<f64>,
        fixed: Vec<EvalReport>,
        free: Vec<EvalReport>,
        fixed_sr: SrStats,
        free_sr: SrStats,
    },
}

fn cmd_sweep(
    config: &Path,
    checkpoint: Option<PathBuf>,
    mode: Option<SweepMode>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let file: SweepFileConfig = read_json(config).map_err(CliError::Runtime)?;
    file.task.validate().map_err(CliError::Runtime)?;
    let Some(checkpoint) = checkpoint.or(file.checkpoint.clone()) else {
        return usage("sweep needs --checkpoint or a \"checkpoint\" entry in the config");
    };
    let mode = mode.or(file.mode).unwrap_or(SweepMode::Noise);
    let cfg = EvalConfig {
        trials: trials.or(file.trials).unwrap_or(10),
        seed_base: seed.or(file.seed).unwrap_or(1000),
        noise_gamma: 0.0,
    };
    if cfg.trials == 0 {
        return usage("--trials must be at least 1");
    }
    let hover = matches!(file.task.goal, TaskGoal::Hover { .. });

    let mut resolved = SweepFileConfig {
        checkpoint: Some(checkpoint.clone()),
        mode: Some(mode),
        trials: Some(cfg.trials),
        seed: Some(cfg.seed_base),
        ..file.clone()
    };

    let (report_value, grid) = match mode {
        SweepMode::Noise => {
            let gammas = file.gammas.clone().unwrap_or_else(|| vec![0.0, 0.05, 0.1, 0.2]);
            resolved.gammas = Some(gammas.clone());
            echo_config(out, &resolved)?;
            let runs = sweep_noise::<f64>(&file.task, &checkpoint, &gammas, &cfg)
                .map_err(|e| CliError::Runtime(format!("sweep failed: {e}")))?;
            let rows: Vec<(String, &EvalReport)> = gammas
                .iter()
                .zip(&runs)
                .map(|(g, run)| (format!("gamma {g:.2}"), &run.report))
                .collect();
            let grid = summary_grid(&rows);
            let report = SweepReport::Noise {
                gammas: &gammas,
                reports: runs.iter().map(|r| &r.report).collect(),
            };
            (serde_json::to_value(&report).expect("report serialization"), grid)
        }
        SweepMode::Size => {
            if !hover {
                return Err(CliError::Runtime("the size sweep runs on the hover task".into()));
            }
            let radii = file.radii.clone().unwrap_or_else(|| DEFAULT_SIZE_RADII.to_vec());
            resolved.radii = Some(radii.clone());
            echo_config(out, &resolved)?;
            let runs = sweep_size::<f64>(&checkpoint, &file.task, &radii, &cfg)
                .map_err(|e| CliError::Runtime(format!("sweep failed: {e}")))?;
            let rows: Vec<(String, &EvalReport)> = runs
                .iter()
                .map(|(r, run)| (format!("radius {r:.2}"), &run.report))
                .collect();
            let grid = summary_grid(&rows);
            let report = SweepReport::Size {
                radii: &radii,
                reports: runs.iter().map(|(_, r)| &r.report).collect(),
            };
            (serde_json::to_value(&report).expect("report serialization"), grid)
        }
        SweepMode::Heading => {
            if !hover {
                return Err(CliError::Runtime("the heading sweep runs on the hover task".into()));
            }
            let Some(free_ckpt) = file.checkpoint_free.clone() else {
                return usage("heading sweep needs a \"checkpoint_free\" entry in the config");
            };
            let n = file.n_headings.unwrap_or(8);
            if n == 0 {
                return usage("n_headings must be at least 1");
            }
            resolved.n_headings = Some(n);
            echo_config(out, &resolved)?;
            let abl = heading_ablation::<f64>(&checkpoint, &free_ckpt, n, &file.task, &cfg)
                .map_err(|e| CliError::Runtime(format!("sweep failed: {e}")))?;
            let mut rows: Vec<(String, &EvalReport)> = Vec::new();
            for (i, psi) in abl.headings.iter().enumerate() {
                rows.push((format!("fixed-yaw {psi:.2} rad"), &abl.fixed[i]));
                rows.push((format!("free-yaw  {psi:.2} rad"), &abl.free[i]));
            }
            let grid = summary_grid(&rows);
            let (fm, fv) = sr_stats(&abl.fixed);
            let (gm, gv) = sr_stats(&abl.free);
            let report = SweepReport::Heading {
                headings: abl.headings,
                fixed: abl.fixed,
                free: abl.free,
                fixed_sr: SrStats { mean: fm, variance: fv },
                free_sr: SrStats { mean: gm, variance: gv },
            };
            (serde_json::to_value(&report).expect("report serialization"), grid)
        }
    };

    let mut text = serde_json::to_string_pretty(&report_value).expect("report serialization");
    text.push('\n');
    write_file(out, "report.json", text.as_bytes())?;
    write_file(out, "summary.txt", grid.as_bytes())?;
    print!("{grid}");
    Ok(())
}

// ── render ───────────────────────────────────────────────────────────────

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderFileConfig {
    /// Scene JSON; omitted means an empty scene.
    #[serde(default)]
    scene: Option<PathBuf>,
    #[serde(default = "default_position")]
    position: [f64; 3],
    #[serde(default)]
    yaw: f64,
    #[serde(default)]
    mode: Option<RenderMode>,
    #[serde(default = "default_height")]
    height: usize,
    #[serde(default = "default_width")]
    width: usize,
    /// Pinhole horizontal field of view in radians.
    #[serde(default = "default_fov")]
    fov: f64,
    #[serde(default = "default_face_res")]
    face_res: usize,
    #[serde(default = "default_d_max")]
    d_max: f64,
}

fn default_position() -> [f64; 3] {
    [0.0, 0.0, 4.0]
}
fn default_height() -> usize {
    64
}
fn default_width() -> usize {
    128
}
fn default_fov() -> f64 {
    std::f64::consts::FRAC_PI_2
}
fn default_face_res() -> usize {
    64
}
fn default_d_max() -> f64 {
    30.0
}

fn cmd_render(config: &Path, mode: Option<RenderMode>, out: &Path) -> Result<(), CliError> {
    let file: RenderFileConfig = read_json(config).map_err(CliError::Runtime)?;
    let mode = mode.or(file.mode).unwrap_or(RenderMode::Equirect);
    if !(file.d_max > 0.0) {
        return Err(CliError::Runtime("d_max must be positive".into()));
    }
    if !file.position.iter().all(|c| c.is_finite()) || !file.yaw.is_finite() {
        return Err(CliError::Runtime("pose must be finite".into()));
    }
    let scene: Scene<f64> = match &file.scene {
        Some(path) => Scene::from_json_file(path)
            .map_err(|e| CliError::Runtime(format!("cannot load scene {}: {}", path.display(), e)))?,
        None => Scene {
            obstacles: Vec::new(),
            ground_height: None,
            bounds: Aabb {
                min: Vec3::new(-50.0, -50.0, -50.0),
                max: Vec3::new(50.0, 50.0, 50.0),
            },
        },
    };
    let pos = Vec3::new(file.position[0], file.position[1], file.position[2]);
    if let Some(gh) = scene.ground_height {
        if pos.z <= gh {
            return Err(CliError::Runtime(format!(
                "render position z = {} is not above the ground at {}",
                pos.z, gh
            )));
        }
    }

    let resolved = RenderFileConfig { mode: Some(mode), ..file.clone() };
    echo_config(out, &resolved)?;

    let mut written = Vec::new();
    match mode {
        RenderMode::Equirect => {
            if file.height < 2 || file.width < 4 || file.width % 2 != 0 {
                return Err(CliError::Runtime(format!(
                    "equirect grid needs height >= 2 and even width >= 4, got {}x{}",
                    file.height, file.width
                )));
            }
            let grid = EquirectGrid::new(file.height, file.width);
            let img = render_equirect(&scene, pos, file.yaw, grid, file.d_max);
            written.push(write_file(out, "depth_equirect.pgm", &to_pgm(&img))?);
        }
        RenderMode::Pinhole => {
            if file.height == 0 || file.width == 0 {
                return Err(CliError::Runtime("pinhole image needs nonzero dimensions".into()));
            }
            if !(file.fov > 0.0 && file.fov < std::f64::consts::PI) {
                return Err(CliError::Runtime(format!(
                    "pinhole fov must be in (0, pi) radians, got {}",
                    file.fov
                )));
            }
            let img =
                render_pinhole(&scene, pos, file.yaw, file.fov, file.height, file.width, file.d_max);
            written.push(write_file(out, "depth_pinhole.pgm", &to_pgm(&img))?);
        }
        RenderMode::Cube => {
            if file.face_res == 0 {
                return Err(CliError::Runtime("cube faces need nonzero resolution".into()));
            }
            let faces = render_cubefaces(&scene, pos, file.yaw, file.face_res, file.d_max);
            for img in &faces {
                let face = match img.camera {
                    panoavoid::render::CameraModel::CubeFace { face } => face,
                    _ => unreachable!("cube render tags each image with its face"),
                };
                let name = format!("depth_cube_{}.pgm", face.name());
                written.push(write_file(out, &name, &to_pgm(img))?);
            }
        }
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ── replay ───────────────────────────────────────────────────────────────

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayFileConfig {
    /// Trial CSV as written by eval.
    trajectory: PathBuf,
    #[serde(default)]
    scene: Option<PathBuf>,
}

fn parse_trajectory(path: &Path) -> Result<Vec<(f64, Vec3<f64>, bool)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read trajectory {}: {}", path.display(), e)))?;
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| {
            CliError::Runtime(format!(
                "trajectory {} has no \"{}\" column",
                path.display(),
                name
            ))
        })
    };
    let (it, ix, iy, iz) = (col("t")?, col("px")?, col("py")?, col("pz")?);
    let icoll = cols.iter().position(|c| *c == "collision");

    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<f64, CliError> {
            fields
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Runtime(format!(
                        "trajectory {} line {}: bad field {}",
                        path.display(),
                        lineno + 2,
                        i + 1
                    ))
                })
        };
        let collision = match icoll {
            Some(i) => matches!(fields.get(i).copied(), Some("1") | Some("true")),
            None => false,
        };
        points.push((get(it)?, Vec3::new(get(ix)?, get(iy)?, get(iz)?), collision));
    }
    Ok(points)
}

fn cmd_replay(config: &Path, out: &Path) -> Result<(), CliError> {
    let file = if config.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        ReplayFileConfig { trajectory: config.to_path_buf(), scene: None }
    } else {
        read_json(config).map_err(CliError::Runtime)?
    };
    let points = parse_trajectory(&file.trajectory)?;
    let scene: Option<Scene<f64>> = match &file.scene {
        Some(path) => Some(Scene::from_json_file(path).map_err(|e| {
            CliError::Runtime(format!("cannot load scene {}: {}", path.display(), e))
        })?),
        None => None,
    };
    echo_config(out, &file)?;
    let svg = replay_svg(&points, scene.as_ref());
    let path = write_file(out, "replay.svg", svg.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
