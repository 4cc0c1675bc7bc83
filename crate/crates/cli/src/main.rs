use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use stitchcell::cell::{compute_metrics, CellConfig, MandrelDesign, NoiseConfig, StitchRecord};
use stitchcell::par::{self, Execution};
use stitchcell::pipeline::{
    generate_demos, learn, load_manifest, nominal_references, puncture_bench, puncture_report_body, read_demos,
    read_records, read_reference, reference_file_name, render_report, report_body, resolve_noise, run_manifest,
    with_timestamp, write_demos, write_learned, write_records, DemoProfile, LearnOptions, PipelineError,
    PunctureBenchOptions,
};
use stitchcell::vision::{NeedleGrip, NeedleSearchSpace};

#[derive(Parser, Debug)]
#[command(name = "stitchcell", version, about = "Learning-from-demonstration sewing cell simulator")]
struct Cli {
    /// Random seed (overrides manifest seeds for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with optional `cell`, `profile`, `learn` and `noise` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for independent simulations (1 = sequential).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize demonstrations and write the shipped mandrel designs.
    DemoGen {
        /// Number of demonstrations.
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Learn per-primitive models and references from demonstrations.
    Learn {
        /// Demonstration files or directories holding `demo_*.jsonl`.
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        /// Largest number of mixture components considered (candidates
        /// are 2..=K, or just 1 when K is 1).
        #[arg(long)]
        k_max: Option<usize>,
        /// Cross-validation folds.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Run stitch cycles described by one or more manifests.
    Run {
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
    },
    /// Repeated-puncture accuracy bench over a set of initial grips.
    PunctureBench(BenchArgs),
    /// Recompute a report from record files.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory with `reference_p<k>.json`; defaults to the nominal
    /// demonstration replayed without learning.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Repetitions per grip.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Noise preset (none, desk, paper).
    #[arg(long, default_value = "desk")]
    noise: String,
    /// Shipped design id.
    #[arg(long, default_value = "A")]
    design: String,
    /// Joint limit of the piercing driver (deg); flags clipped trials.
    #[arg(long)]
    reach_limit: Option<f64>,
    /// Image size, `WIDTHxHEIGHT` in pixels.
    #[arg(long)]
    resolution: Option<String>,
    /// Camera frame rate (Hz).
    #[arg(long)]
    fps: Option<f64>,
    /// Corner pixel noise std. dev. (px).
    #[arg(long)]
    pixel_noise: Option<f64>,
    /// Forward-backward tracking gate (px).
    #[arg(long)]
    tau: Option<f64>,
    /// Needle search grid steps `x:rx:ry:rz` (mm:deg:deg:deg).
    #[arg(long)]
    grid: Option<String>,
}

/// Contents of the `--config` file.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    cell: Option<CellConfig>,
    profile: Option<DemoProfile>,
    learn: Option<LearnOptions>,
    /// Noise fields merged over the selected preset.
    noise: Option<serde_json::Map<String, Value>>,
}

/// A command failure with its exit code.
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
            code: if e.is_validation() { 1 } else { 2 },
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        kind: "InvalidArgument".into(),
        message: message.into(),
        code: 1,
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        kind: "IoError".into(),
        message: format!("{}: {e}", path.display()),
        code: 2,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        kind: "InputError".into(),
        message: format!("{}: {e}", path.display()),
        code: 1,
    })?;
    serde_json::from_str(&text).map_err(|e| Failure {
        kind: "InvalidConfig".into(),
        message: format!("{}: {e}", path.display()),
        code: 1,
    })
}

fn exec_for(jobs: Option<usize>) -> Execution {
    match jobs {
        Some(1) => Execution::Sequential,
        _ => Execution::default(),
    }
}

/// Expands directories into their sorted `demo_*.jsonl` files.
fn demo_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| io_failure(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("demo_") && n.ends_with(".jsonl"))
                })
                .collect();
            files.sort_by_key(|f| {
                f.file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.trim_start_matches("demo_").parse::<usize>().ok())
                    .unwrap_or(usize::MAX)
            });
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn parse_resolution(s: &str) -> Result<(u32, u32), Failure> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| invalid(format!("resolution {s:?} is not WIDTHxHEIGHT")))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|_| invalid(format!("resolution {s:?} is not WIDTHxHEIGHT")));
    Ok((parse(w)?, parse(h)?))
}

fn parse_grid(s: &str) -> Result<[f64; 4], Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(invalid(format!("grid {s:?} is not x:rx:ry:rz")));
    }
    let mut out = [0.0; 4];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| invalid(format!("grid {s:?} is not x:rx:ry:rz")))?;
    }
    NeedleSearchSpace::with_resolution(out).map_err(|e| invalid(format!("grid {s:?}: {e}")))?;
    Ok(out)
}

fn cmd_demo_gen(cli: &Cli, cfg: &FileConfig, n: usize) -> Result<Value, Failure> {
    let profile = cfg.profile.clone().unwrap_or_default();
    let seed = cli.seed.unwrap_or(0);
    let demos = generate_demos(&profile, n, seed)?;
    let files = write_demos(&demos, &cli.out_dir.join("demos"))?;
    let design_dir = cli.out_dir.join("designs");
    std::fs::create_dir_all(&design_dir).map_err(|e| io_failure(&design_dir, e))?;
    let mut designs = Vec::new();
    for d in MandrelDesign::shipped_all() {
        let path = design_dir.join(format!("design_{}.json", d.id));
        d.save(&path).map_err(PipelineError::from)?;
        designs.push(path);
    }
    Ok(json!({
        "command": "demo-gen",
        "seed": seed,
        "profile": profile,
        "demos": files,
        "designs": designs,
    }))
}

fn cmd_learn(cli: &Cli, cfg: &FileConfig, demos: &[PathBuf], k_max: Option<usize>, folds: Option<usize>) -> Result<Value, Failure> {
    let mut options = cfg.learn.clone().unwrap_or_default();
    if let Some(k) = k_max {
        if k == 0 {
            return Err(invalid("--k-max must be positive"));
        }
        options.k_candidates = (k.min(2)..=k).collect();
    }
    if let Some(f) = folds {
        options.folds = f;
    }
    if let Some(s) = cli.seed {
        options.seed = s;
    }
    let files = demo_files(demos)?;
    let demos = read_demos(&files)?;
    let learned = learn(&demos, &options, exec_for(cli.jobs))?;
    let written = write_learned(&learned, &cli.out_dir.join("model"))?;
    let primitives: Vec<Value> = learned
        .iter()
        .map(|l| {
            json!({
                "primitive": l.model.primitive_index,
                "frame": l.model.frame.to_string(),
                "K": l.model.k,
                "samples": l.reference.samples.len(),
                "duration_s": l.reference.duration(),
            })
        })
        .collect();
    Ok(json!({
        "command": "learn",
        "options": options,
        "demos": files,
        "primitives": primitives,
        "files": written,
    }))
}

fn cmd_run(cli: &Cli, cfg: &FileConfig, manifests: &[PathBuf]) -> Result<Value, Failure> {
    let mut loaded = Vec::with_capacity(manifests.len());
    for path in manifests {
        let mut m = load_manifest(path)?;
        if let Some(s) = cli.seed {
            m.seed = s;
        }
        if let Some(over) = &cfg.noise {
            let merged = m.noise_overrides.get_or_insert_with(Default::default);
            for (k, v) in over {
                merged.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        loaded.push(m);
    }
    let outputs = par::map_slice(exec_for(cli.jobs), &loaded, |m| run_manifest(m, cfg.cell.clone()));
    let mut records: Vec<StitchRecord> = Vec::new();
    let mut traces = String::new();
    let mut effective = Vec::new();
    for (m, out) in loaded.iter().zip(outputs) {
        let out = out?;
        let offset = records.len();
        records.extend(out.records.iter().cloned().map(|mut r| {
            r.trial += offset;
            r
        }));
        for (r, t) in out.records.iter().zip(&out.traces) {
            let line = json!({"trial": r.trial + offset, "design": r.design, "trace": t});
            traces.push_str(&line.to_string());
            traces.push('\n');
        }
        effective.push(json!({
            "manifest": m,
            "noise": out.noise,
            "cell": out.cell,
            "models": out.models.iter().map(|f| json!({"primitive": f.primitive_index, "K": f.k})).collect::<Vec<_>>(),
        }));
    }
    let metrics = compute_metrics(&records).map_err(PipelineError::from)?;
    let config = json!({ "runs": effective });
    let report = render_report("run", &config, &records, &metrics);
    write_file(&cli.out_dir.join("report.txt"), &report)?;
    write_records(&records, &cli.out_dir.join("records.jsonl")).map_err(Failure::from)?;
    write_file(&cli.out_dir.join("traces.jsonl"), &traces)?;
    Ok(json!({
        "command": "run",
        "report": cli.out_dir.join("report.txt"),
        "summary": metrics,
    }))
}

fn cmd_puncture_bench(cli: &Cli, cfg: &FileConfig, args: &BenchArgs) -> Result<Value, Failure> {
    let mut options = PunctureBenchOptions::standard();
    options.seeds = args.seeds;
    options.base_seed = cli.seed.unwrap_or(0);
    options.design = MandrelDesign::shipped(&args.design)
        .ok_or_else(|| invalid(format!("unknown design {:?} (expected A, B, C or D)", args.design)))?;
    let mut noise: NoiseConfig = resolve_noise(&args.noise, cfg.noise.as_ref())?;
    if let Some(px) = args.pixel_noise {
        noise.pixel_sigma_px = px;
    }
    if let Some(tau) = args.tau {
        noise.tau_px = tau;
    }
    noise.validate().map_err(PipelineError::from)?;
    options.noise = noise;
    let mut cell = cfg.cell.clone().unwrap_or_default();
    if let Some(r) = &args.resolution {
        let (w, h) = parse_resolution(r)?;
        cell.image_width = w;
        cell.image_height = h;
    }
    if let Some(fps) = args.fps {
        cell.fps = fps;
    }
    if let Some(g) = &args.grid {
        cell.search_resolution = parse_grid(g)?;
    }
    if args.reach_limit.is_some() {
        cell.reach_limit_deg = args.reach_limit;
    }
    cell.validate().map_err(PipelineError::from)?;
    options.cell = cell;
    let references = match &args.models {
        Some(dir) => (1..=5)
            .map(|k| read_reference(&dir.join(reference_file_name(k))))
            .collect::<Result<Vec<_>, _>>()?,
        None => nominal_references(&cfg.profile.clone().unwrap_or_default())?,
    };
    let summary = puncture_bench(&references, &options, exec_for(cli.jobs))?;
    let config = json!({
        "references": args.models.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "nominal".into()),
        "noise_preset": args.noise,
        "options": options,
        "grips": options.grips.iter().map(NeedleGrip::as_array).collect::<Vec<_>>(),
    });
    let body = puncture_report_body("puncture-bench", &config, &summary);
    let path = cli.out_dir.join("puncture_report.txt");
    write_file(&path, &with_timestamp(&body))?;
    Ok(json!({
        "command": "puncture-bench",
        "report": path,
        "mean_error_mm": summary.mean_error_mm,
        "per_grip_mean_mm": summary.per_grip_mean_mm,
        "failures": summary.failures,
        "reach_limited_trials": summary.reach_limited_trials,
    }))
}

fn cmd_report(cli: &Cli, files: &[PathBuf]) -> Result<Value, Failure> {
    let mut records = Vec::new();
    for f in files {
        records.extend(read_records(f)?);
    }
    let metrics = compute_metrics(&records).map_err(PipelineError::from)?;
    let config = json!({ "records": files });
    let body = report_body("report", &config, &records, &metrics);
    let path = cli.out_dir.join("report.txt");
    write_file(&path, &with_timestamp(&body))?;
    Ok(json!({ "command": "report", "report": path, "summary": metrics }))
}

fn dispatch(cli: &Cli) -> Result<Value, Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs must be positive"));
        }
        par::configure_threads(jobs).map_err(|e| Failure {
            kind: "RuntimeError".into(),
            message: e,
            code: 2,
        })?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::DemoGen { n } => cmd_demo_gen(cli, &cfg, *n),
        Command::Learn { demos, k_max, folds } => cmd_learn(cli, &cfg, demos, *k_max, *folds),
        Command::Run { manifest } => cmd_run(cli, &cfg, manifest),
        Command::PunctureBench(args) => cmd_puncture_bench(cli, &cfg, args),
        Command::Report { records } => cmd_report(cli, records),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let record = json!({
                "error": "InvalidArgument",
                "message": e.render().to_string().trim(),
                "exit_code": 1,
            });
            eprintln!("{record}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            let record = json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            eprintln!("{record}");
            ExitCode::from(f.code)
        }
    }
}
