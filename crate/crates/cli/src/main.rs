mod debug;
mod pool;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use topotag::config::Config;
use topotag::eval::{
    evaluate, read_detections, report_csv, truth_polygon, DetectionRecord, FrameTruth, Manifest,
};
use topotag::generator::{render_svg, NodeShape};
use topotag::image::{load_gray, save_gray};
use topotag::selftest::{self, SelftestOptions};
use topotag::synth::{render_scene, SweepSpec, SynthScene};
use topotag::tagmodel::CanonicalLayout;
use topotag::{estimate_pose, render_tag, CameraIntrinsics, RenderOptions, TagFamily, TagId};

#[derive(Parser)]
#[command(
    name = "topotag",
    version,
    about = "Generate, detect and evaluate topological fiducial markers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one marker to PNG or SVG.
    Generate(GenerateArgs),
    /// Detect markers and print one JSON line per detection.
    Detect(DetectArgs),
    /// Render one synthetic scene and its ground truth.
    Synth(SynthArgs),
    /// Render a parameter grid of scenes with an evaluation manifest.
    Sweep(SweepArgs),
    /// Score detections against a manifest.
    Eval(EvalArgs),
    /// Run the acceptance checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Grid size (3, 4 or 5).
    #[arg(long, value_parser = clap::value_parser!(u8).range(3..=5))]
    grid: u8,
    #[arg(long)]
    id: u64,
    #[arg(long, default_value_t = 16)]
    px_per_cell: u32,
    #[arg(long, default_value = "circle", value_parser = ["circle", "square", "hexagon"])]
    shape: String,
    /// Output file; a `.svg` extension writes vector output.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Grid sizes to search for, comma separated (default from config, else 4).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(3..=5))]
    grid: Vec<u8>,
    /// Detector configuration JSON (falls back to $TOPOTAG_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Camera intrinsics JSON {fx, fy, cx, cy, dist}; enables pose output.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Outer border side in meters.
    #[arg(long)]
    tag_size: Option<f64>,
    /// Write threshold map, binary image, region table and overlay per frame.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Report rejected candidates on stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the sweep file's base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON-lines output of `detect`.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also write the position/rotation table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Criteria to run, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
    /// Directory of tag-free images for the false-positive check.
    #[arg(long)]
    fp_corpus: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

/// Bad input values that clap cannot see; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    use topotag::Error as E;
    e.downcast_ref::<UsageError>().is_some()
        || matches!(
            e.downcast_ref::<E>(),
            Some(E::InvalidId { .. } | E::UnsupportedGrid(_) | E::ResolutionTooLow(_))
        )
}

/// The error chain joined by colons, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Detect(a) => detect(a),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Selftest(a) => run_selftest(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let id = TagId::new(&TagFamily::new(a.grid.into())?, a.id)?;
    let opts = RenderOptions {
        pixels_per_cell: a.px_per_cell,
        node_shape: a.shape.parse::<NodeShape>()?,
        ..Default::default()
    };
    if has_extension(&a.output, "svg") {
        let svg = render_svg(id, &opts)?;
        std::fs::write(&a.output, svg)
            .with_context(|| format!("writing {}", a.output.display()))?;
    } else {
        save_gray(&render_tag(id, &opts)?, &a.output)?;
    }
    Ok(())
}

fn has_extension(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn jobs(requested: Option<usize>) -> anyhow::Result<usize> {
    match requested {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Camera and tag size for pose output.
struct PoseSetup {
    intrinsics: CameraIntrinsics,
    tag_size: f64,
}

fn detect(a: DetectArgs) -> anyhow::Result<()> {
    let mut cfg = Config::resolve(a.config.as_deref())?;
    if !a.grid.is_empty() {
        cfg.families = a.grid.iter().map(|&n| n.into()).collect();
    }
    if a.intrinsics.is_some() {
        cfg.intrinsics = a.intrinsics.clone();
    }
    if a.tag_size.is_some() {
        cfg.tag_size = a.tag_size;
    }
    if a.debug_dir.is_some() {
        cfg.debug_dir = a.debug_dir.clone();
    }
    cfg.verbosity = cfg.verbosity.max(a.verbose);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let families = cfg.family_list()?;

    let pose = match (&cfg.intrinsics, cfg.tag_size) {
        (Some(path), Some(tag_size)) => {
            let intrinsics: CameraIntrinsics = read_json(path)?;
            intrinsics.validate()?;
            Some(PoseSetup {
                intrinsics,
                tag_size,
            })
        }
        (Some(_), None) => return Err(usage("--intrinsics needs --tag-size")),
        (None, Some(_)) => return Err(usage("--tag-size needs --intrinsics")),
        (None, None) => None,
    };
    let layouts: Vec<CanonicalLayout> = match &pose {
        Some(p) => families
            .iter()
            .map(|f| CanonicalLayout::new(f, p.tag_size, &Default::default()))
            .collect(),
        None => Vec::new(),
    };
    if let Some(dir) = &cfg.debug_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let process = |path: &PathBuf| -> anyhow::Result<(Vec<DetectionRecord>, Vec<String>)> {
        let img = load_gray(path)?;
        let frame = path.to_string_lossy();
        let out = match topotag::decoder::run_pipeline(
            &img,
            &families,
            &cfg.segmentation,
            &cfg.filter,
            &cfg.decode,
        ) {
            Ok(out) => out,
            // smaller than one threshold block: nothing to find
            Err(topotag::Error::ImageTooSmall { .. }) => return Ok((Vec::new(), Vec::new())),
            Err(e) => return Err(e.into()),
        };
        if let Some(dir) = &cfg.debug_dir {
            debug::dump(dir, path, &img, &out)?;
        }
        let mut notes: Vec<String> = out
            .diagnostics
            .iter()
            .map(|d| {
                format!(
                    "{frame}: {}x{0} region {}: {}",
                    d.grid_n, d.root_region, d.reason
                )
            })
            .collect();
        let mut records = Vec::new();
        for det in &out.detections {
            let est = match &pose {
                Some(p) => {
                    let fi = families
                        .iter()
                        .position(|f| f.grid_n() == det.id.grid_n)
                        .expect("detected family is configured");
                    match estimate_pose(det, &layouts[fi], &p.intrinsics) {
                        Ok(e) => Some(e),
                        Err(e) => {
                            notes.push(format!("{frame}: id {}: no pose: {e}", det.id.value));
                            None
                        }
                    }
                }
                None => None,
            };
            records.push(DetectionRecord::new(&frame, det, est.as_ref()));
        }
        Ok((records, notes))
    };

    let stdout = std::io::stdout();
    let mut failures = 0usize;
    pool::ordered_map(
        &a.images,
        jobs(a.jobs)?,
        process,
        |path, result| match result {
            Ok((records, notes)) => {
                let mut out = stdout.lock();
                for r in records {
                    let line = serde_json::to_string(&r).expect("records serialize");
                    if writeln!(out, "{line}").is_err() {
                        failures += 1;
                    }
                }
                let _ = out.flush();
                if cfg.verbosity > 0 {
                    notes.iter().for_each(|n| eprintln!("{n}"));
                }
            }
            Err(e) => {
                failures += 1;
                let msg = describe(&e);
                let name = path.to_string_lossy();
                if msg.contains(name.as_ref()) {
                    eprintln!("error: {msg}");
                } else {
                    eprintln!("error: {name}: {msg}");
                }
            }
        },
    );
    if failures > 0 {
        bail!("{failures} of {} images failed", a.images.len());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut scene: SynthScene = read_json(&a.scene)?;
    if let Some(seed) = a.seed {
        scene.seed = seed;
    }
    let (img, gt) = render_scene(&scene)?;
    save_gray(&img, &a.output)?;
    if let Some(path) = &a.gt {
        write_json(path, &gt)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let mut spec: SweepSpec = read_json(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let indices: Vec<usize> = (0..spec.len()).collect();
    let render = |&i: &usize| -> anyhow::Result<FrameTruth> {
        let scene = spec.scene(i).expect("index in range");
        let (img, gt) = render_scene(&scene).with_context(|| format!("scene {i}"))?;
        let name = format!("frame_{i:06}.png");
        save_gray(&img, a.out_dir.join(&name))?;
        write_json(&a.out_dir.join(format!("frame_{i:06}.gt.json")), &gt)?;
        write_json(&a.out_dir.join(format!("frame_{i:06}.scene.json")), &scene)?;
        Ok(FrameTruth {
            image: name,
            polygon: truth_polygon(&gt.vertex_pixels),
            grid_n: Some(gt.grid_n),
            id: Some(gt.id),
            pose: Some(gt.pose),
            group: Some(format!("cell_{:06}", spec.cell(i))),
        })
    };
    let mut frames = Vec::with_capacity(indices.len());
    let mut first_error = None;
    pool::ordered_map(&indices, jobs(a.jobs)?, render, |_, r| match r {
        Ok(t) => frames.push(t),
        Err(e) => {
            first_error.get_or_insert(e);
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    write_json(&a.out_dir.join("manifest.json"), &Manifest::new(frames))?;
    write_json(&a.out_dir.join("intrinsics.json"), &spec.base.intrinsics)?;
    eprintln!("wrote {} frames to {}", spec.len(), a.out_dir.display());
    Ok(())
}

/// Canonical form of `p`, resolved against `base` when relative; the joined
/// path as is when it does not exist.
fn frame_key(base: &Path, p: &str) -> String {
    let joined = base.join(p);
    joined
        .canonicalize()
        .unwrap_or(joined)
        .to_string_lossy()
        .into_owned()
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut manifest = Manifest::load(&a.manifest)?;
    let mut dets = read_detections(&a.detections)?;
    // manifest paths are relative to the manifest, detection frames to the working directory
    let manifest_dir = a.manifest.parent().unwrap_or(Path::new(""));
    for t in &mut manifest.frames {
        t.image = frame_key(manifest_dir, &t.image);
    }
    for d in &mut dets {
        d.frame = frame_key(Path::new(""), &d.frame);
    }
    let report = evaluate(&manifest, &dets)?;
    write_json(&a.report, &report)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, report_csv(&report))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    eprintln!(
        "tp {} fp {} fn {}  recall {}  precision {}",
        report.counts.tp,
        report.counts.fp,
        report.counts.fn_,
        pct(report.recall),
        pct(report.precision)
    );
    Ok(())
}

fn run_selftest(a: SelftestArgs) -> anyhow::Result<()> {
    let mut opts = SelftestOptions {
        threads: jobs(a.jobs)?,
        ..Default::default()
    };
    if let Some(dir) = a.fp_corpus {
        opts.fp_corpus = dir;
    }
    let print = |r: &selftest::CriterionResult| println!("{r}");
    let results = if a.only.is_empty() {
        selftest::run_all(&opts, print)
    } else {
        let mut out = Vec::new();
        for id in a.only {
            let r = selftest::run(id, &opts).ok_or_else(|| usage(format!("no criterion {id}")))?;
            print(&r);
            out.push(r);
        }
        out
    };
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "selftest: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        bail!("{failed} criteria failed");
    }
    Ok(())
}
