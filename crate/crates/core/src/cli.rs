//! Batch commands behind the `poselabel` binary.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 domain or validation
//! failure.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotate::{annotate_scene, build_scene_inputs, read_frame_index, write_frame_index, AnnotateError, MocapLog, Rig};
use crate::board::{read_observations, write_observations, BoardError};
use crate::bop_io::{read_scene, stats, validate, write_scene, BopError, DatasetLayout};
use crate::calib::{localize_camera, read_extrinsics, read_tuning_samples, tune_camera, write_extrinsics, TuningGrid, write_tuning_samples, CalibError};
use crate::config::{ConfigError, PipelineConfig};
use crate::mesh_render::{load_mesh, write_ply, MeshError, PlyEncoding, TriMesh};
use crate::synth::{generate_board_session, generate_recording, generate_rig, tuning_samples, SynthError};
use crate::ObjectId;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_DOMAIN: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "poselabel", version, about = "Annotate multi-camera images with 6D poses, masks and boxes from motion capture")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "poselabel.toml")]
    pub config: PathBuf,
    /// Worker threads (default: config value, then all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Random seed for `synth` (default: config value).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Re-tune cameras that are already tuned.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve each camera's pose from tracked board observations.
    Localize,
    /// Refine camera poses against hand-made masks.
    Tune,
    /// Annotate recorded scenes and write the dataset.
    Annotate,
    /// Print dataset statistics.
    Stats,
    /// Check the dataset layout; exits 2 on violations.
    Validate,
    /// Write a synthetic workspace with a ready-to-run config.
    Synth {
        /// Workspace directory (default: the config file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw mask outlines and boxes over the dataset images.
    Overlay,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl fmt::Display) -> Self {
        Self { code: EXIT_IO, message: message.to_string() }
    }

    pub fn domain(message: impl fmt::Display) -> Self {
        Self { code: EXIT_DOMAIN, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Self::io(e),
            ConfigError::Invalid { .. } => Self::domain(e),
        }
    }
}

impl From<BoardError> for CliError {
    fn from(e: BoardError) -> Self {
        match e {
            BoardError::Io { .. } | BoardError::Parse { .. } => Self::io(e),
            _ => Self::domain(e),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        match e {
            MeshError::Parse { .. } | MeshError::UnsupportedFormat { .. } | MeshError::Io { .. } | MeshError::Image { .. } => Self::io(e),
            _ => Self::domain(e),
        }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::File { .. } => Self::io(e),
            CalibError::Board(b) => b.into(),
            CalibError::Mesh(m) => m.into(),
            _ => Self::domain(e),
        }
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        match e {
            AnnotateError::Csv { .. } => Self::io(e),
            AnnotateError::Image(m) => m.into(),
            _ => Self::domain(e),
        }
    }
}

impl From<BopError> for CliError {
    fn from(e: BopError) -> Self {
        match e {
            BopError::Image(m) => m.into(),
            _ => Self::io(e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::domain(e)
    }
}

fn io_at(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

/// Parses `args`, runs the command and returns the exit code. Errors go to
/// stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Synth { out } = &cli.command {
        return cmd_synth(&cli.global, out.as_deref());
    }
    let mut cfg = PipelineConfig::load(&cli.global.config)?;
    if let Some(w) = cli.global.workers {
        cfg.workers = w;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(CliError::domain)?;
    pool.install(|| match &cli.command {
        Command::Localize => cmd_localize(&cfg, &cli.global),
        Command::Tune => cmd_tune(&cfg, &cli.global),
        Command::Annotate => cmd_annotate(&cfg, &cli.global),
        Command::Stats => cmd_stats(&cfg),
        Command::Validate => cmd_validate(&cfg),
        Command::Overlay => cmd_overlay(&cfg, &cli.global),
        Command::Synth { .. } => unreachable!(),
    })
}

fn require_fresh(path: &Path, overwrite: bool) -> Result<(), CliError> {
    let occupied = path.is_file() || fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false);
    if !occupied {
        return Ok(());
    }
    if !overwrite {
        return Err(CliError::domain(format!("{} already exists; pass --overwrite to replace it", path.display())));
    }
    let removed = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
    removed.map_err(|e| io_at(path, e))
}

fn load_meshes(cfg: &PipelineConfig) -> Result<BTreeMap<ObjectId, TriMesh>, CliError> {
    let mut out = BTreeMap::new();
    for (id, path) in cfg.mesh_paths().map_err(CliError::domain)? {
        let loaded = load_mesh(&path, id)?;
        if loaded.dropped_degenerate > 0 {
            log::warn!("{}: dropped {} degenerate triangles", path.display(), loaded.dropped_degenerate);
        }
        out.insert(id, loaded.mesh);
    }
    Ok(out)
}

fn load_rig(cfg: &PipelineConfig) -> Result<Rig, CliError> {
    Ok(Rig { intrinsics: cfg.camera_intrinsics().map_err(CliError::domain)?, extrinsics: read_extrinsics(&cfg.paths.extrinsics)? })
}

pub fn cmd_localize(cfg: &PipelineConfig, flags: &GlobalArgs) -> Result<(), CliError> {
    let dir = &cfg.paths.board_observations;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::io(format!("{}: no observation files", dir.display())));
    }
    let intrinsics = cfg.camera_intrinsics().map_err(CliError::domain)?;
    require_fresh(&cfg.paths.extrinsics, flags.overwrite)?;

    let mut sessions = Vec::new();
    for f in &files {
        sessions.push(read_observations(f)?);
    }
    let results: Vec<_> = sessions
        .par_iter()
        .map(|(cid, obs)| {
            let k = intrinsics.get(cid).ok_or_else(|| format!("no intrinsics for camera {cid}"))?;
            localize_camera(&cfg.board, obs, k).map_err(|e| e.to_string())
        })
        .collect();

    let mut rig = BTreeMap::new();
    let mut failed = 0;
    for ((cid, _), r) in sessions.iter().zip(results) {
        match r {
            Ok(e) => {
                println!("camera {cid}: rms reprojection error {:.4} px", e.rms_reprojection_error);
                rig.insert(*cid, e);
            }
            Err(msg) => {
                eprintln!("camera {cid}: {msg}");
                failed += 1;
            }
        }
    }
    write_extrinsics(&cfg.paths.extrinsics, &rig)?;
    println!("wrote {} camera(s) to {}", rig.len(), cfg.paths.extrinsics.display());
    if failed > 0 {
        return Err(CliError::domain(format!("{failed} camera(s) failed to localize")));
    }
    Ok(())
}

pub fn cmd_tune(cfg: &PipelineConfig, flags: &GlobalArgs) -> Result<(), CliError> {
    let mut rig = read_extrinsics(&cfg.paths.extrinsics)?;
    let samples = read_tuning_samples(&cfg.paths.tuning_samples)?;
    let intrinsics = cfg.camera_intrinsics().map_err(CliError::domain)?;
    let meshes = load_meshes(cfg)?;
    for (cid, list) in &samples {
        let Some(init) = rig.get(cid).copied() else {
            eprintln!("camera {cid}: no extrinsics, skipped");
            continue;
        };
        if init.tuned && !flags.force {
            println!("camera {cid}: already tuned (score {:.4}), skipped; pass --force to re-tune", init.tuning_score.unwrap_or(0.0));
            continue;
        }
        let k = intrinsics.get(cid).ok_or_else(|| CliError::domain(format!("no intrinsics for camera {cid}")))?;
        let start = Instant::now();
        let r = tune_camera(&init, &cfg.tuning.grid, list, &meshes, k, cfg.tuning.iou_threshold)?;
        let verdict = if r.extrinsics.tuned { "accepted" } else { "below threshold, pose unchanged" };
        println!(
            "camera {cid}: best mean IoU {:.4} over {} candidates in {:.1} s, {verdict}",
            r.best.score,
            r.candidates_evaluated,
            start.elapsed().as_secs_f64()
        );
        rig.insert(*cid, r.extrinsics);
    }
    write_extrinsics(&cfg.paths.extrinsics, &rig)?;
    Ok(())
}

pub fn cmd_annotate(cfg: &PipelineConfig, flags: &GlobalArgs) -> Result<(), CliError> {
    let rig = load_rig(cfg)?;
    let meshes = load_meshes(cfg)?;
    let mocap = MocapLog::read_csv(&cfg.paths.mocap_log)?;
    let mut frames = read_frame_index(&cfg.paths.frame_index)?;
    let frames_dir = cfg.paths.frame_index.parent().unwrap_or(Path::new("."));
    for f in &mut frames {
        let p = Path::new(&f.image_path);
        if p.is_relative() {
            f.image_path = frames_dir.join(p).display().to_string();
        }
    }
    let scenes = build_scene_inputs(&frames, &mocap, cfg.annotate.sync_window_s);
    require_fresh(&cfg.paths.output, flags.overwrite)?;
    let layout = DatasetLayout::new(&cfg.paths.output);
    fs::create_dir_all(&layout.root).map_err(|e| io_at(&layout.root, e))?;

    let params = cfg.annotate.params();
    let start = Instant::now();
    let counts: Vec<usize> = scenes
        .par_iter()
        .map(|s| -> Result<usize, CliError> {
            let rec = annotate_scene(&rig, &meshes, s, &params)?;
            write_scene(&rec, &layout)?;
            log::info!("scene {}: {} instances", rec.scene_id, rec.instance_count());
            Ok(rec.instance_count())
        })
        .collect::<Result<_, _>>()?;
    let n: usize = counts.iter().sum();
    let secs = start.elapsed().as_secs_f64();
    println!("{n} instances in {secs:.2} s ({:.1} inst/s)", if secs > 0.0 { n as f64 / secs } else { 0.0 });
    Ok(())
}

pub fn cmd_stats(cfg: &PipelineConfig) -> Result<(), CliError> {
    let s = stats(&DatasetLayout::new(&cfg.paths.output))?;
    print!("{s}");
    match s.seconds_per_instance() {
        Some(spi) => println!("{:.3} s per instance", spi),
        None => println!("no instances"),
    }
    Ok(())
}

pub fn cmd_validate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let report = validate(&DatasetLayout::new(&cfg.paths.output))?;
    for v in &report.violations {
        println!("{v}");
    }
    println!("{} scene(s) checked, {} violation(s)", report.scenes_checked, report.violations.len());
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::domain(format!("{} violation(s)", report.violations.len())))
    }
}

pub fn cmd_synth(flags: &GlobalArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = if flags.config.is_file() {
        PipelineConfig::load(&flags.config)?
    } else {
        let mut c = PipelineConfig::default();
        // A small grid so the generated workspace tunes in seconds.
        c.tuning.grid = TuningGrid { translation_range: 10.0, translation_step: 10.0, rotation_range: 0.25, rotation_step: 0.25, ..TuningGrid::default() };
        c
    };
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => flags.config.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let config_path = dir.join("poselabel.toml");
    require_fresh(&config_path, flags.overwrite)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    let s = &cfg.synth;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rig = generate_rig(&s.rig, &mut rng)?;
    let session = generate_board_session(&rig, &cfg.board, &s.session, &mut rng)?;
    let recording = generate_recording(&rig, &s.scenario, &cfg.annotate.params(), false, &mut rng)?;
    let meshes = s.scenario.meshes();

    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| io_at(p, e));
    for sub in ["board", "meshes", "ground_truth"] {
        mkdir(&dir.join(sub))?;
    }
    for (cid, obs) in &session {
        write_observations(&dir.join("board").join(format!("cam_{cid:02}.json")), *cid, obs)?;
    }
    write_extrinsics(&dir.join("ground_truth").join("extrinsics.json"), &rig.extrinsics)?;
    let mut mesh_paths = BTreeMap::new();
    for (id, m) in &meshes {
        let name = format!("meshes/obj_{id:06}.ply");
        write_ply(&dir.join(&name), m, PlyEncoding::BinaryLittleEndian)?;
        mesh_paths.insert(id.to_string(), PathBuf::from(name));
    }
    recording.mocap.write_csv(&dir.join("mocap.csv"))?;
    write_frame_index(&dir.join("frames.csv"), &recording.frames)?;
    let tuning = tuning_samples(&rig, &recording, &meshes, &s.tuning_scenes);
    write_tuning_samples(&dir.join("tuning"), &tuning)?;

    let mut written = cfg.clone();
    written.paths = Default::default();
    written.intrinsics = rig.intrinsics.iter().map(|(c, k)| (c.to_string(), *k)).collect();
    written.meshes = mesh_paths;
    fs::write(&config_path, written.to_toml()).map_err(|e| io_at(&config_path, e))?;
    println!(
        "synthetic workspace in {}: {} cameras, {} objects, {} frames; run `poselabel --config {} localize`",
        dir.display(),
        rig.extrinsics.len(),
        meshes.len(),
        s.scenario.frames,
        config_path.display()
    );
    Ok(())
}

const PALETTE: [[u8; 3]; 8] = [[230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230]];

/// Loads an 8-bit RGB or gray PNG of the given size as RGB; anything else
/// falls back to a dark gray canvas.
fn background(path: Option<&Path>, width: u32, height: u32) -> Vec<u8> {
    let gray = || vec![40u8; width as usize * height as usize * 3];
    let Some(path) = path.filter(|p| p.is_file()) else { return gray() };
    let Ok((info, data)) = crate::mesh_render::read_png_raw(path) else { return gray() };
    if (info.width, info.height) != (width, height) || info.bit_depth != png::BitDepth::Eight {
        return gray();
    }
    match info.color_type {
        png::ColorType::Rgb => data,
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v]).collect(),
        _ => gray(),
    }
}

fn write_rgb_png(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_at(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| io_at(path, e))?;
    w.write_image_data(data).map_err(|e| io_at(path, e))
}

pub fn cmd_overlay(cfg: &PipelineConfig, flags: &GlobalArgs) -> Result<(), CliError> {
    let layout = DatasetLayout::new(&cfg.paths.output);
    let out = &cfg.paths.overlay;
    require_fresh(out, flags.overwrite)?;
    fs::create_dir_all(out).map_err(|e| io_at(out, e))?;
    let ids = layout.scene_ids()?;
    let written: Vec<usize> = ids
        .par_iter()
        .map(|&sid| -> Result<usize, CliError> {
            let scene = read_scene(&layout, sid)?;
            let dir = layout.scene_dir(sid);
            let mut n = 0;
            for v in scene.views.iter().filter(|v| !v.annotations.is_empty()) {
                let (w, h) = (v.intrinsics.width, v.intrinsics.height);
                let rgb_copy = ["png", "jpg"].iter().map(|e| dir.join("rgb").join(format!("{:06}.{e}", v.image_id))).find(|p| p.is_file());
                let mut img = background(rgb_copy.as_deref(), w, h);
                let mut paint = |x: u32, y: u32, c: [u8; 3]| {
                    let i = (y as usize * w as usize + x as usize) * 3;
                    img[i..i + 3].copy_from_slice(&c);
                };
                for a in &v.annotations {
                    let c = PALETTE[a.object_id as usize % PALETTE.len()];
                    for (x, y) in a.mask.iter_set() {
                        let edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h || !a.mask.get(x - 1, y) || !a.mask.get(x + 1, y) || !a.mask.get(x, y - 1) || !a.mask.get(x, y + 1);
                        if edge {
                            paint(x, y, c);
                        }
                    }
                    let b = a.bbox;
                    for x in b.x..b.x + b.w {
                        paint(x, b.y, [255, 255, 255]);
                        paint(x, b.y + b.h - 1, [255, 255, 255]);
                    }
                    for y in b.y..b.y + b.h {
                        paint(b.x, y, [255, 255, 255]);
                        paint(b.x + b.w - 1, y, [255, 255, 255]);
                    }
                }
                write_rgb_png(&out.join(format!("{sid:06}_{:06}.png", v.image_id)), w, h, &img)?;
                n += 1;
            }
            Ok(n)
        })
        .collect::<Result<_, _>>()?;
    println!("{} overlay image(s) in {}", written.iter().sum::<usize>(), out.display());
    Ok(())
}
