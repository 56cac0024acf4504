//! The `pcdiff` command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! abort. Every artifact-producing command writes a manifest next to
//! its output with the resolved configuration, seeds and input hashes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::chamfer::{global_cd, per_class_cd};
use crate::checkpoint::Checkpoint;
use crate::cloud::{generate_synthetic, load_dataset, random_tags, save_dataset, save_ply, split_dataset, Dataset, LabeledPointCloud, ShapeFamily, PALETTE};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::build_report;
use crate::noising::{DiffusedCloud, Mode};
use crate::sample::{prior_latent, reconstruct, sample_guided, sample_unguided, LabelSpec, SamplerConfig, SamplerVariant};
use crate::train::{log_line, Trainer, LOG_HEADER};

#[derive(Parser, Debug)]
#[command(name = "pcdiff", version, about = "Label-conditioned point-cloud diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Train a guided or unguided model.
    Train(TrainArgs),
    /// Generate clouds from a checkpoint.
    Sample(SampleArgs),
    /// Encode and regenerate a dataset, reporting Chamfer distances x1e2.
    Reconstruct(ReconArgs),
    /// Compare generated and reference sets.
    Eval(EvalArgs),
    /// Convert an LPCD dataset to PLY files.
    ExportPly(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// barbell, chair or ring:K
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = crate::cloud::DEFAULT_POINTS)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also tag shapes train/test with this train fraction.
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, log and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Points per cloud.
    #[arg(long, default_value_t = crate::cloud::DEFAULT_POINTS)]
    n: usize,
    /// Clouds to generate.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Comma ratios (e.g. 0.5,0.5) or a file of per-point labels. Required in guided mode.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sampler: Option<String>,
    /// Take the latent from this dataset's shapes (mean code) instead of the prior.
    #[arg(long)]
    encode: Option<PathBuf>,
    /// Write one LPCD per timestep with suffix `_t{t}`.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    ply: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sampler: Option<String>,
    /// Annotation level shown in the row label.
    #[arg(long, default_value_t = 1)]
    level: u8,
    /// Only the first N shapes.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// LPCD file or directory of LPCD files.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_JSD_RESOLUTION)]
    grid: usize,
    /// Key-value report path; the text table goes to stdout and `<out>.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory (one file per shape) or a `.ply` path with `--index`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    index: Option<usize>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("PCDIFF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Reconstruct(a) => recon(a),
        Command::Eval(a) => eval(a),
        Command::ExportPly(a) => export(a),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn write_manifest(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = format!("# pcdiff {} {name}\n{body}", env!("CARGO_PKG_VERSION"));
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let family: ShapeFamily = a.family.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
    if a.count == 0 || a.points == 0 {
        return Err(Error::Usage("--count and --points must be positive".into()));
    }
    let shapes = (0..a.count as u64)
        .map(|i| generate_synthetic(family, a.points, a.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(shapes, family.num_classes())?;
    if let Some(r) = a.split_ratio {
        let tags = random_tags(ds.len(), r, a.seed).map_err(|e| Error::Usage(e.to_string()))?;
        ds = ds.with_tags(tags)?;
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&a.out, &ds)?;
    let body = format!(
        "command = synth\nfamily = {family}\ncount = {}\npoints = {}\nseed = {}\nsplit_ratio = {}\noutput_sha256 = {}\n",
        a.count,
        a.points,
        a.seed,
        a.split_ratio.map_or("none".into(), |r| r.to_string()),
        file_hash(&a.out)?
    );
    let name = format!("{}.manifest", a.out.file_name().and_then(|s| s.to_str()).unwrap_or("synth"));
    write_manifest(&parent_dir(&a.out), &name, &body)?;
    println!("wrote {} shapes ({} points, K = {}) to {}", ds.len(), a.points, ds.num_classes, a.out.display());
    Ok(())
}

/// Shapes used for training under the configured split, each normalized.
fn training_shapes(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<LabeledPointCloud>> {
    let train = match cfg.split {
        None => ds.clone(),
        Some(mode) => split_dataset(ds, mode, cfg.split_ratio, cfg.train.seed)?.0,
    };
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    Ok(train.shapes.iter().map(|s| s.normalize().cloud).collect())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.config {
        cfg.apply_file(p)?;
    }
    if let Some(m) = &a.mode {
        cfg.set("mode", m)?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.train.max_steps = s;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;

    let ds = load_dataset(&a.data)?;
    let data = training_shapes(&ds, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let log_path = a.out.join("metrics.log");
    let (mut trainer, mut log) = match &a.resume {
        None => {
            let mut log = fs::File::create(&log_path)?;
            writeln!(log, "{LOG_HEADER}")?;
            (Trainer::new(cfg.train.clone(), ds.num_classes)?, log)
        }
        Some(p) => {
            let log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
            (Trainer::resume(cfg.train.clone(), Checkpoint::load(p)?)?, log)
        }
    };
    if trainer.num_classes() != ds.num_classes {
        return Err(Error::invalid(format!(
            "checkpoint has K = {} but the dataset has K = {}",
            trainer.num_classes(),
            ds.num_classes
        )));
    }
    eprintln!(
        "training {} on {} shapes, {} parameters, steps {}..{}",
        cfg.train.mode,
        data.len(),
        trainer.model().num_parameters(),
        trainer.step(),
        cfg.train.max_steps
    );
    let out = a.out.clone();
    let result = trainer.fit(&data, |tr, b| {
        writeln!(log, "{}", log_line(tr.step(), b))?;
        if tr.step() % 100 == 0 {
            eprintln!("step {} total {:.5} ema {:.5}", tr.step(), b.total, tr.loss_ema().unwrap_or(f64::NAN));
        }
        if tr.checkpoint_due() {
            let ck = tr.checkpoint();
            ck.save(out.join(format!("step_{:06}", tr.step())))?;
            ck.save(out.join("last"))?;
        }
        Ok(())
    });
    log.flush()?;
    result?;
    if trainer.step() == 0 || !out.join("last").exists() {
        trainer.checkpoint().save(out.join("last"))?;
    }
    let body = format!(
        "command = train\ndata = {}\ndata_sha256 = {}\nresume = {}\n{}checkpoint_sha256 = {}\n",
        a.data.display(),
        file_hash(&a.data)?,
        a.resume.as_ref().map_or("none".into(), |p| p.display().to_string()),
        cfg.to_text(),
        file_hash(&out.join("last"))?
    );
    write_manifest(&out, "manifest.txt", &body)?;
    eprintln!("done at step {}; checkpoint {}", trainer.step(), out.join("last").display());
    Ok(())
}

fn label_spec(arg: &str) -> Result<LabelSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let labels = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|w| !w.is_empty())
            .map(|w| w.parse::<u32>().map_err(|_| Error::invalid(format!("bad label {w:?} in {}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        return Ok(LabelSpec::Explicit(labels));
    }
    arg.parse().map_err(|e: Error| Error::Usage(e.to_string()))
}

fn sampler_variant(arg: &Option<String>) -> Result<SamplerVariant> {
    arg.as_deref()
        .map_or(Ok(SamplerVariant::default()), str::parse)
        .map_err(|e: Error| Error::Usage(e.to_string()))
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    parent_dir(path).join(format!("{stem}{suffix}.{ext}"))
}

fn sample(a: SampleArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let variant = sampler_variant(&a.sampler)?;
    if a.n == 0 || a.count == 0 {
        return Err(Error::Usage("--n and --count must be positive".into()));
    }
    let spec = match (ck.mode, &a.labels) {
        (Mode::Guided, None) => return Err(Error::Usage("guided sampling requires --labels".into())),
        (Mode::Guided, Some(l)) => Some(label_spec(l)?),
        (Mode::Unguided, _) => None,
    };
    let schedule = ck.schedule.build()?;
    let k = ck.num_classes;
    let dim = ck.model.config().latent_dim;
    let codes: Vec<Vec<f64>> = match &a.encode {
        None => (0..a.count as u64).map(|i| prior_latent(dim, a.seed.wrapping_add(i))).collect(),
        Some(p) => {
            let ds = load_dataset(p)?;
            if ds.is_empty() {
                return Err(Error::invalid("--encode dataset is empty"));
            }
            (0..a.count)
                .map(|i| {
                    let c = ds.shapes[i % ds.len()].normalize().cloud;
                    let state = DiffusedCloud::from_cloud(&c, ck.mode, ck.encoding);
                    Ok(ck.model.encode(&state.state, None)?.mu)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut clouds = Vec::with_capacity(a.count);
    let mut traces = Vec::new();
    for (i, z) in codes.iter().enumerate() {
        let sc = SamplerConfig {
            variant,
            seed: a.seed.wrapping_add(i as u64),
            trace: a.trace,
        };
        let s = match &spec {
            Some(spec) => sample_guided(&ck.model, &schedule, z, a.n, k, spec, ck.encoding, &sc)?,
            None => sample_unguided(&ck.model, &schedule, z, a.n, k, ck.encoding, &sc)?,
        };
        clouds.push(s.cloud);
        traces.push(s.trace);
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&a.out, &Dataset::new(clouds.clone(), k)?.with_category("generated", 1))?;
    if a.trace {
        for t in 0..=schedule.num_steps() {
            let step: Vec<LabeledPointCloud> = traces
                .iter()
                .map(|tr| tr[schedule.num_steps() - t].to_cloud(k, ck.encoding))
                .collect::<Result<_>>()?;
            save_dataset(with_suffix(&a.out, &format!("_t{t}"), "lpcd"), &Dataset::new(step, k)?)?;
        }
    }
    if a.ply {
        for (i, c) in clouds.iter().enumerate() {
            save_ply(c, with_suffix(&a.out, &format!("_{i}"), "ply"), &PALETTE)?;
        }
    }
    let body = format!(
        "command = sample\ncheckpoint = {}\ncheckpoint_sha256 = {}\nmode = {}\nsampler = {variant}\nseed = {}\nn = {}\ncount = {}\nlabels = {}\nencode = {}\ntrace = {}\noutput_sha256 = {}\n",
        a.ckpt.display(),
        file_hash(&a.ckpt)?,
        ck.mode,
        a.seed,
        a.n,
        a.count,
        a.labels.as_deref().unwrap_or("none"),
        a.encode.as_ref().map_or("prior".into(), |p| p.display().to_string()),
        a.trace,
        file_hash(&a.out)?
    );
    let name = format!("{}.manifest", a.out.file_name().and_then(|s| s.to_str()).unwrap_or("sample"));
    write_manifest(&parent_dir(&a.out), &name, &body)?;
    let counts = clouds[0].label_counts();
    println!("wrote {} clouds to {}; first cloud label counts {counts:?}", clouds.len(), a.out.display());
    Ok(())
}

/// Mean global and per-class Chamfer distance of reconstructions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconScores {
    pub global_cd: f64,
    pub per_class_cd: f64,
    pub shapes: usize,
}

/// Reconstructs every shape (normalized) and averages both distances.
/// Unguided reconstructions that share no class with their input score
/// `+inf` on the per-class distance.
pub fn reconstruction_scores(ck: &Checkpoint, shapes: &[LabeledPointCloud], cfg: &SamplerConfig) -> Result<ReconScores> {
    let schedule = ck.schedule.build()?;
    let (mut g, mut p) = (0.0, 0.0);
    for (i, s) in shapes.iter().enumerate() {
        let x0 = s.normalize().cloud;
        let sc = SamplerConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..*cfg
        };
        let out = reconstruct(&ck.model, &schedule, &x0, ck.mode, ck.encoding, &sc)?.cloud;
        g += global_cd(out.points(), x0.points())?;
        p += match per_class_cd(out.points(), out.labels(), x0.points(), x0.labels()) {
            Ok(r) => r.value,
            Err(Error::NoSharedClass { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
    }
    let n = shapes.len() as f64;
    Ok(ReconScores {
        global_cd: g / n,
        per_class_cd: p / n,
        shapes: shapes.len(),
    })
}

fn recon(a: ReconArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let variant = sampler_variant(&a.sampler)?;
    let shapes = &ds.shapes[..a.limit.unwrap_or(ds.len()).min(ds.len())];
    if shapes.is_empty() {
        return Err(Error::invalid("no shapes to reconstruct"));
    }
    let cfg = SamplerConfig {
        variant,
        seed: a.seed,
        trace: false,
    };
    let scores = reconstruction_scores(&ck, shapes, &cfg)?;
    let row = format!("{}{}", if ck.mode == Mode::Guided { "G" } else { "U" }, a.level);
    let mut table = String::new();
    let _ = writeln!(table, "# reconstruction Chamfer distance x1e2 (sampler {variant}, seed {})", a.seed);
    let _ = writeln!(table, "{:<6} {:<16} {:>8} {:>14} {:>14}", "row", "category", "shapes", "global_cd", "per_class_cd");
    let _ = writeln!(
        table,
        "{:<6} {:<16} {:>8} {:>14.2} {:>14.2}",
        row,
        ds.category,
        scores.shapes,
        scores.global_cd * 1e2,
        scores.per_class_cd * 1e2
    );
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, &table)?;
    print!("{table}");
    let body = format!(
        "command = reconstruct\ncheckpoint = {}\ncheckpoint_sha256 = {}\ndata = {}\ndata_sha256 = {}\nsampler = {variant}\nseed = {}\nshapes = {}\n",
        a.ckpt.display(),
        file_hash(&a.ckpt)?,
        a.data.display(),
        file_hash(&a.data)?,
        a.seed,
        scores.shapes
    );
    let name = format!("{}.manifest", a.out.file_name().and_then(|s| s.to_str()).unwrap_or("recon"));
    write_manifest(&parent_dir(&a.out), &name, &body)
}

/// Every shape of an LPCD file, or of every `.lpcd` file in a directory in
/// name order.
pub fn load_set(path: &Path) -> Result<Vec<LabeledPointCloud>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "lpcd"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_dataset(&f)?.shapes);
        }
        if out.is_empty() {
            return Err(Error::invalid(format!("no .lpcd files in {}", path.display())));
        }
        Ok(out)
    } else {
        Ok(load_dataset(path)?.shapes)
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.grid < 2 {
        return Err(Error::Usage("--grid must be at least 2".into()));
    }
    let gen = load_set(&a.gen)?;
    let reference = load_set(&a.reference)?;
    let report = build_report(&gen, &reference, a.grid)?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(out, report.to_key_values())?;
        fs::write(with_suffix(out, "", "txt"), report.to_text())?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    match a.index {
        Some(i) => {
            let shape = ds
                .shapes
                .get(i)
                .ok_or_else(|| Error::Usage(format!("--index {i} out of range ({} shapes)", ds.len())))?;
            if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            save_ply(shape, &a.out, &PALETTE)?;
        }
        None => {
            fs::create_dir_all(&a.out)?;
            for (i, s) in ds.shapes.iter().enumerate() {
                save_ply(s, a.out.join(format!("{}_{i:04}.ply", ds.category)), &PALETTE)?;
            }
        }
    }
    println!("exported {} from {}", a.index.map_or(format!("{} shapes", ds.len()), |i| format!("shape {i}")), a.input.display());
    Ok(())
}
