//! `vmseg`: generate synthetic crack data, train and evaluate VM-UNet,
//! segment images, tabulate FLOPs and run the self-check suites.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use vmseg_core::complexity::{flops_csv, flops_table, Arch, CONVENTION, DEFAULT_RESOLUTIONS};
use vmseg_core::data::{
    generate_synthetic, holdout, load_image, load_root, save_mask_png, split, write_dataset,
    SynthConfig, IMAGES_DIR,
};
use vmseg_core::kv::KvMap;
use vmseg_core::seed::{self, Stream};
use vmseg_core::tensor::Scalar;
use vmseg_core::train::{evaluate, predict_mask, train, Precision, TrainConfig};
use vmseg_core::verify::{Suite, VerifyOptions};
use vmseg_core::vmunet::{VmUnet, VmUnetConfig};

/// File names inside a training output directory.
const CHECKPOINT_FILE: &str = "model.vmck";
const LOG_FILE: &str = "train_log.csv";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "vmseg", version, about = "Selective-scan crack segmentation")]
struct Cli {
    /// key=value config file; command-line flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true, env = "VMSEG_SEED")]
    seed: Option<u64>,
    /// Worker threads (1 = fully sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic crack dataset (images/, masks/, gen_config.txt).
    Generate(GenerateArgs),
    /// Train a VM-UNet on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset; writes per-image DS/IoU as CSV.
    Eval(EvalArgs),
    /// Predict 8-bit {0,255} mask PNGs for images.
    Segment(SegmentArgs),
    /// Tabulate analytic FLOPs per architecture and resolution.
    Flops(FlopsArgs),
    /// Run the self-check suites; exits nonzero on any failure.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Crack half-width range in pixels, `lo,hi` or a single value.
    #[arg(long)]
    width: Option<String>,
    /// Cracks per image, `lo,hi` or a single value.
    #[arg(long)]
    cracks: Option<String>,
    #[arg(long)]
    texture: Option<f32>,
    #[arg(long)]
    noise: Option<f32>,
    #[arg(long)]
    background: Option<String>,
    #[arg(long)]
    crack_level: Option<String>,
    /// Partition sizes, e.g. `160,20,20`, written to train/, val/, test/.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation dataset root; without it `val_fraction` of the data is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for the checkpoint, log and effective config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model preset (tiny | full); individual model keys override it.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Gradient-norm cap, 0 disables clipping.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    state_size: Option<usize>,
    #[arg(long)]
    scan_mode: Option<String>,
    #[arg(long)]
    sharing: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Metrics CSV path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A PNG, a directory of PNGs, or a dataset root with images/.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    /// Comma-separated: vmunet, vit-core, cnn-core, hybrid-core.
    #[arg(long)]
    arch: Option<String>,
    /// Comma-separated square input sizes.
    #[arg(long)]
    resolutions: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run (repeatable); all when absent.
    #[arg(long = "suite")]
    suites: Vec<Suite>,
    /// Random instances for the sampled suites.
    #[arg(long)]
    instances: Option<usize>,
}

/// Config file entries overlaid with the flags that were given.
struct Layered {
    kv: KvMap,
}

impl Layered {
    fn new(file: Option<&Path>, known: &[&str]) -> Result<Self> {
        let kv = match file {
            Some(p) => KvMap::load(p)?,
            None => KvMap::new(),
        };
        kv.reject_unknown(known)?;
        Ok(Self { kv })
    }

    fn flag(&mut self, key: &str, value: Option<impl ToString>) -> &mut Self {
        if let Some(v) = value {
            self.kv.set(key, v.to_string());
        }
        self
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        match self.kv.get(key) {
            Some(p) => Ok(PathBuf::from(p)),
            None => bail!(
                "missing `{key}` (pass --{} or set it in the config file)",
                key.replace('_', "-")
            ),
        }
    }

    fn echo(&self, cmd: &str) {
        info!("effective {cmd} config:\n{}", self.kv.to_text().trim_end());
    }
}

fn keys<'a>(groups: &[&[&'a str]]) -> Vec<&'a str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} `{v}`: {e}"))
        })
        .collect()
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let known = keys(&[SynthConfig::KEYS, &["out", "split"]]);
    let mut l = Layered::new(cli.config.as_deref(), &known)?;
    l.flag("out", a.out.as_ref().map(|p| p.display()))
        .flag("count", a.count)
        .flag("size", a.size)
        .flag("width", a.width.as_ref())
        .flag("cracks", a.cracks.as_ref())
        .flag("texture", a.texture)
        .flag("noise", a.noise)
        .flag("background", a.background.as_ref())
        .flag("crack_level", a.crack_level.as_ref())
        .flag("split", a.split.as_ref())
        .flag("seed", cli.seed);
    l.echo("generate");
    let out = l.path("out")?;
    let cfg = SynthConfig::from_kv(&l.kv, SynthConfig::default())?;
    let samples = generate_synthetic(&cfg)?;
    let mut record = cfg.to_kv();
    match l.kv.get("split") {
        None => {
            write_dataset(&out, &samples, Some(&record))?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Some(spec) => {
            let sizes: Vec<usize> = parse_list(spec, "split size")?;
            let names: &[&str] = match sizes.len() {
                2 => &["train", "test"],
                3 => &["train", "val", "test"],
                n => bail!("--split takes 2 or 3 sizes, got {n}"),
            };
            record.set("split", spec);
            for (name, part) in names.iter().zip(split(&samples, &sizes, cfg.seed)?) {
                let dir = out.join(name);
                write_dataset(&dir, &part, Some(&record))?;
                println!("wrote {} samples to {}", part.len(), dir.display());
            }
        }
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let known = keys(&[
        TrainConfig::KEYS,
        VmUnetConfig::KEYS,
        &["data", "val", "out", "preset"],
    ]);
    let mut l = Layered::new(cli.config.as_deref(), &known)?;
    l.flag("data", a.data.as_ref().map(|p| p.display()))
        .flag("val", a.val.as_ref().map(|p| p.display()))
        .flag("out", a.out.as_ref().map(|p| p.display()))
        .flag("preset", a.preset.as_ref())
        .flag("lr", a.lr)
        .flag("batch_size", a.batch_size)
        .flag("epochs", a.epochs)
        .flag("weight_decay", a.weight_decay)
        .flag("clip", a.clip)
        .flag("precision", a.precision.as_ref())
        .flag("val_fraction", a.val_fraction)
        .flag("augment", a.augment)
        .flag("embed_dim", a.embed_dim)
        .flag("state_size", a.state_size)
        .flag("scan_mode", a.scan_mode.as_ref())
        .flag("sharing", a.sharing.as_ref())
        .flag("seed", cli.seed);

    let data_dir = l.path("data")?;
    let out = l.path("out")?;
    let data = load_root(&data_dir)?;
    if data.is_empty() {
        bail!("no image/mask pairs under {}", data_dir.display());
    }
    let size = data[0].size();
    // the model input follows the data unless given explicitly
    let preset =
        VmUnetConfig::preset(l.kv.get("preset").unwrap_or("tiny"))?.with_input(size.0, size.1);
    let model_cfg = VmUnetConfig::from_kv(&l.kv, preset)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut tc = TrainConfig::from_kv(&l.kv, TrainConfig::default())?;
    tc.checkpoint = Some(out.join(CHECKPOINT_FILE));
    tc.log = Some(out.join(LOG_FILE));

    let (train_set, val_set) = match l.kv.get("val") {
        Some(v) => (data, load_root(Path::new(v))?),
        None => holdout(&data, tc.val_fraction, tc.seed)?,
    };
    let mut effective = l.kv.clone();
    effective.merge(&model_cfg.to_kv());
    effective.merge(&tc.to_kv());
    info!(
        "effective train config:\n{}",
        effective.to_text().trim_end()
    );
    fs::write(out.join(CONFIG_FILE), effective.to_text())?;
    info!(
        "{} training / {} validation samples",
        train_set.len(),
        val_set.len()
    );

    let report = |r: &vmseg_core::train::EpochLog| {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "epoch {:>3}  loss {:.5}  val mDS {}  mIoU {}",
            r.epoch,
            r.train_loss,
            f(r.val_mds),
            f(r.val_miou)
        );
    };
    let best = match tc.precision {
        Precision::F32 => run_training::<f32>(model_cfg, &train_set, &val_set, &tc, report)?,
        Precision::F64 => run_training::<f64>(model_cfg, &train_set, &val_set, &tc, report)?,
    };
    println!(
        "best epoch {best}; checkpoint {}",
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn run_training<T: Scalar>(
    cfg: VmUnetConfig,
    train_set: &[vmseg_core::data::SegSample],
    val_set: &[vmseg_core::data::SegSample],
    tc: &TrainConfig,
    report: impl FnMut(&vmseg_core::train::EpochLog),
) -> Result<usize> {
    let mut model = VmUnet::<T>::new(cfg, &mut seed::rng(tc.seed, Stream::Init, 0))?;
    info!("model has {} parameters", model.num_params());
    let out = train(&mut model, train_set, val_set, tc, report)?;
    Ok(out.best_epoch)
}

fn load_model(path: &Path) -> Result<VmUnet<f32>> {
    VmUnet::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut l = Layered::new(cli.config.as_deref(), &["checkpoint", "data", "out"])?;
    l.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()))
        .flag("data", a.data.as_ref().map(|p| p.display()))
        .flag("out", a.out.as_ref().map(|p| p.display()));
    l.echo("eval");
    let model = load_model(&l.path("checkpoint")?)?;
    let data = load_root(&l.path("data")?)?;
    let report = evaluate(&model, &data)?;
    match l.kv.get("out") {
        Some(p) => {
            fs::write(p, report.to_csv())?;
            println!(
                "mDS {:.6}  mIoU {:.6}  ({} images) -> {p}",
                report.mds,
                report.miou,
                report.images.len()
            );
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

/// PNG files to segment: a single file, or every `.png` of a directory
/// (its `images/` subdirectory when present), sorted.
fn segment_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let dir = if input.join(IMAGES_DIR).is_dir() {
        input.join(IMAGES_DIR)
    } else {
        input.to_path_buf()
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn cmd_segment(cli: &Cli, a: &SegmentArgs) -> Result<()> {
    let mut l = Layered::new(cli.config.as_deref(), &["checkpoint", "input", "out"])?;
    l.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()))
        .flag("input", a.input.as_ref().map(|p| p.display()))
        .flag("out", a.out.as_ref().map(|p| p.display()));
    l.echo("segment");
    let model = load_model(&l.path("checkpoint")?)?;
    let out = l.path("out")?;
    let files = segment_inputs(&l.path("input")?)?;
    if files.is_empty() {
        bail!("no PNG images found");
    }
    fs::create_dir_all(&out)?;
    for f in &files {
        let image = load_image(f)?;
        let mask =
            predict_mask(&model, &image).with_context(|| format!("segmenting {}", f.display()))?;
        save_mask_png(&out.join(f.file_name().expect("file path")), &mask)?;
    }
    println!("wrote {} masks to {}", files.len(), out.display());
    Ok(())
}

fn cmd_flops(cli: &Cli, a: &FlopsArgs) -> Result<()> {
    let mut l = Layered::new(cli.config.as_deref(), &["arch", "resolutions", "out"])?;
    l.flag("arch", a.arch.as_ref())
        .flag("resolutions", a.resolutions.as_ref())
        .flag("out", a.out.as_ref().map(|p| p.display()));
    let archs: Vec<Arch> = match l.kv.get("arch") {
        Some(s) => s
            .split(',')
            .map(|n| n.trim().parse())
            .collect::<Result<_, _>>()?,
        None => Arch::ALL.to_vec(),
    };
    let res: Vec<usize> = match l.kv.get("resolutions") {
        Some(s) => parse_list(s, "resolution")?,
        None => DEFAULT_RESOLUTIONS.to_vec(),
    };
    let csv = flops_csv(&flops_table(&archs, &res)?);
    eprintln!("convention: {CONVENTION}");
    match l.kv.get("out") {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions {
        instances: a.instances.unwrap_or(VerifyOptions::default().instances),
        seed: cli.seed.unwrap_or(0),
    };
    let suites = if a.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suites.clone()
    };
    let mut ok = true;
    for s in suites {
        let checks = s.run(&opts)?;
        for c in &checks {
            println!("{c}");
        }
        let failed = checks.iter().filter(|c| !c.passed()).count();
        println!(
            "suite {s}: {}",
            if failed == 0 {
                "PASS".to_string()
            } else {
                format!("FAIL ({failed} checks)")
            }
        );
        ok &= failed == 0;
    }
    Ok(ok)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.cmd {
        Cmd::Generate(a) => cmd_generate(cli, a)?,
        Cmd::Train(a) => cmd_train(cli, a)?,
        Cmd::Eval(a) => cmd_eval(cli, a)?,
        Cmd::Segment(a) => cmd_segment(cli, a)?,
        Cmd::Flops(a) => cmd_flops(cli, a)?,
        Cmd::Verify(a) => return cmd_verify(cli, a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
