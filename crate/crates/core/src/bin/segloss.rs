use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use segloss::augment::{augment_case, AugmentConfig};
use segloss::edt::{edt, signed_edt};
use segloss::gradcheck::{gradcheck_suite, DEFAULT_STEP};
use segloss::io::{emit_report, read_mha, write_mha, MhaImage, ReportFormat, ReportGroup};
use segloss::losses::{evaluate_loss, LossKind, LossSpec};
use segloss::metrics::{evaluate_case, DEFAULT_TAU_MM};
use segloss::optimdemo::{make_phantom, run_descent, trajectory_csv, DescentConfig, PhantomKind};
use segloss::preproc::preprocess_case;
use segloss::volume::{BinaryMask, MultiChannelVolume, ProbVolume, ScalarVolume};
use segloss::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_GEOMETRY: u8 = 3;
const EXIT_PAIRING: u8 = 4;
const EXIT_CONFIG: u8 = 5;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) | Error::Csv(_) => EXIT_IO,
            Error::InvalidGeometry { .. }
            | Error::GeometryMismatch { .. }
            | Error::InvalidData(_) => EXIT_GEOMETRY,
            Error::InvalidConfig(_) | Error::Json(_) => EXIT_CONFIG,
            Error::NonFinite { .. } => EXIT_CHECK_FAILED,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected X,Y,Z integers, got `{s}`"))?;
    parts
        .try_into()
        .map_err(|_| format!("expected three values, got `{s}`"))
}

#[derive(Debug, Parser)]
#[command(
    name = "segloss",
    version,
    about = "Segmentation losses, surface metrics and volume preprocessing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample, normalize and stack an ADC / Z-ADC pair with its label
    Preprocess {
        #[arg(long)]
        adc: PathBuf,
        #[arg(long)]
        zadc: PathBuf,
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target grid, X,Y,Z
        #[arg(long, default_value = "192,192,32")]
        dims: String,
    },
    /// Dice, MSD and NSD for prediction / truth masks paired by file name
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU_MM)]
        tau: f64,
        #[arg(long, default_value = "json")]
        format: String,
        /// Row label in the report
        #[arg(long, default_value = "prediction")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one loss on a prediction / truth pair
    Loss {
        /// LossSpec JSON file
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write dL/dp as a 64-bit MHA
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value = "8,8,4")]
        dims: String,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Restrict to one loss kind
        #[arg(long)]
        loss: Option<String>,
        /// Also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Gradient descent on a logit volume toward a phantom or a given mask
    DemoOptimize {
        #[arg(long)]
        loss: Option<String>,
        /// DescentConfig JSON; flags override its values
        #[arg(long)]
        config: Option<PathBuf>,
        /// sphere, two-spheres, thin-shell or tiny-lesion
        #[arg(long, default_value = "sphere")]
        phantom: String,
        /// Use this mask as the target instead of a phantom
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value = "32,32,32")]
        dims: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log_every: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance transform of a mask, written as a 64-bit MHA
    Edt {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        signed: bool,
    },
    /// Random augmentation of a preprocessed case directory
    Augment {
        /// Directory holding input_ch0.mha, input_ch1.mha and label.mha
        #[arg(long)]
        input: PathBuf,
        /// AugmentConfig JSON; flags override its values
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_scalar(path: &Path) -> Result<ScalarVolume, Failure> {
    read_mha(path)
        .and_then(|img| img.to_scalar())
        .map_err(with_path(path))
}

fn load_mask(path: &Path) -> Result<BinaryMask, Failure> {
    read_mha(path)
        .and_then(|img| img.to_mask())
        .map_err(with_path(path))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(io_context(path))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(io_context(path))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(io_context(path))
}

fn save(image: &MhaImage, path: &Path) -> CmdResult {
    write_mha(image, path, false).map_err(with_path(path))
}

fn cmd_preprocess(adc: &Path, zadc: &Path, label: &Path, out: &Path, dims: &str) -> CmdResult {
    let dims = parse_dims(dims).map_err(|m| Failure::new(EXIT_GEOMETRY, m))?;
    let adc_v = load_scalar(adc)?;
    let zadc_v = load_scalar(zadc)?;
    let label_m = load_mask(label)?;
    let (input, label_out) = preprocess_case(&adc_v, &zadc_v, &label_m, dims)?;
    create_dir(out)?;
    for (i, ch) in input.channels().iter().enumerate() {
        save(
            &MhaImage::from_scalar(ch),
            &out.join(format!("input_ch{i}.mha")),
        )?;
    }
    save(&MhaImage::from_mask(&label_out), &out.join("label.mha"))?;
    write_json(
        &out.join("meta.json"),
        &json!({
            "original_geometry": adc_v.geometry(),
            "target_geometry": label_out.geometry(),
            "channels": input.names(),
            "sources": { "adc": adc, "zadc": zadc, "label": label },
        }),
    )
}

fn mha_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_context(dir))? {
        let path = entry.map_err(io_context(dir))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("mha"))
        {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, path);
        }
    }
    Ok(files)
}

fn cmd_eval(
    pred: &Path,
    truth: &Path,
    tau: f64,
    format: &str,
    label: &str,
    out: &Path,
) -> CmdResult {
    let format: ReportFormat = format.parse()?;
    let preds = mha_files(pred)?;
    let truths = mha_files(truth)?;
    let orphans: Vec<_> = preds
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .map(|k| format!("{k} (prediction only)"))
        .chain(
            truths
                .keys()
                .filter(|k| !preds.contains_key(*k))
                .map(|k| format!("{k} (truth only)")),
        )
        .collect();
    if !orphans.is_empty() {
        return Err(Failure::new(
            EXIT_PAIRING,
            format!("unpaired files: {}", orphans.join(", ")),
        ));
    }
    if preds.is_empty() {
        return Err(Failure::new(EXIT_PAIRING, "no .mha files to pair"));
    }
    let mut cases = Vec::with_capacity(preds.len());
    for (name, p_path) in &preds {
        let p = load_mask(p_path)?;
        let t = load_mask(&truths[name])?;
        let case_id = name.trim_end_matches(".mha").trim_end_matches(".MHA");
        let report = evaluate_case(case_id, &p, &t, tau).map_err(with_path(p_path))?;
        if report.msd_mm.is_infinite() {
            eprintln!("warning: {case_id}: one surface is empty, MSD is Inf");
        }
        cases.push(report);
    }
    let groups = [ReportGroup {
        label: label.to_string(),
        cases,
    }];
    emit_report(&groups, format, out).map_err(with_path(out))
}

fn to_probabilities(image: MhaImage) -> segloss::Result<ProbVolume> {
    ProbVolume::new(image.geometry, image.to_f64())
}

fn cmd_loss(spec: &Path, pred: &Path, truth: &Path, grad: Option<&Path>) -> CmdResult {
    let spec: LossSpec = load_json(spec)?;
    spec.validate()?;
    let p = read_mha(pred)
        .and_then(to_probabilities)
        .map_err(with_path(pred))?;
    let g = load_mask(truth)?;
    let result = evaluate_loss(&spec, &p, &g)?;
    let out = json!({
        "kind": spec.kind,
        "label": spec.kind.label(),
        "value": result.value,
        "diagnostics": result.diagnostics,
        "gradient_norm": result.gradient_norm(),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(Error::from)?
    );
    if let Some(path) = grad {
        save(&MhaImage::from_f64(*g.geometry(), result.gradient)?, path)?;
    }
    Ok(())
}

fn cmd_gradcheck(
    seed: u64,
    cases: usize,
    dims: &str,
    step: f64,
    loss: Option<&str>,
    json_out: Option<&Path>,
) -> CmdResult {
    let dims = parse_dims(dims).map_err(|m| Failure::new(EXIT_CONFIG, m))?;
    let specs: Vec<LossSpec> = match loss {
        Some(name) => vec![LossSpec::new(name.parse()?)],
        None => LossKind::ALL.iter().map(|&k| LossSpec::new(k)).collect(),
    };
    let report = gradcheck_suite(seed, &[dims], &specs, cases, step)?;
    print!("{}", report.table());
    if let Some(path) = json_out {
        write_json(path, &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_CHECK_FAILED, "gradient check failed"))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_demo_optimize(
    loss: Option<&str>,
    config: Option<&Path>,
    phantom: &str,
    target: Option<&Path>,
    dims: &str,
    steps: Option<usize>,
    step_size: Option<f64>,
    clip: Option<f64>,
    seed: Option<u64>,
    log_every: Option<usize>,
    out: &Path,
) -> CmdResult {
    let mut cfg: DescentConfig = match config {
        Some(path) => load_json(path)?,
        None => DescentConfig::default(),
    };
    if let Some(name) = loss {
        let kind: LossKind = name.parse()?;
        if config.is_some() {
            cfg.loss.kind = kind;
        } else {
            cfg.loss = LossSpec::new(kind);
        }
    } else if config.is_none() {
        return Err(Failure::new(
            EXIT_CONFIG,
            "--loss is required without --config",
        ));
    }
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.step_size = step_size.unwrap_or(cfg.step_size);
    cfg.clip_max_norm = clip.unwrap_or(cfg.clip_max_norm);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.log_every = log_every.unwrap_or(cfg.log_every);
    cfg.validate()?;

    let target = match target {
        Some(path) => load_mask(path)?,
        None => {
            let dims = parse_dims(dims).map_err(|m| Failure::new(EXIT_GEOMETRY, m))?;
            make_phantom(PhantomKind::parse(phantom)?, dims, [1.0; 3])?
        }
    };
    let outcome = run_descent(&target, &cfg)?;
    create_dir(out)?;
    let csv_path = out.join("trajectory.csv");
    fs::write(&csv_path, trajectory_csv(&outcome.trajectory)?).map_err(io_context(&csv_path))?;
    save(
        &MhaImage::from_mask(&outcome.prediction),
        &out.join("prediction.mha"),
    )?;
    save(&MhaImage::from_mask(&target), &out.join("target.mha"))?;
    let (first, last) = (outcome.first(), outcome.last());
    write_json(
        &out.join("summary.json"),
        &json!({ "config": cfg, "first": first, "last": last }),
    )?;
    println!(
        "{}: loss {:.6} -> {:.6}, dice {:.4} -> {:.4} over {} steps",
        cfg.loss.kind.label(),
        first.loss,
        last.loss,
        first.dice,
        last.dice,
        cfg.steps
    );
    Ok(())
}

fn cmd_edt(mask: &Path, out: &Path, signed: bool) -> CmdResult {
    let m = load_mask(mask)?;
    if m.foreground_count() == 0 || (signed && m.foreground_count() == m.len()) {
        eprintln!(
            "warning: {}: one side of the mask is empty, distances are Inf",
            mask.display()
        );
    }
    let (geometry, data) = if signed {
        let f = signed_edt(&m);
        (*f.geometry(), f.data().to_vec())
    } else {
        let f = edt(&m);
        (*f.geometry(), f.into_data())
    };
    save(&MhaImage::from_f64(geometry, data)?, out)
}

fn cmd_augment(input: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut cfg: AugmentConfig = match config {
        Some(path) => load_json(path)?,
        None => AugmentConfig::default(),
    };
    cfg.seed = seed.unwrap_or(cfg.seed);
    let ch0 = load_scalar(&input.join("input_ch0.mha"))?;
    let ch1 = load_scalar(&input.join("input_ch1.mha"))?;
    let label = load_mask(&input.join("label.mha"))?;
    let x = MultiChannelVolume::new(vec![ch0, ch1], vec!["ch0".into(), "ch1".into()])?;
    let (x, label, log) = augment_case(&x, &label, &cfg)?;
    create_dir(out)?;
    for (i, ch) in x.channels().iter().enumerate() {
        save(
            &MhaImage::from_scalar(ch),
            &out.join(format!("input_ch{i}.mha")),
        )?;
    }
    save(&MhaImage::from_mask(&label), &out.join("label.mha"))?;
    write_json(&out.join("augment_log.json"), &log)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Preprocess {
            adc,
            zadc,
            label,
            out,
            dims,
        } => cmd_preprocess(&adc, &zadc, &label, &out, &dims),
        Command::Eval {
            pred,
            truth,
            tau,
            format,
            label,
            out,
        } => cmd_eval(&pred, &truth, tau, &format, &label, &out),
        Command::Loss {
            spec,
            pred,
            truth,
            grad,
        } => cmd_loss(&spec, &pred, &truth, grad.as_deref()),
        Command::Gradcheck {
            seed,
            cases,
            dims,
            step,
            loss,
            json,
        } => cmd_gradcheck(seed, cases, &dims, step, loss.as_deref(), json.as_deref()),
        Command::DemoOptimize {
            loss,
            config,
            phantom,
            target,
            dims,
            steps,
            step_size,
            clip,
            seed,
            log_every,
            out,
        } => cmd_demo_optimize(
            loss.as_deref(),
            config.as_deref(),
            &phantom,
            target.as_deref(),
            &dims,
            steps,
            step_size,
            clip,
            seed,
            log_every,
            &out,
        ),
        Command::Edt { mask, out, signed } => cmd_edt(&mask, &out, signed),
        Command::Augment {
            input,
            config,
            seed,
            out,
        } => cmd_augment(&input, config.as_deref(), seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
