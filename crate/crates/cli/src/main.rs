//! `ics`: command-line front end for cascade segmentation experiments.
//!
//! Exit codes: 0 success, 2 input error, 3 backend failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ics_core::bridge::{BridgeBackend, BridgeOptions};
use ics_core::cascade::{self, CascadeConfig, CascadeError, InitialSupportSpec, Method};
use ics_core::eval::{drop_empty_slices, Confusion, TestMethod};
use ics_core::harness::{
    self, gen_phantom, run_compare, sweep_m, sweep_position, write_compare, write_sweep,
    HarnessError, PhantomConfig, Positions, Preset,
};
use ics_core::io::{
    fmt6, load_case, read_nifti_axis, write_nifti, write_run_report, CaseBundle, RunReport,
};
use ics_core::par::Exec;
use ics_core::segmenter::{BackendError, RefSegParams, ReferenceSegmenter, SegmenterBackend};
use ics_core::types::Mask;

#[derive(Debug)]
enum CliError {
    Input(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::BackendFailure { .. } => CliError::Backend(e.to_string()),
            other => input(other),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Cascade(c) => c.into(),
            other => input(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ics",
    version,
    about = "In-context cascade segmentation of 3-D volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment one case with one method and write its report.
    Run(RunArgs),
    /// Run baseline and cascade from the same initial block and test the difference.
    Compare(CompareArgs),
    /// Vary the size of the centred initial block.
    SweepM(SweepMArgs),
    /// Move a fixed-size initial block across the volume.
    SweepPos(SweepPosArgs),
    /// Write a synthetic phantom as an image/label NIfTI pair.
    Synth(SynthArgs),
    /// Dice score between a predicted and a ground-truth label volume.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    label: PathBuf,
    #[arg(long)]
    region: String,
    /// Volume axis to slice along.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    axis: u8,
    /// Keep slices whose ground truth is empty (dropped by default).
    #[arg(long)]
    keep_empty: bool,
}

#[derive(Clone, Debug)]
enum BackendSpec {
    Reference,
    Bridge(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ref" => Ok(BackendSpec::Reference),
            _ => match s.strip_prefix("bridge:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(BackendSpec::Bridge(cmd.to_string())),
                _ => Err(format!("expected `ref` or `bridge:<command>`, got {s:?}")),
            },
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    /// `ref` or `bridge:<command line>`.
    #[arg(long, default_value = "ref")]
    backend: BackendSpec,
    #[arg(long, default_value_t = 5)]
    patch_size: usize,
    #[arg(long, default_value_t = 4)]
    search_radius: usize,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    bandwidth: f64,
    #[arg(long, default_value_t = 30)]
    handshake_timeout_secs: u64,
    #[arg(long, default_value_t = 120)]
    request_timeout_secs: u64,
}

#[derive(Args)]
struct CascadeArgs {
    /// Support-set capacity m.
    #[arg(long, default_value_t = 5)]
    capacity: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    pin_initial: bool,
    #[arg(long)]
    faithful_loops: bool,
    /// Disable data-parallel execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct InitArgs {
    /// First initial slice (1-based); centred when omitted.
    #[arg(long)]
    init_start: Option<usize>,
    #[arg(long, default_value_t = 3)]
    init_count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ics,
    Baseline,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ics => Method::Ics,
            MethodArg::Baseline => Method::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Wilcoxon,
    WilcoxonExact,
    WilcoxonNormal,
    PairedT,
}

impl From<TestArg> for TestMethod {
    fn from(t: TestArg) -> Self {
        match t {
            TestArg::Wilcoxon => TestMethod::Wilcoxon,
            TestArg::WilcoxonExact => TestMethod::WilcoxonExact,
            TestArg::WilcoxonNormal => TestMethod::WilcoxonNormal,
            TestArg::PairedT => TestMethod::PairedT,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    init: InitArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    cascade: CascadeArgs,
    #[arg(long, value_enum, default_value = "ics")]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    init: InitArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    cascade: CascadeArgs,
    #[arg(long, value_enum, default_value = "wilcoxon")]
    test: TestArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepMArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    cascade: CascadeArgs,
    /// Block sizes: `1..5`, `1,3,5` or a single value.
    #[arg(long, default_value = "1..5")]
    m: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ics")]
    methods: Vec<MethodArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepPosArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    cascade: CascadeArgs,
    /// Block size.
    #[arg(long, default_value_t = 3)]
    init_count: usize,
    /// `all` or a comma-separated list of block starts.
    #[arg(long, default_value = "all")]
    positions: Positions,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "baseline,ics"
    )]
    methods: Vec<MethodArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    DriftingDisk,
    Constant,
    Mirrored,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::DriftingDisk => Preset::DriftingDisk,
            PresetArg::Constant => Preset::Constant,
            PresetArg::Mirrored => Preset::Mirrored,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes `<prefix>_image.nii.gz` and `<prefix>_label.nii.gz`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    axis: u8,
}

fn load(args: &CaseArgs) -> Result<CaseBundle, CliError> {
    let bundle =
        load_case(&args.image, &args.label, &args.region, args.axis as usize).map_err(input)?;
    if args.keep_empty {
        return Ok(bundle);
    }
    let kept = drop_empty_slices(&bundle).map_err(input)?;
    if kept.len() < bundle.len() {
        eprintln!(
            "note: dropped {} slices with empty ground truth; indices refer to the {} kept slices",
            bundle.len() - kept.len(),
            kept.len()
        );
    }
    Ok(kept)
}

fn exec(args: &CascadeArgs) -> Exec {
    if args.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn config(args: &CascadeArgs) -> Result<CascadeConfig, CliError> {
    let cfg = CascadeConfig {
        capacity: args.capacity,
        prob_threshold: args.threshold,
        augment: !args.no_augment,
        pin_initial: args.pin_initial,
        faithful_loops: args.faithful_loops,
        keep_probs: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn init_spec(args: &InitArgs, n: usize) -> Result<InitialSupportSpec, CliError> {
    Ok(match args.init_start {
        Some(start) => InitialSupportSpec::block(start, args.init_count, n)?,
        None => InitialSupportSpec::centered(args.init_count, n)?,
    })
}

type Factory = Box<dyn Fn() -> Result<Box<dyn SegmenterBackend>, BackendError> + Sync>;

/// Validates the backend once up front, then hands out fresh instances.
fn factory(args: &BackendArgs, exec: Exec) -> Result<Factory, CliError> {
    match &args.backend {
        BackendSpec::Reference => {
            let params = RefSegParams {
                patch_size: args.patch_size,
                search_radius: args.search_radius,
                k: args.k,
                bandwidth: args.bandwidth,
            };
            params.validate().map_err(input)?;
            Ok(Box::new(move || {
                Ok(Box::new(ReferenceSegmenter::new(params)?.with_exec(exec))
                    as Box<dyn SegmenterBackend>)
            }))
        }
        BackendSpec::Bridge(cmd) => {
            let opts = BridgeOptions {
                handshake_timeout: Duration::from_secs(args.handshake_timeout_secs),
                request_timeout: Duration::from_secs(args.request_timeout_secs),
            };
            drop(BridgeBackend::spawn(cmd, opts).map_err(|e| CliError::Backend(e.to_string()))?);
            let cmd = cmd.clone();
            Ok(Box::new(move || {
                Ok(Box::new(BridgeBackend::spawn(&cmd, opts)?) as Box<dyn SegmenterBackend>)
            }))
        }
    }
}

fn print_report(report: &RunReport, dir: &Path) {
    println!("{} -> {}", report.run_id(), dir.display());
    match &report.stats {
        Some(s) => println!(
            "  {} slices predicted, mean DSC {} (std {})",
            s.n,
            fmt6(s.mean),
            fmt6(s.std)
        ),
        None => println!("  no query slices: the initial block covers the volume"),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let bundle = load(&args.case)?;
    let initial = init_spec(&args.init, bundle.len())?;
    let cfg = config(&args.cascade)?;
    let exec = exec(&args.cascade);
    let make = factory(&args.backend, exec)?;
    let backend_id = make()
        .map_err(|e| CliError::Backend(e.to_string()))?
        .id()
        .to_string();
    let method = Method::from(args.method);
    let result = cascade::run_split(method, &bundle, &initial, &make, &cfg, exec)?;
    let report =
        RunReport::build(&bundle, &initial, &cfg, method, &backend_id, &result).map_err(input)?;
    let dir = write_run_report(&report, &args.out).map_err(input)?;
    print_report(&report, &dir);
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let bundle = load(&args.case)?;
    let initial = init_spec(&args.init, bundle.len())?;
    let cfg = config(&args.cascade)?;
    let exec = exec(&args.cascade);
    let make = factory(&args.backend, exec)?;
    let report = run_compare(&bundle, &initial, &make, &cfg, args.test.into(), exec)?;
    let paths = write_compare(&report, &args.out)?;
    print_report(&report.baseline, &paths[0]);
    print_report(&report.ics, &paths[1]);
    println!("{}", report.outcome.describe());
    Ok(())
}

fn parse_m_values(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = |e: &dyn std::fmt::Display| input(format!("bad --m value {s:?}: {e}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|e| bad(&e))?;
        let hi: usize = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|e| bad(&e))?;
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|e| bad(&e)))
        .collect()
}

fn methods(list: &[MethodArg]) -> Vec<Method> {
    list.iter().map(|&m| m.into()).collect()
}

fn print_sweep(report: &harness::SweepReport, paths: &[PathBuf]) {
    for c in &report.cells {
        let mean = c.report.mean_dsc().map_or_else(|| "NA".to_string(), fmt6);
        println!("{} m={} start={} mean DSC {}", c.method, c.m, c.start, mean);
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_sweep_m(args: SweepMArgs) -> Result<(), CliError> {
    let bundle = load(&args.case)?;
    let cfg = config(&args.cascade)?;
    let exec = exec(&args.cascade);
    let make = factory(&args.backend, exec)?;
    let ms = parse_m_values(&args.m)?;
    let report = sweep_m(&bundle, &ms, &methods(&args.methods), &make, &cfg, exec)?;
    let prefix = format!("{}_{}_m_sweep", bundle.id(), bundle.region);
    let paths = write_sweep(&report, &args.out, &prefix)?;
    print_sweep(&report, &paths);
    Ok(())
}

fn cmd_sweep_pos(args: SweepPosArgs) -> Result<(), CliError> {
    let bundle = load(&args.case)?;
    let cfg = config(&args.cascade)?;
    let exec = exec(&args.cascade);
    let make = factory(&args.backend, exec)?;
    let report = sweep_position(
        &bundle,
        args.init_count,
        &args.positions,
        &methods(&args.methods),
        &make,
        &cfg,
        exec,
    )?;
    let prefix = format!(
        "{}_{}_position_sweep_m{}",
        bundle.id(),
        bundle.region,
        args.init_count
    );
    let paths = write_sweep(&report, &args.out, &prefix)?;
    print_sweep(&report, &paths);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = PhantomConfig::preset(args.preset.into(), args.seed);
    let bundle = gen_phantom(&cfg)?;
    let prefix = args.out.to_string_lossy().into_owned();
    let image = PathBuf::from(format!("{prefix}_image.nii.gz"));
    let label = PathBuf::from(format!("{prefix}_label.nii.gz"));
    if let Some(parent) = image.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| input(format!("{}: {e}", parent.display())))?;
    }
    write_nifti(&bundle.image, &image).map_err(input)?;
    write_nifti(&bundle.label_volume(), &label).map_err(input)?;
    println!("{}", image.display());
    println!("{}", label.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let axis = args.axis as usize;
    let pred = read_nifti_axis(&args.pred, axis).map_err(input)?;
    let gt = read_nifti_axis(&args.gt, axis).map_err(input)?;
    if (pred.dims(), pred.len()) != (gt.dims(), gt.len()) {
        return Err(input(format!(
            "prediction is {:?}x{} but ground truth is {:?}x{}",
            pred.dims(),
            pred.len(),
            gt.dims(),
            gt.len()
        )));
    }
    let binarize =
        |s: &ics_core::types::Slice| Mask::binarize(s.width(), s.height(), s.data()).map_err(input);
    let mut total = Confusion::default();
    let mut per_slice = Vec::with_capacity(gt.len());
    for (p, g) in pred.slices().iter().zip(gt.slices()) {
        let c = Confusion::of(&binarize(p)?, &binarize(g)?).map_err(input)?;
        per_slice.push(c.dsc());
        total = total + c;
    }
    println!("dsc = {}", fmt6(total.dsc()));
    println!(
        "mean_slice_dsc = {}",
        fmt6(per_slice.iter().sum::<f64>() / per_slice.len() as f64)
    );
    println!("slices = {}", per_slice.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::SweepM(a) => cmd_sweep_m(a),
        Cmd::SweepPos(a) => cmd_sweep_pos(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ics: {e}");
            ExitCode::from(e.code())
        }
    }
}
