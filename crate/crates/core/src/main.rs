use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use v2v_collab::align::{align, AlignError};
use v2v_collab::codec::{decode, encode, rate_control, refine, CodecConfig, CodecError, EncodedFrame, EntropyModel};
use v2v_collab::image::{read_pnm, write_pnm, ImageError, ImageTensor};
use v2v_collab::planner::{brute_force_optimum, validate_plan, PlanError, RoundingRule, Solver, SolverConfig};
use v2v_collab::scenario::Scenario;
use v2v_collab::scenario_file::{load_scenario, ScenarioFileError};
use v2v_collab::simulate::{
    node_frames, plan_csv, sha256_hex, simulate, write_run, RunManifest, SimConfig, SimError, MANIFEST_FORMAT,
};
use v2v_collab::synth::random_scenario;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "v2v-collab", version, about = "Link planning, frame coding and domain alignment for cooperative perception")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose links, compression ratios and rates for a scenario.
    Plan(PlanCmd),
    /// Encode or decode single frames.
    #[command(subcommand)]
    Codec(CodecCmd),
    /// Replace the low-frequency amplitude of SOURCE with that of the ego TARGET.
    Align(AlignCmd),
    /// Run planning, coding, alignment and scoring end to end.
    Simulate(SimulateCmd),
    /// Compare the planner against exhaustive search.
    Oracle(OracleCmd),
}

#[derive(Args)]
struct PlanCmd {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the plan as CSV to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CodecCmd {
    Encode(EncodeCmd),
    Decode(DecodeCmd),
}

#[derive(Args)]
struct EncodeCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Pick the finest step meeting this compression ratio; without it the
    /// configured quant step is used as is.
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    codec: CodecArgs,
    /// Frames to refine the entropy model on (decoding needs the same list).
    #[arg(long, num_args = 1..)]
    train: Vec<PathBuf>,
}

#[derive(Args)]
struct DecodeCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, num_args = 1..)]
    train: Vec<PathBuf>,
}

#[derive(Args)]
struct AlignCmd {
    #[arg(long)]
    source: PathBuf,
    /// Ego image whose domain the output takes on.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long, required_unless_present = "manifest")]
    scenario: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    seed: Option<u64>,
    /// Output directory for the CSVs and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Repeat a recorded run; fails if any output differs from the record.
    #[arg(long, conflicts_with_all = ["scenario", "seed", "config"])]
    manifest: Option<PathBuf>,
    /// JSON simulation config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args)]
struct OracleCmd {
    #[arg(long, required_unless_present = "random")]
    scenario: Option<PathBuf>,
    /// Check this many seeded random scenarios instead of a file.
    #[arg(long, conflicts_with = "scenario")]
    random: Option<usize>,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    subchannels: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allowed relative gap to the exhaustive optimum.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Default)]
struct SolverArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    relaxation_temperature: Option<f64>,
    #[arg(long, value_parser = parse_rounding)]
    rounding_rule: Option<RoundingRule>,
    #[arg(long)]
    convergence_tol: Option<f64>,
}

#[derive(Args, Default)]
struct CodecArgs {
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    quant_step: Option<f64>,
    #[arg(long)]
    phi_lambda_max: Option<f64>,
    #[arg(long)]
    phi_power: Option<f64>,
    #[arg(long)]
    rate_tolerance: Option<f64>,
}

#[derive(Args, Default)]
struct SimArgs {
    #[arg(long)]
    align_alpha: Option<f64>,
    #[arg(long)]
    refine_fraction: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    frame_height: Option<usize>,
    #[arg(long)]
    frame_width: Option<usize>,
    #[arg(long)]
    gamma_override: Option<f64>,
    #[arg(long)]
    iou_classes: Option<u32>,
}

fn parse_rounding(s: &str) -> Result<RoundingRule, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

macro_rules! overlay {
    ($args:expr, $cfg:expr, $($f:ident),+) => {
        $(if let Some(v) = $args.$f { $cfg.$f = v; })+
    };
}

impl SolverArgs {
    fn apply(&self, cfg: &mut SolverConfig) {
        overlay!(self, cfg, learning_rate, max_iters, relaxation_temperature, rounding_rule, convergence_tol);
    }

    fn is_empty(&self) -> bool {
        self.learning_rate.is_none()
            && self.max_iters.is_none()
            && self.relaxation_temperature.is_none()
            && self.rounding_rule.is_none()
            && self.convergence_tol.is_none()
    }
}

impl CodecArgs {
    fn apply(&self, cfg: &mut CodecConfig) {
        overlay!(self, cfg, block_size, quant_step, phi_lambda_max, phi_power, rate_tolerance);
    }

    fn config(&self) -> CodecConfig {
        let mut cfg = CodecConfig::default();
        self.apply(&mut cfg);
        cfg
    }

    fn is_empty(&self) -> bool {
        self.block_size.is_none()
            && self.quant_step.is_none()
            && self.phi_lambda_max.is_none()
            && self.phi_power.is_none()
            && self.rate_tolerance.is_none()
    }
}

impl SimArgs {
    fn apply(&self, cfg: &mut SimConfig) {
        overlay!(self, cfg, align_alpha, refine_fraction, frames, frame_height, frame_width, iou_classes);
        if self.gamma_override.is_some() {
            cfg.gamma_override = self.gamma_override;
        }
    }

    fn is_empty(&self) -> bool {
        self.align_alpha.is_none()
            && self.refine_fraction.is_none()
            && self.frames.is_none()
            && self.frame_height.is_none()
            && self.frame_width.is_none()
            && self.gamma_override.is_none()
            && self.iou_classes.is_none()
    }
}

/// Raised when a manifest rerun does not reproduce the recorded outputs.
#[derive(Debug, thiserror::Error)]
#[error("rerun differs from manifest in {0:?}")]
struct Drift(Vec<String>);

/// Raised for bad command-line input that no library type covers.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(c) => run_plan(c),
        Command::Codec(CodecCmd::Encode(c)) => run_encode(c),
        Command::Codec(CodecCmd::Decode(c)) => run_decode(c),
        Command::Align(c) => run_align(c),
        Command::Simulate(c) => run_simulate(c),
        Command::Oracle(c) => run_oracle(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &anyhow::Error) -> u8 {
    if let Some(e) = e.downcast_ref::<SimError>() {
        return sim_class(e);
    }
    if let Some(e) = e.downcast_ref::<PlanError>() {
        return plan_class(e);
    }
    if let Some(e) = e.downcast_ref::<CodecError>() {
        return codec_class(e);
    }
    if let Some(e) = e.downcast_ref::<ImageError>() {
        return image_class(e);
    }
    if let Some(e) = e.downcast_ref::<AlignError>() {
        return match e {
            AlignError::Image(i) => image_class(i),
            _ => EXIT_INVALID,
        };
    }
    if let Some(e) = e.downcast_ref::<ScenarioFileError>() {
        return match e {
            ScenarioFileError::Io { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_IO;
    }
    if e.downcast_ref::<serde_json::Error>().is_some() || e.downcast_ref::<Usage>().is_some() {
        return EXIT_INVALID;
    }
    EXIT_FAILURE
}

fn sim_class(e: &SimError) -> u8 {
    match e {
        SimError::Plan(p) => plan_class(p),
        SimError::Codec { source, .. } | SimError::Refine(source) => codec_class(source),
        SimError::Image { source, .. } => image_class(source),
        SimError::Io(_) => EXIT_IO,
        SimError::Config { .. }
        | SimError::Frames(_)
        | SimError::Align { .. }
        | SimError::Metrics { .. }
        | SimError::Json(_) => EXIT_INVALID,
    }
}

fn plan_class(e: &PlanError) -> u8 {
    match e {
        PlanError::Infeasible { .. } | PlanError::NoLinks | PlanError::NonPositiveRate(_) => EXIT_INFEASIBLE,
        PlanError::TooLarge { .. } | PlanError::Scenario(_) => EXIT_INVALID,
    }
}

fn codec_class(e: &CodecError) -> u8 {
    match e {
        CodecError::Budget { .. } => EXIT_INFEASIBLE,
        CodecError::Image(i) => image_class(i),
        _ => EXIT_INVALID,
    }
}

fn image_class(e: &ImageError) -> u8 {
    match e {
        ImageError::Io(_) => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

fn read_image(path: &Path) -> Result<ImageTensor> {
    read_pnm(path).with_context(|| format!("reading {}", path.display()))
}

fn write_image(path: &Path, img: &ImageTensor) -> Result<()> {
    write_pnm(path, img).with_context(|| format!("writing {}", path.display()))
}

fn solver_config(args: &SolverArgs, seed: u64) -> SolverConfig {
    let mut cfg = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    args.apply(&mut cfg);
    cfg
}

fn run_plan(c: PlanCmd) -> Result<()> {
    let file = load_scenario(&c.scenario)?;
    let s = &file.scenario;
    let (plan, report) = Solver::new(solver_config(&c.solver, c.seed))?.solve(s)?;
    print!("{}", plan.matrix_report());
    println!(
        "iterations: {}  converged: {}  relaxed average delay: {:.9e} s",
        report.iterations, report.converged, report.relaxed_avg_delay
    );
    let violations = validate_plan(s, &plan);
    for v in &violations {
        println!("violation: {}: {}", v.constraint, v.detail);
    }
    if let Some(path) = c.csv {
        fs::write(&path, plan_csv(s, &plan)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if !violations.is_empty() {
        bail!("plan breaks {} constraint(s)", violations.len());
    }
    Ok(())
}

fn entropy_model(train: &[PathBuf], cfg: &CodecConfig) -> Result<EntropyModel> {
    if train.is_empty() {
        return Ok(EntropyModel::generic());
    }
    let frames = train.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    Ok(refine(&EntropyModel::generic(), &frames, cfg)?)
}

fn run_encode(c: EncodeCmd) -> Result<()> {
    let cfg = c.codec.config();
    cfg.validate()?;
    let img = read_image(&c.input)?;
    let em = entropy_model(&c.train, &cfg)?;
    let frame = match c.gamma {
        Some(g) => rate_control(&img, g, &em, &cfg)?.1,
        None => encode(&img, &cfg, &em)?,
    };
    fs::write(&c.output, frame.to_bytes()?).with_context(|| format!("writing {}", c.output.display()))?;
    println!(
        "quant_step: {}  bits: {:.3}  bits/sample: {:.6}  model: {:016x}",
        frame.quant_step(),
        frame.bit_count(),
        frame.bits_per_sample(),
        frame.model_id()
    );
    Ok(())
}

fn run_decode(c: DecodeCmd) -> Result<()> {
    let cfg = c.codec.config();
    cfg.validate()?;
    let bytes = fs::read(&c.input).with_context(|| format!("reading {}", c.input.display()))?;
    let em = entropy_model(&c.train, &cfg)?;
    let frame = EncodedFrame::from_bytes(&bytes, &em)?;
    write_image(&c.output, &decode(&frame)?)?;
    println!("bits: {:.3}  bits/sample: {:.6}", frame.bit_count(), frame.bits_per_sample());
    Ok(())
}

fn run_align(c: AlignCmd) -> Result<()> {
    let src = read_image(&c.source)?;
    let tgt = read_image(&c.target)?;
    write_image(&c.output, &align(&src, &tgt, c.alpha)?)
}

fn run_simulate(c: SimulateCmd) -> Result<()> {
    let (scenario_path, seed, cfg, expected) = match &c.manifest {
        Some(path) => {
            if !(c.sim.is_empty() && c.solver.is_empty() && c.codec.is_empty()) {
                return Err(Usage("configuration flags cannot be combined with --manifest".into()).into());
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if m.format != MANIFEST_FORMAT {
                return Err(Usage(format!("manifest format {} is not {MANIFEST_FORMAT}", m.format)).into());
            }
            if m.tool_version != env!("CARGO_PKG_VERSION") {
                eprintln!(
                    "warning: manifest written by version {}, running {}",
                    m.tool_version,
                    env!("CARGO_PKG_VERSION")
                );
            }
            (PathBuf::from(&m.scenario_path), m.seed, m.config.clone(), Some(m))
        }
        None => {
            let seed = c.seed.expect("clap enforces --seed");
            let mut cfg = match &c.config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SimConfig::default(),
            };
            c.sim.apply(&mut cfg);
            c.solver.apply(&mut cfg.solver);
            c.codec.apply(&mut cfg.codec);
            cfg.solver.seed = seed;
            (c.scenario.clone().expect("clap enforces --scenario"), seed, cfg, None)
        }
    };
    let bytes = fs::read(&scenario_path).with_context(|| format!("reading {}", scenario_path.display()))?;
    if let Some(m) = &expected {
        if sha256_hex(&bytes) != m.scenario_sha256 {
            return Err(Usage(format!("{} changed since the manifest was written", scenario_path.display())).into());
        }
    }
    let file = load_scenario(&scenario_path)?;
    let frames = node_frames(&file, &cfg, seed)?;
    let out = simulate(&file.scenario, &frames, &cfg, seed)?;
    let manifest = write_run(
        &c.out,
        &file.scenario,
        &out,
        &cfg,
        seed,
        &scenario_path.to_string_lossy(),
        &bytes,
    )?;
    print_summary(&file.scenario, &out);
    if let Some(m) = expected {
        let drift: Vec<String> = m
            .outputs
            .iter()
            .filter(|(name, hash)| manifest.outputs.get(*name) != Some(hash))
            .map(|(name, _)| name.clone())
            .collect();
        if !drift.is_empty() {
            return Err(Drift(drift).into());
        }
        println!("outputs match the manifest");
    }
    Ok(())
}

fn print_summary(s: &Scenario, out: &v2v_collab::simulate::SimOutput) {
    println!(
        "{} node(s), {} link(s), average delay {:.6e} s, entropy model {:016x} ({} frame(s))",
        s.len(),
        out.links.len(),
        out.plan.avg_delay,
        out.model_id,
        out.refined_on
    );
    for l in &out.links {
        println!(
            "{}->{}: gamma {:.4}  steps {}  psnr {:.2} dB  ms-ssim {:.4}  {:.3} bpp",
            l.src, l.dst, l.gamma, l.quant_steps, l.quality.psnr_db, l.quality.ms_ssim, l.quality.bitrate_bpp
        );
    }
}

fn link_list(plan: &v2v_collab::planner::CommPlan) -> String {
    plan.selected()
        .iter()
        .map(|&(i, j)| format!("{}->{}", plan.node_ids[i], plan.node_ids[j]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_oracle(c: OracleCmd) -> Result<()> {
    let scenarios: Vec<(String, Scenario)> = match (&c.scenario, c.random) {
        (Some(p), _) => vec![(p.display().to_string(), load_scenario(p)?.scenario)],
        (None, Some(count)) => (0..count as u64)
            .map(|k| {
                let seed = c.seed.wrapping_add(k);
                (format!("random seed {seed}"), random_scenario(seed, c.nodes, c.subchannels))
            })
            .collect(),
        (None, None) => return Err(anyhow!(Usage("need --scenario or --random".into()))),
    };
    let mut within = 0;
    for (name, s) in &scenarios {
        let (plan, _) = Solver::new(solver_config(&c.solver, c.seed))?.solve(s)?;
        let best = brute_force_optimum(s)?;
        let gap = plan.avg_delay / best.avg_delay - 1.0;
        let violations = validate_plan(s, &plan).len();
        let ok = gap <= c.tolerance && violations == 0;
        within += usize::from(ok);
        println!(
            "{name}: planner {:.9e} s  optimum {:.9e} s  gap {:+.4}%  violations {violations}  {}",
            plan.avg_delay,
            best.avg_delay,
            100.0 * gap,
            if ok { "ok" } else { "MISS" }
        );
        if !ok {
            println!("  planner links: {}", link_list(&plan));
            println!("  optimum links: {}", link_list(&best));
        }
    }
    println!("{within}/{} within {:.1}%", scenarios.len(), 100.0 * c.tolerance);
    if within < scenarios.len() {
        bail!("{} scenario(s) outside tolerance", scenarios.len() - within);
    }
    Ok(())
}
