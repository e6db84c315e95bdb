//! Command-line flags and their validation into a [`RunConfig`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use svigl::baselines::{OptimizerSchedule, SorSettings};
use svigl::denoise::PGParams;
use svigl::flow::{FlowParams, FLOW_SIGMA_INIT};
use svigl::lop::LopParams;
use svigl::svigl::{EntropyExpansion, SampleOptions};
use svigl::{GeneralizedCharbonnier, SviglConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "svigl",
    version,
    about = "Variational inference with gradient linearization for denoising, optical flow and point clouds",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a PGM image under Poisson-Gaussian noise.
    Denoise(DenoiseArgs),
    /// Estimate optical flow between two PGM frames.
    Flow(FlowArgs),
    /// Project a PLY point cloud with the LOP operator.
    Lop(LopArgs),
    /// Add synthetic Poisson-Gaussian noise to a PGM image.
    Noise(NoiseArgs),
    /// Run several optimizers on one problem and write their traces.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerName {
    Svigl,
    Adam,
    Sgd,
    GlMap,
    Laplace,
}

impl OptimizerName {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerName::Svigl => "svigl",
            OptimizerName::Adam => "adam",
            OptimizerName::Sgd => "sgd",
            OptimizerName::GlMap => "gl-map",
            OptimizerName::Laplace => "laplace",
        }
    }
}

fn parse_omega(s: &str) -> Result<f64, String> {
    let w: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if w > 0.0 && w < 2.0 {
        Ok(w)
    } else {
        Err(format!("relaxation factor {w} must lie in (0, 2)"))
    }
}

/// Settings shared by every optimizer.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SOR sweeps per linear solve.
    #[arg(long, default_value_t = 100)]
    pub sor_iters: usize,
    #[arg(long, default_value_t = 1.95, value_parser = parse_omega)]
    pub sor_omega: f64,
    /// Pair each base noise vector with its negation.
    #[arg(long)]
    pub antithetic: bool,
    /// Standardize base noise to zero mean and unit variance per coordinate.
    #[arg(long)]
    pub standardize: bool,
    /// Fresh samples for a closing KL estimate (0 disables it).
    #[arg(long, default_value_t = 0)]
    pub final_kl_samples: usize,
    /// Write 0 instead of wall-clock seconds so outputs are reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

/// Settings of a single optimizer run.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = OptimizerName::Svigl)]
    pub optimizer: OptimizerName,
    /// Samples per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// SVIGL blend factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Initial step size of Adam or SGD.
    #[arg(long)]
    pub step: Option<f64>,
    /// Initial posterior standard deviation.
    #[arg(long)]
    pub sigma_init: Option<f64>,
    /// Use the halved entropy expansion in the SVIGL system.
    #[arg(long)]
    pub half_entropy: bool,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseModelArgs {
    #[arg(long, default_value_t = 0.05)]
    pub beta1: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub beta2: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_s: f64,
    /// Generalized Charbonnier exponent of the smoothness penalty.
    #[arg(long, default_value_t = 1.0)]
    pub gc_a: f64,
    #[arg(long, default_value_t = 0.05)]
    pub gc_c: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FlowModelArgs {
    #[arg(long, default_value_t = 100.0)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub data_a: f64,
    #[arg(long, default_value_t = 0.01)]
    pub data_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smooth_a: f64,
    #[arg(long, default_value_t = 0.05)]
    pub smooth_c: f64,
    /// Re-warping iterations.
    #[arg(long, default_value_t = 3)]
    pub outer: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sigma_out: Option<PathBuf>,
    /// Clean reference for reporting PSNR.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Output PGM maxval, 255 or 65535.
    #[arg(long, default_value_t = 255)]
    pub maxval: u16,
    #[command(flatten)]
    pub model: DenoiseModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub frame1: PathBuf,
    #[arg(long)]
    pub frame2: PathBuf,
    /// Output `.flo` with the posterior mean.
    #[arg(long)]
    pub out: PathBuf,
    /// Output `.flo` holding the standard deviations of u and v.
    #[arg(long)]
    pub sigma_out: Option<PathBuf>,
    /// Initial flow; zero when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Ground truth for reporting AEPE.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub model: FlowModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LopArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV `index,sigma` of per-point standard deviations.
    #[arg(long)]
    pub sigma_out: Option<PathBuf>,
    /// Number of projected points, drawn from the input without replacement.
    #[arg(long, default_value_t = 100)]
    pub seed_count: usize,
    #[arg(long, default_value_t = 0.5)]
    pub h0: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Fixed-point iterations.
    #[arg(long, default_value_t = 10)]
    pub outer: usize,
    /// Samples per iteration.
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub sigma_init: f64,
    /// Do not standardize the base noise.
    #[arg(long)]
    pub raw_noise: bool,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub sor_iters: usize,
    #[arg(long, default_value_t = 1.95, value_parser = parse_omega)]
    pub sor_omega: f64,
    #[arg(long)]
    pub antithetic: bool,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub beta1: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub beta2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 255)]
    pub maxval: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompareTask {
    Denoise,
    Flow,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, value_enum)]
    pub task: CompareTask,
    /// Noisy image (denoise).
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Clean reference (denoise).
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub frame1: Option<PathBuf>,
    #[arg(long)]
    pub frame2: Option<PathBuf>,
    /// Ground-truth flow (flow).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory receiving the trace and summary CSVs.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Optimizer spec `name[:key=value,...]` with keys iters, samples,
    /// step, alpha, sigma; repeatable.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    /// Require equal sample counts so runs draw the same base noise.
    #[arg(long)]
    pub shared_samples: bool,
    #[arg(long, default_value_t = 0.05)]
    pub beta1: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub beta2: f64,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub outer: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

// ---------------------------------------------------------------- validated

/// A fully specified optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Svigl(SviglConfig),
    FirstOrder { schedule: OptimizerSchedule, seed: u64 },
    GlMap { iterations: usize, sor: SorSettings },
    /// MAP by GL, then the diagonal Laplace fit; its KL is estimated from
    /// `kl_samples` draws seeded with `seed`.
    Laplace {
        iterations: usize,
        sor: SorSettings,
        kl_samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRun {
    pub name: OptimizerName,
    /// Output label, unique within a comparison.
    pub label: String,
    pub optimizer: Optimizer,
    pub sigma_init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseTask {
    pub input: PathBuf,
    pub out: PathBuf,
    pub sigma_out: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub maxval: u16,
    pub params: PGParams,
    pub run: OptimizerRun,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTask {
    pub frame1: PathBuf,
    pub frame2: PathBuf,
    pub out: PathBuf,
    pub sigma_out: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub params: FlowParams,
    pub run: OptimizerRun,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LopTask {
    pub input: PathBuf,
    pub out: PathBuf,
    pub sigma_out: Option<PathBuf>,
    pub seed_count: usize,
    pub params: LopParams,
    pub config: SviglConfig,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTask {
    pub input: PathBuf,
    pub out: PathBuf,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub maxval: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompareProblem {
    Denoise {
        input: PathBuf,
        clean: Option<PathBuf>,
        params: PGParams,
    },
    Flow {
        frame1: PathBuf,
        frame2: PathBuf,
        gt: Option<PathBuf>,
        params: FlowParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub problem: CompareProblem,
    pub out_dir: PathBuf,
    pub runs: Vec<OptimizerRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Denoise(DenoiseTask),
    Flow(FlowTask),
    Lop(LopTask),
    Noise(NoiseTask),
    Compare(CompareConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub timing: bool,
}

// ---------------------------------------------------------------- parsing

/// Parses `argv` (program name first) into a validated configuration.
/// Help and version requests come back as [`clap::Error`]s too.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    validate(cli).map_err(ParseFailure::Invalid)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Invalid(CliError),
}

impl ParseFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            ParseFailure::Clap(e) => e.exit_code(),
            ParseFailure::Invalid(e) => e.exit_code(),
        }
    }
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::Clap(e) => write!(f, "{e}"),
            ParseFailure::Invalid(e) => write!(f, "error: {e}"),
        }
    }
}

fn input_file(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{flag}: no such file {}", path.display())))
    }
}

fn output_file(flag: &str, path: &Path) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{flag}: directory {} does not exist", dir.display())))
    }
}

fn maxval(m: u16) -> CliResult<u16> {
    if m == 255 || m == 65535 {
        Ok(m)
    } else {
        Err(CliError::usage(format!("--maxval: {m} is not 255 or 65535")))
    }
}

fn gc(flag: &str, a: f64, c: f64) -> CliResult<GeneralizedCharbonnier> {
    GeneralizedCharbonnier::new(a, c).map_err(|e| CliError::usage(format!("{flag}: {e}")))
}

fn positive(flag: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::usage(format!("--{flag}: {v} must be positive")))
    }
}

/// Overrides of an optimizer's defaults.
#[derive(Debug, Clone, Default)]
struct SolverOverrides {
    iters: Option<usize>,
    samples: Option<usize>,
    step: Option<f64>,
    alpha: Option<f64>,
    sigma: Option<f64>,
    half_entropy: bool,
}

fn build_run(
    name: OptimizerName,
    over: &SolverOverrides,
    common: &CommonArgs,
    default_sigma: f64,
) -> CliResult<OptimizerRun> {
    let sor = SorSettings {
        iterations: common.sor_iters,
        omega: common.sor_omega,
    };
    let options = SampleOptions {
        antithetic: common.antithetic,
        standardize: common.standardize,
    };
    let optimizer = match name {
        OptimizerName::Svigl => {
            let config = SviglConfig {
                iterations: over.iters.unwrap_or(100),
                sample_count: over.samples.unwrap_or(50),
                alpha: over.alpha.unwrap_or(1.0),
                sor_iterations: common.sor_iters,
                sor_omega: common.sor_omega,
                seed: common.seed,
                antithetic: common.antithetic,
                standardize: common.standardize,
                entropy: if over.half_entropy {
                    EntropyExpansion::Half
                } else {
                    EntropyExpansion::Full
                },
                final_kl_samples: common.final_kl_samples,
            };
            config.validate()?;
            Optimizer::Svigl(config)
        }
        OptimizerName::Adam | OptimizerName::Sgd => {
            let base = if name == OptimizerName::Adam {
                OptimizerSchedule::adam(0.01, 1000, 50)
            } else {
                OptimizerSchedule::sgd_reference()
            };
            let schedule = OptimizerSchedule {
                step: over.step.unwrap_or(base.step),
                iterations: over.iters.unwrap_or(base.iterations),
                sample_count: over.samples.unwrap_or(base.sample_count),
                sample_options: options,
                final_kl_samples: common.final_kl_samples,
                ..base
            };
            schedule.validate()?;
            if options.antithetic && schedule.sample_count % 2 != 0 {
                return Err(CliError::usage("antithetic sampling needs an even sample count"));
            }
            Optimizer::FirstOrder {
                schedule,
                seed: common.seed,
            }
        }
        OptimizerName::GlMap => Optimizer::GlMap {
            iterations: over.iters.unwrap_or(20),
            sor,
        },
        OptimizerName::Laplace => Optimizer::Laplace {
            iterations: over.iters.unwrap_or(20),
            sor,
            kl_samples: if common.final_kl_samples > 0 {
                common.final_kl_samples
            } else {
                over.samples.unwrap_or(50)
            },
            seed: common.seed,
        },
    };
    let sigma_init = positive("sigma-init", over.sigma.unwrap_or(default_sigma))?;
    Ok(OptimizerRun {
        name,
        label: name.as_str().to_string(),
        optimizer,
        sigma_init,
    })
}

fn no_sigma_for_map(run: &OptimizerRun, sigma_out: &Option<PathBuf>) -> CliResult<()> {
    if sigma_out.is_some() && matches!(run.optimizer, Optimizer::GlMap { .. }) {
        return Err(CliError::usage("--sigma-out: gl-map yields no standard deviations"));
    }
    Ok(())
}

fn solver_overrides(s: &SolverArgs) -> SolverOverrides {
    SolverOverrides {
        iters: s.iters,
        samples: s.samples,
        step: s.step,
        alpha: Some(s.alpha),
        sigma: s.sigma_init,
        half_entropy: s.half_entropy,
    }
}

/// Parses `name[:key=value,...]`.
fn parse_run_spec(spec: &str, common: &CommonArgs, default_sigma: f64) -> CliResult<OptimizerRun> {
    let bad = |msg: String| CliError::usage(format!("--run {spec:?}: {msg}"));
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let name = OptimizerName::from_str(name, true).map_err(|_| bad(format!("unknown optimizer {name:?}")))?;
    let mut over = SolverOverrides::default();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {kv:?}")))?;
        let int = || v.parse::<usize>().map_err(|_| bad(format!("{k}: {v:?} is not an integer")));
        let num = || v.parse::<f64>().map_err(|_| bad(format!("{k}: {v:?} is not a number")));
        match k {
            "iters" => over.iters = Some(int()?),
            "samples" => over.samples = Some(int()?),
            "step" => over.step = Some(num()?),
            "alpha" => over.alpha = Some(num()?),
            "sigma" => over.sigma = Some(num()?),
            "entropy" if v == "half" => over.half_entropy = true,
            "entropy" if v == "full" => over.half_entropy = false,
            _ => return Err(bad(format!("unknown setting {k:?}"))),
        }
    }
    build_run(name, &over, common, default_sigma)
}

fn sample_count(run: &OptimizerRun) -> Option<usize> {
    match &run.optimizer {
        Optimizer::Svigl(c) => Some(c.sample_count),
        Optimizer::FirstOrder { schedule, .. } => Some(schedule.sample_count),
        _ => None,
    }
}

fn denoise_params(m: &DenoiseModelArgs) -> CliResult<PGParams> {
    Ok(PGParams::new(
        m.beta1,
        m.beta2,
        m.lambda_d,
        m.lambda_s,
        gc("--gc-a/--gc-c", m.gc_a, m.gc_c)?,
    )?)
}

fn flow_params(m: &FlowModelArgs) -> CliResult<FlowParams> {
    let params = FlowParams {
        outer_iterations: m.outer,
        ..FlowParams::new(
            m.lambda_d,
            m.lambda_s,
            gc("--data-a/--data-c", m.data_a, m.data_c)?,
            gc("--smooth-a/--smooth-c", m.smooth_a, m.smooth_c)?,
        )
    };
    params.validate()?;
    Ok(params)
}

fn validate(cli: Cli) -> CliResult<RunConfig> {
    let (task, timing) = match cli.command {
        Command::Denoise(a) => {
            input_file("in", &a.input)?;
            output_file("out", &a.out)?;
            if let Some(p) = &a.sigma_out {
                output_file("sigma-out", p)?;
            }
            if let Some(p) = &a.clean {
                input_file("clean", p)?;
            }
            if let Some(p) = &a.solver.trace {
                output_file("trace", p)?;
            }
            let run = build_run(a.solver.optimizer, &solver_overrides(&a.solver), &a.common, 1e-3)?;
            no_sigma_for_map(&run, &a.sigma_out)?;
            let task = DenoiseTask {
                input: a.input,
                out: a.out,
                sigma_out: a.sigma_out,
                clean: a.clean,
                maxval: maxval(a.maxval)?,
                params: denoise_params(&a.model)?,
                run,
                trace: a.solver.trace,
            };
            (Task::Denoise(task), !a.common.no_timing)
        }
        Command::Flow(a) => {
            input_file("frame1", &a.frame1)?;
            input_file("frame2", &a.frame2)?;
            output_file("out", &a.out)?;
            for (flag, p) in [("sigma-out", &a.sigma_out), ("trace", &a.solver.trace)] {
                if let Some(p) = p {
                    output_file(flag, p)?;
                }
            }
            for (flag, p) in [("init", &a.init), ("gt", &a.gt)] {
                if let Some(p) = p {
                    input_file(flag, p)?;
                }
            }
            let run = build_run(a.solver.optimizer, &solver_overrides(&a.solver), &a.common, FLOW_SIGMA_INIT)?;
            no_sigma_for_map(&run, &a.sigma_out)?;
            let task = FlowTask {
                frame1: a.frame1,
                frame2: a.frame2,
                out: a.out,
                sigma_out: a.sigma_out,
                init: a.init,
                gt: a.gt,
                params: flow_params(&a.model)?,
                run,
                trace: a.solver.trace,
            };
            (Task::Flow(task), !a.common.no_timing)
        }
        Command::Lop(a) => {
            input_file("in", &a.input)?;
            output_file("out", &a.out)?;
            for (flag, p) in [("sigma-out", &a.sigma_out), ("trace", &a.trace)] {
                if let Some(p) = p {
                    output_file(flag, p)?;
                }
            }
            if a.seed_count == 0 {
                return Err(CliError::usage("--seed-count must be at least 1"));
            }
            let params = LopParams {
                outer_iterations: a.outer,
                samples: a.samples,
                sigma_init: a.sigma_init,
                ..LopParams::new(a.h0, a.lambda)
            };
            params.validate()?;
            let config = SviglConfig {
                iterations: 1,
                sample_count: a.samples,
                sor_iterations: a.sor_iters,
                sor_omega: a.sor_omega,
                seed: a.seed,
                antithetic: a.antithetic,
                standardize: !a.raw_noise,
                ..SviglConfig::default()
            };
            config.validate()?;
            let task = LopTask {
                input: a.input,
                out: a.out,
                sigma_out: a.sigma_out,
                seed_count: a.seed_count,
                params,
                config,
                trace: a.trace,
            };
            (Task::Lop(task), !a.no_timing)
        }
        Command::Noise(a) => {
            input_file("in", &a.input)?;
            output_file("out", &a.out)?;
            for (flag, v) in [("beta1", a.beta1), ("beta2", a.beta2)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CliError::usage(format!("--{flag}: {v} must be non-negative")));
                }
            }
            let task = NoiseTask {
                input: a.input,
                out: a.out,
                beta1: a.beta1,
                beta2: a.beta2,
                seed: a.seed,
                maxval: maxval(a.maxval)?,
            };
            (Task::Noise(task), true)
        }
        Command::Compare(a) => {
            let problem = match a.task {
                CompareTask::Denoise => {
                    let input = a.input.clone().ok_or_else(|| CliError::usage("--in is required for denoise"))?;
                    input_file("in", &input)?;
                    if let Some(p) = &a.clean {
                        input_file("clean", p)?;
                    }
                    let model = DenoiseModelArgs {
                        beta1: a.beta1,
                        beta2: a.beta2,
                        lambda_d: a.lambda_d.unwrap_or(10.0),
                        lambda_s: a.lambda_s.unwrap_or(5.0),
                        gc_a: 1.0,
                        gc_c: 0.05,
                    };
                    CompareProblem::Denoise {
                        input,
                        clean: a.clean.clone(),
                        params: denoise_params(&model)?,
                    }
                }
                CompareTask::Flow => {
                    let f1 = a.frame1.clone().ok_or_else(|| CliError::usage("--frame1 is required for flow"))?;
                    let f2 = a.frame2.clone().ok_or_else(|| CliError::usage("--frame2 is required for flow"))?;
                    input_file("frame1", &f1)?;
                    input_file("frame2", &f2)?;
                    if let Some(p) = &a.gt {
                        input_file("gt", p)?;
                    }
                    let d = FlowParams::default();
                    let model = FlowModelArgs {
                        lambda_d: a.lambda_d.unwrap_or(d.lambda_d),
                        lambda_s: a.lambda_s.unwrap_or(d.lambda_s),
                        data_a: 1.0,
                        data_c: 0.01,
                        smooth_a: 1.0,
                        smooth_c: 0.05,
                        outer: a.outer,
                    };
                    CompareProblem::Flow {
                        frame1: f1,
                        frame2: f2,
                        gt: a.gt.clone(),
                        params: flow_params(&model)?,
                    }
                }
            };
            if !a.out_dir.is_dir() {
                return Err(CliError::usage(format!(
                    "--out-dir: {} is not a directory",
                    a.out_dir.display()
                )));
            }
            let default_sigma = match a.task {
                CompareTask::Denoise => 1e-3,
                CompareTask::Flow => FLOW_SIGMA_INIT,
            };
            let mut runs = Vec::new();
            for spec in &a.runs {
                let mut run = parse_run_spec(spec, &a.common, default_sigma)?;
                let dupes = runs.iter().filter(|r: &&OptimizerRun| r.name == run.name).count();
                if dupes > 0 {
                    run.label = format!("{}_{}", run.label, dupes + 1);
                }
                runs.push(run);
            }
            if a.shared_samples {
                let counts: Vec<usize> = runs.iter().filter_map(sample_count).collect();
                if counts.windows(2).any(|w| w[0] != w[1]) {
                    return Err(CliError::usage(
                        "--shared-samples needs the same sample count for every sampling optimizer",
                    ));
                }
            }
            let config = CompareConfig {
                problem,
                out_dir: a.out_dir,
                runs,
            };
            (Task::Compare(config), !a.common.no_timing)
        }
    };
    Ok(RunConfig { task, timing })
}
