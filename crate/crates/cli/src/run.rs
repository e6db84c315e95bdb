//! Executes a validated [`RunConfig`].

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svigl::baselines::{gl_map, laplace_diag, svi_first_order};
use svigl::denoise::{pg_synthesize, PoissonGaussianModel};
use svigl::flow::{aepe, flow_infer, warp_derivatives, FlowField, FlowInference, FlowModel, FlowParams};
use svigl::lop::{lop_run, point_sigma, subsample_indices, PointCloud};
use svigl::metrics::psnr;
use svigl::svigl::{draw_samples, kl_unnormalized, run as svigl_run, SampleOptions};
use svigl::{EnergyModel, Image, Trace, VariationalGaussian};

use crate::args::{
    CompareConfig, CompareProblem, DenoiseTask, FlowTask, LopTask, NoiseTask, Optimizer, OptimizerRun, RunConfig, Task,
};
use crate::error::{CliError, CliResult};
use crate::io::{self, cell};

/// Result of one optimizer run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub mean: Vec<f64>,
    /// Absent for MAP estimation.
    pub sigma: Option<Vec<f64>>,
    pub trace: Trace,
    pub seconds: f64,
}

impl Outcome {
    pub fn final_kl(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.value)
    }
}

fn trace_csv(trace: &Trace, timing: bool) -> String {
    if timing {
        trace.to_csv()
    } else {
        trace.to_csv_untimed()
    }
}

fn save_trace(path: &Path, trace: &Trace, timing: bool) -> CliResult<()> {
    io::write_atomic(path, trace_csv(trace, timing).as_bytes())
}

/// Laplace fit around `x_map` with a KL estimate from fresh samples
/// appended to `trace`.
fn laplace_outcome<M: EnergyModel + ?Sized>(
    x_map: &[f64],
    model: &M,
    mut trace: Trace,
    kl_samples: usize,
    seed: u64,
    start: Instant,
) -> CliResult<Outcome> {
    let theta = laplace_diag(x_map, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = draw_samples(&theta, kl_samples, &mut rng, SampleOptions::default())?;
    let kl = kl_unnormalized(&theta, model, &samples)?;
    let iter = trace.last().map_or(0, |r| r.iter + 1);
    trace.push(iter, kl, start.elapsed().as_secs_f64());
    let (mean, sigma) = theta.into_parts();
    Ok(Outcome {
        mean,
        sigma: Some(sigma),
        trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `run` on a model whose state starts at `x0`.
pub fn optimize<M: EnergyModel + ?Sized>(run: &OptimizerRun, model: &M, x0: &[f64]) -> CliResult<Outcome> {
    let start = Instant::now();
    let theta0 = || VariationalGaussian::with_constant_sigma(x0.to_vec(), run.sigma_init);
    let (theta, trace) = match &run.optimizer {
        Optimizer::Svigl(config) => svigl_run(&theta0()?, model, config)?,
        Optimizer::FirstOrder { schedule, seed } => svi_first_order(&theta0()?, model, schedule, *seed)?,
        Optimizer::GlMap { iterations, sor } => {
            let (mean, trace) = gl_map(x0, model, *iterations, *sor)?;
            return Ok(Outcome {
                mean,
                sigma: None,
                trace,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Optimizer::Laplace {
            iterations,
            sor,
            kl_samples,
            seed,
        } => {
            let (x_map, trace) = gl_map(x0, model, *iterations, *sor)?;
            return laplace_outcome(&x_map, model, trace, *kl_samples, *seed, start);
        }
    };
    let (mean, sigma) = theta.into_parts();
    Ok(Outcome {
        mean,
        sigma: Some(sigma),
        trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `run` on the flow problem from `init`.
pub fn optimize_flow(
    run: &OptimizerRun,
    i1: &Image,
    i2: &Image,
    init: &FlowField,
    params: &FlowParams,
) -> CliResult<Outcome> {
    let start = Instant::now();
    let inner = match &run.optimizer {
        Optimizer::Svigl(config) => FlowInference::Svigl {
            config: *config,
            sigma_init: run.sigma_init,
        },
        Optimizer::FirstOrder { schedule, seed } => FlowInference::FirstOrder {
            schedule: *schedule,
            sigma_init: run.sigma_init,
            seed: *seed,
        },
        Optimizer::GlMap { iterations, sor } | Optimizer::Laplace { iterations, sor, .. } => FlowInference::GlMap {
            iterations: *iterations,
            sor: *sor,
        },
    };
    let est = flow_infer(i1, i2, init, params, &inner)?;
    if let Optimizer::Laplace { kl_samples, seed, .. } = &run.optimizer {
        let warp = warp_derivatives(i1, i2, &est.flow)?;
        let model = FlowModel::new(warp, est.flow.clone(), *params)?;
        return laplace_outcome(est.flow.state(), &model, est.trace, *kl_samples, *seed, start);
    }
    Ok(Outcome {
        mean: est.flow.into_state(),
        sigma: est.posterior.map(|p| p.into_parts().1),
        trace: est.trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn same_shape(a: &Image, b: &Image, what: &str) -> CliResult<()> {
    if a.width() == b.width() && a.height() == b.height() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what}: {}x{} does not match {}x{}",
            b.width(),
            b.height(),
            a.width(),
            a.height()
        )))
    }
}

fn flow_shape(f: &FlowField, img: &Image, what: &str) -> CliResult<()> {
    if f.width() == img.width() && f.height() == img.height() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what}: {}x{} flow does not match {}x{} frames",
            f.width(),
            f.height(),
            img.width(),
            img.height()
        )))
    }
}

fn run_denoise(t: &DenoiseTask, timing: bool) -> CliResult<Vec<String>> {
    let noisy = io::load_pgm(&t.input)?;
    let clean = t.clean.as_deref().map(io::load_pgm).transpose()?;
    if let Some(c) = &clean {
        same_shape(&noisy, c, "--clean")?;
    }
    let model = PoissonGaussianModel::new(noisy.clone(), t.params)?;
    let out = optimize(&t.run, &model, noisy.pixels())?;
    let (w, h) = (noisy.width(), noisy.height());
    io::save_pgm(&t.out, &Image::new(w, h, out.mean.clone())?, t.maxval)?;
    if let (Some(path), Some(sigma)) = (&t.sigma_out, &out.sigma) {
        io::save_pgm(path, &Image::new(w, h, sigma.clone())?, t.maxval)?;
    }
    if let Some(path) = &t.trace {
        save_trace(path, &out.trace, timing)?;
    }
    let mut report = vec![format!("final_kl {}", cell(Some(out.final_kl())))];
    if let Some(c) = &clean {
        report.push(format!("psnr_input {}", cell(Some(psnr(noisy.pixels(), c.pixels(), 1.0)?))));
        report.push(format!("psnr {}", cell(Some(psnr(&out.mean, c.pixels(), 1.0)?))));
    }
    Ok(report)
}

fn load_frames(f1: &Path, f2: &Path) -> CliResult<(Image, Image)> {
    let i1 = io::load_pgm(f1)?;
    let i2 = io::load_pgm(f2)?;
    same_shape(&i1, &i2, "--frame2")?;
    Ok((i1, i2))
}

fn run_flow(t: &FlowTask, timing: bool) -> CliResult<Vec<String>> {
    let (i1, i2) = load_frames(&t.frame1, &t.frame2)?;
    let init = match &t.init {
        Some(p) => {
            let f = io::load_flo(p)?;
            flow_shape(&f, &i1, "--init")?;
            f
        }
        None => FlowField::zeros(i1.width(), i1.height()),
    };
    let gt = t.gt.as_deref().map(io::load_flo).transpose()?;
    if let Some(g) = &gt {
        flow_shape(g, &i1, "--gt")?;
    }
    let out = optimize_flow(&t.run, &i1, &i2, &init, &t.params)?;
    let (w, h) = (i1.width(), i1.height());
    let flow = FlowField::new(w, h, out.mean.clone())?;
    io::save_flo(&t.out, &flow)?;
    if let (Some(path), Some(sigma)) = (&t.sigma_out, &out.sigma) {
        io::save_flo(path, &FlowField::new(w, h, sigma.clone())?)?;
    }
    if let Some(path) = &t.trace {
        save_trace(path, &out.trace, timing)?;
    }
    let mut report = vec![format!("final_kl {}", cell(Some(out.final_kl())))];
    if let Some(g) = &gt {
        report.push(format!("aepe {}", cell(Some(aepe(&flow, g)?))));
    }
    Ok(report)
}

fn run_lop(t: &LopTask, timing: bool) -> CliResult<Vec<String>> {
    let cloud = io::load_ply(&t.input)?;
    let seeds = if t.seed_count >= cloud.len() {
        cloud.clone()
    } else {
        let idx = subsample_indices(cloud.len(), t.seed_count, t.config.seed)?;
        PointCloud::new(idx.iter().map(|&i| cloud.points()[i]).collect())?
    };
    let (theta, trace) = lop_run(&cloud, &seeds, &t.params, &t.config)?;
    io::save_ply(&t.out, &PointCloud::from_flat(theta.mu())?)?;
    if let Some(path) = &t.sigma_out {
        let rows: Vec<Vec<String>> = point_sigma(&theta)
            .iter()
            .enumerate()
            .map(|(i, s)| vec![i.to_string(), cell(Some(*s))])
            .collect();
        io::save_csv(path, &["index", "sigma"], &rows)?;
    }
    if let Some(path) = &t.trace {
        save_trace(path, &trace, timing)?;
    }
    let kl = trace.last().map_or(f64::NAN, |r| r.value);
    Ok(vec![format!("final_kl {}", cell(Some(kl)))])
}

fn run_noise(t: &NoiseTask) -> CliResult<Vec<String>> {
    let clean = io::load_pgm(&t.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let noisy = pg_synthesize(&clean, t.beta1, t.beta2, &mut rng)?;
    io::save_pgm(&t.out, &noisy, t.maxval)?;
    Ok(vec![format!("psnr {}", cell(Some(psnr(noisy.pixels(), clean.pixels(), 1.0)?)))])
}

/// One row of the comparison summary.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub final_kl: f64,
    pub quality: Option<f64>,
    pub seconds: f64,
}

/// Runs every optimizer of `c`, writing `trace_<label>.csv` for each and
/// `summary.csv`. A failing optimizer is reported and recorded with NaN
/// values; the others still run.
pub fn run_compare(c: &CompareConfig, timing: bool) -> CliResult<Vec<String>> {
    enum Loaded {
        Denoise {
            model: PoissonGaussianModel,
            clean: Option<Image>,
        },
        Flow {
            i1: Image,
            i2: Image,
            gt: Option<FlowField>,
            params: FlowParams,
        },
    }
    let loaded = match &c.problem {
        CompareProblem::Denoise { input, clean, params } => {
            let noisy = io::load_pgm(input)?;
            let clean = clean.as_deref().map(io::load_pgm).transpose()?;
            if let Some(cl) = &clean {
                same_shape(&noisy, cl, "--clean")?;
            }
            Loaded::Denoise {
                model: PoissonGaussianModel::new(noisy, *params)?,
                clean,
            }
        }
        CompareProblem::Flow {
            frame1,
            frame2,
            gt,
            params,
        } => {
            let (i1, i2) = load_frames(frame1, frame2)?;
            let gt = gt.as_deref().map(io::load_flo).transpose()?;
            if let Some(g) = &gt {
                flow_shape(g, &i1, "--gt")?;
            }
            Loaded::Flow {
                i1,
                i2,
                gt,
                params: *params,
            }
        }
    };

    let mut rows = Vec::new();
    let mut report = Vec::new();
    let mut failed = 0;
    for run in &c.runs {
        let result = match &loaded {
            Loaded::Denoise { model, clean } => optimize(run, model, model.observed().pixels()).and_then(|o| {
                let q = clean.as_ref().map(|cl| psnr(&o.mean, cl.pixels(), 1.0)).transpose()?;
                Ok((o, q))
            }),
            Loaded::Flow { i1, i2, gt, params } => {
                let init = FlowField::zeros(i1.width(), i1.height());
                optimize_flow(run, i1, i2, &init, params).and_then(|o| {
                    let q = match gt {
                        Some(g) => Some(aepe(&FlowField::new(g.width(), g.height(), o.mean.clone())?, g)?),
                        None => None,
                    };
                    Ok((o, q))
                })
            }
        };
        match result {
            Ok((o, quality)) => {
                save_trace(&c.out_dir.join(format!("trace_{}.csv", run.label)), &o.trace, timing)?;
                report.push(format!(
                    "{} final_kl {} seconds {}",
                    run.label,
                    cell(Some(o.final_kl())),
                    cell(Some(o.seconds))
                ));
                rows.push(SummaryRow {
                    label: run.label.clone(),
                    final_kl: o.final_kl(),
                    quality,
                    seconds: o.seconds,
                });
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", run.label);
                rows.push(SummaryRow {
                    label: run.label.clone(),
                    final_kl: f64::NAN,
                    quality: Some(f64::NAN),
                    seconds: f64::NAN,
                });
            }
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                cell(Some(r.final_kl)),
                cell(r.quality),
                if timing { cell(Some(r.seconds)) } else { "0".into() },
            ]
        })
        .collect();
    io::save_csv(
        &c.out_dir.join("summary.csv"),
        &["optimizer", "final_kl", "psnr_or_aepe", "seconds_total"],
        &table,
    )?;
    if failed > 0 {
        for line in &report {
            println!("{line}");
        }
        return Err(CliError::PartialFailure {
            failed,
            total: c.runs.len(),
        });
    }
    Ok(report)
}

/// Runs the configured task and returns report lines for stdout.
pub fn execute(config: &RunConfig) -> CliResult<Vec<String>> {
    match &config.task {
        Task::Denoise(t) => run_denoise(t, config.timing),
        Task::Flow(t) => run_flow(t, config.timing),
        Task::Lop(t) => run_lop(t, config.timing),
        Task::Noise(t) => run_noise(t),
        Task::Compare(c) => run_compare(c, config.timing),
    }
}
