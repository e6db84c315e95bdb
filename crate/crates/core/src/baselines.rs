//! Comparison methods: reparameterization-gradient SVI with SGD or Adam,
//! MAP estimation by iterated gradient linearization, and the diagonal
//! Laplace approximation around a MAP estimate.
//!
//! The first-order methods use the exact entropy gradient `−1/σ`. Given the
//! same seed, sample count and sample options as an SVIGL run they consume
//! the identical stream of base noise, one sample set per iteration.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::energy::EnergyModel;
use crate::error::{check_len, Result, SviglError};
use crate::linops::sor_solve;
use crate::svigl::{draw_samples, kl_unnormalized, SampleOptions, SampleSet, VariationalGaussian, SIGMA_MIN};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Step-size schedule and sampling settings of a first-order SVI run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSchedule {
    pub kind: OptimizerKind,
    /// Initial step size `α₀`.
    pub step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    pub sample_count: usize,
    pub sample_options: SampleOptions,
    /// Fresh samples for a closing KL estimate; 0 disables it.
    pub final_kl_samples: usize,
}

impl OptimizerSchedule {
    pub fn adam(step: f64, iterations: usize, sample_count: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            step,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            iterations,
            sample_count,
            sample_options: SampleOptions::default(),
            final_kl_samples: 0,
        }
    }

    /// SGD whose step is divided by ten after each third of the iterations.
    pub fn sgd(step: f64, iterations: usize, sample_count: usize) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(step, iterations, sample_count)
        }
    }

    /// 4000 iterations, 12 samples, `α₀ = 1e-6`.
    pub fn sgd_reference() -> Self {
        Self::sgd(1e-6, 4000, 12)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("step size {} must be positive", self.step)));
        }
        if self.sample_count == 0 {
            return Err(SviglError::InvalidParameter("sample count must be at least 1".into()));
        }
        Ok(())
    }

    /// Step size used at 0-based iteration `t`.
    pub fn step_at(&self, t: usize) -> f64 {
        match self.kind {
            OptimizerKind::Adam => self.step,
            OptimizerKind::Sgd => {
                let third = (3 * t) / self.iterations.max(1);
                self.step / 10f64.powi(third.min(2) as i32)
            }
        }
    }
}

/// Reparameterization gradient of the sampled KL objective:
/// `g_μ = mean_i ∇E(x_i)`, `g_σ = mean_i z_i·∇E(x_i) − 1/σ`.
///
/// `∇E` comes from [`EnergyModel::grad`], which equals `A(x)x + b(x)` at
/// `x` without assembling the matrix.
///
pub fn reparam_grad<M: EnergyModel + ?Sized>(
    theta: &VariationalGaussian,
    samples: &SampleSet,
    model: &M,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = theta.dim();
    check_len(model.dim(), l)?;
    if samples.is_empty() {
        return Err(SviglError::EmptyInput);
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut g_mu = vec![0.0; l];
    let mut g_sigma = vec![0.0; l];
    for (z, x) in samples.z.iter().zip(&samples.x) {
        let g = model.grad(x)?;
        for k in 0..l {
            g_mu[k] += g[k] * inv_n;
            g_sigma[k] += z[k] * g[k] * inv_n;
        }
    }
    for (gs, s) in g_sigma.iter_mut().zip(theta.sigma()) {
        *gs -= 1.0 / s;
    }
    if g_mu.iter().chain(&g_sigma).any(|v| !v.is_finite()) {
        return Err(SviglError::NonFiniteGradient);
    }
    Ok((g_mu, g_sigma))
}

/// Stochastic-gradient SVI with SGD or Adam on the stacked `(μ, σ)`.
pub fn svi_first_order<M: EnergyModel + ?Sized>(
    theta0: &VariationalGaussian,
    model: &M,
    schedule: &OptimizerSchedule,
    seed: u64,
) -> Result<(VariationalGaussian, Trace)> {
    schedule.validate()?;
    check_len(model.dim(), theta0.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let l = theta0.dim();
    let mut params = theta0.stacked();
    let mut m = vec![0.0; 2 * l];
    let mut v = vec![0.0; 2 * l];
    let mut theta = theta0.clone();
    let mut trace = Trace::new();

    for t in 0..schedule.iterations {
        let samples = draw_samples(&theta, schedule.sample_count, &mut rng, schedule.sample_options)?;
        let kl = kl_unnormalized(&theta, model, &samples).map_err(|_| SviglError::NonFiniteKl(t))?;
        let (g_mu, g_sigma) = reparam_grad(&theta, &samples, model)?;
        let step = schedule.step_at(t);
        match schedule.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(g_mu.iter().chain(&g_sigma)) {
                    *p -= step * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (schedule.adam_beta1, schedule.adam_beta2);
                let k = (t + 1) as i32;
                let c1 = 1.0 - b1.powi(k);
                let c2 = 1.0 - b2.powi(k);
                for (i, g) in g_mu.iter().chain(&g_sigma).enumerate() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= step * m_hat / (v_hat.sqrt() + schedule.adam_eps);
                }
            }
        }
        for s in &mut params[l..] {
            *s = s.max(SIGMA_MIN);
        }
        theta = VariationalGaussian::new(params[..l].to_vec(), params[l..].to_vec())?;
        trace.push(t, kl, start.elapsed().as_secs_f64());
    }
    if schedule.final_kl_samples > 0 && schedule.iterations > 0 {
        let samples = draw_samples(&theta, schedule.final_kl_samples, &mut rng, SampleOptions::default())?;
        let kl = kl_unnormalized(&theta, model, &samples).map_err(|_| SviglError::NonFiniteKl(schedule.iterations))?;
        trace.push(schedule.iterations, kl, start.elapsed().as_secs_f64());
    }
    Ok((theta, trace))
}

/// SOR settings for a single linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SorSettings {
    pub iterations: usize,
    pub omega: f64,
}

impl Default for SorSettings {
    fn default() -> Self {
        Self {
            iterations: 100,
            omega: 1.95,
        }
    }
}

/// MAP estimation by gradient linearization: repeatedly solve
/// `A(x_t) x = −b(x_t)` warm-started at `x_t`.
///
/// The trace holds the energy of the initial state at index 0 and of each
/// iterate after it.
pub fn gl_map<M: EnergyModel + ?Sized>(
    x0: &[f64],
    model: &M,
    iterations: usize,
    sor: SorSettings,
) -> Result<(Vec<f64>, Trace)> {
    check_len(model.dim(), x0.len())?;
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut trace = Trace::new();
    trace.push(0, model.energy(&x)?, 0.0);
    for t in 0..iterations {
        let lin = model.linearize(&x)?;
        let rhs: Vec<f64> = lin.b.iter().map(|v| -v).collect();
        x = sor_solve(&lin.a, &rhs, &x, sor.iterations, sor.omega)?.solution;
        trace.push(t + 1, model.energy(&x)?, start.elapsed().as_secs_f64());
    }
    Ok((x, trace))
}

/// Diagonal Laplace approximation: `μ = x_map`, `σ_l = A(x_map)_ll^(−1/2)`.
pub fn laplace_diag<M: EnergyModel + ?Sized>(x_map: &[f64], model: &M) -> Result<VariationalGaussian> {
    let lin = model.linearize(x_map)?;
    let sigma = lin
        .a
        .diagonal()
        .iter()
        .enumerate()
        .map(|(index, &d)| {
            if d > 0.0 {
                Ok(d.sqrt().recip())
            } else {
                Err(SviglError::NonPositiveDiagonal { index, value: d })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    VariationalGaussian::new(x_map.to_vec(), sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{DiagonalQuadratic, GaussianEnergy};
    use crate::linops::SparseSymMatrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn entropy_only_gradient() {
        let zero = DiagonalQuadratic {
            center: vec![0.0; 3],
            precision: vec![0.0; 3],
        };
        let theta = VariationalGaussian::new(vec![0.1, 0.2, 0.3], vec![0.5, 1.0, 2.0]).unwrap();
        let samples = draw_samples(&theta, 4, &mut rng(1), SampleOptions::default()).unwrap();
        let (gm, gs) = reparam_grad(&theta, &samples, &zero).unwrap();
        assert!(gm.iter().all(|&g| g == 0.0));
        assert_eq!(gs, vec![-2.0, -1.0, -0.5]);
    }

    #[test]
    fn antithetic_cancels_mean_gradient() {
        let q = DiagonalQuadratic::isotropic(vec![0.0; 5], 1.0);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 5], 0.7).unwrap();
        let opts = SampleOptions {
            antithetic: true,
            standardize: false,
        };
        let samples = draw_samples(&theta, 6, &mut rng(2), opts).unwrap();
        let (gm, _) = reparam_grad(&theta, &samples, &q).unwrap();
        assert!(gm.iter().all(|&g| g == 0.0), "{gm:?}");
    }

    #[test]
    fn gradient_matches_finite_differences_of_sampled_kl() {
        let prec = SparseSymMatrix::from_dense(&[
            vec![2.0, 0.4, 0.0],
            vec![0.4, 1.5, -0.3],
            vec![0.0, -0.3, 1.0],
        ])
        .unwrap();
        let model = GaussianEnergy::new(vec![0.2, -0.1, 0.5], prec).unwrap();
        let theta = VariationalGaussian::new(vec![0.3, 0.0, -0.2], vec![0.4, 0.6, 0.8]).unwrap();
        let samples = draw_samples(&theta, 5, &mut rng(3), SampleOptions::default()).unwrap();
        let (gm, gs) = reparam_grad(&theta, &samples, &model).unwrap();

        let kl_at = |stacked: &[f64]| {
            let t = VariationalGaussian::new(stacked[..3].to_vec(), stacked[3..].to_vec()).unwrap();
            let s = SampleSet::from_noise(&t, samples.z.clone(), samples.options).unwrap();
            kl_unnormalized(&t, &model, &s).unwrap()
        };
        let base = theta.stacked();
        let h = 1e-6;
        for (i, g) in gm.iter().chain(&gs).enumerate() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let fd = (kl_at(&up) - kl_at(&dn)) / (2.0 * h);
            assert!((g - fd).abs() <= 1e-5 * (1.0 + g.abs()), "coord {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn sgd_schedule_cuts_by_ten_each_third() {
        let s = OptimizerSchedule::sgd(1e-6, 9, 12);
        let steps: Vec<f64> = (0..9).map(|t| s.step_at(t)).collect();
        assert_eq!(steps[0], 1e-6);
        assert_eq!(steps[2], 1e-6);
        assert!((steps[3] - 1e-7).abs() < 1e-22);
        assert!((steps[8] - 1e-8).abs() < 1e-22);
        assert_eq!(OptimizerSchedule::adam(0.01, 9, 1).step_at(8), 0.01);
    }

    #[test]
    fn zero_iterations_return_initial_state() {
        let q = DiagonalQuadratic::isotropic(vec![1.0; 2], 1.0);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 2], 1e-3).unwrap();
        let (out, trace) = svi_first_order(&theta, &q, &OptimizerSchedule::adam(0.01, 0, 4), 1).unwrap();
        assert_eq!(out, theta);
        assert!(trace.is_empty());
    }

    #[test]
    fn adam_reaches_isotropic_target() {
        let c = vec![0.4, -0.3];
        let s = 0.5;
        let q = DiagonalQuadratic::isotropic(c.clone(), s);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 2], 1e-3).unwrap();
        let sched = OptimizerSchedule::adam(0.01, 2000, 10);
        let (out, _) = svi_first_order(&theta, &q, &sched, 4).unwrap();
        for k in 0..2 {
            assert!((out.mu()[k] - c[k]).abs() <= 0.1, "mu {:?}", out.mu());
            assert!((out.sigma()[k] - s).abs() <= 0.1, "sigma {:?}", out.sigma());
        }
    }

    #[test]
    fn first_order_runs_are_deterministic() {
        let q = DiagonalQuadratic::isotropic(vec![1.0; 3], 0.3);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 3], 0.1).unwrap();
        for sched in [OptimizerSchedule::adam(0.01, 50, 4), OptimizerSchedule::sgd(1e-3, 50, 4)] {
            let (a, ta) = svi_first_order(&theta, &q, &sched, 9).unwrap();
            let (b, tb) = svi_first_order(&theta, &q, &sched, 9).unwrap();
            assert_eq!(a, b);
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn gl_map_on_quadratic_and_stationary_start() {
        let prec = SparseSymMatrix::from_dense(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let mean = vec![0.5, -1.5];
        let model = GaussianEnergy::new(mean.clone(), prec).unwrap();
        let sor = SorSettings {
            iterations: 200,
            omega: 1.0,
        };
        let (x, trace) = gl_map(&[0.0, 0.0], &model, 1, sor).unwrap();
        assert!((x[0] - mean[0]).abs() < 1e-10 && (x[1] - mean[1]).abs() < 1e-10);
        assert_eq!(trace.len(), 2);
        let (x, _) = gl_map(&mean, &model, 3, SorSettings::default()).unwrap();
        assert!((x[0] - mean[0]).abs() < 1e-12 && (x[1] - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn laplace_cases() {
        let q = DiagonalQuadratic::isotropic(vec![1.0, 2.0], 0.3);
        let lap = laplace_diag(&[1.0, 2.0], &q).unwrap();
        for s in lap.sigma() {
            assert!((s - 0.3).abs() < 1e-15);
        }
        let q = DiagonalQuadratic {
            center: vec![0.0; 2],
            precision: vec![4.0, 9.0],
        };
        let lap = laplace_diag(&[0.0, 0.0], &q).unwrap();
        assert_eq!(lap.sigma()[0], 0.5);
        assert!((lap.sigma()[1] - 1.0 / 3.0).abs() < 1e-15);
        let bad = DiagonalQuadratic {
            center: vec![0.0; 2],
            precision: vec![1.0, 0.0],
        };
        assert_eq!(
            laplace_diag(&[0.0, 0.0], &bad).unwrap_err(),
            SviglError::NonPositiveDiagonal { index: 1, value: 0.0 }
        );
    }
}
