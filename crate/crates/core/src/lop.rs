//! Locally optimal projection (LOP) point-cloud smoothing.
//!
//! For data points `P`, the previous estimate `C` and the new estimate `X`:
//!
//! `E(X) = Σ_i Σ_j ‖x_i − p_j‖·h(‖c_i − p_j‖) − λ Σ_i Σ_{i'≠i} ‖x_i − c_{i'}‖·h(‖c_i − c_{i'}‖)`
//!
//! with `h(r) = exp(−16r²/h0²)`. The state of `n` points is stored point
//! major: `(x₀, y₀, z₀, x₁, …)`. The gradient linearizes to a diagonal that
//! is the same for the three coordinates of a point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::energy::{EnergyModel, LinearizedGradient};
use crate::error::{check_len, Result, SviglError};
use crate::linops::SparseSymMatrix;
use crate::svigl::{run_with_rng, SviglConfig, VariationalGaussian};
use crate::trace::Trace;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(SviglError::EmptyInput);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(SviglError::InvalidParameter(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    /// Reads a point-major state of length `3n`.
    pub fn from_flat(state: &[f64]) -> Result<Self> {
        if state.len() % 3 != 0 {
            return Err(SviglError::ShapeMismatch(format!("state length {} is not a multiple of 3", state.len())));
        }
        Self::new(state.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// `count` distinct points drawn uniformly without replacement, kept in
    /// their original order.
    pub fn subsample(&self, count: usize, seed: u64) -> Result<Self> {
        let idx = subsample_indices(self.len(), count, seed)?;
        Self::new(idx.into_iter().map(|i| self.points[i]).collect())
    }
}

/// Sorted indices of `count` of `n` items drawn uniformly without replacement.
pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > n {
        return Err(SviglError::InvalidParameter(format!("cannot draw {count} seeds from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LopParams {
    /// Kernel bandwidth `h0`.
    pub h0: f64,
    /// Repulsion weight `λ`.
    pub lambda: f64,
    /// Floor on distances and on the diagonal.
    pub eps: f64,
    pub outer_iterations: usize,
    /// Samples per SVIGL update.
    pub samples: usize,
    /// Initial posterior standard deviation.
    pub sigma_init: f64,
}

impl LopParams {
    pub fn new(h0: f64, lambda: f64) -> Self {
        Self {
            h0,
            lambda,
            eps: 1e-6 * h0,
            outer_iterations: 10,
            samples: 5,
            sigma_init: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("bandwidth {} must be positive", self.h0)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("eps {} must be positive", self.eps)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("lambda {} must be nonnegative", self.lambda)));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("sigma_init {} must be positive", self.sigma_init)));
        }
        if self.samples == 0 {
            return Err(SviglError::InvalidParameter("samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kernel(&self, r: f64) -> f64 {
        (-16.0 * r * r / (self.h0 * self.h0)).exp()
    }
}

fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Kernel-weighted mean of `p` around each seed.
pub fn lop_init(p: &PointCloud, seeds: &PointCloud, params: &LopParams) -> Result<PointCloud> {
    params.validate()?;
    let out = seeds
        .points
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for q in &p.points {
                let w = params.kernel(dist(s, q));
                total += w;
                for k in 0..3 {
                    acc[k] += w * q[k];
                }
            }
            if total < 1e-300 {
                return Err(SviglError::DegenerateKernel(i));
            }
            Ok(acc.map(|v| v / total))
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(out)
}

/// The energy with `C` frozen.
#[derive(Debug, Clone)]
pub struct LopModel {
    p: PointCloud,
    c: PointCloud,
    params: LopParams,
    /// `h(‖c_i − p_j‖)`, row `i`.
    data_weights: Vec<Vec<f64>>,
    /// `h(‖c_i − c_{i'}‖)`, zero on the diagonal.
    repulsion_weights: Vec<Vec<f64>>,
}

impl LopModel {
    pub fn new(p: PointCloud, c: PointCloud, params: LopParams) -> Result<Self> {
        params.validate()?;
        let data_weights = c
            .points
            .iter()
            .map(|ci| p.points.iter().map(|pj| params.kernel(dist(ci, pj))).collect())
            .collect();
        let repulsion_weights = c
            .points
            .iter()
            .enumerate()
            .map(|(i, ci)| {
                c.points
                    .iter()
                    .enumerate()
                    .map(|(k, ck)| if k == i { 0.0 } else { params.kernel(dist(ci, ck)) })
                    .collect()
            })
            .collect();
        Ok(Self {
            p,
            c,
            params,
            data_weights,
            repulsion_weights,
        })
    }

    pub fn points(&self) -> usize {
        self.c.len()
    }

    fn point(x: &[f64], i: usize) -> Point {
        [x[3 * i], x[3 * i + 1], x[3 * i + 2]]
    }

    /// Per-point diagonal `a_i` and offset `b_i`, before the diagonal floor.
    fn terms(&self, x: &[f64], i: usize) -> (f64, Point) {
        let xi = Self::point(x, i);
        let eps = self.params.eps;
        let mut a = 0.0;
        let mut b = [0.0; 3];
        for (pj, &h) in self.p.points.iter().zip(&self.data_weights[i]) {
            let w = h / dist(&xi, pj).max(eps);
            a += w;
            for k in 0..3 {
                b[k] -= w * pj[k];
            }
        }
        if self.params.lambda != 0.0 {
            for (ck, &h) in self.c.points.iter().zip(&self.repulsion_weights[i]) {
                if h == 0.0 {
                    continue;
                }
                let w = self.params.lambda * h / dist(&xi, ck).max(eps);
                a -= w;
                for k in 0..3 {
                    b[k] += w * ck[k];
                }
            }
        }
        (a, b)
    }
}

impl EnergyModel for LopModel {
    fn dim(&self) -> usize {
        3 * self.c.len()
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim(), x.len())?;
        let mut e = 0.0;
        for i in 0..self.points() {
            let xi = Self::point(x, i);
            for (pj, &h) in self.p.points.iter().zip(&self.data_weights[i]) {
                e += dist(&xi, pj) * h;
            }
            for (ck, &h) in self.c.points.iter().zip(&self.repulsion_weights[i]) {
                e -= self.params.lambda * dist(&xi, ck) * h;
            }
        }
        if e.is_finite() {
            Ok(e)
        } else {
            Err(SviglError::NonFiniteEnergy)
        }
    }

    /// Unit-vector gradient; coincident pairs contribute nothing.
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut g = vec![0.0; x.len()];
        let mut add = |i: usize, xi: &Point, q: &Point, scale: f64| {
            let d = dist(xi, q);
            if d > 0.0 {
                for k in 0..3 {
                    g[3 * i + k] += scale * (xi[k] - q[k]) / d;
                }
            }
        };
        for i in 0..self.points() {
            let xi = Self::point(x, i);
            for (pj, &h) in self.p.points.iter().zip(&self.data_weights[i]) {
                add(i, &xi, pj, h);
            }
            for (ck, &h) in self.c.points.iter().zip(&self.repulsion_weights[i]) {
                add(i, &xi, ck, -self.params.lambda * h);
            }
        }
        Ok(g)
    }

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        check_len(self.dim(), x.len())?;
        let mut diag = Vec::with_capacity(x.len());
        let mut b = Vec::with_capacity(x.len());
        for i in 0..self.points() {
            let (a, bi) = self.terms(x, i);
            let a = a.max(self.params.eps);
            diag.extend([a; 3]);
            b.extend(bi);
        }
        LinearizedGradient::new(SparseSymMatrix::from_diagonal(&diag)?, b, x.to_vec())
    }

    /// The floored diagonal is always positive.
    fn psd_guaranteed(&self) -> bool {
        true
    }
}

/// Diagonal linearization of the LOP energy at `x` with `C = c`.
pub fn lop_linearize(x: &PointCloud, p: &PointCloud, c: &PointCloud, params: &LopParams) -> Result<LinearizedGradient> {
    check_len(c.len(), x.len())?;
    LopModel::new(p.clone(), c.clone(), *params)?.linearize(&x.flatten())
}

/// Fixed-point LOP with one SVIGL update per iteration.
///
/// Starts from `lop_init(p, seeds)` with `σ = params.sigma_init`. Each of the
/// `params.outer_iterations` steps freezes `C` at the current mean and takes
/// a single SVIGL step with `params.samples` samples; the remaining settings
/// come from `config`, whose `iterations` and `sample_count` are ignored.
pub fn lop_run(
    p: &PointCloud,
    seeds: &PointCloud,
    params: &LopParams,
    config: &SviglConfig,
) -> Result<(VariationalGaussian, Trace)> {
    params.validate()?;
    let init = lop_init(p, seeds, params)?;
    let step_config = SviglConfig {
        iterations: 1,
        sample_count: params.samples,
        final_kl_samples: 0,
        ..*config
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = VariationalGaussian::with_constant_sigma(init.flatten(), params.sigma_init)?;
    let mut trace = Trace::new();
    for _ in 0..params.outer_iterations {
        let c = PointCloud::from_flat(theta.mu())?;
        let model = LopModel::new(p.clone(), c, *params)?;
        let (next, t) = run_with_rng(&theta, &model, &step_config, &mut rng)?;
        trace.extend_shifted(&t);
        theta = next;
    }
    Ok((theta, trace))
}

/// Mean of the three coordinate standard deviations of each point.
pub fn point_sigma(theta: &VariationalGaussian) -> Vec<f64> {
    theta.sigma().chunks_exact(3).map(|s| s.iter().sum::<f64>() / 3.0).collect()
}
