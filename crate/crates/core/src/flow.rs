//! Optical flow with a brightness-constancy data term.
//!
//! **Substitution:** the data term penalizes the linearized brightness
//! constancy residual `I_t + I_x(u − u⁰) + I_y(v − v⁰)` only. The gradient
//! constancy term of the full EpicFlow energy is not implemented.
//!
//! The energy is
//! `λ_D Σ_l ρ_D(I_t + ∇I₂ᵀ(x_l − x⁰_l)) + λ_S Σ_j Σ_l ρ_S(‖(f_j ∗ x)_l‖)`
//! where `x⁰` is the flow the second image was warped with. Inference is
//! single scale: an outer loop re-warps at the current mean and runs an
//! inner MAP or SVIGL routine on the fixed linearized data term.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{gl_map, svi_first_order, OptimizerSchedule, SorSettings};
use crate::energy::{EnergyModel, FilterStencil, GeneralizedCharbonnier, LinearizedGradient, Smoothness};
use crate::error::{check_len, Result, SviglError};
use crate::image::Image;
use crate::linops::SparseSymMatrix;
use crate::svigl::{run_with_rng, SviglConfig, VariationalGaussian};
use crate::trace::Trace;

/// Initial standard deviation of the flow posterior.
pub const FLOW_SIGMA_INIT: f64 = 1e-3;

/// Flow field stored as `(u_1..u_L, v_1..v_L)` over a row-major grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    state: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, state: Vec<f64>) -> Result<Self> {
        check_len(2 * width * height, state.len())?;
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(SviglError::InvalidParameter(format!("flow entry {i} is not finite")));
        }
        Ok(Self { width, height, state })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let l = width * height;
        let mut state = vec![u; 2 * l];
        state[l..].fill(v);
        Self { width, height, state }
    }

    /// Evaluates `f(row, col) -> (u, v)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let l = width * height;
        let mut state = vec![0.0; 2 * l];
        for r in 0..height {
            for c in 0..width {
                let (u, v) = f(r, c);
                state[r * width + c] = u;
                state[l + r * width + c] = v;
            }
        }
        Self { width, height, state }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn into_state(self) -> Vec<f64> {
        self.state
    }

    pub fn u(&self) -> &[f64] {
        &self.state[..self.pixels()]
    }

    pub fn v(&self) -> &[f64] {
        &self.state[self.pixels()..]
    }

    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let l = row * self.width + col;
        (self.state[l], self.state[self.pixels() + l])
    }

    fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(SviglError::ShapeMismatch(format!(
                "flow {}x{} vs image {width}x{height}",
                self.width, self.height
            )))
        }
    }
}

/// Temporal and spatial derivatives of the second image warped by `x⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpData {
    pub width: usize,
    pub height: usize,
    pub i_t: Vec<f64>,
    pub i_x: Vec<f64>,
    pub i_y: Vec<f64>,
    /// False where the warped position leaves the image; such pixels carry
    /// zero derivatives and no data weight.
    pub valid: Vec<bool>,
}

impl WarpData {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Brightness residual at pixel `l` for the flow `x`.
    fn residual(&self, l: usize, x: &[f64], x0: &[f64]) -> f64 {
        let n = self.pixels();
        self.i_t[l] + self.i_x[l] * (x[l] - x0[l]) + self.i_y[l] * (x[n + l] - x0[n + l])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub rho_d: GeneralizedCharbonnier,
    pub rho_s: GeneralizedCharbonnier,
    pub outer_iterations: usize,
}

impl FlowParams {
    pub fn new(lambda_d: f64, lambda_s: f64, rho_d: GeneralizedCharbonnier, rho_s: GeneralizedCharbonnier) -> Self {
        Self {
            lambda_d,
            lambda_s,
            rho_d,
            rho_s,
            outer_iterations: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_d", self.lambda_d), ("lambda_s", self.lambda_s)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(SviglError::InvalidParameter(format!("{name} = {w} must be nonnegative")));
            }
        }
        Ok(())
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        Self::new(
            100.0,
            5.0,
            GeneralizedCharbonnier { a: 1.0, c: 0.01 },
            GeneralizedCharbonnier { a: 1.0, c: 0.05 },
        )
    }
}

/// Central differences with one-sided differences on the border.
fn gradients(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
            gx[r * w + c] = diff(img.get(r, c0), img.get(r, c1), c1 - c0);
            gy[r * w + c] = diff(img.get(r0, c), img.get(r1, c), r1 - r0);
        }
    }
    (gx, gy)
}

/// Bilinear sample of a row-major grid at column `x`, row `y`, both inside
/// `[0, w−1] × [0, h−1]`.
fn bilinear(values: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let c0 = (x.floor() as usize).min(w - 1);
    let r0 = (y.floor() as usize).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let fx = x - c0 as f64;
    let fy = y - r0 as f64;
    let top = values[r0 * w + c0] * (1.0 - fx) + values[r0 * w + c1] * fx;
    let bottom = values[r1 * w + c0] * (1.0 - fx) + values[r1 * w + c1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Samples `I₂` and its derivatives at `l + x⁰_l` and forms `I_t = I₂(l + x⁰_l) − I₁(l)`.
pub fn warp_derivatives(i1: &Image, i2: &Image, x0: &FlowField) -> Result<WarpData> {
    i1.same_shape(i2)?;
    x0.same_shape(i1.width(), i1.height())?;
    let (w, h) = (i1.width(), i1.height());
    let n = w * h;
    let (gx, gy) = gradients(i2);
    let mut warp = WarpData {
        width: w,
        height: h,
        i_t: vec![0.0; n],
        i_x: vec![0.0; n],
        i_y: vec![0.0; n],
        valid: vec![false; n],
    };
    for r in 0..h {
        for c in 0..w {
            let l = r * w + c;
            let (u, v) = x0.at(r, c);
            let (px, py) = (c as f64 + u, r as f64 + v);
            if !(px >= 0.0 && px <= (w - 1) as f64 && py >= 0.0 && py <= (h - 1) as f64) {
                continue;
            }
            warp.valid[l] = true;
            warp.i_t[l] = bilinear(i2.pixels(), w, h, px, py) - i1.pixels()[l];
            warp.i_x[l] = bilinear(&gx, w, h, px, py);
            warp.i_y[l] = bilinear(&gy, w, h, px, py);
        }
    }
    Ok(warp)
}

fn check_warp(warp: &WarpData, x: &[f64], x0: &FlowField) -> Result<()> {
    x0.same_shape(warp.width, warp.height)?;
    check_len(2 * warp.pixels(), x.len())
}

/// Data term `Σ_l ρ_D(I_t + ∇I₂ᵀ(x_l − x⁰_l))` over valid pixels, unweighted.
pub fn flow_data_energy(warp: &WarpData, x: &[f64], x0: &FlowField, rho_d: &GeneralizedCharbonnier) -> Result<f64> {
    check_warp(warp, x, x0)?;
    Ok((0..warp.pixels())
        .filter(|&l| warp.valid[l])
        .map(|l| rho_d.rho(warp.residual(l, x, x0.state())))
        .sum())
}

/// Per-pixel blocks `ρ̃_D·ggᵀ` with `g = (I_x, I_y)` and
/// `b = ρ̃_D·I_t·g − A x⁰`, so that `A x + b = ρ'_D(residual)·g`.
pub fn flow_data_linearize(
    warp: &WarpData,
    x: &[f64],
    x0: &FlowField,
    rho_d: &GeneralizedCharbonnier,
) -> Result<LinearizedGradient> {
    check_warp(warp, x, x0)?;
    let n = warp.pixels();
    let x0s = x0.state();
    let mut triplets = Vec::with_capacity(4 * n);
    let mut b = vec![0.0; 2 * n];
    for l in (0..n).filter(|&l| warp.valid[l]) {
        let (gx, gy) = (warp.i_x[l], warp.i_y[l]);
        let wt = rho_d.weight(warp.residual(l, x, x0s));
        let (axx, axy, ayy) = (wt * gx * gx, wt * gx * gy, wt * gy * gy);
        triplets.extend([(l, l, axx), (l, n + l, axy), (n + l, l, axy), (n + l, n + l, ayy)]);
        b[l] = wt * gx * warp.i_t[l] - (axx * x0s[l] + axy * x0s[n + l]);
        b[n + l] = wt * gy * warp.i_t[l] - (axy * x0s[l] + ayy * x0s[n + l]);
    }
    LinearizedGradient::new(SparseSymMatrix::from_triplets(2 * n, triplets)?, b, x.to_vec())
}

/// The flow energy for a fixed warp.
#[derive(Debug, Clone)]
pub struct FlowModel {
    warp: WarpData,
    x0: FlowField,
    params: FlowParams,
    smoothness: Smoothness,
}

impl FlowModel {
    pub fn new(warp: WarpData, x0: FlowField, params: FlowParams) -> Result<Self> {
        params.validate()?;
        x0.same_shape(warp.width, warp.height)?;
        let smoothness = Smoothness {
            width: warp.width,
            height: warp.height,
            channels: 2,
            stencils: FilterStencil::derivative_pair(),
            penalty: params.rho_s,
            coupled: true,
        };
        Ok(Self {
            warp,
            x0,
            params,
            smoothness,
        })
    }

    pub fn warp(&self) -> &WarpData {
        &self.warp
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    fn data_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.warp.pixels();
        let mut g = vec![0.0; 2 * n];
        for l in (0..n).filter(|&l| self.warp.valid[l]) {
            let d = self.params.rho_d.rho_prime(self.warp.residual(l, x, self.x0.state()));
            g[l] = d * self.warp.i_x[l];
            g[n + l] = d * self.warp.i_y[l];
        }
        g
    }
}

impl EnergyModel for FlowModel {
    fn dim(&self) -> usize {
        2 * self.warp.pixels()
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        let data = flow_data_energy(&self.warp, x, &self.x0, &self.params.rho_d)?;
        let e = self.params.lambda_d * data + self.params.lambda_s * self.smoothness.energy(x)?;
        if e.is_finite() {
            Ok(e)
        } else {
            Err(SviglError::NonFiniteEnergy)
        }
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut g = self.data_grad(x);
        for (gi, si) in g.iter_mut().zip(self.smoothness.grad(x)?) {
            *gi = self.params.lambda_d * *gi + self.params.lambda_s * si;
        }
        Ok(g)
    }

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        let data = flow_data_linearize(&self.warp, x, &self.x0, &self.params.rho_d)?;
        let mut a = data.a.scaled(self.params.lambda_d);
        if self.params.lambda_s != 0.0 {
            a = a.add(&self.smoothness.linearize(x)?.scaled(self.params.lambda_s))?;
        }
        let b = data.b.iter().map(|v| v * self.params.lambda_d).collect();
        LinearizedGradient::new(a, b, x.to_vec())
    }

    fn psd_guaranteed(&self) -> bool {
        true
    }
}

/// Total flow energy for the warp computed at `x0`.
pub fn flow_energy(x: &FlowField, warp: &WarpData, x0: &FlowField, params: &FlowParams) -> Result<f64> {
    x.same_shape(warp.width, warp.height)?;
    FlowModel::new(warp.clone(), x0.clone(), *params)?.energy(x.state())
}

pub fn flow_linearize(x: &FlowField, warp: &WarpData, x0: &FlowField, params: &FlowParams) -> Result<LinearizedGradient> {
    x.same_shape(warp.width, warp.height)?;
    FlowModel::new(warp.clone(), x0.clone(), *params)?.linearize(x.state())
}

/// Inner routine run once per outer relinearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowInference {
    GlMap { iterations: usize, sor: SorSettings },
    /// SVIGL from `σ = sigma_init`; the posterior carries over between outer
    /// iterations and all draws come from one generator seeded with
    /// `config.seed`.
    Svigl { config: SviglConfig, sigma_init: f64 },
    /// First-order SVI; outer iteration `k` is seeded with `seed + k`.
    FirstOrder {
        schedule: OptimizerSchedule,
        sigma_init: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// Present for SVIGL and first-order inference.
    pub posterior: Option<VariationalGaussian>,
    /// Inner traces of all outer iterations, concatenated.
    pub trace: Trace,
}

pub fn flow_infer(
    i1: &Image,
    i2: &Image,
    init: &FlowField,
    params: &FlowParams,
    inner: &FlowInference,
) -> Result<FlowEstimate> {
    params.validate()?;
    i1.same_shape(i2)?;
    init.same_shape(i1.width(), i1.height())?;
    let (w, h) = (init.width(), init.height());
    let mut current = init.clone();
    let mut trace = Trace::new();
    let mut posterior = None;
    let mut rng = match inner {
        FlowInference::Svigl { config, sigma_init } => {
            posterior = Some(VariationalGaussian::with_constant_sigma(init.state().to_vec(), *sigma_init)?);
            Some(ChaCha8Rng::seed_from_u64(config.seed))
        }
        FlowInference::FirstOrder { sigma_init, .. } => {
            posterior = Some(VariationalGaussian::with_constant_sigma(init.state().to_vec(), *sigma_init)?);
            None
        }
        FlowInference::GlMap { .. } => None,
    };

    for k in 0..params.outer_iterations {
        let warp = warp_derivatives(i1, i2, &current)?;
        let model = FlowModel::new(warp, current.clone(), *params)?;
        let (mean, inner_trace) = match inner {
            FlowInference::GlMap { iterations, sor } => gl_map(current.state(), &model, *iterations, *sor)?,
            FlowInference::Svigl { config, .. } => {
                let theta = posterior.take().expect("set for SVIGL");
                let rng = rng.as_mut().expect("set for SVIGL");
                let (theta, t) = run_with_rng(&theta, &model, config, rng)?;
                let mean = theta.mu().to_vec();
                posterior = Some(theta);
                (mean, t)
            }
            FlowInference::FirstOrder { schedule, seed, .. } => {
                let theta = posterior.take().expect("set for first-order SVI");
                let (theta, t) = svi_first_order(&theta, &model, schedule, seed.wrapping_add(k as u64))?;
                let mean = theta.mu().to_vec();
                posterior = Some(theta);
                (mean, t)
            }
        };
        trace.extend_shifted(&inner_trace);
        current = FlowField::new(w, h, mean)?;
    }
    Ok(FlowEstimate {
        flow: current,
        posterior,
        trace,
    })
}

/// Average endpoint error `mean_l ‖x_l − x*_l‖`.
pub fn aepe(est: &FlowField, gt: &FlowField) -> Result<f64> {
    est.same_shape(gt.width, gt.height)?;
    let n = est.pixels();
    if n == 0 {
        return Err(SviglError::EmptyInput);
    }
    let total: f64 = (0..n)
        .map(|l| {
            let du = est.state[l] - gt.state[l];
            let dv = est.state[n + l] - gt.state[n + l];
            du.hypot(dv)
        })
        .sum();
    Ok(total / n as f64)
}
