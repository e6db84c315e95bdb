//! Poisson-Gaussian denoising.
//!
//! The likelihood is Gaussian with intensity-dependent variance
//! `σ(x)² = β₁x + β₂`, the prior a pairwise robust MRF on horizontal and
//! vertical forward differences:
//!
//! `E(x, y) = λ_D/2 Σ_l (x_l − y_l)²/σ(x_l)² + λ_S Σ_j Σ_l ρ_S((f_j * x)_l)`.
//!
//! Samples drawn around the mean can leave the range where `β₁x + β₂ > 0`,
//! so the variance is floored at `variance_floor` everywhere.
//!
//! Intensities are assumed normalized to `[0, 1]` by the caller.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::energy::{EnergyModel, FilterStencil, GeneralizedCharbonnier, LinearizedGradient, Smoothness};
use crate::error::{check_len, Result, SviglError};
use crate::image::Image;
use crate::linops::SparseSymMatrix;

/// Noise and energy parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PGParams {
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub penalty: GeneralizedCharbonnier,
    pub variance_floor: f64,
}

impl PGParams {
    /// Parameters with the variance floor set to `β₂`.
    pub fn new(beta1: f64, beta2: f64, lambda_d: f64, lambda_s: f64, penalty: GeneralizedCharbonnier) -> Result<Self> {
        let p = Self {
            beta1,
            beta2,
            lambda_d,
            lambda_s,
            penalty,
            variance_floor: beta2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1 < 0.0 || self.beta2 < 0.0 || (self.beta1 == 0.0 && self.beta2 == 0.0) {
            return Err(SviglError::InvalidParameter(format!(
                "noise parameters must be nonnegative and not both zero (β₁={}, β₂={})",
                self.beta1, self.beta2
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(SviglError::InvalidParameter("variance floor must be positive".into()));
        }
        if self.lambda_d < 0.0 || self.lambda_s < 0.0 {
            return Err(SviglError::InvalidParameter("term weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Returns `(σ², floored)`.
    fn variance(&self, x: f64) -> (f64, bool) {
        let v = self.beta1 * x + self.beta2;
        if v < self.variance_floor {
            (self.variance_floor, true)
        } else {
            (v, false)
        }
    }
}

/// Synthesizes `y = clip(x + √(max(β₁x + β₂, 0))·n, 0, 1)` with standard
/// normal `n`.
pub fn pg_synthesize<R: Rng + ?Sized>(clean: &Image, beta1: f64, beta2: f64, rng: &mut R) -> Result<Image> {
    if beta1 < 0.0 || beta2 < 0.0 {
        return Err(SviglError::InvalidParameter(format!(
            "noise parameters must be nonnegative (β₁={beta1}, β₂={beta2})"
        )));
    }
    let pixels = clean
        .pixels()
        .iter()
        .map(|&x| {
            let n: f64 = rng.sample(StandardNormal);
            let sd = (beta1 * x + beta2).max(0.0).sqrt();
            (x + sd * n).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(clean.width(), clean.height(), pixels)
}

/// The denoising energy for a fixed noisy observation.
#[derive(Debug, Clone)]
pub struct PoissonGaussianModel {
    observed: Image,
    params: PGParams,
    smoothness: Smoothness,
}

impl PoissonGaussianModel {
    pub fn new(observed: Image, params: PGParams) -> Result<Self> {
        params.validate()?;
        let smoothness = Smoothness {
            width: observed.width(),
            height: observed.height(),
            channels: 1,
            stencils: FilterStencil::derivative_pair(),
            penalty: params.penalty,
            coupled: false,
        };
        Ok(Self {
            observed,
            params,
            smoothness,
        })
    }

    pub fn observed(&self) -> &Image {
        &self.observed
    }

    pub fn params(&self) -> &PGParams {
        &self.params
    }

    pub fn data_energy(&self, x: &[f64]) -> Result<f64> {
        check_len(self.observed.len(), x.len())?;
        Ok(0.5
            * x.iter()
                .zip(self.observed.pixels())
                .map(|(&x, &y)| (x - y) * (x - y) / self.params.variance(x).0)
                .sum::<f64>())
    }

    fn data_grad(&self, x: &[f64]) -> Vec<f64> {
        let b1 = self.params.beta1;
        x.iter()
            .zip(self.observed.pixels())
            .map(|(&x, &y)| {
                let (v, floored) = self.params.variance(x);
                let r = x - y;
                if floored {
                    r / v
                } else {
                    r / v - b1 * r * r / (2.0 * v * v)
                }
            })
            .collect()
    }

    /// Diagonal linearization of the (unweighted) data term.
    pub fn data_linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        check_len(self.observed.len(), x.len())?;
        let (b1, b2) = (self.params.beta1, self.params.beta2);
        let mut diag = Vec::with_capacity(x.len());
        let mut b = Vec::with_capacity(x.len());
        for (&x, &y) in x.iter().zip(self.observed.pixels()) {
            let (v, floored) = self.params.variance(x);
            if floored {
                diag.push(1.0 / v);
                b.push(-y / v);
            } else {
                let v2 = v * v;
                diag.push((0.5 * b1 * x + b2 + b1 * y) / v2);
                b.push(-(y / v + b1 * y * y / (2.0 * v2)));
            }
        }
        LinearizedGradient::new(SparseSymMatrix::from_diagonal(&diag)?, b, x.to_vec())
    }
}

impl EnergyModel for PoissonGaussianModel {
    fn dim(&self) -> usize {
        self.observed.len()
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        let data = self.data_energy(x)?;
        let smooth = if self.params.lambda_s == 0.0 {
            0.0
        } else {
            self.smoothness.energy(x)?
        };
        let e = self.params.lambda_d * data + self.params.lambda_s * smooth;
        if e.is_finite() {
            Ok(e)
        } else {
            Err(SviglError::NonFiniteEnergy)
        }
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut g = self.data_grad(x);
        g.iter_mut().for_each(|v| *v *= self.params.lambda_d);
        if self.params.lambda_s != 0.0 {
            for (gi, si) in g.iter_mut().zip(self.smoothness.grad(x)?) {
                *gi += self.params.lambda_s * si;
            }
        }
        Ok(g)
    }

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        let data = self.data_linearize(x)?;
        let mut a = data.a.scaled(self.params.lambda_d);
        if self.params.lambda_s != 0.0 {
            a = a.add(&self.smoothness.linearize(x)?.scaled(self.params.lambda_s))?;
        }
        let b = data.b.iter().map(|v| v * self.params.lambda_d).collect();
        LinearizedGradient::new(a, b, x.to_vec())
    }

    /// The data diagonal is nonnegative for nonnegative observations; samples
    /// below zero hit the variance floor, which keeps the entry positive.
    fn psd_guaranteed(&self) -> bool {
        self.params.variance_floor <= self.params.beta2 && self.observed.pixels().iter().all(|&y| y >= 0.0)
    }
}

pub fn pg_energy(x: &Image, y: &Image, params: &PGParams) -> Result<f64> {
    x.same_shape(y)?;
    PoissonGaussianModel::new(y.clone(), *params)?.energy(x.pixels())
}

pub fn pg_data_linearize(x: &Image, y: &Image, params: &PGParams) -> Result<LinearizedGradient> {
    x.same_shape(y)?;
    PoissonGaussianModel::new(y.clone(), *params)?.data_linearize(x.pixels())
}

pub fn pg_linearize(x: &Image, y: &Image, params: &PGParams) -> Result<LinearizedGradient> {
    x.same_shape(y)?;
    PoissonGaussianModel::new(y.clone(), *params)?.linearize(x.pixels())
}
