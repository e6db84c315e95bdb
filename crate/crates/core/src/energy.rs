//! Energy-model contract and the robust penalty machinery shared by the
//! concrete models.
//!
//! A model exposes its energy, the exact gradient and a gradient
//! linearization `∇E(x) ≈ A(x₀)x + b(x₀)` that is exact at `x = x₀`. The
//! optimizers only ever talk to a model through [`EnergyModel::linearize`]
//! (and [`EnergyModel::energy`] for KL bookkeeping).

use crate::error::{check_len, Result, SviglError};
use crate::linops::SparseSymMatrix;

/// Generalized Charbonnier penalty with exponent `a` and scale `c`.
///
/// The derivative is
/// `ρ'(w) = w/c² · ((w/c)²/max(1, 2−a) + 1)^(a/2−1)`, and `ρ` is its
/// antiderivative anchored at `ρ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedCharbonnier {
    pub a: f64,
    pub c: f64,
}

impl GeneralizedCharbonnier {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || !a.is_finite() {
            return Err(SviglError::InvalidParameter(format!(
                "generalized Charbonnier needs finite a and c > 0, got a={a}, c={c}"
            )));
        }
        Ok(Self { a, c })
    }

    /// Quadratic penalty `w²/(2c²)`.
    pub fn quadratic(c: f64) -> Self {
        Self { a: 2.0, c }
    }

    fn shape(&self) -> f64 {
        (2.0 - self.a).max(1.0)
    }

    fn base(&self, w: f64) -> f64 {
        let s = w / self.c;
        s * s / self.shape() + 1.0
    }

    pub fn rho(&self, w: f64) -> f64 {
        let m = self.shape();
        let u = self.base(w);
        if self.a == 0.0 {
            0.5 * m * u.ln()
        } else {
            m / self.a * (pow(u, 0.5 * self.a) - 1.0)
        }
    }

    pub fn rho_prime(&self, w: f64) -> f64 {
        self.weight(w) * w
    }

    /// `ρ'(w)/w`, evaluated without dividing by `w`.
    pub fn weight(&self, w: f64) -> f64 {
        pow(self.base(w), 0.5 * self.a - 1.0) / (self.c * self.c)
    }
}

/// `u^e` with cheap paths for the exponents of the common penalties.
fn pow(u: f64, e: f64) -> f64 {
    match e {
        0.0 => 1.0,
        1.0 => u,
        0.5 => u.sqrt(),
        -0.5 => u.sqrt().recip(),
        -1.0 => u.recip(),
        _ => u.powf(e),
    }
}

pub fn gc_rho(p: &GeneralizedCharbonnier, w: f64) -> f64 {
    p.rho(w)
}

pub fn gc_rho_prime(p: &GeneralizedCharbonnier, w: f64) -> f64 {
    p.rho_prime(w)
}

pub fn gc_weight(p: &GeneralizedCharbonnier, w: f64) -> f64 {
    p.weight(w)
}

/// The linearized gradient `A·x + b` taken at `point`.
#[derive(Debug, Clone)]
pub struct LinearizedGradient {
    pub a: SparseSymMatrix,
    pub b: Vec<f64>,
    pub point: Vec<f64>,
}

impl LinearizedGradient {
    pub fn new(a: SparseSymMatrix, b: Vec<f64>, point: Vec<f64>) -> Result<Self> {
        check_len(a.dim(), b.len())?;
        check_len(a.dim(), point.len())?;
        Ok(Self { a, b, point })
    }

    /// Evaluates `A·x + b`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ax = self.a.matvec(x)?;
        ax.iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        Ok(ax)
    }

    /// The gradient reproduced at the linearization point.
    pub fn gradient_at_point(&self) -> Vec<f64> {
        self.apply(&self.point).expect("point has the matrix dimension")
    }
}

/// An energy `E(x)` over a state of fixed dimension.
pub trait EnergyModel {
    fn dim(&self) -> usize;

    fn energy(&self, x: &[f64]) -> Result<f64>;

    /// Exact gradient, computed independently of the linearization.
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient>;

    /// Whether `linearize(x).a` is positive semi-definite for every valid `x`.
    fn psd_guaranteed(&self) -> bool;
}

/// Spatial filter as a list of `(row offset, column offset, coefficient)` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStencil {
    pub taps: Vec<(isize, isize, f64)>,
}

impl FilterStencil {
    pub fn new(taps: Vec<(isize, isize, f64)>) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|t| !t.2.is_finite()) {
            return Err(SviglError::InvalidParameter(
                "stencil needs at least one finite tap".into(),
            ));
        }
        Ok(Self { taps })
    }

    /// Forward difference `x(r, c+1) − x(r, c)`.
    pub fn horizontal_difference() -> Self {
        Self {
            taps: vec![(0, 0, -1.0), (0, 1, 1.0)],
        }
    }

    /// Forward difference `x(r+1, c) − x(r, c)`.
    pub fn vertical_difference() -> Self {
        Self {
            taps: vec![(0, 0, -1.0), (1, 0, 1.0)],
        }
    }

    pub fn derivative_pair() -> Vec<Self> {
        vec![Self::horizontal_difference(), Self::vertical_difference()]
    }

    /// Fills `out` with the pixel indices touched at `(row, col)`. Returns
    /// false when any tap falls outside the image; such rows of the filter
    /// matrix are dropped.
    fn support(&self, width: usize, height: usize, row: usize, col: usize, out: &mut Vec<(usize, f64)>) -> bool {
        out.clear();
        for &(dr, dc, coef) in &self.taps {
            let r = row as isize + dr;
            let c = col as isize + dc;
            if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                return false;
            }
            out.push((r as usize * width + c as usize, coef));
        }
        true
    }
}

/// Robust smoothness term `Σ_j Σ_l ρ((f_j * x)_l)` over a multi-channel image.
///
/// The state stacks channels: channel `k` of pixel `l` lives at `k·L + l`.
/// With `coupled` set the penalty acts on the Euclidean norm of the
/// per-pixel filter response across channels, otherwise on each channel
/// separately.
#[derive(Debug, Clone)]
pub struct Smoothness {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub stencils: Vec<FilterStencil>,
    pub penalty: GeneralizedCharbonnier,
    pub coupled: bool,
}

impl Smoothness {
    pub fn dim(&self) -> usize {
        self.width * self.height * self.channels
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Visits every filter row that lies fully inside the image, passing the
    /// touched pixel indices and the per-channel responses.
    fn for_each_response(&self, x: &[f64], mut visit: impl FnMut(&[(usize, f64)], &[f64])) {
        let l = self.pixels();
        let mut resp = vec![0.0; self.channels];
        let mut support = Vec::new();
        for stencil in &self.stencils {
            for row in 0..self.height {
                for col in 0..self.width {
                    if !stencil.support(self.width, self.height, row, col, &mut support) {
                        continue;
                    }
                    for (k, r) in resp.iter_mut().enumerate() {
                        *r = support.iter().map(|&(idx, coef)| coef * x[k * l + idx]).sum();
                    }
                    visit(&support, &resp);
                }
            }
        }
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim(), x.len())?;
        let mut total = 0.0;
        self.for_each_response(x, |_, resp| {
            if self.coupled {
                total += self.penalty.rho(norm(resp));
            } else {
                total += resp.iter().map(|&w| self.penalty.rho(w)).sum::<f64>();
            }
        });
        Ok(total)
    }

    /// `Σ_j F_jᵀ ρ'(F_j x)`, with the coupled variant using `ρ'(‖w‖)·w/‖w‖`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let l = self.pixels();
        let mut g = vec![0.0; x.len()];
        self.for_each_response(x, |support, resp| {
            for (k, &w) in resp.iter().enumerate() {
                let d = if self.coupled {
                    let n = norm(resp);
                    if n == 0.0 {
                        0.0
                    } else {
                        self.penalty.rho_prime(n) * w / n
                    }
                } else {
                    self.penalty.rho_prime(w)
                };
                for &(idx, coef) in support {
                    g[k * l + idx] += coef * d;
                }
            }
        });
        Ok(g)
    }

    /// `Σ_j F_jᵀ D(ρ̃(F_j x)) F_j`.
    pub fn linearize(&self, x: &[f64]) -> Result<SparseSymMatrix> {
        check_len(self.dim(), x.len())?;
        let l = self.pixels();
        let mut triplets = Vec::new();
        self.for_each_response(x, |support, resp| {
            let shared = self.coupled.then(|| self.penalty.weight(norm(resp)));
            for (k, &w) in resp.iter().enumerate() {
                let weight = shared.unwrap_or_else(|| self.penalty.weight(w));
                for &(i, ci) in support {
                    for &(j, cj) in support {
                        triplets.push((k * l + i, k * l + j, weight * (ci * cj)));
                    }
                }
            }
        });
        SparseSymMatrix::from_triplets(self.dim(), triplets)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Builds the smoothness matrix `Σ_j F_jᵀ D(ρ̃(F_j x)) F_j` for a
/// `width x height` image with `channels` stacked channels.
pub fn smoothness_linearize(
    x: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    stencils: &[FilterStencil],
    p: GeneralizedCharbonnier,
    coupled: bool,
) -> Result<SparseSymMatrix> {
    Smoothness {
        width,
        height,
        channels,
        stencils: stencils.to_vec(),
        penalty: p,
        coupled,
    }
    .linearize(x)
}

/// Max over coordinates of `|g_i − fd_i| / (1 + |g_i|)` using central
/// differences with step `h`.
pub fn grad_check<M: EnergyModel + ?Sized>(model: &M, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(SviglError::InvalidParameter(format!("step {h} must be positive")));
    }
    let g = model.grad(x)?;
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = model.energy(&probe)?;
        probe[i] = x[i] - h;
        let minus = model.energy(&probe)?;
        probe[i] = x[i];
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / (1.0 + g[i].abs()));
    }
    Ok(worst)
}

/// `‖A(x)x + b(x) − ∇E(x)‖∞ / (1 + ‖∇E(x)‖∞)`.
pub fn linearization_defect<M: EnergyModel + ?Sized>(model: &M, x: &[f64]) -> Result<f64> {
    let lin = model.linearize(x)?;
    let reproduced = lin.apply(x)?;
    let g = model.grad(x)?;
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = reproduced
        .iter()
        .zip(&g)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(diff / (1.0 + gmax))
}

/// `E(x) = ½ Σ_l q_l (x_l − c_l)²` with diagonal precision `q`.
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    pub center: Vec<f64>,
    pub precision: Vec<f64>,
}

impl DiagonalQuadratic {
    /// `‖x − c‖² / (2s²)`.
    pub fn isotropic(center: Vec<f64>, scale: f64) -> Self {
        let precision = vec![1.0 / (scale * scale); center.len()];
        Self { center, precision }
    }
}

impl EnergyModel for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim(), x.len())?;
        Ok(x
            .iter()
            .zip(&self.center)
            .zip(&self.precision)
            .map(|((x, c), q)| 0.5 * q * (x - c) * (x - c))
            .sum())
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(x
            .iter()
            .zip(&self.center)
            .zip(&self.precision)
            .map(|((x, c), q)| q * (x - c))
            .collect())
    }

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        check_len(self.dim(), x.len())?;
        let a = SparseSymMatrix::from_diagonal(&self.precision)?;
        let b = self
            .center
            .iter()
            .zip(&self.precision)
            .map(|(c, q)| -q * c)
            .collect();
        LinearizedGradient::new(a, b, x.to_vec())
    }

    fn psd_guaranteed(&self) -> bool {
        self.precision.iter().all(|&q| q >= 0.0)
    }
}

/// `E(x) = ½ (x − m)ᵀ Q (x − m)` for a symmetric precision matrix `Q`.
#[derive(Debug, Clone)]
pub struct GaussianEnergy {
    pub mean: Vec<f64>,
    pub precision: SparseSymMatrix,
}

impl GaussianEnergy {
    pub fn new(mean: Vec<f64>, precision: SparseSymMatrix) -> Result<Self> {
        check_len(precision.dim(), mean.len())?;
        Ok(Self { mean, precision })
    }

    fn centered(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(x.iter().zip(&self.mean).map(|(x, m)| x - m).collect())
    }
}

impl EnergyModel for GaussianEnergy {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * self.precision.quadratic_form(&self.centered(x)?)?)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.precision.matvec(&self.centered(x)?)
    }

    fn linearize(&self, x: &[f64]) -> Result<LinearizedGradient> {
        check_len(self.dim(), x.len())?;
        let qm = self.precision.matvec(&self.mean)?;
        let b = qm.into_iter().map(|v| -v).collect();
        LinearizedGradient::new(self.precision.clone(), b, x.to_vec())
    }

    fn psd_guaranteed(&self) -> bool {
        false
    }
}
