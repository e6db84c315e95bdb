//! Gaussian mean-field inference with gradient linearization.
//!
//! Each iteration draws reparameterized samples `x_i = μ + σ·z_i`, asks the
//! model for its linearized gradient at every sample, and assembles the
//! stacked system over `θ = (μ, σ)`:
//!
//! ```text
//! A_μμ = mean_i A(x_i)              A_μσ = mean_i A(x_i) D(z_i)
//! A_σμ = mean_i D(z_i) A(x_i)       A_σσ = mean_i D(z_i) A(x_i) D(z_i) + D(2/σ_t²)
//! b_μ  = mean_i b(x_i)              b_σ  = mean_i D(z_i) b(x_i) − 3/σ_t
//! ```
//!
//! The entropy contributions come from the second-order expansion
//! `log σ ≈ log σ_t + (σ − σ_t)/σ_t − (σ − σ_t)²/σ_t²`; they are added once,
//! outside the per-sample `D(z_i)` conjugation. [`EntropyExpansion::Half`]
//! selects the textbook `½` coefficient instead.
//!
//! The next iterate solves `A_θ θ = −b_θ` with a fixed number of SOR sweeps
//! warm-started at the current `θ`, blends it with the current iterate by
//! `α`, and replaces `σ` by its absolute value.

use std::f64::consts::{E, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::energy::{EnergyModel, LinearizedGradient};
use crate::error::{check_len, Result, SviglError};
use crate::linops::{sor_solve, BlockSystem, PatternAccumulator, SparseSymMatrix};
use crate::trace::{Trace, TraceRecord};

/// Smallest standard deviation kept after the absolute-value clamp.
pub const SIGMA_MIN: f64 = 1e-12;

/// Fully factorized Gaussian `q(x) = Π_l N(x_l | μ_l, σ_l²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGaussian {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl VariationalGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        check_len(mu.len(), sigma.len())?;
        if let Some(i) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(SviglError::InvalidParameter(format!(
                "sigma[{i}] = {} must be positive and finite",
                sigma[i]
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(SviglError::InvalidParameter("mu must be finite".into()));
        }
        Ok(Self { mu, sigma })
    }

    /// Mean `mu` with every standard deviation set to `sigma`.
    pub fn with_constant_sigma(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        let s = vec![sigma; mu.len()];
        Self::new(mu, s)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Stacked `(μ, σ)`.
    pub fn stacked(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.sigma).copied().collect()
    }

    /// Rebuilds from a stacked vector, clamping `σ` to `|σ|` and raising exact
    /// zeros to [`SIGMA_MIN`].
    pub fn from_stacked_clamped(theta: &[f64]) -> Result<Self> {
        if theta.len() % 2 != 0 {
            return Err(SviglError::DimensionMismatch {
                expected: theta.len() + 1,
                got: theta.len(),
            });
        }
        let l = theta.len() / 2;
        let sigma = theta[l..]
            .iter()
            .map(|s| {
                let a = s.abs();
                if a == 0.0 {
                    SIGMA_MIN
                } else {
                    a
                }
            })
            .collect();
        Self::new(theta[..l].to_vec(), sigma)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.mu, self.sigma)
    }
}

/// Sampling options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleOptions {
    /// Draw samples in `±z` pairs.
    pub antithetic: bool,
    /// Recenter and rescale each coordinate so that `mean(z) = 0` and
    /// `mean(z²) = 1` over the set.
    pub standardize: bool,
}

/// Base noise `z_i` and the corresponding states `x_i = μ + σ·z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub options: SampleOptions,
}

impl SampleSet {
    /// Builds a set from given base noise.
    pub fn from_noise(theta: &VariationalGaussian, z: Vec<Vec<f64>>, options: SampleOptions) -> Result<Self> {
        for zi in &z {
            check_len(theta.dim(), zi.len())?;
        }
        let x = z.iter().map(|zi| reparameterize(theta, zi)).collect();
        Ok(Self { z, x, options })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

fn reparameterize(theta: &VariationalGaussian, z: &[f64]) -> Vec<f64> {
    theta
        .mu
        .iter()
        .zip(&theta.sigma)
        .zip(z)
        .map(|((m, s), z)| m + s * z)
        .collect()
}

/// Draws `count` reparameterized samples from `theta`.
pub fn draw_samples<R: Rng + ?Sized>(
    theta: &VariationalGaussian,
    count: usize,
    rng: &mut R,
    options: SampleOptions,
) -> Result<SampleSet> {
    if count == 0 {
        return Err(SviglError::InvalidParameter("sample count must be at least 1".into()));
    }
    if options.antithetic && count % 2 != 0 {
        return Err(SviglError::InvalidParameter(format!(
            "antithetic sampling needs an even count, got {count}"
        )));
    }
    if options.standardize && count < 2 {
        return Err(SviglError::InvalidParameter("standardization needs at least 2 samples".into()));
    }
    let l = theta.dim();
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(count);
    while z.len() < count {
        let zi: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
        if options.antithetic {
            z.push(zi.iter().map(|v| -v).collect());
            z.insert(z.len() - 1, zi);
        } else {
            z.push(zi);
        }
    }
    if options.standardize {
        standardize(&mut z, options.antithetic);
    }
    SampleSet::from_noise(theta, z, options)
}

fn standardize(z: &mut [Vec<f64>], antithetic: bool) {
    let n = z.len() as f64;
    let l = z[0].len();
    for k in 0..l {
        // Antithetic pairs are already centered; skipping the shift keeps
        // z₂ = −z₁ bit-exact.
        let mean = if antithetic {
            0.0
        } else {
            z.iter().map(|zi| zi[k]).sum::<f64>() / n
        };
        let var = z.iter().map(|zi| (zi[k] - mean) * (zi[k] - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
        for zi in z.iter_mut() {
            zi[k] = (zi[k] - mean) * scale;
        }
    }
}

/// Which second-order expansion of `log σ` linearizes the entropy gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EntropyExpansion {
    /// Quadratic coefficient `−1/σ_t²`: contributes `D(2/σ_t²)` and `−3/σ_t`.
    #[default]
    Full,
    /// Textbook Taylor coefficient `−1/(2σ_t²)`: contributes `D(1/σ_t²)` and
    /// `−2/σ_t`.
    Half,
}

impl EntropyExpansion {
    fn terms(self, sigma_t: f64) -> (f64, f64) {
        match self {
            Self::Full => (2.0 / (sigma_t * sigma_t), -3.0 / sigma_t),
            Self::Half => (1.0 / (sigma_t * sigma_t), -2.0 / sigma_t),
        }
    }
}

/// Assembles the stacked system from per-sample linearizations.
///
/// `linearize` is called once per sample, in order, with the sample state.
/// Per-sample matrices are folded into the block sums immediately.
pub fn assemble_system<F>(
    samples: &SampleSet,
    sigma_t: &[f64],
    entropy: EntropyExpansion,
    mut linearize: F,
) -> Result<BlockSystem>
where
    F: FnMut(&[f64]) -> Result<LinearizedGradient>,
{
    let l = sigma_t.len();
    if samples.is_empty() {
        return Err(SviglError::EmptyInput);
    }
    if let Some(i) = sigma_t.iter().position(|&s| !(s > 0.0)) {
        return Err(SviglError::InvalidParameter(format!("sigma_t[{i}] must be positive")));
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut mm = PatternAccumulator::new(l, l);
    let mut ms = PatternAccumulator::new(l, l);
    let mut sm = PatternAccumulator::new(l, l);
    let mut ss = PatternAccumulator::new(l, l);
    let mut b_m = vec![0.0; l];
    let mut b_s = vec![0.0; l];

    for (i, (z, x)) in samples.z.iter().zip(&samples.x).enumerate() {
        check_len(l, z.len())?;
        let lin = linearize(x)?;
        check_len(l, lin.b.len())?;
        if lin.b.iter().any(|v| !v.is_finite()) {
            return Err(SviglError::NonFiniteSample(i));
        }
        let a = lin.a.csr();
        mm.add_with(a, |_, _, v| v * inv_n);
        ms.add_with(a, |_, c, v| v * z[c] * inv_n);
        sm.add_with(a, |r, _, v| z[r] * v * inv_n);
        ss.add_with(a, |r, c, v| z[r] * v * z[c] * inv_n);
        for k in 0..l {
            b_m[k] += lin.b[k] * inv_n;
            b_s[k] += z[k] * lin.b[k] * inv_n;
        }
    }

    let (diag, lin): (Vec<f64>, Vec<f64>) = sigma_t.iter().map(|&s| entropy.terms(s)).unzip();
    ss.add_diagonal(&diag);
    b_s.iter_mut().zip(&lin).for_each(|(b, e)| *b += e);

    let to_sym = |acc: PatternAccumulator| -> Result<SparseSymMatrix> { SparseSymMatrix::from_csr(acc.finish()?) };
    let system = BlockSystem {
        a_mm: to_sym(mm)?,
        a_ms: ms.finish()?,
        a_sm: sm.finish()?,
        a_ss: to_sym(ss)?,
        b_m,
        b_s,
    };
    if let Some(k) = system.b_m.iter().chain(&system.b_s).position(|v| !v.is_finite()) {
        return Err(SviglError::NonFiniteSample(k % l));
    }
    Ok(system)
}

/// Assembles the system using `model.linearize` at every sample.
pub fn assemble_from_model<M: EnergyModel + ?Sized>(
    samples: &SampleSet,
    model: &M,
    sigma_t: &[f64],
    entropy: EntropyExpansion,
) -> Result<BlockSystem> {
    check_len(model.dim(), sigma_t.len())?;
    assemble_system(samples, sigma_t, entropy, |x| model.linearize(x))
}

/// Solver and update settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SviglConfig {
    pub iterations: usize,
    pub sample_count: usize,
    /// Blend `θ ← (1−α)θ + αθ̂`.
    pub alpha: f64,
    pub sor_iterations: usize,
    pub sor_omega: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub standardize: bool,
    pub entropy: EntropyExpansion,
    /// When positive, a final KL estimate at `θ^(T)` from this many fresh
    /// samples is appended to the trace.
    pub final_kl_samples: usize,
}

impl Default for SviglConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            sample_count: 50,
            alpha: 1.0,
            sor_iterations: 100,
            sor_omega: 1.95,
            seed: 0,
            antithetic: false,
            standardize: false,
            entropy: EntropyExpansion::Full,
            final_kl_samples: 0,
        }
    }
}

impl SviglConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SviglError::InvalidParameter(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(SviglError::InvalidParameter(format!(
                "relaxation factor {} outside (0, 2)",
                self.sor_omega
            )));
        }
        if self.sample_count == 0 {
            return Err(SviglError::InvalidParameter("sample count must be at least 1".into()));
        }
        if self.antithetic && self.sample_count % 2 != 0 {
            return Err(SviglError::InvalidParameter("antithetic sampling needs an even sample count".into()));
        }
        Ok(())
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            antithetic: self.antithetic,
            standardize: self.standardize,
        }
    }
}

/// One update: solve `A_θ θ̂ = −b_θ` warm-started at `θ`, blend, clamp `σ`.
///
/// `alpha` is taken from `config` without the `(0, 1]` range check so that
/// the degenerate blend `α = 0` can be expressed.
pub fn svigl_step(theta: &VariationalGaussian, system: &BlockSystem, config: &SviglConfig) -> Result<VariationalGaussian> {
    check_len(theta.dim(), system.half_dim())?;
    let a = system.matrix()?;
    let rhs: Vec<f64> = system.b().iter().map(|v| -v).collect();
    let current = theta.stacked();
    let solved = sor_solve(&a, &rhs, &current, config.sor_iterations, config.sor_omega)?.solution;
    let alpha = config.alpha;
    let blended: Vec<f64> = current
        .iter()
        .zip(&solved)
        .map(|(c, s)| (1.0 - alpha) * c + alpha * s)
        .collect();
    VariationalGaussian::from_stacked_clamped(&blended)
}

/// `mean_i E(x_i) − Σ_l log σ_l − (L/2) log(2πe)`.
pub fn kl_unnormalized<M: EnergyModel + ?Sized>(theta: &VariationalGaussian, model: &M, samples: &SampleSet) -> Result<f64> {
    let energies = samples
        .x
        .iter()
        .map(|x| model.energy(x))
        .collect::<Result<Vec<f64>>>()?;
    let kl = kl_from_energies(theta, &energies);
    if kl.is_finite() {
        Ok(kl)
    } else {
        Err(SviglError::NonFiniteEnergy)
    }
}

fn kl_from_energies(theta: &VariationalGaussian, energies: &[f64]) -> f64 {
    let mean_energy = energies.iter().sum::<f64>() / energies.len() as f64;
    mean_energy - negative_entropy_offset(theta)
}

/// Entropy of `q`: `Σ_l log σ_l + (L/2) log(2πe)`.
pub fn entropy(theta: &VariationalGaussian) -> f64 {
    negative_entropy_offset(theta)
}

fn negative_entropy_offset(theta: &VariationalGaussian) -> f64 {
    let half_log = 0.5 * (2.0 * PI * E).ln();
    theta.sigma.iter().map(|s| s.ln()).sum::<f64>() + theta.dim() as f64 * half_log
}

/// Per-site marginal entropy, summing over `channels` stacked channels.
pub fn entropy_uncertainty(theta: &VariationalGaussian, channels: usize) -> Result<Vec<f64>> {
    if channels == 0 || theta.dim() % channels != 0 {
        return Err(SviglError::InvalidParameter(format!(
            "dimension {} is not divisible by {channels} channels",
            theta.dim()
        )));
    }
    let sites = theta.dim() / channels;
    let half_log = 0.5 * (2.0 * PI * E).ln();
    Ok((0..sites)
        .map(|l| {
            (0..channels)
                .map(|k| theta.sigma[k * sites + l].ln() + half_log)
                .sum()
        })
        .collect())
}

fn summarize(theta: &VariationalGaussian, iter: usize, kl: f64, seconds: f64) -> TraceRecord {
    let n = theta.dim().max(1) as f64;
    TraceRecord {
        iter,
        value: kl,
        seconds,
        mean_mu: Some(theta.mu.iter().sum::<f64>() / n),
        mean_sigma: Some(theta.sigma.iter().sum::<f64>() / n),
    }
}

/// Runs `config.iterations` SVIGL updates from `theta0`.
///
/// The trace row for iteration `t` holds the KL estimate of `θ^(t)` computed
/// from the very samples used for that update.
pub fn run<M: EnergyModel + ?Sized>(
    theta0: &VariationalGaussian,
    model: &M,
    config: &SviglConfig,
) -> Result<(VariationalGaussian, Trace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_with_rng(theta0, model, config, &mut rng)
}

/// [`run`] drawing from a caller-owned generator.
pub fn run_with_rng<M: EnergyModel + ?Sized, R: Rng + ?Sized>(
    theta0: &VariationalGaussian,
    model: &M,
    config: &SviglConfig,
    rng: &mut R,
) -> Result<(VariationalGaussian, Trace)> {
    config.validate()?;
    check_len(model.dim(), theta0.dim())?;
    let start = Instant::now();
    let mut theta = theta0.clone();
    let mut trace = Trace::new();
    for t in 0..config.iterations {
        let samples = draw_samples(&theta, config.sample_count, rng, config.sample_options())?;
        let kl = kl_unnormalized(&theta, model, &samples).map_err(|_| SviglError::NonFiniteKl(t))?;
        let system = assemble_from_model(&samples, model, &theta.sigma, config.entropy)?;
        let mut record = summarize(&theta, t, kl, 0.0);
        theta = svigl_step(&theta, &system, config)?;
        record.seconds = start.elapsed().as_secs_f64();
        trace.records.push(record);
    }
    if config.final_kl_samples > 0 && config.iterations > 0 {
        let samples = draw_samples(&theta, config.final_kl_samples, rng, SampleOptions::default())?;
        let kl = kl_unnormalized(&theta, model, &samples).map_err(|_| SviglError::NonFiniteKl(config.iterations))?;
        trace
            .records
            .push(summarize(&theta, config.iterations, kl, start.elapsed().as_secs_f64()));
    }
    Ok((theta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DiagonalQuadratic;
    use crate::linops::{psd_probe, MatVec};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn variational_gaussian_rejects_nonpositive_sigma() {
        assert!(VariationalGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(VariationalGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let t = VariationalGaussian::from_stacked_clamped(&[1.0, 2.0, -0.5, 0.0]).unwrap();
        assert_eq!(t.sigma(), &[0.5, SIGMA_MIN]);
    }

    #[test]
    fn tiny_sigma_samples_sit_on_the_mean() {
        let theta = VariationalGaussian::with_constant_sigma(vec![1.0, -2.0, 3.0], 1e-9).unwrap();
        let s = draw_samples(&theta, 4, &mut rng(1), SampleOptions::default()).unwrap();
        for (z, x) in s.z.iter().zip(&s.x) {
            let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (xi, mi) in x.iter().zip(theta.mu()) {
                assert!((xi - mi).abs() <= 1e-8 * zmax.max(1.0));
            }
        }
    }

    #[test]
    fn antithetic_pairs_are_exact_negations() {
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 6], 1.0).unwrap();
        let opts = SampleOptions {
            antithetic: true,
            standardize: false,
        };
        let s = draw_samples(&theta, 2, &mut rng(2), opts).unwrap();
        for (a, b) in s.z[0].iter().zip(&s.z[1]) {
            assert_eq!(*a, -*b);
        }
        assert!(draw_samples(&theta, 3, &mut rng(2), opts).is_err());
        let both = SampleOptions {
            antithetic: true,
            standardize: true,
        };
        let s = draw_samples(&theta, 6, &mut rng(2), both).unwrap();
        for k in 0..3 {
            for j in 0..6 {
                assert_eq!(s.z[2 * k][j], -s.z[2 * k + 1][j]);
            }
        }
    }

    #[test]
    fn standardized_moments_are_exact() {
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 7], 1.0).unwrap();
        let opts = SampleOptions {
            antithetic: false,
            standardize: true,
        };
        let s = draw_samples(&theta, 12, &mut rng(3), opts).unwrap();
        for k in 0..7 {
            let sum: f64 = s.z.iter().map(|z| z[k]).sum();
            let sq: f64 = s.z.iter().map(|z| z[k] * z[k]).sum();
            assert!(sum.abs() <= 1e-12);
            assert!((sq - 12.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let theta = VariationalGaussian::with_constant_sigma(vec![0.5; 5], 0.2).unwrap();
        let a = draw_samples(&theta, 4, &mut rng(7), SampleOptions::default()).unwrap();
        let b = draw_samples(&theta, 4, &mut rng(7), SampleOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_zero_sample_assembly() {
        let theta = VariationalGaussian::new(vec![0.3], vec![0.5]).unwrap();
        let samples = SampleSet::from_noise(&theta, vec![vec![0.0]], SampleOptions::default()).unwrap();
        let model = DiagonalQuadratic {
            center: vec![1.0],
            precision: vec![4.0],
        };
        let sys = assemble_from_model(&samples, &model, theta.sigma(), EntropyExpansion::Full).unwrap();
        assert_eq!(sys.a_ms.get(0, 0), 0.0);
        assert_eq!(sys.a_sm.get(0, 0), 0.0);
        assert_eq!(sys.a_ss.get(0, 0), 2.0 / 0.25);
        assert_eq!(sys.b_s[0], -3.0 / 0.5);
        assert_eq!(sys.a_mm.get(0, 0), 4.0);
    }

    #[test]
    fn quadratic_assembly_decouples_mean() {
        let c = vec![0.5, -1.0, 2.0];
        let model = DiagonalQuadratic::isotropic(c.clone(), 1.0);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 3], 0.1).unwrap();
        let opts = SampleOptions {
            antithetic: true,
            standardize: true,
        };
        let samples = draw_samples(&theta, 8, &mut rng(4), opts).unwrap();
        let sys = assemble_from_model(&samples, &model, theta.sigma(), EntropyExpansion::Full).unwrap();
        for (r, _, v) in sys.a_ms.triplets() {
            assert!(v.abs() < 1e-15, "row {r}");
        }
        for k in 0..3 {
            assert!((-sys.b_m[k] / sys.a_mm.get(k, k) - c[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn assembled_system_is_symmetric_and_psd() {
        let model = DiagonalQuadratic {
            center: vec![0.1, 0.2, 0.3, 0.4],
            precision: vec![1.0, 2.0, 0.5, 3.0],
        };
        let theta = VariationalGaussian::new(vec![0.0; 4], vec![0.3, 0.2, 0.9, 1.1]).unwrap();
        let samples = draw_samples(&theta, 5, &mut rng(5), SampleOptions::default()).unwrap();
        let sys = assemble_from_model(&samples, &model, theta.sigma(), EntropyExpansion::Full).unwrap();
        let m = sys.matrix().unwrap();
        assert!(psd_probe(&m, 100, &mut rng(6)));
        for (r, c, v) in m.csr().triplets() {
            assert!((v - m.get(c, r)).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }

    #[test]
    fn alpha_zero_keeps_theta() {
        let model = DiagonalQuadratic::isotropic(vec![1.0, 2.0], 0.5);
        let theta = VariationalGaussian::new(vec![0.0, 0.0], vec![0.1, 0.2]).unwrap();
        let samples = draw_samples(&theta, 4, &mut rng(8), SampleOptions::default()).unwrap();
        let sys = assemble_from_model(&samples, &model, theta.sigma(), EntropyExpansion::Full).unwrap();
        let cfg = SviglConfig {
            alpha: 0.0,
            ..SviglConfig::default()
        };
        assert_eq!(svigl_step(&theta, &sys, &cfg).unwrap(), theta);
    }

    #[test]
    fn half_expansion_shares_the_fixed_point() {
        let model = DiagonalQuadratic::isotropic(vec![0.7], 0.4);
        let theta = VariationalGaussian::new(vec![0.7], vec![0.4]).unwrap();
        let opts = SampleOptions {
            antithetic: true,
            standardize: true,
        };
        let samples = draw_samples(&theta, 2, &mut rng(9), opts).unwrap();
        let cfg = SviglConfig {
            sor_omega: 1.0,
            ..SviglConfig::default()
        };
        for e in [EntropyExpansion::Full, EntropyExpansion::Half] {
            let sys = assemble_from_model(&samples, &model, theta.sigma(), e).unwrap();
            let next = svigl_step(&theta, &sys, &cfg).unwrap();
            assert!((next.sigma()[0] - 0.4).abs() < 1e-12);
            assert!((next.mu()[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let zero = DiagonalQuadratic {
            center: vec![0.0],
            precision: vec![0.0],
        };
        let theta = VariationalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let samples = draw_samples(&theta, 3, &mut rng(10), SampleOptions::default()).unwrap();
        let kl = kl_unnormalized(&theta, &zero, &samples).unwrap();
        assert!((kl + 1.4189385332046727).abs() < 1e-12);

        let half_sq = DiagonalQuadratic::isotropic(vec![0.0], 1.0);
        let opts = SampleOptions {
            antithetic: false,
            standardize: true,
        };
        let samples = draw_samples(&theta, 1000, &mut rng(11), opts).unwrap();
        let kl = kl_unnormalized(&theta, &half_sq, &samples).unwrap();
        assert!((kl - (0.5 - 1.4189385332046727)).abs() < 1e-12);

        let l = 3;
        let t1 = VariationalGaussian::new(vec![0.0; l], vec![0.5, 1.0, 2.0]).unwrap();
        let t2 = VariationalGaussian::new(vec![0.0; l], vec![1.0, 2.0, 4.0]).unwrap();
        let z = vec![vec![0.3, -0.2, 0.1]];
        let zero3 = DiagonalQuadratic {
            center: vec![0.0; l],
            precision: vec![0.0; l],
        };
        let k1 = kl_unnormalized(&t1, &zero3, &SampleSet::from_noise(&t1, z.clone(), opts).unwrap()).unwrap();
        let k2 = kl_unnormalized(&t2, &zero3, &SampleSet::from_noise(&t2, z, opts).unwrap()).unwrap();
        assert!((k1 - k2 - l as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_map_examples() {
        let h = 0.5 * (2.0 * PI * E).ln();
        let t = VariationalGaussian::new(vec![0.0; 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(entropy_uncertainty(&t, 1).unwrap(), vec![h, h]);
        let t = VariationalGaussian::new(vec![0.0; 2], vec![0.5, 3.0]).unwrap();
        let m = entropy_uncertainty(&t, 2).unwrap();
        assert!((m[0] - (0.5f64.ln() + 3f64.ln() + (2.0 * PI * E).ln())).abs() < 1e-12);
        let base = VariationalGaussian::new(vec![0.0; 4], vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let scaled = VariationalGaussian::new(vec![0.0; 4], base.sigma().iter().map(|s| s * E).collect()).unwrap();
        let a = entropy_uncertainty(&base, 2).unwrap();
        let b = entropy_uncertainty(&scaled, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 2.0).abs() < 1e-12);
        }
        assert!(entropy_uncertainty(&base, 3).is_err());
    }

    #[test]
    fn zero_iterations_return_initial_state() {
        let model = DiagonalQuadratic::isotropic(vec![1.0; 3], 1.0);
        let theta = VariationalGaussian::with_constant_sigma(vec![0.0; 3], 1e-3).unwrap();
        let cfg = SviglConfig {
            iterations: 0,
            ..SviglConfig::default()
        };
        let (out, trace) = run(&theta, &model, &cfg).unwrap();
        assert_eq!(out, theta);
        assert!(trace.is_empty());
    }

    #[test]
    fn block_matvec_agrees_with_stacked_matrix() {
        let model = DiagonalQuadratic {
            center: vec![0.1, 0.2, 0.3],
            precision: vec![1.0, 2.0, 0.5],
        };
        let theta = VariationalGaussian::new(vec![0.0; 3], vec![0.3, 0.2, 0.9]).unwrap();
        let samples = draw_samples(&theta, 3, &mut rng(12), SampleOptions::default()).unwrap();
        let sys = assemble_from_model(&samples, &model, theta.sigma(), EntropyExpansion::Full).unwrap();
        let v = [0.5, -0.2, 1.0, 0.3, 0.7, -1.1];
        let a = sys.matrix().unwrap().matvec(&v).unwrap();
        let b = MatVec::matvec(&sys, &v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
