//! Quadratic stochastic pseudo-simulation functions
//! `V = κ̄_p^{−l/ε} (x − x̂)ᵀ M_p (x − x̂)` and their constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::kinf::KInfFn;
use crate::linalg::{self, inf_norm, lambda_max, lambda_min};
use crate::model::{admissible_requests, dwell_step, step_concrete, ModeDynamics, SubsystemSpec};
use crate::normal;

/// Tolerance on eigenvalues when deciding semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Published,
    Derived,
}

/// Per-mode data of the matrix inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificate {
    #[serde(with = "linalg::rows_serde")]
    pub m: DMatrix<f64>,
    pub kappa_bar: f64,
    pub pi: f64,
}

/// Constants of the additive decay form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConstants {
    pub kappa_base: f64,
    /// `None` when there is no internal input.
    pub rho_bar: Option<KInfFn>,
    pub gamma_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParameters {
    pub pi_tilde: f64,
    pub delta_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsfCertificate {
    pub provenance: Provenance,
    pub modes: Vec<ModeCertificate>,
    /// One function for all modes; the counter factor is dropped.
    pub common_lyapunov: bool,
    pub mu: f64,
    pub epsilon: f64,
    pub dwell_time: usize,
    pub additive: Option<AdditiveConstants>,
    pub free: Option<FreeParameters>,
    pub kappa: f64,
    /// `None` means the zero gain.
    pub rho_int: Option<KInfFn>,
    /// ψ = psi_coefficient · δ̄².
    pub psi_coefficient: f64,
    pub alpha: KInfFn,
}

impl SpsfCertificate {
    pub fn psi(&self, delta_bar: f64) -> f64 {
        self.psi_coefficient * delta_bar * delta_bar
    }

    pub fn rho(&self, s: f64) -> f64 {
        self.rho_int.map_or(0.0, |r| r.eval(s))
    }

    /// `κ̄_p^{−l/ε}`, or 1 under a common function.
    pub fn counter_factor(&self, mode: usize, counter: usize) -> f64 {
        if self.common_lyapunov || counter == 0 {
            1.0
        } else {
            self.modes[mode].kappa_bar.powf(-(counter as f64) / self.epsilon)
        }
    }

    pub fn value(&self, x: &[f64], x_hat: &[f64], mode: usize, counter: usize) -> f64 {
        let e = DVector::from_iterator(x.len(), x.iter().zip(x_hat).map(|(a, b)| a - b));
        self.counter_factor(mode, counter) * (e.transpose() * &self.modes[mode].m * &e)[(0, 0)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Certificate("no mode matrices".into()));
        }
        for (p, mode) in self.modes.iter().enumerate() {
            check_positive_definite(&mode.m, p)?;
            if !(mode.kappa_bar > 0.0 && mode.kappa_bar < 1.0) {
                return Err(Error::Certificate(format!(
                    "mode {p}: contraction rate {} outside (0, 1)",
                    mode.kappa_bar
                )));
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Certificate(format!("κ = {} outside (0, 1)", self.kappa)));
        }
        if !(self.psi_coefficient >= 0.0) {
            return Err(Error::Certificate("negative ψ coefficient".into()));
        }
        if self.dwell_time < 1 || !(self.epsilon > 1.0) {
            return Err(Error::Certificate("dwell time must be ≥ 1 and ε > 1".into()));
        }
        Ok(())
    }
}

fn check_positive_definite(m: &DMatrix<f64>, mode: usize) -> Result<()> {
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::Certificate(format!("mode {mode}: M is not symmetric")));
    }
    let low = lambda_min(m)?;
    if !(low > 0.0) {
        return Err(Error::Certificate(format!(
            "mode {mode}: M is not positive definite (λ_min = {low})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    pub holds: bool,
    /// Smallest eigenvalue of right-hand block minus left-hand block.
    pub min_eigenvalue: f64,
}

/// `[[κ̄M − (1+2π)AᵀMA, −Fᵀ − AᵀME], [−F − EᵀMA, (2/ā)I − (1+2π)EᵀME]]`.
fn lmi_residual(mode: &ModeDynamics, m: &DMatrix<f64>, kappa_bar: f64, pi: f64) -> Result<DMatrix<f64>> {
    let n = mode.a.nrows();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "certificate matrix",
            expected: n,
            got: m.nrows(),
        });
    }
    let r = mode.e.ncols();
    let gain = 1.0 + 2.0 * pi;
    let a = &mode.a;
    let e = &mode.e;
    let top_left = m * kappa_bar - (a.transpose() * m * a) * gain;
    let off = -mode.f.transpose() - a.transpose() * m * e;
    let inv_slope = if mode.slope_bound.is_infinite() {
        0.0
    } else {
        2.0 / mode.slope_bound
    };
    let bottom = DMatrix::identity(r, r) * inv_slope - (e.transpose() * m * e) * gain;
    let mut res = DMatrix::zeros(n + r, n + r);
    res.view_mut((0, 0), (n, n)).copy_from(&top_left);
    res.view_mut((0, n), (n, r)).copy_from(&off);
    res.view_mut((n, 0), (r, n)).copy_from(&off.transpose());
    res.view_mut((n, n), (r, r)).copy_from(&bottom);
    Ok(res)
}

/// Checks the block matrix inequality for one mode.
pub fn check_lmi(mode: &ModeDynamics, m: &DMatrix<f64>, kappa_bar: f64, pi: f64) -> Result<LmiReport> {
    if !(pi > 0.0) || !(kappa_bar > 0.0 && kappa_bar < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need π > 0 and 0 < κ̄ < 1, got π = {pi}, κ̄ = {kappa_bar}"
        )));
    }
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::Certificate("M is not symmetric".into()));
    }
    let min_eigenvalue = lambda_min(&lmi_residual(mode, m, kappa_bar, pi)?)?;
    Ok(LmiReport {
        holds: min_eigenvalue >= -PSD_TOLERANCE,
        min_eigenvalue,
    })
}

/// Smallest κ̄ for which the inequality holds with the given `M` and `π`
/// (bisection; the residual is monotone in κ̄). `None` if no κ̄ works.
pub fn minimal_kappa_bar(mode: &ModeDynamics, m: &DMatrix<f64>, pi: f64) -> Result<Option<f64>> {
    let holds = |k: f64| -> Result<bool> { Ok(lambda_min(&lmi_residual(mode, m, k, pi)?)? >= -PSD_TOLERANCE) };
    let mut hi = 1.0;
    while !holds(hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    if holds(lo)? {
        return Ok(Some(0.0));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(Some(hi))
}

/// `max_{p ≠ p′} λ_max(M_p)/λ_min(M_p′)`, at least 1.
pub fn compute_mu(matrices: &[DMatrix<f64>]) -> Result<f64> {
    let mut spectra = Vec::with_capacity(matrices.len());
    for (p, m) in matrices.iter().enumerate() {
        check_positive_definite(m, p)?;
        let eig = linalg::symmetric_eigenvalues(m)?;
        spectra.push((eig[0], eig[eig.len() - 1]));
    }
    let mut mu = 1.0f64;
    for (p, (_, hi)) in spectra.iter().enumerate() {
        for (q, (lo, _)) in spectra.iter().enumerate() {
            if p != q && matrices[p] != matrices[q] {
                mu = mu.max(hi / lo);
            }
        }
    }
    Ok(mu)
}

/// Smallest integer `k_d ≥ ε·ln μ / ln(1/κ̄_p) + 1` for every mode.
pub fn min_dwell_time(epsilon: f64, mu: f64, kappa_bars: &[f64]) -> Result<usize> {
    if !(epsilon > 1.0) || !(mu >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "need ε > 1 and μ ≥ 1, got ε = {epsilon}, μ = {mu}"
        )));
    }
    let mut k = 1usize;
    for &kb in kappa_bars {
        if !(kb > 0.0 && kb < 1.0) {
            return Err(Error::InvalidInput(format!("κ̄ = {kb} outside (0, 1)")));
        }
        let bound = epsilon * mu.ln() / (1.0 / kb).ln() + 1.0;
        k = k.max((bound - 1e-9).ceil() as usize);
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeriveOptions {
    pub epsilon: f64,
    /// Defaults to the minimal admissible dwell time.
    pub dwell_time: Option<usize>,
    pub common_lyapunov: bool,
    /// Fixed free parameters; a grid search is used when absent.
    pub free: Option<FreeParameters>,
    pub kappa_ceiling: f64,
    /// Optional ceiling on the coefficient of the max-form internal gain.
    pub rho_ceiling: Option<f64>,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            dwell_time: None,
            common_lyapunov: false,
            free: None,
            kappa_ceiling: 0.99,
            rho_ceiling: None,
        }
    }
}

struct MaxForm {
    kappa: f64,
    rho_scale: f64,
    psi_scale: f64,
}

fn max_form(kappa_base: f64, free: FreeParameters) -> MaxForm {
    let denom = (1.0 - kappa_base) * free.pi_tilde;
    MaxForm {
        kappa: 1.0 - (1.0 - free.pi_tilde) * (1.0 - kappa_base),
        rho_scale: (1.0 + free.delta_c) / denom,
        psi_scale: (1.0 + 1.0 / free.delta_c) / denom,
    }
}

/// Runs the constant pipeline for quadratic functions on one subsystem.
pub fn derive_spsf_constants(
    spec: &SubsystemSpec,
    modes: &[ModeCertificate],
    options: &DeriveOptions,
) -> Result<SpsfCertificate> {
    if modes.len() != spec.num_modes() {
        return Err(Error::DimensionMismatch {
            context: "certificate modes",
            expected: spec.num_modes(),
            got: modes.len(),
        });
    }
    if !(options.epsilon > 1.0) {
        return Err(Error::InvalidInput(format!("ε must exceed 1, got {}", options.epsilon)));
    }
    for (p, (dyn_p, cert)) in spec.modes.iter().zip(modes).enumerate() {
        check_positive_definite(&cert.m, p)?;
        let report = check_lmi(dyn_p, &cert.m, cert.kappa_bar, cert.pi)?;
        if !report.holds {
            return Err(Error::Certificate(format!(
                "matrix inequality fails for mode {p} (λ_min = {:.3e})",
                report.min_eigenvalue
            )));
        }
    }
    let kappa_bars: Vec<f64> = modes.iter().map(|m| m.kappa_bar).collect();
    let mu = if options.common_lyapunov {
        if modes.windows(2).any(|w| w[0].m != w[1].m) {
            return Err(Error::Certificate(
                "common function requested but the mode matrices differ".into(),
            ));
        }
        1.0
    } else {
        compute_mu(&modes.iter().map(|m| m.m.clone()).collect::<Vec<_>>())?
    };
    let needed = min_dwell_time(options.epsilon, mu, &kappa_bars)?;
    let dwell_time = options.dwell_time.unwrap_or(needed);
    if dwell_time < needed {
        return Err(Error::Certificate(format!(
            "dwell time {dwell_time} is below the required {needed} (μ = {mu:.4}, ε = {})",
            options.epsilon
        )));
    }

    let n = spec.state_dim() as f64;
    let p_bar = spec.input_dim() as f64;
    let mut kappa_base = 0.0f64;
    let mut rho_slope = 0.0f64;
    let mut gamma_bar = 0.0f64;
    for (dyn_p, cert) in spec.modes.iter().zip(modes) {
        let (decay, boost) = if options.common_lyapunov {
            (cert.kappa_bar, 1.0)
        } else {
            (
                cert.kappa_bar.powf((options.epsilon - 1.0) / options.epsilon),
                cert.kappa_bar.powf(-(dwell_time as f64) / options.epsilon),
            )
        };
        kappa_base = kappa_base.max(decay);
        if spec.input_dim() > 0 {
            let dmd = dyn_p.d.transpose() * &cert.m * &dyn_p.d;
            let spread = lambda_max(&dmd)?.max(0.0);
            rho_slope = rho_slope.max(boost * p_bar * (1.0 + cert.pi + 2.0 / cert.pi) * spread);
        }
        gamma_bar = gamma_bar.max(boost * n * (1.0 + 3.0 / cert.pi) * lambda_max(&cert.m)?);
    }
    let rho_bar = (rho_slope > 0.0).then_some(KInfFn {
        coefficient: rho_slope,
        exponent: 2.0,
    });

    let free = match options.free {
        Some(f) => {
            if !(f.pi_tilde > 0.0 && f.pi_tilde < 1.0 && f.delta_c > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "free parameters out of range: π̃ = {}, δ̃_c = {}",
                    f.pi_tilde, f.delta_c
                )));
            }
            f
        }
        None => search_free_parameters(kappa_base, rho_slope, gamma_bar, options)?,
    };
    let form = max_form(kappa_base, free);

    let c = &spec.c;
    let ctc = lambda_max(&(c.transpose() * c))?;
    let m_low = modes
        .iter()
        .map(|m| lambda_min(&m.m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let alpha = KInfFn::quadratic(m_low / (n * ctc))?;

    let cert = SpsfCertificate {
        provenance: Provenance::Derived,
        modes: modes.to_vec(),
        common_lyapunov: options.common_lyapunov,
        mu,
        epsilon: options.epsilon,
        dwell_time,
        additive: Some(AdditiveConstants {
            kappa_base,
            rho_bar,
            gamma_bar,
        }),
        free: Some(free),
        kappa: form.kappa,
        rho_int: rho_bar.map(|r| r.scale(form.rho_scale)),
        psi_coefficient: form.psi_scale * gamma_bar,
        alpha,
    };
    cert.validate()?;
    Ok(cert)
}

/// Coarse grid over (π̃, δ̃_c) minimizing the ψ coefficient subject to the
/// κ and ρ ceilings.
fn search_free_parameters(
    kappa_base: f64,
    rho_slope: f64,
    gamma_bar: f64,
    options: &DeriveOptions,
) -> Result<FreeParameters> {
    let pis = (1..100).map(|i| i as f64 / 100.0);
    let deltas: Vec<f64> = (0..=40).map(|i| 10f64.powf(-2.0 + i as f64 * 0.1)).collect();
    let mut best: Option<(f64, FreeParameters)> = None;
    for pi_tilde in pis {
        for &delta_c in &deltas {
            let free = FreeParameters { pi_tilde, delta_c };
            let form = max_form(kappa_base, free);
            if form.kappa > options.kappa_ceiling {
                continue;
            }
            if let Some(cap) = options.rho_ceiling {
                if form.rho_scale * rho_slope > cap {
                    continue;
                }
            }
            let psi = form.psi_scale * gamma_bar;
            if best.is_none_or(|(b, _)| psi < b) {
                best = Some((psi, free));
            }
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| {
        Error::Certificate(format!(
            "no free parameters satisfy κ ≤ {} and the internal-gain ceiling (κ̄_base = {kappa_base:.4})",
            options.kappa_ceiling
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub tuples: usize,
    pub inner_samples: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            tuples: 1000,
            inner_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tuples: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    pub lower_bound_violations: usize,
    /// Largest `estimate − bound − 3·SE` seen (negative when all pass).
    pub worst_excess: f64,
}

/// Sampled check of the lower bound and the expected-decrease inequality.
///
/// Tuples `(x, x̂, p, l, w, ŵ)` and an admissible next mode are drawn at
/// random; the conditional expectation of the next value is estimated with
/// `inner_samples` shared noise draws driving both the concrete successor
/// and the quantized abstract successor.
pub fn validate_spsf_empirical(
    cert: &SpsfCertificate,
    spec: &SubsystemSpec,
    state_grid: &UniformGrid,
    input_grid: &UniformGrid,
    options: ValidationOptions,
) -> Result<ValidationReport> {
    if cert.modes.len() != spec.num_modes() {
        return Err(Error::DimensionMismatch {
            context: "certificate modes",
            expected: spec.num_modes(),
            got: cert.modes.len(),
        });
    }
    if state_grid.dim() != spec.state_dim() || input_grid.dim() != spec.input_dim() {
        return Err(Error::InvalidInput("grids do not match the subsystem".into()));
    }
    if options.tuples == 0 || options.inner_samples < 2 {
        return Err(Error::InvalidInput("need at least one tuple and two inner samples".into()));
    }
    let dwell = if cert.common_lyapunov { spec.dwell_time } else { cert.dwell_time };
    let psi = cert.psi(state_grid.delta_bar());
    let noise_std = spec.noise.std_devs(spec.noise_dim());
    let m = spec.num_modes();

    let outcomes: Vec<(bool, bool, f64)> = (0..options.tuples)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(t as u64);
            let x: Vec<f64> = (0..spec.state_dim())
                .map(|d| rng.random_range(spec.state_box.lower[d]..=spec.state_box.upper[d]))
                .collect();
            let x_hat = state_grid.representative(rng.random_range(0..state_grid.num_cells()));
            let p = rng.random_range(0..m);
            let l = rng.random_range(0..dwell);
            let requests = admissible_requests(p, l, dwell, m);
            let request = rng.random_range(requests);
            let (p_next, l_next) = dwell_step(p, l, request, dwell)?;
            let w: Vec<f64> = (0..spec.input_dim())
                .map(|d| rng.random_range(spec.input_box.lower[d]..=spec.input_box.upper[d]))
                .collect();
            let w_hat = if rng.random_bool(0.5) {
                input_grid.lattice_representative(&w)
            } else {
                input_grid.representative(rng.random_range(0..input_grid.num_cells()))
            };

            let v = cert.value(&x, &x_hat, p, l);
            let dy: Vec<f64> = spec
                .output(&x)
                .iter()
                .zip(spec.output(&x_hat))
                .map(|(a, b)| a - b)
                .collect();
            let lower_ok = cert.alpha.eval(inf_norm(&dy)) <= v * (1.0 + 1e-12) + 1e-12;

            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut noise = vec![0.0; spec.noise_dim()];
            for _ in 0..options.inner_samples {
                for (z, s) in noise.iter_mut().zip(&noise_std) {
                    *z = s * normal::sample(&mut rng);
                }
                let next = step_concrete(spec, &x, p, &w, &noise)?;
                let next_hat = state_grid.lattice_representative(&step_concrete(spec, &x_hat, p, &w_hat, &noise)?);
                let v_next = cert.value(&next, &next_hat, p_next, l_next);
                sum += v_next;
                sum_sq += v_next * v_next;
            }
            let k = options.inner_samples as f64;
            let mean = sum / k;
            let var = ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0);
            let se = (var / k).sqrt();
            let dw: Vec<f64> = w.iter().zip(&w_hat).map(|(a, b)| a - b).collect();
            let bound = (cert.kappa * v).max(cert.rho(inf_norm(&dw))).max(psi);
            let excess = mean - bound - 3.0 * se;
            Ok((excess <= 1e-12 * (1.0 + bound), lower_ok, excess))
        })
        .collect::<Result<_>>()?;

    let passed = outcomes.iter().filter(|o| o.0).count();
    Ok(ValidationReport {
        tuples: options.tuples,
        passed,
        pass_fraction: passed as f64 / options.tuples as f64,
        lower_bound_violations: outcomes.iter().filter(|o| !o.1).count(),
        worst_excess: outcomes.iter().map(|o| o.2).fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn mode_matrices() -> Vec<DMatrix<f64>> {
        presets::nonlinear_mode_certificates().into_iter().map(|m| m.m).collect()
    }

    /// λ_max(M_p)/λ_min(M_q) through the closed-form 2×2 spectrum.
    fn mu_oracle_2x2(ms: &[DMatrix<f64>]) -> f64 {
        let eig = |m: &DMatrix<f64>| {
            let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (0.5 * (a + d) - r, 0.5 * (a + d) + r)
        };
        let (l1, h1) = eig(&ms[0]);
        let (l2, h2) = eig(&ms[1]);
        (h1 / l2).max(h2 / l1).max(1.0)
    }

    #[test]
    fn traffic_minimal_kappa_bar() {
        let cell = presets::traffic_cell(1.0).unwrap();
        let k = minimal_kappa_bar(&cell.modes[1], &DMatrix::identity(1, 1), 0.85)
            .unwrap()
            .unwrap();
        assert!((k - 2.7 * 0.39 * 0.39).abs() < 1e-8);
        assert!((k - 0.41067).abs() < 1e-5);
    }

    #[test]
    fn published_nonlinear_certificates() {
        let spec = presets::nonlinear_subsystem(4, 0).unwrap();
        let certs = presets::nonlinear_mode_certificates();
        let first = check_lmi(&spec.modes[0], &certs[0].m, certs[0].kappa_bar, certs[0].pi).unwrap();
        assert!(first.holds, "λ_min = {}", first.min_eigenvalue);
        // the second published matrix misses by a rounding margin
        let second = check_lmi(&spec.modes[1], &certs[1].m, certs[1].kappa_bar, certs[1].pi).unwrap();
        assert!(!second.holds);
        assert!((second.min_eigenvalue + 1.711e-3).abs() < 1e-6);
        let k = minimal_kappa_bar(&spec.modes[1], &certs[1].m, certs[1].pi).unwrap().unwrap();
        assert!((k - 0.70116).abs() < 1e-5);
        for (dynamics, cert) in spec.modes.iter().zip(presets::nonlinear_feasible_mode_certificates()) {
            assert!(check_lmi(dynamics, &cert.m, cert.kappa_bar, cert.pi).unwrap().holds);
        }
    }

    #[test]
    fn identity_dynamics_fail() {
        let mode = ModeDynamics::linear(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
        );
        for pi in [0.01, 1.0, 5.0] {
            assert!(!check_lmi(&mode, &DMatrix::identity(2, 2), 0.99, pi).unwrap().holds);
        }
    }

    #[test]
    fn infinite_slope_bound_is_well_formed() {
        let mut mode = presets::nonlinear_subsystem(2, 0).unwrap().modes[0].clone();
        mode.slope_bound = f64::INFINITY;
        let report = check_lmi(&mode, &DMatrix::identity(2, 2), 0.9, 0.5).unwrap();
        assert!(report.min_eigenvalue.is_finite());
    }

    #[test]
    fn mu_examples() {
        let mu = compute_mu(&mode_matrices()).unwrap();
        assert!((mu - mu_oracle_2x2(&mode_matrices())).abs() < 1e-12);
        assert!((mu - 3.278).abs() < 0.005);
        assert_eq!(compute_mu(&[DMatrix::identity(2, 2)]).unwrap(), 1.0);
        let two = compute_mu(&[DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2)]).unwrap();
        assert!((two - 2.0).abs() < 1e-15);
        let m = mode_matrices()[0].clone();
        assert_eq!(compute_mu(&[m.clone(), m]).unwrap(), 1.0);
    }

    #[test]
    fn mu_rejects_indefinite() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(compute_mu(&[bad]), Err(Error::Certificate(_))));
    }

    #[test]
    fn dwell_time_examples() {
        assert_eq!(min_dwell_time(1.75, 3.27, &[0.7, 0.7]).unwrap(), 7);
        assert_eq!(min_dwell_time(1.75, 1.0, &[0.7]).unwrap(), 1);
        assert_eq!(min_dwell_time(2.0, 2.0, &[0.5]).unwrap(), 3);
    }

    #[test]
    fn traffic_additive_gain() {
        let cell = presets::traffic_cell(1.0).unwrap();
        let modes = vec![
            ModeCertificate {
                m: DMatrix::identity(1, 1),
                kappa_bar: 0.41067,
                pi: 0.85,
            };
            2
        ];
        let opts = DeriveOptions {
            common_lyapunov: true,
            ..DeriveOptions::default()
        };
        let cert = derive_spsf_constants(&cell, &modes, &opts).unwrap();
        let add = cert.additive.as_ref().unwrap();
        let oracle = (1.0 + 0.85 + 2.0 / 0.85) * 0.36 * 0.36;
        assert!((add.rho_bar.unwrap().coefficient - oracle).abs() < 1e-12);
        assert!((oracle - 0.5447).abs() < 1e-4);
        assert!((add.kappa_base - 0.41067).abs() < 1e-12);
        assert_eq!(cert.alpha.coefficient, 1.0);
        assert_eq!(cert.mu, 1.0);
        assert!(cert.kappa <= 0.99);
    }

    #[test]
    fn no_internal_input_means_zero_gain() {
        let mut cell = presets::traffic_cell(1.0).unwrap();
        for mode in &mut cell.modes {
            mode.d = DMatrix::zeros(1, 1);
        }
        let modes = vec![
            ModeCertificate {
                m: DMatrix::identity(1, 1),
                kappa_bar: 0.5,
                pi: 0.85,
            };
            2
        ];
        let cert = derive_spsf_constants(
            &cell,
            &modes,
            &DeriveOptions {
                common_lyapunov: true,
                ..DeriveOptions::default()
            },
        )
        .unwrap();
        assert!(cert.rho_int.is_none());
        assert_eq!(cert.rho(3.0), 0.0);
    }

    #[test]
    fn nonlinear_pipeline() {
        let spec = presets::nonlinear_subsystem(4, 0).unwrap();
        let opts = DeriveOptions {
            epsilon: 1.75,
            ..DeriveOptions::default()
        };
        assert!(matches!(
            derive_spsf_constants(&spec, &presets::nonlinear_mode_certificates(), &opts),
            Err(Error::Certificate(_))
        ));
        let modes = presets::nonlinear_feasible_mode_certificates();
        let cert = derive_spsf_constants(&spec, &modes, &opts).unwrap();
        assert_eq!(cert.dwell_time, 7);
        assert!((cert.alpha.coefficient - 0.19995).abs() < 1e-4);
        assert!(cert.kappa <= 0.99);
        let kb = cert.additive.as_ref().unwrap().kappa_base;
        let oracle = modes.iter().map(|m| m.kappa_bar.powf(0.75 / 1.75)).fold(0.0, f64::max);
        assert!((kb - oracle).abs() < 1e-12);
    }

    #[test]
    fn dwell_time_too_short_rejected() {
        let spec = presets::nonlinear_subsystem(2, 0).unwrap();
        let opts = DeriveOptions {
            epsilon: 1.75,
            dwell_time: Some(3),
            ..DeriveOptions::default()
        };
        assert!(matches!(
            derive_spsf_constants(&spec, &presets::nonlinear_feasible_mode_certificates(), &opts),
            Err(Error::Certificate(_))
        ));
    }

    #[test]
    fn psi_coefficient_decreases_with_pi_tilde() {
        let kappa_base = 0.41;
        let mut last = f64::INFINITY;
        let mut last_kappa = 0.0;
        for i in 1..100 {
            let f = FreeParameters {
                pi_tilde: i as f64 / 100.0,
                delta_c: 0.7,
            };
            let form = max_form(kappa_base, f);
            assert!(form.psi_scale < last);
            assert!(form.kappa > kappa_base && form.kappa < 1.0 && form.kappa > last_kappa);
            last = form.psi_scale;
            last_kappa = form.kappa;
        }
        let near_zero = max_form(kappa_base, FreeParameters { pi_tilde: 1e-9, delta_c: 0.7 });
        assert!((near_zero.kappa - kappa_base).abs() < 1e-8);
        let near_one = max_form(kappa_base, FreeParameters { pi_tilde: 1.0 - 1e-9, delta_c: 0.7 });
        assert!((near_one.kappa - 1.0).abs() < 1e-8);
    }

    #[test]
    fn validation_lower_bound_equality_at_zero() {
        let cert = presets::traffic_published_certificate();
        assert_eq!(cert.value(&[3.0], &[3.0], 0, 0), 0.0);
        assert_eq!(cert.alpha.eval(0.0), 0.0);
    }

    #[test]
    fn traffic_published_certificate_validates() {
        let cell = presets::traffic_cell(1.0).unwrap();
        let gx = UniformGrid::from_delta(&cell.state_box, 0.2).unwrap();
        let gw = UniformGrid::from_delta(&cell.input_box, 0.2).unwrap();
        let opts = ValidationOptions {
            tuples: 200,
            inner_samples: 200,
            seed: 11,
        };
        let report = validate_spsf_empirical(&presets::traffic_published_certificate(), &cell, &gx, &gw, opts).unwrap();
        assert!(report.pass_fraction >= 0.99, "{report:?}");
        assert_eq!(report.lower_bound_violations, 0);
        let mut corrupted = presets::traffic_published_certificate();
        corrupted.kappa = 0.1;
        let bad = validate_spsf_empirical(&corrupted, &cell, &gx, &gw, opts).unwrap();
        assert!(bad.pass_fraction < 0.9, "{bad:?}");
    }

    fn random_mode(seed: &[f64]) -> (ModeDynamics, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &seed[0..4]);
        let e = DMatrix::from_row_slice(2, 1, &seed[4..6]);
        let f = DMatrix::from_row_slice(1, 2, &seed[6..8]);
        let l = DMatrix::from_row_slice(2, 2, &[seed[8].abs() + 0.2, 0.0, seed[9], seed[10].abs() + 0.2]);
        let mode = ModeDynamics {
            a,
            b: DVector::zeros(2),
            d: DMatrix::zeros(2, 1),
            e,
            f,
            r: DMatrix::identity(2, 2),
            slope_bound: 1.0 + seed[11].abs(),
            nonlinearity: crate::model::Nonlinearity::None,
        };
        (mode, &l * l.transpose())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        /// The eigenvalue verdict agrees with the quadratic form on 10⁴ random vectors.
        #[test]
        fn lmi_matches_quadratic_form(seed in proptest::collection::vec(-1.0f64..1.0, 12), kb in 0.05f64..0.95, pi in 0.05f64..2.0) {
            let (mode, m) = random_mode(&seed);
            let report = check_lmi(&mode, &m, kb, pi).unwrap();
            let res = lmi_residual(&mode, &m, kb, pi).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed[0].to_bits());
            let mut min_ratio = f64::INFINITY;
            for _ in 0..10_000 {
                let z = DVector::from_iterator(3, (0..3).map(|_| normal::sample(&mut rng)));
                let q = (z.transpose() * &res * &z)[(0, 0)];
                min_ratio = min_ratio.min(q / z.norm_squared());
            }
            if report.holds {
                prop_assert!(min_ratio >= -1e-7);
            } else {
                // the sampled Rayleigh quotients approach λ_min from above
                prop_assert!(min_ratio >= report.min_eigenvalue - 1e-9);
            }
        }

        #[test]
        fn mu_symmetric_and_scale_invariant(seed in proptest::collection::vec(-1.0f64..1.0, 6), c in 0.1f64..10.0) {
            let make = |s: &[f64]| {
                let l = DMatrix::from_row_slice(2, 2, &[s[0].abs() + 0.1, 0.0, s[1], s[2].abs() + 0.1]);
                &l * l.transpose()
            };
            let (m1, m2) = (make(&seed[0..3]), make(&seed[3..6]));
            let a = compute_mu(&[m1.clone(), m2.clone()]).unwrap();
            let b = compute_mu(&[m2.clone(), m1.clone()]).unwrap();
            let scaled = compute_mu(&[m1 * c, m2 * c]).unwrap();
            prop_assert!(a >= 1.0);
            prop_assert!((a - b).abs() <= 1e-12 * a);
            prop_assert!((a - scaled).abs() <= 1e-9 * a);
        }

        #[test]
        fn dwell_time_implies_decay(eps in 1.01f64..4.0, mu in 1.0f64..20.0, kbs in proptest::collection::vec(0.05f64..0.95, 1..4)) {
            let kd = min_dwell_time(eps, mu, &kbs).unwrap();
            for kb in &kbs {
                prop_assert!(mu * kb.powf((kd as f64 - 1.0) / eps) <= 1.0 + 1e-8);
            }
            if kd > 1 {
                // minimality: one step less violates some mode
                prop_assert!(kbs.iter().any(|kb| mu * kb.powf((kd as f64 - 2.0) / eps) > 1.0 - 1e-8));
            }
        }

        #[test]
        fn kappa_between_base_and_one(kb in 0.01f64..0.99, pt in 0.001f64..0.999, dc in 0.01f64..100.0) {
            let form = max_form(kb, FreeParameters { pi_tilde: pt, delta_c: dc });
            prop_assert!(form.kappa > kb && form.kappa < 1.0);
        }
    }
}
