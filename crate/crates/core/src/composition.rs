//! Gain graph of an interconnection, the cyclic small-gain test, and the
//! network-level simulation function assembled as a scaled maximum.

use serde::{Deserialize, Serialize};

use crate::certificates::SpsfCertificate;
use crate::error::{Error, Result};
use crate::kinf::KInfFn;
use crate::model::NetworkSpec;

/// `gains[i][j]` is the slope of the gain from subsystem `j` into subsystem
/// `i` (present when `i` reads an internal input from `j`). The diagonal
/// holds the contraction rates κ_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainGraph {
    pub gains: Vec<Vec<Option<f64>>>,
}

impl GainGraph {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.gains[i][i].unwrap_or(0.0)).collect()
    }

    fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.gains.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(j, g)| g.filter(|v| *v > 0.0).map(|v| (i, j, v)))
        })
    }

    /// `max_{i,j} s_i⁻¹ κ_ij s_j`.
    pub fn scaled_max(&self, sigma: &[f64]) -> f64 {
        self.edges()
            .map(|(i, j, g)| g * sigma[j] / sigma[i])
            .fold(0.0, f64::max)
    }
}

/// Interconnection gain `κ_ij = (1 + δ̃_f)·ρ_i ∘ λ̄ ∘ α_j⁻¹` in the power-law
/// algebra. Returns `None` for a zero internal gain.
pub fn interconnection_gain(
    receiver: &SpsfCertificate,
    source: &SpsfCertificate,
    lambda_bar: &KInfFn,
    delta_f: &KInfFn,
) -> Result<Option<f64>> {
    let Some(rho) = receiver.rho_int else {
        return Ok(None);
    };
    let inner = rho.compose(lambda_bar).compose(&source.alpha.inverse());
    if !inner.is_linear() {
        return Err(Error::UnsupportedGain(format!(
            "ρ ∘ λ̄ ∘ α⁻¹ has exponent {}; only linear gains are supported",
            inner.exponent
        )));
    }
    if !delta_f.is_linear() {
        return Err(Error::UnsupportedGain(
            "δ̃_f must be linear for the identity-plus-δ̃_f factor to stay a power law".into(),
        ));
    }
    Ok(Some((1.0 + delta_f.coefficient) * inner.coefficient))
}

fn check_lambda(lambda_bar: &KInfFn) -> Result<f64> {
    let slope = lambda_bar.slope()?;
    if !(slope > 1.0) {
        return Err(Error::InvalidInput(format!(
            "λ̄ must be linear with slope above 1, got {slope}"
        )));
    }
    Ok(slope)
}

pub fn assemble_gains(
    certs: &[SpsfCertificate],
    net: &NetworkSpec,
    lambda_bar: &KInfFn,
    delta_f: &KInfFn,
) -> Result<GainGraph> {
    if certs.len() != net.len() {
        return Err(Error::DimensionMismatch {
            context: "certificates per subsystem",
            expected: net.len(),
            got: certs.len(),
        });
    }
    check_lambda(lambda_bar)?;
    let n = certs.len();
    let mut gains = vec![vec![None; n]; n];
    for (i, cert) in certs.iter().enumerate() {
        gains[i][i] = Some(cert.kappa);
    }
    for conn in &net.connections {
        let (i, j) = (conn.to, conn.from);
        if let Some(g) = interconnection_gain(&certs[i], &certs[j], lambda_bar, delta_f)? {
            gains[i][j] = Some(g);
        }
    }
    Ok(GainGraph { gains })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGainResult {
    pub feasible: bool,
    /// Maximum cycle mean of the log-gains (−∞ without cycles).
    pub max_cycle_mean: f64,
    /// A cycle attaining the maximum mean, as a node sequence.
    pub witness_cycle: Option<Vec<usize>>,
    pub witness_product: Option<f64>,
    /// σ slopes `s_i`, normalized so the smallest is 1 (empty if infeasible).
    pub sigma: Vec<f64>,
    /// `max_{i,j} s_i⁻¹ κ_ij s_j` under `sigma`.
    pub scaled_max: f64,
}

/// Karp's maximum cycle mean over the log-gains with a virtual source
/// (`D_0 ≡ 0`). Returns the mean and a cycle attaining it.
fn max_cycle_mean(graph: &GainGraph) -> (f64, Option<Vec<usize>>) {
    let n = graph.len();
    if n == 0 {
        return (f64::NEG_INFINITY, None);
    }
    let edges: Vec<(usize, usize, f64)> = graph.edges().map(|(i, j, g)| (i, j, g.ln())).collect();
    // d[k][v]: best weight of a k-edge walk ending at v
    let mut d = vec![vec![f64::NEG_INFINITY; n]; n + 1];
    let mut pred = vec![vec![usize::MAX; n]; n + 1];
    d[0].iter_mut().for_each(|v| *v = 0.0);
    for k in 1..=n {
        for &(u, v, w) in &edges {
            let cand = d[k - 1][u] + w;
            if cand > d[k][v] {
                d[k][v] = cand;
                pred[k][v] = u;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_v = None;
    for v in 0..n {
        if d[n][v] == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| d[k][v] > f64::NEG_INFINITY)
            .map(|k| (d[n][v] - d[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        if worst > best {
            best = worst;
            best_v = Some(v);
        }
    }
    let Some(v) = best_v else {
        return (f64::NEG_INFINITY, None);
    };
    // walk back the critical n-edge walk and split it into simple cycles
    let mut walk = vec![v];
    let mut cur = v;
    for k in (1..=n).rev() {
        cur = pred[k][cur];
        walk.push(cur);
    }
    walk.reverse();
    let weight = |a: usize, b: usize| graph.gains[a][b].unwrap().ln();
    let mut best_cycle: Option<(f64, Vec<usize>)> = None;
    let mut stack: Vec<usize> = Vec::new();
    for &node in &walk {
        if let Some(pos) = stack.iter().position(|&x| x == node) {
            let cycle: Vec<usize> = stack[pos..].to_vec();
            let len = cycle.len();
            let total: f64 = (0..len).map(|t| weight(cycle[t], cycle[(t + 1) % len])).sum();
            let mean = total / len as f64;
            if best_cycle.as_ref().is_none_or(|(m, _)| mean > *m) {
                best_cycle = Some((mean, cycle));
            }
            stack.truncate(pos);
        }
        stack.push(node);
    }
    (best, best_cycle.map(|(_, c)| c))
}

fn cycle_product(graph: &GainGraph, cycle: &[usize]) -> f64 {
    let len = cycle.len();
    (0..len)
        .map(|t| graph.gains[cycle[t]][cycle[(t + 1) % len]].unwrap_or(0.0))
        .product()
}

/// Longest-path potentials for edge weights `ln κ_ij − c`.
fn potentials(graph: &GainGraph, c: f64) -> Vec<f64> {
    let n = graph.len();
    let edges: Vec<(usize, usize, f64)> = graph
        .edges()
        .filter(|(i, j, _)| i != j)
        .map(|(i, j, g)| (i, j, g.ln() - c))
        .collect();
    let mut phi = vec![0.0f64; n];
    for _ in 0..n {
        let mut changed = false;
        for &(i, j, w) in &edges {
            if w + phi[j] > phi[i] {
                phi[i] = w + phi[j];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    phi
}

/// Decides the cyclic small-gain condition and builds σ slopes.
pub fn check_small_gain(graph: &GainGraph) -> SmallGainResult {
    let (mean, cycle) = max_cycle_mean(graph);
    let witness_product = cycle.as_ref().map(|c| cycle_product(graph, c));
    let feasible = mean < 0.0;
    if !feasible {
        return SmallGainResult {
            feasible,
            max_cycle_mean: mean,
            witness_cycle: cycle,
            witness_product,
            sigma: Vec::new(),
            scaled_max: f64::INFINITY,
        };
    }
    let n = graph.len();
    let identity = vec![1.0; n];
    let mut sigma = identity.clone();
    if graph.scaled_max(&identity) >= 1.0 {
        for c in [mean + 1e-9 * mean.abs(), 0.5 * mean] {
            let phi = potentials(graph, c);
            let low = phi.iter().copied().fold(f64::INFINITY, f64::min);
            let candidate: Vec<f64> = phi.iter().map(|p| (p - low).exp()).collect();
            if graph.scaled_max(&candidate) < 1.0 {
                sigma = candidate;
                break;
            }
        }
    }
    let scaled_max = graph.scaled_max(&sigma);
    SmallGainResult {
        feasible: scaled_max < 1.0,
        max_cycle_mean: mean,
        witness_cycle: cycle,
        witness_product,
        sigma,
        scaled_max,
    }
}

/// Quantization of internal inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum InputQuantization {
    /// Abstract outputs coincide with abstract internal inputs.
    Matched,
    /// `mu_bar[i][j]`: discretization parameter of the block of subsystem
    /// `i` fed by subsystem `j` (zero where absent).
    Independent(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionOptions {
    pub lambda_bar: KInfFn,
    pub delta_f: KInfFn,
    pub quantization: InputQuantization,
}

/// Constants of the composed simulation function `V = max_i V_i / s_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedSsf {
    pub kappa: f64,
    pub psi: f64,
    pub alpha: KInfFn,
    pub sigma: Vec<f64>,
}

impl ComposedSsf {
    /// `max_i σ_i⁻¹(V_i(a_i, â_i))` with every counter at zero.
    pub fn initial_value(
        &self,
        certs: &[SpsfCertificate],
        a: &[Vec<f64>],
        a_hat: &[Vec<f64>],
        modes: &[usize],
    ) -> Result<f64> {
        if a.len() != certs.len() || a_hat.len() != certs.len() || modes.len() != certs.len() {
            return Err(Error::DimensionMismatch {
                context: "initial conditions",
                expected: certs.len(),
                got: a.len().min(a_hat.len()).min(modes.len()),
            });
        }
        Ok((0..certs.len())
            .map(|i| certs[i].value(&a[i], &a_hat[i], modes[i], 0) / self.sigma[i])
            .fold(0.0, f64::max))
    }
}

/// Network-level κ, ψ and α from per-subsystem certificates and a feasible
/// small-gain result. `delta_bars[i]` is the state discretization of
/// subsystem `i`.
pub fn compose_ssf(
    certs: &[SpsfCertificate],
    graph: &GainGraph,
    result: &SmallGainResult,
    delta_bars: &[f64],
    options: &CompositionOptions,
) -> Result<ComposedSsf> {
    let n = certs.len();
    if n == 0 || graph.len() != n || delta_bars.len() != n {
        return Err(Error::Composition(
            "certificates, gain graph and discretizations must describe the same subsystems".into(),
        ));
    }
    if !result.feasible || result.sigma.len() != n {
        return Err(Error::SmallGainInfeasible {
            cycle: result.witness_cycle.clone().unwrap_or_default(),
            product: result.witness_product.unwrap_or(f64::INFINITY),
        });
    }
    let sigma = &result.sigma;
    let kappa = graph.scaled_max(sigma);

    let lambda = check_lambda(&options.lambda_bar)?;
    let delta_f = options.delta_f.slope().map_err(|_| {
        Error::Composition("δ̃_f must be linear".into())
    })?;
    let mut psi = 0.0f64;
    for i in 0..n {
        let psi_i = certs[i].psi(delta_bars[i]);
        let contribution = match &options.quantization {
            InputQuantization::Matched => psi_i,
            InputQuantization::Independent(mu_bar) => {
                let row = mu_bar.get(i).ok_or_else(|| {
                    Error::Composition(format!("missing input discretization row {i}"))
                })?;
                let worst = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| *v)
                    .fold(0.0, f64::max);
                (1.0 + 1.0 / delta_f) * (certs[i].rho(lambda / (lambda - 1.0) * worst) + psi_i)
            }
        };
        psi = psi.max(contribution / sigma[i]);
    }

    let exponent = certs[0].alpha.exponent;
    if certs.iter().any(|c| (c.alpha.exponent - exponent).abs() > 1e-12) {
        return Err(Error::Composition(
            "lower-bound functions with different exponents cannot be merged".into(),
        ));
    }
    let coefficient = certs
        .iter()
        .zip(sigma)
        .map(|(c, s)| c.alpha.coefficient / s)
        .fold(f64::INFINITY, f64::min);
    Ok(ComposedSsf {
        kappa,
        psi,
        alpha: KInfFn::new(coefficient, exponent)?,
        sigma: sigma.clone(),
    })
}
