//! Concrete switched subsystems, their interconnection, and the dwell-time
//! semantics of the augmented (state, mode, counter) process.
//!
//! Each mode `p` of a subsystem evolves as
//!
//! ```text
//! x⁺ = A_p x + E_p φ_p(F_p x) + B_p + D_p w + R_p ς
//! y  = C x
//! ```
//!
//! Modes are indexed from zero throughout the crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` in ℝⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidInput(format!(
                    "box dimension {d} is empty or unbounded: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn contains_box(&self, other: &BoxSet, tol: f64) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|d| {
                other.lower[d] >= self.lower[d] - tol && other.upper[d] <= self.upper[d] + tol
            })
    }
}

/// Scalar nonlinearity φ applied entry-wise to `F x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    Sine,
    /// Continuous piecewise-linear map through the given knots (sorted by
    /// abscissa), constant beyond the outer knots.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl Nonlinearity {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sine => z.sin(),
            Nonlinearity::PiecewiseLinear { knots } => {
                let Some(first) = knots.first() else {
                    return 0.0;
                };
                let last = knots[knots.len() - 1];
                if z <= first.0 {
                    return first.1;
                }
                if z >= last.0 {
                    return last.1;
                }
                let k = knots.partition_point(|(kx, _)| *kx <= z);
                let (x0, y0) = knots[k - 1];
                let (x1, y1) = knots[k];
                y0 + (y1 - y0) * (z - x0) / (x1 - x0)
            }
        }
    }

    /// Spot-checks the sector condition `0 ≤ (φ(c) − φ(d))/(c − d) ≤ ā` on
    /// pairs drawn from `[lo, hi]`.
    pub fn check_slope(&self, slope_bound: f64, lo: f64, hi: f64) -> Result<()> {
        if let Nonlinearity::PiecewiseLinear { knots } = self {
            if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidInput(
                    "piecewise-linear knots must have strictly increasing abscissae".into(),
                ));
            }
        }
        if matches!(self, Nonlinearity::None) || !(hi > lo) {
            return Ok(());
        }
        let samples: Vec<f64> = (0..=96)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.013 * (i % 7) as f64) / 96.2)
            .collect();
        for (i, &c) in samples.iter().enumerate() {
            for &d in &samples[..i] {
                let q = (self.eval(c) - self.eval(d)) / (c - d);
                if q < -1e-12 || q > slope_bound * (1.0 + 1e-12) + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "nonlinearity violates slope bound {slope_bound}: quotient {q} at ({d}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Additive noise ς of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    StandardNormal,
    ScaledNormal { sigma: Vec<f64> },
    None,
}

impl NoiseModel {
    /// Per-dimension standard deviation of ς (zero for `None`).
    pub fn std_devs(&self, dim: usize) -> Vec<f64> {
        match self {
            NoiseModel::StandardNormal => vec![1.0; dim],
            NoiseModel::ScaledNormal { sigma } => sigma.clone(),
            NoiseModel::None => vec![0.0; dim],
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }
}

/// Matrices of a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// ā; `f64::INFINITY` is allowed.
    pub slope_bound: f64,
    pub nonlinearity: Nonlinearity,
}

impl ModeDynamics {
    /// Linear mode `x⁺ = A x + B + D w + R ς` with no nonlinear channel.
    pub fn linear(a: DMatrix<f64>, b: DVector<f64>, d: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b,
            d,
            e: DMatrix::zeros(n, 1),
            f: DMatrix::zeros(1, n),
            r,
            slope_bound: f64::INFINITY,
            nonlinearity: Nonlinearity::None,
        }
    }

    fn validate(&self, state_box: &BoxSet, input_dim: usize, noise_dim: usize) -> Result<()> {
        let n = state_box.dim();
        let check = |context: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context,
                    expected,
                    got,
                })
            }
        };
        check("A rows", n, self.a.nrows())?;
        check("A cols", n, self.a.ncols())?;
        check("B length", n, self.b.len())?;
        check("D rows", n, self.d.nrows())?;
        check("D cols", input_dim, self.d.ncols())?;
        check("E rows", n, self.e.nrows())?;
        check("F rows", self.e.ncols(), self.f.nrows())?;
        check("F cols", n, self.f.ncols())?;
        check("R rows", n, self.r.nrows())?;
        check("R cols", noise_dim, self.r.ncols())?;
        if !(self.slope_bound > 0.0) {
            return Err(Error::InvalidInput(format!(
                "slope bound must be positive or infinite, got {}",
                self.slope_bound
            )));
        }
        // the sector condition is only needed where F x can actually go
        let range = output_range(&self.f, state_box);
        let lo = range.lower.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        let hi = range.upper.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
        self.nonlinearity.check_slope(self.slope_bound, lo, hi)
    }

    /// Noiseless successor plus `R·noise`.
    fn step(&self, x: &DVector<f64>, w: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x + &self.b + &self.d * w + &self.r * noise;
        if !matches!(self.nonlinearity, Nonlinearity::None) {
            let fx = &self.f * x;
            let phi = fx.map(|z| self.nonlinearity.eval(z));
            next += &self.e * phi;
        }
        next
    }
}

/// One switched subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemSpec {
    pub name: String,
    pub modes: Vec<ModeDynamics>,
    /// Output matrix `C` (q × n).
    pub c: DMatrix<f64>,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub dwell_time: usize,
    pub noise: NoiseModel,
}

impl SubsystemSpec {
    pub fn new(
        name: impl Into<String>,
        modes: Vec<ModeDynamics>,
        c: DMatrix<f64>,
        state_box: BoxSet,
        input_box: BoxSet,
        dwell_time: usize,
        noise: NoiseModel,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            modes,
            c,
            state_box,
            input_box,
            dwell_time,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidInput(format!(
                "subsystem {:?} has no modes",
                self.name
            )));
        }
        if self.dwell_time < 1 {
            return Err(Error::InvalidInput("dwell time must be at least 1".into()));
        }
        let n = self.state_dim();
        let noise_dim = self.modes[0].r.ncols();
        if self.c.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "C cols",
                expected: n,
                got: self.c.ncols(),
            });
        }
        for mode in &self.modes {
            mode.validate(&self.state_box, self.input_dim(), noise_dim)?;
        }
        if let NoiseModel::ScaledNormal { sigma } = &self.noise {
            if sigma.len() != noise_dim {
                return Err(Error::DimensionMismatch {
                    context: "noise sigma",
                    expected: noise_dim,
                    got: sigma.len(),
                });
            }
            if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidInput(
                    "scaled-normal noise needs positive standard deviations".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.modes[0].r.ncols()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        (&self.c * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// Per-dimension standard deviation of the additive term `R_p ς`.
    ///
    /// The transition kernel is a product of one-dimensional Gaussians, so the
    /// covariance `R_p Σ R_pᵀ` must be diagonal.
    pub fn kernel_std_devs(&self, mode: usize) -> Result<Vec<f64>> {
        let r = &self.modes[mode].r;
        let s = self.noise.std_devs(self.noise_dim());
        let cov = r * DMatrix::from_diagonal(&DVector::from_iterator(
            s.len(),
            s.iter().map(|v| v * v),
        )) * r.transpose();
        let n = cov.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j && cov[(i, j)].abs() > 1e-12 * (1.0 + cov[(i, i)].abs()) {
                    return Err(Error::InvalidInput(format!(
                        "noise covariance of mode {mode} is not diagonal; product-form kernels need independent dimensions"
                    )));
                }
            }
        }
        Ok((0..n).map(|i| cov[(i, i)].sqrt()).collect())
    }
}

/// `A_p x + E_p φ_p(F_p x) + B_p + D_p w + R_p·noise`.
pub fn step_concrete(
    spec: &SubsystemSpec,
    x: &[f64],
    mode: usize,
    w: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let dynamics = spec.modes.get(mode).ok_or_else(|| {
        Error::InvalidInput(format!(
            "mode {mode} out of range for {} mode(s)",
            spec.num_modes()
        ))
    })?;
    for (context, expected, got) in [
        ("state", spec.state_dim(), x.len()),
        ("internal input", spec.input_dim(), w.len()),
        ("noise", spec.noise_dim(), noise.len()),
    ] {
        if expected != got {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                got,
            });
        }
    }
    let next = dynamics.step(
        &DVector::from_column_slice(x),
        &DVector::from_column_slice(w),
        &DVector::from_column_slice(noise),
    );
    Ok(next.as_slice().to_vec())
}

/// State of the augmented process: concrete state, active mode, and steps
/// elapsed since the last switch (capped at `k_d − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub x: Vec<f64>,
    pub mode: usize,
    pub counter: usize,
}

/// Advances the (mode, counter) automaton given the requested next mode.
///
/// * `counter < k_d − 1`: only `requested == mode` is admissible, counter + 1.
/// * `counter == k_d − 1`, same mode: stays at `k_d − 1`.
/// * `counter == k_d − 1`, other mode: switch, counter resets to 0.
pub fn dwell_step(
    mode: usize,
    counter: usize,
    requested: usize,
    dwell_time: usize,
) -> Result<(usize, usize)> {
    if dwell_time == 0 || counter >= dwell_time {
        return Err(Error::InvalidInput(format!(
            "counter {counter} outside 0..{dwell_time}"
        )));
    }
    let settled = counter == dwell_time - 1;
    match (settled, requested == mode) {
        (false, true) => Ok((mode, counter + 1)),
        (false, false) => Err(Error::DwellViolation {
            current: mode,
            requested,
            elapsed: counter + 1,
            dwell_time,
        }),
        (true, true) => Ok((mode, counter)),
        (true, false) => Ok((requested, 0)),
    }
}

/// Requests admissible from (mode, counter).
pub fn admissible_requests(
    mode: usize,
    counter: usize,
    dwell_time: usize,
    num_modes: usize,
) -> std::ops::Range<usize> {
    if counter + 1 >= dwell_time {
        0..num_modes
    } else {
        mode..mode + 1
    }
}

/// Routes `selection · y_from` into `w_to[offset..offset + rows]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub from: usize,
    pub to: usize,
    pub selection: DMatrix<f64>,
    pub offset: usize,
}

/// Subsystems plus interconnection topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub subsystems: Vec<SubsystemSpec>,
    pub connections: Vec<Connection>,
}

/// Result of [`interconnect`].
#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    pub inputs: Vec<Vec<f64>>,
    /// Set when some state was outside its box and had to be clamped.
    pub clamped: bool,
}

impl NetworkSpec {
    pub fn new(subsystems: Vec<SubsystemSpec>, connections: Vec<Connection>) -> Result<Self> {
        let net = Self {
            subsystems,
            connections,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Checks dimensions, overlap of input blocks, and `Y_ij ⊆ W_ji`.
    pub fn validate(&self) -> Result<()> {
        let n = self.subsystems.len();
        for s in &self.subsystems {
            s.validate()?;
        }
        let mut used: Vec<Vec<bool>> = self
            .subsystems
            .iter()
            .map(|s| vec![false; s.input_dim()])
            .collect();
        for conn in &self.connections {
            if conn.from >= n || conn.to >= n || conn.from == conn.to {
                return Err(Error::InvalidInput(format!(
                    "connection {} -> {} is not between distinct subsystems",
                    conn.from, conn.to
                )));
            }
            let src = &self.subsystems[conn.from];
            let dst = &self.subsystems[conn.to];
            if conn.selection.ncols() != src.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "selection cols",
                    expected: src.output_dim(),
                    got: conn.selection.ncols(),
                });
            }
            let rows = conn.selection.nrows();
            if conn.offset + rows > dst.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "internal input block",
                    expected: dst.input_dim(),
                    got: conn.offset + rows,
                });
            }
            for k in conn.offset..conn.offset + rows {
                if used[conn.to][k] {
                    return Err(Error::InvalidInput(format!(
                        "internal input {k} of subsystem {} is fed twice",
                        conn.to
                    )));
                }
                used[conn.to][k] = true;
            }
            let range = output_range(&(&conn.selection * &src.c), &src.state_box);
            let target = BoxSet {
                lower: dst.input_box.lower[conn.offset..conn.offset + rows].to_vec(),
                upper: dst.input_box.upper[conn.offset..conn.offset + rows].to_vec(),
            };
            if !target.contains_box(&range, 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "output range of subsystem {} ({:?}) is not contained in the internal input box of subsystem {} ({:?})",
                    conn.from, range, conn.to, target
                )));
            }
        }
        Ok(())
    }

    /// Assembles every subsystem's internal input from its neighbours'
    /// outputs. Unconnected blocks are zero.
    pub fn interconnect(&self, states: &[Vec<f64>]) -> Result<Interconnection> {
        if states.len() != self.subsystems.len() {
            return Err(Error::DimensionMismatch {
                context: "network states",
                expected: self.subsystems.len(),
                got: states.len(),
            });
        }
        let mut clamped = false;
        let mut outputs = Vec::with_capacity(states.len());
        for (spec, x) in self.subsystems.iter().zip(states) {
            if x.len() != spec.state_dim() {
                return Err(Error::DimensionMismatch {
                    context: "subsystem state",
                    expected: spec.state_dim(),
                    got: x.len(),
                });
            }
            let x = if spec.state_box.contains(x) {
                x.clone()
            } else {
                clamped = true;
                spec.state_box.clamp(x)
            };
            outputs.push(DVector::from_vec(spec.output(&x)));
        }
        let mut inputs: Vec<Vec<f64>> = self
            .subsystems
            .iter()
            .map(|s| vec![0.0; s.input_dim()])
            .collect();
        for conn in &self.connections {
            let block = &conn.selection * &outputs[conn.from];
            inputs[conn.to][conn.offset..conn.offset + block.len()].copy_from_slice(block.as_slice());
        }
        Ok(Interconnection { inputs, clamped })
    }
}

/// Interval image of a box under a linear map.
fn output_range(map: &DMatrix<f64>, domain: &BoxSet) -> BoxSet {
    let mut lower = vec![0.0; map.nrows()];
    let mut upper = vec![0.0; map.nrows()];
    for i in 0..map.nrows() {
        for j in 0..map.ncols() {
            let c = map[(i, j)];
            let (a, b) = (c * domain.lower[j], c * domain.upper[j]);
            lower[i] += a.min(b);
            upper[i] += a.max(b);
        }
    }
    BoxSet { lower, upper }
}
