//! The two reference networks: a circular ring of traffic cells and a fully
//! interconnected network of two-dimensional nonlinear subsystems.

use nalgebra::{DMatrix, DVector};

use crate::certificates::{ModeCertificate, Provenance, SpsfCertificate};
use crate::error::Result;
use crate::kinf::KInfFn;
use crate::model::{
    BoxSet, Connection, ModeDynamics, NetworkSpec, NoiseModel, Nonlinearity, SubsystemSpec,
};

/// Sampling interval in seconds.
const TRAFFIC_TAU: f64 = 6.48;
/// Flow speed in km/h.
const TRAFFIC_SPEED: f64 = 100.0;
/// Cell length in km.
const TRAFFIC_LENGTH: f64 = 0.5;
/// Fraction of vehicles leaving through each exit.
const TRAFFIC_EXIT_RATIO: f64 = 0.25;
/// Vehicles admitted per step on green.
const TRAFFIC_GREEN_INFLOW: f64 = 8.0;

/// Fraction of a cell's vehicles moving on to the next cell per step (0.36).
pub fn traffic_transfer() -> f64 {
    TRAFFIC_TAU / 3600.0 * TRAFFIC_SPEED / TRAFFIC_LENGTH
}

/// Self-coupling of a traffic cell (0.39).
pub fn traffic_retention() -> f64 {
    1.0 - traffic_transfer() - TRAFFIC_EXIT_RATIO
}

/// One traffic cell. Mode 0 is a red light, mode 1 green. `noise_std` is the
/// standard deviation of the additive Gaussian noise.
pub fn traffic_cell(noise_std: f64) -> Result<SubsystemSpec> {
    let a = DMatrix::from_element(1, 1, traffic_retention());
    let d = DMatrix::from_element(1, 1, traffic_transfer());
    let r = DMatrix::identity(1, 1);
    let modes = [0.0, TRAFFIC_GREEN_INFLOW]
        .iter()
        .map(|b| ModeDynamics::linear(a.clone(), DVector::from_element(1, *b), d.clone(), r.clone()))
        .collect();
    let noise = if noise_std == 1.0 {
        NoiseModel::StandardNormal
    } else {
        NoiseModel::ScaledNormal {
            sigma: vec![noise_std],
        }
    };
    SubsystemSpec::new(
        "cell",
        modes,
        DMatrix::identity(1, 1),
        BoxSet::uniform(1, 0.0, 20.0)?,
        BoxSet::uniform(1, 0.0, 20.0)?,
        1,
        noise,
    )
}

/// Ring of `n` cells where cell `i` receives the output of cell `i − 1`.
pub fn traffic_ring(n: usize, noise_std: f64) -> Result<NetworkSpec> {
    let cell = traffic_cell(noise_std)?;
    let subsystems = (0..n)
        .map(|i| {
            let mut s = cell.clone();
            s.name = format!("cell{i}");
            s
        })
        .collect();
    let connections = if n < 2 {
        Vec::new()
    } else {
        (0..n)
            .map(|i| Connection {
                from: (i + n - 1) % n,
                to: i,
                selection: DMatrix::identity(1, 1),
                offset: 0,
            })
            .collect()
    };
    NetworkSpec::new(subsystems, connections)
}

/// Published certificate of a traffic cell: common quadratic function
/// `(x − x̂)²`, κ = 0.99, ρ_int = 0.72 s², ψ = 84.96 δ̄², α = s².
pub fn traffic_published_certificate() -> SpsfCertificate {
    SpsfCertificate {
        provenance: Provenance::Published,
        modes: vec![
            ModeCertificate {
                m: DMatrix::identity(1, 1),
                kappa_bar: 0.41,
                pi: 0.85,
            };
            2
        ],
        common_lyapunov: true,
        mu: 1.0,
        epsilon: 2.0,
        dwell_time: 1,
        additive: None,
        free: None,
        kappa: 0.99,
        rho_int: Some(KInfFn {
            coefficient: 0.72,
            exponent: 2.0,
        }),
        psi_coefficient: 84.96,
        alpha: KInfFn {
            coefficient: 1.0,
            exponent: 2.0,
        },
    }
}

const NONLINEAR_A: [[f64; 4]; 2] = [[0.05, 0.0, 0.9, 0.03], [0.02, -1.2, 0.0, 0.05]];
const NONLINEAR_B: [[f64; 2]; 2] = [[-0.9, 0.5], [0.9, -0.2]];
const NONLINEAR_COUPLING: f64 = 0.015;
const NONLINEAR_STATE_BOUND: f64 = 5.0;
const NONLINEAR_DWELL: usize = 7;

/// Subsystem `index` of the fully interconnected nonlinear network with `n`
/// members.
pub fn nonlinear_subsystem(n: usize, index: usize) -> Result<SubsystemSpec> {
    let input_dim = 2 * n.saturating_sub(1);
    let mut d = DMatrix::zeros(2, input_dim);
    for k in 0..n.saturating_sub(1) {
        d[(0, 2 * k)] = NONLINEAR_COUPLING;
        d[(1, 2 * k + 1)] = NONLINEAR_COUPLING;
    }
    let modes = (0..2)
        .map(|p| ModeDynamics {
            a: DMatrix::from_row_slice(2, 2, &NONLINEAR_A[p]),
            b: DVector::from_row_slice(&NONLINEAR_B[p]),
            d: d.clone(),
            e: DMatrix::from_element(2, 1, 0.1),
            f: DMatrix::from_element(1, 2, 0.1),
            r: DMatrix::identity(2, 2),
            slope_bound: 1.0,
            nonlinearity: Nonlinearity::Sine,
        })
        .collect();
    let input_box = if input_dim == 0 {
        BoxSet::new(Vec::new(), Vec::new())?
    } else {
        BoxSet::uniform(input_dim, -NONLINEAR_STATE_BOUND, NONLINEAR_STATE_BOUND)?
    };
    SubsystemSpec::new(
        format!("node{index}"),
        modes,
        DMatrix::identity(2, 2),
        BoxSet::uniform(2, -NONLINEAR_STATE_BOUND, NONLINEAR_STATE_BOUND)?,
        input_box,
        NONLINEAR_DWELL,
        NoiseModel::StandardNormal,
    )
}

/// Fully interconnected network: subsystem `i` stacks the states of all
/// other subsystems, in index order, as its internal input.
pub fn nonlinear_network(n: usize) -> Result<NetworkSpec> {
    let subsystems = (0..n)
        .map(|i| nonlinear_subsystem(n, i))
        .collect::<Result<Vec<_>>>()?;
    let mut connections = Vec::new();
    for to in 0..n {
        for from in (0..n).filter(|&j| j != to) {
            let slot = if from < to { from } else { from - 1 };
            connections.push(Connection {
                from,
                to,
                selection: DMatrix::identity(2, 2),
                offset: 2 * slot,
            });
        }
    }
    NetworkSpec::new(subsystems, connections)
}

/// Published per-mode certificate matrices of the nonlinear subsystems.
pub fn nonlinear_mode_certificates() -> Vec<ModeCertificate> {
    vec![
        ModeCertificate {
            m: DMatrix::from_row_slice(2, 2, &[1.311, 0.001, 0.001, 0.492]),
            kappa_bar: 0.7,
            pi: 0.5,
        },
        ModeCertificate {
            m: DMatrix::from_row_slice(2, 2, &[0.4, 0.01, 0.01, 1.49]),
            kappa_bar: 0.7,
            pi: 0.4,
        },
    ]
}

/// The published matrices with the second contraction rate raised to the
/// smallest value (rounded up) for which its matrix inequality holds.
pub fn nonlinear_feasible_mode_certificates() -> Vec<ModeCertificate> {
    let mut modes = nonlinear_mode_certificates();
    modes[1].kappa_bar = 0.7012;
    modes
}

/// Published certificate of a nonlinear subsystem: multiple quadratic
/// functions with dwell time 7 (ε = 1.75, μ = 3.27), κ = 0.99,
/// ρ_int = 0.19 s², ψ = 2266 δ̄², α = 0.2 s².
pub fn nonlinear_published_certificate() -> SpsfCertificate {
    SpsfCertificate {
        provenance: Provenance::Published,
        modes: nonlinear_mode_certificates(),
        common_lyapunov: false,
        mu: 3.27,
        epsilon: 1.75,
        dwell_time: NONLINEAR_DWELL,
        additive: None,
        free: None,
        kappa: 0.99,
        rho_int: Some(KInfFn {
            coefficient: 0.19,
            exponent: 2.0,
        }),
        psi_coefficient: 2266.0,
        alpha: KInfFn {
            coefficient: 0.2,
            exponent: 2.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traffic_coefficients() {
        assert!((traffic_transfer() - 0.36).abs() < 1e-14);
        assert!((traffic_retention() - 0.39).abs() < 1e-14);
    }

    #[test]
    fn nonlinear_network_is_consistent() {
        for n in [1, 2, 4] {
            let net = nonlinear_network(n).unwrap();
            assert_eq!(net.len(), n);
            assert_eq!(net.subsystems[0].input_dim(), 2 * (n - 1));
            assert_eq!(net.connections.len(), n * (n - 1));
        }
    }
}
