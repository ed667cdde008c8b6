//! Paired Monte Carlo rollouts of a concrete network and its abstraction,
//! driven by the same switching signal and the same noise draws.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_step;
use crate::error::{Error, Result};
use crate::grid::{Quantized, UniformGrid};
use crate::linalg::inf_norm;
use crate::model::{dwell_step, step_concrete, BoxSet, NetworkSpec};
use crate::normal;
use crate::synthesis::Policy;

/// Per-subsystem abstraction data needed for rollouts.
#[derive(Debug, Clone, Copy)]
pub struct SubsystemAbstraction<'a> {
    pub state_grid: &'a UniformGrid,
    pub input_grid: &'a UniformGrid,
    /// Switching policy; without one the initial mode is kept.
    pub policy: Option<&'a Policy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub initial_states: Vec<Vec<f64>>,
    /// Defaults to the cells of `initial_states`.
    pub initial_abstract: Option<Vec<Vec<f64>>>,
    pub initial_modes: Vec<usize>,
    /// Per-subsystem safe boxes; defaults to the state boxes.
    pub safe: Option<Vec<BoxSet>>,
    /// Number of leading runs whose full trajectories are kept.
    pub record: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `[k][i]`
    pub concrete: Vec<Vec<Vec<f64>>>,
    /// `[k][i]`, `None` once the abstract subsystem is absorbed.
    pub abstract_states: Vec<Vec<Option<Vec<f64>>>>,
    pub modes: Vec<Vec<usize>>,
    pub counters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// `max_i ‖y_i(k) − ŷ_i(k)‖∞` for `k = 0..=T` (∞ after absorption).
    pub deviation: Vec<f64>,
    /// Whether each concrete subsystem stayed in its safe box at every step.
    pub safe: Vec<bool>,
    pub trajectory: Option<Trajectory>,
}

impl RunOutcome {
    pub fn sup_deviation(&self) -> f64 {
        self.deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn jointly_safe(&self) -> bool {
        self.safe.iter().all(|s| *s)
    }
}

fn sample_noise(rng: &mut ChaCha8Rng, std: &[f64]) -> Vec<f64> {
    std.iter()
        .map(|s| if *s == 0.0 { 0.0 } else { s * normal::sample(rng) })
        .collect()
}

fn quantize_input(grid: &UniformGrid, bounds: &BoxSet, w: &[f64]) -> Vec<f64> {
    match grid.quantize(w) {
        Quantized::Cell { representative, .. } => representative,
        Quantized::Absorbing => grid.lattice_representative(&bounds.clamp(w)),
    }
}

fn check_config(net: &NetworkSpec, parts: &[SubsystemAbstraction<'_>], cfg: &RolloutConfig) -> Result<()> {
    let n = net.len();
    if cfg.runs == 0 {
        return Err(Error::InvalidInput("at least one run is required".into()));
    }
    for (context, got) in [
        ("abstractions", parts.len()),
        ("initial states", cfg.initial_states.len()),
        ("initial modes", cfg.initial_modes.len()),
        ("initial abstract states", cfg.initial_abstract.as_ref().map_or(n, Vec::len)),
        ("safe boxes", cfg.safe.as_ref().map_or(n, Vec::len)),
    ] {
        if got != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got,
            });
        }
    }
    for (i, spec) in net.subsystems.iter().enumerate() {
        if cfg.initial_modes[i] >= spec.num_modes() {
            return Err(Error::InvalidInput(format!("initial mode of subsystem {i} out of range")));
        }
        if parts[i].state_grid.dim() != spec.state_dim() || parts[i].input_grid.dim() != spec.input_dim() {
            return Err(Error::InvalidInput(format!("grids of subsystem {i} do not match its dimensions")));
        }
        if let Some(policy) = parts[i].policy {
            if policy.dwell_time != spec.dwell_time || policy.num_modes != spec.num_modes() {
                return Err(Error::InvalidInput(format!("policy of subsystem {i} does not match its modes")));
            }
        }
    }
    Ok(())
}

fn single_run(
    net: &NetworkSpec,
    parts: &[SubsystemAbstraction<'_>],
    cfg: &RolloutConfig,
    safe_boxes: &[BoxSet],
    run: usize,
) -> Result<RunOutcome> {
    let n = net.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run as u64);
    let stds: Vec<Vec<f64>> = net
        .subsystems
        .iter()
        .map(|s| s.noise.std_devs(s.noise_dim()))
        .collect();

    let mut x = cfg.initial_states.clone();
    let mut x_hat: Vec<Option<Vec<f64>>> = match &cfg.initial_abstract {
        Some(a) => a.iter().map(|v| Some(v.clone())).collect(),
        None => (0..n)
            .map(|i| match parts[i].state_grid.quantize(&x[i]) {
                Quantized::Cell { representative, .. } => Some(representative),
                Quantized::Absorbing => None,
            })
            .collect(),
    };
    // last in-box abstract state, used as the output seen by neighbours
    let mut last_hat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            x_hat[i]
                .clone()
                .unwrap_or_else(|| net.subsystems[i].state_box.clamp(&x[i]))
        })
        .collect();
    let mut modes = cfg.initial_modes.clone();
    let mut counters = vec![0usize; n];
    let mut safe = vec![true; n];
    let mut deviation = Vec::with_capacity(cfg.horizon + 1);
    let mut trajectory = (run < cfg.record).then(|| Trajectory {
        concrete: Vec::new(),
        abstract_states: Vec::new(),
        modes: Vec::new(),
        counters: Vec::new(),
    });

    for k in 0..=cfg.horizon {
        let mut dev = 0.0f64;
        for i in 0..n {
            let spec = &net.subsystems[i];
            if !safe_boxes[i].contains(&x[i]) {
                safe[i] = false;
            }
            dev = dev.max(match &x_hat[i] {
                Some(h) => {
                    let diff: Vec<f64> = spec
                        .output(&x[i])
                        .iter()
                        .zip(spec.output(h))
                        .map(|(a, b)| a - b)
                        .collect();
                    inf_norm(&diff)
                }
                None => f64::INFINITY,
            });
        }
        deviation.push(dev);
        if let Some(t) = trajectory.as_mut() {
            t.concrete.push(x.clone());
            t.abstract_states.push(x_hat.clone());
            t.modes.push(modes.clone());
            t.counters.push(counters.clone());
        }
        if k == cfg.horizon {
            break;
        }

        let concrete_inputs = net.interconnect(&x)?.inputs;
        let abstract_inputs = net.interconnect(&last_hat)?.inputs;
        let mut next_modes = modes.clone();
        let mut next_counters = counters.clone();
        for i in 0..n {
            let spec = &net.subsystems[i];
            let request = match (parts[i].policy, &x_hat[i]) {
                (Some(policy), Some(h)) => policy.refine(h, modes[i], counters[i], k),
                _ => modes[i],
            };
            (next_modes[i], next_counters[i]) = dwell_step(modes[i], counters[i], request, spec.dwell_time)?;

            let noise = sample_noise(&mut rng, &stds[i]);
            let next = step_concrete(spec, &x[i], modes[i], &concrete_inputs[i], &noise)?;
            if let Some(h) = &x_hat[i] {
                let w_hat = quantize_input(parts[i].input_grid, &spec.input_box, &abstract_inputs[i]);
                x_hat[i] = match abstract_step(parts[i].state_grid, spec, h, modes[i], &w_hat, &noise)? {
                    Quantized::Cell { representative, .. } => {
                        last_hat[i] = representative.clone();
                        Some(representative)
                    }
                    Quantized::Absorbing => None,
                };
            }
            x[i] = next;
        }
        modes = next_modes;
        counters = next_counters;
    }
    Ok(RunOutcome {
        deviation,
        safe,
        trajectory,
    })
}

/// Runs `cfg.runs` independent paired rollouts. Run `r` draws from its own
/// stream of the seeded generator, so results do not depend on scheduling.
pub fn rollout_pair(
    net: &NetworkSpec,
    parts: &[SubsystemAbstraction<'_>],
    cfg: &RolloutConfig,
) -> Result<Vec<RunOutcome>> {
    check_config(net, parts, cfg)?;
    let safe_boxes = cfg
        .safe
        .clone()
        .unwrap_or_else(|| net.subsystems.iter().map(|s| s.state_box.clone()).collect());
    (0..cfg.runs)
        .into_par_iter()
        .map(|run| single_run(net, parts, cfg, &safe_boxes, run))
        .collect()
}

/// Empirical frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub fraction: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_count(hits: usize, samples: usize) -> Self {
        if samples == 0 {
            return Self {
                fraction: 0.0,
                std_error: 0.0,
                samples,
            };
        }
        let fraction = hits as f64 / samples as f64;
        Self {
            fraction,
            std_error: (fraction * (1.0 - fraction) / samples as f64).sqrt(),
            samples,
        }
    }
}

/// Fraction of runs whose supremum deviation reaches `epsilon`.
pub fn empirical_deviation_probability(sup_deviations: &[f64], epsilon: f64) -> Estimate {
    let hits = sup_deviations.iter().filter(|d| **d >= epsilon).count();
    Estimate::from_count(hits, sup_deviations.len())
}

/// Fraction of `true` flags.
pub fn empirical_safety(flags: &[bool]) -> Estimate {
    Estimate::from_count(flags.iter().filter(|f| **f).count(), flags.len())
}

/// Whether subsystem `index` of a recorded trajectory stays in `safe`.
pub fn stays_safe(trajectory: &Trajectory, index: usize, safe: &BoxSet) -> bool {
    trajectory.concrete.iter().all(|states| safe.contains(&states[index]))
}

/// Empirical quantile (nearest rank) of the supremum deviations.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub runs: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub deviation: Estimate,
    /// `None` marks an unbounded quantile (the abstraction left its box).
    pub deviation_quantiles: Vec<(f64, Option<f64>)>,
    pub safety_per_subsystem: Vec<Estimate>,
    pub joint_safety: Estimate,
}

pub fn summarize(outcomes: &[RunOutcome], horizon: usize, epsilon: f64) -> SimulationSummary {
    let mut sups: Vec<f64> = outcomes.iter().map(RunOutcome::sup_deviation).collect();
    let deviation = empirical_deviation_probability(&sups, epsilon);
    sups.sort_by(f64::total_cmp);
    let n = outcomes.first().map_or(0, |o| o.safe.len());
    let safety_per_subsystem = (0..n)
        .map(|i| empirical_safety(&outcomes.iter().map(|o| o.safe[i]).collect::<Vec<_>>()))
        .collect();
    let joint = outcomes.iter().map(RunOutcome::jointly_safe).collect::<Vec<_>>();
    SimulationSummary {
        runs: outcomes.len(),
        horizon,
        epsilon,
        deviation,
        deviation_quantiles: [0.5, 0.9, 0.99, 1.0]
            .iter()
            .map(|q| (*q, Some(quantile(&sups, *q)).filter(|v| v.is_finite())))
            .collect(),
        safety_per_subsystem,
        joint_safety: empirical_safety(&joint),
    }
}

/// Long-format trajectory CSV: one line per (run, step, subsystem, dimension).
pub fn write_trajectories_csv<W: Write>(outcomes: &[RunOutcome], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "run,k,subsystem,dim,state,abstract_state,mode,counter")?;
    for (run, outcome) in outcomes.iter().enumerate() {
        let Some(t) = &outcome.trajectory else {
            continue;
        };
        for k in 0..t.concrete.len() {
            for (i, state) in t.concrete[k].iter().enumerate() {
                for (d, v) in state.iter().enumerate() {
                    let hat = t.abstract_states[k][i]
                        .as_ref()
                        .map_or_else(|| "absorbed".to_string(), |h| h[d].to_string());
                    writeln!(out, "{run},{k},{i},{d},{v},{hat},{},{}", t.modes[k][i], t.counters[k][i])?;
                }
            }
        }
    }
    Ok(())
}
