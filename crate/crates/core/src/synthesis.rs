//! Finite-horizon safety synthesis on a single abstraction with the state
//! augmented by (mode, dwell counter), and lookup of the resulting policy
//! from concrete states.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::abstraction::{decode_grid, encode_grid, fnv1a, write_atomic, Cursor, FiniteMdp};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::model::{admissible_requests, dwell_step, BoxSet};

const MAGIC: &[u8; 4] = b"SPOL";
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub safe: BoxSet,
    pub horizon: usize,
}

/// How internal inputs are resolved in the backup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputResolution {
    /// Worst case over the abstract input set.
    #[default]
    Adversarial,
    /// Best case; for diagnostics only.
    Cooperative,
}

/// Time-varying switching policy over augmented abstract states.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub state_grid: UniformGrid,
    pub num_modes: usize,
    pub dwell_time: usize,
    pub horizon: usize,
    /// `[k][x][p][l]`
    choices: Vec<u16>,
    /// Value at `k = 0`, `[x][p][l]`.
    initial_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetySolution {
    /// `values[k]` is the value table at step `k`, `[x][p][l]`, for `k = 0..=T`.
    pub values: Vec<Vec<f64>>,
    pub policy: Policy,
}

fn augmented(x: usize, mode: usize, counter: usize, m: usize, dwell: usize) -> usize {
    (x * m + mode) * dwell + counter
}

/// Backward max-min recursion
/// `V_k(x, p, l) = 1{safe}(x) · max_{p′} min_{ŵ} Σ T̂(x′ | x, p, ŵ) V_{k+1}(x′, p″, l″)`
/// where `(p″, l″)` is the dwell-automaton update of `(p, l)` under request
/// `p′`. The current mode drives the step; ties go to the lowest mode.
pub fn safety_value_iteration(
    mdp: &FiniteMdp,
    spec: &SafetySpec,
    dwell_time: usize,
    resolution: InputResolution,
) -> Result<SafetySolution> {
    if dwell_time != mdp.dwell_time {
        return Err(Error::InvalidInput(format!(
            "dwell time {dwell_time} differs from the abstraction's {}",
            mdp.dwell_time
        )));
    }
    if spec.safe.dim() != mdp.state_grid.dim() {
        return Err(Error::DimensionMismatch {
            context: "safe set",
            expected: mdp.state_grid.dim(),
            got: spec.safe.dim(),
        });
    }
    let safe: Vec<bool> = (0..mdp.num_states())
        .map(|x| spec.safe.contains(&mdp.state_grid.representative(x)))
        .collect();
    safety_value_iteration_masked(mdp, &safe, spec.horizon, resolution)
}

/// Same recursion with the safe set given per abstract state.
pub fn safety_value_iteration_masked(
    mdp: &FiniteMdp,
    safe: &[bool],
    horizon: usize,
    resolution: InputResolution,
) -> Result<SafetySolution> {
    if mdp.num_modes > u16::MAX as usize {
        return Err(Error::InvalidInput("too many modes".into()));
    }
    let (n_x, m, n_w, kd) = (mdp.num_states(), mdp.num_modes, mdp.num_inputs(), mdp.dwell_time);
    if safe.len() != n_x {
        return Err(Error::DimensionMismatch {
            context: "safe mask",
            expected: n_x,
            got: safe.len(),
        });
    }
    let block = m * kd;
    let terminal: Vec<f64> = (0..n_x * block)
        .map(|a| if safe[a / block] { 1.0 } else { 0.0 })
        .collect();

    let mut values = vec![terminal];
    let mut choice_steps: Vec<Vec<u16>> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = values.last().unwrap();
        let per_x: Vec<(Vec<f64>, Vec<u16>)> = (0..n_x)
            .into_par_iter()
            .map(|x| {
                let mut vals = vec![0.0; block];
                let mut picks = vec![0u16; block];
                for p in 0..m {
                    for l in 0..kd {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_mode = p;
                        for req in admissible_requests(p, l, kd, m) {
                            let (np, nl) = dwell_step(p, l, req, kd).expect("admissible request");
                            let expect = |w: usize| {
                                let row = mdp.row(x, p, w);
                                row.targets
                                    .iter()
                                    .zip(row.probs)
                                    .map(|(t, pr)| pr * next[augmented(*t as usize, np, nl, m, kd)])
                                    .sum::<f64>()
                            };
                            let resolved = match resolution {
                                InputResolution::Adversarial => {
                                    (0..n_w).map(expect).fold(f64::INFINITY, f64::min)
                                }
                                InputResolution::Cooperative => {
                                    (0..n_w).map(expect).fold(f64::NEG_INFINITY, f64::max)
                                }
                            };
                            if resolved > best {
                                best = resolved;
                                best_mode = req;
                            }
                        }
                        let a = p * kd + l;
                        vals[a] = if safe[x] { best.clamp(0.0, 1.0) } else { 0.0 };
                        picks[a] = best_mode as u16;
                    }
                }
                (vals, picks)
            })
            .collect();
        let mut vals = Vec::with_capacity(n_x * block);
        let mut picks = Vec::with_capacity(n_x * block);
        for (v, c) in per_x {
            vals.extend(v);
            picks.extend(c);
        }
        values.push(vals);
        choice_steps.push(picks);
    }
    values.reverse();
    choice_steps.reverse();
    let policy = Policy {
        state_grid: mdp.state_grid.clone(),
        num_modes: m,
        dwell_time: kd,
        horizon,
        choices: choice_steps.concat(),
        initial_values: values[0].clone(),
    };
    Ok(SafetySolution { values, policy })
}

impl SafetySolution {
    pub fn value(&self, k: usize, x: usize, mode: usize, counter: usize) -> f64 {
        let p = &self.policy;
        self.values[k][augmented(x, mode, counter, p.num_modes, p.dwell_time)]
    }

    /// Value slices at the requested steps, one line per augmented state.
    pub fn write_values_csv<W: Write>(&self, steps: &[usize], out: &mut W) -> std::io::Result<()> {
        let p = &self.policy;
        let dim = p.state_grid.dim();
        write!(out, "k,x_index")?;
        for d in 0..dim {
            write!(out, ",x{d}")?;
        }
        writeln!(out, ",mode,counter,value,choice")?;
        for &k in steps.iter().filter(|k| **k < self.values.len()) {
            for x in 0..p.state_grid.num_cells() {
                let rep = p.state_grid.representative(x);
                for mode in 0..p.num_modes {
                    for l in 0..p.dwell_time {
                        write!(out, "{k},{x}")?;
                        for r in &rep {
                            write!(out, ",{r}")?;
                        }
                        let choice = if k < p.horizon {
                            p.choice(k, x, mode, l).to_string()
                        } else {
                            String::new()
                        };
                        writeln!(out, ",{mode},{l},{:.12},{choice}", self.value(k, x, mode, l))?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Policy {
    pub fn choice(&self, k: usize, x: usize, mode: usize, counter: usize) -> usize {
        let per_step = self.state_grid.num_cells() * self.num_modes * self.dwell_time;
        self.choices[k * per_step + augmented(x, mode, counter, self.num_modes, self.dwell_time)] as usize
    }

    pub fn initial_value(&self, x: usize, mode: usize, counter: usize) -> f64 {
        self.initial_values[augmented(x, mode, counter, self.num_modes, self.dwell_time)]
    }

    /// Stationary extraction: the step-zero choice.
    pub fn stationary_choice(&self, x: usize, mode: usize, counter: usize) -> usize {
        self.choice(0, x, mode, counter)
    }

    /// Concrete controller: looks the cell of `x` up in the table. Outside
    /// the grid or past the horizon the current mode is kept.
    pub fn refine(&self, x: &[f64], mode: usize, counter: usize, k: usize) -> usize {
        if k >= self.horizon || mode >= self.num_modes || counter >= self.dwell_time {
            return mode;
        }
        match self.state_grid.quantize(x).index() {
            Some(cell) => self.choice(k, cell, mode, counter),
            None => mode,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.choices.len() * 2 + self.initial_values.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&POLICY_FORMAT_VERSION.to_le_bytes());
        encode_grid(&mut buf, &self.state_grid);
        for v in [self.num_modes, self.dwell_time, self.horizon] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for c in &self.choices {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for v in &self.initial_values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let integrity = |reason: &str| Error::Integrity {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(integrity("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != POLICY_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: POLICY_FORMAT_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(integrity("truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut cur = Cursor { bytes: body, pos: 8 };
        let state_grid = decode_grid(&mut cur, path)?;
        let mut header = [0usize; 3];
        for h in &mut header {
            *h = cur.u32().ok_or_else(|| integrity("truncated"))? as usize;
        }
        let [num_modes, dwell_time, horizon] = header;
        if num_modes == 0 || dwell_time == 0 {
            return Err(integrity("invalid header"));
        }
        let per_step = state_grid.num_cells() * num_modes * dwell_time;
        let needed = (per_step as u128) * (horizon as u128) * 2 + per_step as u128 * 8;
        let remaining = (body.len() - cur.pos) as u128;
        if needed > remaining {
            return Err(integrity("truncated"));
        }
        if needed < remaining {
            return Err(integrity("trailing bytes"));
        }
        if u64::from_le_bytes(tail.try_into().unwrap()) != fnv1a(body) {
            return Err(integrity("checksum mismatch"));
        }
        let mut choices = Vec::with_capacity(per_step * horizon);
        for _ in 0..per_step * horizon {
            let b = &body[cur.pos..cur.pos + 2];
            choices.push(u16::from_le_bytes([b[0], b[1]]));
            cur.pos += 2;
        }
        if choices.iter().any(|c| *c as usize >= num_modes) {
            return Err(integrity("mode index out of range"));
        }
        let initial_values = (0..per_step).map(|_| cur.f64().unwrap()).collect();
        Ok(Policy {
            state_grid,
            num_modes,
            dwell_time,
            horizon,
            choices,
            initial_values,
        })
    }
}
