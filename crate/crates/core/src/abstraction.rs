//! Finite MDP abstraction of a single subsystem: Gaussian cell probabilities
//! over a uniform state grid, for every (cell, mode, internal-input cell).

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Quantized, UniformGrid};
use crate::model::{step_concrete, SubsystemSpec};
use crate::normal;

/// Entries below this mass are folded into the absorbing state.
pub const SPARSITY_FLOOR: f64 = 1e-12;
/// Half-width of the per-dimension kernel window, in standard deviations.
pub const KERNEL_WINDOW: f64 = 8.0;

const MAGIC: &[u8; 4] = b"FMDP";
pub const FORMAT_VERSION: u32 = 1;

/// Sparse successor distribution of one (cell, mode, input) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(u32, f64)>,
    pub absorbing: f64,
}

impl SparseRow {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum::<f64>() + self.absorbing
    }
}

/// Borrowed view of a stored row.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub targets: &'a [u32],
    pub probs: &'a [f64],
    pub absorbing: f64,
}

impl RowView<'_> {
    /// Σ_x′ T(x′)·value(x′); the absorbing state contributes nothing.
    pub fn expectation(&self, value: &[f64]) -> f64 {
        self.targets
            .iter()
            .zip(self.probs)
            .map(|(t, p)| p * value[*t as usize])
            .sum()
    }
}

/// Per-subsystem finite MDP in CSR layout. Row `(x, p, w)` lives at
/// `(x · m + p) · n_w + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub state_grid: UniformGrid,
    pub input_grid: UniformGrid,
    pub num_modes: usize,
    pub dwell_time: usize,
    offsets: Vec<u64>,
    targets: Vec<u32>,
    probs: Vec<f64>,
    absorbing: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub memory_cap_bytes: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            memory_cap_bytes: 4 << 30,
        }
    }
}

/// One-dimensional factor of a product kernel: (cell, mass) pairs.
fn kernel_factor(grid: &UniformGrid, d: usize, mean: f64, std: f64) -> Vec<(usize, f64)> {
    if std == 0.0 {
        return grid.locate_1d(d, mean).map(|k| vec![(k, 1.0)]).unwrap_or_default();
    }
    let lo = (mean - KERNEL_WINDOW * std).max(grid.lower()[d]);
    let hi = (mean + KERNEL_WINDOW * std).min(grid.upper()[d]);
    if lo > hi {
        return Vec::new();
    }
    let (Some(k_lo), Some(k_hi)) = (grid.locate_1d(d, lo), grid.locate_1d(d, hi)) else {
        return Vec::new();
    };
    (k_lo..=k_hi)
        .map(|k| {
            let (lb, ub) = grid.cell_bounds(d, k);
            (k, normal::interval_mass((lb - mean) / std, (ub - mean) / std))
        })
        .collect()
}

/// Successor distribution of `(x, mode, w)` over the cells of `grid`.
///
/// The cell mass is the product over dimensions of the Gaussian interval
/// masses around the noiseless successor; everything else is absorbing.
pub fn transition_row(
    spec: &SubsystemSpec,
    grid: &UniformGrid,
    x: &[f64],
    mode: usize,
    w: &[f64],
) -> Result<SparseRow> {
    let zero_noise = vec![0.0; spec.noise_dim()];
    let mean = step_concrete(spec, x, mode, w, &zero_noise)?;
    let std = if spec.noise.is_none() {
        vec![0.0; mean.len()]
    } else {
        spec.kernel_std_devs(mode)?
    };
    Ok(row_from_moments(grid, &mean, &std))
}

fn row_from_moments(grid: &UniformGrid, mean: &[f64], std: &[f64]) -> SparseRow {
    let factors: Vec<Vec<(usize, f64)>> = (0..grid.dim())
        .map(|d| kernel_factor(grid, d, mean[d], std[d]))
        .collect();
    let mut entries = Vec::new();
    if factors.iter().all(|f| !f.is_empty()) {
        // odometer over the tensor product, last dimension fastest
        let mut pos = vec![0usize; factors.len()];
        'outer: loop {
            let mut mass = 1.0;
            let mut index = 0usize;
            for (d, f) in factors.iter().enumerate() {
                let (k, m) = f[pos[d]];
                mass *= m;
                index = index * grid.counts()[d] + k;
            }
            if mass >= SPARSITY_FLOOR {
                entries.push((index as u32, mass));
            }
            for d in (0..factors.len()).rev() {
                pos[d] += 1;
                if pos[d] < factors[d].len() {
                    continue 'outer;
                }
                pos[d] = 0;
            }
            break;
        }
    }
    let kept: f64 = entries.iter().map(|(_, p)| p).sum();
    SparseRow {
        entries,
        absorbing: (1.0 - kept).max(0.0),
    }
}

fn check_grid(grid: &UniformGrid, bounds: &crate::model::BoxSet, what: &str) -> Result<()> {
    if grid.dim() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            context: "abstraction grid",
            expected: bounds.dim(),
            got: grid.dim(),
        });
    }
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + v.abs()));
    if !same(grid.lower(), &bounds.lower) || !same(grid.upper(), &bounds.upper) {
        return Err(Error::InvalidInput(format!(
            "{what} grid does not cover the declared box"
        )));
    }
    Ok(())
}

/// Upper estimate of the bytes a [`FiniteMdp`] for these grids would take.
pub fn estimate_bytes(spec: &SubsystemSpec, state_grid: &UniformGrid, input_grid: &UniformGrid) -> u64 {
    let rows = state_grid.num_cells() as u64 * spec.num_modes() as u64 * input_grid.num_cells() as u64;
    let per_row: u64 = (0..spec.num_modes())
        .map(|p| {
            let std = spec
                .kernel_std_devs(p)
                .unwrap_or_else(|_| vec![f64::INFINITY; state_grid.dim()]);
            (0..state_grid.dim())
                .map(|d| {
                    let n = state_grid.counts()[d] as f64;
                    let window = if spec.noise.is_none() {
                        1.0
                    } else {
                        2.0 * KERNEL_WINDOW * std[d] / state_grid.widths()[d] + 2.0
                    };
                    window.min(n) as u64
                })
                .product::<u64>()
        })
        .max()
        .unwrap_or(0);
    rows.saturating_mul(8 + 8)
        .saturating_add(rows.saturating_mul(per_row).saturating_mul(12))
}

/// Builds every row of the abstraction (parallel over rows, deterministic).
pub fn build_finite_mdp(
    spec: &SubsystemSpec,
    state_grid: &UniformGrid,
    input_grid: &UniformGrid,
    options: BuildOptions,
) -> Result<FiniteMdp> {
    spec.validate()?;
    check_grid(state_grid, &spec.state_box, "state")?;
    check_grid(input_grid, &spec.input_box, "internal input")?;
    let estimated = estimate_bytes(spec, state_grid, input_grid);
    if estimated > options.memory_cap_bytes {
        return Err(Error::MemoryCap {
            estimated_bytes: estimated,
            cap_bytes: options.memory_cap_bytes,
        });
    }
    let m = spec.num_modes();
    let n_w = input_grid.num_cells();
    let n_rows = state_grid.num_cells() * m * n_w;
    let stds: Vec<Vec<f64>> = (0..m)
        .map(|p| {
            if spec.noise.is_none() {
                Ok(vec![0.0; spec.state_dim()])
            } else {
                spec.kernel_std_devs(p)
            }
        })
        .collect::<Result<_>>()?;
    let x_reps = state_grid.representatives();
    let w_reps = input_grid.representatives();
    let zero_noise = vec![0.0; spec.noise_dim()];

    let rows: Vec<SparseRow> = (0..n_rows)
        .into_par_iter()
        .map(|r| {
            let w_idx = r % n_w;
            let p = (r / n_w) % m;
            let x_idx = r / (n_w * m);
            let mean = step_concrete(spec, &x_reps[x_idx], p, &w_reps[w_idx], &zero_noise)?;
            Ok(row_from_moments(state_grid, &mean, &stds[p]))
        })
        .collect::<Result<_>>()?;

    FiniteMdp::from_rows(state_grid.clone(), input_grid.clone(), m, spec.dwell_time, rows)
}

/// `Π_x(f_p(x̂, ŵ, noise))`: the abstract one-step map.
pub fn abstract_step(
    grid: &UniformGrid,
    spec: &SubsystemSpec,
    x_hat: &[f64],
    mode: usize,
    w_hat: &[f64],
    noise: &[f64],
) -> Result<Quantized> {
    Ok(grid.quantize(&step_concrete(spec, x_hat, mode, w_hat, noise)?))
}

impl FiniteMdp {
    /// Assembles rows given in `(x, p, w)` order. Rows must be
    /// sub-stochastic with the absorbing remainder accounted for.
    pub fn from_rows(
        state_grid: UniformGrid,
        input_grid: UniformGrid,
        num_modes: usize,
        dwell_time: usize,
        rows: Vec<SparseRow>,
    ) -> Result<Self> {
        let n_rows = state_grid.num_cells() * num_modes * input_grid.num_cells();
        if num_modes == 0 || dwell_time == 0 {
            return Err(Error::InvalidInput("mode count and dwell time must be positive".into()));
        }
        if rows.len() != n_rows {
            return Err(Error::DimensionMismatch {
                context: "abstraction rows",
                expected: n_rows,
                got: rows.len(),
            });
        }
        let n_x = state_grid.num_cells();
        for (r, row) in rows.iter().enumerate() {
            let bad_entry = row
                .entries
                .iter()
                .any(|(t, p)| *t as usize >= n_x || !(*p >= 0.0));
            if bad_entry || !(row.absorbing >= 0.0) || (row.total() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("row {r} is not a distribution")));
            }
        }
        let nnz: usize = rows.iter().map(|r| r.entries.len()).sum();
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut targets = Vec::with_capacity(nnz);
        let mut probs = Vec::with_capacity(nnz);
        let mut absorbing = Vec::with_capacity(n_rows);
        offsets.push(0u64);
        for row in rows {
            for (t, p) in row.entries {
                targets.push(t);
                probs.push(p);
            }
            absorbing.push(row.absorbing);
            offsets.push(targets.len() as u64);
        }
        Ok(FiniteMdp {
            state_grid,
            input_grid,
            num_modes,
            dwell_time,
            offsets,
            targets,
            probs,
            absorbing,
        })
    }

    pub fn num_states(&self) -> usize {
        self.state_grid.num_cells()
    }

    pub fn num_inputs(&self) -> usize {
        self.input_grid.num_cells()
    }

    pub fn num_rows(&self) -> usize {
        self.absorbing.len()
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn row_index(&self, x_idx: usize, mode: usize, w_idx: usize) -> usize {
        (x_idx * self.num_modes + mode) * self.num_inputs() + w_idx
    }

    pub fn row(&self, x_idx: usize, mode: usize, w_idx: usize) -> RowView<'_> {
        self.row_at(self.row_index(x_idx, mode, w_idx))
    }

    pub fn row_at(&self, r: usize) -> RowView<'_> {
        let (a, b) = (self.offsets[r] as usize, self.offsets[r + 1] as usize);
        RowView {
            targets: &self.targets[a..b],
            probs: &self.probs[a..b],
            absorbing: self.absorbing[r],
        }
    }

    /// Largest |Σ row + absorbing − 1| over all rows.
    pub fn max_row_defect(&self) -> f64 {
        (0..self.num_rows())
            .map(|r| {
                let v = self.row_at(r);
                (v.probs.iter().sum::<f64>() + v.absorbing - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Memory footprint of the stored arrays.
    pub fn stored_bytes(&self) -> u64 {
        (self.offsets.len() * 8 + self.targets.len() * 4 + self.probs.len() * 8 + self.absorbing.len() * 8) as u64
    }

    /// Writes the versioned little-endian binary format (via a temporary file
    /// renamed into place).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.nnz() * 12 + self.num_rows() * 16);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for grid in [&self.state_grid, &self.input_grid] {
            encode_grid(&mut buf, grid);
        }
        buf.extend_from_slice(&(self.num_modes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dwell_time as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for o in &self.offsets {
            buf.extend_from_slice(&o.to_le_bytes());
        }
        for (t, p) in self.targets.iter().zip(&self.probs) {
            buf.extend_from_slice(&t.to_le_bytes());
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for a in &self.absorbing {
            buf.extend_from_slice(&a.to_le_bytes());
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
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(integrity("truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut cur = Cursor { bytes: body, pos: 8 };
        let truncated = || integrity("truncated");

        let mut grids = Vec::with_capacity(2);
        for _ in 0..2 {
            grids.push(decode_grid(&mut cur, path)?);
        }
        let num_modes = cur.u32().ok_or_else(truncated)? as usize;
        let dwell_time = cur.u32().ok_or_else(truncated)? as usize;
        let n_rows = cur.u64().ok_or_else(truncated)? as usize;
        let nnz = cur.u64().ok_or_else(truncated)? as usize;
        let needed = (n_rows as u128 + 1) * 8 + nnz as u128 * 12 + n_rows as u128 * 8;
        if needed > (body.len() - cur.pos) as u128 {
            return Err(truncated());
        }
        if needed < (body.len() - cur.pos) as u128 {
            return Err(integrity("trailing bytes"));
        }
        if u64::from_le_bytes(tail.try_into().unwrap()) != fnv1a(body) {
            return Err(integrity("checksum mismatch"));
        }
        let offsets: Vec<u64> = (0..=n_rows).map(|_| cur.u64().unwrap()).collect();
        let mut targets = Vec::with_capacity(nnz);
        let mut probs = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            targets.push(cur.u32().unwrap());
            probs.push(cur.f64().unwrap());
        }
        let absorbing: Vec<f64> = (0..n_rows).map(|_| cur.f64().unwrap()).collect();

        let state_grid = grids.remove(0);
        let input_grid = grids.remove(0);
        if num_modes == 0 || n_rows != state_grid.num_cells() * num_modes * input_grid.num_cells() {
            return Err(integrity("row count does not match grids"));
        }
        if offsets[0] != 0
            || offsets.windows(2).any(|w| w[1] < w[0])
            || offsets[n_rows] as usize != nnz
            || targets.iter().any(|t| *t as usize >= state_grid.num_cells())
        {
            return Err(integrity("inconsistent row structure"));
        }
        Ok(FiniteMdp {
            state_grid,
            input_grid,
            num_modes,
            dwell_time,
            offsets,
            targets,
            probs,
            absorbing,
        })
    }

    /// One line per stored entry plus one per absorbing mass.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "x_index,mode,w_index,target,probability")?;
        let n_w = self.num_inputs();
        for r in 0..self.num_rows() {
            let (w_idx, p, x_idx) = (r % n_w, (r / n_w) % self.num_modes, r / (n_w * self.num_modes));
            let row = self.row_at(r);
            for (t, prob) in row.targets.iter().zip(row.probs) {
                writeln!(out, "{x_idx},{p},{w_idx},{t},{prob:e}")?;
            }
            writeln!(out, "{x_idx},{p},{w_idx},absorbing,{:e}", row.absorbing)?;
        }
        Ok(())
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let slice = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        slice.try_into().ok()
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }

    pub fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub(crate) fn encode_grid(buf: &mut Vec<u8>, grid: &UniformGrid) {
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for d in 0..grid.dim() {
        buf.extend_from_slice(&grid.lower()[d].to_le_bytes());
        buf.extend_from_slice(&grid.upper()[d].to_le_bytes());
        buf.extend_from_slice(&(grid.counts()[d] as u32).to_le_bytes());
    }
}

pub(crate) fn decode_grid(cur: &mut Cursor<'_>, path: &Path) -> Result<UniformGrid> {
    let integrity = |reason: &str| Error::Integrity {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let dim = cur.u32().ok_or_else(|| integrity("truncated"))? as usize;
    let mut lower = Vec::with_capacity(dim.min(64));
    let mut upper = Vec::with_capacity(dim.min(64));
    let mut counts = Vec::with_capacity(dim.min(64));
    for _ in 0..dim {
        lower.push(cur.f64().ok_or_else(|| integrity("truncated"))?);
        upper.push(cur.f64().ok_or_else(|| integrity("truncated"))?);
        counts.push(cur.u32().ok_or_else(|| integrity("truncated"))? as usize);
    }
    let bounds = crate::model::BoxSet::new(lower, upper).map_err(|_| integrity("invalid grid bounds"))?;
    UniformGrid::from_counts(&bounds, counts).map_err(|_| integrity("invalid grid"))
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{path:?} has no file name")))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
