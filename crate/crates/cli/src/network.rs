//! JSON description of a network of switched subsystems. Matrices are lists
//! of rows.

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use stochswitch::linalg::from_rows;
use stochswitch::model::{BoxSet, Connection, ModeDynamics, NetworkSpec, NoiseModel, Nonlinearity, SubsystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    #[serde(default)]
    pub e: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub f: Option<Vec<Vec<f64>>>,
    /// Identity when absent.
    #[serde(default)]
    pub r: Option<Vec<Vec<f64>>>,
    /// Absent means unbounded.
    #[serde(default)]
    pub slope_bound: Option<f64>,
    #[serde(default = "no_nonlinearity")]
    pub nonlinearity: Nonlinearity,
}

fn no_nonlinearity() -> Nonlinearity {
    Nonlinearity::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemFile {
    pub name: String,
    pub modes: Vec<ModeFile>,
    /// Identity when absent.
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub dwell_time: usize,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionFile {
    pub from: usize,
    pub to: usize,
    /// Identity (output dimension) when absent.
    #[serde(default)]
    pub selection: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub subsystems: Vec<SubsystemFile>,
    #[serde(default)]
    pub connections: Vec<ConnectionFile>,
}

fn matrix(rows: &[Vec<f64>], context: &'static str, cols_if_empty: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols_if_empty));
    }
    Ok(from_rows(rows, context)?)
}

impl ModeFile {
    fn build(&self, n: usize) -> Result<ModeDynamics> {
        let a = matrix(&self.a, "A", n)?;
        let d = if self.d.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            matrix(&self.d, "D", 0)?
        };
        let r = match &self.r {
            Some(rows) => matrix(rows, "R", n)?,
            None => DMatrix::identity(n, n),
        };
        let mut mode = ModeDynamics::linear(a, DVector::from_column_slice(&self.b), d, r);
        if let Some(e) = &self.e {
            mode.e = matrix(e, "E", 1)?;
        }
        if let Some(f) = &self.f {
            mode.f = matrix(f, "F", n)?;
        }
        mode.slope_bound = self.slope_bound.unwrap_or(f64::INFINITY);
        mode.nonlinearity = self.nonlinearity.clone();
        Ok(mode)
    }
}

impl SubsystemFile {
    fn build(&self) -> Result<SubsystemSpec> {
        let n = self.state_box.dim();
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(p, m)| m.build(n).with_context(|| format!("subsystem {} mode {p}", self.name)))
            .collect::<Result<Vec<_>>>()?;
        let c = match &self.c {
            Some(rows) => matrix(rows, "C", n)?,
            None => DMatrix::identity(n, n),
        };
        SubsystemSpec::new(
            self.name.clone(),
            modes,
            c,
            self.state_box.clone(),
            self.input_box.clone(),
            self.dwell_time,
            self.noise.clone(),
        )
        .with_context(|| format!("subsystem {}", self.name))
    }
}

impl NetworkFile {
    pub fn build(&self) -> Result<NetworkSpec> {
        let subsystems = self.subsystems.iter().map(SubsystemFile::build).collect::<Result<Vec<_>>>()?;
        let connections = self
            .connections
            .iter()
            .map(|c| {
                let q = subsystems
                    .get(c.from)
                    .map(SubsystemSpec::output_dim)
                    .with_context(|| format!("connection source {} out of range", c.from))?;
                let selection = match &c.selection {
                    Some(rows) => matrix(rows, "selection", q)?,
                    None => DMatrix::identity(q, q),
                };
                Ok(Connection {
                    from: c.from,
                    to: c.to,
                    selection,
                    offset: c.offset,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkSpec::new(subsystems, connections)?)
    }
}
