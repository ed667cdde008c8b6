//! Pipeline stages. Each stage reads its inputs from the output directory,
//! writes its artifacts atomically and returns a one-line summary.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stochswitch::abstraction::{build_finite_mdp, write_atomic, BuildOptions, FiniteMdp};
use stochswitch::bounds::{
    closeness_bound, closeness_table, memory_table, write_closeness_csv, write_memory_csv, BoundQuery, BoundResult,
};
use stochswitch::certificates::{
    check_lmi, derive_spsf_constants, validate_spsf_empirical, DeriveOptions, FreeParameters, LmiReport,
    SpsfCertificate, ValidationOptions, ValidationReport,
};
use stochswitch::composition::{
    assemble_gains, check_small_gain, compose_ssf, ComposedSsf, CompositionOptions, GainGraph, InputQuantization,
    SmallGainResult,
};
use stochswitch::grid::{Quantized, UniformGrid};
use stochswitch::model::{BoxSet, NetworkSpec, SubsystemSpec};
use stochswitch::presets;
use stochswitch::simulate::{rollout_pair, summarize, write_trajectories_csv, RolloutConfig, SimulationSummary, SubsystemAbstraction};
use stochswitch::synthesis::{safety_value_iteration, InputResolution, Policy, SafetySpec};
use stochswitch::{Error, KInfFn};

use crate::config::{CertificatePreset, CertificateSource, ProjectConfig};

/// Version stamped into every JSON artifact.
pub const ARTIFACT_VERSION: u32 = 1;

const VERSION_KEY: &str = "format_version";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert(VERSION_KEY.into(), ARTIFACT_VERSION.into());
    }
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut v: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(obj) = v.as_object_mut() {
        let found = obj.remove(VERSION_KEY).and_then(|f| f.as_u64());
        if found != Some(ARTIFACT_VERSION as u64) {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: found.unwrap_or(0) as u32,
                expected: ARTIFACT_VERSION,
            }
            .into());
        }
    }
    serde_json::from_value(v).with_context(|| format!("reading {}", path.display()))
}

fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionInfo {
    pub path: String,
    pub rows: usize,
    pub nnz: usize,
    pub max_row_defect: f64,
    pub stored_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Index into `abstractions`; identical subsystems share one.
    pub abstraction: usize,
    pub state_grid: UniformGrid,
    pub input_grid: UniformGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub abstractions: Vec<AbstractionInfo>,
    pub subsystems: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiEntry {
    pub subsystem: usize,
    pub mode: usize,
    pub report: LmiReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSet {
    pub certificates: Vec<SpsfCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiSummary {
    pub strict: bool,
    pub all_hold: bool,
    pub checks: Vec<LmiEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    /// Per abstraction class, in order of first appearance.
    pub subsystems: Vec<usize>,
    pub reports: Vec<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedArtifact {
    pub composed: ComposedSsf,
    /// Network ψ at unit discretization, for the closeness table.
    pub psi_coefficient: f64,
    pub lambda_bar: f64,
    pub delta_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundArtifact {
    pub v0: f64,
    pub epsilon: f64,
    pub horizon: u32,
    pub result: BoundResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisEntry {
    pub name: String,
    pub policy: usize,
    /// DP value at the initial cell, mode and zero counter.
    pub initial_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisArtifact {
    pub horizon: usize,
    pub cooperative: bool,
    pub policies: Vec<String>,
    pub subsystems: Vec<SynthesisEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCheck {
    pub name: String,
    pub empirical: f64,
    pub std_error: f64,
    pub reference: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub subsystems: usize,
    pub small_gain: SmallGainResult,
    pub composed: ComposedArtifact,
    pub bound: BoundArtifact,
    pub synthesis: SynthesisArtifact,
    pub simulation: SimulationSummary,
    pub checks: Vec<ReportCheck>,
}

/// A loaded config plus the resolved output directory.
pub struct Pipeline {
    pub config: ProjectConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(config: ProjectConfig) -> Result<Self> {
        config.validate()?;
        let out = config.resolve(&config.output_dir);
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            bail!(Error::InvalidInput(format!(
                "missing {} in {}; run `{stage}` first",
                name,
                self.out.display()
            )));
        }
        Ok(p)
    }

    fn manifest(&self) -> Result<Manifest> {
        read_json(&self.require("manifest.json", "abstract")?)
    }

    fn certificates(&self) -> Result<Vec<SpsfCertificate>> {
        Ok(read_json::<CertificateSet>(&self.require("certificates.json", "certify")?)?.certificates)
    }

    fn composed(&self) -> Result<ComposedArtifact> {
        read_json(&self.require("composed.json", "compose")?)
    }

    fn state_grids(&self, net: &NetworkSpec) -> Result<Vec<UniformGrid>> {
        net.subsystems
            .iter()
            .map(|s| Ok(UniformGrid::from_delta(&s.state_box, self.config.grid.state_delta)?))
            .collect()
    }

    pub fn cmd_abstract(&self) -> Result<String> {
        let net = self.config.network()?;
        fs::create_dir_all(self.path("abstractions"))?;
        let options = BuildOptions {
            memory_cap_bytes: self.config.grid.memory_cap_bytes,
        };
        let mut classes: HashMap<String, usize> = HashMap::new();
        let mut infos = Vec::new();
        let mut entries = Vec::new();
        for spec in &net.subsystems {
            let state_grid = UniformGrid::from_delta(&spec.state_box, self.config.grid.state_delta)?;
            let input_grid = UniformGrid::from_delta(&spec.input_box, self.config.input_delta())?;
            let key = class_key(spec, &state_grid, &input_grid);
            let next = infos.len();
            let index = *classes.entry(key).or_insert(next);
            if index == next {
                let mdp = build_finite_mdp(spec, &state_grid, &input_grid, options)?;
                let rel = format!("abstractions/a{index}.fmdp");
                mdp.save(&self.path(&rel))?;
                infos.push(AbstractionInfo {
                    path: rel,
                    rows: mdp.num_rows(),
                    nnz: mdp.nnz(),
                    max_row_defect: mdp.max_row_defect(),
                    stored_bytes: mdp.stored_bytes(),
                });
            }
            entries.push(ManifestEntry {
                name: spec.name.clone(),
                abstraction: index,
                state_grid,
                input_grid,
            });
        }
        let summary = format!(
            "abstract: {} subsystem(s), {} distinct abstraction(s), {} stored entries",
            entries.len(),
            infos.len(),
            infos.iter().map(|i| i.nnz).sum::<usize>()
        );
        write_json(
            &self.path("manifest.json"),
            &Manifest {
                abstractions: infos,
                subsystems: entries,
            },
        )?;
        Ok(summary)
    }

    pub fn cmd_certify(&self) -> Result<String> {
        let net = self.config.network()?;
        let cfg = &self.config.certificates;
        let certs: Vec<SpsfCertificate> = match &cfg.source {
            CertificateSource::Preset { name } => {
                let cert = match name {
                    CertificatePreset::Traffic => presets::traffic_published_certificate(),
                    CertificatePreset::Nonlinear => presets::nonlinear_published_certificate(),
                };
                vec![cert; net.len()]
            }
            CertificateSource::File { path } => {
                let path = self.config.resolve(path);
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                match serde_json::from_str::<Vec<SpsfCertificate>>(&text) {
                    Ok(list) if list.len() == net.len() => list,
                    Ok(list) => bail!(Error::Certificate(format!(
                        "{} certificates for {} subsystems",
                        list.len(),
                        net.len()
                    ))),
                    Err(_) => vec![serde_json::from_str::<SpsfCertificate>(&text)?; net.len()],
                }
            }
            CertificateSource::Derive(d) => {
                let free = match (d.pi_tilde, d.delta_c) {
                    (Some(pi_tilde), Some(delta_c)) => Some(FreeParameters { pi_tilde, delta_c }),
                    (None, None) => None,
                    _ => bail!("config key `certificates.source`: give both pi_tilde and delta_c or neither"),
                };
                let options = DeriveOptions {
                    epsilon: d.epsilon,
                    dwell_time: d.dwell_time,
                    common_lyapunov: d.common_lyapunov,
                    free,
                    kappa_ceiling: d.kappa_ceiling,
                    rho_ceiling: d.rho_ceiling,
                };
                net.subsystems
                    .iter()
                    .map(|s| derive_spsf_constants(s, &d.modes, &options))
                    .collect::<stochswitch::Result<_>>()?
            }
        };

        let mut checks = Vec::new();
        for (i, (spec, cert)) in net.subsystems.iter().zip(&certs).enumerate() {
            cert.validate()?;
            if cert.modes.len() != spec.num_modes() {
                bail!(Error::Certificate(format!(
                    "subsystem {i}: {} mode certificates for {} modes",
                    cert.modes.len(),
                    spec.num_modes()
                )));
            }
            if !cert.common_lyapunov && cert.dwell_time > spec.dwell_time {
                bail!(Error::Certificate(format!(
                    "subsystem {i}: certificate needs dwell time {} but the subsystem enforces {}",
                    cert.dwell_time, spec.dwell_time
                )));
            }
            for (p, (mode, mc)) in spec.modes.iter().zip(&cert.modes).enumerate() {
                checks.push(LmiEntry {
                    subsystem: i,
                    mode: p,
                    report: check_lmi(mode, &mc.m, mc.kappa_bar, mc.pi)?,
                });
            }
        }
        let all_hold = checks.iter().all(|c| c.report.holds);
        write_json(
            &self.path("lmi.json"),
            &LmiSummary {
                strict: cfg.strict_lmi,
                all_hold,
                checks: checks.clone(),
            },
        )?;
        if !all_hold && cfg.strict_lmi {
            let bad = checks.iter().find(|c| !c.report.holds).expect("a failing check");
            bail!(Error::Certificate(format!(
                "matrix inequality fails for subsystem {} mode {} (λ_min = {:.3e})",
                bad.subsystem, bad.mode, bad.report.min_eigenvalue
            )));
        }

        let mut summary = format!("certify: {} certificate(s), matrix inequalities hold: {all_hold}", certs.len());
        if let Some(v) = &cfg.validate {
            let manifest = self.manifest()?;
            let mut seen = Vec::new();
            let mut reports = Vec::new();
            for (i, entry) in manifest.subsystems.iter().enumerate() {
                if seen.iter().any(|&j: &usize| manifest.subsystems[j].abstraction == entry.abstraction) {
                    continue;
                }
                seen.push(i);
                reports.push(validate_spsf_empirical(
                    &certs[i],
                    &net.subsystems[i],
                    &entry.state_grid,
                    &entry.input_grid,
                    ValidationOptions {
                        tuples: v.tuples,
                        inner_samples: v.inner_samples,
                        seed: self.config.simulation.seed,
                    },
                )?);
            }
            let worst = reports.iter().map(|r| r.pass_fraction).fold(1.0, f64::min);
            summary.push_str(&format!(", worst validation pass fraction {worst:.4}"));
            write_json(
                &self.path("validation.json"),
                &ValidationSummary {
                    subsystems: seen,
                    reports,
                },
            )?;
        }
        write_json(&self.path("certificates.json"), &CertificateSet { certificates: certs })?;
        Ok(summary)
    }

    pub fn cmd_compose(&self) -> Result<String> {
        let net = self.config.network()?;
        let certs = self.certificates()?;
        let c = &self.config.composition;
        let lambda_bar = KInfFn::linear(c.lambda_bar)?;
        let delta_f = KInfFn::linear(c.delta_f)?;
        let graph: GainGraph = assemble_gains(&certs, &net, &lambda_bar, &delta_f)?;
        write_json(&self.path("gains.json"), &graph)?;
        let result = check_small_gain(&graph);
        write_json(&self.path("small_gain.json"), &result)?;
        if !result.feasible {
            bail!(Error::SmallGainInfeasible {
                cycle: result.witness_cycle.clone().unwrap_or_default(),
                product: result.witness_product.unwrap_or(f64::INFINITY),
            });
        }
        let grids = self.state_grids(&net)?;
        let delta_bars: Vec<f64> = grids.iter().map(UniformGrid::delta_bar).collect();
        let quantization = if self.config.grid.matched_io {
            InputQuantization::Matched
        } else {
            let mu = self.config.input_delta();
            InputQuantization::Independent(vec![vec![mu; net.len()]; net.len()])
        };
        let options = CompositionOptions {
            lambda_bar,
            delta_f,
            quantization,
        };
        let composed = compose_ssf(&certs, &graph, &result, &delta_bars, &options)?;
        let unit = compose_ssf(
            &certs,
            &graph,
            &result,
            &vec![1.0; net.len()],
            &CompositionOptions {
                quantization: InputQuantization::Matched,
                ..options
            },
        )?;
        let summary = format!(
            "compose: max cycle mean {:.6}, κ = {:.6}, ψ = {:.6e}",
            result.max_cycle_mean, composed.kappa, composed.psi
        );
        write_json(
            &self.path("composed.json"),
            &ComposedArtifact {
                composed,
                psi_coefficient: unit.psi,
                lambda_bar: c.lambda_bar,
                delta_f: c.delta_f,
            },
        )?;
        Ok(summary)
    }

    fn initial_value(&self, net: &NetworkSpec, certs: &[SpsfCertificate], composed: &ComposedSsf) -> Result<f64> {
        if let Some(v0) = self.config.bound.v0 {
            return Ok(v0);
        }
        let grids = self.state_grids(net)?;
        let a = self.config.initial_states(net.len())?;
        let a_hat: Vec<Vec<f64>> = a
            .iter()
            .zip(&grids)
            .map(|(x, g)| match g.quantize(x) {
                Quantized::Cell { representative, .. } => representative,
                Quantized::Absorbing => x.clone(),
            })
            .collect();
        let modes = self.config.initial_modes(net.len())?;
        Ok(composed.initial_value(certs, &a, &a_hat, &modes)?)
    }

    pub fn cmd_bound(&self) -> Result<String> {
        let net = self.config.network()?;
        let certs = self.certificates()?;
        let artifact = self.composed()?;
        let c = &artifact.composed;
        let b = &self.config.bound;
        let v0 = self.initial_value(&net, &certs, c)?;
        let result = closeness_bound(&BoundQuery {
            alpha: c.alpha,
            kappa: c.kappa,
            psi: c.psi,
            epsilon: b.epsilon,
            horizon: b.horizon,
            v0,
        })?;
        let summary = format!(
            "bound: P(sup deviation < {}) ≥ {:.6} over {} steps ({} branch)",
            b.epsilon,
            result.guarantee,
            b.horizon,
            result.branch.as_str()
        );
        write_json(
            &self.path("bound.json"),
            &BoundArtifact {
                v0,
                epsilon: b.epsilon,
                horizon: b.horizon,
                result,
            },
        )?;
        Ok(summary)
    }

    pub fn cmd_synthesize(&self) -> Result<String> {
        let net = self.config.network()?;
        let manifest = self.manifest()?;
        let safe = self.config.safe_boxes(&net)?;
        let s = &self.config.synthesis;
        let resolution = if s.cooperative {
            InputResolution::Cooperative
        } else {
            InputResolution::Adversarial
        };
        let initial = self.config.initial_states(net.len())?;
        let modes = self.config.initial_modes(net.len())?;
        fs::create_dir_all(self.path("policies"))?;

        let mut classes: Vec<(usize, BoxSet)> = Vec::new();
        let mut policies: Vec<String> = Vec::new();
        let mut loaded: Vec<Policy> = Vec::new();
        let mut entries = Vec::new();
        let mut mdps: HashMap<usize, FiniteMdp> = HashMap::new();
        for (i, entry) in manifest.subsystems.iter().enumerate() {
            let key = (entry.abstraction, safe[i].clone());
            let index = match classes.iter().position(|k| *k == key) {
                Some(index) => index,
                None => {
                    let index = classes.len();
                    let mdp = match mdps.entry(entry.abstraction) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => {
                            let info = &manifest.abstractions[entry.abstraction];
                            e.insert(FiniteMdp::load(&self.path(&info.path))?)
                        }
                    };
                    let spec = SafetySpec {
                        safe: safe[i].clone(),
                        horizon: s.horizon,
                    };
                    let solution = safety_value_iteration(mdp, &spec, net.subsystems[i].dwell_time, resolution)?;
                    let rel = format!("policies/p{index}.spol");
                    solution.policy.save(&self.path(&rel))?;
                    write_csv(&self.path(&format!("values_p{index}.csv")), |out| {
                        solution.write_values_csv(&[0], out)
                    })?;
                    classes.push(key);
                    policies.push(rel);
                    loaded.push(solution.policy);
                    index
                }
            };
            let policy = &loaded[index];
            let initial_value = match entry.state_grid.quantize(&initial[i]).index() {
                Some(cell) => policy.initial_value(cell, modes[i], 0),
                None => 0.0,
            };
            entries.push(SynthesisEntry {
                name: entry.name.clone(),
                policy: index,
                initial_value,
            });
        }
        let worst = entries.iter().map(|e| e.initial_value).fold(1.0, f64::min);
        let summary = format!(
            "synthesize: {} polic(ies), smallest initial safety value {worst:.6}",
            policies.len()
        );
        write_json(
            &self.path("synthesis.json"),
            &SynthesisArtifact {
                horizon: s.horizon,
                cooperative: s.cooperative,
                policies,
                subsystems: entries,
            },
        )?;
        Ok(summary)
    }

    pub fn cmd_simulate(&self) -> Result<String> {
        let net = self.config.network()?;
        let manifest = self.manifest()?;
        let synthesis: SynthesisArtifact = read_json(&self.require("synthesis.json", "synthesize")?)?;
        let policies = synthesis
            .policies
            .iter()
            .map(|p| Ok(Policy::load(&self.path(p))?))
            .collect::<Result<Vec<_>>>()?;
        if manifest.subsystems.len() != net.len() || synthesis.subsystems.len() != net.len() {
            bail!(Error::InvalidInput(
                "artifacts describe a different network; rerun the earlier stages".into()
            ));
        }
        let parts: Vec<SubsystemAbstraction<'_>> = manifest
            .subsystems
            .iter()
            .zip(&synthesis.subsystems)
            .map(|(m, s)| SubsystemAbstraction {
                state_grid: &m.state_grid,
                input_grid: &m.input_grid,
                policy: Some(&policies[s.policy]),
            })
            .collect();
        let sim = &self.config.simulation;
        let cfg = RolloutConfig {
            runs: sim.runs,
            horizon: synthesis.horizon,
            seed: sim.seed,
            initial_states: self.config.initial_states(net.len())?,
            initial_abstract: None,
            initial_modes: self.config.initial_modes(net.len())?,
            safe: Some(self.config.safe_boxes(&net)?),
            record: sim.record,
        };
        let outcomes = rollout_pair(&net, &parts, &cfg)?;
        let summary = summarize(&outcomes, synthesis.horizon, self.config.bound.epsilon);
        if sim.record > 0 {
            write_csv(&self.path("trajectories.csv"), |out| write_trajectories_csv(&outcomes, out))?;
        }
        let line = format!(
            "simulate: {} runs, deviation ≥ {} in {:.4} of runs, joint safety {:.4}",
            summary.runs, summary.epsilon, summary.deviation.fraction, summary.joint_safety.fraction
        );
        write_json(&self.path("simulation.json"), &summary)?;
        Ok(line)
    }

    pub fn cmd_report(&self) -> Result<String> {
        let net = self.config.network()?;
        let small_gain: SmallGainResult = read_json(&self.require("small_gain.json", "compose")?)?;
        let composed = self.composed()?;
        let bound: BoundArtifact = read_json(&self.require("bound.json", "bound")?)?;
        let synthesis: SynthesisArtifact = read_json(&self.require("synthesis.json", "synthesize")?)?;
        let simulation: SimulationSummary = read_json(&self.require("simulation.json", "simulate")?)?;

        let b = &self.config.bound;
        let deltas = if b.table_deltas.is_empty() {
            vec![self.config.grid.state_delta]
        } else {
            b.table_deltas.clone()
        };
        let c = &composed.composed;
        let rows = closeness_table(&c.alpha, c.kappa, composed.psi_coefficient, bound.epsilon, bound.horizon, bound.v0, &deltas)?;
        write_csv(&self.path("closeness.csv"), |out| write_closeness_csv(&rows, out))?;
        if let Some(m) = &self.config.memory {
            let rows = memory_table(m.box_length, &m.deltas, m.modes, m.subsystems);
            write_csv(&self.path("memory.csv"), |out| write_memory_csv(&rows, out))?;
        }
        write_csv(&self.path("monte_carlo.csv"), |out| {
            use std::io::Write;
            writeln!(out, "quantity,value,std_error")?;
            writeln!(
                out,
                "deviation_probability,{:.12},{:.12}",
                simulation.deviation.fraction, simulation.deviation.std_error
            )?;
            for (q, v) in &simulation.deviation_quantiles {
                match v {
                    Some(v) => writeln!(out, "sup_deviation_q{q},{v:.12},")?,
                    None => writeln!(out, "sup_deviation_q{q},inf,")?,
                }
            }
            for (i, e) in simulation.safety_per_subsystem.iter().enumerate() {
                writeln!(out, "safety_{i},{:.12},{:.12}", e.fraction, e.std_error)?;
            }
            writeln!(
                out,
                "joint_safety,{:.12},{:.12}",
                simulation.joint_safety.fraction, simulation.joint_safety.std_error
            )
        })?;

        let mut checks = vec![ReportCheck {
            name: "deviation_within_bound".into(),
            empirical: simulation.deviation.fraction,
            std_error: simulation.deviation.std_error,
            reference: bound.result.delta,
            pass: simulation.deviation.fraction <= bound.result.delta + 3.0 * simulation.deviation.std_error,
        }];
        for (e, s) in simulation.safety_per_subsystem.iter().zip(&synthesis.subsystems) {
            checks.push(ReportCheck {
                name: format!("safety_{}", s.name),
                empirical: e.fraction,
                std_error: e.std_error,
                reference: s.initial_value,
                pass: e.fraction >= s.initial_value - 3.0 * e.std_error,
            });
        }
        let passed = checks.iter().filter(|c| c.pass).count();
        let line = format!("report: {passed}/{} consistency checks pass", checks.len());
        write_json(
            &self.path("report.json"),
            &Report {
                subsystems: net.len(),
                small_gain,
                composed,
                bound,
                synthesis,
                simulation,
                checks,
            },
        )?;
        Ok(line)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<String>> {
        Ok(vec![
            self.cmd_abstract()?,
            self.cmd_certify()?,
            self.cmd_compose()?,
            self.cmd_bound()?,
            self.cmd_synthesize()?,
            self.cmd_simulate()?,
            self.cmd_report()?,
        ])
    }
}

/// Subsystems with identical dynamics and grids share an abstraction.
fn class_key(spec: &SubsystemSpec, state_grid: &UniformGrid, input_grid: &UniformGrid) -> String {
    let mut anon = spec.clone();
    anon.name.clear();
    format!("{anon:?}|{state_grid:?}|{input_grid:?}")
}
