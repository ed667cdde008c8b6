//! Finite-horizon closeness bounds between a network and its abstraction,
//! and the memory footprint of per-subsystem versus monolithic abstractions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinf::KInfFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `ε ≥ ψ/κ`
    Additive,
    /// `ε < ψ/κ`
    Contractive,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Additive => "additive",
            Branch::Contractive => "contractive",
        }
    }
}

/// `(1 − x)^t` in log space; zero once `x ≥ 1` and `t > 0`.
fn pow_one_minus(x: f64, t: u32) -> f64 {
    if t == 0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    (t as f64 * (-x).ln_1p()).exp()
}

/// Unclamped Kushner-type bound on the probability that the value process
/// reaches `level` within `horizon` steps.
pub fn kushner_delta_raw(v0: f64, level: f64, kappa: f64, psi: f64, horizon: u32) -> Result<(f64, Branch)> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::InvalidInput(format!("level must be positive, got {level}")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidInput(format!("κ must lie in (0, 1), got {kappa}")));
    }
    if !(psi >= 0.0 && v0 >= 0.0) {
        return Err(Error::InvalidInput("ψ and V₀ must be nonnegative".into()));
    }
    if level >= psi / kappa {
        let delta = 1.0 - (1.0 - v0 / level) * pow_one_minus(psi / level, horizon);
        Ok((delta, Branch::Additive))
    } else {
        let decay = pow_one_minus(kappa, horizon);
        let delta = v0 / level * decay + psi / (kappa * level) * (1.0 - decay);
        Ok((delta, Branch::Contractive))
    }
}

/// The bound clamped to `[0, 1]`.
pub fn kushner_delta(v0: f64, level: f64, kappa: f64, psi: f64, horizon: u32) -> Result<f64> {
    kushner_delta_raw(v0, level, kappa, psi, horizon).map(|(d, _)| d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub alpha: KInfFn,
    pub kappa: f64,
    pub psi: f64,
    pub epsilon: f64,
    pub horizon: u32,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// `α(ε)`
    pub level: f64,
    pub delta: f64,
    pub branch: Branch,
    /// `1 − δ`: lower bound on the probability that output trajectories stay
    /// within `ε` of each other over the horizon.
    pub guarantee: f64,
}

pub fn closeness_bound(q: &BoundQuery) -> Result<BoundResult> {
    if !(q.epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("ε must be positive, got {}", q.epsilon)));
    }
    let level = q.alpha.eval(q.epsilon);
    let (raw, branch) = kushner_delta_raw(q.v0, level, q.kappa, q.psi, q.horizon)?;
    let delta = raw.clamp(0.0, 1.0);
    Ok(BoundResult {
        level,
        delta,
        branch,
        guarantee: 1.0 - delta,
    })
}

pub fn closeness_probability(q: &BoundQuery) -> Result<f64> {
    closeness_bound(q).map(|r| r.guarantee)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessRow {
    pub delta_bar: f64,
    pub psi: f64,
    pub branch: Branch,
    pub guarantee: f64,
}

/// Guarantee as a function of the state discretization with `ψ = coeff·δ̄²`.
pub fn closeness_table(
    alpha: &KInfFn,
    kappa: f64,
    psi_coefficient: f64,
    epsilon: f64,
    horizon: u32,
    v0: f64,
    delta_bars: &[f64],
) -> Result<Vec<ClosenessRow>> {
    delta_bars
        .iter()
        .map(|&delta_bar| {
            let psi = psi_coefficient * delta_bar * delta_bar;
            let r = closeness_bound(&BoundQuery {
                alpha: *alpha,
                kappa,
                psi,
                epsilon,
                horizon,
                v0,
            })?;
            Ok(ClosenessRow {
                delta_bar,
                psi,
                branch: r.branch,
                guarantee: r.guarantee,
            })
        })
        .collect()
}

pub fn write_closeness_csv<W: Write>(rows: &[ClosenessRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "delta_bar,psi,branch,guarantee")?;
    for r in rows {
        writeln!(out, "{},{:.12e},{},{:.12}", r.delta_bar, r.psi, r.branch.as_str(), r.guarantee)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub per_subsystem_gb: f64,
    pub monolithic_log10_gb: f64,
}

const BYTES_PER_ENTRY: f64 = 8.0;

/// Dense transition storage: `n_x·m·n_w` rows of `n_x` entries per subsystem,
/// `(n_x·m)^N` rows of `n_x^N` entries for the monolithic network.
pub fn memory_estimate(state_cells: u64, input_cells: u64, modes: u64, subsystems: u64) -> MemoryEstimate {
    let (nx, nw, m) = (state_cells as f64, input_cells as f64, modes as f64);
    let per_subsystem_gb = BYTES_PER_ENTRY * nx * m * nw * nx / 1e9;
    let monolithic_log10_gb =
        BYTES_PER_ENTRY.log10() - 9.0 + subsystems as f64 * (2.0 * nx.log10() + m.log10());
    MemoryEstimate {
        per_subsystem_gb,
        monolithic_log10_gb,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub delta_bar: f64,
    pub cells: u64,
    pub estimate: MemoryEstimate,
}

/// Memory rows for a scalar box of length `box_length` discretized into
/// `⌊length/δ̄⌋` cells for both state and internal input.
pub fn memory_table(box_length: f64, delta_bars: &[f64], modes: u64, subsystems: u64) -> Vec<MemoryRow> {
    delta_bars
        .iter()
        .map(|&delta_bar| {
            let cells = ((box_length / delta_bar) + 1e-9).floor().max(1.0) as u64;
            MemoryRow {
                delta_bar,
                cells,
                estimate: memory_estimate(cells, cells, modes, subsystems),
            }
        })
        .collect()
}

/// Truncation to two decimals, as memory figures are usually quoted.
pub fn truncate_2(x: f64) -> f64 {
    (x * 100.0 + 1e-9).floor() / 100.0
}

pub fn write_memory_csv<W: Write>(rows: &[MemoryRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "delta_bar,cells,per_subsystem_gb,monolithic_log10_gb")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.delta_bar,
            r.cells,
            truncate_2(r.estimate.per_subsystem_gb),
            r.estimate.monolithic_log10_gb.floor()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    /// Exact rational evaluation of `1 − (1 − num/den)^t`, to 20 digits.
    fn exact_additive(num: u64, den: u64, t: u32) -> f64 {
        let d = BigUint::from(den).pow(t);
        let kept = BigUint::from(den - num).pow(t);
        let scale = BigUint::from(10u32).pow(20);
        let scaled = (&d - &kept) * &scale / &d;
        scaled.to_string().parse::<f64>().unwrap() / 1e20
    }

    fn log10_big(x: &BigUint) -> f64 {
        let s = x.to_string();
        let head: f64 = s[..s.len().min(17)].parse().unwrap();
        head.log10() + (s.len() - s.len().min(17)) as f64
    }

    #[test]
    fn zero_psi_gives_ratio() {
        for kappa in [0.1, 0.5, 0.99] {
            let d = kushner_delta(0.3, 2.0, kappa, 0.0, 40).unwrap();
            assert!((d - 0.15).abs() < 1e-15);
        }
    }

    #[test]
    fn traffic_delta_matches_exact_rational() {
        let d = kushner_delta(0.0, 1.0, 0.99, 0.008496, 15).unwrap();
        let exact = exact_additive(8496, 1_000_000, 15);
        assert!((d - exact).abs() < 1e-14);
        assert!((d - 0.12013).abs() < 1e-5);
    }

    #[test]
    fn contractive_branch_exact() {
        let (raw, branch) = kushner_delta_raw(0.5, 0.1, 0.5, 0.2, 3).unwrap();
        assert_eq!(branch, Branch::Contractive);
        // 5·(1/8) + 4·(7/8)
        assert!((raw - 4.125).abs() < 1e-12);
        assert_eq!(kushner_delta(0.5, 0.1, 0.5, 0.2, 3).unwrap(), 1.0);
        let (other, branch) = kushner_delta_raw(0.01, 0.1, 0.5, 0.06, 3).unwrap();
        assert_eq!(branch, Branch::Contractive);
        assert!((other - (0.1 * 0.125 + 1.2 * 0.875)).abs() < 1e-14);
    }

    #[test]
    fn level_must_be_positive() {
        assert!(kushner_delta(0.0, 0.0, 0.5, 0.1, 3).is_err());
        let q = BoundQuery {
            alpha: KInfFn::quadratic(1.0).unwrap(),
            kappa: 0.9,
            psi: 0.0,
            epsilon: 0.0,
            horizon: 3,
            v0: 0.0,
        };
        assert!(closeness_probability(&q).is_err());
    }

    fn case2() -> BoundQuery {
        BoundQuery {
            alpha: KInfFn::quadratic(0.2).unwrap(),
            kappa: 0.99,
            psi: 2266e-6,
            epsilon: 1.0,
            horizon: 10,
            v0: 0.0,
        }
    }

    #[test]
    fn nonlinear_network_guarantee() {
        let g = closeness_probability(&case2()).unwrap();
        let exact = 1.0 - exact_additive(2266, 200_000, 10);
        assert!((g - exact).abs() < 1e-14);
        assert!((g - 0.8923).abs() < 1e-4);
    }

    #[test]
    fn traffic_guarantee_and_table() {
        let alpha = KInfFn::quadratic(1.0).unwrap();
        let deltas: Vec<f64> = (1..=10).map(|k| k as f64 / 100.0).collect();
        let rows = closeness_table(&alpha, 0.99, 84.96, 1.0, 15, 0.0, &deltas).unwrap();
        assert_eq!(rows.len(), 10);
        assert!((rows[0].guarantee - 0.8799).abs() < 1e-4);
        for w in rows.windows(2) {
            assert!(w[1].guarantee < w[0].guarantee);
        }
        let zero = closeness_table(&alpha, 0.99, 84.96, 1.0, 15, 0.25, &[0.0]).unwrap();
        assert!((zero[0].guarantee - 0.75).abs() < 1e-15);
        let mut csv = Vec::new();
        write_closeness_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("delta_bar,psi,branch,guarantee\n0.01,"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn trivial_guarantee() {
        let q = BoundQuery { psi: 0.0, ..case2() };
        assert_eq!(closeness_probability(&q).unwrap(), 1.0);
    }

    #[test]
    fn memory_examples() {
        let m = memory_estimate(1000, 1000, 2, 200);
        assert_eq!(m.per_subsystem_gb, 16.0);
        assert!((m.monolithic_log10_gb - 1252.109).abs() < 1e-3);
        assert!((memory_estimate(1, 1, 1, 1).per_subsystem_gb - 8e-9).abs() < 1e-24);
        assert_eq!(memory_estimate(500, 500, 2, 1).per_subsystem_gb, 2.0);
    }

    #[test]
    fn memory_table_rows() {
        let deltas: Vec<f64> = (1..=10).map(|k| k as f64 / 100.0).collect();
        let rows = memory_table(20.0, &deltas, 2, 200);
        let cells: Vec<u64> = rows.iter().map(|r| r.cells).collect();
        assert_eq!(cells, vec![2000, 1000, 666, 500, 400, 333, 285, 250, 222, 200]);
        assert_eq!(truncate_2(rows[2].estimate.per_subsystem_gb), 4.72);
    }

    #[test]
    fn log10_matches_big_integers() {
        for &(nx, nw, m) in &[(3u64, 5u64, 2u64), (1000, 1000, 2), (17, 4, 3), (1, 1, 1)] {
            for n in 1..=5u32 {
                let exact = BigUint::from(8u32)
                    * BigUint::from(nx).pow(2 * n)
                    * BigUint::from(m).pow(n);
                let expected = log10_big(&exact) - 9.0;
                let got = memory_estimate(nx, nw, m, n as u64).monolithic_log10_gb;
                assert!((got - expected).abs() < 1e-9, "{nx} {m} {n}: {got} vs {expected}");
            }
        }
    }

    proptest! {
        #[test]
        fn branches_agree_at_threshold(
            v0 in 0.0f64..1.0, kappa in 0.01f64..0.99, psi in 1e-4f64..1.0, t in 0u32..200,
        ) {
            let level = psi / kappa;
            let decay = pow_one_minus(kappa, t);
            let contractive = v0 / level * decay + psi / (kappa * level) * (1.0 - decay);
            let (additive, branch) = kushner_delta_raw(v0, level, kappa, psi, t).unwrap();
            prop_assert_eq!(branch, Branch::Additive);
            prop_assert!((additive - contractive).abs() < 1e-9);
        }

        #[test]
        fn guarantee_monotone(
            v0 in 0.0f64..0.5, kappa in 0.05f64..0.99, psi in 0.0f64..0.5,
            eps in 0.1f64..3.0, t in 1u32..50, bump in 0.0f64..0.2, coeff in 0.1f64..2.0,
        ) {
            let base = BoundQuery {
                alpha: KInfFn::quadratic(coeff).unwrap(),
                kappa, psi, epsilon: eps, horizon: t, v0,
            };
            let g = closeness_probability(&base).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            let more_psi = closeness_probability(&BoundQuery { psi: psi + bump, ..base.clone() }).unwrap();
            let more_v0 = closeness_probability(&BoundQuery { v0: v0 + bump, ..base.clone() }).unwrap();
            let more_eps = closeness_probability(&BoundQuery { epsilon: eps + bump, ..base.clone() }).unwrap();
            prop_assert!(more_psi <= g + 1e-12);
            prop_assert!(more_v0 <= g + 1e-12);
            prop_assert!(more_eps >= g - 1e-12);
        }
    }
}
