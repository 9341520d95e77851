//! Per-path packet quotas.
//!
//! The strategic split bounds each path's EDP by the EDP of an "average" path carrying
//! `D / n` packets, solves the resulting quadratic for the largest admissible quota and
//! then scales the bounds so they sum to `D`. Under contention each bound is discounted
//! by the fraction of busy nodes on its path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{edp_avg, edp_coefficients, MetricsError};
use crate::model::NetworkParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("at least one path is required")]
    NoPaths,
    #[error("EDP budget must be non-negative, got {0}")]
    NegativeBudget(f64),
    #[error("path {path} has no hops")]
    ZeroHops { path: usize },
    #[error("path {path}: contention {contention} exceeds H + 1 = {limit}")]
    BadContention { path: usize, contention: u32, limit: u32 },
    #[error("every path weight is zero; cannot place {0} packets")]
    Degenerate(u64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Everything on the fewest-hop path.
    MinHop,
    /// `D / n` per path.
    Equal,
    /// EDP-bounded split, contention-discounted when `C_j` is known.
    Strategic,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::MinHop, Scheme::Equal, Scheme::Strategic];

    pub fn number(self) -> u8 {
        match self {
            Scheme::MinHop => 1,
            Scheme::Equal => 2,
            Scheme::Strategic => 3,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "min-hop" | "minhop" => Ok(Scheme::MinHop),
            "2" | "equal" => Ok(Scheme::Equal),
            "3" | "strategic" => Ok(Scheme::Strategic),
            other => Err(format!("unknown scheme '{other}' (expected 1, 2 or 3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub hops: u32,
    pub tau: f64,
    pub contention: u32,
}

impl PathParams {
    pub fn new(hops: u32, tau: f64) -> Self {
        Self {
            hops,
            tau,
            contention: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationInput {
    pub params: NetworkParams,
    pub packets: u64,
    pub paths: Vec<PathParams>,
    pub t_dist: f64,
}

impl AllocationInput {
    fn check(&self) -> Result<(), AllocError> {
        if self.paths.is_empty() {
            return Err(AllocError::NoPaths);
        }
        for (i, p) in self.paths.iter().enumerate() {
            if p.hops == 0 {
                return Err(AllocError::ZeroHops { path: i });
            }
            if p.contention > p.hops + 1 {
                return Err(AllocError::BadContention {
                    path: i,
                    contention: p.contention,
                    limit: p.hops + 1,
                });
            }
        }
        Ok(())
    }

    pub fn h_avg(&self) -> f64 {
        self.paths.iter().map(|p| p.hops as f64).sum::<f64>() / self.paths.len() as f64
    }

    pub fn tau_avg(&self) -> f64 {
        self.paths.iter().map(|p| p.tau).sum::<f64>() / self.paths.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub quotas: Vec<u64>,
    /// Per-path EDP bound before normalization; empty for schemes 1 and 2.
    pub raw_quotas: Vec<f64>,
    /// EDP budget every path was held to.
    pub budget: f64,
    /// Normalized quota is larger than the path's raw bound.
    pub exceeds_bound: Vec<bool>,
}

impl Allocation {
    pub fn total(&self) -> u64 {
        self.quotas.iter().sum()
    }

    fn plain(quotas: Vec<u64>) -> Self {
        let n = quotas.len();
        Self {
            quotas,
            raw_quotas: Vec::new(),
            budget: 0.0,
            exceeds_bound: vec![false; n],
        }
    }
}

/// Largest `delta >= 0` with `A delta^2 + B delta <= budget`.
pub fn solve_quota_bound(
    params: &NetworkParams,
    hops: u32,
    tau: f64,
    t_dist: f64,
    budget: f64,
) -> Result<f64, AllocError> {
    if !(budget >= 0.0) {
        return Err(AllocError::NegativeBudget(budget));
    }
    if hops == 0 {
        return Err(AllocError::ZeroHops { path: 0 });
    }
    if budget == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = edp_coefficients(params, hops, tau, t_dist);
    let disc = b * b + 4.0 * a * budget;
    debug_assert!(disc >= 0.0);
    // 2C / (B + sqrt(B^2 + 4AC)) avoids cancellation when B dominates.
    Ok(2.0 * budget / (b + disc.sqrt()))
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the lower index.
pub fn apportion(weights: &[f64], total: u64) -> Result<Vec<u64>, AllocError> {
    if weights.is_empty() {
        return Err(AllocError::NoPaths);
    }
    if total == 0 {
        return Ok(vec![0; weights.len()]);
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(AllocError::Degenerate(total));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut quotas: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = quotas.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = exact[i] - exact[i].floor();
        let fj = exact[j] - exact[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    let remaining = total.saturating_sub(assigned) as usize;
    for &i in order.iter().filter(|&&i| weights[i] > 0.0).cycle().take(remaining) {
        quotas[i] += 1;
    }
    Ok(quotas)
}

fn strategic(input: &AllocationInput, use_contention: bool) -> Result<Allocation, AllocError> {
    input.check()?;
    let n = input.paths.len();
    let budget = edp_avg(
        &input.params,
        input.packets as f64,
        n,
        input.h_avg(),
        input.tau_avg(),
        input.t_dist,
    )?;
    let raw = input
        .paths
        .iter()
        .map(|p| solve_quota_bound(&input.params, p.hops, p.tau, input.t_dist, budget))
        .collect::<Result<Vec<_>, _>>()?;
    let weights: Vec<f64> = raw
        .iter()
        .zip(&input.paths)
        .map(|(r, p)| {
            if use_contention {
                r * (1.0 - p.contention as f64 / (p.hops as f64 + 1.0))
            } else {
                *r
            }
        })
        .collect();
    let quotas = apportion(&weights, input.packets)?;
    let exceeds_bound = quotas.iter().zip(&raw).map(|(&q, &r)| q as f64 > r).collect();
    Ok(Allocation {
        quotas,
        raw_quotas: raw,
        budget,
        exceeds_bound,
    })
}

/// Single-source strategic split; contention counts are ignored.
pub fn allocate_single_source(input: &AllocationInput) -> Result<Allocation, AllocError> {
    strategic(input, false)
}

/// Strategic split with each path's weight scaled by `1 - C_j / (H_j + 1)`.
pub fn allocate_multi_source(input: &AllocationInput) -> Result<Allocation, AllocError> {
    strategic(input, true)
}

pub fn scheme_allocation(scheme: Scheme, input: &AllocationInput) -> Result<Allocation, AllocError> {
    input.check()?;
    let n = input.paths.len();
    let d = input.packets;
    match scheme {
        Scheme::MinHop => {
            let best = (0..n).min_by_key(|&i| (input.paths[i].hops, i)).unwrap();
            let mut q = vec![0; n];
            q[best] = d;
            Ok(Allocation::plain(q))
        }
        Scheme::Equal => {
            let base = d / n as u64;
            let extra = (d % n as u64) as usize;
            Ok(Allocation::plain(
                (0..n).map(|i| base + u64::from(i < extra)).collect(),
            ))
        }
        Scheme::Strategic => allocate_multi_source(input),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::path_edp;

    /// Largest integer delta whose EDP stays within `budget`, found by walking upwards.
    fn brute_force(p: &NetworkParams, h: u32, tau: f64, t_dist: f64, budget: f64) -> u64 {
        let mut delta = 0u64;
        while path_edp(p, (delta + 1) as f64, h, tau, t_dist).unwrap() <= budget {
            delta += 1;
        }
        delta
    }

    fn input(hops: &[u32], packets: u64, t_dist: f64) -> AllocationInput {
        AllocationInput {
            params: NetworkParams::standard_multisource(),
            packets,
            paths: hops.iter().map(|&h| PathParams::new(h, 0.02)).collect(),
            t_dist,
        }
    }

    #[test]
    fn zero_budget_gives_zero() {
        let p = NetworkParams::standard();
        assert_eq!(solve_quota_bound(&p, 4, 0.02, 5.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            solve_quota_bound(&p, 4, 0.02, 5.0, -1.0),
            Err(AllocError::NegativeBudget(_))
        ));
    }

    #[test]
    fn root_matches_brute_force_on_three_path_instance() {
        let inp = input(&[3, 4, 7], 100, 4.0);
        let a = allocate_single_source(&inp).unwrap();
        let p = inp.params;
        for (path, raw) in inp.paths.iter().zip(&a.raw_quotas) {
            let bf = brute_force(&p, path.hops, path.tau, inp.t_dist, a.budget);
            assert_eq!(raw.floor() as u64, bf);
            let edp = path_edp(&p, *raw, path.hops, path.tau, inp.t_dist).unwrap();
            assert!((edp - a.budget).abs() <= 1e-9 * a.budget);
            assert!(path_edp(&p, raw + 1.0, path.hops, path.tau, inp.t_dist).unwrap() > a.budget);
        }
        assert!(a.raw_quotas[0] >= a.raw_quotas[1] && a.raw_quotas[1] >= a.raw_quotas[2]);
    }

    #[test]
    fn single_path_takes_everything() {
        let a = allocate_single_source(&input(&[5], 77, 4.0)).unwrap();
        assert_eq!(a.quotas, vec![77]);
    }

    #[test]
    fn identical_paths_split_evenly() {
        let a = allocate_single_source(&input(&[4, 4, 4], 100, 4.0)).unwrap();
        assert_eq!(a.quotas, vec![34, 33, 33]);
    }

    #[test]
    fn full_contention_annihilates_path() {
        let mut inp = input(&[4, 4], 60, 4.0);
        inp.paths[1].contention = 5;
        assert_eq!(allocate_multi_source(&inp).unwrap().quotas, vec![60, 0]);

        let mut inp = input(&[3, 4, 7], 100, 4.0);
        inp.paths[2].contention = 8;
        let a = allocate_multi_source(&inp).unwrap();
        assert_eq!(a.quotas[2], 0);
        assert_eq!(a.total(), 100);
    }

    #[test]
    fn contention_above_limit_is_rejected() {
        let mut inp = input(&[3], 10, 4.0);
        inp.paths[0].contention = 5;
        assert!(matches!(
            allocate_multi_source(&inp),
            Err(AllocError::BadContention { .. })
        ));
    }

    #[test]
    fn all_paths_saturated_is_degenerate() {
        let mut inp = input(&[2, 2], 10, 3.0);
        inp.paths[0].contention = 3;
        inp.paths[1].contention = 3;
        assert_eq!(allocate_multi_source(&inp), Err(AllocError::Degenerate(10)));
        inp.packets = 0;
        assert_eq!(allocate_multi_source(&inp).unwrap().quotas, vec![0, 0]);
    }

    #[test]
    fn baseline_schemes() {
        let inp = input(&[3, 4, 7], 100, 4.0);
        assert_eq!(scheme_allocation(Scheme::MinHop, &inp).unwrap().quotas, vec![100, 0, 0]);
        assert_eq!(scheme_allocation(Scheme::Equal, &inp).unwrap().quotas, vec![34, 33, 33]);
        let inp99 = input(&[3, 4, 7], 99, 4.0);
        assert_eq!(scheme_allocation(Scheme::Equal, &inp99).unwrap().quotas, vec![33, 33, 33]);
        let five = input(&[9, 22, 5, 20, 7], 100, 10.0);
        assert_eq!(scheme_allocation(Scheme::Equal, &five).unwrap().quotas, vec![20; 5]);
        assert_eq!(
            scheme_allocation(Scheme::MinHop, &input(&[4, 3, 3], 9, 4.0)).unwrap().quotas,
            vec![0, 9, 0]
        );
    }

    #[test]
    fn apportion_ties_go_low() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 2).unwrap(), vec![1, 1, 0]);
        assert_eq!(apportion(&[0.0, 1.0], 3).unwrap(), vec![0, 3]);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("3".parse::<Scheme>().unwrap(), Scheme::Strategic);
        assert_eq!("equal".parse::<Scheme>().unwrap(), Scheme::Equal);
        assert!("4".parse::<Scheme>().is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::metrics::path_edp;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = AllocationInput> {
        (
            prop::collection::vec((1u32..=10, 0.005f64..0.1), 1..=6),
            0u64..=200,
            0.5f64..12.0,
        )
            .prop_map(|(paths, packets, t_dist)| AllocationInput {
                params: NetworkParams::standard_multisource(),
                packets,
                paths: paths.into_iter().map(|(h, tau)| PathParams::new(h, tau)).collect(),
                t_dist,
            })
    }

    proptest! {
        #[test]
        fn quotas_conserve_packets(inp in instance()) {
            for s in Scheme::ALL {
                let a = scheme_allocation(s, &inp).unwrap();
                prop_assert_eq!(a.total(), inp.packets);
            }
        }

        #[test]
        fn raw_bounds_respect_budget(inp in instance()) {
            let a = allocate_single_source(&inp).unwrap();
            for (p, raw) in inp.paths.iter().zip(&a.raw_quotas) {
                let edp = path_edp(&inp.params, *raw, p.hops, p.tau, inp.t_dist).unwrap();
                prop_assert!(edp <= a.budget * (1.0 + 1e-9) + 1e-300);
            }
        }

        #[test]
        fn permuting_paths_permutes_quotas(inp in instance(), rot in 0usize..6) {
            let n = inp.paths.len();
            let k = rot % n;
            let mut rotated = inp.clone();
            rotated.paths.rotate_left(k);
            let a = allocate_single_source(&inp).unwrap();
            let b = allocate_single_source(&rotated).unwrap();
            let mut raw = a.raw_quotas.clone();
            raw.rotate_left(k);
            for (x, y) in raw.iter().zip(&b.raw_quotas) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
            // Quotas may differ only where rounding ties were broken by index.
            let mut q = a.quotas.clone();
            q.rotate_left(k);
            for (x, y) in q.iter().zip(&b.quotas) {
                prop_assert!(x.abs_diff(*y) <= 1);
            }
        }

        #[test]
        fn equal_paths_differ_by_at_most_one(h in 1u32..10, n in 1usize..6, d in 0u64..200) {
            let inp = AllocationInput {
                params: NetworkParams::standard(),
                packets: d,
                paths: vec![PathParams::new(h, 0.02); n],
                t_dist: 3.0,
            };
            let a = allocate_single_source(&inp).unwrap();
            let max = *a.quotas.iter().max().unwrap();
            let min = *a.quotas.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
