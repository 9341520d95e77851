//! Closed-form delay, energy and energy-delay product of a path.
//!
//! Energy uses the average hop length `T_dist / H` and charges `K_r` once per node
//! on the path, so `E = c_bit * delta * S * (H + 1) + K_r * (H + 1)` with
//! `c_bit = (e_t + e_d d^k) T_1b + e_r T_2b`.

use thiserror::Error;

use crate::model::NetworkParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("link speed must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("hop distance {distance} m exceeds the radio range {range} m")]
    RangeExceeded { distance: f64, range: f64 },
    #[error("a path needs at least one hop")]
    ZeroHops,
    #[error("{what} must be non-negative and finite, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("at least one path is required")]
    NoPaths,
}

fn non_negative(what: &'static str, value: f64) -> Result<f64, MetricsError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(MetricsError::Negative { what, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCost {
    pub delay: f64,
    pub energy: f64,
    pub edp: f64,
}

/// `S/b + l + q`.
pub fn per_hop_latency(bits: u64, bit_rate: f64, delay: f64, queueing: f64) -> Result<f64, MetricsError> {
    if !(bit_rate > 0.0) {
        return Err(MetricsError::NonPositiveRate(bit_rate));
    }
    Ok(bits as f64 / bit_rate + non_negative("link delay", delay)? + non_negative("queueing delay", queueing)?)
}

/// `delta * tau * H`.
pub fn path_delay(delta: f64, tau: f64, hops: u32) -> f64 {
    delta * tau * hops as f64
}

pub fn transmit_energy_per_bit(p: &NetworkParams, distance: f64) -> Result<f64, MetricsError> {
    if distance > p.radio_range {
        return Err(MetricsError::RangeExceeded {
            distance,
            range: p.radio_range,
        });
    }
    non_negative("distance", distance)?;
    Ok((p.e_t + p.e_d * distance.powf(p.k)) * p.t_1b)
}

pub fn receive_energy_per_bit(p: &NetworkParams) -> f64 {
    p.e_r * p.t_2b
}

/// Per-bit cost of one hop of length `T_dist / H` (transmit plus receive).
fn hop_bit_cost(p: &NetworkParams, hops: u32, t_dist: f64) -> f64 {
    let d = t_dist / hops as f64;
    (p.e_t + p.e_d * d.powf(p.k)) * p.t_1b + p.e_r * p.t_2b
}

pub fn path_energy(p: &NetworkParams, delta: f64, hops: u32, t_dist: f64) -> Result<f64, MetricsError> {
    if hops == 0 {
        return Err(MetricsError::ZeroHops);
    }
    non_negative("delta", delta)?;
    non_negative("T_dist", t_dist)?;
    let nodes = hops as f64 + 1.0;
    Ok(hop_bit_cost(p, hops, t_dist) * delta * p.packet_bits as f64 * nodes + p.k_r * nodes)
}

pub fn path_edp(p: &NetworkParams, delta: f64, hops: u32, tau: f64, t_dist: f64) -> Result<f64, MetricsError> {
    non_negative("tau", tau)?;
    Ok(path_energy(p, delta, hops, t_dist)? * path_delay(delta, tau, hops))
}

pub fn path_cost(p: &NetworkParams, delta: f64, hops: u32, tau: f64, t_dist: f64) -> Result<PathCost, MetricsError> {
    let energy = path_energy(p, delta, hops, t_dist)?;
    let delay = path_delay(delta, tau, hops);
    Ok(PathCost {
        delay,
        energy,
        edp: energy * delay,
    })
}

/// EDP of an average path carrying `D / n` packets over `H_avg` hops.
///
/// `H_avg` may be fractional, so the energy term is evaluated directly rather than via
/// [`path_energy`].
pub fn edp_avg(
    p: &NetworkParams,
    packets: f64,
    n: usize,
    h_avg: f64,
    tau_avg: f64,
    t_dist: f64,
) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::NoPaths);
    }
    if !(h_avg >= 1.0 && h_avg.is_finite()) {
        return Err(MetricsError::ZeroHops);
    }
    let delta = non_negative("D", packets)? / n as f64;
    non_negative("tau_avg", tau_avg)?;
    non_negative("T_dist", t_dist)?;
    let d = t_dist / h_avg;
    let bit = (p.e_t + p.e_d * d.powf(p.k)) * p.t_1b + p.e_r * p.t_2b;
    let energy = bit * delta * p.packet_bits as f64 * (h_avg + 1.0) + p.k_r * (h_avg + 1.0);
    Ok(energy * delta * tau_avg * h_avg)
}

/// Coefficients `(A, B)` of `EDP(delta) = A delta^2 + B delta` for one path.
pub fn edp_coefficients(p: &NetworkParams, hops: u32, tau: f64, t_dist: f64) -> (f64, f64) {
    let h = hops as f64;
    let a = hop_bit_cost(p, hops, t_dist) * p.packet_bits as f64 * (h + 1.0) * tau * h;
    let b = p.k_r * (h + 1.0) * tau * h;
    (a, b)
}
