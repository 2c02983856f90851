//! Request-intensity tracking and abrupt-change detection.
//!
//! Requests for a file arrive as a Poisson stream whose per-slot rate is the
//! file's popularity times the (random but fixed per run) user count. The
//! tracker works on the aggregate per-slot request counts: a running mean
//! estimates the current intensity, and a windowed generalized-likelihood-
//! ratio scan watches for an abrupt shift of at least `min_jump` away from
//! that mean. On an alarm the tracker re-seeds itself from the flagged
//! segment so that successive changes are caught one after another.
//!
//! Everything here is in aggregate units (requests per slot summed over
//! users); callers that think in per-user popularity scale by the expected
//! user count at the boundary.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rateless::FileId;

/// Intensities below this are treated as this floor inside likelihood ratios,
/// so that an all-zero history cannot produce infinities.
pub const INTENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PopularityError {
    #[error("parameter out of range: {0}")]
    InvalidParameter(String),
}

/// Draw the number of requests arriving in one slot for one file, given the
/// aggregate rate (popularity times user count).
pub fn draw_request_count<R: Rng + ?Sized>(
    rate: f64,
    rng: &mut R,
) -> Result<u64, PopularityError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(PopularityError::InvalidParameter(format!(
            "request rate must be finite and nonnegative, got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let pois = rand_distr::Poisson::new(rate).map_err(|e| {
        PopularityError::InvalidParameter(format!("poisson rate {rate}: {e}"))
    })?;
    Ok(pois.sample(rng) as u64)
}

/// Maximum-likelihood intensity from a window of per-slot counts: the sample
/// mean. An empty history estimates zero.
pub fn mle_intensity(counts: &[u64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().sum::<u64>() as f64 / counts.len() as f64
}

/// Files whose estimated intensity clears the liveness threshold, in id order.
pub fn alive_files(estimates: &[(FileId, f64)], threshold: f64) -> Vec<FileId> {
    let mut alive: Vec<FileId> = estimates
        .iter()
        .filter(|&&(_, mu)| mu > threshold)
        .map(|&(id, _)| id)
        .collect();
    alive.sort_unstable();
    alive
}

/// Tuning knobs for the change detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlrConfig {
    /// Alarm when the scan statistic reaches this value.
    pub threshold: f64,
    /// Smallest intensity shift the alternative hypothesis may claim; segment
    /// means closer to the running mean are pushed out to this distance.
    pub min_jump: f64,
    /// Number of recent slots kept for the scan.
    pub window: usize,
}

impl GlrConfig {
    pub fn validate(&self) -> Result<(), PopularityError> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(PopularityError::InvalidParameter(format!(
                "alarm threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        if !(self.min_jump > 0.0) || !self.min_jump.is_finite() {
            return Err(PopularityError::InvalidParameter(format!(
                "minimum jump must be positive and finite, got {}",
                self.min_jump
            )));
        }
        if self.window == 0 {
            return Err(PopularityError::InvalidParameter(
                "scan window must hold at least one slot".into(),
            ));
        }
        Ok(())
    }
}

/// Raised when the scan statistic crosses the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeAlarm {
    /// Slot at which the alarm fired.
    pub alarm_slot: u64,
    /// Estimated first slot of the new regime.
    pub change_slot: u64,
    /// Slots in the flagged segment (`alarm_slot - change_slot + 1`).
    pub segment_len: u64,
    /// Intensity estimate for the new regime (the constrained alternative).
    pub new_mean: f64,
    /// Value of the scan statistic at the alarm.
    pub statistic: f64,
}

/// Outcome of feeding one slot to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    /// Largest likelihood-ratio statistic over candidate change points.
    pub statistic: f64,
    pub alarm: Option<ChangeAlarm>,
}

/// Alternative-hypothesis intensity for a segment with sample mean
/// `mean_hat`: the unconstrained estimate if it already sits `min_jump` away
/// from `psi0`, otherwise the nearest admissible point. A downward
/// alternative is only available while `psi0 - min_jump` stays positive.
fn constrained_alternative(mean_hat: f64, psi0: f64, min_jump: f64) -> f64 {
    let low_available = psi0 - min_jump > 0.0;
    if mean_hat >= psi0 + min_jump {
        mean_hat
    } else if low_available && mean_hat <= psi0 - min_jump {
        mean_hat
    } else if low_available && mean_hat < psi0 {
        psi0 - min_jump
    } else {
        psi0 + min_jump
    }
}

/// Poisson log-likelihood ratio of intensity `psi1` against `psi0` for a
/// segment with `len` slots and `sum` total requests. A zero-count segment
/// contributes no log term, which also covers a vanishing `psi1`.
fn glr_statistic(len: f64, sum: f64, psi0: f64, psi1: f64) -> f64 {
    let mut stat = len * (psi0 - psi1);
    if sum > 0.0 {
        stat += sum * (psi1 / psi0).ln();
    }
    stat
}

/// Windowed generalized-likelihood-ratio detector for abrupt intensity shifts
/// in a Poisson count stream.
///
/// Each observed count first joins the running mean (the no-change
/// hypothesis), then every suffix of the retained window is scored as a
/// candidate new regime. The per-slot scan is a single backward pass over the
/// window, so the cost is linear in the window size.
#[derive(Debug, Clone)]
pub struct GlrDetector {
    cfg: GlrConfig,
    window: VecDeque<u64>,
    /// Global slot index of the oldest retained sample.
    window_start: u64,
    /// Global slot index the next observation will get.
    next_slot: u64,
    /// Mean carried over from before the current regime's raw counts (the
    /// bootstrap estimate, or the flagged-segment estimate after an alarm),
    /// weighted as `seed_count` observations.
    seed_mean: f64,
    seed_count: u64,
    /// Exact totals of the raw counts observed since the last alarm; keeping
    /// integers here makes the running mean identical to a from-scratch
    /// recompute, so constraint branches never flip on accumulated rounding.
    regime_sum: u64,
    regime_len: u64,
}

impl GlrDetector {
    /// A cold detector: no history, mean zero.
    pub fn new(cfg: GlrConfig) -> Result<Self, PopularityError> {
        cfg.validate()?;
        Ok(GlrDetector {
            cfg,
            window: VecDeque::new(),
            window_start: 0,
            next_slot: 0,
            seed_mean: 0.0,
            seed_count: 0,
            regime_sum: 0,
            regime_len: 0,
        })
    }

    /// A detector seeded from an observation prefix: the running mean starts
    /// at the maximum-likelihood estimate over `history` and scanning begins
    /// at the slot after it.
    pub fn bootstrap(cfg: GlrConfig, history: &[u64]) -> Result<Self, PopularityError> {
        let mut det = Self::new(cfg)?;
        det.seed_mean = mle_intensity(history);
        det.seed_count = history.len() as u64;
        det.next_slot = history.len() as u64;
        det.window_start = history.len() as u64;
        Ok(det)
    }

    /// Current intensity estimate (aggregate requests per slot).
    pub fn mean(&self) -> f64 {
        let n = self.seed_count + self.regime_len;
        if n == 0 {
            return 0.0;
        }
        (self.seed_mean * self.seed_count as f64 + self.regime_sum as f64) / n as f64
    }

    /// Observations contributing to the current estimate.
    pub fn samples_since_change(&self) -> u64 {
        self.seed_count + self.regime_len
    }

    /// Feed one slot's aggregate request count; scan and possibly alarm.
    pub fn observe(&mut self, count: u64) -> ScanResult {
        let slot = self.next_slot;
        self.next_slot += 1;
        if self.window.len() == self.cfg.window {
            self.window.pop_front();
            self.window_start += 1;
        }
        self.window.push_back(count);
        // The running mean absorbs the sample before the scan, so psi0 always
        // reflects everything seen in the current regime.
        self.regime_sum += count;
        self.regime_len += 1;
        let psi0 = self.mean().max(INTENSITY_FLOOR);

        // Backward pass: suffixes grow one sample at a time. `>=` keeps the
        // longest suffix (earliest candidate change point) on exact ties.
        let mut best_stat = f64::NEG_INFINITY;
        let mut best = (0usize, 0.0f64, 0u64); // (offset, psi1, len)
        let mut sum = 0u64;
        let mut len = 0u64;
        for (offset, &c) in self.window.iter().enumerate().rev() {
            sum += c;
            len += 1;
            let mean_hat = sum as f64 / len as f64;
            let psi1 = constrained_alternative(mean_hat, psi0, self.cfg.min_jump);
            let stat = glr_statistic(len as f64, sum as f64, psi0, psi1);
            if stat >= best_stat {
                best_stat = stat;
                best = (offset, psi1, len);
            }
        }

        let alarm = if best_stat >= self.cfg.threshold {
            let (offset, psi1, seg_len) = best;
            let alarm = ChangeAlarm {
                alarm_slot: slot,
                change_slot: self.window_start + offset as u64,
                segment_len: seg_len,
                new_mean: psi1,
                statistic: best_stat,
            };
            // Restart from the flagged segment: its constrained estimate
            // becomes the new running mean, weighted by the segment length.
            self.seed_mean = psi1;
            self.seed_count = seg_len;
            self.regime_sum = 0;
            self.regime_len = 0;
            self.window.clear();
            self.window_start = slot + 1;
            Some(alarm)
        } else {
            None
        };
        ScanResult { statistic: best_stat, alarm }
    }
}
