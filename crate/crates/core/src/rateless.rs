//! Rateless-coded broadcast delivery: per-round analytics and event simulation.
//!
//! A round broadcasts one file as a stream of coded packets, one per slot.
//! A user recovers the file once it has received `L' = blocks + overhead`
//! packets, each packet arriving independently with probability `1 - O` where
//! `O` is that user's outage probability. On accumulating `L'` packets the
//! user attempts to decode, succeeding with probability `delta`; success is
//! acknowledged to the transmitter, failure silently ends that user's round.
//! The transmitter stops after `deadline` packets or as soon as every
//! requesting user has acknowledged, whichever comes first.
//!
//! The per-user completion time is therefore negative binomial (trials to the
//! `L'`-th success), the round duration is a censored maximum of completion
//! times, and the analytic forms below mirror exactly what
//! [`simulate_broadcast`] does with random numbers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{self, TruncatedCounts};

#[derive(Debug, Error, PartialEq)]
pub enum RatelessError {
    #[error("parameter out of range: {0}")]
    InvalidParameter(String),
}

/// Identifier of a file in the catalog. Ordering is the tie-break order used
/// everywhere a deterministic choice among equals is needed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct FileId(pub u32);

impl std::fmt::Display for FileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Static description of a cacheable file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpec {
    pub id: FileId,
    /// Number of source blocks per transmission unit.
    pub blocks: u32,
    /// Extra coded packets a user must collect beyond `blocks`.
    pub overhead: u32,
    /// Storage units the file occupies in the cache.
    pub size: u32,
}

/// Default coding overhead: 5% of the block count, rounded to nearest.
pub fn default_overhead(blocks: u32) -> u32 {
    (0.05 * blocks as f64).round() as u32
}

impl FileSpec {
    pub fn new(id: FileId, blocks: u32, size: u32) -> Result<Self, RatelessError> {
        if blocks == 0 || size == 0 {
            return Err(RatelessError::InvalidParameter(format!(
                "file {id} needs positive blocks and size, got blocks={blocks}, size={size}"
            )));
        }
        Ok(FileSpec { id, blocks, overhead: default_overhead(blocks), size })
    }

    /// Packets a user must receive to attempt decoding (`L'`).
    pub fn required_packets(&self) -> u32 {
        self.blocks + self.overhead
    }
}

/// Per-round transmission policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryPolicy {
    /// Hard cap on packets sent in one round (`D`).
    pub deadline: u32,
    /// Probability that decoding succeeds once `L'` packets are in hand.
    pub recovery_prob: f64,
}

impl DeliveryPolicy {
    pub fn new(deadline: u32, recovery_prob: f64) -> Result<Self, RatelessError> {
        if deadline == 0 {
            return Err(RatelessError::InvalidParameter(
                "deadline must be at least one packet".into(),
            ));
        }
        if !(recovery_prob > 0.0 && recovery_prob <= 1.0) {
            return Err(RatelessError::InvalidParameter(format!(
                "recovery probability must lie in (0, 1], got {recovery_prob}"
            )));
        }
        Ok(DeliveryPolicy { deadline, recovery_prob })
    }
}

fn check_lprime_deadline(lprime: u32, policy: &DeliveryPolicy) -> Result<(), RatelessError> {
    if lprime == 0 {
        return Err(RatelessError::InvalidParameter(
            "required packet count must be positive".into(),
        ));
    }
    if policy.deadline < lprime {
        return Err(RatelessError::InvalidParameter(format!(
            "deadline {} is below the {} packets needed to decode",
            policy.deadline, lprime
        )));
    }
    Ok(())
}

fn check_outage(outage: f64) -> Result<(), RatelessError> {
    if !(0.0..=1.0).contains(&outage) {
        return Err(RatelessError::InvalidParameter(format!(
            "outage probability must lie in [0, 1], got {outage}"
        )));
    }
    Ok(())
}

/// Probability that a user who listens for the whole round recovers the file:
/// `delta * P[Binomial(deadline, 1 - outage) >= lprime]`.
pub fn decode_success_probability(
    lprime: u32,
    policy: &DeliveryPolicy,
    outage: f64,
) -> Result<f64, RatelessError> {
    check_lprime_deadline(lprime, policy)?;
    check_outage(outage)?;
    let d = policy.deadline as u64;
    let good = 1.0 - outage;
    // P[fewer than lprime packet arrivals among deadline sends].
    let mut miss = 0.0f64;
    for l in 0..lprime as u64 {
        let term = if d <= 60 {
            numeric::choose(d, l) * good.powi(l as i32) * outage.powi((d - l) as i32)
        } else {
            numeric::binomial_pmf(d, good, l)
        };
        miss += term;
    }
    Ok(policy.recovery_prob * (1.0 - miss).max(0.0))
}

/// pmf of the per-user completion time `W` (slot of the `lprime`-th arrival):
/// negative binomial on support `w >= lprime`.
pub fn completion_time_pmf(lprime: u32, outage: f64, w: u32) -> Result<f64, RatelessError> {
    if lprime == 0 {
        return Err(RatelessError::InvalidParameter(
            "required packet count must be positive".into(),
        ));
    }
    check_outage(outage)?;
    if w < lprime {
        return Ok(0.0);
    }
    if outage == 0.0 {
        return Ok(if w == lprime { 1.0 } else { 0.0 });
    }
    if outage == 1.0 {
        return Ok(0.0);
    }
    let good = 1.0 - outage;
    let (w64, l64) = (w as u64, lprime as u64);
    if w64 <= 60 {
        Ok(numeric::choose(w64 - 1, w64 - l64)
            * good.powi(lprime as i32)
            * outage.powi((w64 - l64) as i32))
    } else {
        Ok((numeric::ln_choose(w64 - 1, w64 - l64)
            + lprime as f64 * good.ln()
            + (w - lprime) as f64 * outage.ln())
        .exp())
    }
}

/// cdf of the per-user completion time, via the regularized incomplete beta
/// identity for negative-binomial tails.
pub fn completion_time_cdf(lprime: u32, outage: f64, w: u32) -> Result<f64, RatelessError> {
    if lprime == 0 {
        return Err(RatelessError::InvalidParameter(
            "required packet count must be positive".into(),
        ));
    }
    check_outage(outage)?;
    if w < lprime {
        return Ok(0.0);
    }
    if outage == 0.0 {
        return Ok(1.0);
    }
    if outage == 1.0 {
        return Ok(0.0);
    }
    // P[W <= w] = P[at least lprime arrivals in w sends]
    //           = 1 - I_outage(w - lprime + 1, lprime).
    Ok(1.0 - numeric::reg_inc_beta((w - lprime + 1) as f64, lprime as f64, outage))
}

/// Table of `F(w) = P[W <= w]` for `w = 0..=deadline`, built by summing the
/// pmf recursively (the beta-identity route cross-checks it in tests).
pub fn completion_cdf_table(lprime: u32, outage: f64, deadline: u32) -> Vec<f64> {
    let lp = lprime as usize;
    let d = deadline as usize;
    let mut table = vec![0.0f64; d + 1];
    if lp > d {
        return table;
    }
    if outage == 0.0 {
        for w in lp..=d {
            table[w] = 1.0;
        }
        return table;
    }
    if outage == 1.0 {
        return table;
    }
    let good = 1.0 - outage;
    // pmf(lprime) = good^lprime, then
    // pmf(w + 1) = pmf(w) * outage * w / (w + 1 - lprime).
    let mut pmf = good.powi(lprime as i32);
    let mut cum = pmf;
    table[lp] = cum;
    for w in lp..d {
        pmf *= outage * w as f64 / (w + 1 - lp) as f64;
        cum += pmf;
        table[w + 1] = cum;
    }
    table
}

/// cdf of the slowest completion time among independent users with a common
/// `lprime` and per-user outages: a plain product of per-user cdfs.
pub fn max_completion_cdf(
    lprime: u32,
    outages: &[f64],
    w: u32,
) -> Result<f64, RatelessError> {
    let mut acc = 1.0;
    for &o in outages {
        acc *= completion_time_cdf(lprime, o, w)?;
    }
    Ok(acc)
}

/// `P[W_(k) = deadline]`: probability that the `k`-th smallest completion time
/// lands exactly on the deadline. Computed by a dynamic program over the
/// per-user trichotomy {finish early, finish exactly at the deadline, miss}.
pub fn kth_order_pmf_at_deadline(
    lprime: u32,
    outages: &[f64],
    deadline: u32,
    k: usize,
) -> Result<f64, RatelessError> {
    let n = outages.len();
    if k == 0 || k > n {
        return Err(RatelessError::InvalidParameter(format!(
            "order index {k} must lie in 1..={n}"
        )));
    }
    if deadline < lprime {
        return Ok(0.0);
    }
    // dp[a][b] = P[a users finished before the deadline, b exactly at it].
    let mut dp = vec![vec![0.0f64; n + 1]; n + 1];
    dp[0][0] = 1.0;
    for (i, &o) in outages.iter().enumerate() {
        let f_d = completion_time_cdf(lprime, o, deadline)?;
        let f_dm1 = if deadline == 0 {
            0.0
        } else {
            completion_time_cdf(lprime, o, deadline - 1)?
        };
        let p_early = f_dm1;
        let p_exact = (f_d - f_dm1).max(0.0);
        let p_miss = (1.0 - f_d).max(0.0);
        let mut next = vec![vec![0.0f64; n + 1]; n + 1];
        for a in 0..=i {
            for b in 0..=(i - a) {
                let mass = dp[a][b];
                if mass == 0.0 {
                    continue;
                }
                next[a + 1][b] += mass * p_early;
                next[a][b + 1] += mass * p_exact;
                next[a][b] += mass * p_miss;
            }
        }
        dp = next;
    }
    // k-th smallest equals the deadline iff fewer than k finish early and at
    // least k finish by the deadline.
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..=(n - a) {
            if a + b >= k {
                total += dp[a][b];
            }
        }
    }
    Ok(total)
}

/// Everything observable about one simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastOutcome {
    /// Packets actually sent (slots occupied).
    pub duration: u32,
    /// Transmit energy: power times duration.
    pub energy: f64,
    /// Users that decoded and acknowledged.
    pub recovered: u32,
    /// Per-user recovery flags, aligned with the input outage slice.
    pub per_user_recovered: Vec<bool>,
}

/// Simulate one broadcast round packet by packet.
///
/// With no requesting users the transmitter still occupies a single slot
/// (one keep-alive packet) so that round accounting never stalls.
pub fn simulate_broadcast<R: Rng + ?Sized>(
    lprime: u32,
    per_user_outages: &[f64],
    policy: &DeliveryPolicy,
    power: f64,
    rng: &mut R,
) -> Result<BroadcastOutcome, RatelessError> {
    check_lprime_deadline(lprime, policy)?;
    for &o in per_user_outages {
        check_outage(o)?;
    }
    if !(power > 0.0) {
        return Err(RatelessError::InvalidParameter(format!(
            "transmit power must be positive, got {power}"
        )));
    }
    let n = per_user_outages.len();
    if n == 0 {
        return Ok(BroadcastOutcome {
            duration: 1,
            energy: power,
            recovered: 0,
            per_user_recovered: vec![],
        });
    }
    let mut received = vec![0u32; n];
    let mut listening = vec![true; n];
    let mut recovered_flags = vec![false; n];
    let mut acked = 0u32;
    let mut duration = policy.deadline;
    'slots: for w in 1..=policy.deadline {
        for i in 0..n {
            if !listening[i] {
                continue;
            }
            if rng.random::<f64>() >= per_user_outages[i] {
                received[i] += 1;
                if received[i] == lprime {
                    listening[i] = false;
                    if rng.random::<f64>() < policy.recovery_prob {
                        recovered_flags[i] = true;
                        acked += 1;
                        if acked as usize == n {
                            duration = w;
                            break 'slots;
                        }
                    }
                    // A failed decode ends this user's round without an
                    // acknowledgment, so the transmitter keeps going.
                }
            }
        }
    }
    Ok(BroadcastOutcome {
        duration,
        energy: power * duration as f64,
        recovered: acked,
        per_user_recovered: recovered_flags,
    })
}

/// Analytic law of the round duration for independent users sharing one
/// outage probability, mixed over a random requesting-user count.
///
/// Matches [`simulate_broadcast`]: duration `w < deadline` requires every user
/// to have decoded successfully (probability `delta^q`) with the slowest
/// completion at `w`; anything else runs to the deadline. A count of zero
/// yields the single keep-alive slot.
pub fn duration_distribution(
    lprime: u32,
    outage: f64,
    policy: &DeliveryPolicy,
    count: &TruncatedCounts,
) -> Result<Vec<(u32, f64)>, RatelessError> {
    check_lprime_deadline(lprime, policy)?;
    check_outage(outage)?;
    let d = policy.deadline;
    let delta = policy.recovery_prob;
    let cdf = completion_cdf_table(lprime, outage, d);
    let mut probs: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    for &(q, pq) in &count.terms {
        if pq == 0.0 {
            continue;
        }
        if q == 0 {
            *probs.entry(1).or_insert(0.0) += pq;
            continue;
        }
        let qi = q as i32;
        let all_recover = delta.powi(qi);
        let mut below_deadline = 0.0;
        for w in lprime..d {
            let p_max_w = cdf[w as usize].powi(qi) - cdf[w as usize - 1].powi(qi);
            let p = all_recover * p_max_w.max(0.0);
            below_deadline += p;
            *probs.entry(w).or_insert(0.0) += pq * p;
        }
        *probs.entry(d).or_insert(0.0) += pq * (1.0 - below_deadline).max(0.0);
    }
    Ok(probs.into_iter().collect())
}

/// `P[duration < deadline]` for a fixed set of heterogeneous users: all must
/// decode successfully with the slowest strictly inside the deadline.
pub fn early_finish_probability(
    lprime: u32,
    outages: &[f64],
    policy: &DeliveryPolicy,
) -> Result<f64, RatelessError> {
    check_lprime_deadline(lprime, policy)?;
    if outages.is_empty() {
        // Zero users: the single keep-alive slot ends before any deadline > 1.
        return Ok(if policy.deadline > 1 { 1.0 } else { 0.0 });
    }
    let max_cdf = max_completion_cdf(lprime, outages, policy.deadline - 1)?;
    Ok(policy.recovery_prob.powi(outages.len() as i32) * max_cdf)
}

/// Expected per-round utility `E[recovered / energy]` for independent users
/// sharing one outage probability, mixed over the requesting-user count.
///
/// Conditioned on `q >= 1` users, split on whether everyone acknowledges:
/// if all `q` decode (probability `delta^q`) the duration is the slowest
/// completion time censored at the deadline, otherwise the round runs to the
/// deadline and recoveries thin binomially with `rho = delta * F(deadline)`.
pub fn expected_utility(
    lprime: u32,
    outage: f64,
    policy: &DeliveryPolicy,
    power: f64,
    count: &TruncatedCounts,
) -> Result<f64, RatelessError> {
    check_lprime_deadline(lprime, policy)?;
    check_outage(outage)?;
    if !(power > 0.0) {
        return Err(RatelessError::InvalidParameter(format!(
            "transmit power must be positive, got {power}"
        )));
    }
    let d = policy.deadline;
    let delta = policy.recovery_prob;
    let cdf = completion_cdf_table(lprime, outage, d);
    let rho = delta * cdf[d as usize];
    let mut expectation = 0.0f64;
    for &(q, pq) in &count.terms {
        if q == 0 || pq == 0.0 {
            continue;
        }
        let qf = q as f64;
        let qi = q as i32;
        let all_recover = delta.powi(qi);
        // All-acknowledge branch: duration is the slowest completion time.
        let mut inv_duration = 0.0;
        for w in lprime..=d {
            let p_max_w = cdf[w as usize].powi(qi) - cdf[w as usize - 1].powi(qi);
            inv_duration += p_max_w.max(0.0) / w as f64;
        }
        let full = qf * all_recover * inv_duration;
        // Otherwise the round runs to the deadline.
        let partial = qf * (rho - rho.powi(qi)) / d as f64;
        expectation += pq * (full + partial);
    }
    Ok(expectation / power)
}

/// Draw one per-user completion time (slot of the `lprime`-th arrival) by
/// summing geometric interarrival gaps.
pub fn sample_completion_time<R: Rng + ?Sized>(
    lprime: u32,
    outage: f64,
    rng: &mut R,
) -> u32 {
    debug_assert!((0.0..1.0).contains(&outage));
    let mut w = 0u32;
    for _ in 0..lprime {
        // Geometric trials-to-success, inverted from a uniform draw.
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let gap = if outage <= 0.0 {
            1
        } else {
            (u.ln() / outage.ln()).floor().min(u32::MAX as f64 - 1.0) as u32 + 1
        };
        w = w.saturating_add(gap);
    }
    w
}
