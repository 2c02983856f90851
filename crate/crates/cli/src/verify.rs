//! The `verify` subcommand: each algorithm is checked against an independent
//! reference computation (exhaustive search, enumeration, full rescan, or
//! Monte Carlo) and the measured deviation is printed next to its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use femtosim_core::bandit::{select_arm, ArmId, ArmSet, PolicyState, SelectionRule, UcbParams};
use femtosim_core::channel::{outage_probability, sample_sinr, Interferer, Link, SinrModel, TieHandling};
use femtosim_core::config::ScenarioConfig;
use femtosim_core::numeric::{integrate, ks_distance, linear_fit, tv_distance, TruncatedCounts};
use femtosim_core::placement::{solve_knapsack, CacheItem};
use femtosim_core::popularity::{GlrConfig, GlrDetector, INTENSITY_FLOOR};
use femtosim_core::rateless::{
    decode_success_probability, duration_distribution, simulate_broadcast, DeliveryPolicy, FileId,
};

use crate::{Failure, VerifyArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Channel,
    Rateless,
    Knapsack,
    Detector,
    Bandit,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Channel,
        Component::Rateless,
        Component::Knapsack,
        Component::Detector,
        Component::Bandit,
    ];

    fn name(&self) -> &'static str {
        match self {
            Component::Channel => "channel",
            Component::Rateless => "rateless",
            Component::Knapsack => "knapsack",
            Component::Detector => "detector",
            Component::Bandit => "bandit",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown component '{s}' (expected one of channel, rateless, knapsack, \
                     detector, bandit)"
                )
            })
    }
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Check { name: name.into(), pass, detail }
    }
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    let components: Vec<Component> = if args.components.is_empty() {
        Component::ALL.to_vec()
    } else {
        let mut seen = Vec::new();
        for &c in &args.components {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen
    };

    let mut checks: Vec<Check> = Vec::new();
    for component in components {
        let batch = match component {
            Component::Channel => channel_checks(args.seed),
            Component::Rateless => rateless_checks(args.seed),
            Component::Knapsack => knapsack_checks(args.seed),
            Component::Detector => detector_checks(args.seed),
            Component::Bandit => bandit_checks(args.seed),
        };
        for check in &batch {
            let verdict = if check.pass { "ok" } else { "FAILED" };
            println!("check {}: {} ({})", check.name, verdict, check.detail);
        }
        checks.extend(batch);
    }

    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        Err(Failure::VerificationFailed { failed, total: checks.len() })
    } else {
        println!("all {} checks within tolerance", checks.len());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// channel: density normalization, sampling agreement, closed-form outage
// ---------------------------------------------------------------------------

fn random_link(rng: &mut ChaCha8Rng, interferers: usize, noise: bool) -> Link {
    Link {
        serving_beta: rng.random_range(0.5..2.5),
        serving_power: rng.random_range(0.5..4.0),
        interferers: (0..interferers)
            .map(|_| Interferer {
                beta: rng.random_range(0.5..2.5),
                power: rng.random_range(0.5..4.0),
            })
            .collect(),
        noise_power: if noise { rng.random_range(0.05..1.5) } else { 0.0 },
    }
}

fn channel_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links =
        [random_link(&mut rng, 0, true), random_link(&mut rng, 1, true), random_link(&mut rng, 3, true)];

    let mut worst_norm = 0.0f64;
    let mut worst_ks = 0.0f64;
    for link in &links {
        let model = SinrModel::new(link, TieHandling::Jitter).expect("valid link");
        let total = integrate(&|r| model.pdf(r), 0.0, model.quadrature_upper_limit(), 1e-10);
        worst_norm = worst_norm.max((total - 1.0).abs());
        let mut draws: Vec<f64> = (0..200_000)
            .map(|_| sample_sinr(link, &mut rng).expect("valid link"))
            .collect();
        worst_ks = worst_ks.max(ks_distance(&mut draws, |r| model.cdf(r).clamp(0.0, 1.0)));
    }

    let interference_only = random_link(&mut rng, 2, false);
    let u_min = 0.5;
    let closed = outage_probability(&interference_only, u_min).expect("valid link");
    let trials = 400_000u32;
    let mut below = 0u32;
    for _ in 0..trials {
        if sample_sinr(&interference_only, &mut rng).expect("valid link").ln_1p() < u_min {
            below += 1;
        }
    }
    let mc_gap = (closed - f64::from(below) / f64::from(trials)).abs();

    vec![
        Check::new(
            "channel.density-normalization",
            worst_norm <= 1e-6,
            format!("worst |integral - 1| = {worst_norm:.2e}, tolerance 1e-6"),
        ),
        Check::new(
            "channel.sampling-agreement",
            worst_ks <= 0.01,
            format!("worst KS over 2x10^5 draws = {worst_ks:.4}, tolerance 0.01"),
        ),
        Check::new(
            "channel.interference-limited-outage",
            mc_gap <= 0.01,
            format!("|closed form - Monte Carlo| = {mc_gap:.2e}, tolerance 0.01"),
        ),
    ]
}

// ---------------------------------------------------------------------------
// rateless: decode enumeration and round-duration law
// ---------------------------------------------------------------------------

fn rateless_checks(seed: u64) -> Vec<Check> {
    // Exhaustive reception patterns up to depth seven.
    let mut worst_enum = 0.0f64;
    for deadline in 1u32..=7 {
        for lprime in 1..=deadline.min(4) {
            for outage_tenths in 1..=9u32 {
                let outage = f64::from(outage_tenths) / 10.0;
                for recovery in [1.0, 0.95] {
                    let policy = DeliveryPolicy::new(deadline, recovery).expect("valid policy");
                    let law = decode_success_probability(lprime, &policy, outage)
                        .expect("valid parameters");
                    let mut reference = 0.0f64;
                    for pattern in 0u32..1u32 << deadline {
                        let arrivals = pattern.count_ones();
                        if arrivals >= lprime {
                            reference += (1.0 - outage).powi(arrivals as i32)
                                * outage.powi((deadline - arrivals) as i32);
                        }
                    }
                    worst_enum = worst_enum.max((law - reference * recovery).abs());
                }
            }
        }
    }

    // Round-duration law against direct per-slot simulation.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lprime, outage, audience) = (5u32, 0.35, 3usize);
    let policy = DeliveryPolicy::new(10, 0.9).expect("valid policy");
    let law: Vec<(u64, f64)> =
        duration_distribution(lprime, outage, &policy, &TruncatedCounts::fixed(audience as u64))
            .expect("valid parameters")
            .into_iter()
            .map(|(w, p)| (u64::from(w), p))
            .collect();
    let trials = 150_000u32;
    let mut histogram: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for _ in 0..trials {
        let outcome =
            simulate_broadcast(lprime, &vec![outage; audience], &policy, 1.0, &mut rng)
                .expect("valid broadcast");
        *histogram.entry(u64::from(outcome.duration)).or_insert(0.0) += 1.0 / f64::from(trials);
    }
    let mc: Vec<(u64, f64)> = histogram.into_iter().collect();
    let tv = tv_distance(&law, &mc);

    vec![
        Check::new(
            "rateless.decode-enumeration",
            worst_enum <= 1e-12,
            format!("worst deviation = {worst_enum:.2e}, tolerance 1e-12"),
        ),
        Check::new(
            "rateless.duration-law",
            tv <= 0.015,
            format!("total-variation vs 1.5x10^5 simulated rounds = {tv:.4}, tolerance 0.015"),
        ),
    ]
}

// ---------------------------------------------------------------------------
// knapsack: dynamic program vs exhaustive subset search
// ---------------------------------------------------------------------------

fn best_value_by_search(items: &[CacheItem], capacity: u32) -> f64 {
    let mut best = 0.0f64;
    for mask in 0u32..1u32 << items.len() {
        let mut size = 0u64;
        let mut value = 0.0f64;
        for (i, item) in items.iter().enumerate() {
            if mask >> i & 1 == 1 {
                size += u64::from(item.size);
                value += item.value;
            }
        }
        if size <= u64::from(capacity) && value > best {
            best = value;
        }
    }
    best
}

fn knapsack_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = 300usize;
    let mut mismatches = 0usize;
    let mut worst_gap = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=15usize);
        let capacity = rng.random_range(1..=30u32);
        let items: Vec<CacheItem> = (0..n)
            .map(|i| CacheItem {
                id: FileId(i as u32),
                size: rng.random_range(1..=10u32),
                value: rng.random_range(0.1..10.0f64),
            })
            .collect();
        let plan = solve_knapsack(&items, capacity).expect("nonempty instance");
        let best = best_value_by_search(&items, capacity);
        let gap = (plan.total_value - best).abs();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-9 * best.max(1.0) || plan.used_capacity > capacity {
            mismatches += 1;
        }
    }

    let cfg = ScenarioConfig::reference_scenario();
    let items: Vec<CacheItem> = cfg
        .files
        .iter()
        .map(|f| CacheItem { id: FileId(f.id), size: f.size, value: f.popularity[0] })
        .collect();
    let plan = solve_knapsack(&items, cfg.cache.capacity).expect("reference instance");
    let chosen: Vec<u32> = plan.files.iter().map(|f| f.0).collect();
    let reference_ok = chosen == [0, 1, 4, 7, 8] && (plan.total_value - 28.0).abs() <= 1e-9;

    vec![
        Check::new(
            "knapsack.subset-search",
            mismatches == 0,
            format!("{mismatches}/{instances} mismatches, worst value gap {worst_gap:.2e}"),
        ),
        Check::new(
            "knapsack.reference-cell",
            reference_ok,
            format!("chose {chosen:?} worth {:.1}, expected [0, 1, 4, 7, 8] worth 28.0", plan.total_value),
        ),
    ]
}

// ---------------------------------------------------------------------------
// detector: streaming scan vs full rescan of the raw window
// ---------------------------------------------------------------------------

fn constrained_mean(mean_hat: f64, psi0: f64, min_jump: f64) -> f64 {
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

/// Replays a whole stream against a from-scratch rescan; returns the worst
/// statistic gap and how many alarms both routes agreed on, or an error
/// description at the first divergence.
fn rescan_stream(
    cfg: &GlrConfig,
    history: &[u64],
    counts: &[u64],
) -> Result<(f64, usize), String> {
    let mut detector = GlrDetector::bootstrap(*cfg, history).expect("valid config");

    let mut retained: Vec<u64> = Vec::new();
    let base_slot = history.len() as u64;
    let mut seed_mean = if history.is_empty() {
        0.0
    } else {
        history.iter().sum::<u64>() as f64 / history.len() as f64
    };
    let mut seed_count = history.len() as u64;
    let mut regime_start = 0usize;
    let mut cleared_before = 0usize;

    let mut worst = 0.0f64;
    let mut alarms = 0usize;
    for (t, &count) in counts.iter().enumerate() {
        retained.push(count);
        let regime = &retained[regime_start..];
        let n = seed_count + regime.len() as u64;
        let psi0 = ((seed_mean * seed_count as f64 + regime.iter().sum::<u64>() as f64)
            / n as f64)
            .max(INTENSITY_FLOOR);

        let lo = cleared_before.max((t + 1).saturating_sub(cfg.window));
        let mut best_stat = f64::NEG_INFINITY;
        let mut best_start = lo;
        let mut best_psi1 = 0.0f64;
        for start in lo..=t {
            let segment = &retained[start..=t];
            let sum = segment.iter().sum::<u64>() as f64;
            let len = segment.len() as f64;
            let psi1 = constrained_mean(sum / len, psi0, cfg.min_jump);
            let mut stat = len * (psi0 - psi1);
            if sum > 0.0 {
                stat += sum * (psi1 / psi0).ln();
            }
            if stat > best_stat {
                best_stat = stat;
                best_start = start;
                best_psi1 = psi1;
            }
        }

        let result = detector.observe(count);
        worst = worst.max((result.statistic - best_stat).abs());
        let expect_alarm = best_stat >= cfg.threshold;
        match (&result.alarm, expect_alarm) {
            (Some(alarm), true) => {
                alarms += 1;
                let segment_len = (t + 1 - best_start) as u64;
                if alarm.alarm_slot != base_slot + t as u64
                    || alarm.change_slot != base_slot + best_start as u64
                    || alarm.segment_len != segment_len
                {
                    return Err(format!("alarm bookkeeping diverged at slot {t}"));
                }
                worst = worst.max((alarm.new_mean - best_psi1).abs());
                seed_mean = best_psi1;
                seed_count = segment_len;
                regime_start = t + 1;
                cleared_before = t + 1;
            }
            (None, false) => {}
            _ => return Err(format!("alarm decision diverged at slot {t}")),
        }
    }
    Ok((worst, alarms))
}

fn detector_checks(seed: u64) -> Vec<Check> {
    let mut worst = 0.0f64;
    let mut alarms = 0usize;
    let mut divergence: Option<String> = None;
    for stream in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000) + stream);
        let cfg = GlrConfig {
            threshold: if stream % 2 == 0 { 12.0 } else { 30.0 },
            min_jump: 1.0,
            window: if stream % 4 < 2 { 50 } else { 500 },
        };
        let len = 80 + (stream as usize * 13) % 121;
        let base_rate = rng.random_range(0.5..8.0);
        let jumped = base_rate + rng.random_range(1.5..6.0);
        let counts: Vec<u64> = (0..len)
            .map(|s| {
                let rate = if stream % 3 != 0 && s >= len / 2 { jumped } else { base_rate };
                Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64
            })
            .collect();
        let history: Vec<u64> = if stream % 2 == 0 {
            (0..20)
                .map(|_| Poisson::new(base_rate).expect("positive rate").sample(&mut rng) as u64)
                .collect()
        } else {
            Vec::new()
        };
        match rescan_stream(&cfg, &history, &counts) {
            Ok((gap, stream_alarms)) => {
                worst = worst.max(gap);
                alarms += stream_alarms;
            }
            Err(why) => {
                divergence = Some(format!("stream {stream}: {why}"));
                break;
            }
        }
    }

    let detail = match &divergence {
        Some(why) => why.clone(),
        None => format!(
            "worst statistic gap = {worst:.2e} over 40 streams ({alarms} alarms agreed), \
             tolerance 1e-9"
        ),
    };
    vec![Check::new("detector.full-rescan", divergence.is_none() && worst <= 1e-9, detail)]
}

// ---------------------------------------------------------------------------
// bandit: logarithmic regret on a known six-arm instance
// ---------------------------------------------------------------------------

fn bandit_checks(seed: u64) -> Vec<Check> {
    let means = [0.9, 0.7, 0.5, 0.4, 0.3, 0.1];
    let best = means[0];
    let cache = [FileId(0), FileId(1)];
    let rule = SelectionRule::Ucb(UcbParams { beta: 1.0, zeta: 2.0 });
    let horizon = 4_000u64;
    let checkpoints: Vec<u64> = (1..=10).map(|k| k * 400).collect();

    let seeds = 10u64;
    let mut averaged = vec![0.0f64; checkpoints.len()];
    let mut late_best_share = 0.0f64;
    for s in 1..=seeds {
        let mut arms = ArmSet::from_cache(&cache, 3);
        let ids: Vec<ArmId> = arms.iter().map(|(&id, _)| id).collect();
        let mut state = PolicyState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(77) + s);
        let mut regret = 0.0f64;
        let mut best_plays_late = 0u64;
        let mut next = 0usize;
        for round in 1..=horizon {
            let arm = select_arm(&arms, &rule, round, None, &mut state, &mut rng)
                .expect("live arms");
            let mu = means[ids.iter().position(|&id| id == arm).expect("known arm")];
            let reward = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
            arms.record_reward(arm, reward).expect("recordable");
            regret += best - mu;
            if mu == best && round > 3 * horizon / 4 {
                best_plays_late += 1;
            }
            if next < checkpoints.len() && round == checkpoints[next] {
                averaged[next] += regret / seeds as f64;
                next += 1;
            }
        }
        late_best_share += best_plays_late as f64 / (horizon / 4) as f64 / seeds as f64;
    }

    let x: Vec<f64> = checkpoints.iter().map(|&t| (t as f64).ln()).collect();
    let (_, slope, r2) = linear_fit(&x, &averaged);
    let ratio = averaged[checkpoints.len() - 1] / averaged[checkpoints.len() / 2 - 1];

    vec![
        Check::new(
            "bandit.logarithmic-regret",
            r2 >= 0.85 && slope > 0.0 && ratio < 1.4,
            format!(
                "regret vs ln(rounds): R^2 = {r2:.3} (need 0.85), growth \
                 regret(4000)/regret(2000) = {ratio:.3} (limit 1.4)"
            ),
        ),
        Check::new(
            "bandit.best-arm-convergence",
            late_best_share >= 0.85,
            format!("best arm played {:.1}% of late rounds (need 85%)", late_best_share * 100.0),
        ),
    ]
}
