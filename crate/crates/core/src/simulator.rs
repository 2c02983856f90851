//! Discrete-event engine for the two-phase caching loop.
//!
//! Time advances in slots; one slot carries one coded packet. A run starts
//! with a pure observation window that seeds the intensity estimators, then
//! proceeds in rounds: pick a (file, power) arm, broadcast until every
//! requester acknowledges or the deadline lapses, feed every slot's fresh
//! requests into the change detectors, and close the round by recording the
//! realized energy efficiency. Cache re-solves happen only on detector
//! alarms, and only at round boundaries — the cache used by a round is
//! frozen before its first packet.
//!
//! Requests buffer per file: a broadcast serves the users holding buffered
//! requests at round start, and exactly that snapshot is consumed when the
//! round closes, so arrivals during the round survive to the next one.
//!
//! Randomness is split into per-purpose streams of one seeded generator
//! (environment, requests, channel, request attribution, policy), which
//! keeps request and channel draws aligned across policies for paired
//! comparisons.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use thiserror::Error;

use crate::bandit::{
    decoupling_diagnostic, select_arm, ArmId, ArmSet, PolicyState, RegretLedger,
    SelectionRule,
};
use crate::channel::{draw_user_count, CellGeometry, Interferer, Link, SinrModel, TieHandling};
use crate::config::{BetaMode, IntensityScale, PolicyChoice, ScenarioConfig, VideoConfig};
use crate::numeric::TruncatedCounts;
use crate::placement::{fetch_delta, update_cache, CacheItem, CacheState, PlacementError};
use crate::popularity::{draw_request_count, ChangeAlarm, GlrConfig, GlrDetector};
use crate::rateless::{
    default_overhead, expected_utility, simulate_broadcast, DeliveryPolicy, FileId, FileSpec,
};
use crate::trace::{join_ids, scenario_hash, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("channel model: {0}")]
    Channel(#[from] crate::channel::ChannelError),
    #[error("delivery model: {0}")]
    Rateless(#[from] crate::rateless::RatelessError),
    #[error("request model: {0}")]
    Popularity(#[from] crate::popularity::PopularityError),
    #[error("placement: {0}")]
    Placement(#[from] PlacementError),
    #[error("arm selection: {0}")]
    Bandit(#[from] crate::bandit::BanditError),
}

// One generator, five non-overlapping streams. Splitting by purpose keeps
// the request/channel draws of paired runs aligned regardless of how much
// randomness each policy consumes.
const STREAM_ENVIRONMENT: u64 = 0;
const STREAM_REQUESTS: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_ATTRIBUTION: u64 = 3;
const STREAM_POLICY: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Knobs that shape the artifact, not the dynamics.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record the per-slot, per-file detector trace (large; off by default).
    pub record_detector_rows: bool,
}

/// One delivery round as it appears in the trace.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub start_slot: u64,
    /// Slots occupied; always equals the broadcast outcome's duration.
    pub duration: u32,
    /// `None` for idle rounds (empty cache keeps the transmitter silent).
    pub arm: Option<ArmId>,
    pub power: f64,
    pub requesters: u32,
    pub recovered: u32,
    pub energy: f64,
    /// Realized energy efficiency: users served per unit energy.
    pub reward: f64,
    /// Analytic expected reward of the chosen arm under the true dynamics.
    pub chosen_value: f64,
    /// Analytic expected reward of the best arm this round.
    pub oracle_value: f64,
    pub cumulative_regret: f64,
    /// Cache contents the round was played with (frozen at round start).
    pub cache: Vec<FileId>,
    /// Detector alarms fired during this round's slots.
    pub alarms: u32,
    /// Whether the round-closing re-solve actually moved the cache.
    pub cache_changed: bool,
    /// An uncached file's optimistic utility bound beat the best cached arm.
    pub decoupling: bool,
}

impl TraceRecord for RoundRecord {
    fn csv_header() -> &'static str {
        "round,start_slot,duration,file,power_index,power,requesters,recovered,\
         energy,reward,chosen_value,oracle_value,cumulative_regret,cache,alarms,\
         cache_changed,decoupling"
    }

    fn csv_row(&self) -> String {
        let (file, power_index) = match self.arm {
            Some(arm) => (arm.file.to_string(), arm.power_index.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.start_slot,
            self.duration,
            file,
            power_index,
            self.power,
            self.requesters,
            self.recovered,
            self.energy,
            self.reward,
            self.chosen_value,
            self.oracle_value,
            self.cumulative_regret,
            join_ids(&self.cache),
            self.alarms,
            self.cache_changed,
            self.decoupling
        )
    }
}

/// Per-slot, per-file detector state (optional trace).
#[derive(Debug, Clone, Serialize)]
pub struct DetectorRow {
    pub slot: u64,
    pub file: FileId,
    pub count: u64,
    pub mean: f64,
    pub statistic: f64,
    pub alarm: bool,
}

impl TraceRecord for DetectorRow {
    fn csv_header() -> &'static str {
        "slot,file,count,mean,statistic,alarm"
    }
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.slot, self.file, self.count, self.mean, self.statistic, self.alarm
        )
    }
}

/// A detector alarm, tagged with the round whose slots contained it.
#[derive(Debug, Clone, Serialize)]
pub struct AlarmEvent {
    pub round: u64,
    pub file: FileId,
    pub alarm: ChangeAlarm,
}

impl TraceRecord for AlarmEvent {
    fn csv_header() -> &'static str {
        "round,file,alarm_slot,change_slot,segment_len,new_mean,statistic"
    }
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.file,
            self.alarm.alarm_slot,
            self.alarm.change_slot,
            self.alarm.segment_len,
            self.alarm.new_mean,
            self.alarm.statistic
        )
    }
}

/// One cache re-solve: what the solver saw and what it chose.
#[derive(Debug, Clone, Serialize)]
pub struct CacheEvent {
    /// Round whose close triggered the re-solve (0 = initial placement).
    pub round: u64,
    pub slot: u64,
    /// Estimated worth of every live file at solve time.
    pub candidates: Vec<CacheItem>,
    pub previous: Vec<FileId>,
    pub chosen: Vec<FileId>,
    pub total_value: f64,
    pub backhaul_units: u64,
    /// The alive set was empty, so the previous contents were kept.
    pub kept_previous: bool,
}

impl TraceRecord for CacheEvent {
    fn csv_header() -> &'static str {
        "round,slot,candidates,previous,chosen,total_value,backhaul_units,kept_previous"
    }
    fn csv_row(&self) -> String {
        let cand: Vec<String> = self
            .candidates
            .iter()
            .map(|c| format!("{}:{}:{}", c.id, c.size, c.value))
            .collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.slot,
            cand.join("|"),
            join_ids(&self.previous),
            join_ids(&self.chosen),
            self.total_value,
            self.backhaul_units,
            self.kept_previous
        )
    }
}

/// Aggregate request intensity estimated during the observation window.
#[derive(Debug, Clone, Serialize)]
pub struct FileEstimate {
    pub file: FileId,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RunWarnings {
    /// Re-solves skipped because no file cleared the liveness threshold.
    pub empty_alive_fallbacks: u32,
    /// Rounds whose decoupling check flagged an uncached file.
    pub decoupling_rounds: u32,
}

/// Everything one replication produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub seed: u64,
    pub policy: PolicyChoice,
    pub scenario: String,
    pub user_count: u64,
    /// Per-user fading rates (all equal in shared mode).
    pub betas: Vec<f64>,
    pub bootstrap_estimates: Vec<FileEstimate>,
    pub rounds: Vec<RoundRecord>,
    pub alarms: Vec<AlarmEvent>,
    pub cache_events: Vec<CacheEvent>,
    pub detector_rows: Vec<DetectorRow>,
    pub total_slots: u64,
    pub warnings: RunWarnings,
}

// ---------------------------------------------------------------------------
// engine

struct FilePlan {
    spec: FileSpec,
    delivery: DeliveryPolicy,
    /// Per-user intensity per popularity segment.
    popularity: Vec<f64>,
}

/// Integral of a piecewise-constant per-user intensity over `[from, to)`.
fn window_intensity(popularity: &[f64], changes: &[u64], from: u64, to: u64) -> f64 {
    let mut total = 0.0;
    let mut lo = from;
    while lo < to {
        let seg = changes.iter().take_while(|&&c| lo >= c).count();
        let seg_end = changes.get(seg).copied().unwrap_or(u64::MAX).min(to);
        total += popularity[seg] * (seg_end - lo) as f64;
        lo = seg_end;
    }
    total
}

fn draw_log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Split `total` buffered requests over `users` equally likely targets and
/// return the outage of every user that received at least one.
fn attribute_requesters<R: Rng + ?Sized>(
    total: u64,
    users: u64,
    outage_per_user: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let mut requesters = Vec::new();
    let mut remaining = total;
    for u in 0..users as usize {
        if remaining == 0 {
            break;
        }
        let boxes_left = users as usize - u;
        let share = if boxes_left == 1 {
            remaining
        } else {
            Binomial::new(remaining, 1.0 / boxes_left as f64)
                .expect("valid split probability")
                .sample(rng)
        };
        if share > 0 {
            requesters.push(outage_per_user[u]);
        }
        remaining -= share;
    }
    requesters
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    record_detector_rows: bool,
    rule: SelectionRule,
    plans: Vec<FilePlan>,
    specs: Vec<FileSpec>,
    id_pos: BTreeMap<FileId, usize>,
    powers: Vec<f64>,
    user_count: u64,
    betas: Vec<f64>,
    /// Outage per [power index][user].
    per_user_outage: Vec<Vec<f64>>,
    /// Mean outage per power index (exact per-user value in shared mode).
    mean_outage: Vec<f64>,
    detectors: Vec<GlrDetector>,
    buffers: Vec<u64>,
    last_clear: Vec<u64>,
    cache: CacheState,
    arms: ArmSet,
    policy_state: PolicyState,
    ledger: RegretLedger,
    requests_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    attribution_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    slot: u64,
    rounds: Vec<RoundRecord>,
    alarms: Vec<AlarmEvent>,
    cache_events: Vec<CacheEvent>,
    detector_rows: Vec<DetectorRow>,
    bootstrap_estimates: Vec<FileEstimate>,
    warnings: RunWarnings,
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &'a ScenarioConfig,
        seed: u64,
        policy: PolicyChoice,
        opts: &RunOptions,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let specs = cfg.file_specs();
        let mut plans = Vec::with_capacity(specs.len());
        let mut id_pos = BTreeMap::new();
        for (pos, (spec, file_cfg)) in specs.iter().zip(&cfg.files).enumerate() {
            id_pos.insert(spec.id, pos);
            plans.push(FilePlan {
                spec: *spec,
                delivery: DeliveryPolicy::new(
                    cfg.deadline_for(spec),
                    cfg.delivery.recovery_prob,
                )?,
                popularity: file_cfg.popularity.clone(),
            });
        }

        // Environment: one user-count draw and the fading rates, fixed for
        // the whole replication.
        let mut env_rng = stream_rng(seed, STREAM_ENVIRONMENT);
        let geometry = CellGeometry::new(cfg.cell.radius, cfg.cell.user_density)?;
        let user_count = draw_user_count(geometry, &mut env_rng);
        let betas: Vec<f64> = match cfg.channel.beta_mode {
            BetaMode::Shared => {
                let b = draw_log_uniform(cfg.channel.beta_low, cfg.channel.beta_high, &mut env_rng);
                vec![b; user_count as usize]
            }
            BetaMode::PerUser => (0..user_count)
                .map(|_| draw_log_uniform(cfg.channel.beta_low, cfg.channel.beta_high, &mut env_rng))
                .collect(),
        };
        let interferers: Vec<Interferer> = cfg
            .channel
            .interferers
            .iter()
            .map(|i| Interferer { beta: i.beta, power: i.power })
            .collect();
        let mut per_user_outage = Vec::with_capacity(cfg.powers.levels.len());
        let mut mean_outage = Vec::with_capacity(cfg.powers.levels.len());
        for &p in &cfg.powers.levels {
            let mut row = Vec::with_capacity(betas.len());
            for &beta in &betas {
                let link = Link {
                    serving_beta: beta,
                    serving_power: p,
                    interferers: interferers.clone(),
                    noise_power: cfg.channel.noise_power,
                };
                let model = SinrModel::new(&link, TieHandling::Jitter)?;
                row.push(model.outage(cfg.channel.min_rate_nats)?);
            }
            let mean = if row.is_empty() {
                0.0
            } else {
                row.iter().sum::<f64>() / row.len() as f64
            };
            per_user_outage.push(row);
            mean_outage.push(mean);
        }

        Ok(Engine {
            cfg,
            record_detector_rows: opts.record_detector_rows,
            rule: policy.to_rule(&cfg.bandit),
            plans,
            specs,
            id_pos,
            powers: cfg.powers.levels.clone(),
            user_count,
            betas,
            per_user_outage,
            mean_outage,
            detectors: Vec::new(),
            buffers: Vec::new(),
            last_clear: Vec::new(),
            cache: CacheState::empty(cfg.cache.capacity),
            arms: ArmSet::new(),
            policy_state: PolicyState::new(),
            ledger: RegretLedger::new(),
            requests_rng: stream_rng(seed, STREAM_REQUESTS),
            channel_rng: stream_rng(seed, STREAM_CHANNEL),
            attribution_rng: stream_rng(seed, STREAM_ATTRIBUTION),
            policy_rng: stream_rng(seed, STREAM_POLICY),
            slot: 0,
            rounds: Vec::new(),
            alarms: Vec::new(),
            cache_events: Vec::new(),
            detector_rows: Vec::new(),
            bootstrap_estimates: Vec::new(),
            warnings: RunWarnings::default(),
        })
    }

    /// Draw one slot's requests for every file, feed the detectors, log
    /// alarms against `round`. Returns how many alarms fired.
    fn advance_slot(&mut self, round: u64) -> Result<u32, SimError> {
        let seg = self.cfg.segment_at(self.slot);
        let mut fired = 0;
        for (i, plan) in self.plans.iter().enumerate() {
            let rate = self.user_count as f64 * plan.popularity[seg];
            let count = draw_request_count(rate, &mut self.requests_rng)?;
            self.buffers[i] += count;
            let scan = self.detectors[i].observe(count);
            let alarmed = scan.alarm.is_some();
            if let Some(alarm) = scan.alarm {
                fired += 1;
                self.alarms.push(AlarmEvent { round, file: plan.spec.id, alarm });
            }
            if self.record_detector_rows {
                self.detector_rows.push(DetectorRow {
                    slot: self.slot,
                    file: plan.spec.id,
                    count,
                    mean: self.detectors[i].mean(),
                    statistic: scan.statistic,
                    alarm: alarmed,
                });
            }
        }
        self.slot += 1;
        Ok(fired)
    }

    /// Estimated intensity of a file, in the units the config's thresholds
    /// use.
    fn estimate(&self, pos: usize) -> f64 {
        let aggregate = self.detectors[pos].mean();
        match self.cfg.detector.intensity_scale {
            IntensityScale::Aggregate => aggregate,
            IntensityScale::PerUser => aggregate / self.cfg.mean_user_count(),
        }
    }

    /// Estimated per-user intensity regardless of threshold units.
    fn per_user_estimate(&self, pos: usize) -> f64 {
        self.detectors[pos].mean() / self.cfg.mean_user_count()
    }

    /// Live files with their estimated worth, ascending by id.
    fn live_candidates(&self) -> Vec<CacheItem> {
        let mut items: Vec<CacheItem> = self
            .plans
            .iter()
            .enumerate()
            .filter_map(|(pos, plan)| {
                let est = self.estimate(pos);
                (est > self.cfg.detector.alive_threshold).then_some(CacheItem {
                    id: plan.spec.id,
                    size: plan.spec.size,
                    value: est,
                })
            })
            .collect();
        items.sort_by_key(|it| it.id);
        items
    }

    /// Re-solve the cache against current estimates; on an empty alive set
    /// keep the previous contents. Returns whether the contents moved.
    fn resolve_cache(&mut self, round: u64) -> Result<bool, SimError> {
        let candidates = self.live_candidates();
        match update_cache(&self.cache, true, &candidates, round) {
            Ok((new_state, plan)) => {
                let plan = plan.expect("flagged update always re-solves");
                let delta = fetch_delta(&self.cache, &new_state, &self.specs)?;
                let changed = !delta.is_noop();
                self.cache_events.push(CacheEvent {
                    round,
                    slot: self.slot,
                    candidates,
                    previous: self.cache.contents.clone(),
                    chosen: new_state.contents.clone(),
                    total_value: plan.total_value,
                    backhaul_units: delta.backhaul_units,
                    kept_previous: false,
                });
                self.cache = new_state;
                if changed && self.arms.on_cache_change(&self.cache.contents, self.powers.len())
                {
                    self.policy_state.reset();
                }
                Ok(changed)
            }
            Err(PlacementError::EmptyAliveSet) => {
                self.warnings.empty_alive_fallbacks += 1;
                self.cache_events.push(CacheEvent {
                    round,
                    slot: self.slot,
                    candidates,
                    previous: self.cache.contents.clone(),
                    chosen: self.cache.contents.clone(),
                    total_value: 0.0,
                    backhaul_units: 0,
                    kept_previous: true,
                });
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Analytic expected reward of every arm under the true request and
    /// channel laws, given current buffer ages. This is the referent the
    /// regret ledger and the oracle policy share.
    fn analytic_values(&self) -> Result<BTreeMap<ArmId, f64>, SimError> {
        let mut values = BTreeMap::new();
        for (&arm, _) in self.arms.iter() {
            let pos = self.id_pos[&arm.file];
            let plan = &self.plans[pos];
            let value = if self.user_count == 0 {
                0.0
            } else {
                let window = window_intensity(
                    &plan.popularity,
                    &self.cfg.schedule.change_slots,
                    self.last_clear[pos],
                    self.slot,
                );
                let p_request = -(-window).exp_m1();
                let counts = TruncatedCounts::binomial(self.user_count, p_request);
                expected_utility(
                    plan.spec.required_packets(),
                    self.mean_outage[arm.power_index],
                    &plan.delivery,
                    self.powers[arm.power_index],
                    &counts,
                )?
            };
            values.insert(arm, value);
        }
        Ok(values)
    }

    fn decoupling_flag(&self, best_cached: f64) -> bool {
        let uncached: Vec<(FileId, f64, u32)> = self
            .plans
            .iter()
            .enumerate()
            .filter(|(_, plan)| !self.cache.contains(plan.spec.id))
            .map(|(pos, plan)| {
                (plan.spec.id, self.per_user_estimate(pos), plan.spec.required_packets())
            })
            .collect();
        decoupling_diagnostic(best_cached, &uncached, self.powers[0]).is_some()
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        let n_files = self.plans.len();
        self.buffers = vec![0; n_files];
        self.last_clear = vec![0; n_files];

        // Observation window: estimate intensities before any delivery.
        let bootstrap = self.cfg.detector.bootstrap_slots;
        let mut history: Vec<Vec<u64>> =
            vec![Vec::with_capacity(bootstrap as usize); n_files];
        for slot in 0..bootstrap {
            let seg = self.cfg.segment_at(slot);
            for (i, plan) in self.plans.iter().enumerate() {
                let rate = self.user_count as f64 * plan.popularity[seg];
                let count = draw_request_count(rate, &mut self.requests_rng)?;
                history[i].push(count);
                self.buffers[i] += count;
                if self.record_detector_rows {
                    let seen = &history[i];
                    let mean = seen.iter().sum::<u64>() as f64 / seen.len() as f64;
                    self.detector_rows.push(DetectorRow {
                        slot,
                        file: plan.spec.id,
                        count,
                        mean,
                        statistic: 0.0,
                        alarm: false,
                    });
                }
            }
        }
        self.slot = bootstrap;
        let glr_cfg = GlrConfig {
            threshold: self.cfg.detector.threshold,
            min_jump: self.cfg.aggregate_min_jump(),
            window: self.cfg.detector.window,
        };
        self.detectors = history
            .iter()
            .map(|h| GlrDetector::bootstrap(glr_cfg, h))
            .collect::<Result<_, _>>()?;
        self.bootstrap_estimates = self
            .plans
            .iter()
            .enumerate()
            .map(|(i, plan)| FileEstimate { file: plan.spec.id, mean: self.detectors[i].mean() })
            .collect();

        // Initial placement (round 0), then the delivery loop.
        self.resolve_cache(0)?;
        self.arms = ArmSet::from_cache(&self.cache.contents, self.powers.len());
        self.policy_state.reset();

        let mut round: u64 = 0;
        while self.slot < self.cfg.schedule.horizon {
            round += 1;
            let cache_before = self.cache.contents.clone();
            let start_slot = self.slot;

            if self.arms.is_empty() {
                // Nothing cached: the slot still elapses and detectors still
                // listen, so a later alarm can revive the cache.
                let fired = self.advance_slot(round)?;
                let mut cache_changed = false;
                if fired > 0 {
                    cache_changed = self.resolve_cache(round)?;
                    if cache_changed {
                        self.arms =
                            ArmSet::from_cache(&self.cache.contents, self.powers.len());
                        self.policy_state.reset();
                    }
                }
                self.rounds.push(RoundRecord {
                    round,
                    start_slot,
                    duration: 1,
                    arm: None,
                    power: 0.0,
                    requesters: 0,
                    recovered: 0,
                    energy: 0.0,
                    reward: 0.0,
                    chosen_value: 0.0,
                    oracle_value: 0.0,
                    cumulative_regret: self.ledger.cumulative(),
                    cache: cache_before,
                    alarms: fired,
                    cache_changed,
                    decoupling: false,
                });
                continue;
            }

            let values = self.analytic_values()?;
            let oracle_value = values.values().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let decoupling = self.decoupling_flag(oracle_value);
            if decoupling {
                self.warnings.decoupling_rounds += 1;
            }

            let arm = select_arm(
                &self.arms,
                &self.rule,
                round,
                Some(&values),
                &mut self.policy_state,
                &mut self.policy_rng,
            )?;
            let pos = self.id_pos[&arm.file];
            let snapshot = self.buffers[pos];
            let requester_outages = attribute_requesters(
                snapshot,
                self.user_count,
                &self.per_user_outage[arm.power_index],
                &mut self.attribution_rng,
            );
            let outcome = simulate_broadcast(
                self.plans[pos].spec.required_packets(),
                &requester_outages,
                &self.plans[pos].delivery,
                self.powers[arm.power_index],
                &mut self.channel_rng,
            )?;

            // The broadcast owns `duration` slots; requests keep arriving
            // and detectors keep scanning inside them.
            let mut fired = 0;
            for _ in 0..outcome.duration {
                fired += self.advance_slot(round)?;
            }

            // Close the round: consume the served snapshot (arrivals during
            // the round survive), book the reward, then re-place on alarms.
            self.buffers[pos] -= snapshot;
            self.last_clear[pos] = start_slot;
            let reward = self.arms.record_outcome(arm, &outcome)?;
            let chosen_value = values[&arm];
            self.ledger.record(round, arm, reward, chosen_value, oracle_value);
            let mut cache_changed = false;
            if fired > 0 {
                cache_changed = self.resolve_cache(round)?;
            }

            self.rounds.push(RoundRecord {
                round,
                start_slot,
                duration: outcome.duration,
                arm: Some(arm),
                power: self.powers[arm.power_index],
                requesters: requester_outages.len() as u32,
                recovered: outcome.recovered,
                energy: outcome.energy,
                reward,
                chosen_value,
                oracle_value,
                cumulative_regret: self.ledger.cumulative(),
                cache: cache_before,
                alarms: fired,
                cache_changed,
                decoupling,
            });
        }

        debug_assert_eq!(
            self.slot,
            bootstrap + self.rounds.iter().map(|r| r.duration as u64).sum::<u64>(),
        );
        Ok(RunOutput {
            seed: 0, // stamped by run_scenario
            policy: PolicyChoice::Bandit,
            scenario: String::new(),
            user_count: self.user_count,
            betas: self.betas,
            bootstrap_estimates: self.bootstrap_estimates,
            rounds: self.rounds,
            alarms: self.alarms,
            cache_events: self.cache_events,
            detector_rows: self.detector_rows,
            total_slots: self.slot,
            warnings: self.warnings,
        })
    }
}

/// Execute one replication of a scenario under one policy. Fully
/// deterministic in `(config, seed, policy, options)`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    policy: PolicyChoice,
    opts: &RunOptions,
) -> Result<RunOutput, SimError> {
    let engine = Engine::new(cfg, seed, policy, opts)?;
    let mut out = engine.run()?;
    out.seed = seed;
    out.policy = policy;
    out.scenario = scenario_hash(cfg);
    Ok(out)
}

/// Run every requested policy over the configured seeds with common random
/// numbers: paired runs share the environment, request, channel, and
/// attribution streams, differing only in decisions.
pub fn run_baseline_suite(
    cfg: &ScenarioConfig,
    policies: &[PolicyChoice],
    opts: &RunOptions,
) -> Result<Vec<RunOutput>, SimError> {
    let mut outputs = Vec::with_capacity(policies.len() * cfg.run.replications as usize);
    for &policy in policies {
        for seed in cfg.seeds() {
            outputs.push(run_scenario(cfg, seed, policy, opts)?);
        }
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// summary metrics

/// Detection outcome for one true popularity change.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionRecord {
    pub file: FileId,
    pub change_slot: u64,
    /// First alarm at or after the change (within its segment), if any.
    pub alarm_slot: Option<u64>,
    pub delay: Option<u64>,
}

/// Alarm bookkeeping per file: everything not matched to a true change is
/// a false alarm.
#[derive(Debug, Clone, Serialize)]
pub struct FileAlarmStats {
    pub file: FileId,
    pub alarms: u32,
    pub false_alarms: u32,
}

/// Digest of one run, recomputable from the raw trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub policy: PolicyChoice,
    pub scenario: String,
    pub user_count: u64,
    pub rounds: u64,
    pub total_slots: u64,
    pub total_energy: f64,
    pub total_recovered: u64,
    pub backhaul_units: u64,
    pub cumulative_regret: f64,
    /// Mean per-round reward over the whole run.
    pub average_utility: f64,
    /// Mean per-round reward over the final fifth of the rounds.
    pub final_window_utility: f64,
    pub detections: Vec<DetectionRecord>,
    pub alarm_stats: Vec<FileAlarmStats>,
    pub cache_updates: u32,
    pub empty_alive_fallbacks: u32,
    pub decoupling_rounds: u32,
}

/// True intensity changes a run could have observed: `(file, change slot,
/// end of that segment)`.
fn observable_changes(cfg: &ScenarioConfig, total_slots: u64) -> Vec<(FileId, u64, u64)> {
    let mut changes = Vec::new();
    for (k, &boundary) in cfg.schedule.change_slots.iter().enumerate() {
        if boundary >= total_slots {
            continue;
        }
        let segment_end = cfg
            .schedule
            .change_slots
            .get(k + 1)
            .copied()
            .unwrap_or(u64::MAX);
        for f in &cfg.files {
            if f.popularity[k + 1] != f.popularity[k] {
                changes.push((FileId(f.id), boundary, segment_end));
            }
        }
    }
    changes.sort();
    changes
}

/// Reduce a run to its summary. Every figure here is recomputed from the
/// trace records, never carried over from engine internals.
pub fn compute_metrics(cfg: &ScenarioConfig, out: &RunOutput) -> RunSummary {
    let n = out.rounds.len();
    let total_energy: f64 = out.rounds.iter().map(|r| r.energy).sum();
    let total_recovered: u64 = out.rounds.iter().map(|r| r.recovered as u64).sum();
    let average_utility = if n == 0 {
        0.0
    } else {
        out.rounds.iter().map(|r| r.reward).sum::<f64>() / n as f64
    };
    let window = (n / 5).max(1).min(n.max(1));
    let final_window_utility = if n == 0 {
        0.0
    } else {
        out.rounds[n - window..].iter().map(|r| r.reward).sum::<f64>() / window as f64
    };

    let mut detections = Vec::new();
    let mut matched: Vec<u64> = Vec::new();
    for (file, change_slot, segment_end) in observable_changes(cfg, out.total_slots) {
        let hit = out
            .alarms
            .iter()
            .find(|a| {
                a.file == file
                    && a.alarm.alarm_slot >= change_slot
                    && a.alarm.alarm_slot < segment_end
            })
            .map(|a| a.alarm.alarm_slot);
        if let Some(slot) = hit {
            matched.push(slot);
        }
        detections.push(DetectionRecord {
            file,
            change_slot,
            alarm_slot: hit,
            delay: hit.map(|s| s - change_slot),
        });
    }
    let mut alarm_stats: Vec<FileAlarmStats> = cfg
        .files
        .iter()
        .map(|f| FileAlarmStats { file: FileId(f.id), alarms: 0, false_alarms: 0 })
        .collect();
    for event in &out.alarms {
        let matched_here = detections.iter().any(|d| {
            d.file == event.file && d.alarm_slot == Some(event.alarm.alarm_slot)
        });
        if let Some(stats) = alarm_stats.iter_mut().find(|s| s.file == event.file) {
            stats.alarms += 1;
            if !matched_here {
                stats.false_alarms += 1;
            }
        }
    }

    RunSummary {
        seed: out.seed,
        policy: out.policy,
        scenario: out.scenario.clone(),
        user_count: out.user_count,
        rounds: n as u64,
        total_slots: out.total_slots,
        total_energy,
        total_recovered,
        backhaul_units: out.cache_events.iter().map(|e| e.backhaul_units).sum(),
        cumulative_regret: out.rounds.last().map_or(0.0, |r| r.cumulative_regret),
        average_utility,
        final_window_utility,
        detections,
        alarm_stats,
        cache_updates: out
            .cache_events
            .iter()
            .filter(|e| !e.kept_previous && e.round > 0)
            .count() as u32,
        empty_alive_fallbacks: out.warnings.empty_alive_fallbacks,
        decoupling_rounds: out.warnings.decoupling_rounds,
    }
}

/// Running average of realized reward by round (plot series).
#[derive(Debug, Clone, Serialize)]
pub struct UtilityPoint {
    pub round: u64,
    pub average_utility: f64,
}

impl TraceRecord for UtilityPoint {
    fn csv_header() -> &'static str {
        "round,average_utility"
    }
    fn csv_row(&self) -> String {
        format!("{},{}", self.round, self.average_utility)
    }
}

pub fn utility_series(rounds: &[RoundRecord]) -> Vec<UtilityPoint> {
    let mut total = 0.0;
    rounds
        .iter()
        .enumerate()
        .map(|(i, r)| {
            total += r.reward;
            UtilityPoint { round: r.round, average_utility: total / (i + 1) as f64 }
        })
        .collect()
}

/// How often each arm was played inside each popularity segment.
#[derive(Debug, Clone, Serialize)]
pub struct ActionFreqRow {
    pub segment: usize,
    pub file: FileId,
    pub power_index: usize,
    pub rounds: u64,
}

impl TraceRecord for ActionFreqRow {
    fn csv_header() -> &'static str {
        "segment,file,power_index,rounds"
    }
    fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.segment, self.file, self.power_index, self.rounds)
    }
}

pub fn action_frequencies(cfg: &ScenarioConfig, rounds: &[RoundRecord]) -> Vec<ActionFreqRow> {
    let mut counts: BTreeMap<(usize, ArmId), u64> = BTreeMap::new();
    for r in rounds {
        if let Some(arm) = r.arm {
            *counts.entry((cfg.segment_at(r.start_slot), arm)).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .map(|((segment, arm), n)| ActionFreqRow {
            segment,
            file: arm.file,
            power_index: arm.power_index,
            rounds: n,
        })
        .collect()
}

/// Most-played arm per popularity segment (`None` if the segment held no
/// delivery rounds). Ties break toward the smallest arm id.
pub fn modal_actions(cfg: &ScenarioConfig, rounds: &[RoundRecord]) -> Vec<Option<ArmId>> {
    let freq = action_frequencies(cfg, rounds);
    (0..cfg.segments())
        .map(|seg| {
            let mut best: Option<(ArmId, u64)> = None;
            for row in freq.iter().filter(|r| r.segment == seg) {
                let arm = ArmId { file: row.file, power_index: row.power_index };
                if best.is_none() || row.rounds > best.unwrap().1 {
                    best = Some((arm, row.rounds));
                }
            }
            best.map(|(arm, _)| arm)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// playback-deadline experiment

/// One Monte Carlo point of the streaming experiment.
#[derive(Debug, Clone, Serialize)]
pub struct VideoPoint {
    pub deadline_multiplier: f64,
    pub sinr_db: f64,
    pub outage_rate: f64,
}

impl TraceRecord for VideoPoint {
    fn csv_header() -> &'static str {
        "deadline_multiplier,sinr_db,outage_rate"
    }
    fn csv_row(&self) -> String {
        format!("{},{},{}", self.deadline_multiplier, self.sinr_db, self.outage_rate)
    }
}

/// Stream a segmented file over an erasure channel and measure playback
/// outage: the fraction of runs in which some segment `i` had fewer than
/// `i * required` packets decoded by its cumulative deadline.
///
/// All SINR points and deadline multipliers reuse the same per-slot uniform
/// draws, so the curves are exactly monotone in SINR and exactly ordered by
/// deadline — Monte Carlo noise moves whole curves, never their order.
pub fn run_video_experiment(video: &VideoConfig, seed: u64) -> Result<Vec<VideoPoint>, SimError> {
    let required = video.blocks_per_segment + default_overhead(video.blocks_per_segment);
    let rate_threshold = video.min_rate_nats.exp_m1();
    let deadline = |segment: u64, multiplier: f64| -> usize {
        (segment as f64 * multiplier * required as f64).floor() as usize
    };
    let max_multiplier = video
        .deadline_multipliers
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let max_slots = deadline(video.segments as u64, max_multiplier);
    let outages: Vec<f64> = video
        .sinr_db
        .iter()
        .map(|&db| {
            let mean_sinr = 10f64.powf(db / 10.0);
            -(-rate_threshold / mean_sinr).exp_m1()
        })
        .collect();

    let mut failures =
        vec![vec![0u32; video.sinr_db.len()]; video.deadline_multipliers.len()];
    let mut rng = stream_rng(seed, STREAM_CHANNEL);
    let mut draws = vec![0f64; max_slots];
    for _ in 0..video.runs_per_point {
        for d in draws.iter_mut() {
            *d = rng.random();
        }
        for (mi, &mult) in video.deadline_multipliers.iter().enumerate() {
            for (si, &outage) in outages.iter().enumerate() {
                let mut received = 0u64;
                let mut cursor = 0usize;
                let mut late = false;
                for segment in 1..=video.segments as u64 {
                    let dl = deadline(segment, mult);
                    while cursor < dl {
                        if draws[cursor] >= outage {
                            received += 1;
                        }
                        cursor += 1;
                    }
                    if received < segment * required as u64 {
                        late = true;
                        break;
                    }
                }
                if late {
                    failures[mi][si] += 1;
                }
            }
        }
    }

    let mut points = Vec::with_capacity(failures.len() * video.sinr_db.len());
    for (mi, &mult) in video.deadline_multipliers.iter().enumerate() {
        for (si, &db) in video.sinr_db.iter().enumerate() {
            points.push(VideoPoint {
                deadline_multiplier: mult,
                sinr_db: db,
                outage_rate: failures[mi][si] as f64 / video.runs_per_point as f64,
            });
        }
    }
    Ok(points)
}
