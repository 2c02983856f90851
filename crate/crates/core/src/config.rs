//! Scenario configuration: the one file that pins every knob of a run.
//!
//! Configs are TOML with an explicit `schema_version`; unknown fields are
//! rejected rather than ignored, so a typo'd knob fails loudly instead of
//! silently running defaults. Validation happens in one pass and reports the
//! offending field by name.
//!
//! Popularity values are per-user request intensities; per-slot generation
//! always scales them by the realized user count. The `intensity_scale`
//! switch only selects the units of the detector clamp and the liveness
//! threshold (per-user values are scaled by the mean user count internally).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::UcbParams;
use crate::rateless::{default_overhead, FileId, FileSpec};

/// Schema this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found} (this build reads {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

// ---------------------------------------------------------------------------
// sections

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Cell radius (normalized length units).
    pub radius: f64,
    /// Users per unit area.
    pub user_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererConfig {
    /// Fading rate of the interfering link.
    pub beta: f64,
    /// Fixed transmit power of the interferer (worst case).
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// One fading rate per replication, shared by all users. The analytic
    /// expected-utility oracle is exact in this mode.
    Shared,
    /// Independent fading rate per user; the oracle columns then use the
    /// mean outage as an approximation.
    PerUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Fading rates are drawn log-uniformly from [beta_low, beta_high].
    pub beta_low: f64,
    pub beta_high: f64,
    pub beta_mode: BetaMode,
    /// Receiver noise power; may be zero only with interferers present.
    pub noise_power: f64,
    /// Minimum instantaneous rate (nats per channel use) below which a
    /// packet is lost.
    pub min_rate_nats: f64,
    /// Neighboring transmitters, evaluated at their fixed worst-case powers.
    #[serde(default)]
    pub interferers: Vec<InterfererConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    /// Transmit power levels, strictly increasing.
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub id: u32,
    /// Source blocks per transmission unit.
    pub blocks: u32,
    /// Storage units occupied in the cache.
    pub size: u32,
    /// Extra coded packets needed beyond `blocks`; defaults to 5% of blocks.
    #[serde(default)]
    pub overhead: Option<u32>,
    /// Per-user request intensity in each popularity segment
    /// (`change_slots.len() + 1` entries).
    pub popularity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Minimum number of slots to simulate; the final round runs to
    /// completion past this line.
    pub horizon: u64,
    /// Slots at which every file moves to its next popularity segment.
    #[serde(default)]
    pub change_slots: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliveryConfig {
    /// Round deadline as a multiple of the packets needed to decode:
    /// `deadline = ceil(factor * required_packets)`.
    pub deadline_factor: f64,
    /// Probability a user decodes successfully once it has enough packets.
    pub recovery_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityScale {
    /// Detector clamp and liveness threshold are in aggregate
    /// requests-per-slot units.
    Aggregate,
    /// They are in per-user intensity units, scaled by the mean user count
    /// internally.
    PerUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Alarm threshold of the change detector.
    pub threshold: f64,
    /// Smallest intensity shift worth detecting (units per `intensity_scale`).
    pub min_jump: f64,
    /// Scan window length in slots.
    pub window: usize,
    /// Initialization slots consumed by the intensity estimator before any
    /// round runs.
    pub bootstrap_slots: u64,
    /// Liveness threshold (units per `intensity_scale`).
    pub alive_threshold: f64,
    pub intensity_scale: IntensityScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    /// Cache capacity in storage units.
    pub capacity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    /// Exploration scale of the index policy.
    pub beta: f64,
    /// Exploration shape of the index policy.
    pub zeta: f64,
    /// Exploration probability of the fixed-epsilon baseline.
    pub epsilon_fixed: f64,
    /// Numerator of the decreasing-epsilon baseline (`min(1, e0/round)`).
    pub epsilon_decreasing_start: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            beta: 1.0,
            zeta: 2.0,
            epsilon_fixed: 0.1,
            epsilon_decreasing_start: 1.0,
        }
    }
}

/// Which selection rule drives the delivery phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    Bandit,
    Greedy,
    EpsFixed,
    EpsDecreasing,
    Oracle,
}

impl PolicyChoice {
    pub const ALL: [PolicyChoice; 5] = [
        PolicyChoice::Bandit,
        PolicyChoice::Greedy,
        PolicyChoice::EpsFixed,
        PolicyChoice::EpsDecreasing,
        PolicyChoice::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Bandit => "bandit",
            PolicyChoice::Greedy => "greedy",
            PolicyChoice::EpsFixed => "eps-fixed",
            PolicyChoice::EpsDecreasing => "eps-decreasing",
            PolicyChoice::Oracle => "oracle",
        }
    }

    /// The concrete selection rule, with knobs filled in from config.
    pub fn to_rule(self, knobs: &BanditConfig) -> crate::bandit::SelectionRule {
        use crate::bandit::SelectionRule;
        match self {
            PolicyChoice::Bandit => {
                SelectionRule::Ucb(UcbParams { beta: knobs.beta, zeta: knobs.zeta })
            }
            PolicyChoice::Greedy => SelectionRule::Greedy,
            PolicyChoice::EpsFixed => {
                SelectionRule::EpsilonFixed { epsilon: knobs.epsilon_fixed }
            }
            PolicyChoice::EpsDecreasing => SelectionRule::EpsilonDecreasing {
                epsilon0: knobs.epsilon_decreasing_start,
            },
            PolicyChoice::Oracle => SelectionRule::Oracle,
        }
    }
}

impl std::str::FromStr for PolicyChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyChoice::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected one of bandit, greedy, eps-fixed, eps-decreasing, oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Independent replications; replication k uses seed `base_seed + k`.
    pub replications: u32,
    pub base_seed: u64,
    pub policy: PolicyChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    /// Segments per video file.
    pub segments: u32,
    /// Source blocks per segment.
    pub blocks_per_segment: u32,
    /// Playback deadline per segment, as a multiple of the packets needed
    /// to decode it; segment i must decode by slot `floor(i * multiplier *
    /// required_packets)`.
    pub deadline_multipliers: Vec<f64>,
    /// Monte Carlo runs per (SINR, deadline) point.
    pub runs_per_point: u32,
    /// Mean-SINR grid, in dB.
    pub sinr_db: Vec<f64>,
    /// Minimum instantaneous rate (nats) defining per-packet loss.
    pub min_rate_nats: f64,
}

/// Complete description of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub cell: CellConfig,
    pub channel: ChannelConfig,
    pub powers: PowerConfig,
    pub files: Vec<FileConfig>,
    pub schedule: ScheduleConfig,
    pub delivery: DeliveryConfig,
    pub detector: DetectorConfig,
    pub cache: CacheConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub video: Option<VideoConfig>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                found: cfg.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Number of popularity segments (one more than the change count).
    pub fn segments(&self) -> usize {
        self.schedule.change_slots.len() + 1
    }

    /// Popularity segment in force at an absolute slot.
    pub fn segment_at(&self, slot: u64) -> usize {
        self.schedule
            .change_slots
            .iter()
            .take_while(|&&c| slot >= c)
            .count()
    }

    /// Mean user count of the Poisson deployment.
    pub fn mean_user_count(&self) -> f64 {
        self.cell.user_density * std::f64::consts::PI * self.cell.radius.powi(2)
    }

    /// Catalog as delivery-layer file specs (overhead defaults applied).
    pub fn file_specs(&self) -> Vec<FileSpec> {
        self.files
            .iter()
            .map(|f| FileSpec {
                id: FileId(f.id),
                blocks: f.blocks,
                overhead: f.overhead.unwrap_or_else(|| default_overhead(f.blocks)),
                size: f.size,
            })
            .collect()
    }

    /// Round deadline for a file: `ceil(factor * required_packets)`.
    pub fn deadline_for(&self, spec: &FileSpec) -> u32 {
        (self.delivery.deadline_factor * spec.required_packets() as f64).ceil() as u32
    }

    /// Detector clamp in aggregate units.
    pub fn aggregate_min_jump(&self) -> f64 {
        match self.detector.intensity_scale {
            IntensityScale::Aggregate => self.detector.min_jump,
            IntensityScale::PerUser => self.detector.min_jump * self.mean_user_count(),
        }
    }

    /// Liveness threshold in aggregate units.
    pub fn aggregate_alive_threshold(&self) -> f64 {
        match self.detector.intensity_scale {
            IntensityScale::Aggregate => self.detector.alive_threshold,
            IntensityScale::PerUser => {
                self.detector.alive_threshold * self.mean_user_count()
            }
        }
    }

    /// Seeds of the configured replications.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.replications as u64)
            .map(|k| self.run.base_seed + k)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.cell;
        if !(c.radius > 0.0) || !(c.user_density > 0.0) {
            return Err(invalid("cell radius and user_density must be positive"));
        }
        let ch = &self.channel;
        if !(ch.beta_low > 0.0) || !(ch.beta_high >= ch.beta_low) {
            return Err(invalid("channel betas need 0 < beta_low <= beta_high"));
        }
        if !(ch.noise_power >= 0.0) {
            return Err(invalid("channel noise_power must be nonnegative"));
        }
        if ch.noise_power == 0.0 && ch.interferers.is_empty() {
            return Err(invalid(
                "noise_power 0 with no interferers makes the SINR unbounded",
            ));
        }
        if !(ch.min_rate_nats > 0.0) {
            return Err(invalid("channel min_rate_nats must be positive"));
        }
        for (i, it) in ch.interferers.iter().enumerate() {
            if !(it.beta > 0.0) || !(it.power > 0.0) {
                return Err(invalid(format!(
                    "interferer #{i} needs positive beta and power"
                )));
            }
        }
        let p = &self.powers.levels;
        if p.is_empty() {
            return Err(invalid("powers.levels must not be empty"));
        }
        if p.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("powers.levels must all be positive"));
        }
        if p.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("powers.levels must be strictly increasing"));
        }
        if self.files.is_empty() {
            return Err(invalid("at least one file is required"));
        }
        let mut ids: Vec<u32> = self.files.iter().map(|f| f.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("file ids must be unique"));
        }
        let segments = self.segments();
        for f in &self.files {
            if f.blocks == 0 || f.size == 0 {
                return Err(invalid(format!(
                    "file {} needs positive blocks and size",
                    f.id
                )));
            }
            if f.popularity.len() != segments {
                return Err(invalid(format!(
                    "file {}: popularity has {} entries; expected one per segment ({segments})",
                    f.id,
                    f.popularity.len()
                )));
            }
            if f.popularity.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
                return Err(invalid(format!(
                    "file {}: popularity values must be finite and nonnegative",
                    f.id
                )));
            }
        }
        let s = &self.schedule;
        if s.change_slots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("schedule.change_slots must be strictly increasing"));
        }
        // Equality is allowed: horizon == bootstrap_slots is the degenerate
        // estimate-only run with zero delivery rounds.
        if s.horizon < self.detector.bootstrap_slots {
            return Err(invalid(
                "schedule.horizon must cover detector.bootstrap_slots",
            ));
        }
        if let Some(&first) = s.change_slots.first() {
            if first <= self.detector.bootstrap_slots {
                return Err(invalid(
                    "the first change slot must come after the bootstrap window",
                ));
            }
        }
        let d = &self.delivery;
        if !(d.deadline_factor >= 1.0) {
            return Err(invalid("delivery.deadline_factor must be at least 1"));
        }
        if !(d.recovery_prob > 0.0 && d.recovery_prob <= 1.0) {
            return Err(invalid("delivery.recovery_prob must lie in (0, 1]"));
        }
        let det = &self.detector;
        if !(det.threshold > 0.0) || !(det.min_jump > 0.0) {
            return Err(invalid(
                "detector.threshold and detector.min_jump must be positive",
            ));
        }
        if det.window == 0 {
            return Err(invalid("detector.window must hold at least one slot"));
        }
        if det.bootstrap_slots == 0 {
            return Err(invalid("detector.bootstrap_slots must be positive"));
        }
        if !(det.alive_threshold >= 0.0) {
            return Err(invalid("detector.alive_threshold must be nonnegative"));
        }
        let b = &self.bandit;
        if !(b.beta >= 0.0) || !(b.zeta >= 0.0) {
            return Err(invalid("bandit.beta and bandit.zeta must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&b.epsilon_fixed) {
            return Err(invalid("bandit.epsilon_fixed must lie in [0, 1]"));
        }
        if !(b.epsilon_decreasing_start >= 0.0) || !b.epsilon_decreasing_start.is_finite() {
            return Err(invalid(
                "bandit.epsilon_decreasing_start must be nonnegative and finite",
            ));
        }
        if self.run.replications == 0 {
            return Err(invalid("run.replications must be at least 1"));
        }
        if let Some(v) = &self.video {
            if v.segments == 0 || v.blocks_per_segment == 0 {
                return Err(invalid(
                    "video.segments and video.blocks_per_segment must be positive",
                ));
            }
            if v.deadline_multipliers.is_empty()
                || v.deadline_multipliers.iter().any(|&m| !(m > 1.0))
            {
                return Err(invalid(
                    "video.deadline_multipliers must be nonempty, each > 1",
                ));
            }
            if v.runs_per_point == 0 {
                return Err(invalid("video.runs_per_point must be positive"));
            }
            if v.sinr_db.is_empty() {
                return Err(invalid("video.sinr_db grid must not be empty"));
            }
            if !(v.min_rate_nats > 0.0) {
                return Err(invalid("video.min_rate_nats must be positive"));
            }
        }
        Ok(())
    }

    /// The ten-file reference scenario used throughout the tests: one small
    /// cell, three power levels, two popularity changes, and a video section
    /// for the deadline experiment.
    pub fn reference_scenario() -> Self {
        let sizes = [1u32, 1, 2, 5, 6, 3, 5, 4, 3, 7];
        let regimes: [[f64; 10]; 3] = [
            [5.0, 6.0, 3.0, 4.0, 6.0, 0.1, 1.0, 4.0, 7.0, 5.0],
            [5.0, 0.1, 3.0, 4.0, 6.0, 0.1, 1.0, 4.0, 7.0, 5.0],
            [0.1, 0.1, 3.0, 4.0, 6.0, 0.1, 1.0, 4.0, 12.0, 5.0],
        ];
        let files = (0..10u32)
            .map(|i| FileConfig {
                id: i,
                blocks: 2 * sizes[i as usize],
                size: sizes[i as usize],
                overhead: None,
                popularity: regimes.iter().map(|r| r[i as usize]).collect(),
            })
            .collect();
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            cell: CellConfig { radius: 0.3, user_density: 38.0 },
            channel: ChannelConfig {
                beta_low: 0.5,
                beta_high: 2.0,
                beta_mode: BetaMode::Shared,
                noise_power: 1.85,
                min_rate_nats: 0.5,
                interferers: vec![],
            },
            powers: PowerConfig { levels: vec![1.0, 2.0, 4.0] },
            files,
            schedule: ScheduleConfig { horizon: 5_000, change_slots: vec![1_500, 3_000] },
            delivery: DeliveryConfig { deadline_factor: 2.0, recovery_prob: 0.95 },
            detector: DetectorConfig {
                threshold: 30.0,
                min_jump: 1.0,
                window: 500,
                bootstrap_slots: 200,
                alive_threshold: 0.5,
                intensity_scale: IntensityScale::PerUser,
            },
            cache: CacheConfig { capacity: 15 },
            bandit: BanditConfig {
                // Exploration padding scaled to the recoveries-per-joule
                // rewards this cell produces (roughly 0.2..1.1), and a
                // decreasing-exploration start in the style of the classic
                // arm-count-over-gap-squared schedule (~0.1 * 15 / 0.2^2).
                beta: 0.05,
                zeta: 2.0,
                epsilon_fixed: 0.1,
                epsilon_decreasing_start: 40.0,
            },
            run: RunConfig {
                replications: 20,
                base_seed: 1,
                policy: PolicyChoice::Bandit,
            },
            video: Some(VideoConfig {
                segments: 100,
                blocks_per_segment: 2,
                deadline_multipliers: vec![1.5, 2.0, 2.5],
                runs_per_point: 10_000,
                sinr_db: (-8..=20).step_by(2).map(f64::from).collect(),
                min_rate_nats: 0.5,
            }),
        }
    }
}
