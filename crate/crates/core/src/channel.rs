//! Downlink channel model: Poisson user population, Rayleigh block fading, and
//! the SINR distribution seen by a tagged user.
//!
//! With exponentially distributed channel power gains, the received SINR is a
//! ratio `X / (Y + p0)` where `X` is exponential with rate `beta_m / p_m`
//! (serving link) and `Y` is a sum of independent exponentials with rates
//! `beta_i / p_i` (one per interfering transmitter). The sum `Y` has a
//! hypoexponential density expressible by partial fractions,
//!
//! ```text
//! f_Y(y) = sum_i A_i b_i exp(-b_i y),   A_i = prod_{l != i} b_l / (b_l - b_i)
//! ```
//!
//! which yields closed forms for the SINR pdf, cdf, and outage probability.
//! The quadrature-based cdf is retained alongside the closed form so the two
//! routes can check each other.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

use crate::numeric::{self, DEFAULT_QUAD_TOL};

/// Relative gap under which two interferer rates count as tied.
pub const TIE_RELATIVE_EPS: f64 = 1e-9;
/// Relative nudge applied to break a tie when jittering is enabled.
pub const TIE_JITTER: f64 = 1e-6;
/// Target bound on the analytic survival mass beyond the quadrature limit.
pub const TAIL_MASS_BOUND: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("parameter out of range: {0}")]
    InvalidParameter(String),
    #[error("interferer rates {0} and {1} coincide and tie jittering is disabled")]
    DegenerateRates(usize, usize),
    #[error("SINR is unbounded: no interference and zero noise power")]
    UnboundedSinr,
}

/// Disc cell geometry; the expected user count is `density * pi * radius^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub radius: f64,
    pub user_density: f64,
}

impl CellGeometry {
    pub fn new(radius: f64, user_density: f64) -> Result<Self, ChannelError> {
        if !(radius > 0.0) || !(user_density > 0.0) {
            return Err(ChannelError::InvalidParameter(format!(
                "cell geometry needs positive radius and density, got radius={radius}, density={user_density}"
            )));
        }
        Ok(CellGeometry { radius, user_density })
    }

    /// Mean of the Poisson user count over the cell disc.
    pub fn mean_user_count(&self) -> f64 {
        self.user_density * std::f64::consts::PI * self.radius * self.radius
    }
}

/// Number of users in the cell, drawn as `Poisson(density * pi * radius^2)`.
pub fn draw_user_count<R: Rng + ?Sized>(geometry: CellGeometry, rng: &mut R) -> u64 {
    let poisson = Poisson::new(geometry.mean_user_count()).expect("positive mean");
    poisson.sample(rng) as u64
}

/// One interfering transmitter as seen by the tagged user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    /// Fading rate of the interfering link (exponential gain parameter).
    pub beta: f64,
    /// Transmit power of the interferer.
    pub power: f64,
}

/// Everything that determines the tagged user's SINR distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// Fading rate of the serving link.
    pub serving_beta: f64,
    /// Transmit power of the serving station.
    pub serving_power: f64,
    /// Interfering transmitters (possibly empty).
    pub interferers: Vec<Interferer>,
    /// Receiver noise power `p0 >= 0`.
    pub noise_power: f64,
}

impl Link {
    fn validate(&self) -> Result<(), ChannelError> {
        if !(self.serving_beta > 0.0) {
            return Err(ChannelError::InvalidParameter(format!(
                "serving fading rate must be positive, got {}",
                self.serving_beta
            )));
        }
        if !(self.serving_power > 0.0) {
            return Err(ChannelError::InvalidParameter(format!(
                "serving power must be positive, got {}",
                self.serving_power
            )));
        }
        for (i, itf) in self.interferers.iter().enumerate() {
            if !(itf.beta > 0.0) || !(itf.power > 0.0) {
                return Err(ChannelError::InvalidParameter(format!(
                    "interferer {i} needs positive beta and power, got beta={}, power={}",
                    itf.beta, itf.power
                )));
            }
        }
        if !(self.noise_power >= 0.0) {
            return Err(ChannelError::InvalidParameter(format!(
                "noise power must be nonnegative, got {}",
                self.noise_power
            )));
        }
        if self.noise_power == 0.0 && self.interferers.is_empty() {
            return Err(ChannelError::UnboundedSinr);
        }
        Ok(())
    }

    /// Pessimistic variant: every interferer transmits at `p_max`.
    pub fn worst_case(&self, p_max: f64) -> Link {
        let mut link = self.clone();
        for itf in &mut link.interferers {
            itf.power = p_max;
        }
        link
    }
}

/// What to do when two interferer rates coincide (the partial-fraction
/// coefficients would divide by zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieHandling {
    /// Nudge the later rate by a relative [`TIE_JITTER`] and record a warning.
    #[default]
    Jitter,
    /// Refuse to build the model.
    Error,
}

/// Draw one instantaneous SINR value: exponential serving gain over the sum of
/// exponential interferer contributions plus noise.
pub fn sample_sinr<R: Rng + ?Sized>(link: &Link, rng: &mut R) -> Result<f64, ChannelError> {
    link.validate()?;
    let signal: f64 = Exp::new(link.serving_beta).expect("positive rate").sample(rng)
        * link.serving_power;
    let mut denom = link.noise_power;
    for itf in &link.interferers {
        denom += Exp::new(itf.beta).expect("positive rate").sample(rng) * itf.power;
    }
    Ok(signal / denom)
}

/// Hypoexponential law of the aggregate interference power
/// `Y = sum_i p_i * g_i`, `g_i ~ Exp(beta_i)`, with all distinct rates.
#[derive(Debug, Clone)]
pub struct InterferencePdf {
    /// Power-scaled rates `b_i = beta_i / p_i`.
    pub rates: Vec<f64>,
    /// Partial-fraction coefficients `A_i` (they sum to 1).
    pub coeffs: Vec<f64>,
}

impl InterferencePdf {
    pub fn pdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        self.rates
            .iter()
            .zip(&self.coeffs)
            .map(|(&b, &a)| a * b * (-b * y).exp())
            .sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        1.0 - self
            .rates
            .iter()
            .zip(&self.coeffs)
            .map(|(&b, &a)| a * (-b * y).exp())
            .sum::<f64>()
    }
}

/// Analytic SINR distribution for a [`Link`].
///
/// Interferer rates that collide within [`TIE_RELATIVE_EPS`] are either
/// jittered apart (recorded in `jitter_events`) or rejected, per the chosen
/// [`TieHandling`].
#[derive(Debug, Clone)]
pub struct SinrModel {
    /// Serving rate `a = beta_m / p_m`.
    serving_rate: f64,
    /// Distinct interferer rates `b_i = beta_i / p_i` (post-jitter).
    rates: Vec<f64>,
    /// Partial-fraction coefficients matching `rates`.
    coeffs: Vec<f64>,
    noise_power: f64,
    /// Number of tie-break nudges applied during construction.
    pub jitter_events: usize,
}

impl SinrModel {
    pub fn new(link: &Link, ties: TieHandling) -> Result<Self, ChannelError> {
        link.validate()?;
        let serving_rate = link.serving_beta / link.serving_power;
        let mut rates: Vec<f64> = Vec::with_capacity(link.interferers.len());
        let mut jitter_events = 0usize;
        for (i, itf) in link.interferers.iter().enumerate() {
            let mut b = itf.beta / itf.power;
            loop {
                match rates
                    .iter()
                    .position(|&prev| (prev - b).abs() <= TIE_RELATIVE_EPS * prev.max(b))
                {
                    None => break,
                    Some(j) => match ties {
                        TieHandling::Error => return Err(ChannelError::DegenerateRates(j, i)),
                        TieHandling::Jitter => {
                            b *= 1.0 + TIE_JITTER;
                            jitter_events += 1;
                        }
                    },
                }
            }
            rates.push(b);
        }
        let coeffs = partial_fraction_coeffs(&rates);
        Ok(SinrModel {
            serving_rate,
            rates,
            coeffs,
            noise_power: link.noise_power,
            jitter_events,
        })
    }

    /// Law of the aggregate interference power alone.
    pub fn interference(&self) -> InterferencePdf {
        InterferencePdf { rates: self.rates.clone(), coeffs: self.coeffs.clone() }
    }

    /// SINR density at `r >= 0`.
    pub fn pdf(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        let a = self.serving_rate;
        let p0 = self.noise_power;
        if self.rates.is_empty() {
            // Pure-noise channel: the SINR is exponential with rate a * p0.
            return a * p0 * (-a * p0 * r).exp();
        }
        let damp = (-a * p0 * r).exp();
        self.rates
            .iter()
            .zip(&self.coeffs)
            .map(|(&b, &coef)| {
                let den = a * r + b;
                coef * a * b * damp * ((den * p0) + 1.0) / (den * den)
            })
            .sum()
    }

    /// Closed-form cdf (the pdf integrates term by term).
    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        1.0 - self.survival(r)
    }

    /// Closed-form survival function `P[SINR > r]`.
    pub fn survival(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        let a = self.serving_rate;
        let p0 = self.noise_power;
        if self.rates.is_empty() {
            return (-a * p0 * r).exp();
        }
        let damp = (-a * p0 * r).exp();
        self.rates
            .iter()
            .zip(&self.coeffs)
            .map(|(&b, &coef)| coef * b * damp / (a * r + b))
            .sum()
    }

    /// cdf evaluated by adaptive quadrature of the pdf (cross-check route).
    pub fn cdf_numeric(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        numeric::integrate(&|x| self.pdf(x), 0.0, r, DEFAULT_QUAD_TOL)
    }

    /// Upper integration limit with survival mass below [`TAIL_MASS_BOUND`].
    pub fn quadrature_upper_limit(&self) -> f64 {
        let mut hi = 1.0;
        while self.survival(hi) >= TAIL_MASS_BOUND && hi < 1e300 {
            hi *= 2.0;
        }
        hi
    }

    /// Outage probability at spectral-efficiency threshold `u_min` (nats per
    /// channel use): the probability that `ln(1 + SINR) < u_min`.
    ///
    /// The interference-limited case (`p0 = 0`) uses the closed form; with
    /// noise present the cdf is evaluated by quadrature.
    pub fn outage(&self, u_min_nats: f64) -> Result<f64, ChannelError> {
        if !(u_min_nats >= 0.0) {
            return Err(ChannelError::InvalidParameter(format!(
                "rate threshold must be nonnegative nats, got {u_min_nats}"
            )));
        }
        let r = u_min_nats.exp_m1();
        if r <= 0.0 {
            return Ok(0.0);
        }
        if self.noise_power == 0.0 {
            Ok(self.cdf(r))
        } else {
            Ok(self.cdf_numeric(r).clamp(0.0, 1.0))
        }
    }
}

/// Outage probability of a link at threshold `u_min` nats, with tie jittering.
pub fn outage_probability(link: &Link, u_min_nats: f64) -> Result<f64, ChannelError> {
    SinrModel::new(link, TieHandling::Jitter)?.outage(u_min_nats)
}

fn partial_fraction_coeffs(rates: &[f64]) -> Vec<f64> {
    rates
        .iter()
        .enumerate()
        .map(|(i, &bi)| {
            rates
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != i)
                .map(|(_, &bl)| bl / (bl - bi))
                .product()
        })
        .collect()
}
