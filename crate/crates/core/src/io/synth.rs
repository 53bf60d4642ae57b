//! Synthetic smart-meter load: a diurnal profile scaled per user with
//! multiplicative lognormal consumption noise.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{RngSeedPlan, SensorDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_days: usize,
    pub slots_per_day: usize,
    /// Mean reading per slot before profile and user scaling.
    pub base_load: f64,
    /// Multiplier per slot of the day; length `slots_per_day`.
    pub daily_profile: Vec<f64>,
    /// Log-scale spread of the per-user scale factor (mean one).
    pub user_scale_spread: f64,
    /// Coefficient of variation of the per-reading lognormal noise.
    pub noise_cv: f64,
    pub missing_rate: f64,
    pub zero_rate: f64,
}

impl SyntheticSpec {
    /// 500 users over 30 days of half-hourly readings.
    pub fn desk_scale() -> Self {
        Self::with_shape(500, 30, 48)
    }

    pub fn with_shape(n_users: usize, n_days: usize, slots_per_day: usize) -> Self {
        Self {
            n_users,
            n_days,
            slots_per_day,
            base_load: 0.4,
            daily_profile: default_profile(slots_per_day),
            user_scale_spread: 0.5,
            noise_cv: 0.35,
            missing_rate: 0.1,
            zero_rate: 0.005,
        }
    }

    pub fn cell_count(&self) -> u64 {
        full_shape_cell_count(self.n_users as u64, self.n_days as u64, self.slots_per_day as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.n_users == 0 || self.n_days == 0 || self.slots_per_day == 0 {
            return bad("users, days and slots per day must be positive");
        }
        if self.daily_profile.len() != self.slots_per_day {
            return bad("daily profile length must equal slots per day");
        }
        if self.daily_profile.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("daily profile multipliers must be non-negative");
        }
        if !(self.base_load.is_finite() && self.base_load > 0.0) {
            return bad("base load must be positive");
        }
        if !(self.user_scale_spread >= 0.0 && self.noise_cv >= 0.0)
            || !self.user_scale_spread.is_finite()
            || !self.noise_cv.is_finite()
        {
            return bad("spread and noise cv must be non-negative");
        }
        for (name, rate) in [("missing", self.missing_rate), ("zero", self.zero_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(&format!("{name} rate must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Users x days x slots, computed without materializing anything.
pub fn full_shape_cell_count(users: u64, days: u64, slots_per_day: u64) -> u64 {
    users * days * slots_per_day
}

/// Night base load with a morning bump around 07:30 and a larger evening
/// peak around 19:00, sampled at the centre of each slot.
pub fn default_profile(slots_per_day: usize) -> Vec<f64> {
    let bump = |h: f64, centre: f64, width: f64| (-0.5 * ((h - centre) / width).powi(2)).exp();
    (0..slots_per_day)
        .map(|t| {
            let h = (t as f64 + 0.5) * 24.0 / slots_per_day as f64;
            0.45 + 0.6 * bump(h, 7.5, 1.2) + 0.25 * bump(h, 13.0, 2.5) + 1.1 * bump(h, 19.0, 1.8)
        })
        .collect()
}

/// Generates the dataset. Each user draws from four independent streams
/// (scale, load, missingness, zeros), so changing one rate leaves the other
/// draws untouched.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SensorDataset> {
    spec.validate()?;
    let plan = RngSeedPlan::new(seed);
    let n_slots = spec.n_days * spec.slots_per_day;
    let sigma2 = (1.0 + spec.noise_cv * spec.noise_cv).ln();
    let (mu, sigma) = (-sigma2 / 2.0, sigma2.sqrt());
    let spread = spec.user_scale_spread;

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..spec.n_users)
        .into_par_iter()
        .map(|u| {
            let u = u as u64;
            let z: f64 = plan.rng("synthetic-scale", u, 0).sample(StandardNormal);
            let scale = (spread * z - spread * spread / 2.0).exp();
            let mut load = plan.rng("synthetic-load", u, 0);
            let mut missing_rng = plan.rng("synthetic-missing", u, 0);
            let mut zero_rng = plan.rng("synthetic-zero", u, 0);
            let mut values = Vec::with_capacity(n_slots);
            let mut missing = Vec::with_capacity(n_slots);
            for t in 0..n_slots {
                let z: f64 = load.sample(StandardNormal);
                let noise = (mu + sigma * z).exp();
                let mut v = (scale * spec.base_load * spec.daily_profile[t % spec.slots_per_day] * noise).max(0.0);
                if zero_rng.random::<f64>() < spec.zero_rate {
                    v = 0.0;
                }
                let m = missing_rng.random::<f64>() < spec.missing_rate;
                values.push(v);
                missing.push(m);
            }
            (values, missing)
        })
        .collect();

    let mut values = Vec::with_capacity(spec.n_users * n_slots);
    let mut missing = Vec::with_capacity(spec.n_users * n_slots);
    for (v, m) in rows {
        values.extend(v);
        missing.extend(m);
    }
    let ids = (0..spec.n_users).map(|u| format!("u{u}")).collect();
    SensorDataset::new(ids, n_slots, spec.slots_per_day, values, missing)
}
