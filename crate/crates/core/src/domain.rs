//! Domain types shared by every stage: the sensor dataset, privacy settings
//! and the seed plan that makes all stochastic masking reproducible.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Random stream used for all masking and sampling. ChaCha output is fixed
/// by its seed on every platform.
pub type NoiseRng = ChaCha8Rng;

/// User x time matrix of non-negative readings with a missing-value mask.
///
/// Slots are the finest sampling interval. `slots_per_period` groups slots
/// into aggregation periods (48 half-hour slots per day by default); a
/// trailing partial period is kept for local errors but never aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDataset {
    user_ids: Vec<String>,
    n_slots: usize,
    slots_per_period: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl SensorDataset {
    /// Builds a dataset from row-major `values`/`missing` of shape
    /// `user_ids.len() x n_slots`. Missing cells are stored as `0.0`.
    pub fn new(
        user_ids: Vec<String>,
        n_slots: usize,
        slots_per_period: usize,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        if user_ids.is_empty() {
            return Err(Error::InvalidDataset("at least one user is required".into()));
        }
        if n_slots == 0 {
            return Err(Error::InvalidDataset("at least one time slot is required".into()));
        }
        if slots_per_period == 0 {
            return Err(Error::InvalidDataset("slots_per_period must be positive".into()));
        }
        let cells = user_ids.len() * n_slots;
        if values.len() != cells || missing.len() != cells {
            return Err(Error::InvalidDataset(format!(
                "expected {cells} cells, got {} values and {} mask entries",
                values.len(),
                missing.len()
            )));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&missing).enumerate() {
            if m {
                *v = 0.0;
            } else if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "reading {v} for user {} slot {} is not a finite non-negative value",
                    user_ids[i / n_slots],
                    i % n_slots
                )));
            }
        }
        Ok(Self {
            user_ids,
            n_slots,
            slots_per_period,
            values,
            missing,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn slots_per_period(&self) -> usize {
        self.slots_per_period
    }

    /// Number of complete aggregation periods.
    pub fn n_periods(&self) -> usize {
        self.n_slots / self.slots_per_period
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    /// Readings of one user; missing cells hold `0.0`.
    pub fn values(&self, user: usize) -> &[f64] {
        &self.values[user * self.n_slots..(user + 1) * self.n_slots]
    }

    pub fn missing(&self, user: usize) -> &[bool] {
        &self.missing[user * self.n_slots..(user + 1) * self.n_slots]
    }

    pub fn value(&self, user: usize, slot: usize) -> Option<f64> {
        let i = user * self.n_slots + slot;
        (!self.missing[i]).then_some(self.values[i])
    }

    pub fn non_missing_cells(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    /// Copy restricted to the given users, in the given order.
    pub fn select_users(&self, users: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(users.len());
        let mut values = Vec::with_capacity(users.len() * self.n_slots);
        let mut missing = Vec::with_capacity(users.len() * self.n_slots);
        for &u in users {
            if u >= self.n_users() {
                return Err(Error::InvalidArgument(format!("user index {u} out of range")));
            }
            ids.push(self.user_ids[u].clone());
            values.extend_from_slice(self.values(u));
            missing.extend_from_slice(self.missing(u));
        }
        Self::new(ids, self.n_slots, self.slots_per_period, values, missing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Laplace,
    SinePolyonym,
    NoMask,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Laplace => "laplace",
            Mechanism::SinePolyonym => "sine_polyonym",
            Mechanism::NoMask => "nomask",
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Mechanism::Laplace => "lap",
            Mechanism::SinePolyonym => "sin",
            Mechanism::NoMask => "nomask",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Mechanism::Laplace),
            "sine_polyonym" | "sine" => Ok(Mechanism::SinePolyonym),
            "nomask" => Ok(Mechanism::NoMask),
            other => Err(Error::InvalidSetting(format!("unknown mechanism '{other}'"))),
        }
    }
}

/// A masking mechanism together with its parameter vector.
///
/// Laplace carries the scale `b`; the sine polyonym carries coefficients
/// `theta_0..theta_{n-1}` where coefficient `k` multiplies the sine inside the
/// power `2k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySetting {
    mechanism: Mechanism,
    params: Vec<f64>,
    id: String,
}

impl PrivacySetting {
    pub fn laplace(scale: f64) -> Result<Self> {
        Self::new(Mechanism::Laplace, vec![scale])
    }

    pub fn sine_polyonym(theta: Vec<f64>) -> Result<Self> {
        Self::new(Mechanism::SinePolyonym, theta)
    }

    pub fn no_mask() -> Self {
        Self {
            mechanism: Mechanism::NoMask,
            params: Vec::new(),
            id: Mechanism::NoMask.id_prefix().to_string(),
        }
    }

    /// Validates the parameters and assigns the canonical id
    /// (`nomask`, `lap-<b>`, `sin-<t0>-<t1>-...`).
    pub fn new(mechanism: Mechanism, params: Vec<f64>) -> Result<Self> {
        let id = canonical_id(mechanism, &params);
        Self::with_id(mechanism, params, id)
    }

    /// Like [`PrivacySetting::new`] but keeps a caller-chosen id, as used by
    /// custom grids.
    pub fn with_id(mechanism: Mechanism, params: Vec<f64>, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(',') || id.contains('\n') {
            return Err(Error::InvalidSetting(format!("invalid setting id '{id}'")));
        }
        match mechanism {
            Mechanism::Laplace => {
                if params.len() != 1 || !params[0].is_finite() || params[0] <= 0.0 {
                    return Err(Error::InvalidSetting(format!(
                        "laplace needs exactly one positive finite scale, got {params:?}"
                    )));
                }
            }
            Mechanism::SinePolyonym => {
                if params.is_empty() || params.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(Error::InvalidSetting(format!(
                        "sine polyonym needs one or more non-negative coefficients, got {params:?}"
                    )));
                }
            }
            Mechanism::NoMask => {
                if !params.is_empty() {
                    return Err(Error::InvalidSetting("nomask takes no parameters".into()));
                }
            }
        }
        Ok(Self { mechanism, params, id })
    }

    /// Parses a canonical id back into a setting.
    pub fn parse_id(id: &str) -> Result<Self> {
        if id == "nomask" {
            return Ok(Self::no_mask());
        }
        let (prefix, rest) = id
            .split_once('-')
            .ok_or_else(|| Error::InvalidSetting(format!("unrecognised setting id '{id}'")))?;
        let mechanism = match prefix {
            "lap" => Mechanism::Laplace,
            "sin" => Mechanism::SinePolyonym,
            _ => return Err(Error::InvalidSetting(format!("unrecognised setting id '{id}'"))),
        };
        let params = rest
            .split('-')
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidSetting(format!("bad parameter '{p}' in id '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_id(mechanism, params, id)
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

fn canonical_id(mechanism: Mechanism, params: &[f64]) -> String {
    let mut id = mechanism.id_prefix().to_string();
    for p in params {
        id.push('-');
        id.push_str(&p.to_string());
    }
    id
}

/// Rounds to 12 significant digits so that grid values built by repeated
/// addition print as their decimal intent (0.003, not 0.0030000000000000005).
pub fn clean_real(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

/// Master seed of a run. Child seeds are derived per
/// (setting, subset or user, repetition) with [`derive_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeedPlan {
    pub master_seed: u64,
}

impl RngSeedPlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn derive(&self, key: &str, index: u64, repetition: u64) -> u64 {
        derive_seed(self, key, index, repetition)
    }

    pub fn rng(&self, key: &str, index: u64, repetition: u64) -> NoiseRng {
        NoiseRng::seed_from_u64(self.derive(key, index, repetition))
    }
}

/// Stable child seed: the first 8 bytes (little endian) of
/// SHA-256("tradeoff-seed-v1" | master | len(key) | key | index | repetition),
/// all integers encoded as little-endian u64.
pub fn derive_seed(plan: &RngSeedPlan, setting_id: &str, subset_idx: u64, rep_idx: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"tradeoff-seed-v1");
    hasher.update(plan.master_seed.to_le_bytes());
    hasher.update((setting_id.len() as u64).to_le_bytes());
    hasher.update(setting_id.as_bytes());
    hasher.update(subset_idx.to_le_bytes());
    hasher.update(rep_idx.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derive_seed_is_deterministic() {
        let plan = RngSeedPlan::new(7);
        assert_eq!(
            derive_seed(&plan, "lap-0.005", 0, 0),
            derive_seed(&plan, "lap-0.005", 0, 0)
        );
    }

    #[test]
    fn derive_seed_separates_repetitions_and_masters() {
        let plan = RngSeedPlan::new(7);
        assert_ne!(
            derive_seed(&plan, "lap-0.005", 0, 0),
            derive_seed(&plan, "lap-0.005", 0, 1)
        );
        assert_ne!(
            derive_seed(&RngSeedPlan::new(7), "A", 0, 0),
            derive_seed(&RngSeedPlan::new(8), "A", 0, 0)
        );
    }

    #[test]
    fn derive_seed_is_length_prefixed() {
        // "ab" + index vs "a" + different bytes must not collide by concatenation
        let plan = RngSeedPlan::new(1);
        assert_ne!(derive_seed(&plan, "ab", 0, 0), derive_seed(&plan, "a", 0, 0));
    }

    #[test]
    fn dataset_rejects_negative_reading() {
        let err = SensorDataset::new(vec!["u".into()], 2, 1, vec![1.0, -0.5], vec![false, false]);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn dataset_accepts_negative_in_missing_cell() {
        let ds = SensorDataset::new(vec!["u".into()], 2, 1, vec![1.0, -0.5], vec![false, true]).unwrap();
        assert_eq!(ds.value(0, 1), None);
        assert_eq!(ds.values(0), &[1.0, 0.0]);
    }

    #[test]
    fn trailing_partial_period_is_not_counted() {
        let ds = SensorDataset::new(vec!["u".into()], 5, 2, vec![1.0; 5], vec![false; 5]).unwrap();
        assert_eq!(ds.n_periods(), 2);
    }

    #[test]
    fn setting_invariants() {
        assert!(PrivacySetting::laplace(0.0).is_err());
        assert!(PrivacySetting::laplace(-1.0).is_err());
        assert!(PrivacySetting::sine_polyonym(vec![]).is_err());
        assert!(PrivacySetting::sine_polyonym(vec![0.1, -0.1]).is_err());
        assert!(PrivacySetting::new(Mechanism::NoMask, vec![1.0]).is_err());
        assert_eq!(PrivacySetting::laplace(0.005).unwrap().id(), "lap-0.005");
        assert_eq!(
            PrivacySetting::sine_polyonym(vec![0.0, 0.03, 1.8]).unwrap().id(),
            "sin-0-0.03-1.8"
        );
    }

    #[test]
    fn clean_real_strips_accumulation_error() {
        assert_eq!(clean_real(0.001 + 0.002).to_string(), "0.003");
        assert_eq!(clean_real(1e-15), 1e-15);
    }

    proptest! {
        #[test]
        fn setting_ids_parse_back(b in 1e-6f64..100.0, theta in proptest::collection::vec(0.0f64..2.0, 1..6)) {
            let lap = PrivacySetting::laplace(b).unwrap();
            prop_assert_eq!(PrivacySetting::parse_id(lap.id()).unwrap(), lap);
            let sin = PrivacySetting::sine_polyonym(theta).unwrap();
            prop_assert_eq!(PrivacySetting::parse_id(sin.id()).unwrap(), sin);
        }
    }
}
