//! Additive-noise masking mechanisms and the grid searches that generate
//! their privacy settings.

use std::collections::HashSet;

use rand::Rng;

use crate::domain::{clean_real, Mechanism, PrivacySetting};
use crate::error::{Error, Result};

/// Draws Laplace(0, `scale`) noise by inverting the CDF:
/// `w = -b * sign(v) * ln(1 - 2|v|)` with `v` uniform on (-0.5, 0.5).
pub fn laplace_noise<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let v = rng.random::<f64>() - 0.5;
        // v = -0.5 maps to ln(0); the open interval excludes it.
        if v > -0.5 {
            return -scale * v.signum() * (1.0 - 2.0 * v.abs()).ln();
        }
    }
}

/// `sin(2 * pi * r)` for `r` in [0, 1), folded so that the second half-period
/// is the exact negation of the first. `r = 0.5` gives exactly zero.
fn sin_two_pi(r: f64) -> f64 {
    if r >= 0.5 {
        -(std::f64::consts::TAU * (r - 0.5)).sin()
    } else {
        (std::f64::consts::TAU * r).sin()
    }
}

/// Sine-polyonym noise for a given uniform draw `r`:
/// `sum_k (theta_k * sin(2 pi r))^(2k + 1)`.
pub fn sine_polyonym_at(theta: &[f64], r: f64) -> f64 {
    let s = sin_two_pi(r);
    theta
        .iter()
        .enumerate()
        .map(|(k, t)| (t * s).powi(2 * k as i32 + 1))
        .sum()
}

/// One shared uniform draw per value, fed through every polyonym term.
pub fn sine_polyonym_noise<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> f64 {
    let r: f64 = rng.random();
    sine_polyonym_at(theta, r)
}

pub fn noise<R: Rng + ?Sized>(setting: &PrivacySetting, rng: &mut R) -> f64 {
    match setting.mechanism() {
        Mechanism::Laplace => laplace_noise(setting.params()[0], rng),
        Mechanism::SinePolyonym => sine_polyonym_noise(setting.params(), rng),
        Mechanism::NoMask => 0.0,
    }
}

/// Masked value `x + w`. `NoMask` returns `x` untouched and draws nothing.
pub fn mask_value<R: Rng + ?Sized>(setting: &PrivacySetting, x: f64, rng: &mut R) -> f64 {
    match setting.mechanism() {
        Mechanism::NoMask => x,
        _ => x + noise(setting, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridProvenance {
    LaplaceSweep,
    SineSweep,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombinationMode {
    /// Each multiset of coefficient values once, sorted ascending.
    #[default]
    Multiset,
    /// Every ordered tuple.
    CartesianProduct,
}

/// Ordered, duplicate-free list of privacy settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingGrid {
    settings: Vec<PrivacySetting>,
    provenance: GridProvenance,
}

impl SettingGrid {
    pub fn new(settings: Vec<PrivacySetting>, provenance: GridProvenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(settings.len());
        for s in &settings {
            if !seen.insert(s.id()) {
                return Err(Error::InvalidSetting(format!("duplicate setting id '{}'", s.id())));
            }
        }
        Ok(Self { settings, provenance })
    }

    pub fn settings(&self) -> &[PrivacySetting] {
        &self.settings
    }

    pub fn into_settings(self) -> Vec<PrivacySetting> {
        self.settings
    }

    pub fn provenance(&self) -> GridProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PrivacySetting> {
        self.settings.iter().find(|s| s.id() == id)
    }
}

pub const DEFAULT_LAPLACE_START: f64 = 0.001;
pub const DEFAULT_LAPLACE_STEP: f64 = 0.001;
pub const DEFAULT_LAPLACE_END: f64 = 10.0;

/// Laplace scales `start, start + step, ...` up to and including `end`
/// (endpoint tolerance 1e-12, relative for ends above 1).
pub fn generate_laplace_grid(start: f64, step: f64, end: f64) -> Result<SettingGrid> {
    if !(start.is_finite() && step.is_finite() && end.is_finite()) || start <= 0.0 || start > end || step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "laplace grid needs 0 < start <= end and step > 0 (got {start}, {step}, {end})"
        )));
    }
    let limit = end + 1e-12 * end.abs().max(1.0);
    let mut settings = Vec::new();
    let mut k = 0u64;
    loop {
        let b = start + k as f64 * step;
        if b > limit {
            break;
        }
        settings.push(PrivacySetting::laplace(clean_real(b))?);
        k += 1;
    }
    SettingGrid::new(settings, GridProvenance::LaplaceSweep)
}

/// `{0} ∪ {0.03, 0.06, ..., 0.30} ∪ {0.6, 0.9, ..., 1.8}`: 16 values.
pub fn default_sine_values() -> Vec<f64> {
    let mut values = vec![0.0];
    values.extend((1..=10).map(|k| clean_real(0.03 * k as f64)));
    values.extend((2..=6).map(|k| clean_real(0.3 * k as f64)));
    values
}

pub const DEFAULT_SINE_COEFFS: usize = 5;

/// Sine-polyonym grid over `values` for `n_coeffs` coefficients. Values are
/// sorted and deduplicated first.
pub fn generate_sine_grid(values: &[f64], n_coeffs: usize, mode: CombinationMode) -> Result<SettingGrid> {
    if values.is_empty() || n_coeffs == 0 {
        return Err(Error::InvalidArgument(
            "sine grid needs a non-empty value set and at least one coefficient".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "sine grid values must be finite and >= 0".into(),
        ));
    }
    let mut values: Vec<f64> = values.iter().map(|v| clean_real(*v)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();

    let n = values.len();
    let mut settings = Vec::new();
    let mut idx = vec![0usize; n_coeffs];
    loop {
        let theta = idx.iter().map(|&i| values[i]).collect();
        settings.push(PrivacySetting::sine_polyonym(theta)?);

        // odometer increment; in multiset mode every digit restarts at the one
        // to its left so tuples stay non-decreasing
        let mut pos = n_coeffs;
        loop {
            if pos == 0 {
                return SettingGrid::new(settings, GridProvenance::SineSweep);
            }
            pos -= 1;
            if idx[pos] + 1 < n {
                idx[pos] += 1;
                let reset = match mode {
                    CombinationMode::Multiset => idx[pos],
                    CombinationMode::CartesianProduct => 0,
                };
                for slot in idx.iter_mut().skip(pos + 1) {
                    *slot = reset;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RngSeedPlan;
    use proptest::prelude::*;

    fn rng() -> crate::NoiseRng {
        RngSeedPlan::new(7).rng("mechanism-tests", 0, 0)
    }

    #[test]
    fn nomask_is_identity() {
        let mut r = rng();
        assert_eq!(mask_value(&PrivacySetting::no_mask(), 3.2, &mut r), 3.2);
    }

    #[test]
    fn zero_coefficients_give_zero_noise() {
        let s = PrivacySetting::sine_polyonym(vec![0.0; 5]).unwrap();
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(mask_value(&s, 1.7, &mut r), 1.7);
        }
    }

    #[test]
    fn sine_linear_term_at_quarter_period() {
        let v = sine_polyonym_at(&[0.18, 0.0, 0.0, 0.0, 0.0], 0.25);
        assert!((v - 0.18).abs() < 1e-15, "{v}");
    }

    #[test]
    fn sine_vanishes_at_half_period() {
        assert_eq!(sine_polyonym_at(&[0.3, 0.6, 1.8, 0.9, 1.2], 0.5), 0.0);
        assert_eq!(sine_polyonym_at(&[0.3, 0.6, 1.8, 0.9, 1.2], 0.0), 0.0);
    }

    #[test]
    fn sine_uses_odd_powers() {
        // sin(2 pi * 0.25) = 1, so the terms are 0.5^1 + 0.5^3 + 0.5^5
        let v = sine_polyonym_at(&[0.5, 0.5, 0.5], 0.25);
        assert!((v - (0.5 + 0.125 + 0.03125)).abs() < 1e-15);
    }

    #[test]
    fn laplace_small_scale_is_tightly_bounded() {
        // P(|w| > 0.06) = exp(-0.06 / 0.005) = exp(-12) ~ 6e-6
        let s = PrivacySetting::laplace(0.005).unwrap();
        let mut r = rng();
        let n = 20_000;
        let outside = (0..n)
            .filter(|_| (mask_value(&s, 1.0, &mut r) - 1.0).abs() >= 0.06)
            .count();
        assert!(outside <= 2, "{outside} draws outside the bound");
    }

    #[test]
    fn laplace_scale_family() {
        let quartile = |b: f64| {
            let mut r = rng();
            let mut v: Vec<f64> = (0..20_000).map(|_| laplace_noise(b, &mut r).abs()).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() * 3 / 4]
        };
        // same stream, so the quartiles scale exactly up to rounding
        let ratio = quartile(10.0) / quartile(0.001);
        assert!((ratio - 1e4).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn laplace_grid_defaults() {
        let g = generate_laplace_grid(DEFAULT_LAPLACE_START, DEFAULT_LAPLACE_STEP, DEFAULT_LAPLACE_END).unwrap();
        assert_eq!(g.len(), 10_000);
        assert_eq!(g.settings()[0].params(), &[0.001]);
        assert_eq!(g.settings()[2].id(), "lap-0.003");
        assert_eq!(g.settings()[9_999].params(), &[10.0]);
    }

    #[test]
    fn laplace_grid_endpoints() {
        let ids = |g: SettingGrid| g.settings().iter().map(|s| s.params()[0]).collect::<Vec<_>>();
        assert_eq!(ids(generate_laplace_grid(1.0, 1.0, 3.0).unwrap()), vec![1.0, 2.0, 3.0]);
        assert_eq!(ids(generate_laplace_grid(0.5, 0.2, 1.0).unwrap()), vec![0.5, 0.7, 0.9]);
        assert_eq!(generate_laplace_grid(0.001, 0.001, 0.01).unwrap().len(), 10);
    }

    #[test]
    fn laplace_grid_rejects_bad_bounds() {
        assert!(generate_laplace_grid(0.0, 0.1, 1.0).is_err());
        assert!(generate_laplace_grid(2.0, 0.1, 1.0).is_err());
        assert!(generate_laplace_grid(0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn default_sine_values_has_sixteen() {
        let v = default_sine_values();
        assert_eq!(v.len(), 16);
        assert_eq!(v[10], 0.3);
        assert_eq!(v[15], 1.8);
    }

    #[test]
    fn sine_grid_counts() {
        // stars and bars: C(16 + 5 - 1, 5) = C(20, 5)
        let g = generate_sine_grid(&default_sine_values(), 5, CombinationMode::Multiset).unwrap();
        assert_eq!(g.len(), 15_504);

        let g = generate_sine_grid(&[0.0, 1.0], 2, CombinationMode::Multiset).unwrap();
        let thetas: Vec<_> = g.settings().iter().map(|s| s.params().to_vec()).collect();
        assert_eq!(thetas, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);

        let g = generate_sine_grid(&[0.0, 1.0], 2, CombinationMode::CartesianProduct).unwrap();
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn sine_grid_deduplicates_values() {
        let g = generate_sine_grid(&[0.3, 0.3, 0.1], 1, CombinationMode::Multiset).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = PrivacySetting::laplace(1.0).unwrap();
        assert!(SettingGrid::new(vec![s.clone(), s], GridProvenance::Custom).is_err());
    }

    proptest! {
        #[test]
        fn sine_noise_is_antisymmetric(theta in proptest::collection::vec(0.0f64..1.8, 1..6), k in 0u32..(1 << 20)) {
            // dyadic r keeps r + 0.5 exact
            let r = k as f64 / (1u64 << 21) as f64;
            let a = sine_polyonym_at(&theta, r);
            let b = sine_polyonym_at(&theta, r + 0.5);
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn sine_grids_are_duplicate_free(values in proptest::collection::vec(0.0f64..2.0, 1..5), n in 1usize..4) {
            for mode in [CombinationMode::Multiset, CombinationMode::CartesianProduct] {
                let a = generate_sine_grid(&values, n, mode).unwrap();
                let b = generate_sine_grid(&values, n, mode).unwrap();
                prop_assert_eq!(&a, &b);
            }
        }
    }
}
