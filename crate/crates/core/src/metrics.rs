//! Local and global error samples, the estimators applied to them, and the
//! privacy and utility objective functions.

use crate::error::{Error, Result};

/// Histogram bin width used by the entropy estimator.
pub const DEFAULT_BIN_WIDTH: f64 = 0.001;

/// Relative distortion `|(masked - x) / x|` of one reading.
#[inline]
pub fn relative_error(original: f64, masked: f64) -> f64 {
    ((masked - original) / original).abs()
}

/// Local errors of one masked slice. Zero-valued readings have no defined
/// relative error and are only counted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalErrorSample {
    pub errors: Vec<f64>,
    pub exclusions: usize,
}

pub fn local_errors(original: &[f64], masked: &[f64], missing: &[bool]) -> Result<LocalErrorSample> {
    if original.len() != masked.len() || original.len() != missing.len() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {} originals, {} masked, {} mask entries",
            original.len(),
            masked.len(),
            missing.len()
        )));
    }
    let mut sample = LocalErrorSample::default();
    for ((&x, &y), &m) in original.iter().zip(masked).zip(missing) {
        if m {
            continue;
        }
        if x == 0.0 {
            sample.exclusions += 1;
        } else {
            sample.errors.push(relative_error(x, y));
        }
    }
    Ok(sample)
}

/// Per-period relative errors of an aggregate. Periods whose true aggregate
/// is zero are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalErrorSample {
    pub errors: Vec<f64>,
    pub skipped: usize,
}

/// Global errors from already aggregated per-period sums.
pub fn global_errors_from_sums(true_sums: &[f64], masked_sums: &[f64]) -> Result<GlobalErrorSample> {
    if true_sums.len() != masked_sums.len() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {} true periods vs {} masked periods",
            true_sums.len(),
            masked_sums.len()
        )));
    }
    let mut sample = GlobalErrorSample::default();
    for (&s, &m) in true_sums.iter().zip(masked_sums) {
        if s == 0.0 {
            sample.skipped += 1;
        } else {
            sample.errors.push(relative_error(s, m));
        }
    }
    Ok(sample)
}

/// Period-wise sums over every user of `original` compared with the same sums
/// over `masked` (row-major, same shape as the dataset). Missing cells are
/// left out of both sums.
pub fn global_errors(original: &crate::SensorDataset, masked: &[f64]) -> Result<GlobalErrorSample> {
    let n_slots = original.n_slots();
    if masked.len() != original.n_users() * n_slots {
        return Err(Error::InvalidArgument(format!(
            "masked matrix has {} cells, dataset has {}",
            masked.len(),
            original.n_users() * n_slots
        )));
    }
    let spp = original.slots_per_period();
    let periods = original.n_periods();
    let mut true_sums = vec![0.0; periods];
    let mut masked_sums = vec![0.0; periods];
    for u in 0..original.n_users() {
        let values = original.values(u);
        let missing = original.missing(u);
        let row = &masked[u * n_slots..(u + 1) * n_slots];
        for t in 0..periods * spp {
            if !missing[t] {
                true_sums[t / spp] += values[t];
                masked_sums[t / spp] += row[t];
            }
        }
    }
    global_errors_from_sums(&true_sums, &masked_sums)
}

pub fn mean(sample: &[f64]) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    sample.iter().sum::<f64>() / sample.len() as f64
}

/// Population standard deviation.
pub fn std_dev(sample: &[f64]) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    let m = mean(sample);
    let var = sample.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / sample.len() as f64;
    var.sqrt()
}

/// Shannon entropy in nats of the histogram with bins `[k w, (k+1) w)`
/// anchored at zero.
pub fn shannon_entropy(sample: &[f64], bin_width: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("entropy of an empty sample".into()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let n = sample.len() as f64;
    let term = |count: usize| {
        let p = count as f64 / n;
        -p * p.ln()
    };

    let bins: Vec<i64> = sample.iter().map(|v| (v / bin_width).floor() as i64).collect();
    let lo = *bins.iter().min().expect("non-empty");
    let hi = *bins.iter().max().expect("non-empty");
    let span = (hi - lo) as u64;

    // Dense counting when the occupied range is modest, sorting otherwise.
    // Both visit the bins in ascending order so the sum is identical.
    let h = if span <= (sample.len() as u64 * 4).max(1 << 16) {
        let mut counts = vec![0usize; span as usize + 1];
        for b in &bins {
            counts[(b - lo) as usize] += 1;
        }
        counts.into_iter().filter(|&c| c > 0).map(term).sum::<f64>()
    } else {
        let mut bins = bins;
        bins.sort_unstable();
        bins.chunk_by(|a, b| a == b).map(|run| term(run.len())).sum::<f64>()
    };
    Ok(h.max(0.0))
}

/// Percentile of an ascending slice using linear interpolation between the
/// closest ranks: rank `q / 100 * (n - 1)`, zero based.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q.clamp(0.0, 100.0) / 100.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn percentile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    Ok(percentile_sorted(&sorted(sample), q))
}

pub fn median(sample: &[f64]) -> Result<f64> {
    percentile(sample, 50.0)
}

/// Interquartile range, 75th minus 25th percentile.
pub fn iqr(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("IQR of an empty sample".into()));
    }
    let s = sorted(sample);
    Ok(percentile_sorted(&s, 75.0) - percentile_sorted(&s, 25.0))
}

pub(crate) fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mean, standard deviation and entropy of an error sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub entropy: f64,
}

impl ErrorStats {
    pub const ZERO: ErrorStats = ErrorStats {
        mean: 0.0,
        std: 0.0,
        entropy: 0.0,
    };

    /// Statistics of `errors`; an empty sample yields all zeros.
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::ZERO;
        }
        Self {
            mean: mean(errors),
            std: std_dev(errors),
            entropy: shannon_entropy(errors, DEFAULT_BIN_WIDTH).expect("non-empty sample"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.std.is_finite() && self.entropy.is_finite()
    }
}

/// Weights of the privacy (`alpha`) and utility (`gamma`) objectives, applied
/// to (mean, std, entropy) in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    alpha: [f64; 3],
    gamma: [f64; 3],
}

impl ObjectiveWeights {
    pub fn new(alpha: [f64; 3], gamma: [f64; 3]) -> Result<Self> {
        for (name, w) in [("alpha", alpha), ("gamma", gamma)] {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} weights must be >= 0, got {w:?}"
                )));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{name} weights must sum to 1, got {w:?}"
                )));
            }
        }
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> [f64; 3] {
        self.alpha
    }

    pub fn gamma(&self) -> [f64; 3] {
        self.gamma
    }
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha: [0.2, 0.4, 0.4],
            gamma: [0.6, 0.2, 0.2],
        }
    }
}

/// Largest observed value of each statistic, used to normalise scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationConstants {
    pub max_mean_l: f64,
    pub max_std_l: f64,
    pub max_entropy_l: f64,
    pub max_mean_e: f64,
    pub max_std_e: f64,
    pub max_entropy_e: f64,
}

impl NormalizationConstants {
    pub fn new(values: [f64; 6]) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "normalization constants must be positive and finite, got {values:?}"
            )));
        }
        let [max_mean_l, max_std_l, max_entropy_l, max_mean_e, max_std_e, max_entropy_e] = values;
        Ok(Self {
            max_mean_l,
            max_std_l,
            max_entropy_l,
            max_mean_e,
            max_std_e,
            max_entropy_e,
        })
    }

    /// Component-wise maxima over `(local, global)` stat pairs. A maximum of
    /// zero (every run unmasked) becomes 1 so the normalised component is 0.
    pub fn from_maxima<'a>(stats: impl IntoIterator<Item = (&'a ErrorStats, &'a ErrorStats)>) -> Option<Self> {
        let mut m = [0.0f64; 6];
        let mut any = false;
        for (l, g) in stats {
            any = true;
            for (slot, v) in m.iter_mut().zip([l.mean, l.std, l.entropy, g.mean, g.std, g.entropy]) {
                *slot = slot.max(v);
            }
        }
        if !any {
            return None;
        }
        for v in &mut m {
            if *v <= 0.0 {
                *v = 1.0;
            }
        }
        Self::new(m).ok()
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.max_mean_l,
            self.max_std_l,
            self.max_entropy_l,
            self.max_mean_e,
            self.max_std_e,
            self.max_entropy_e,
        ]
    }
}

fn weighted(w: [f64; 3], stats: &ErrorStats, max: [f64; 3]) -> f64 {
    let comps = [stats.mean, stats.std, stats.entropy];
    (0..3).map(|i| w[i] * (comps[i] / max[i]).clamp(0.0, 1.0)).sum()
}

/// Privacy of a run from its local-error statistics, in [0, 1].
pub fn privacy_score(local: &ErrorStats, w: &ObjectiveWeights, norm: &NormalizationConstants) -> f64 {
    let max = [norm.max_mean_l, norm.max_std_l, norm.max_entropy_l];
    weighted(w.alpha, local, max).clamp(0.0, 1.0)
}

/// Utility of a run from its global-error statistics, in [0, 1].
pub fn utility_score(global: &ErrorStats, w: &ObjectiveWeights, norm: &NormalizationConstants) -> f64 {
    let max = [norm.max_mean_e, norm.max_std_e, norm.max_entropy_e];
    (1.0 - weighted(w.gamma, global, max)).clamp(0.0, 1.0)
}

/// Lag-`k` autocorrelation for `k = 1..=max_lag`, computed as the Pearson
/// correlation between the series and its `k`-shifted copy.
pub fn noise_autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 || series.len() <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= max_lag < series length (lag {max_lag}, length {})",
            series.len()
        )));
    }
    (1..=max_lag)
        .map(|k| {
            let a = &series[..series.len() - k];
            let b = &series[k..];
            let (ma, mb) = (mean(a), mean(b));
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for (x, y) in a.iter().zip(b) {
                cov += (x - ma) * (y - mb);
                va += (x - ma) * (x - ma);
                vb += (y - mb) * (y - mb);
            }
            if va == 0.0 || vb == 0.0 {
                return Err(Error::Undefined(format!(
                    "autocorrelation at lag {k} of a constant series"
                )));
            }
            Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
        })
        .collect()
}
