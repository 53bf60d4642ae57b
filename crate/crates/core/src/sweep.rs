//! Evaluation harness: subset schedules, repeated maskings of a dataset and
//! the per-setting privacy/utility samples built from them.
//!
//! Noise for user `u` in repetition `r` under setting `s` always comes from
//! the stream `derive_seed(plan, s.id, u, r)`, whatever subset the user is
//! part of. A homogeneous run over the full user set is therefore the same
//! computation as a heterogeneous run where every user picked `s`.

use std::collections::BTreeMap;
use std::ops::Range;

use log::warn;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::domain::{NoiseRng, PrivacySetting, RngSeedPlan, SensorDataset};
use crate::error::{Error, Result};
use crate::mechanisms::mask_value;
use crate::metrics::{
    global_errors_from_sums, privacy_score, relative_error, utility_score, ErrorStats, GlobalErrorSample,
    NormalizationConstants, ObjectiveWeights,
};

/// Subset sizes to evaluate and how many random subsets to draw per size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSchedule {
    sizes: Vec<usize>,
    repetitions_per_size: usize,
}

impl SubsetSchedule {
    pub fn new(sizes: Vec<usize>, repetitions_per_size: usize) -> Result<Self> {
        if sizes.is_empty() || sizes[0] == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs at least one positive size".into(),
            ));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "schedule sizes must be strictly increasing: {sizes:?}"
            )));
        }
        if repetitions_per_size == 0 {
            return Err(Error::InvalidArgument("repetitions_per_size must be >= 1".into()));
        }
        Ok(Self {
            sizes,
            repetitions_per_size,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn repetitions_per_size(&self) -> usize {
        self.repetitions_per_size
    }
}

/// 50, 100, ..., 500, then 1000, 1500, ... below `total_users`, then
/// `total_users`; sizes above the user count are dropped.
pub fn default_schedule(total_users: usize) -> SubsetSchedule {
    let total = total_users.max(1);
    let mut sizes: Vec<usize> = (1..=10).map(|k| 50 * k).filter(|&s| s < total).collect();
    sizes.extend((2..).map(|k| 500 * k).take_while(|&s| s < total));
    sizes.push(total);
    SubsetSchedule::new(sizes, 1).expect("sizes are increasing")
}

/// Statistics of one (setting, subset, repetition) masking run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub setting: PrivacySetting,
    pub subset_size: usize,
    pub subset_index: usize,
    pub repetition: usize,
    pub local_stats: ErrorStats,
    pub global_stats: ErrorStats,
    pub exclusions: usize,
    /// Seed of the user-subset draw.
    pub seed: u64,
}

impl EvaluationRecord {
    pub fn setting_id(&self) -> &str {
        self.setting.id()
    }

    /// Resume key: (setting, size, subset draw, repetition).
    pub fn key(&self) -> (String, usize, usize, usize) {
        (
            self.setting.id().to_string(),
            self.subset_size,
            self.subset_index,
            self.repetition,
        )
    }
}

/// Everything one masking pass over a set of users produces.
#[derive(Debug, Clone)]
pub struct MaskedRun {
    /// Local errors of all users, concatenated in user order.
    pub local_errors: Vec<f64>,
    /// Slice of `local_errors` belonging to each user, in input order.
    pub user_ranges: Vec<Range<usize>>,
    pub exclusions: usize,
    pub global: GlobalErrorSample,
    pub true_sums: Vec<f64>,
    pub masked_sums: Vec<f64>,
}

impl MaskedRun {
    pub fn local_stats(&self) -> ErrorStats {
        ErrorStats::from_errors(&self.local_errors)
    }

    pub fn global_stats(&self) -> ErrorStats {
        ErrorStats::from_errors(&self.global.errors)
    }

    pub fn user_errors(&self, position: usize) -> &[f64] {
        &self.local_errors[self.user_ranges[position].clone()]
    }
}

struct UserPass {
    errors: Vec<f64>,
    exclusions: usize,
    true_sums: Vec<f64>,
    masked_sums: Vec<f64>,
}

fn mask_user(
    dataset: &SensorDataset,
    user: usize,
    setting: &PrivacySetting,
    plan: &RngSeedPlan,
    rep: usize,
) -> UserPass {
    let mut rng = NoiseRng::seed_from_u64(plan.derive(setting.id(), user as u64, rep as u64));
    let spp = dataset.slots_per_period();
    let aggregated = dataset.n_periods() * spp;
    let values = dataset.values(user);
    let missing = dataset.missing(user);
    let mut pass = UserPass {
        errors: Vec::with_capacity(values.len()),
        exclusions: 0,
        true_sums: vec![0.0; dataset.n_periods()],
        masked_sums: vec![0.0; dataset.n_periods()],
    };
    for (t, (&x, &m)) in values.iter().zip(missing).enumerate() {
        if m {
            continue;
        }
        let y = mask_value(setting, x, &mut rng);
        if x == 0.0 {
            pass.exclusions += 1;
        } else {
            pass.errors.push(relative_error(x, y));
        }
        if t < aggregated {
            pass.true_sums[t / spp] += x;
            pass.masked_sums[t / spp] += y;
        }
    }
    pass
}

/// Masks every non-missing reading of `users`, each with the setting
/// `setting_of(user)`, and aggregates period sums over those users.
/// Per-user results are combined in input order, so the output does not
/// depend on the thread count.
pub fn mask_run<'a, F>(
    dataset: &SensorDataset,
    users: &[usize],
    setting_of: F,
    plan: &RngSeedPlan,
    rep: usize,
) -> MaskedRun
where
    F: Fn(usize) -> &'a PrivacySetting + Sync,
{
    let passes: Vec<UserPass> = users
        .par_iter()
        .map(|&u| mask_user(dataset, u, setting_of(u), plan, rep))
        .collect();

    let periods = dataset.n_periods();
    let mut run = MaskedRun {
        local_errors: Vec::with_capacity(passes.iter().map(|p| p.errors.len()).sum()),
        user_ranges: Vec::with_capacity(users.len()),
        exclusions: 0,
        global: GlobalErrorSample::default(),
        true_sums: vec![0.0; periods],
        masked_sums: vec![0.0; periods],
    };
    for pass in passes {
        let start = run.local_errors.len();
        run.local_errors.extend_from_slice(&pass.errors);
        run.user_ranges.push(start..run.local_errors.len());
        run.exclusions += pass.exclusions;
        for p in 0..periods {
            run.true_sums[p] += pass.true_sums[p];
            run.masked_sums[p] += pass.masked_sums[p];
        }
    }
    run.global = global_errors_from_sums(&run.true_sums, &run.masked_sums).expect("equal lengths");
    run
}

fn subset_seed(plan: &RngSeedPlan, size: usize, draw: usize, rep: usize) -> u64 {
    plan.derive(&format!("subset-{size}"), draw as u64, rep as u64)
}

/// Uniform draw of `size` users without replacement, returned ascending.
/// The draw depends only on (size, draw, repetition), so every setting sees
/// the same subsets.
pub fn draw_subset(n_users: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n_users {
        return (0..n_users).collect();
    }
    let mut rng = NoiseRng::seed_from_u64(seed);
    let mut users = rand::seq::index::sample(&mut rng, n_users, size).into_vec();
    users.sort_unstable();
    users
}

/// One masking run per (size, subset draw, repetition) of `schedule`.
pub fn evaluate_setting(
    setting: &PrivacySetting,
    dataset: &SensorDataset,
    schedule: &SubsetSchedule,
    reps: usize,
    plan: &RngSeedPlan,
) -> Vec<EvaluationRecord> {
    let mut records = Vec::new();
    for &size in schedule.sizes() {
        if size > dataset.n_users() {
            warn!("skipping subset size {size}: dataset has {} users", dataset.n_users());
            continue;
        }
        for draw in 0..schedule.repetitions_per_size() {
            for rep in 0..reps {
                records.push(evaluate_cell(setting, dataset, size, draw, rep, plan));
            }
        }
    }
    records
}

/// The record for a single (size, draw, repetition) cell.
pub fn evaluate_cell(
    setting: &PrivacySetting,
    dataset: &SensorDataset,
    size: usize,
    draw: usize,
    rep: usize,
    plan: &RngSeedPlan,
) -> EvaluationRecord {
    let seed = subset_seed(plan, size, draw, rep);
    let users = draw_subset(dataset.n_users(), size, seed);
    let run = mask_run(dataset, &users, |_| setting, plan, rep);
    EvaluationRecord {
        setting: setting.clone(),
        subset_size: size,
        subset_index: draw,
        repetition: rep,
        local_stats: run.local_stats(),
        global_stats: run.global_stats(),
        exclusions: run.exclusions,
        seed,
    }
}

/// Evaluates many settings in parallel; records come back in setting order.
pub fn evaluate_settings(
    settings: &[PrivacySetting],
    dataset: &SensorDataset,
    schedule: &SubsetSchedule,
    reps: usize,
    plan: &RngSeedPlan,
) -> Vec<EvaluationRecord> {
    settings
        .par_iter()
        .map(|s| evaluate_setting(s, dataset, schedule, reps, plan))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// The (privacy, utility) values one setting produced across its runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffSample {
    pub setting: PrivacySetting,
    pub privacy_values: Vec<f64>,
    pub utility_values: Vec<f64>,
}

impl TradeoffSample {
    pub fn setting_id(&self) -> &str {
        self.setting.id()
    }
}

/// Scores every record and groups the scores by setting id.
pub fn assemble_tradeoffs(
    records: &[EvaluationRecord],
    w: &ObjectiveWeights,
    norm: &NormalizationConstants,
) -> BTreeMap<String, TradeoffSample> {
    let mut out: BTreeMap<String, TradeoffSample> = BTreeMap::new();
    for r in records {
        let entry = out.entry(r.setting_id().to_string()).or_insert_with(|| TradeoffSample {
            setting: r.setting.clone(),
            privacy_values: Vec::new(),
            utility_values: Vec::new(),
        });
        entry.privacy_values.push(privacy_score(&r.local_stats, w, norm));
        entry.utility_values.push(utility_score(&r.global_stats, w, norm));
    }
    out
}

/// Empirical CDF `F(x) = |{v <= x}| / n` at `points` equally spaced x values
/// spanning [min, max].
pub fn emit_cdf(values: &[f64], points: usize) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("CDF of an empty sample".into()));
    }
    if points == 0 {
        return Err(Error::InvalidArgument("CDF needs at least one point".into()));
    }
    let sorted = crate::metrics::sorted(values);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let n = sorted.len() as f64;
    Ok((0..points)
        .map(|i| {
            let x = if i + 1 == points {
                max
            } else {
                min + (max - min) * i as f64 / (points - 1) as f64
            };
            let count = sorted.partition_point(|v| *v <= x);
            (x, count as f64 / n)
        })
        .collect())
}
