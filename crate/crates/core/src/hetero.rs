//! Heterogeneous simulation: users pick their own privacy setting according
//! to an assignment histogram over a palette of settings.
//!
//! Each user's readings are masked with the stream of their own setting,
//! keyed on (setting, user index, repetition), so one user's choice never
//! changes another user's noise. System utility is computed from the pooled
//! aggregate; privacy is scored per user.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::domain::{PrivacySetting, RngSeedPlan, SensorDataset};
use crate::error::{Error, Result};
use crate::metrics::{iqr, median, privacy_score, utility_score, ErrorStats, NormalizationConstants, ObjectiveWeights};
use crate::sweep::mask_run;

/// Share of users per palette setting, stored as integer units of
/// `1 / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentHistogram {
    settings: Vec<String>,
    units: Vec<u32>,
    denominator: u32,
}

impl AssignmentHistogram {
    pub fn new(settings: Vec<String>, units: Vec<u32>, denominator: u32) -> Result<Self> {
        if settings.is_empty() || settings.len() != units.len() {
            return Err(Error::InvalidArgument(
                "histogram needs one unit count per setting".into(),
            ));
        }
        if denominator == 0 || units.iter().map(|&u| u as u64).sum::<u64>() != denominator as u64 {
            return Err(Error::InvalidArgument(format!(
                "histogram units {units:?} do not sum to {denominator}"
            )));
        }
        Ok(Self {
            settings,
            units,
            denominator,
        })
    }

    /// Every user on one setting.
    pub fn pure(settings: Vec<String>, index: usize) -> Result<Self> {
        let mut units = vec![0; settings.len()];
        *units
            .get_mut(index)
            .ok_or_else(|| Error::InvalidArgument(format!("palette index {index} out of range")))? = 1;
        Self::new(settings, units, 1)
    }

    pub fn settings(&self) -> &[String] {
        &self.settings
    }

    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn share(&self, index: usize) -> f64 {
        self.units[index] as f64 / self.denominator as f64
    }

    pub fn shares(&self) -> Vec<f64> {
        (0..self.units.len()).map(|i| self.share(i)).collect()
    }

    /// Palette index holding the unique largest share, if any.
    pub fn dominant(&self) -> Option<usize> {
        let max = *self.units.iter().max()?;
        let mut holders = self.units.iter().enumerate().filter(|(_, &u)| u == max);
        let (first, _) = holders.next()?;
        holders.next().is_none().then_some(first)
    }

    /// `id=units/denominator` pairs joined by `;`, e.g. `nomask=1/2;lap-1=1/2`.
    pub fn label(&self) -> String {
        self.settings
            .iter()
            .zip(&self.units)
            .map(|(s, u)| format!("{s}={u}/{}", self.denominator))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// `1 / step` as an integer; fails unless it is integral within 1e-9.
pub fn step_denominator(step: f64) -> Result<u32> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("step must be in (0, 1], got {step}")));
    }
    let k = 1.0 / step;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "1/step must be an integer, got 1/{step} = {k}"
        )));
    }
    Ok(k.round() as u32)
}

/// All ways to split `1 / step` units over the palette.
pub fn enumerate_histograms(palette: &[String], step: f64) -> Result<Vec<AssignmentHistogram>> {
    if palette.is_empty() {
        return Err(Error::InvalidArgument("palette must not be empty".into()));
    }
    let denom = step_denominator(step)?;
    let mut out = Vec::new();
    let mut units = vec![0u32; palette.len()];
    compositions(&mut units, 0, denom, &mut |u| {
        out.push(AssignmentHistogram {
            settings: palette.to_vec(),
            units: u.to_vec(),
            denominator: denom,
        })
    });
    Ok(out)
}

fn compositions(units: &mut [u32], pos: usize, remaining: u32, emit: &mut dyn FnMut(&[u32])) {
    if pos + 1 == units.len() {
        units[pos] = remaining;
        emit(units);
        return;
    }
    for take in (0..=remaining).rev() {
        units[pos] = take;
        compositions(units, pos + 1, remaining - take, emit);
    }
}

/// Assigns each user one palette index. Users are shuffled, then cut into
/// contiguous blocks of `floor(share * n)`; the leftover users go one at a
/// time to the settings with the largest shares (palette order on ties).
/// The result is aligned with `users`.
pub fn assign_users<R: Rng + ?Sized>(hist: &AssignmentHistogram, users: &[usize], rng: &mut R) -> Vec<usize> {
    let n = users.len();
    let denom = hist.denominator as u64;
    let mut sizes: Vec<usize> = hist
        .units
        .iter()
        .map(|&u| (u as u64 * n as u64 / denom) as usize)
        .collect();
    let mut order: Vec<usize> = (0..hist.units.len()).filter(|&i| hist.units[i] > 0).collect();
    order.sort_by(|&a, &b| hist.units[b].cmp(&hist.units[a]).then(a.cmp(&b)));
    let mut leftover = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }

    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    let mut assignment = vec![0; n];
    let mut cursor = 0;
    for (setting, &size) in sizes.iter().enumerate() {
        for &p in &positions[cursor..cursor + size] {
            assignment[p] = setting;
        }
        cursor += size;
    }
    assignment
}

/// Privacy of one user in one repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPrivacy {
    pub user: usize,
    pub repetition: usize,
    pub setting: usize,
    pub stats: ErrorStats,
    pub privacy: f64,
}

/// Per-repetition outcome of masking every user with their own setting.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRun {
    pub repetition: usize,
    pub local_stats: ErrorStats,
    pub global_stats: ErrorStats,
    pub utility: f64,
    pub per_user: Vec<UserPrivacy>,
}

/// Masks every user of `dataset` with `palette[assignment[user]]` for
/// repetitions `0..reps`. Users without any scorable reading get no privacy
/// entry.
pub fn simulate_assignment(
    dataset: &SensorDataset,
    palette: &[PrivacySetting],
    assignment: &[usize],
    reps: usize,
    plan: &RngSeedPlan,
    w: &ObjectiveWeights,
    norm: &NormalizationConstants,
) -> Result<Vec<AssignmentRun>> {
    if assignment.len() != dataset.n_users() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} users, dataset has {}",
            assignment.len(),
            dataset.n_users()
        )));
    }
    if let Some(bad) = assignment.iter().find(|&&a| a >= palette.len()) {
        return Err(Error::InvalidArgument(format!("palette index {bad} out of range")));
    }
    let users: Vec<usize> = (0..dataset.n_users()).collect();
    Ok((0..reps)
        .map(|rep| assignment_rep(dataset, palette, assignment, &users, rep, plan, w, norm))
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn assignment_rep(
    dataset: &SensorDataset,
    palette: &[PrivacySetting],
    assignment: &[usize],
    users: &[usize],
    rep: usize,
    plan: &RngSeedPlan,
    w: &ObjectiveWeights,
    norm: &NormalizationConstants,
) -> AssignmentRun {
    let run = mask_run(dataset, users, |u| &palette[assignment[u]], plan, rep);
    let global_stats = run.global_stats();
    let per_user = users
        .par_iter()
        .enumerate()
        .filter_map(|(pos, &u)| {
            let errors = run.user_errors(pos);
            if errors.is_empty() {
                return None;
            }
            let stats = ErrorStats::from_errors(errors);
            Some(UserPrivacy {
                user: u,
                repetition: rep,
                setting: assignment[u],
                stats,
                privacy: privacy_score(&stats, w, norm),
            })
        })
        .collect();
    AssignmentRun {
        repetition: rep,
        local_stats: run.local_stats(),
        global_stats,
        utility: utility_score(&global_stats, w, norm),
        per_user,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeteroConfig {
    pub reps: usize,
    /// Draw a fresh user assignment every repetition instead of once per
    /// histogram.
    pub resample_assignment: bool,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        Self {
            reps: 5,
            resample_assignment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroRunResult {
    pub histogram: AssignmentHistogram,
    /// Dominant setting id and its share.
    pub dominant: Option<(String, f64)>,
    pub runs: Vec<AssignmentRun>,
}

impl HeteroRunResult {
    /// Per-user privacy values pooled over users and repetitions.
    pub fn privacy_values(&self) -> Vec<f64> {
        self.runs
            .iter()
            .flat_map(|r| r.per_user.iter().map(|p| p.privacy))
            .collect()
    }

    /// System utility, one value per repetition.
    pub fn utility_values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.utility).collect()
    }

    pub fn privacy_median(&self) -> Option<f64> {
        median(&self.privacy_values()).ok()
    }

    pub fn privacy_iqr(&self) -> Option<f64> {
        iqr(&self.privacy_values()).ok()
    }

    pub fn utility_median(&self) -> Option<f64> {
        median(&self.utility_values()).ok()
    }

    pub fn utility_iqr(&self) -> Option<f64> {
        iqr(&self.utility_values()).ok()
    }
}

/// Simulates one histogram. `palette[i]` must be the setting named by
/// `hist.settings()[i]`.
pub fn simulate(
    hist: &AssignmentHistogram,
    palette: &[PrivacySetting],
    dataset: &SensorDataset,
    config: &HeteroConfig,
    plan: &RngSeedPlan,
    w: &ObjectiveWeights,
    norm: &NormalizationConstants,
) -> Result<HeteroRunResult> {
    if palette.len() != hist.settings.len() || palette.iter().zip(&hist.settings).any(|(p, id)| p.id() != id) {
        return Err(Error::InvalidArgument(
            "palette does not match the histogram's settings".into(),
        ));
    }
    let users: Vec<usize> = (0..dataset.n_users()).collect();
    let key = format!("assign:{}", hist.label());
    let assignment_for = |rep: usize| {
        let draw = if config.resample_assignment { rep } else { 0 };
        let mut rng = plan.rng(&key, draw as u64, 0);
        assign_users(hist, &users, &mut rng)
    };
    let fixed = assignment_for(0);
    let runs = (0..config.reps)
        .map(|rep| {
            let resampled;
            let assignment = if config.resample_assignment {
                resampled = assignment_for(rep);
                &resampled
            } else {
                &fixed
            };
            assignment_rep(dataset, palette, assignment, &users, rep, plan, w, norm)
        })
        .collect();
    Ok(HeteroRunResult {
        histogram: hist.clone(),
        dominant: hist.dominant().map(|i| (hist.settings[i].clone(), hist.share(i))),
        runs,
    })
}

/// Simulates many histograms in parallel; results keep the input order.
pub fn simulate_all(
    histograms: &[AssignmentHistogram],
    palette: &[PrivacySetting],
    dataset: &SensorDataset,
    config: &HeteroConfig,
    plan: &RngSeedPlan,
    w: &ObjectiveWeights,
    norm: &NormalizationConstants,
) -> Result<Vec<HeteroRunResult>> {
    histograms
        .par_iter()
        .map(|h| simulate(h, palette, dataset, config, plan, w, norm))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeatMetric {
    Privacy,
    Utility,
}

impl HeatMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            HeatMetric::Privacy => "privacy",
            HeatMetric::Utility => "utility",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeatStatistic {
    Median,
    Iqr,
}

impl HeatStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            HeatStatistic::Median => "median",
            HeatStatistic::Iqr => "iqr",
        }
    }
}

/// One cell of a heatmap in long form.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapCell {
    pub dominant_setting: String,
    pub dominant_share: f64,
    pub metric: HeatMetric,
    pub statistic: HeatStatistic,
    pub value: f64,
}

/// Dominant setting id and its share as a reduced fraction.
type GroupKey = (String, u64, u64);

/// Median and IQR of pooled privacy and of system utility, grouped by
/// (dominant setting, dominant share). Histograms without a unique dominant
/// setting are left out. Cells are ordered by setting, share, metric, stat.
pub fn heatmap_tables(results: &[HeteroRunResult]) -> Vec<HeatmapCell> {
    // share kept as an exact fraction for grouping
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let Some(i) = r.histogram.dominant() else { continue };
        let h = &r.histogram;
        let g = gcd(h.units[i] as u64, h.denominator as u64);
        let key = (h.settings[i].clone(), h.units[i] as u64 / g, h.denominator as u64 / g);
        let entry = groups.entry(key).or_default();
        entry.0.extend(r.privacy_values());
        entry.1.extend(r.utility_values());
    }
    let mut cells = Vec::new();
    for ((setting, num, den), (privacy, utility)) in groups {
        let share = num as f64 / den as f64;
        for (metric, values) in [(HeatMetric::Privacy, &privacy), (HeatMetric::Utility, &utility)] {
            if values.is_empty() {
                continue;
            }
            for (statistic, value) in [
                (HeatStatistic::Median, median(values).expect("non-empty")),
                (HeatStatistic::Iqr, iqr(values).expect("non-empty")),
            ] {
                cells.push(HeatmapCell {
                    dominant_setting: setting.clone(),
                    dominant_share: share,
                    metric,
                    statistic,
                    value,
                });
            }
        }
    }
    cells
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn palette_ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn histogram_counts() {
        assert_eq!(enumerate_histograms(&palette_ids(6), 0.125).unwrap().len(), 1287);
        assert_eq!(enumerate_histograms(&palette_ids(4), 0.25).unwrap().len(), 35);
        let one = enumerate_histograms(&palette_ids(1), 0.125).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].shares(), vec![1.0]);
        let two: Vec<_> = enumerate_histograms(&palette_ids(2), 0.5)
            .unwrap()
            .into_iter()
            .map(|h| h.shares())
            .collect();
        assert_eq!(two, vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn step_must_divide_one() {
        assert_eq!(step_denominator(0.125).unwrap(), 8);
        assert!(step_denominator(0.3).is_err());
        assert!(step_denominator(0.0).is_err());
    }

    #[test]
    fn dominant_requires_strict_maximum() {
        let h = AssignmentHistogram::new(palette_ids(3), vec![2, 1, 1], 4).unwrap();
        assert_eq!(h.dominant(), Some(0));
        let h = AssignmentHistogram::new(palette_ids(3), vec![2, 2, 0], 4).unwrap();
        assert_eq!(h.dominant(), None);
        assert!(AssignmentHistogram::new(palette_ids(2), vec![1, 1], 3).is_err());
    }

    #[test]
    fn assignment_block_sizes() {
        let mut rng = RngSeedPlan::new(1).rng("t", 0, 0);
        let users: Vec<usize> = (0..8).collect();
        let h = AssignmentHistogram::new(palette_ids(2), vec![1, 1], 2).unwrap();
        let a = assign_users(&h, &users, &mut rng);
        assert_eq!(a.iter().filter(|&&s| s == 0).count(), 4);

        let users: Vec<usize> = (0..10).collect();
        let h = AssignmentHistogram::new(palette_ids(8), vec![1; 8], 8).unwrap();
        let a = assign_users(&h, &users, &mut rng);
        let counts: Vec<usize> = (0..8).map(|s| a.iter().filter(|&&x| x == s).count()).collect();
        assert_eq!(counts, vec![2, 2, 1, 1, 1, 1, 1, 1]);

        let h = AssignmentHistogram::new(palette_ids(3), vec![0, 3, 1], 4).unwrap();
        let a = assign_users(&h, &users, &mut rng);
        let counts: Vec<usize> = (0..3).map(|s| a.iter().filter(|&&x| x == s).count()).collect();
        assert_eq!(counts, vec![0, 8, 2]);
    }

    #[test]
    fn nomask_everywhere_is_perfect() {
        let ds = SensorDataset::new(palette_ids(4), 4, 2, vec![0.5; 16], vec![false; 16]).unwrap();
        let palette = vec![PrivacySetting::no_mask()];
        let hist = AssignmentHistogram::pure(vec!["nomask".into()], 0).unwrap();
        let norm = NormalizationConstants::new([1.0; 6]).unwrap();
        let r = simulate(
            &hist,
            &palette,
            &ds,
            &HeteroConfig::default(),
            &RngSeedPlan::new(1),
            &ObjectiveWeights::default(),
            &norm,
        )
        .unwrap();
        assert_eq!(r.utility_values(), vec![1.0; 5]);
        assert!(r.privacy_values().iter().all(|&p| p == 0.0));
        assert_eq!(r.dominant, Some(("nomask".to_string(), 1.0)));
    }

    #[test]
    fn palette_must_match_histogram() {
        let ds = SensorDataset::new(palette_ids(1), 1, 1, vec![0.5], vec![false]).unwrap();
        let hist = AssignmentHistogram::pure(vec!["lap-1".into()], 0).unwrap();
        let norm = NormalizationConstants::new([1.0; 6]).unwrap();
        let err = simulate(
            &hist,
            &[PrivacySetting::no_mask()],
            &ds,
            &HeteroConfig::default(),
            &RngSeedPlan::new(1),
            &ObjectiveWeights::default(),
            &norm,
        );
        assert!(err.is_err());
    }

    #[test]
    fn heatmap_groups_and_skips_ties() {
        let result = |units: Vec<u32>, privacy: f64, utility: f64| {
            let histogram = AssignmentHistogram::new(palette_ids(2), units, 2).unwrap();
            HeteroRunResult {
                dominant: histogram
                    .dominant()
                    .map(|i| (histogram.settings()[i].clone(), histogram.share(i))),
                histogram,
                runs: vec![AssignmentRun {
                    repetition: 0,
                    local_stats: ErrorStats::ZERO,
                    global_stats: ErrorStats::ZERO,
                    utility,
                    per_user: vec![UserPrivacy {
                        user: 0,
                        repetition: 0,
                        setting: 0,
                        stats: ErrorStats::ZERO,
                        privacy,
                    }],
                }],
            }
        };
        let cells = heatmap_tables(&[
            result(vec![2, 0], 0.1, 0.9),
            result(vec![1, 1], 0.5, 0.5),
            result(vec![0, 2], 0.7, 0.3),
        ]);
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].dominant_setting, "s0");
        assert_eq!(cells[0].dominant_share, 1.0);
        assert_eq!(
            (cells[0].metric, cells[0].statistic, cells[0].value),
            (HeatMetric::Privacy, HeatStatistic::Median, 0.1)
        );
        assert_eq!(cells[1].statistic, HeatStatistic::Iqr);
        assert_eq!(cells[1].value, 0.0);
    }
}
