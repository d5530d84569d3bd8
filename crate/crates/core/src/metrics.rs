//! Mean political stance of reads (MPS) and of preferences (UMPS), and their
//! per-epoch, per-group aggregation.

use std::collections::BTreeMap;

use crate::behavior::{InteractionRecord, Phase};
use crate::corpus::{ArticleUtility, PreferenceMatrix, Stance, Typology, UserId, UserProfile};
use crate::error::{Error, Result};

/// Mean stance of the clicked items in one list; `None` when nothing was clicked.
pub fn iteration_mps(stances: &[Stance], clicks: &[bool]) -> Result<Option<f64>> {
    if stances.len() != clicks.len() {
        return Err(Error::LengthMismatch {
            stances: stances.len(),
            clicks: clicks.len(),
        });
    }
    let (sum, n) = stances
        .iter()
        .zip(clicks)
        .filter(|(_, &c)| c)
        .fold((0i64, 0usize), |(sum, n), (s, _)| (sum + s.value() as i64, n + 1));
    Ok((n > 0).then(|| sum as f64 / n as f64))
}

/// Stance-weighted sum over every preference cell.
pub fn umps(preference: &PreferenceMatrix) -> f64 {
    preference
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .zip(Stance::ALL)
                .map(|(v, s)| s.value() as f64 * v)
                .sum::<f64>()
        })
        .sum()
}

/// Outcome of one live iteration, kept for epoch aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOutcome {
    pub iteration: usize,
    pub epoch: usize,
    pub user_id: UserId,
    pub typology: Typology,
    pub mps: Option<f64>,
    pub n_clicks: usize,
}

/// One (run, epoch, group) row of the metrics series. Epoch 0 holds the
/// bootstrap reference MPS and the post-bootstrap UMPS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub run_id: u64,
    pub epoch: usize,
    pub group: Typology,
    pub mean_mps: Option<f64>,
    pub mean_umps: f64,
    pub n_clicks: usize,
    pub n_interactions: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn group_umps(users: &[UserProfile], group: Typology) -> f64 {
    mean(users.iter().filter(|u| u.typology == group).map(|u| umps(&u.preference))).unwrap_or(0.0)
}

/// Per-group rows for `epoch` from that epoch's iteration outcomes and the
/// users' state at epoch end. Always returns one row per typology.
pub fn epoch_group_aggregate(run_id: u64, epoch: usize, outcomes: &[IterationOutcome], users: &[UserProfile]) -> Vec<EpochRow> {
    Typology::ALL
        .iter()
        .map(|&group| {
            let mine = || outcomes.iter().filter(move |o| o.epoch == epoch && o.typology == group);
            EpochRow {
                run_id,
                epoch,
                group,
                mean_mps: mean(mine().filter_map(|o| o.mps)),
                mean_umps: group_umps(users, group),
                n_clicks: mine().map(|o| o.n_clicks).sum(),
                n_interactions: mine().count(),
            }
        })
        .collect()
}

/// Per group, the mean stance over all clicked bootstrap impressions.
pub fn bootstrap_reference(
    records: &[InteractionRecord],
    users: &[UserProfile],
    articles: &[ArticleUtility],
) -> BTreeMap<Typology, Option<f64>> {
    let mut acc: BTreeMap<Typology, (i64, usize)> = Typology::ALL.iter().map(|&t| (t, (0, 0))).collect();
    for r in records.iter().filter(|r| r.phase == Phase::Bootstrap && r.clicked) {
        let group = users[r.user_id as usize].typology;
        let entry = acc.get_mut(&group).expect("all groups present");
        entry.0 += articles[r.article_id as usize].stance.value() as i64;
        entry.1 += 1;
    }
    acc.into_iter()
        .map(|(group, (sum, n))| {
            if n == 0 {
                log::warn!("group {group} has no bootstrap clicks; reference MPS undefined");
            }
            (group, (n > 0).then(|| sum as f64 / n as f64))
        })
        .collect()
}

/// Ordinary least-squares slope of `y` on `x`. `None` for fewer than two
/// points or zero spread in `x`.
pub fn trend_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
