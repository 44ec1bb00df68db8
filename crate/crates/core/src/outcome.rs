//! McNemar-type outcome analysis for paired binary outcomes and its
//! Γ-bounded version, reported next to the assumption-test bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::infer::{bounding_p_two_sided, Centering, Mode};
use crate::model::MatchedSample;
use crate::numerics::binom_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DiscordantSummary {
    /// Pairs whose two outcomes differ.
    pub discordant: u64,
    /// Discordant pairs where the treated unit has outcome 1.
    pub treated_events: u64,
}

impl DiscordantSummary {
    pub fn new(discordant: u64, treated_events: u64) -> Result<Self> {
        if treated_events > discordant {
            return Err(Error::invalid(format!(
                "treated events {treated_events} exceed discordant pairs {discordant}"
            )));
        }
        Ok(DiscordantSummary {
            discordant,
            treated_events,
        })
    }

    /// Counts discordant pairs of a matched-pair sample with 0/1 outcomes.
    pub fn from_sample(sample: &MatchedSample) -> Result<Self> {
        if sample.controls_per_set() != 1 {
            return Err(Error::invalid("McNemar analysis needs matched pairs"));
        }
        let outcomes = sample
            .outcomes()
            .ok_or_else(|| Error::invalid("matched sample has no outcome column"))?;
        if let Some(u) = outcomes.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!(
                "outcome {} of unit {} is not binary; use the Hodges-Lehmann estimate for continuous outcomes",
                outcomes[u],
                u + 1
            )));
        }
        let mut d = 0;
        let mut tp = 0;
        for i in 0..sample.num_sets() {
            let t = sample.treated_slot(i);
            let yt = sample.outcome(i, t).unwrap();
            let yc = sample.outcome(i, 1 - t).unwrap();
            if yt != yc {
                d += 1;
                if yt == 1.0 {
                    tp += 1;
                }
            }
        }
        DiscordantSummary::new(d, tp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSide {
    /// Treatment raises the event rate.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemarBound {
    pub p: f64,
    pub no_discordant_pairs: bool,
}

/// Worst-case one-sided McNemar p-value at sensitivity Γ.
pub fn mcnemar_gamma_bound(summary: DiscordantSummary, gamma: f64, side: OutcomeSide) -> Result<McNemarBound> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be a finite value ≥ 1, got {gamma}")));
    }
    let d = summary.discordant;
    if d == 0 {
        return Ok(McNemarBound {
            p: 1.0,
            no_discordant_pairs: true,
        });
    }
    let successes = match side {
        OutcomeSide::Greater => summary.treated_events,
        OutcomeSide::Less => d - summary.treated_events,
    };
    Ok(McNemarBound {
        p: binom_sf(d, gamma / (1.0 + gamma), successes as i64),
        no_discordant_pairs: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub gamma: f64,
    /// Two-sided bounding p-value of the randomization-assumption test.
    pub p_assumption: f64,
    /// One-sided bounding McNemar p-value.
    pub p_outcome: f64,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeReport {
    pub summary: DiscordantSummary,
    pub side: OutcomeSide,
    pub rsv: f64,
    pub rows: Vec<OutcomeRow>,
    /// Outcome bound at Γ = RSV.
    pub headline_p: f64,
    pub no_discordant_pairs: bool,
}

/// Statistic of the assumption test feeding the left-hand column.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AssumptionTest {
    pub num_sets: u64,
    pub controls_per_set: u64,
    pub t: u64,
    pub mode: Mode,
    pub centering: Centering,
}

const HIGHLIGHT_TOL: f64 = 1e-4;

/// Rows for each Γ (plus Γ = RSV if absent), sorted by Γ, with the RSV row
/// highlighted.
pub fn outcome_report(
    summary: DiscordantSummary,
    test: Option<AssumptionTest>,
    gammas: &[f64],
    rsv: f64,
    side: OutcomeSide,
) -> Result<OutcomeReport> {
    if !(rsv >= 1.0) || !rsv.is_finite() {
        return Err(Error::invalid(format!("rsv must be a finite value ≥ 1, got {rsv}")));
    }
    let mut grid: Vec<f64> = gammas.to_vec();
    if !grid.iter().any(|g| (g - rsv).abs() <= HIGHLIGHT_TOL) {
        grid.push(rsv);
    }
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(grid.len());
    let mut headline = None;
    for gamma in grid {
        let bound = mcnemar_gamma_bound(summary, gamma, side)?;
        let p_assumption = match test {
            Some(a) => bounding_p_two_sided(a.num_sets, a.controls_per_set, a.t, gamma, a.mode, a.centering)?,
            None => f64::NAN,
        };
        let highlighted = headline.is_none() && (gamma - rsv).abs() <= HIGHLIGHT_TOL;
        if highlighted {
            headline = Some(bound.p);
        }
        rows.push(OutcomeRow {
            gamma,
            p_assumption,
            p_outcome: bound.p,
            highlighted,
        });
    }
    Ok(OutcomeReport {
        summary,
        side,
        rsv,
        rows,
        headline_p: headline.expect("rsv row present"),
        no_discordant_pairs: summary.discordant == 0,
    })
}
