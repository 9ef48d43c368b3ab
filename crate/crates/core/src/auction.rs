//! Price-squashed ranking and expected slate outcomes.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::BucketLayout;
use crate::error::{Error, Result};
use crate::simgen::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: String,
    #[serde(default)]
    pub seller_id: String,
    pub pctr: f64,
    pub cpc: f64,
    /// Revenue per conversion.
    pub expected_order_value: f64,
}

impl Candidate {
    pub fn validate(&self) -> Result<()> {
        if !(self.pctr > 0.0 && self.pctr < 1.0) {
            return Err(Error::Validation(format!(
                "candidate {}: pctr {} outside (0, 1)",
                self.item_id, self.pctr
            )));
        }
        if !(self.cpc > 0.0 && self.cpc.is_finite()) {
            return Err(Error::Validation(format!("candidate {}: cpc must be > 0", self.item_id)));
        }
        if !(self.expected_order_value >= 0.0) {
            return Err(Error::Validation(format!(
                "candidate {}: order value must be >= 0",
                self.item_id
            )));
        }
        Ok(())
    }
}

/// Exponent on pCTR in the final ranking score. Values above 1 favor pCTR
/// over price; 0 ranks by price alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquashConfig {
    pub c: f64,
}

impl Default for SquashConfig {
    fn default() -> Self {
        SquashConfig { c: 1.0 }
    }
}

impl SquashConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c >= 0.0 && self.c.is_finite() {
            Ok(())
        } else {
            Err(Error::config("squash.c", "must be finite and >= 0"))
        }
    }
}

/// `pctr^c * cpc`.
pub fn squash_score(candidate: &Candidate, config: &SquashConfig) -> f64 {
    candidate.pctr.powf(config.c) * candidate.cpc
}

fn rank_order(a: &(f64, &Candidate), b: &(f64, &Candidate)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.pctr.total_cmp(&a.1.pctr))
        .then_with(|| a.1.item_id.cmp(&b.1.item_id))
}

/// Candidates by descending squashed score; ties go to higher pctr, then
/// smaller item id. Truncated to `slate_size`.
pub fn rank_slate(
    candidates: &[Candidate],
    config: &SquashConfig,
    slate_size: usize,
) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Err(Error::Validation("empty candidate set".into()));
    }
    config.validate()?;
    if slate_size < 1 || slate_size > candidates.len() {
        return Err(Error::config(
            "slate_size",
            format!("must be in 1..={}, got {slate_size}", candidates.len()),
        ));
    }
    for c in candidates {
        c.validate()?;
    }
    let mut scored: Vec<(f64, &Candidate)> = candidates
        .iter()
        .map(|c| (squash_score(c, config), c))
        .collect();
    scored.sort_by(rank_order);
    Ok(scored
        .into_iter()
        .take(slate_size)
        .map(|(_, c)| c.clone())
        .collect())
}

/// Closed-form expectations for one slate under the simulator's law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlateMetrics {
    #[serde(rename = "eCTR")]
    pub ectr: f64,
    #[serde(rename = "eCPMV")]
    pub ecpmv: f64,
    /// Absent when expected spend is zero.
    #[serde(rename = "ROAS")]
    pub roas: Option<f64>,
    pub spend: f64,
    pub revenue: f64,
}

pub fn simulate_slate_metrics(
    slate: &[Candidate],
    truth: &GroundTruth,
    query_id: &str,
    layout: &BucketLayout,
) -> Result<SlateMetrics> {
    if slate.is_empty() {
        return Err(Error::Validation("empty slate".into()));
    }
    if slate.len() > layout.max_position as usize {
        return Err(Error::Validation(format!(
            "slate of {} exceeds max_position {}",
            slate.len(),
            layout.max_position
        )));
    }
    let (mut clicks, mut spend, mut revenue) = (0.0, 0.0, 0.0);
    for (k, c) in slate.iter().enumerate() {
        let p = truth.propensity(k as u32 + 1)?;
        let t = truth.ctr(query_id, &c.item_id)?;
        let v = truth.cvr(query_id, &c.item_id)?;
        let expected_clicks = p * t;
        clicks += expected_clicks;
        spend += expected_clicks * c.cpc;
        revenue += expected_clicks * v * c.expected_order_value;
    }
    let n = slate.len() as f64;
    Ok(SlateMetrics {
        ectr: clicks / n,
        ecpmv: 1000.0 * spend / n,
        roas: (spend > 0.0).then(|| revenue / spend),
        spend,
        revenue,
    })
}

/// Aggregate over many slates: eCTR and eCPMV are per-slot averages over
/// all emitted slots, ROAS is total revenue over total spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlateReport {
    #[serde(rename = "eCTR")]
    pub ectr: f64,
    #[serde(rename = "eCPMV")]
    pub ecpmv: f64,
    #[serde(rename = "ROAS")]
    pub roas: Option<f64>,
    pub distinct_items: usize,
    pub distinct_sellers: usize,
}

pub fn aggregate_slates(slates: &[(Vec<Candidate>, SlateMetrics)]) -> Result<SlateReport> {
    if slates.is_empty() {
        return Err(Error::Validation("no slates to aggregate".into()));
    }
    let mut slots = 0.0;
    let (mut clicks, mut spend, mut revenue) = (0.0, 0.0, 0.0);
    let mut items = BTreeSet::new();
    let mut sellers = BTreeSet::new();
    for (slate, m) in slates {
        let n = slate.len() as f64;
        slots += n;
        clicks += m.ectr * n;
        spend += m.spend;
        revenue += m.revenue;
        for c in slate {
            items.insert(c.item_id.as_str());
            sellers.insert(c.seller_id.as_str());
        }
    }
    Ok(SlateReport {
        ectr: clicks / slots,
        ecpmv: 1000.0 * spend / slots,
        roas: (spend > 0.0).then(|| revenue / spend),
        distinct_items: items.len(),
        distinct_sellers: sellers.len(),
    })
}
