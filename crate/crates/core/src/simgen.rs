//! Synthetic position-biased traffic with known ground truth.
//!
//! Clicks follow the view/click factorization: a slot at position `k` is
//! viewed with probability `decay^(k-1)`, a viewed item is clicked with its
//! true CTR, and a click converts with the item's true CVR. Unviewed slots
//! are still logged, with `click = 0`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BucketLayout, Dataset, ImpressionRecord, DEFAULT_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::evalkit::{auroc, spearman, ScoredLabels};
use crate::rng::{keyed_uniform, stream_rng, streams};

fn default_seed() -> u64 {
    7
}

/// Simulator knobs. Every field has a default so partial JSON configs work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub num_queries: usize,
    pub num_items: usize,
    pub num_sellers: usize,
    /// Total logged slot impressions (records).
    pub impressions: usize,
    pub layout: BucketLayout,
    /// True view propensity is `propensity_decay^(pos - 1)`.
    pub propensity_decay: f64,
    pub base_ctr_scale: f64,
    pub base_cvr_scale: f64,
    pub feature_dim: usize,
    /// Uniformly random placement instead of ranker-driven placement.
    pub randomize_placement: bool,
    pub num_days: u32,
    /// Std of the Gaussian noise added to latents to form `base_features`.
    pub feature_noise: f64,
    /// Candidate pool per query; the top `layout.max_position` are shown.
    pub candidates_per_query: usize,
    /// Std of the CTR logit contributed by the observable latents.
    pub relevance_scale: f64,
    /// Std of a hidden per-item quality term only history features can see.
    pub item_quality_scale: f64,
    pub ctr_intercept: f64,
    pub cvr_intercept: f64,
    /// How strongly the CVR logit follows the CTR logit.
    pub cvr_coupling: f64,
    /// Std of the CVR logit term independent of CTR.
    pub cvr_own_scale: f64,
    /// Cosine between the logging ranker's direction and the true relevance
    /// direction (score-correlated placement only).
    pub ranker_alignment: f64,
    /// Std of per-page-view noise on the logging ranker's score.
    pub placement_noise: f64,
    /// Std of `ln(cpc)` across items; median cpc is 1.
    pub cpc_log_std: f64,
    /// Revenue per conversion, used for ROAS.
    pub order_value: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: default_seed(),
            num_queries: 400,
            num_items: 2000,
            num_sellers: 150,
            impressions: 240_000,
            layout: BucketLayout::default(),
            propensity_decay: 0.7,
            base_ctr_scale: 1.0,
            base_cvr_scale: 0.5,
            feature_dim: DEFAULT_FEATURE_DIM,
            randomize_placement: false,
            num_days: 30,
            feature_noise: 0.1,
            candidates_per_query: 24,
            relevance_scale: 1.0,
            item_quality_scale: 0.5,
            ctr_intercept: -1.5,
            cvr_intercept: -1.5,
            cvr_coupling: 1.0,
            cvr_own_scale: 0.5,
            ranker_alignment: 0.3,
            placement_noise: 0.3,
            cpc_log_std: 0.5,
            order_value: 40.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be in (0, 1], got {v}")))
            }
        };
        unit("sim.propensity_decay", self.propensity_decay)?;
        unit("sim.base_ctr_scale", self.base_ctr_scale)?;
        unit("sim.base_cvr_scale", self.base_cvr_scale)?;
        let positive = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(name, "must be >= 1"))
            }
        };
        positive("sim.num_queries", self.num_queries)?;
        positive("sim.num_items", self.num_items)?;
        positive("sim.num_sellers", self.num_sellers)?;
        positive("sim.impressions", self.impressions)?;
        positive("sim.feature_dim", self.feature_dim)?;
        if self.num_days < 1 {
            return Err(Error::config("sim.num_days", "must be >= 1"));
        }
        let shown = self.layout.max_position as usize;
        if self.candidates_per_query < shown {
            return Err(Error::config(
                "sim.candidates_per_query",
                format!("must be >= layout.max_position ({shown})"),
            ));
        }
        if self.candidates_per_query > self.num_items {
            return Err(Error::config(
                "sim.candidates_per_query",
                "must not exceed num_items",
            ));
        }
        for (name, v) in [
            ("sim.feature_noise", self.feature_noise),
            ("sim.relevance_scale", self.relevance_scale),
            ("sim.item_quality_scale", self.item_quality_scale),
            ("sim.cvr_own_scale", self.cvr_own_scale),
            ("sim.placement_noise", self.placement_noise),
            ("sim.cpc_log_std", self.cpc_log_std),
            ("sim.order_value", self.order_value),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.ranker_alignment) {
            return Err(Error::config("sim.ranker_alignment", "must be in [-1, 1]"));
        }
        for (name, v) in [
            ("sim.ctr_intercept", self.ctr_intercept),
            ("sim.cvr_intercept", self.cvr_intercept),
            ("sim.cvr_coupling", self.cvr_coupling),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        Ok(())
    }
}

pub fn pair_key(query_id: &str, item_id: &str) -> String {
    format!("{query_id}|{item_id}")
}

/// The probabilities the simulator drew its labels from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Keyed by `"query_id|item_id"`.
    pub true_ctr: BTreeMap<String, f64>,
    pub true_cvr: BTreeMap<String, f64>,
    /// Index 0 holds position 1.
    pub true_propensity: Vec<f64>,
}

impl GroundTruth {
    pub fn ctr(&self, query_id: &str, item_id: &str) -> Result<f64> {
        let key = pair_key(query_id, item_id);
        self.true_ctr
            .get(&key)
            .copied()
            .ok_or(Error::MissingPair(key))
    }

    pub fn cvr(&self, query_id: &str, item_id: &str) -> Result<f64> {
        let key = pair_key(query_id, item_id);
        self.true_cvr
            .get(&key)
            .copied()
            .ok_or(Error::MissingPair(key))
    }

    /// View propensity at a 1-based position.
    pub fn propensity(&self, position: u32) -> Result<f64> {
        position
            .checked_sub(1)
            .and_then(|i| self.true_propensity.get(i as usize))
            .copied()
            .ok_or_else(|| Error::Validation(format!("no true propensity for position {position}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v = gaussian_vec(rng, dim, 1.0);
    let norm = dot(&v, &v).sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / norm).collect()
}

struct Pair {
    item: usize,
    latent: Vec<f64>,
    /// Logging ranker's deterministic score component.
    ranker_score: f64,
}

/// Generates logs and the truth they were drawn from. Pure in `config`.
pub fn generate_logs(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let dim = config.feature_dim;
    let mut setup = stream_rng(config.seed, streams::SIM_SETUP);

    // Latent directions. Components of item latents have unit variance, so
    // `relevance_dir . latent` has unit variance.
    let relevance_dir = unit_direction(&mut setup, dim);
    let cvr_dir = unit_direction(&mut setup, dim);
    let orthogonal = {
        let v = unit_direction(&mut setup, dim);
        let proj = dot(&v, &relevance_dir);
        let w: Vec<f64> = v
            .iter()
            .zip(&relevance_dir)
            .map(|(x, r)| x - proj * r)
            .collect();
        let norm = dot(&w, &w).sqrt().max(f64::MIN_POSITIVE);
        w.into_iter().map(|x| x / norm).collect::<Vec<_>>()
    };
    let align = config.ranker_alignment;
    let ranker_dir: Vec<f64> = relevance_dir
        .iter()
        .zip(&orthogonal)
        .map(|(r, o)| align * r + (1.0 - align * align).sqrt() * o)
        .collect();

    let item_latents: Vec<Vec<f64>> = (0..config.num_items)
        .map(|_| gaussian_vec(&mut setup, dim, 1.0))
        .collect();
    let item_quality: Vec<f64> = (0..config.num_items)
        .map(|_| config.item_quality_scale * setup.sample::<f64, _>(StandardNormal))
        .collect();
    let cpc_dist = Normal::new(0.0, config.cpc_log_std)
        .map_err(|e| Error::config("sim.cpc_log_std", e.to_string()))?;
    let item_cpc: Vec<f64> = (0..config.num_items)
        .map(|_| cpc_dist.sample(&mut setup).exp())
        .collect();
    let item_seller: Vec<usize> = (0..config.num_items)
        .map(|_| setup.random_range(0..config.num_sellers))
        .collect();

    let all_items: Vec<usize> = (0..config.num_items).collect();
    let mut truth = GroundTruth {
        true_ctr: BTreeMap::new(),
        true_cvr: BTreeMap::new(),
        true_propensity: (0..config.layout.max_position)
            .map(|k| config.propensity_decay.powi(k as i32))
            .collect(),
    };
    let mut pairs_by_query: Vec<Vec<Pair>> = Vec::with_capacity(config.num_queries);
    let mut pair_probs: Vec<Vec<(f64, f64)>> = Vec::with_capacity(config.num_queries);
    for q in 0..config.num_queries {
        let query_shift = gaussian_vec(&mut setup, dim, 0.5);
        let chosen: Vec<usize> = all_items
            .choose_multiple(&mut setup, config.candidates_per_query)
            .copied()
            .collect();
        let mut pairs = Vec::with_capacity(chosen.len());
        let mut probs = Vec::with_capacity(chosen.len());
        for item in chosen {
            let latent: Vec<f64> = item_latents[item]
                .iter()
                .zip(&query_shift)
                .map(|(a, b)| (a + b) / 1.25f64.sqrt())
                .collect();
            let relevance = config.relevance_scale * dot(&relevance_dir, &latent) + item_quality[item];
            let ctr = config.base_ctr_scale * sigmoid(config.ctr_intercept + relevance);
            let cvr_logit = config.cvr_intercept
                + config.cvr_coupling * relevance
                + config.cvr_own_scale * dot(&cvr_dir, &latent);
            let cvr = config.base_cvr_scale * sigmoid(cvr_logit);
            let key = pair_key(&format!("q{q}"), &format!("i{item}"));
            truth.true_ctr.insert(key.clone(), ctr);
            truth.true_cvr.insert(key, cvr);
            let ranker_score = config.relevance_scale * dot(&ranker_dir, &latent)
                + align * item_quality[item];
            probs.push((ctr, cvr));
            pairs.push(Pair {
                item,
                latent,
                ranker_score,
            });
        }
        pairs_by_query.push(pairs);
        pair_probs.push(probs);
    }

    let shown = config.layout.max_position as usize;
    let page_views = config.impressions.div_ceil(shown);
    let mut traffic = stream_rng(config.seed, streams::SIM_TRAFFIC);
    let mut records = Vec::with_capacity(config.impressions);
    let mut order: Vec<usize> = Vec::with_capacity(config.candidates_per_query);
    let mut noisy: Vec<(f64, usize)> = Vec::with_capacity(config.candidates_per_query);
    for view in 0..page_views {
        let day = ((view as u64 * config.num_days as u64) / page_views as u64) as u32;
        let q = traffic.random_range(0..config.num_queries);
        let pairs = &pairs_by_query[q];
        order.clear();
        if config.randomize_placement {
            order.extend(0..pairs.len());
            order.shuffle(&mut traffic);
        } else {
            noisy.clear();
            for (j, p) in pairs.iter().enumerate() {
                let eps: f64 = traffic.sample(StandardNormal);
                noisy.push((p.ranker_score + config.placement_noise * eps, j));
            }
            noisy.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            order.extend(noisy.iter().map(|&(_, j)| j));
        }
        let query_id = format!("q{q}");
        for (slot, &j) in order.iter().take(shown).enumerate() {
            if records.len() == config.impressions {
                break;
            }
            let position = slot as u32 + 1;
            let pair = &pairs[j];
            let (ctr, cvr) = pair_probs[q][j];
            let viewed = traffic.random::<f64>() < truth.true_propensity[slot];
            let click = viewed && traffic.random::<f64>() < ctr;
            let conversion = click && traffic.random::<f64>() < cvr;
            let base_features = pair
                .latent
                .iter()
                .map(|z| z + config.feature_noise * traffic.sample::<f64, _>(StandardNormal))
                .collect();
            records.push(ImpressionRecord {
                query_id: query_id.clone(),
                item_id: format!("i{}", pair.item),
                seller_id: format!("s{}", item_seller[pair.item]),
                day,
                module_kind: config.layout.module_kind,
                position,
                base_features,
                cpc: item_cpc[pair.item],
                click: click as u8,
                conversion: conversion as u8,
            });
        }
    }
    Ok((Dataset::new(records, config.layout)?, truth))
}

/// Replaces every record's labels with draws from the true CTR/CVR as if
/// each slot had been viewed, i.e. position-unbiased labels.
pub fn rescore_unbiased(dataset: &Dataset, truth: &GroundTruth, seed: u64) -> Result<Dataset> {
    let mut out = dataset.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        let ctr = truth.ctr(&r.query_id, &r.item_id)?;
        let cvr = truth.cvr(&r.query_id, &r.item_id)?;
        let mut rng = stream_rng(seed ^ streams::UNBIASED_LABELS.rotate_left(32), i as u64);
        let click = rng.random::<f64>() < ctr;
        let conversion = click && rng.random::<f64>() < cvr;
        r.click = click as u8;
        r.conversion = conversion as u8;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub spearman: f64,
    /// `None` when the resampled labels ended up single-class.
    pub auroc: Option<f64>,
}

/// Scores a model against the simulator's truth: rank correlation with true
/// CTR, and AUROC against one uniform-propensity click draw per pair.
pub fn oracle_eval(
    model_scores: &HashMap<String, f64>,
    truth: &GroundTruth,
    seed: u64,
) -> Result<OracleReport> {
    let missing: Vec<&str> = truth
        .true_ctr
        .keys()
        .filter(|k| !model_scores.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).copied().collect();
        let suffix = if missing.len() > shown.len() {
            format!(" (and {} more)", missing.len() - shown.len())
        } else {
            String::new()
        };
        return Err(Error::MissingPair(format!("{}{suffix}", shown.join(", "))));
    }
    let mut scores = Vec::with_capacity(truth.true_ctr.len());
    let mut truths = Vec::with_capacity(truth.true_ctr.len());
    let mut labels = Vec::with_capacity(truth.true_ctr.len());
    for (i, (key, &ctr)) in truth.true_ctr.iter().enumerate() {
        scores.push(model_scores[key]);
        truths.push(ctr);
        let draw = keyed_uniform(seed ^ streams::ORACLE_LABELS.rotate_left(32), i as u64);
        labels.push((draw < ctr) as u8);
    }
    let rho = spearman(&scores, &truths)?;
    let auroc = ScoredLabels::new(scores, labels)
        .ok()
        .and_then(|d| auroc(&d).ok());
    Ok(OracleReport {
        spearman: rho,
        auroc,
    })
}

/// Distinct (query, item) pairs in the dataset, in first-seen order.
pub fn distinct_pairs(dataset: &Dataset) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    dataset
        .records
        .iter()
        .filter(|r| seen.insert((r.query_id.as_str(), r.item_id.as_str())))
        .map(|r| (r.query_id.clone(), r.item_id.clone()))
        .collect()
}
