//! Position de-biasing through training-instance weights.
//!
//! A weight is a non-negative linear combination of functions that grow with
//! the display position, so clicks from later, less-viewed slots count more.
//! Weights only exist on the training path: prediction never sees position.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasKind {
    /// `pos^param`
    Polynomial,
    /// `1 + param * ln(pos)`
    Logarithmic,
    /// `1 / p_view(pos)`; `param` unused.
    InversePropensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasFunction {
    pub kind: DebiasKind,
    #[serde(default)]
    pub param: f64,
}

impl DebiasFunction {
    pub fn polynomial(alpha: f64) -> Self {
        DebiasFunction {
            kind: DebiasKind::Polynomial,
            param: alpha,
        }
    }

    pub fn logarithmic(beta: f64) -> Self {
        DebiasFunction {
            kind: DebiasKind::Logarithmic,
            param: beta,
        }
    }

    pub fn inverse_propensity() -> Self {
        DebiasFunction {
            kind: DebiasKind::InversePropensity,
            param: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.param.is_finite() {
            return Err(Error::config("debias.terms.param", "must be finite"));
        }
        match self.kind {
            DebiasKind::Polynomial if self.param < 0.0 => Err(Error::config(
                "debias.terms.param",
                "polynomial exponent must be >= 0",
            )),
            DebiasKind::Logarithmic if self.param < 0.0 => Err(Error::config(
                "debias.terms.param",
                "logarithmic slope must be >= 0",
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, position: u32, propensity: Option<&PropensityTable>) -> Result<f64> {
        let pos = position as f64;
        match self.kind {
            DebiasKind::Polynomial => Ok(pos.powf(self.param)),
            DebiasKind::Logarithmic => Ok(1.0 + self.param * pos.ln()),
            DebiasKind::InversePropensity => {
                let table = propensity.ok_or_else(|| {
                    Error::config(
                        "debias.terms",
                        "inverse_propensity term requires a propensity table",
                    )
                })?;
                Ok(1.0 / table.get(position)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasTerm {
    #[serde(flatten)]
    pub function: DebiasFunction,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    pub terms: Vec<DebiasTerm>,
    #[serde(default = "default_true")]
    pub normalize_mean_one: bool,
}

fn default_true() -> bool {
    true
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            terms: vec![DebiasTerm {
                function: DebiasFunction::inverse_propensity(),
                lambda: 1.0,
            }],
            normalize_mean_one: true,
        }
    }
}

impl DebiasConfig {
    pub fn single(function: DebiasFunction) -> Self {
        DebiasConfig {
            terms: vec![DebiasTerm {
                function,
                lambda: 1.0,
            }],
            normalize_mean_one: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::config("debias.terms", "at least one term required"));
        }
        let mut total = 0.0;
        for t in &self.terms {
            t.function.validate()?;
            if !(t.lambda.is_finite() && t.lambda >= 0.0) {
                return Err(Error::config("debias.terms.lambda", "must be finite and >= 0"));
            }
            total += t.lambda;
        }
        if total <= 0.0 {
            return Err(Error::config("debias.terms.lambda", "coefficients must not all be 0"));
        }
        Ok(())
    }

    pub fn needs_propensity(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.function.kind == DebiasKind::InversePropensity)
    }
}

/// Estimated probability that each position is viewed.
///
/// Serializes as a bare JSON array; index 0 holds position 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropensityTable {
    pub p_view: Vec<f64>,
}

impl PropensityTable {
    pub fn new(p_view: Vec<f64>) -> Result<Self> {
        if p_view.is_empty() {
            return Err(Error::config("propensity", "empty table"));
        }
        if p_view.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::config("propensity", "entries must be in (0, 1]"));
        }
        Ok(PropensityTable { p_view })
    }

    pub fn get(&self, position: u32) -> Result<f64> {
        position
            .checked_sub(1)
            .and_then(|i| self.p_view.get(i as usize))
            .copied()
            .ok_or_else(|| {
                Error::config(
                    "propensity",
                    format!("table does not cover position {position}"),
                )
            })
    }
}

pub const DEFAULT_MIN_VIEWS: u64 = 100;
pub const PROPENSITY_FLOOR: f64 = 0.01;

/// [`fit_propensity_with`] at the default minimum views and floor.
pub fn fit_propensity(train: &Dataset) -> Result<PropensityTable> {
    fit_propensity_with(train, DEFAULT_MIN_VIEWS, PROPENSITY_FLOOR)
}

/// Position-CTR ratio estimator: `p(pos) = CTR(pos) / CTR(1)`, clipped to
/// `[floor, 1]`, then forced non-increasing by a views-weighted
/// pool-adjacent-violators pass and re-anchored so `p(1) = 1`.
pub fn fit_propensity_with(train: &Dataset, min_views: u64, floor: f64) -> Result<PropensityTable> {
    let n = train.layout.max_position as usize;
    let mut views = vec![0u64; n];
    let mut clicks = vec![0u64; n];
    for r in &train.records {
        let i = r.position as usize - 1;
        views[i] += 1;
        clicks[i] += r.click as u64;
    }
    if let Some(i) = views.iter().position(|&v| v < min_views) {
        return Err(Error::InsufficientData(format!(
            "position {} has {} views, need at least {min_views}",
            i + 1,
            views[i]
        )));
    }
    if clicks[0] == 0 {
        return Err(Error::InsufficientData("no clicks at position 1".into()));
    }
    let ctr: Vec<f64> = clicks
        .iter()
        .zip(&views)
        .map(|(&c, &v)| c as f64 / v as f64)
        .collect();
    let ratio: Vec<f64> = ctr.iter().map(|c| (c / ctr[0]).clamp(floor, 1.0)).collect();
    let weights: Vec<f64> = views.iter().map(|&v| v as f64).collect();
    let mut p = isotonic_non_increasing(&ratio, &weights);
    let anchor = p[0];
    for v in &mut p {
        *v = (*v / anchor).min(1.0);
    }
    PropensityTable::new(p)
}

/// Weighted least-squares projection onto non-increasing sequences.
pub(crate) fn isotonic_non_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Blocks of (mean, weight, length); merge while a later block exceeds
    // the one before it.
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m2 <= m1 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// `sum_k lambda_k * f_k(position)`.
pub fn debias_weight(
    position: u32,
    config: &DebiasConfig,
    propensity: Option<&PropensityTable>,
) -> Result<f64> {
    if position < 1 {
        return Err(Error::Validation("position must be >= 1".into()));
    }
    config.validate()?;
    let mut w = 0.0;
    for t in &config.terms {
        w += t.lambda * t.function.eval(position, propensity)?;
    }
    Ok(w)
}

/// One weight per training record, rescaled to mean 1 when configured.
pub fn apply_debias_weights(
    train: &Dataset,
    config: &DebiasConfig,
    propensity: Option<&PropensityTable>,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.needs_propensity() && propensity.is_none() {
        return Err(Error::config(
            "debias.terms",
            "inverse_propensity term requires a propensity table",
        ));
    }
    // Weights depend on position only; evaluate each position once.
    let max_pos = train.layout.max_position;
    let per_position = (1..=max_pos)
        .map(|p| debias_weight(p, config, propensity))
        .collect::<Result<Vec<f64>>>()?;
    let mut weights: Vec<f64> = train
        .records
        .iter()
        .map(|r| per_position[r.position as usize - 1])
        .collect();
    if config.normalize_mean_one && !weights.is_empty() {
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        for w in &mut weights {
            *w /= mean;
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::record;
    use crate::data::{BucketLayout, ModuleKind};
    use proptest::prelude::*;

    fn term(function: DebiasFunction, lambda: f64) -> DebiasTerm {
        DebiasTerm { function, lambda }
    }

    fn layout(max_position: u32) -> BucketLayout {
        BucketLayout {
            module_kind: ModuleKind::InGrid,
            group_size: 2,
            max_position,
        }
    }

    #[test]
    fn constant_polynomial() {
        let cfg = DebiasConfig::single(DebiasFunction::polynomial(0.0));
        for pos in 1..20 {
            assert_eq!(debias_weight(pos, &cfg, None).unwrap(), 1.0);
        }
    }

    #[test]
    fn mixed_terms_at_first_position() {
        let cfg = DebiasConfig {
            terms: vec![
                term(DebiasFunction::polynomial(1.0), 0.5),
                term(DebiasFunction::logarithmic(1.0), 0.5),
            ],
            normalize_mean_one: true,
        };
        assert_eq!(debias_weight(1, &cfg, None).unwrap(), 1.0);
    }

    #[test]
    fn inverse_propensity_reciprocal() {
        let table = PropensityTable::new(vec![1.0, 0.7, 0.5]).unwrap();
        let cfg = DebiasConfig::single(DebiasFunction::inverse_propensity());
        assert_eq!(debias_weight(3, &cfg, Some(&table)).unwrap(), 2.0);
        let err = debias_weight(3, &cfg, None).unwrap_err();
        assert!(err.is_config());
        assert!(debias_weight(4, &cfg, Some(&table)).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(DebiasConfig { terms: vec![], normalize_mean_one: true }.validate().is_err());
        let zero = DebiasConfig {
            terms: vec![term(DebiasFunction::polynomial(1.0), 0.0)],
            normalize_mean_one: true,
        };
        assert!(zero.validate().is_err());
        assert!(DebiasConfig::single(DebiasFunction::polynomial(-1.0)).validate().is_err());
        assert!(DebiasConfig::single(DebiasFunction::logarithmic(-0.1)).validate().is_err());
    }

    #[test]
    fn linear_weights_normalized() {
        let records = vec![record(0, 1, 0, 0), record(0, 2, 0, 0), record(0, 3, 0, 0)];
        let ds = Dataset::new(records, layout(3)).unwrap();
        let cfg = DebiasConfig::single(DebiasFunction::polynomial(1.0));
        let w = apply_debias_weights(&ds, &cfg, None).unwrap();
        assert_eq!(w, vec![0.5, 1.0, 1.5]);
    }

    #[test]
    fn constant_positions_normalize_to_one() {
        let records = vec![record(0, 1, 1, 0); 5];
        let ds = Dataset::new(records, layout(3)).unwrap();
        let cfg = DebiasConfig::single(DebiasFunction::polynomial(2.0));
        assert_eq!(apply_debias_weights(&ds, &cfg, None).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn empty_dataset_gives_no_weights() {
        let ds = Dataset::empty(layout(3));
        let cfg = DebiasConfig::single(DebiasFunction::polynomial(1.0));
        assert!(apply_debias_weights(&ds, &cfg, None).unwrap().is_empty());
    }

    fn records_with_ctr(ctrs: &[f64], views: usize) -> Dataset {
        let mut records = Vec::new();
        for (i, &ctr) in ctrs.iter().enumerate() {
            let clicks = (ctr * views as f64).round() as usize;
            for v in 0..views {
                records.push(record(0, i as u32 + 1, (v < clicks) as u8, 0));
            }
        }
        Dataset::new(records, layout(ctrs.len() as u32)).unwrap()
    }

    #[test]
    fn flat_ctr_gives_unit_propensity() {
        let ds = records_with_ctr(&[0.2, 0.2, 0.2, 0.2], 200);
        assert_eq!(fit_propensity(&ds).unwrap().p_view, vec![1.0; 4]);
    }

    #[test]
    fn propensity_ratio_and_monotone_repair() {
        let ds = records_with_ctr(&[0.4, 0.2, 0.3, 0.001], 1000);
        let p = fit_propensity(&ds).unwrap().p_view;
        // Positions 2 and 3 pool to (0.5 + 0.75) / 2; position 4 hits the floor.
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 0.625).abs() < 1e-12);
        assert!((p[2] - 0.625).abs() < 1e-12);
        assert_eq!(p[3], PROPENSITY_FLOOR);
    }

    #[test]
    fn propensity_reanchors_when_first_position_pools() {
        let ds = records_with_ctr(&[0.2, 0.3, 0.1], 1000);
        let p = fit_propensity(&ds).unwrap().p_view;
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 1.0);
        assert!(p[2] < 1.0);
    }

    #[test]
    fn missing_position_is_error() {
        let mut ds = records_with_ctr(&[0.2, 0.2, 0.2, 0.2, 0.2], 200);
        ds.records.retain(|r| r.position != 5);
        let err = fit_propensity(&ds).unwrap_err().to_string();
        assert!(err.contains("position 5"), "{err}");
    }

    #[test]
    fn no_clicks_at_top_is_error() {
        let ds = records_with_ctr(&[0.0, 0.2], 200);
        let err = fit_propensity(&ds).unwrap_err().to_string();
        assert!(err.contains("no clicks at position 1"));
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{"terms":[{"kind":"polynomial","param":1.0,"lambda":0.5},{"kind":"inverse_propensity","lambda":0.5}],"normalize_mean_one":true}"#;
        let cfg: DebiasConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.terms[1].function.kind, DebiasKind::InversePropensity);
        let table = PropensityTable::new(vec![1.0, 0.5]).unwrap();
        assert_eq!(serde_json::to_string(&table).unwrap(), "[1.0,0.5]");
    }

    fn arb_config() -> impl Strategy<Value = DebiasConfig> {
        let term = (0usize..3, 0.0f64..3.0, 0.0f64..5.0).prop_map(|(k, param, lambda)| {
            let function = match k {
                0 => DebiasFunction::polynomial(param),
                1 => DebiasFunction::logarithmic(param),
                _ => DebiasFunction::inverse_propensity(),
            };
            DebiasTerm { function, lambda }
        });
        proptest::collection::vec(term, 1..4)
            .prop_filter("positive lambda sum", |t| t.iter().map(|t| t.lambda).sum::<f64>() > 1e-3)
            .prop_map(|terms| DebiasConfig {
                terms,
                normalize_mean_one: true,
            })
    }

    fn arb_propensity() -> impl Strategy<Value = PropensityTable> {
        proptest::collection::vec(0.0f64..1.0, 11).prop_map(|mut drops| {
            let mut p = vec![1.0];
            for d in drops.drain(..) {
                let last = *p.last().unwrap();
                p.push((last * (1.0 - 0.3 * d)).max(PROPENSITY_FLOOR));
            }
            PropensityTable::new(p).unwrap()
        })
    }

    proptest! {
        #[test]
        fn weights_positive_and_non_decreasing(cfg in arb_config(), table in arb_propensity()) {
            let mut prev = 0.0;
            for pos in 1..=12 {
                let w = debias_weight(pos, &cfg, Some(&table)).unwrap();
                prop_assert!(w > 0.0);
                prop_assert!(w >= prev - 1e-12);
                prev = w;
            }
        }

        #[test]
        fn normalized_mean_and_scale_equivalence(
            cfg in arb_config(),
            table in arb_propensity(),
            positions in proptest::collection::vec(1u32..=12, 1..60),
            k in 0.01f64..100.0,
        ) {
            let records = positions.iter().map(|&p| record(0, p, 0, 0)).collect();
            let ds = Dataset::new(records, layout(12)).unwrap();
            let w = apply_debias_weights(&ds, &cfg, Some(&table)).unwrap();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
            let scaled = DebiasConfig {
                terms: cfg.terms.iter().map(|t| DebiasTerm { lambda: t.lambda * k, ..*t }).collect(),
                ..cfg.clone()
            };
            let ws = apply_debias_weights(&ds, &scaled, Some(&table)).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() < 1e-12 * a.max(1.0));
            }
        }
    }
}
