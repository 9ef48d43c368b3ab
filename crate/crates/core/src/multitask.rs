//! Blending click and click-and-convert labels into one CTR training signal.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::keyed_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiTaskMode {
    /// Clicked-unconverted labels become 0 with probability `a`.
    StochasticAggregation,
    /// Clicked-unconverted records keep label 1 at weight `a`.
    InstanceWeighting,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTaskConfig {
    pub mode: MultiTaskMode,
    pub a: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        MultiTaskConfig {
            mode: MultiTaskMode::InstanceWeighting,
            a: 0.4,
            seed: 7,
        }
    }
}

impl MultiTaskConfig {
    pub fn off() -> Self {
        MultiTaskConfig {
            mode: MultiTaskMode::Off,
            a: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::config("multitask.a", format!("must be in [0, 1], got {}", self.a)));
        }
        if self.mode == MultiTaskMode::InstanceWeighting && self.a == 0.0 {
            return Err(Error::config(
                "multitask.a",
                "instance weighting needs a > 0; use a small positive value",
            ));
        }
        Ok(())
    }
}

fn check_funnel(click: u8, conversion: u8) -> Result<()> {
    if click > 1 || conversion > 1 {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    if conversion > click {
        return Err(Error::Validation("conversion without click".into()));
    }
    Ok(())
}

/// The aggregated label for one record given a uniform draw in `[0, 1)`.
pub fn aggregate_label_stochastic(click: u8, conversion: u8, a: f64, draw: f64) -> Result<u8> {
    check_funnel(click, conversion)?;
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::config("multitask.a", "must be in [0, 1]"));
    }
    Ok(match (click, conversion) {
        (0, _) => 0,
        (_, 1) => 1,
        _ if draw < a => 0,
        _ => 1,
    })
}

/// Training weight: `a` for clicked-unconverted records, 1 otherwise.
pub fn multitask_weight(click: u8, conversion: u8, a: f64) -> Result<f64> {
    check_funnel(click, conversion)?;
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::config("multitask.a", "instance weighting needs a in (0, 1]"));
    }
    Ok(if click == 1 && conversion == 0 { a } else { 1.0 })
}

/// Effective labels and weights for every record. Stochastic draws are keyed
/// by `(seed, record index)`.
pub fn apply_multitask(train: &Dataset, config: &MultiTaskConfig) -> Result<(Vec<u8>, Vec<f64>)> {
    config.validate()?;
    let n = train.len();
    let mut labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (i, r) in train.records.iter().enumerate() {
        match config.mode {
            MultiTaskMode::Off => {
                check_funnel(r.click, r.conversion)?;
                labels.push(r.click);
                weights.push(1.0);
            }
            MultiTaskMode::StochasticAggregation => {
                let draw = keyed_uniform(config.seed, i as u64);
                labels.push(aggregate_label_stochastic(r.click, r.conversion, config.a, draw)?);
                weights.push(1.0);
            }
            MultiTaskMode::InstanceWeighting => {
                labels.push(r.click);
                weights.push(multitask_weight(r.click, r.conversion, config.a)?);
            }
        }
    }
    Ok((labels, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::record;
    use crate::data::BucketLayout;

    #[test]
    fn aggregation_rules() {
        for a in [0.0, 0.3, 1.0] {
            for draw in [0.0, 0.5, 0.999] {
                assert_eq!(aggregate_label_stochastic(0, 0, a, draw).unwrap(), 0);
                assert_eq!(aggregate_label_stochastic(1, 1, a, draw).unwrap(), 1);
            }
        }
        assert_eq!(aggregate_label_stochastic(1, 0, 1.0, 0.999_999).unwrap(), 0);
        assert_eq!(aggregate_label_stochastic(1, 0, 0.0, 0.0).unwrap(), 1);
        assert_eq!(aggregate_label_stochastic(1, 0, 0.4, 0.39).unwrap(), 0);
        assert_eq!(aggregate_label_stochastic(1, 0, 0.4, 0.4).unwrap(), 1);
        assert!(aggregate_label_stochastic(0, 1, 0.4, 0.1).is_err());
    }

    #[test]
    fn stochastic_zero_fraction_matches_a() {
        let n = 100_000;
        let zeros = (0..n)
            .filter(|&i| {
                aggregate_label_stochastic(1, 0, 0.4, keyed_uniform(3, i)).unwrap() == 0
            })
            .count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.4).abs() < 0.01, "{frac}");
    }

    #[test]
    fn weights() {
        assert_eq!(multitask_weight(1, 0, 0.3).unwrap(), 0.3);
        assert_eq!(multitask_weight(1, 1, 0.3).unwrap(), 1.0);
        assert_eq!(multitask_weight(0, 0, 0.3).unwrap(), 1.0);
        assert!(multitask_weight(1, 0, 0.0).unwrap_err().is_config());
        assert!(multitask_weight(0, 1, 0.3).is_err());
    }

    fn funnel_dataset() -> Dataset {
        let mut records = Vec::new();
        for i in 0..300 {
            let (c, v) = match i % 3 {
                0 => (0, 0),
                1 => (1, 0),
                _ => (1, 1),
            };
            records.push(record(0, 1, c, v));
        }
        Dataset::new(records, BucketLayout::default()).unwrap()
    }

    #[test]
    fn off_mode_is_identity() {
        let ds = funnel_dataset();
        let (labels, weights) = apply_multitask(&ds, &MultiTaskConfig::off()).unwrap();
        assert!(labels.iter().zip(&ds.records).all(|(l, r)| *l == r.click));
        assert!(weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn stochastic_boundaries_collapse() {
        let ds = funnel_dataset();
        let cfg = |a| MultiTaskConfig {
            mode: MultiTaskMode::StochasticAggregation,
            a,
            seed: 9,
        };
        let (l0, w0) = apply_multitask(&ds, &cfg(0.0)).unwrap();
        assert!(l0.iter().zip(&ds.records).all(|(l, r)| *l == r.click));
        assert!(w0.iter().all(|&w| w == 1.0));
        let (l1, _) = apply_multitask(&ds, &cfg(1.0)).unwrap();
        assert!(l1.iter().zip(&ds.records).all(|(l, r)| *l == r.conversion));
        assert_eq!(apply_multitask(&ds, &cfg(0.5)).unwrap(), apply_multitask(&ds, &cfg(0.5)).unwrap());
    }

    #[test]
    fn instance_weighting_dims_clicked_unconverted() {
        let ds = funnel_dataset();
        let cfg = MultiTaskConfig {
            mode: MultiTaskMode::InstanceWeighting,
            a: 0.25,
            seed: 0,
        };
        let (labels, weights) = apply_multitask(&ds, &cfg).unwrap();
        for ((l, w), r) in labels.iter().zip(&weights).zip(&ds.records) {
            assert_eq!(*l, r.click);
            let expected = if r.click == 1 && r.conversion == 0 { 0.25 } else { 1.0 };
            assert_eq!(*w, expected);
        }
        let bad = MultiTaskConfig { a: 0.0, ..cfg };
        assert!(apply_multitask(&ds, &bad).unwrap_err().is_config());
    }

    #[test]
    fn config_json_shape() {
        let cfg: MultiTaskConfig =
            serde_json::from_str(r#"{"mode":"stochastic_aggregation","a":0.4,"seed":7}"#).unwrap();
        assert_eq!(cfg.mode, MultiTaskMode::StochasticAggregation);
        assert!(serde_json::from_str::<MultiTaskConfig>(r#"{"mode":"off","a":1.5}"#)
            .unwrap()
            .validate()
            .is_err());
    }
}
