//! End-to-end orchestration: featurize, weight, train, score, rank and the
//! four-method ablation.
//!
//! Every method trains on the same split of the same logs. Held-out records
//! are scored from features only (no position, no weight) and evaluated
//! against labels redrawn from the simulator's truth with every slot viewed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::auction::{
    aggregate_slates, rank_slate, simulate_slate_metrics, Candidate, SlateReport, SquashConfig,
};
use crate::bucketfeat::{rolling_features, BUCKET_BLOCK, DEFAULT_ALPHA, DEFAULT_WINDOW_DAYS};
use crate::data::Dataset;
use crate::debias::{apply_debias_weights, fit_propensity, DebiasConfig, DebiasFunction, DebiasTerm, PropensityTable};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalReport};
use crate::learner::{predict, train, CtrModel, TrainConfig, TrainingInstance};
use crate::multitask::{apply_multitask, MultiTaskConfig};
use crate::simgen::{rescore_unbiased, GroundTruth, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasSettings {
    /// Used by the `train` subcommand; ablation methods follow their mask.
    pub enabled: bool,
    #[serde(flatten)]
    pub config: DebiasConfig,
    /// Alternatives the ablation runner selects from on validation days.
    /// Empty means `config` only.
    pub candidates: Vec<DebiasConfig>,
}

impl Default for DebiasSettings {
    fn default() -> Self {
        let term = |function, lambda| DebiasTerm { function, lambda };
        DebiasSettings {
            enabled: true,
            config: DebiasConfig::default(),
            candidates: vec![
                DebiasConfig::default(),
                DebiasConfig {
                    terms: vec![
                        term(DebiasFunction::inverse_propensity(), 0.5),
                        term(DebiasFunction::polynomial(0.0), 0.5),
                    ],
                    normalize_mean_one: true,
                },
                DebiasConfig::single(DebiasFunction::polynomial(1.0)),
                DebiasConfig::single(DebiasFunction::logarithmic(1.0)),
            ],
        }
    }
}

impl DebiasSettings {
    fn grid(&self) -> Vec<DebiasConfig> {
        if self.candidates.is_empty() {
            vec![self.config.clone()]
        } else {
            self.candidates.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiTaskSettings {
    #[serde(flatten)]
    pub config: MultiTaskConfig,
    /// Values of `a` the ablation runner selects from. Empty means `config.a`.
    pub a_grid: Vec<f64>,
}

impl Default for MultiTaskSettings {
    fn default() -> Self {
        MultiTaskSettings {
            config: MultiTaskConfig::default(),
            a_grid: vec![0.2, 0.4, 0.6, 0.8],
        }
    }
}

impl MultiTaskSettings {
    fn grid(&self) -> Vec<MultiTaskConfig> {
        if self.a_grid.is_empty() {
            vec![self.config]
        } else {
            self.a_grid
                .iter()
                .map(|&a| MultiTaskConfig { a, ..self.config })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SquashSettings {
    pub c: f64,
    /// Exponents tried on validation slates. Empty means `c` only.
    pub c_grid: Vec<f64>,
}

impl Default for SquashSettings {
    fn default() -> Self {
        SquashSettings {
            c: 1.0,
            c_grid: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub debias: DebiasSettings,
    pub multitask: MultiTaskSettings,
    pub train: TrainConfig,
    pub squash: SquashSettings,
    pub split_train_days: u32,
    pub window_days: u32,
    pub history_alpha: f64,
    /// Trailing training days held out for hyperparameter selection.
    pub validation_days: u32,
    /// Position whose bucket-level history is used when scoring: predictions
    /// are made as if the position were unknown, i.e. at this reference slot.
    pub reference_position: u32,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sim: SimConfig::default(),
            debias: DebiasSettings::default(),
            multitask: MultiTaskSettings::default(),
            train: TrainConfig::default(),
            squash: SquashSettings::default(),
            split_train_days: 23,
            window_days: DEFAULT_WINDOW_DAYS,
            history_alpha: DEFAULT_ALPHA,
            validation_days: 3,
            reference_position: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.debias.config.validate()?;
        for c in &self.debias.candidates {
            c.validate()?;
        }
        self.multitask.config.validate()?;
        for a in &self.multitask.a_grid {
            MultiTaskConfig {
                a: *a,
                ..self.multitask.config
            }
            .validate()?;
        }
        self.train.validate()?;
        SquashConfig { c: self.squash.c }.validate()?;
        for &c in &self.squash.c_grid {
            SquashConfig { c }.validate()?;
        }
        if self.split_train_days < 1 {
            return Err(Error::config("split_train_days", "must be >= 1"));
        }
        if self.window_days < 1 {
            return Err(Error::config("window_days", "must be >= 1"));
        }
        if !(self.history_alpha > 0.0) {
            return Err(Error::config("history_alpha", "must be > 0"));
        }
        if self.validation_days >= self.split_train_days {
            return Err(Error::config(
                "validation_days",
                "must be smaller than split_train_days",
            ));
        }
        if self.reference_position < 1 || self.reference_position > self.sim.layout.max_position {
            return Err(Error::config(
                "reference_position",
                "must lie in 1..=sim.layout.max_position",
            ));
        }
        Ok(())
    }
}

/// The four ablation methods. No other capability combination exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    AbDeb,
    AbMul,
    Prac,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Raw, Method::AbDeb, Method::AbMul, Method::Prac];

    pub fn debias(self) -> bool {
        matches!(self, Method::AbDeb | Method::Prac)
    }

    pub fn multitask(self) -> bool {
        matches!(self, Method::AbMul | Method::Prac)
    }

    pub fn squash(self) -> bool {
        self != Method::Raw
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::AbDeb => "abdeb",
            Method::AbMul => "abmul",
            Method::Prac => "prac",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Method::Raw),
            "abdeb" => Ok(Method::AbDeb),
            "abmul" => Ok(Method::AbMul),
            "prac" => Ok(Method::Prac),
            other => Err(Error::Usage(format!(
                "unknown method `{other}` (expected raw, abdeb, abmul or prac)"
            ))),
        }
    }
}

/// Row subset of the logs with its augmented features and evaluation labels.
#[derive(Debug, Clone)]
struct Slice {
    data: Dataset,
    /// Augmented features at the logged position (training).
    features: Vec<Vec<f64>>,
    /// Augmented features at the reference position (scoring).
    reference_features: Vec<Vec<f64>>,
    /// Labels redrawn from the truth with every slot viewed.
    unbiased_clicks: Vec<u8>,
    unbiased_conversions: Vec<u8>,
}

impl Slice {
    fn new(
        logs: &Dataset,
        features: &[Vec<f64>],
        reference_features: &[Vec<f64>],
        truth: &GroundTruth,
        seed: u64,
        keep: impl Fn(u32) -> bool,
    ) -> Result<Self> {
        let idx: Vec<usize> = (0..logs.len()).filter(|&i| keep(logs.records[i].day)).collect();
        let data = Dataset {
            records: idx.iter().map(|&i| logs.records[i].clone()).collect(),
            layout: logs.layout,
        };
        let unbiased = rescore_unbiased(&data, truth, seed)?;
        Ok(Slice {
            features: idx.iter().map(|&i| features[i].clone()).collect(),
            reference_features: idx.iter().map(|&i| reference_features[i].clone()).collect(),
            unbiased_clicks: unbiased.records.iter().map(|r| r.click).collect(),
            unbiased_conversions: unbiased.records.iter().map(|r| r.conversion).collect(),
            data,
        })
    }
}

/// Everything the methods share: splits, features, propensities.
#[derive(Debug, Clone)]
pub struct Prepared {
    truth: GroundTruth,
    train: Slice,
    test: Slice,
    inner_train: Slice,
    validation: Slice,
    prior: f64,
    propensity: Option<PropensityTable>,
    inner_propensity: Option<PropensityTable>,
    order_value: f64,
}

/// Evaluation labels get their own seed stream, distinct from the logs.
fn eval_seed(config: &PipelineConfig) -> u64 {
    config.sim.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

fn click_rate(data: &Dataset) -> f64 {
    let clicks = data.records.iter().filter(|r| r.clicked()).count();
    (clicks as f64 / data.len().max(1) as f64).clamp(1e-6, 1.0 - 1e-6)
}

/// Augmented features with the bucket block looked up at the reference
/// position, history drawn from `logs` before each record's day.
fn reference_features(config: &PipelineConfig, logs: &Dataset, prior: f64) -> Result<Vec<Vec<f64>>> {
    let mut at_reference = logs.clone();
    for r in &mut at_reference.records {
        r.position = config.reference_position;
    }
    rolling_features(logs, &at_reference, config.window_days, config.history_alpha, Some(prior))
}

/// Scores every record of `logs` the way the pipeline scores test records:
/// history from earlier days of the same logs, bucket block at the
/// reference position. The history prior is the click rate of the first
/// `split_train_days` days (all days if that slice is empty).
pub fn predict_logs(config: &PipelineConfig, logs: &Dataset, model: &CtrModel) -> Result<Vec<f64>> {
    let (head, _) = logs.split_by_day(config.split_train_days)?;
    let prior = click_rate(if head.is_empty() { logs } else { &head });
    reference_features(config, logs, prior)?
        .iter()
        .map(|f| predict(model, f))
        .collect()
}

pub fn prepare(config: &PipelineConfig, logs: &Dataset, truth: &GroundTruth) -> Result<Prepared> {
    config.validate()?;
    let split = config.split_train_days;
    let (train_ds, _) = logs.split_by_day(split)?;
    if train_ds.is_empty() {
        return Err(Error::InsufficientData("training split is empty".into()));
    }
    let prior = click_rate(&train_ds);
    // History for every record comes from the logs strictly before its day.
    let features = rolling_features(logs, logs, config.window_days, config.history_alpha, Some(prior))?;
    let reference_features = reference_features(config, logs, prior)?;
    let seed = eval_seed(config);
    let inner_split = split - config.validation_days;
    let train = Slice::new(logs, &features, &reference_features, truth, seed, |d| d < split)?;
    let test = Slice::new(logs, &features, &reference_features, truth, seed, |d| d >= split)?;
    let inner_train = Slice::new(logs, &features, &reference_features, truth, seed, |d| d < inner_split)?;
    let validation = Slice::new(logs, &features, &reference_features, truth, seed, |d| d >= inner_split && d < split)?;
    if test.data.is_empty() {
        return Err(Error::InsufficientData("test split is empty".into()));
    }
    Ok(Prepared {
        truth: truth.clone(),
        propensity: fit_propensity(&train.data).ok(),
        inner_propensity: fit_propensity(&inner_train.data).ok(),
        train,
        test,
        inner_train,
        validation,
        prior,
        order_value: config.sim.order_value,
    })
}

/// Hyperparameters a method ended up using.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub debias: Option<DebiasConfig>,
    pub multitask: MultiTaskConfig,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub offline: EvalReport,
    pub online: SlateReport,
    pub selection: Selection,
}

fn instances(
    slice: &Slice,
    debias: Option<&DebiasConfig>,
    multitask: &MultiTaskConfig,
    propensity: Option<&PropensityTable>,
    prior: f64,
) -> Result<Vec<TrainingInstance>> {
    let positional = match debias {
        Some(cfg) => {
            if cfg.needs_propensity() && propensity.is_none() {
                return Err(Error::InsufficientData(
                    "cannot estimate position propensities from the training logs".into(),
                ));
            }
            apply_debias_weights(&slice.data, cfg, propensity)?
        }
        None => vec![1.0; slice.data.len()],
    };
    let (labels, task_weights) = apply_multitask(&slice.data, multitask)?;
    Ok(slice
        .features
        .iter()
        .zip(labels)
        .zip(positional.iter().zip(&task_weights))
        .map(|((f, label), (wp, wt))| TrainingInstance {
            features: mask_features(f, debias.is_some(), prior),
            label,
            weight: wp * wt,
        })
        .collect())
}

/// Without de-biasing the bucket-level block is pinned to its cold-start
/// value, which the learner turns into zero coefficients.
fn mask_features(features: &[f64], keep_buckets: bool, prior: f64) -> Vec<f64> {
    let mut f = features.to_vec();
    if !keep_buckets {
        let base = f.len() - crate::bucketfeat::HISTORY_FEATURES;
        let block = &mut f[base + BUCKET_BLOCK.start..base + BUCKET_BLOCK.end];
        block.copy_from_slice(&[0.0, 0.0, prior]);
    }
    f
}

fn score(model: &CtrModel, slice: &Slice, keep_buckets: bool, prior: f64) -> Result<Vec<f64>> {
    slice
        .reference_features
        .iter()
        .map(|f| predict(model, &mask_features(f, keep_buckets, prior)))
        .collect()
}

fn offline(scores: &[f64], slice: &Slice) -> Result<EvalReport> {
    evaluate(scores, &slice.unbiased_clicks, &slice.unbiased_conversions)
}

/// Candidate sets per query: one candidate per distinct item, with pCTR the
/// mean prediction over that pair's records.
fn candidates_by_query(slice: &Slice, scores: &[f64], order_value: f64) -> BTreeMap<String, Vec<Candidate>> {
    let mut acc: BTreeMap<(String, String), (f64, usize, f64, String)> = BTreeMap::new();
    for (r, &s) in slice.data.records.iter().zip(scores) {
        let e = acc
            .entry((r.query_id.clone(), r.item_id.clone()))
            .or_insert((0.0, 0, r.cpc, r.seller_id.clone()));
        e.0 += s;
        e.1 += 1;
    }
    let mut out: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for ((q, item), (sum, n, cpc, seller)) in acc {
        out.entry(q).or_default().push(Candidate {
            item_id: item,
            seller_id: seller,
            pctr: sum / n as f64,
            cpc,
            expected_order_value: order_value,
        });
    }
    out
}

pub fn slate_report(
    candidates: &BTreeMap<String, Vec<Candidate>>,
    truth: &GroundTruth,
    layout: &crate::data::BucketLayout,
    c: f64,
) -> Result<SlateReport> {
    let squash = SquashConfig { c };
    let mut slates = Vec::with_capacity(candidates.len());
    for (q, cands) in candidates {
        let size = cands.len().min(layout.max_position as usize);
        let slate = rank_slate(cands, &squash, size)?;
        let m = simulate_slate_metrics(&slate, truth, q, layout)?;
        slates.push((slate, m));
    }
    aggregate_slates(&slates)
}

/// Validation objective for the squash exponent: `eCTR * ROAS`.
fn slate_objective(r: &SlateReport) -> f64 {
    r.ectr * r.roas.unwrap_or(0.0)
}

struct Fitted {
    model: CtrModel,
    debias: Option<DebiasConfig>,
    multitask: MultiTaskConfig,
}

fn fit(
    prepared: &Prepared,
    slice: &Slice,
    propensity: Option<&PropensityTable>,
    debias: Option<&DebiasConfig>,
    multitask: &MultiTaskConfig,
    train_cfg: &TrainConfig,
) -> Result<Fitted> {
    let data = instances(slice, debias, multitask, propensity, prepared.prior)?;
    Ok(Fitted {
        model: train(&data, train_cfg)?,
        debias: debias.cloned(),
        multitask: *multitask,
    })
}

/// Runs one method: selects its hyperparameters on the validation days,
/// retrains on the full training split and evaluates on the test split.
pub fn run_method(method: Method, config: &PipelineConfig, prepared: &Prepared) -> Result<(CtrModel, MethodReport)> {
    let debias_grid: Vec<Option<DebiasConfig>> = if method.debias() {
        config.debias.grid().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let task_grid: Vec<MultiTaskConfig> = if method.multitask() {
        config.multitask.grid()
    } else {
        vec![MultiTaskConfig::off()]
    };

    // Hyperparameter selection on validation days, scored against unbiased labels.
    let mut best: Option<(f64, Fitted)> = None;
    let single = debias_grid.len() * task_grid.len() == 1;
    for d in &debias_grid {
        for t in &task_grid {
            let fitted = fit(
                prepared,
                &prepared.inner_train,
                prepared.inner_propensity.as_ref(),
                d.as_ref(),
                t,
                &config.train,
            )?;
            if single && !method.squash() {
                best = Some((0.0, fitted));
                continue;
            }
            let s = score(&fitted.model, &prepared.validation, d.is_some(), prepared.prior)?;
            let auc = offline(&s, &prepared.validation)?.ctr_auroc;
            if best.as_ref().is_none_or(|(b, _)| auc > *b) {
                best = Some((auc, fitted));
            }
        }
    }
    let (_, chosen) = best.expect("non-empty grid");

    let c = if method.squash() && !config.squash.c_grid.is_empty() {
        let s = score(&chosen.model, &prepared.validation, chosen.debias.is_some(), prepared.prior)?;
        let cands = candidates_by_query(&prepared.validation, &s, prepared.order_value);
        let mut best_c = (f64::NEG_INFINITY, config.squash.c);
        for &c in &config.squash.c_grid {
            let r = slate_report(&cands, &prepared.truth, &prepared.validation.data.layout, c)?;
            let obj = slate_objective(&r);
            if obj > best_c.0 {
                best_c = (obj, c);
            }
        }
        best_c.1
    } else if method.squash() {
        config.squash.c
    } else {
        1.0
    };

    let final_fit = fit(
        prepared,
        &prepared.train,
        prepared.propensity.as_ref(),
        chosen.debias.as_ref(),
        &chosen.multitask,
        &config.train,
    )?;
    let keep = final_fit.debias.is_some();
    let scores = score(&final_fit.model, &prepared.test, keep, prepared.prior)?;
    let report = offline(&scores, &prepared.test)?;
    let cands = candidates_by_query(&prepared.test, &scores, prepared.order_value);
    let online = slate_report(&cands, &prepared.truth, &prepared.test.data.layout, c)?;
    Ok((
        final_fit.model,
        MethodReport {
            method,
            offline: report,
            online,
            selection: Selection {
                debias: final_fit.debias,
                multitask: final_fit.multitask,
                c,
            },
        },
    ))
}

/// Trains one model with the configuration's own switches (no masks, no
/// selection): de-bias weights when `debias.enabled`, the configured
/// multi-task mode, on the full training split.
pub fn train_configured(config: &PipelineConfig, prepared: &Prepared) -> Result<CtrModel> {
    let debias = config.debias.enabled.then_some(&config.debias.config);
    let data = instances(
        &prepared.train,
        debias,
        &config.multitask.config,
        prepared.propensity.as_ref(),
        prepared.prior,
    )?;
    train(&data, &config.train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<MethodReport>,
}

impl AblationTable {
    pub fn get(&self, method: Method) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<8}{:>12}{:>12}{:>14}{:>14}{:>10}{:>10}{:>10}{:>6}\n",
            "method", "ctr_auroc", "ctr_auprc", "ctcvr_auroc", "ctcvr_auprc", "eCTR", "eCPMV", "ROAS", "c"
        );
        for r in &self.rows {
            let o = &r.offline;
            let roas = r.online.roas.map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{:<8}{:>12.4}{:>12.4}{:>14.4}{:>14.6}{:>10.4}{:>10.2}{:>10}{:>6}\n",
                r.method.as_str(),
                o.ctr_auroc,
                o.ctr_auprc,
                o.ctcvr_auroc,
                o.ctcvr_auprc,
                r.online.ectr,
                r.online.ecpmv,
                roas,
                r.selection.c
            ));
        }
        out
    }
}

/// Runs all four methods on identical data.
pub fn run_ablation(config: &PipelineConfig, prepared: &Prepared) -> Result<(Vec<CtrModel>, AblationTable)> {
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for m in Method::ALL {
        let (model, report) = run_method(m, config, prepared)?;
        models.push(model);
        rows.push(report);
    }
    Ok((models, AblationTable { rows }))
}
