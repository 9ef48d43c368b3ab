//! Historical views/clicks/CTR per item at page, module and bucket level.
//!
//! Tables only ever see records strictly before their `as_of_day`, and a
//! record can only be featurized by a table no newer than its own day.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BucketLayout, Dataset, ImpressionRecord, ModuleKind};
use crate::error::{Error, Result};

/// Number of features appended to the base vector.
pub const HISTORY_FEATURES: usize = 9;
/// Offset of the bucket-level block inside the appended features.
pub const BUCKET_BLOCK: std::ops::Range<usize> = 6..9;

pub const DEFAULT_ALPHA: f64 = 10.0;
pub const DEFAULT_WINDOW_DAYS: u32 = 23;

/// `ceil(position / group_size)`.
pub fn assign_bucket(position: u32, layout: &BucketLayout) -> Result<u32> {
    if position < 1 || position > layout.max_position {
        return Err(Error::Validation(format!(
            "position {position} outside 1..={}",
            layout.max_position
        )));
    }
    Ok(position.div_ceil(layout.group_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryLevel {
    Page,
    Module,
    Bucket,
}

impl fmt::Display for HistoryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HistoryLevel::Page => "page",
            HistoryLevel::Module => "module",
            HistoryLevel::Bucket => "bucket",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryKey {
    pub item_id: String,
    pub level: HistoryLevel,
    /// Empty for page, the module name for module, `module:bucket` for bucket.
    pub level_key: String,
}

impl HistoryKey {
    pub fn page(item_id: &str) -> Self {
        HistoryKey {
            item_id: item_id.to_owned(),
            level: HistoryLevel::Page,
            level_key: String::new(),
        }
    }

    pub fn module(item_id: &str, module: ModuleKind) -> Self {
        HistoryKey {
            item_id: item_id.to_owned(),
            level: HistoryLevel::Module,
            level_key: module.as_str().to_owned(),
        }
    }

    pub fn bucket(item_id: &str, module: ModuleKind, bucket: u32) -> Self {
        HistoryKey {
            item_id: item_id.to_owned(),
            level: HistoryLevel::Bucket,
            level_key: format!("{module}:{bucket}"),
        }
    }

    fn all_for(record: &ImpressionRecord, layout: &BucketLayout) -> Result<[HistoryKey; 3]> {
        let bucket = assign_bucket(record.position, layout)?;
        Ok([
            HistoryKey::page(&record.item_id),
            HistoryKey::module(&record.item_id, record.module_kind),
            HistoryKey::bucket(&record.item_id, record.module_kind, bucket),
        ])
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.level {
            HistoryLevel::Page => self.level_key.is_empty(),
            HistoryLevel::Module => self.level_key.parse::<ModuleKind>().is_ok(),
            HistoryLevel::Bucket => self
                .level_key
                .split_once(':')
                .is_some_and(|(m, b)| m.parse::<ModuleKind>().is_ok() && b.parse::<u32>().is_ok_and(|b| b >= 1)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "level_key `{}` does not match level {}",
                self.level_key, self.level
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub views: u64,
    pub clicks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryStats {
    pub views: u64,
    pub clicks: u64,
    pub smoothed_ctr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFeatureTable {
    pub as_of_day: u32,
    pub window_days: u32,
    pub alpha: f64,
    pub prior: f64,
    pub layout: BucketLayout,
    counts: BTreeMap<HistoryKey, Counts>,
}

impl HistoryFeatureTable {
    fn smooth(&self, c: Counts) -> f64 {
        (c.clicks as f64 + self.alpha * self.prior) / (c.views as f64 + self.alpha)
    }

    /// Stats for a key; absent keys read as zero counts at the prior.
    pub fn lookup(&self, key: &HistoryKey) -> HistoryStats {
        let c = self.counts.get(key).copied().unwrap_or_default();
        HistoryStats {
            views: c.views,
            clicks: c.clicks,
            smoothed_ctr: self.smooth(c),
        }
    }

    pub fn get(&self, key: &HistoryKey) -> Option<HistoryStats> {
        self.counts.contains_key(key).then(|| self.lookup(key))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HistoryKey, HistoryStats)> + '_ {
        self.counts.iter().map(move |(k, &c)| {
            (
                k,
                HistoryStats {
                    views: c.views,
                    clicks: c.clicks,
                    smoothed_ctr: self.smooth(c),
                },
            )
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = TableFile {
            as_of_day: self.as_of_day,
            window_days: self.window_days,
            alpha: self.alpha,
            prior: self.prior,
            layout: self.layout,
            entries: self
                .counts
                .iter()
                .map(|(k, c)| TableEntry {
                    item_id: k.item_id.clone(),
                    level: k.level,
                    level_key: k.level_key.clone(),
                    views: c.views,
                    clicks: c.clicks,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TableFile = serde_json::from_str(&text)?;
        validate_smoothing(file.alpha, file.prior)?;
        let mut counts = BTreeMap::new();
        for e in file.entries {
            if e.clicks > e.views {
                return Err(Error::Validation(format!(
                    "history entry for {} has more clicks than views",
                    e.item_id
                )));
            }
            let key = HistoryKey {
                item_id: e.item_id,
                level: e.level,
                level_key: e.level_key,
            };
            key.validate()?;
            counts.insert(
                key,
                Counts {
                    views: e.views,
                    clicks: e.clicks,
                },
            );
        }
        Ok(HistoryFeatureTable {
            as_of_day: file.as_of_day,
            window_days: file.window_days,
            alpha: file.alpha,
            prior: file.prior,
            layout: file.layout,
            counts,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    item_id: String,
    level: HistoryLevel,
    level_key: String,
    views: u64,
    clicks: u64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    as_of_day: u32,
    window_days: u32,
    alpha: f64,
    prior: f64,
    layout: BucketLayout,
    entries: Vec<TableEntry>,
}

fn validate_smoothing(alpha: f64, prior: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("features.alpha", "must be > 0"));
    }
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::config("features.prior", format!("must be in (0, 1), got {prior}")));
    }
    Ok(())
}

/// Counts views and clicks of every record with day in
/// `[as_of_day - window_days, as_of_day)`.
///
/// `prior` defaults to the click rate inside the window, or 0.5 when the
/// window holds no records. A default prior is clamped into `[1e-6, 1 - 1e-6]`.
pub fn build_history_table(
    train: &Dataset,
    as_of_day: u32,
    window_days: u32,
    alpha: f64,
    prior: Option<f64>,
) -> Result<HistoryFeatureTable> {
    if window_days < 1 {
        return Err(Error::config("features.window_days", "must be >= 1"));
    }
    let start = as_of_day.saturating_sub(window_days);
    let mut counts: BTreeMap<HistoryKey, Counts> = BTreeMap::new();
    let (mut views, mut clicks) = (0u64, 0u64);
    for r in train
        .records
        .iter()
        .filter(|r| r.day >= start && r.day < as_of_day)
    {
        views += 1;
        clicks += r.click as u64;
        for key in HistoryKey::all_for(r, &train.layout)? {
            let c = counts.entry(key).or_default();
            c.views += 1;
            c.clicks += r.click as u64;
        }
    }
    let prior = match prior {
        Some(p) => p,
        None if views == 0 => 0.5,
        None => (clicks as f64 / views as f64).clamp(1e-6, 1.0 - 1e-6),
    };
    validate_smoothing(alpha, prior)?;
    Ok(HistoryFeatureTable {
        as_of_day,
        window_days,
        alpha,
        prior,
        layout: train.layout,
        counts,
    })
}

/// `base_features ++ [ln(1+views), ln(1+clicks), smoothed_ctr]` for page,
/// module and bucket levels, in that order.
pub fn extract_features(record: &ImpressionRecord, table: &HistoryFeatureTable) -> Result<Vec<f64>> {
    if record.day < table.as_of_day {
        return Err(Error::Leakage {
            record_day: record.day,
            as_of_day: table.as_of_day,
        });
    }
    let mut out = Vec::with_capacity(record.base_features.len() + HISTORY_FEATURES);
    out.extend_from_slice(&record.base_features);
    for key in HistoryKey::all_for(record, &table.layout)? {
        let s = table.lookup(&key);
        out.push((s.views as f64).ln_1p());
        out.push((s.clicks as f64).ln_1p());
        out.push(s.smoothed_ctr);
    }
    Ok(out)
}

/// Featurizes every record of `target` with a table built from `history`
/// as of the record's own day (one table per distinct day).
pub fn rolling_features(
    history: &Dataset,
    target: &Dataset,
    window_days: u32,
    alpha: f64,
    prior: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut tables: BTreeMap<u32, HistoryFeatureTable> = BTreeMap::new();
    for r in &target.records {
        if !tables.contains_key(&r.day) {
            tables.insert(r.day, build_history_table(history, r.day, window_days, alpha, prior)?);
        }
    }
    target
        .records
        .iter()
        .map(|r| extract_features(r, &tables[&r.day]))
        .collect()
}
