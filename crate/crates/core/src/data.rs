//! Impression records, bucket layouts and the JSONL log format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Base feature dimension used by the simulator unless configured otherwise.
/// Together with the nine history features this yields 30 model inputs.
pub const DEFAULT_FEATURE_DIM: usize = 21;

/// Where on the page an ad slot lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    /// Rows of a 2-d grid among the search results.
    InGrid,
    /// Scrollable ribbon below the search results.
    BelowGrid,
}

impl ModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::InGrid => "in_grid",
            ModuleKind::BelowGrid => "below_grid",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "in_grid" => Ok(ModuleKind::InGrid),
            "below_grid" => Ok(ModuleKind::BelowGrid),
            other => Err(format!("unknown module kind `{other}`")),
        }
    }
}

/// One impressed ad slot with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query_id: String,
    pub item_id: String,
    pub seller_id: String,
    pub day: u32,
    pub module_kind: ModuleKind,
    /// 1-based display slot.
    pub position: u32,
    #[serde(rename = "features")]
    pub base_features: Vec<f64>,
    pub cpc: f64,
    pub click: u8,
    pub conversion: u8,
}

impl ImpressionRecord {
    pub fn clicked(&self) -> bool {
        self.click == 1
    }

    pub fn converted(&self) -> bool {
        self.conversion == 1
    }

    /// Checks the record-level invariants. `dim` is the expected feature
    /// dimension, when known.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        if self.click > 1 || self.conversion > 1 {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        if self.conversion > self.click {
            return Err(Error::Validation("conversion without click".into()));
        }
        if self.position < 1 {
            return Err(Error::Validation("position must be >= 1".into()));
        }
        if !(self.cpc.is_finite() && self.cpc > 0.0) {
            return Err(Error::Validation(format!("cpc must be > 0, got {}", self.cpc)));
        }
        if let Some(d) = dim {
            if self.base_features.len() != d {
                return Err(Error::Validation(format!(
                    "expected {d} features, got {}",
                    self.base_features.len()
                )));
            }
        }
        if let Some(i) = self.base_features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("feature {i} is not finite")));
        }
        Ok(())
    }
}

/// Coarse grouping of positions into similarly-viewable buckets
/// (grid rows, or carousel batches).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketLayout {
    pub module_kind: ModuleKind,
    pub group_size: u32,
    pub max_position: u32,
}

impl BucketLayout {
    pub fn new(module_kind: ModuleKind, group_size: u32, max_position: u32) -> Result<Self> {
        let layout = BucketLayout {
            module_kind,
            group_size,
            max_position,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 1 {
            return Err(Error::config("layout.group_size", "must be >= 1"));
        }
        if self.max_position < 1 {
            return Err(Error::config("layout.max_position", "must be >= 1"));
        }
        Ok(())
    }

    pub fn num_buckets(&self) -> u32 {
        self.max_position.div_ceil(self.group_size)
    }
}

impl Default for BucketLayout {
    fn default() -> Self {
        BucketLayout {
            module_kind: ModuleKind::InGrid,
            group_size: 4,
            max_position: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImpressionRecord>,
    pub layout: BucketLayout,
}

impl Dataset {
    /// Builds a dataset, validating every record against the layout and a
    /// common feature dimension.
    pub fn new(records: Vec<ImpressionRecord>, layout: BucketLayout) -> Result<Self> {
        layout.validate()?;
        let dim = records.first().map(|r| r.base_features.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(dim)
                .map_err(|e| Error::Validation(format!("record {i}: {e}")))?;
            if r.position > layout.max_position {
                return Err(Error::Validation(format!(
                    "record {i}: position {} exceeds max_position {}",
                    r.position, layout.max_position
                )));
            }
        }
        Ok(Dataset { records, layout })
    }

    pub fn empty(layout: BucketLayout) -> Self {
        Dataset {
            records: Vec::new(),
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Base feature dimension, or `None` for an empty dataset.
    pub fn feature_dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.base_features.len())
    }

    pub fn max_day(&self) -> Option<u32> {
        self.records.iter().map(|r| r.day).max()
    }

    /// Partitions by day: records with `day < train_days` go to the first
    /// output, the rest to the second. Order is preserved in both.
    pub fn split_by_day(&self, train_days: u32) -> Result<(Dataset, Dataset)> {
        if train_days == 0 {
            return Err(Error::config("train_days", "must be > 0"));
        }
        let (train, test): (Vec<_>, Vec<_>) = self
            .records
            .iter()
            .cloned()
            .partition(|r| r.day < train_days);
        Ok((
            Dataset {
                records: train,
                layout: self.layout,
            },
            Dataset {
                records: test,
                layout: self.layout,
            },
        ))
    }
}

const RECORD_KEYS: [&str; 10] = [
    "query_id",
    "item_id",
    "seller_id",
    "day",
    "module_kind",
    "position",
    "features",
    "cpc",
    "click",
    "conversion",
];

fn parse_record(line_no: usize, line: &str) -> Result<ImpressionRecord> {
    let perr = |field: &str, message: String| Error::Parse {
        line: line_no,
        field: field.to_string(),
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| perr("<record>", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(perr("<record>", "expected a JSON object".into()));
    };
    if let Some(k) = obj.keys().find(|k| !RECORD_KEYS.contains(&k.as_str())) {
        return Err(perr(k, "unknown key".into()));
    }

    fn get<'a>(obj: &'a Map<String, Value>, key: &str) -> std::result::Result<&'a Value, String> {
        obj.get(key).ok_or_else(|| "missing".to_string())
    }
    fn string(obj: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
        get(obj, key)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| "expected a string".into())
    }
    fn uint(obj: &Map<String, Value>, key: &str) -> std::result::Result<u32, String> {
        get(obj, key)?
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| "expected a non-negative integer".into())
    }
    fn binary(obj: &Map<String, Value>, key: &str) -> std::result::Result<u8, String> {
        match get(obj, key)?.as_u64() {
            Some(0) => Ok(0),
            Some(1) => Ok(1),
            _ => Err("expected 0 or 1".into()),
        }
    }

    let query_id = string(&obj, "query_id").map_err(|m| perr("query_id", m))?;
    let item_id = string(&obj, "item_id").map_err(|m| perr("item_id", m))?;
    let seller_id = string(&obj, "seller_id").map_err(|m| perr("seller_id", m))?;
    let day = uint(&obj, "day").map_err(|m| perr("day", m))?;
    let module_kind = string(&obj, "module_kind")
        .and_then(|s| s.parse::<ModuleKind>())
        .map_err(|m| perr("module_kind", m))?;
    let position = uint(&obj, "position").map_err(|m| perr("position", m))?;
    if position < 1 {
        return Err(perr("position", "must be >= 1".into()));
    }
    let base_features = get(&obj, "features")
        .and_then(|v| v.as_array().ok_or_else(|| "expected an array".to_string()))
        .and_then(|arr| {
            arr.iter()
                .enumerate()
                .map(|(i, v)| v.as_f64().ok_or_else(|| format!("entry {i} is not a number")))
                .collect::<std::result::Result<Vec<f64>, String>>()
        })
        .map_err(|m| perr("features", m))?;
    let cpc = get(&obj, "cpc")
        .and_then(|v| v.as_f64().ok_or_else(|| "expected a number".to_string()))
        .map_err(|m| perr("cpc", m))?;
    if !(cpc > 0.0) {
        return Err(perr("cpc", "must be > 0".into()));
    }
    let click = binary(&obj, "click").map_err(|m| perr("click", m))?;
    let conversion = binary(&obj, "conversion").map_err(|m| perr("conversion", m))?;
    if conversion > click {
        return Err(perr("conversion", "conversion without click".into()));
    }
    Ok(ImpressionRecord {
        query_id,
        item_id,
        seller_id,
        day,
        module_kind,
        position,
        base_features,
        cpc,
        click,
        conversion,
    })
}

/// Reads a JSONL impression log. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_logs(path: impl AsRef<Path>, layout: BucketLayout) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(line_no, &line)?;
        let d = *dim.get_or_insert(record.base_features.len());
        if record.base_features.len() != d {
            return Err(Error::Parse {
                line: line_no,
                field: "features".into(),
                message: format!("expected {d} entries, got {}", record.base_features.len()),
            });
        }
        if record.position > layout.max_position {
            return Err(Error::Parse {
                line: line_no,
                field: "position".into(),
                message: format!("exceeds layout max_position {}", layout.max_position),
            });
        }
        records.push(record);
    }
    Dataset::new(records, layout)
}

/// Writes one compact JSON object per line. Refuses datasets that violate
/// record invariants.
pub fn write_logs(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = dataset.feature_dim();
    for (i, r) in dataset.records.iter().enumerate() {
        r.validate(dim)
            .map_err(|e| Error::Validation(format!("record {i}: {e}")))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &dataset.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
