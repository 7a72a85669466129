//! Token and money accounting for translator and describer calls.
//!
//! Amounts are kept as integer pico-dollars: a rate given in dollars per
//! million tokens with at most six decimals times an integer token count is
//! always a whole number of pico-dollars, so sums never drift.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use parking_lot::Mutex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::TokenUsage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no price configured for model `{0}`")]
    UnknownModel(String),
    #[error("invalid price `{0}`: expected a nonnegative decimal with at most 6 fractional digits")]
    InvalidRate(String),
}

const PICO_PER_MICRO: u128 = 1_000_000;

/// An exact dollar amount in units of 1e-12 USD.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(u128);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub fn from_pico(pico: u128) -> Self {
        Usd(pico)
    }

    pub fn pico(self) -> u128 {
        self.0
    }

    /// Dollars rounded half-up to six decimals, as text.
    pub fn to_fixed6(self) -> String {
        let micro = (self.0 + PICO_PER_MICRO / 2) / PICO_PER_MICRO;
        format!("{}.{:06}", micro / 1_000_000, micro % 1_000_000)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 * 1e-12
    }
}

impl std::ops::Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.to_fixed6())
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_fixed6())
    }
}

/// Parses a decimal string such as `"0.15"` into micro-units.
pub fn parse_micros(text: &str) -> Result<u64, CostError> {
    let bad = || CostError::InvalidRate(text.to_string());
    let t = text.trim();
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if int.is_empty() && frac.is_empty()
        || frac.len() > 6
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac: u64 = format!("{frac:0<6}").parse().map_err(|_| bad())?;
    int.checked_mul(1_000_000)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(bad)
}

fn format_micros(m: u64) -> String {
    let s = format!("{}.{:06}", m / 1_000_000, m % 1_000_000);
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

/// A per-million-token rate held in micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate(u64);

impl Rate {
    pub fn from_micros(m: u64) -> Self {
        Rate(m)
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl std::str::FromStr for Rate {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_micros(s).map(Rate)
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_micros(self.0))
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            // shortest round-trip form, so 0.15 stays "0.15"
            Raw::Float(f) => format!("{f}"),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1m: Rate,
    pub output_per_1m: Rate,
}

impl ModelPrice {
    pub fn new(input: &str, output: &str) -> Result<Self, CostError> {
        Ok(Self {
            input_per_1m: input.parse()?,
            output_per_1m: output.parse()?,
        })
    }

    pub const FREE: ModelPrice = ModelPrice {
        input_per_1m: Rate(0),
        output_per_1m: Rate(0),
    };
}

/// Model id to per-million-token rates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, ModelPrice>);

impl Default for PriceTable {
    /// OpenAI list prices for the translator models.
    fn default() -> Self {
        let rows = [
            ("gpt-4o-mini", "0.15", "0.60"),
            ("gpt-4o", "2.50", "10.00"),
            ("gpt-4-turbo", "10.00", "30.00"),
        ];
        PriceTable(
            rows.into_iter()
                .map(|(m, i, o)| (m.to_string(), ModelPrice::new(i, o).expect("valid rate")))
                .collect(),
        )
    }
}

impl PriceTable {
    pub fn empty() -> Self {
        PriceTable(BTreeMap::new())
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: ModelPrice) {
        self.0.insert(model_id.into(), price);
    }

    /// Adds a zero rate unless the model already has a price.
    pub fn insert_free(&mut self, model_id: impl Into<String>) {
        self.0.entry(model_id.into()).or_insert(ModelPrice::FREE);
    }

    pub fn extend(&mut self, other: &PriceTable) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelPrice> {
        self.0.get(model_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ModelPrice)> {
        self.0.iter()
    }
}

pub fn cost_usd(usage: &TokenUsage, prices: &PriceTable) -> Result<Usd, CostError> {
    let price = prices
        .get(&usage.model_id)
        .ok_or_else(|| CostError::UnknownModel(usage.model_id.clone()))?;
    // tokens * ($ per 1M) / 1e6 = tokens * (micro-$ per 1M) * 1e-12 $
    let pico = usage.prompt_tokens as u128 * price.input_per_1m.0 as u128
        + usage.completion_tokens as u128 * price.output_per_1m.0 as u128;
    Ok(Usd(pico))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub video_id: String,
    pub stage: String,
    pub usage: TokenUsage,
}

/// Append-only usage log, safe to share between clip workers.
#[derive(Debug, Default)]
pub struct Ledger {
    records: Mutex<Vec<LedgerRecord>>,
}

#[derive(Serialize, Deserialize)]
struct LedgerFile {
    records: Vec<LedgerRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<LedgerRecord>) -> Self {
        Self {
            records: Mutex::new(records),
        }
    }

    pub fn record(&self, video_id: &str, stage: &str, usage: TokenUsage) {
        self.records.lock().push(LedgerRecord {
            video_id: video_id.to_string(),
            stage: stage.to_string(),
            usage,
        });
    }

    pub fn snapshot(&self) -> Vec<LedgerRecord> {
        self.records.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.lock().is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&LedgerFile {
            records: self.snapshot(),
        })
        .expect("ledger serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let file: LedgerFile = serde_json::from_str(text)?;
        Ok(Self::from_records(file.records))
    }

    pub fn total(&self, prices: &PriceTable) -> Result<Usd, CostError> {
        self.snapshot().iter().map(|r| cost_usd(&r.usage, prices)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VideoCost {
    pub video_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usd: Usd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub per_video: Vec<VideoCost>,
    pub total: Usd,
    /// Mean cost per video; `None` for an empty ledger.
    pub mean_per_video: Option<Usd>,
}

/// Groups costs by video in order of first appearance.
pub fn per_video_cost(records: &[LedgerRecord], prices: &PriceTable) -> Result<CostReport, CostError> {
    let mut per_video: Vec<VideoCost> = Vec::new();
    for r in records {
        let usd = cost_usd(&r.usage, prices)?;
        let entry = match per_video.iter_mut().position(|v| v.video_id == r.video_id) {
            Some(i) => &mut per_video[i],
            None => {
                per_video.push(VideoCost {
                    video_id: r.video_id.clone(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    usd: Usd::ZERO,
                });
                per_video.last_mut().expect("just pushed")
            }
        };
        entry.prompt_tokens += r.usage.prompt_tokens;
        entry.completion_tokens += r.usage.completion_tokens;
        entry.usd += usd;
    }
    let total: Usd = per_video.iter().map(|v| v.usd).sum();
    let mean_per_video =
        (!per_video.is_empty()).then(|| Usd(total.0 / per_video.len() as u128));
    Ok(CostReport {
        per_video,
        total,
        mean_per_video,
    })
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let width = self
            .per_video
            .iter()
            .map(|v| v.video_id.len())
            .max()
            .unwrap_or(0)
            .max("mean/video".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  {:>12}",
            "video", "prompt_tok", "compl_tok", "usd"
        );
        for v in &self.per_video {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12}  {:>12}  {:>12}",
                v.video_id,
                v.prompt_tokens,
                v.completion_tokens,
                v.usd.to_fixed6()
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}  {:>12}", "total", "", "", self.total.to_fixed6());
        let mean = self
            .mean_per_video
            .map_or_else(|| "-".to_string(), |m| m.to_fixed6());
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}  {:>12}", "mean/video", "", "", mean);
        out
    }
}
