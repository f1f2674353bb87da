//! Real-valued data sources for the data-analyzing action.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ActionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataValue {
    Number(f64),
    Text(String),
}

impl DataValue {
    fn parse(raw: &str) -> Self {
        let raw = raw.trim();
        match raw.parse::<f64>() {
            Ok(n) if n.is_finite() => DataValue::Number(n),
            _ => DataValue::Text(raw.to_string()),
        }
    }
}

impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataValue::Number(n) => write!(f, "{n}"),
            DataValue::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub key: String,
    pub value: DataValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<String>,
}

impl DataRecord {
    pub fn new(key: impl Into<String>, value: DataValue) -> Self {
        DataRecord { key: key.into(), value, as_of: None }
    }

    /// `key = value` with an `(as of ...)` suffix when dated.
    pub fn render(&self) -> String {
        match &self.as_of {
            Some(ts) => format!("{} = {} (as of {ts})", self.key, self.value),
            None => format!("{} = {}", self.key, self.value),
        }
    }
}

/// A snapshot of keyed records. Implement this to plug in other sources,
/// e.g. a generated-query backend over a database.
pub trait DataSource: Send + Sync {
    fn records(&self) -> Result<Vec<DataRecord>, ActionError>;
}

fn check_unique(records: &[DataRecord]) -> Result<(), ActionError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.key.as_str()) {
            return Err(ActionError::InvalidInput(format!("duplicate data key `{}`", r.key)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct StaticDataSource {
    records: Vec<DataRecord>,
}

impl StaticDataSource {
    pub fn new(records: Vec<DataRecord>) -> Result<Self, ActionError> {
        check_unique(&records)?;
        Ok(StaticDataSource { records })
    }
}

impl DataSource for StaticDataSource {
    fn records(&self) -> Result<Vec<DataRecord>, ActionError> {
        Ok(self.records.clone())
    }
}

/// CSV with header `key,value[,as_of]`, read once at construction.
#[derive(Debug, Clone)]
pub struct CsvDataSource {
    inner: StaticDataSource,
}

impl CsvDataSource {
    pub fn from_path(path: &Path) -> Result<Self, ActionError> {
        let fail = |msg: String| ActionError::RetrievalFailed(format!("data source {}: {msg}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| fail(e.to_string()))?;
        let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
        let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let (key_col, value_col) = match (column("key"), column("value")) {
            (Some(k), Some(v)) => (k, v),
            _ => return Err(fail("header must contain `key` and `value`".into())),
        };
        let as_of_col = column("as_of");
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| fail(e.to_string()))?;
            let line = i + 2;
            let key = row.get(key_col).filter(|k| !k.is_empty()).ok_or_else(|| fail(format!("line {line}: empty key")))?;
            let value = row.get(value_col).ok_or_else(|| fail(format!("line {line}: missing value")))?;
            let as_of = as_of_col.and_then(|c| row.get(c)).filter(|s| !s.is_empty()).map(str::to_string);
            records.push(DataRecord { key: key.to_string(), value: DataValue::parse(value), as_of });
        }
        let inner = StaticDataSource::new(records).map_err(|e| fail(e.to_string()))?;
        Ok(CsvDataSource { inner })
    }
}

impl DataSource for CsvDataSource {
    fn records(&self) -> Result<Vec<DataRecord>, ActionError> {
        self.inner.records()
    }
}

/// GET endpoint answering `{"key": .., "value": ..}` or an array of those.
pub struct HttpDataSource {
    endpoint: String,
    client: Client,
}

impl HttpDataSource {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ActionError> {
        let endpoint = endpoint.into();
        url::Url::parse(&endpoint).map_err(|e| ActionError::InvalidInput(format!("data endpoint `{endpoint}`: {e}")))?;
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ActionError::InvalidInput(e.to_string()))?;
        Ok(HttpDataSource { endpoint, client })
    }
}

pub(crate) fn parse_records_json(body: &str) -> Result<Vec<DataRecord>, ActionError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ActionError::RetrievalFailed(format!("data response is not JSON: {e}")))?;
    let items = match value {
        Value::Array(items) => items,
        other => vec![other],
    };
    let records = items
        .into_iter()
        .map(|item| {
            let key = item.get("key").and_then(Value::as_str).filter(|k| !k.is_empty());
            let value = match item.get("value") {
                Some(Value::Number(n)) => n.as_f64().map(DataValue::Number),
                Some(Value::String(s)) => Some(DataValue::Text(s.clone())),
                _ => None,
            };
            match (key, value) {
                (Some(key), Some(value)) => Ok(DataRecord {
                    key: key.to_string(),
                    value,
                    as_of: item.get("as_of").and_then(Value::as_str).map(str::to_string),
                }),
                _ => Err(ActionError::RetrievalFailed(format!("bad data record {item}"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_unique(&records).map_err(|e| ActionError::RetrievalFailed(e.to_string()))?;
    Ok(records)
}

impl DataSource for HttpDataSource {
    fn records(&self) -> Result<Vec<DataRecord>, ActionError> {
        let response = self
            .client
            .get(&self.endpoint)
            .send()
            .map_err(|e| ActionError::RetrievalFailed(format!("GET {}: {e}", self.endpoint)))?;
        if !response.status().is_success() {
            return Err(ActionError::RetrievalFailed(format!("GET {}: HTTP {}", self.endpoint, response.status())));
        }
        let body = response
            .text()
            .map_err(|e| ActionError::RetrievalFailed(format!("GET {}: {e}", self.endpoint)))?;
        parse_records_json(&body)
    }
}
