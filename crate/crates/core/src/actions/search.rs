//! Search clients for the web-querying action.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ActionError;

pub const SEARCH_KEY_ENV: &str = "COA_SEARCH_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_content: Option<String>,
}

impl SearchResult {
    pub fn validate(&self) -> Result<(), ActionError> {
        url::Url::parse(&self.url)
            .map(|_| ())
            .map_err(|e| ActionError::InvalidInput(format!("search result url `{}`: {e}", self.url)))
    }
}

pub trait SearchClient: Send + Sync {
    /// Up to `limit` results for `query`, best first.
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, ActionError>;

    /// Visible text of the result's page.
    fn fetch_content(&self, result: &SearchResult) -> Result<String, ActionError> {
        result
            .page_content
            .clone()
            .ok_or_else(|| ActionError::RetrievalFailed(format!("no content for {}", result.url)))
    }
}

#[derive(Deserialize)]
struct FixtureLine {
    query: String,
    results: Vec<SearchResult>,
}

/// Canned results keyed by exact query, loaded from JSON lines of
/// `{"query": ..., "results": [{"title", "snippet", "url", "page_content"}]}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    entries: HashMap<String, Vec<SearchResult>>,
}

impl FixtureSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, results: Vec<SearchResult>) {
        self.entries.insert(query.into().trim().to_string(), results);
    }

    pub fn from_path(path: &Path) -> Result<Self, ActionError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ActionError::RetrievalFailed(format!("cannot read search fixture {}: {e}", path.display())))?;
        let mut fixture = FixtureSearch::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureLine = serde_json::from_str(line)
                .map_err(|e| ActionError::InvalidInput(format!("{} line {}: {e}", path.display(), i + 1)))?;
            for r in &entry.results {
                r.validate()
                    .map_err(|e| ActionError::InvalidInput(format!("{} line {}: {e}", path.display(), i + 1)))?;
            }
            fixture.insert(entry.query, entry.results);
        }
        Ok(fixture)
    }

    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        keys.into_iter()
            .map(|k| serde_json::json!({ "query": k, "results": self.entries[k] }).to_string() + "\n")
            .collect()
    }
}

impl SearchClient for FixtureSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, ActionError> {
        Ok(self
            .entries
            .get(query.trim())
            .map(|r| r.iter().take(limit).cloned().collect())
            .unwrap_or_default())
    }
}

/// Spaces out requests to the same host.
#[derive(Debug)]
pub struct HostRateLimiter {
    min_interval: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl HostRateLimiter {
    /// `requests_per_second <= 0` disables limiting.
    pub fn new(requests_per_second: f64) -> Self {
        let min_interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        HostRateLimiter { min_interval, next_slot: Mutex::new(HashMap::new()) }
    }

    pub fn wait(&self, url: &str) {
        if self.min_interval.is_zero() {
            return;
        }
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default();
        let slot = {
            let mut slots = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = slots.get(&host).copied().filter(|s| *s > now).unwrap_or(now);
            slots.insert(host, slot + self.min_interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSearchSettings {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub requests_per_second: f64,
    pub max_page_chars: usize,
}

/// Client for a SERP-style JSON API: `GET endpoint?q=..&num=..&api_key=..`
/// answering `{"organic_results": [{"title", "snippet", "link"}]}`.
pub struct HttpSearch {
    settings: HttpSearchSettings,
    client: Client,
    limiter: HostRateLimiter,
}

impl HttpSearch {
    pub fn new(mut settings: HttpSearchSettings) -> Result<Self, ActionError> {
        url::Url::parse(&settings.endpoint)
            .map_err(|e| ActionError::InvalidInput(format!("search endpoint `{}`: {e}", settings.endpoint)))?;
        if settings.api_key.is_none() {
            settings.api_key = std::env::var(SEARCH_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
        }
        let client = Client::builder()
            .timeout(settings.timeout)
            .user_agent("coa/0.1")
            .build()
            .map_err(|e| ActionError::InvalidInput(format!("cannot build HTTP client: {e}")))?;
        let limiter = HostRateLimiter::new(settings.requests_per_second);
        Ok(HttpSearch { settings, client, limiter })
    }

    fn get_text(&self, url: &str, query: &[(&str, String)]) -> Result<String, ActionError> {
        self.limiter.wait(url);
        let response = self
            .client
            .get(url)
            .query(query)
            .send()
            .map_err(|e| ActionError::RetrievalFailed(format!("GET {url}: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ActionError::RetrievalFailed(format!("GET {url}: HTTP {status}")));
        }
        response
            .text()
            .map_err(|e| ActionError::RetrievalFailed(format!("GET {url}: {e}")))
    }
}

pub(crate) fn parse_serp(body: &str) -> Result<Vec<SearchResult>, ActionError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ActionError::RetrievalFailed(format!("search response is not JSON: {e}")))?;
    let items = value
        .get("organic_results")
        .or_else(|| value.get("results"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let text = |item: &Value, key: &str| item.get(key).and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(items
        .iter()
        .map(|item| SearchResult {
            title: text(item, "title"),
            snippet: text(item, "snippet"),
            url: item
                .get("link")
                .or_else(|| item.get("url"))
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            page_content: None,
        })
        .filter(|r| r.validate().is_ok())
        .collect())
}

impl SearchClient for HttpSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, ActionError> {
        let mut params = vec![("q", query.to_string()), ("num", limit.to_string())];
        if let Some(key) = &self.settings.api_key {
            params.push(("api_key", key.clone()));
        }
        let body = self.get_text(&self.settings.endpoint, &params)?;
        let mut results = parse_serp(&body)?;
        results.truncate(limit);
        Ok(results)
    }

    fn fetch_content(&self, result: &SearchResult) -> Result<String, ActionError> {
        if let Some(content) = &result.page_content {
            return Ok(content.clone());
        }
        let html = self.get_text(&result.url, &[])?;
        Ok(html_to_text(&html).chars().take(self.settings.max_page_chars).collect())
    }
}

fn decode_entity(entity: &str) -> Option<char> {
    match entity {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" => Some(' '),
        _ => {
            let num = entity.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

/// Reduces HTML to its visible text: tags dropped, `<script>`/`<style>`
/// bodies and comments removed, common entities decoded, whitespace collapsed.
pub fn html_to_text(html: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let mut out = String::with_capacity(html.len() / 2);
    let mut i = 0;
    while i < html.len() {
        let rest = &html[i..];
        if rest.starts_with("<!--") {
            i = lower[i..].find("-->").map(|p| i + p + 3).unwrap_or(html.len());
            out.push(' ');
        } else if rest.starts_with('<') {
            let tag_end = lower[i..].find('>').map(|p| i + p + 1).unwrap_or(html.len());
            let name: String = lower[i + 1..tag_end]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect();
            i = tag_end;
            if name == "script" || name == "style" {
                let close = format!("</{name}");
                i = lower[i..]
                    .find(&close)
                    .and_then(|p| lower[i + p..].find('>').map(|q| i + p + q + 1))
                    .unwrap_or(html.len());
            }
            out.push(' ');
        } else if let Some(entity) = rest.strip_prefix('&') {
            let decoded = entity
                .find(';')
                .filter(|p| *p <= 10)
                .and_then(|p| decode_entity(&entity[..p]).map(|c| (c, p + 2)));
            match decoded {
                Some((c, len)) => {
                    out.push(c);
                    i += len;
                }
                None => {
                    out.push('&');
                    i += 1;
                }
            }
        } else {
            let c = rest.chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}
