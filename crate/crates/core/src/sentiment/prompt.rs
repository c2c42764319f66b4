use sha2::{Digest, Sha256};

use super::{Result, SentimentError};
use crate::data::NewsItem;

pub const PROMPT_TEMPLATE: &str = include_str!("../../resources/prompt_v1.txt");
pub const PROMPT_VERSION: &str = "v1";
pub const DEFAULT_CHAR_BUDGET: usize = 24_000;
pub const DEFAULT_ASSET: &str = "Bitcoin (BTC)";
const ELLIPSIS: char = '…';

/// A rendered prompt and the items it numbers (1-based, in order).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub items: Vec<NewsItem>,
    pub rendered_prompt: String,
    pub char_budget: usize,
    pub prompt_hash: String,
}

fn sha_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn prompt_hash(rendered: &str) -> String {
    sha_hex(&[rendered])
}

/// Hash of the template text and its version tag.
pub fn template_hash() -> String {
    sha_hex(&[PROMPT_VERSION, "\n", PROMPT_TEMPLATE])[..16].to_string()
}

fn truncate_words(body: &str, cap: usize) -> String {
    if body.chars().count() <= cap {
        return body.to_string();
    }
    if cap == 0 {
        return String::new();
    }
    let head: String = body.chars().take(cap).collect();
    let cut = match head.rfind(char::is_whitespace) {
        Some(i) if i > 0 => &head[..i],
        _ => head.as_str(),
    };
    let mut out = cut.trim_end().to_string();
    out.push(ELLIPSIS);
    out
}

fn render(items: &[NewsItem], asset: &str, body_cap: Option<usize>) -> String {
    let mut list = String::new();
    for (i, item) in items.iter().enumerate() {
        list.push_str(&format!("{}. Title: {}\n", i + 1, item.title.trim()));
        let body = match body_cap {
            Some(cap) => truncate_words(item.body.trim(), cap),
            None => item.body.trim().to_string(),
        };
        if !body.is_empty() {
            list.push_str(&format!("   Body: {body}\n"));
        }
    }
    PROMPT_TEMPLATE.replace("{asset}", asset).replace("{items}", list.trim_end())
}

/// Renders the scoring prompt for `items`. Bodies are cut at word
/// boundaries, longest first, until the prompt fits `char_budget`.
pub fn build_prompt(items: &[NewsItem], asset: &str, char_budget: usize) -> Result<ScoreBatch> {
    if items.is_empty() {
        return Err(SentimentError::EmptyBatch);
    }
    let fits = |s: &str| s.chars().count() <= char_budget;
    let mut rendered = render(items, asset, None);
    if !fits(&rendered) {
        let longest = items.iter().map(|i| i.body.trim().chars().count()).max().unwrap_or(0);
        if !fits(&render(items, asset, Some(0))) {
            let worst = items
                .iter()
                .max_by_key(|i| i.title.chars().count())
                .expect("non-empty batch");
            return Err(SentimentError::Budget {
                id: worst.id.clone(),
                budget: char_budget,
            });
        }
        // largest per-body cap that still fits
        let (mut lo, mut hi) = (0, longest);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if fits(&render(items, asset, Some(mid))) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        rendered = render(items, asset, Some(lo));
    }
    Ok(ScoreBatch {
        items: items.to_vec(),
        prompt_hash: prompt_hash(&rendered),
        rendered_prompt: rendered,
        char_budget,
    })
}

/// Greedy packing: append items to the current batch while its untruncated
/// prompt fits the budget. An item too large on its own gets a batch to
/// itself and is truncated by [`build_prompt`].
pub fn pack_batches(items: &[NewsItem], asset: &str, char_budget: usize) -> Vec<Vec<NewsItem>> {
    let mut batches = Vec::new();
    let mut current: Vec<NewsItem> = Vec::new();
    for item in items {
        current.push(item.clone());
        if current.len() > 1 && render(&current, asset, None).chars().count() > char_budget {
            let last = current.pop().expect("just pushed");
            batches.push(std::mem::take(&mut current));
            current.push(last);
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}
