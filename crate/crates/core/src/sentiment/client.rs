use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{
    build_prompt, pack_batches, parse_scores, parse_scores_lenient, template_hash, ChatBackend, Result, ScoreBatch,
    ScoreCache, ScoredNews, SentimentError, TransportError, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET,
};
use crate::data::{NewsItem, NEUTRAL_SCORE};

#[derive(Clone, Debug)]
pub struct ScoreConfig {
    pub char_budget: usize,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// Extra attempts after a retryable transport failure.
    pub max_retries: u32,
    /// First backoff delay; doubles per attempt.
    pub backoff: Duration,
    pub asset: String,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            char_budget: DEFAULT_CHAR_BUDGET,
            max_in_flight: 2,
            max_retries: 3,
            backoff: Duration::from_millis(500),
            asset: DEFAULT_ASSET.to_string(),
        }
    }
}

fn call_with_retry(backend: &dyn ChatBackend, prompt: &str, cfg: &ScoreConfig) -> Result<String, TransportError> {
    let mut attempt = 0;
    loop {
        match backend.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(e) if e.retryable && attempt < cfg.max_retries => {
                let delay = cfg.backoff * 2u32.saturating_pow(attempt);
                log::warn!("transport error ({e}), retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Scores one batch. A response that fails to parse is re-requested once;
/// items still missing afterwards get the neutral score.
fn score_batch(backend: &dyn ChatBackend, batch: &ScoreBatch, cfg: &ScoreConfig) -> Result<Vec<(u8, u8)>, TransportError> {
    let n = batch.items.len();
    let first = call_with_retry(backend, &batch.rendered_prompt, cfg)?;
    let first_err = match parse_scores(&first, n) {
        Ok(scores) => return Ok(scores),
        Err(e) => e,
    };
    log::warn!("unparseable response for batch {}: {first_err}; retrying once", &batch.prompt_hash[..12]);
    let second = call_with_retry(backend, &batch.rendered_prompt, cfg)?;
    if let Ok(scores) = parse_scores(&second, n) {
        return Ok(scores);
    }
    let partial = parse_scores_lenient(&second, n);
    Ok(partial
        .into_iter()
        .zip(&batch.items)
        .map(|(p, item)| {
            p.unwrap_or_else(|| {
                log::warn!("news {} left unscored after retry; using neutral", item.id);
                (NEUTRAL_SCORE, NEUTRAL_SCORE)
            })
        })
        .collect())
}

/// Scores `items`, skipping those already in `cache`. New scores are
/// appended to the cache before this returns, including when some batches
/// fail. Output follows the order of `items`.
pub fn score_news(
    items: &[NewsItem],
    backend: &dyn ChatBackend,
    cache: &mut ScoreCache,
    cfg: &ScoreConfig,
) -> Result<Vec<ScoredNews>> {
    let model = backend.model_id().to_string();
    let tmpl = template_hash();
    let mut seen = HashSet::new();
    let misses: Vec<NewsItem> = items
        .iter()
        .filter(|i| cache.get(&i.id, &model, &tmpl).is_none() && seen.insert(i.id.clone()))
        .cloned()
        .collect();

    let batches = pack_batches(&misses, &cfg.asset, cfg.char_budget)
        .iter()
        .map(|b| build_prompt(b, &cfg.asset, cfg.char_budget))
        .collect::<Result<Vec<_>>>()?;
    if !batches.is_empty() {
        log::info!("scoring {} item(s) in {} batch(es)", misses.len(), batches.len());
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<Result<Vec<(u8, u8)>, TransportError>>>> =
        Mutex::new(vec![None; batches.len()]);
    let workers = cfg.max_in_flight.max(1).min(batches.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(batch) = batches.get(i) else { break };
                let res = score_batch(backend, batch, cfg);
                outcomes.lock().expect("no poisoned workers")[i] = Some(res);
            });
        }
    });

    // single writer
    let mut fresh = Vec::new();
    let mut unscored = Vec::new();
    let mut last_err = String::new();
    for (batch, outcome) in batches.iter().zip(outcomes.into_inner().expect("workers joined")) {
        match outcome.expect("every batch visited") {
            Ok(scores) => {
                for (item, (s, r)) in batch.items.iter().zip(scores) {
                    fresh.push(ScoredNews {
                        news_id: item.id.clone(),
                        sentiment: s,
                        risk: r,
                        model_id: model.clone(),
                        prompt_hash: batch.prompt_hash.clone(),
                        template_hash: tmpl.clone(),
                    });
                }
            }
            Err(e) => {
                last_err = e.to_string();
                unscored.extend(batch.items.iter().map(|i| i.id.clone()));
            }
        }
    }
    cache.insert_all(fresh)?;
    if !unscored.is_empty() {
        return Err(SentimentError::Transport { unscored, last: last_err });
    }

    let by_id: HashMap<&str, &ScoredNews> = items
        .iter()
        .filter_map(|i| cache.get(&i.id, &model, &tmpl).map(|s| (i.id.as_str(), s)))
        .collect();
    Ok(items.iter().map(|i| by_id[i.id.as_str()].clone()).collect())
}
