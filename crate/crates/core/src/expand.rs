//! LLM query expansion of the combined input.

use crate::caption::combined_text;
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::ingest::{hex_digest, ExpansionCache};
use crate::llm::{CompletionRequest, LlmClient, Message, TAG_EXPAND};
use crate::types::Query;
use crate::warnings::Warnings;

fn input_of(query: &Query) -> String {
    query
        .combined
        .clone()
        .unwrap_or_else(|| combined_text(&query.text, query.caption.as_deref()))
}

fn expand_request(config: &PipelineConfig, query_id: &str, input: &str) -> CompletionRequest {
    CompletionRequest::new(
        TAG_EXPAND,
        vec![Message::system(config.prompts.expand_system()), Message::user(input)],
    )
    .sampling(config.gen_temperature, config.gen_top_p, config.max_expansion_tokens)
    .for_query(query_id)
}

/// Cache key digest over everything that determines the expansion.
fn input_digest(config: &PipelineConfig, input: &str) -> String {
    let key = format!(
        "{}\u{0}{}\u{0}{}\u{0}{}\u{0}{}",
        config.prompts.expand_system(),
        input,
        config.gen_temperature,
        config.gen_top_p,
        config.max_expansion_tokens
    );
    hex_digest(key.as_bytes())
}

fn with_expansion(query: &Query, input: String, expanded: String) -> Query {
    let mut q = query.clone();
    q.combined = Some(input);
    q.expanded = Some(expanded);
    q
}

/// Expands every query through one bounded batch.
///
/// With expansion toggled off the expansion is the combined input itself. A
/// failed or empty expansion falls back to the combined input and records a
/// warning. Successful expansions are cached when `cache` is given.
pub async fn expand_all(
    client: &LlmClient,
    queries: &[Query],
    cache: Option<&ExpansionCache>,
    config: &PipelineConfig,
    warnings: &Warnings,
) -> Result<Vec<Query>> {
    let inputs: Vec<String> = queries.iter().map(input_of).collect();
    if !config.expand_on {
        return Ok(queries
            .iter()
            .zip(inputs)
            .map(|(q, x)| with_expansion(q, x.clone(), x))
            .collect());
    }
    let digests: Vec<String> = inputs.iter().map(|x| input_digest(config, x)).collect();
    let mut out: Vec<Option<Query>> = queries
        .iter()
        .zip(&inputs)
        .zip(&digests)
        .map(|((q, x), d)| {
            cache
                .and_then(|c| c.get(&q.id, d))
                .map(|e| with_expansion(q, x.clone(), e))
        })
        .collect();
    let pending: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
    let requests: Vec<CompletionRequest> = pending
        .iter()
        .map(|&i| expand_request(config, &queries[i].id, &inputs[i]))
        .collect();
    let results = client.run_batch(&requests, config.max_concurrency).await;
    for (&i, result) in pending.iter().zip(results) {
        let q = &queries[i];
        let expanded = match result {
            Ok(r) if !r.text.trim().is_empty() => {
                if let Some(c) = cache {
                    c.put(&q.id, &digests[i], &r.text)?;
                }
                r.text
            }
            Ok(_) => {
                warnings.push(TAG_EXPAND, Some(&q.id), "empty expansion, using the combined input");
                inputs[i].clone()
            }
            Err(e) => {
                warnings.push(TAG_EXPAND, Some(&q.id), format!("expansion failed, using the combined input: {e}"));
                inputs[i].clone()
            }
        };
        out[i] = Some(with_expansion(q, inputs[i].clone(), expanded));
    }
    Ok(out.into_iter().map(|q| q.expect("every query expanded")).collect())
}

/// Single-query form of [`expand_all`], without caching.
pub async fn expand(client: &LlmClient, query: &Query, config: &PipelineConfig, warnings: &Warnings) -> Result<Query> {
    let mut v = expand_all(client, std::slice::from_ref(query), None, config, warnings).await?;
    Ok(v.remove(0))
}
