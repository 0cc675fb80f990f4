//! Image captioning and the combined question-plus-description input.

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::ingest::CaptionCache;
use crate::llm::{CompletionRequest, LlmClient, Message, TAG_CAPTION};
use crate::prompts::IMAGE_DESCRIPTION_PREFIX;
use crate::types::Query;
use crate::warnings::Warnings;

fn caption_request(config: &PipelineConfig, query_id: &str, image: &str) -> CompletionRequest {
    CompletionRequest::new(
        TAG_CAPTION,
        vec![
            Message::system(config.prompts.caption_system()),
            Message::user("Describe this image.").with_images(vec![image.to_string()]),
        ],
    )
    .sampling(config.caption_temperature, 1.0, config.caption_max_tokens)
    .for_query(query_id)
}

/// Returns `query` with its caption resolved.
///
/// Pre-supplied and cached captions cost nothing; otherwise each image is
/// captioned once (joined by blank lines) and the result cached. Text-only
/// queries pass through unchanged.
pub async fn caption_query(
    client: &LlmClient,
    query: &Query,
    cache: &CaptionCache,
    config: &PipelineConfig,
) -> Result<Query> {
    if let Some(q) = resolve_without_backend(query, cache) {
        return Ok(q);
    }
    let mut parts = Vec::with_capacity(query.image_refs.len());
    for image in &query.image_refs {
        let r = client
            .complete(&caption_request(config, &query.id, image))
            .await
            .map_err(|e| e.for_query(&query.id))?;
        parts.push(r.text);
    }
    store(query, parts, cache)
}

fn resolve_without_backend(query: &Query, cache: &CaptionCache) -> Option<Query> {
    if query.caption.as_deref().is_some_and(|c| !c.is_empty()) || !query.has_image() {
        return Some(query.clone());
    }
    cache.get(&query.id).map(|c| query.clone().with_caption(c))
}

fn store(query: &Query, parts: Vec<String>, cache: &CaptionCache) -> Result<Query> {
    let caption = parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n");
    cache.put(&query.id, &caption)?;
    Ok(query.clone().with_caption(caption))
}

/// Captions a query set through one bounded batch. A query whose captioning
/// fails keeps no caption and a warning is recorded.
pub async fn caption_all(
    client: &LlmClient,
    queries: &[Query],
    cache: &CaptionCache,
    config: &PipelineConfig,
    warnings: &Warnings,
) -> Result<Vec<Query>> {
    let mut out: Vec<Option<Query>> = queries.iter().map(|q| resolve_without_backend(q, cache)).collect();
    let mut requests = Vec::new();
    let mut owners = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        if out[i].is_none() {
            for image in &q.image_refs {
                requests.push(caption_request(config, &q.id, image));
                owners.push(i);
            }
        }
    }
    let mut results = client
        .run_batch(&requests, config.max_concurrency)
        .await
        .into_iter().zip(owners).peekable();
    while let Some((first, owner)) = results.next() {
        let mut slots = vec![first];
        while let Some((_, next_owner)) = results.peek() {
            if *next_owner != owner {
                break;
            }
            slots.push(results.next().unwrap().0);
        }
        let query = &queries[owner];
        match slots.into_iter().collect::<Result<Vec<_>>>() {
            Ok(parts) => out[owner] = Some(store(query, parts.into_iter().map(|r| r.text).collect(), cache)?),
            Err(e) => {
                warnings.push(TAG_CAPTION, Some(&query.id), format!("captioning failed, continuing without caption: {e}"));
                out[owner] = Some(query.clone());
            }
        }
    }
    Ok(out.into_iter().map(|q| q.expect("every query resolved")).collect())
}

/// Joins the question and caption into the combined input.
pub fn combine(query: &Query) -> Query {
    let mut q = query.clone();
    q.combined = Some(combined_text(&query.text, query.caption.as_deref()));
    q
}

pub fn combined_text(question: &str, caption: Option<&str>) -> String {
    match caption.filter(|c| !c.is_empty()) {
        Some(c) => format!("{question}\n{IMAGE_DESCRIPTION_PREFIX}{c}"),
        None => question.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use std::sync::Arc;

    fn client(mock: MockBackend) -> (Arc<MockBackend>, LlmClient) {
        let mock = Arc::new(mock);
        (mock.clone(), LlmClient::new(mock, 20))
    }

    #[test]
    fn combine_without_caption_is_question() {
        let q = Query::new("q1", "Why does ice float?");
        assert_eq!(combine(&q).combined.as_deref(), Some("Why does ice float?"));
    }

    #[test]
    fn combine_with_caption_uses_prefix() {
        let q = Query::new("q1", "Why does ice float?").with_caption("a phase diagram of water");
        assert_eq!(
            combine(&q).combined.as_deref(),
            Some("Why does ice float?\nImage Description: a phase diagram of water")
        );
    }

    #[test]
    fn empty_caption_is_absent() {
        let q = Query::new("q1", "Why?").with_caption("");
        assert_eq!(q.caption, None);
        assert_eq!(combined_text("Why?", Some("")), "Why?");
    }

    #[tokio::test]
    async fn cache_hit_makes_no_call() {
        let (mock, c) = client(MockBackend::new());
        let cache = CaptionCache::in_memory();
        cache.put("q1", "cached").unwrap();
        let q = Query::new("q1", "t").with_image("a.png");
        let out = caption_query(&c, &q, &cache, &PipelineConfig::default()).await.unwrap();
        assert_eq!(out.caption.as_deref(), Some("cached"));
        assert_eq!(mock.attempts_for("caption"), 0);
    }

    #[tokio::test]
    async fn uncached_image_is_captioned_once_and_cached() {
        let (mock, c) = client(MockBackend::new().with_fixture("caption", "q1", None, "a phase diagram of water"));
        let cache = CaptionCache::in_memory();
        let q = Query::new("q1", "t").with_image("a.png");
        let cfg = PipelineConfig::default();
        let out = caption_query(&c, &q, &cache, &cfg).await.unwrap();
        assert_eq!(out.caption.as_deref(), Some("a phase diagram of water"));
        assert_eq!(cache.get("q1").as_deref(), Some("a phase diagram of water"));
        caption_query(&c, &q, &cache, &cfg).await.unwrap();
        assert_eq!(mock.attempts_for("caption"), 1);
    }

    #[tokio::test]
    async fn caption_requests_use_configured_temperature() {
        let cfg = PipelineConfig::default();
        let r = caption_request(&cfg, "q1", "a.png");
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.messages[1].images, ["a.png"]);
    }

    #[tokio::test]
    async fn text_only_query_skips_backend() {
        let (mock, c) = client(MockBackend::new());
        let q = Query::new("q1", "Why?");
        let out = caption_query(&c, &q, &CaptionCache::in_memory(), &PipelineConfig::default())
            .await
            .unwrap();
        assert_eq!(out.caption, None);
        assert_eq!(combine(&out).combined.as_deref(), Some("Why?"));
        assert_eq!(mock.attempts_for("caption"), 0);
    }

    #[tokio::test]
    async fn presupplied_caption_skips_backend() {
        let (mock, c) = client(MockBackend::new());
        let q = Query::new("q1", "t").with_image("a.png").with_caption("given");
        let out = caption_query(&c, &q, &CaptionCache::in_memory(), &PipelineConfig::default())
            .await
            .unwrap();
        assert_eq!(out.caption.as_deref(), Some("given"));
        assert_eq!(mock.attempts_for("caption"), 0);
    }

    #[tokio::test]
    async fn failure_is_tagged_with_query() {
        let (_, c) = client(MockBackend::new().failing_for("q9"));
        let c = c.with_retry(crate::llm::RetryPolicy::immediate(1));
        let q = Query::new("q9", "t").with_image("a.png");
        let err = caption_query(&c, &q, &CaptionCache::in_memory(), &PipelineConfig::default())
            .await
            .unwrap_err();
        assert!(err.to_string().starts_with("query q9"));
    }

    #[tokio::test]
    async fn batch_joins_multiple_images_with_blank_line() {
        let mock = MockBackend::new();
        let (mock, c) = client(mock);
        let q = Query::new("q1", "t").with_image("a.png").with_image("b.png");
        let out = caption_all(&c, &[q], &CaptionCache::in_memory(), &PipelineConfig::default(), &Warnings::new())
            .await
            .unwrap();
        assert_eq!(out[0].caption.as_deref(), Some("Describe this image.\n\nDescribe this image."));
        assert_eq!(mock.attempts_for("caption"), 2);
    }

    #[tokio::test]
    async fn batch_failure_degrades_with_warning() {
        let (_, c) = client(MockBackend::new().failing_for("q2"));
        let c = c.with_retry(crate::llm::RetryPolicy::immediate(1));
        let qs = vec![
            Query::new("q1", "a").with_image("1.png"),
            Query::new("q2", "b").with_image("2.png"),
        ];
        let w = Warnings::new();
        let out = caption_all(&c, &qs, &CaptionCache::in_memory(), &PipelineConfig::default(), &w)
            .await
            .unwrap();
        assert!(out[0].caption.is_some());
        assert!(out[1].caption.is_none());
        assert_eq!(w.count_stage("caption"), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn combine_is_pure_concatenation(question in ".{0,60}", caption in proptest::option::of(".{0,60}")) {
                let text = combined_text(&question, caption.as_deref());
                match caption.as_deref().filter(|c| !c.is_empty()) {
                    None => prop_assert_eq!(text, question),
                    Some(c) => prop_assert_eq!(text, format!("{question}\nImage Description: {c}")),
                }
            }
        }
    }
}
