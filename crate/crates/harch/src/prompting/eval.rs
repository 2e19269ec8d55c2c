//! Running the connective-proxy benchmark: bounded-retry querying, cache
//! replay, and Jensen-Shannon scoring of parsed answer vectors.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::cache::{cache_key, Attempt, CacheRecord, TranscriptCache};
use super::client::ChatClient;
use super::parse::{parse_vector, ConnectiveVector};
use super::template::{Message, PromptTemplate};
use super::PromptError;
use crate::corpus::{Corpus, RelationInstance, Split};
use crate::evaluation::{js_distance, report_from_scores, EvalReport, InstanceScore};
use crate::hierarchy::{connective_to_senses, Language, Level, SenseHierarchy};

/// Result of querying one instance. A flagged failure is not an error:
/// the instance is excluded from means and reported through coverage.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub item_id: String,
    /// Parsed, renormalized answer vector when any attempt succeeded.
    pub vector: Option<ConnectiveVector>,
    /// Network requests made by this call (0 on cache replay).
    pub requests: usize,
    pub from_cache: bool,
    pub failure: Option<String>,
}

fn request_hash(messages: &[Message]) -> String {
    let json = serde_json::to_string(messages).expect("messages serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    crate::model::hex_string(&hasher.finalize())
}

fn replay(record: &CacheRecord) -> QueryOutcome {
    for attempt in &record.attempts {
        if attempt.parse_ok {
            let vector = parse_vector(&attempt.response)
                .expect("cached attempt marked parse_ok must re-parse");
            return QueryOutcome {
                item_id: record.item_id.clone(),
                vector: Some(vector),
                requests: 0,
                from_cache: true,
                failure: None,
            };
        }
    }
    QueryOutcome {
        item_id: record.item_id.clone(),
        vector: None,
        requests: 0,
        from_cache: true,
        failure: Some(PromptError::ExhaustedRetries(record.attempts.len()).to_string()),
    }
}

/// Queries one instance with at most `1 + max_retries` requests. Both
/// transport errors and format failures consume retry budget. A prior
/// transcript for the same (model, template, item) key is replayed without
/// any network traffic.
pub fn query_instance(
    client: &dyn ChatClient,
    template: &PromptTemplate,
    instance: &RelationInstance,
    max_retries: usize,
    cache: Option<&mut TranscriptCache>,
) -> Result<QueryOutcome, PromptError> {
    let key = cache_key(client.model_name(), &template.hash(), &instance.item_id);
    if let Some(cache) = &cache {
        if let Some(record) = cache.get(&key) {
            return Ok(replay(record));
        }
    }

    let messages = template.render(&instance.arg1, &instance.arg2);
    let req_hash = request_hash(&messages);
    let mut attempts = Vec::new();
    let mut vector = None;
    for _ in 0..=max_retries {
        match client.complete(&messages) {
            Ok(response) => match parse_vector(&response) {
                Ok(v) => {
                    attempts.push(Attempt {
                        request_hash: req_hash.clone(),
                        response,
                        parse_ok: true,
                        reason: None,
                    });
                    vector = Some(v);
                    break;
                }
                Err(failure) => attempts.push(Attempt {
                    request_hash: req_hash.clone(),
                    response,
                    parse_ok: false,
                    reason: Some(failure.to_string()),
                }),
            },
            Err(PromptError::Transport(msg)) => attempts.push(Attempt {
                request_hash: req_hash.clone(),
                response: String::new(),
                parse_ok: false,
                reason: Some(format!("transport error: {msg}")),
            }),
            Err(other) => return Err(other),
        }
    }

    let requests = attempts.len();
    let failure = if vector.is_some() {
        None
    } else {
        Some(PromptError::ExhaustedRetries(requests).to_string())
    };
    if let Some(cache) = cache {
        cache.insert(CacheRecord {
            key,
            model: client.model_name().to_string(),
            template_hash: template.hash(),
            item_id: instance.item_id.clone(),
            attempts,
        })?;
    }
    Ok(QueryOutcome {
        item_id: instance.item_id.clone(),
        vector,
        requests,
        from_cache: false,
        failure,
    })
}

#[derive(Debug, Clone)]
pub struct LlmEvalResult {
    pub report: EvalReport,
    pub scores: Vec<InstanceScore>,
    pub outcomes: Vec<QueryOutcome>,
}

/// Benchmarks a chat model on a corpus split. Each answer vector is mapped
/// through the connective bijection into three sense distributions and
/// scored against the gold distributions; flagged failures are excluded
/// from the means and surface as `report.coverage < 1`.
pub fn evaluate_llm(
    client: &dyn ChatClient,
    hierarchy: &SenseHierarchy,
    corpus: &Corpus,
    split: Split,
    template: &PromptTemplate,
    max_retries: usize,
    mut cache: Option<&mut TranscriptCache>,
) -> Result<LlmEvalResult, PromptError> {
    let languages: BTreeSet<Language> =
        template.setting.example_languages().into_iter().collect();
    let instances = corpus.select(Some(split), Some(&languages));
    let map_language = template.setting.scaffold_language();

    let mut scores = Vec::new();
    let mut outcomes = Vec::with_capacity(instances.len());
    for instance in &instances {
        let outcome = query_instance(client, template, instance, max_retries, cache.as_deref_mut())?;
        if let Some(vector) = &outcome.vector {
            let (d1, d2, d3) = connective_to_senses(hierarchy, map_language, &vector.values)?;
            scores.push(InstanceScore {
                item_id: instance.item_id.clone(),
                language: instance.language,
                js1: js_distance(&d1, instance.gold(Level::One))?,
                js2: js_distance(&d2, instance.gold(Level::Two))?,
                js3: js_distance(&d3, instance.gold(Level::Three))?,
            });
        } else {
            log::warn!(
                "instance {} excluded: {}",
                instance.item_id,
                outcome.failure.as_deref().unwrap_or("unknown failure")
            );
        }
        outcomes.push(outcome);
    }

    let report = report_from_scores(
        client.model_name(),
        split,
        &template.hash(),
        &scores,
        instances.len(),
    );
    Ok(LlmEvalResult {
        report,
        scores,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSource;
    use crate::hierarchy::SenseDistribution;
    use crate::prompting::client::ScriptedClient;
    use crate::prompting::client::FnClient;
    use crate::prompting::template::{
        build_prompt, render_answer_vector, LanguageSetting, TemplateConfig,
    };

    fn hierarchy_with_map() -> SenseHierarchy {
        let mut h = SenseHierarchy::build_default();
        let map = h
            .parse_connective_map(Language::Eng, include_str!("../../data/connectives/eng.tsv"))
            .unwrap();
        h.set_connective_map(map);
        h
    }

    /// Train instances feed few-shot selection; test instances carry the
    /// sense index in arg1 so an oracle client can answer perfectly.
    fn oracle_corpus(hierarchy: &SenseHierarchy, test_n: usize) -> Corpus {
        let mut instances = Vec::new();
        for i in 0..8 {
            instances.push(RelationInstance::from_level3(
                hierarchy,
                format!("train-{i}"),
                Language::Eng,
                format!("train arg one {i}"),
                format!("train arg two {i}"),
                Split::Train,
                SenseDistribution::one_hot(Level::Three, i),
            ));
        }
        for i in 0..test_n {
            instances.push(RelationInstance::from_level3(
                hierarchy,
                format!("test-{i}"),
                Language::Eng,
                format!("sense={}", i % 28),
                "second argument".to_string(),
                Split::Test,
                SenseDistribution::one_hot(Level::Three, i % 28),
            ));
        }
        let languages = instances.iter().map(|x| x.language).collect();
        Corpus {
            instances,
            languages,
            source: CorpusSource::Discogem2,
        }
    }

    fn template(h: &SenseHierarchy, corpus: &Corpus) -> PromptTemplate {
        build_prompt(
            &TemplateConfig {
                setting: LanguageSetting::Eng,
                example_count: 5,
                seed: 7,
            },
            h,
            corpus,
            None,
        )
        .unwrap()
    }

    fn garbage() -> String {
        "no vector here".to_string()
    }

    fn good_vector() -> String {
        let mut v = vec![0.0; 28];
        v[3] = 1.0;
        render_answer_vector(&v)
    }

    #[test]
    fn gold_oracle_scores_zero_distance_everywhere() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 6);
        let t = template(&h, &corpus);
        let map = h.connective_map(Language::Eng).unwrap();
        // Answer with probability 1 on the connective mapped to the gold sense.
        let positions: Vec<usize> = (0..28).map(|pos| map.sense_index(pos)).collect();
        let client = FnClient::new("oracle", move |msgs: &[Message]| {
            let content = &msgs.last().unwrap().content;
            let sense: usize = content
                .split("sense=")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .unwrap()
                .parse()
                .unwrap();
            let mut v = vec![0.0; 28];
            let pos = positions.iter().position(|&s| s == sense).unwrap();
            v[pos] = 1.0;
            Ok(render_answer_vector(&v))
        });
        let result = evaluate_llm(&client, &h, &corpus, Split::Test, &t, 5, None).unwrap();
        assert_eq!(result.scores.len(), 6);
        assert_eq!(result.report.coverage, 1.0);
        for level in &result.report.levels {
            assert!(level.mean.abs() < 1e-12, "oracle must score 0, got {}", level.mean);
        }
    }

    #[test]
    fn retry_budget_is_six_requests_then_flagged() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 1);
        let t = template(&h, &corpus);
        let client = ScriptedClient::new("m", vec![garbage(); 10]);
        let result = evaluate_llm(&client, &h, &corpus, Split::Test, &t, 5, None).unwrap();
        assert_eq!(client.calls(), 6, "initial request plus five retries");
        assert_eq!(result.scores.len(), 0);
        assert_eq!(result.report.coverage, 0.0);
        assert!(result.outcomes[0].failure.is_some());
    }

    #[test]
    fn recovers_within_budget() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 1);
        let t = template(&h, &corpus);
        let client = ScriptedClient::new("m", vec![garbage(), garbage(), good_vector()]);
        let instance = &corpus.select(Some(Split::Test), None)[0];
        let outcome = query_instance(&client, &t, instance, 5, None).unwrap();
        assert!(outcome.vector.is_some());
        assert_eq!(outcome.requests, 3);
        assert!(outcome.failure.is_none());
    }

    #[test]
    fn transport_errors_consume_budget() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 1);
        let t = template(&h, &corpus);
        // An exhausted scripted client yields transport errors on every call.
        let client = ScriptedClient::new("m", vec![]);
        let instance = &corpus.select(Some(Split::Test), None)[0];
        let outcome = query_instance(&client, &t, instance, 2, None).unwrap();
        assert_eq!(outcome.requests, 3);
        assert!(outcome.vector.is_none());
        assert!(outcome.failure.is_some());
    }

    #[test]
    fn cache_replays_bit_identically_with_zero_requests() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 2);
        let t = template(&h, &corpus);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcripts.jsonl");

        let mut cache = TranscriptCache::open(&path).unwrap();
        // First instance needs a retry; second fails outright.
        let client = ScriptedClient::new(
            "m",
            vec![garbage(), good_vector(), garbage(), garbage(), garbage(), garbage(), garbage(), garbage()],
        );
        let first = evaluate_llm(&client, &h, &corpus, Split::Test, &t, 5, Some(&mut cache)).unwrap();
        assert_eq!(client.calls(), 8);
        assert_eq!(first.scores.len(), 1);
        assert!((first.report.coverage - 0.5).abs() < 1e-12);

        // Replay from a fresh handle with a client that would fail if called.
        let mut cache = TranscriptCache::open(&path).unwrap();
        let dead = ScriptedClient::new("m", vec![]);
        let second = evaluate_llm(&dead, &h, &corpus, Split::Test, &t, 5, Some(&mut cache)).unwrap();
        assert_eq!(dead.calls(), 0, "replay must make no network calls");
        assert!(second.outcomes.iter().all(|o| o.from_cache));
        assert_eq!(second.scores.len(), first.scores.len());
        for (a, b) in first.scores.iter().zip(&second.scores) {
            assert_eq!(a.js1.to_bits(), b.js1.to_bits());
            assert_eq!(a.js2.to_bits(), b.js2.to_bits());
            assert_eq!(a.js3.to_bits(), b.js3.to_bits());
        }
        assert_eq!(
            first.report.levels[2].mean.to_bits(),
            second.report.levels[2].mean.to_bits()
        );
    }

    #[test]
    fn different_model_name_misses_the_cache() {
        let h = hierarchy_with_map();
        let corpus = oracle_corpus(&h, 1);
        let t = template(&h, &corpus);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcripts.jsonl");
        let mut cache = TranscriptCache::open(&path).unwrap();

        let client = ScriptedClient::new("model-a", vec![good_vector()]);
        let instance = &corpus.select(Some(Split::Test), None)[0];
        query_instance(&client, &t, instance, 5, Some(&mut cache)).unwrap();

        let other = ScriptedClient::new("model-b", vec![good_vector()]);
        let outcome = query_instance(&other, &t, instance, 5, Some(&mut cache)).unwrap();
        assert!(!outcome.from_cache);
        assert_eq!(other.calls(), 1);
    }
}
