//! Prompt construction: system message with the ordered connective list,
//! seeded few-shot examples from the training split, per-language scaffold
//! strings loaded from data files.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;
use crate::corpus::{Corpus, RelationInstance, Split};
use crate::hierarchy::{ConnectiveMap, Language, SenseHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageSetting {
    Eng,
    Ger,
    Fre,
    Cze,
    Multilingual,
}

impl LanguageSetting {
    /// Language of the prompt scaffold; multilingual prompts keep the
    /// structure in English.
    pub fn scaffold_language(self) -> Language {
        match self {
            LanguageSetting::Eng | LanguageSetting::Multilingual => Language::Eng,
            LanguageSetting::Ger => Language::Ger,
            LanguageSetting::Fre => Language::Fre,
            LanguageSetting::Cze => Language::Cze,
        }
    }

    /// Languages examples are drawn from.
    pub fn example_languages(self) -> Vec<Language> {
        match self {
            LanguageSetting::Eng => vec![Language::Eng],
            LanguageSetting::Ger => vec![Language::Ger],
            LanguageSetting::Fre => vec![Language::Fre],
            LanguageSetting::Cze => vec![Language::Cze],
            LanguageSetting::Multilingual => Language::ALL.to_vec(),
        }
    }

    pub fn parse(s: &str) -> Option<LanguageSetting> {
        match s.to_ascii_lowercase().as_str() {
            "eng" => Some(LanguageSetting::Eng),
            "ger" => Some(LanguageSetting::Ger),
            "fre" => Some(LanguageSetting::Fre),
            "cze" => Some(LanguageSetting::Cze),
            "multilingual" | "all" => Some(LanguageSetting::Multilingual),
            _ => None,
        }
    }
}

/// Editable per-language scaffold strings; the English text follows the
/// published template, the other languages ship as translations of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaffoldStrings {
    pub system_intro: String,
    pub system_instructions: String,
    pub examples_intro: String,
    pub ack: String,
    pub arg1_label: String,
    pub arg2_label: String,
    pub answer_label: String,
}

impl ScaffoldStrings {
    pub fn builtin(language: Language) -> ScaffoldStrings {
        let json = match language {
            Language::Eng => include_str!("../../data/prompts/eng.json"),
            Language::Ger => include_str!("../../data/prompts/ger.json"),
            Language::Fre => include_str!("../../data/prompts/fre.json"),
            Language::Cze => include_str!("../../data/prompts/cze.json"),
        };
        serde_json::from_str(json).expect("shipped scaffold data is valid")
    }

    pub fn load(path: &std::path::Path) -> Result<ScaffoldStrings, PromptError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PromptError::Cache(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateConfig {
    pub setting: LanguageSetting,
    #[serde(default = "default_example_count")]
    pub example_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_example_count() -> usize {
    5
}

/// One rendered few-shot example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub arg1: String,
    pub arg2: String,
    /// Gold connective-level probabilities in prompt order.
    pub answer: Vec<f64>,
}

/// A fully built prompt template; rendering an instance against it yields
/// the message sequence sent to the LLM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub setting: LanguageSetting,
    pub system_message: String,
    pub few_shot: Vec<FewShotExample>,
    pub scaffold: ScaffoldStrings,
}

/// Renders a probability vector the way the template's answers are
/// written: a bracketed, comma-separated list.
pub fn render_answer_vector(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", cells.join(", "))
}

/// Gold connective-level answer for an instance: its level-3 gold
/// distribution permuted into prompt (connective) order.
pub fn gold_answer_vector(map: &ConnectiveMap, instance: &RelationInstance) -> Vec<f64> {
    (0..map.entries.len())
        .map(|pos| instance.gold3.values[map.sense_index(pos)])
        .collect()
}

/// Builds a deterministic template: the system message embeds the 28
/// connectives of the setting's scaffold language in map order, and
/// exactly `example_count` few-shot examples are sampled (seeded) from the
/// training split — stratified across languages in the multilingual
/// setting.
pub fn build_prompt(
    config: &TemplateConfig,
    hierarchy: &SenseHierarchy,
    corpus: &Corpus,
    scaffold: Option<ScaffoldStrings>,
) -> Result<PromptTemplate, PromptError> {
    let scaffold_lang = config.setting.scaffold_language();
    let map = hierarchy
        .connective_map(scaffold_lang)
        .ok_or_else(|| PromptError::MissingConnectiveMap(scaffold_lang.code().to_string()))?;
    let scaffold = scaffold.unwrap_or_else(|| ScaffoldStrings::builtin(scaffold_lang));

    let connective_list: Vec<String> = map.connectives().map(|c| format!("{c:?}")).collect();
    let system_message = format!(
        "{}\n\n[{}]\n\n{}",
        scaffold.system_intro,
        connective_list.join(", "),
        scaffold.system_instructions
    );

    // Seeded example selection from the training split only.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let languages = config.setting.example_languages();
    let mut few_shot = Vec::with_capacity(config.example_count);
    if config.setting == LanguageSetting::Multilingual {
        // Round-robin over languages so examples span all four.
        let mut pools: Vec<Vec<&RelationInstance>> = languages
            .iter()
            .map(|&l| {
                let set: BTreeSet<Language> = [l].into();
                let mut pool = corpus.select(Some(Split::Train), Some(&set));
                pool.shuffle(&mut rng);
                pool
            })
            .collect();
        let total: usize = pools.iter().map(Vec::len).sum();
        if total < config.example_count {
            return Err(PromptError::InsufficientExamples {
                available: total,
                requested: config.example_count,
            });
        }
        let mut li = 0;
        let pool_count = pools.len();
        while few_shot.len() < config.example_count {
            if let Some(inst) = pools[li % pool_count].pop() {
                few_shot.push(render_example(map, inst));
            }
            li += 1;
        }
    } else {
        let set: BTreeSet<Language> = languages.iter().copied().collect();
        let mut pool = corpus.select(Some(Split::Train), Some(&set));
        if pool.len() < config.example_count {
            return Err(PromptError::InsufficientExamples {
                available: pool.len(),
                requested: config.example_count,
            });
        }
        pool.shuffle(&mut rng);
        for inst in pool.into_iter().take(config.example_count) {
            few_shot.push(render_example(map, inst));
        }
    }

    Ok(PromptTemplate {
        setting: config.setting,
        system_message,
        few_shot,
        scaffold,
    })
}

fn render_example(map: &ConnectiveMap, inst: &RelationInstance) -> FewShotExample {
    FewShotExample {
        arg1: inst.arg1.clone(),
        arg2: inst.arg2.clone(),
        answer: gold_answer_vector(map, inst),
    }
}

impl PromptTemplate {
    /// Message sequence for one instance: system, few-shot user block,
    /// assistant acknowledgement, then the instance as a user message.
    pub fn render(&self, arg1: &str, arg2: &str) -> Vec<Message> {
        let s = &self.scaffold;
        let mut examples_block = String::from(&s.examples_intro);
        for ex in &self.few_shot {
            examples_block.push_str(&format!(
                "\n\n{} {}\n{} {}\n\n{} {}",
                s.arg1_label,
                ex.arg1,
                s.arg2_label,
                ex.arg2,
                s.answer_label,
                render_answer_vector(&ex.answer)
            ));
        }
        vec![
            Message {
                role: Role::System,
                content: self.system_message.clone(),
            },
            Message {
                role: Role::User,
                content: examples_block,
            },
            Message {
                role: Role::Assistant,
                content: s.ack.clone(),
            },
            Message {
                role: Role::User,
                content: format!("{} {arg1}\n{} {arg2}", s.arg1_label, s.arg2_label),
            },
        ]
    }

    /// Stable hash of the template content; part of every cache key.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system_message.as_bytes());
        for ex in &self.few_shot {
            hasher.update(ex.arg1.as_bytes());
            hasher.update(ex.arg2.as_bytes());
            hasher.update(render_answer_vector(&ex.answer).as_bytes());
        }
        crate::model::hex_string(&hasher.finalize())
    }
}
