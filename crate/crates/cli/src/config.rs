//! Config file handling: one TOML file per run, `--set key=value`
//! overrides applied before deserialization, and a resolved snapshot
//! written into every output directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use harch::corpus::{ColumnMapping, Corpus, CorpusSource, Split};
use harch::hierarchy::Language;
use harch::model::ModelConfig;
use harch::prompting::LanguageSetting;
use harch::training::{LevelTargets, TrainConfig};
use harch::{Level, SenseHierarchy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Full config schema; each command reads the sections it needs. Unknown
/// keys anywhere are rejected.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<CorpusSection>,
    pub model: Option<ModelSection>,
    pub training: Option<TrainingSection>,
    pub evaluate: Option<EvaluateSection>,
    pub encoder_select: Option<EncoderSelectSection>,
    pub prompting: Option<PromptingSection>,
    pub stats: Option<StatsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    /// "csv" for release-style delimited files, "store" for the canonical
    /// line-delimited store written by `prepare`.
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_source")]
    pub source: String,
    /// Optional language filter (codes: eng, ger, fre, cze).
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    /// Column-name overrides for CSV corpora.
    #[serde(default)]
    pub columns: Option<ColumnsSection>,
}

fn default_format() -> String {
    "csv".into()
}

fn default_source() -> String {
    "discogem2".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnsSection {
    pub item_id: Option<String>,
    pub language: Option<String>,
    pub arg1: Option<String>,
    pub arg2: Option<String>,
    pub split: Option<String>,
    /// Names of the 28 level-3 sense columns, in canonical order.
    pub senses: Option<Vec<String>>,
    pub delimiter: Option<char>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: String,
    pub dropout: f64,
    pub scalar_init: f64,
    pub max_length: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            encoder: m.encoder,
            dropout: m.dropout,
            scalar_init: m.scalar_init,
            max_length: m.max_length,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            dropout: self.dropout,
            scalar_init: self.scalar_init,
            max_length: self.max_length,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub eval_split: String,
    pub freeze_encoder: bool,
    /// "all" trains the full cascade; "1"/"2"/"3" select ablation levels.
    pub level: String,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-5,
            seeds: vec![1, 2, 3],
            eval_split: "test".into(),
            freeze_encoder: true,
            level: "all".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoint: PathBuf,
    #[serde(default = "default_test")]
    pub split: String,
}

fn default_test() -> String {
    "test".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSelectSection {
    pub candidates: Vec<String>,
    #[serde(default = "default_validation")]
    pub split: String,
}

fn default_validation() -> String {
    "validation".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptingSection {
    /// "openai-compatible" for live HTTP, "uniform" for a deterministic
    /// offline baseline, "replay" to serve exclusively from the transcript
    /// cache.
    pub provider: String,
    pub model: String,
    pub base_url: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub timeout_secs: u64,
    /// Prompt language setting: eng, ger, fre, cze or multilingual.
    pub setting: String,
    pub example_count: usize,
    pub template_seed: u64,
    pub split: String,
    /// Transcript cache path; defaults to transcripts.jsonl in the output
    /// directory.
    pub cache: Option<PathBuf>,
    /// Connective map data file; the bundled English map is used when the
    /// setting's scaffold language is English and no path is given.
    pub connectives: Option<PathBuf>,
    /// Scaffold-string overrides (JSON).
    pub scaffold: Option<PathBuf>,
}

impl Default for PromptingSection {
    fn default() -> Self {
        PromptingSection {
            provider: "replay".into(),
            model: "offline".into(),
            base_url: String::new(),
            api_key_env: "LLM_API_KEY".into(),
            temperature: 0.0,
            max_retries: 5,
            timeout_secs: 120,
            setting: "eng".into(),
            example_count: 5,
            template_seed: 0,
            split: "test".into(),
            cache: None,
            connectives: None,
            scaffold: None,
        }
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    /// 0 emits every level; 1/2/3 a single table.
    pub level: u8,
}

/// Loads a config file and applies `--set key=value` overrides on the raw
/// TOML before typed deserialization. Returns the typed config together
/// with the resolved TOML text (the snapshot written next to the outputs).
pub fn load_config(path: &Path, sets: &[String]) -> Result<(FileConfig, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: toml::Value = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for set in sets {
        apply_set(&mut value, set)?;
    }
    let resolved =
        toml::to_string_pretty(&value).map_err(|e| CliError::Config(e.to_string()))?;
    let config: FileConfig = value
        .try_into()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, resolved))
}

/// Applies one `key=value` override; dotted keys descend into tables,
/// creating them as needed. The value is parsed as a TOML literal, falling
/// back to a plain string.
pub fn apply_set(root: &mut toml::Value, set: &str) -> Result<(), CliError> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{set}' is not key=value")))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|mut t| t.remove("v").expect("key v present"))
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));

    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{key}': '{part}' is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("'{key}' does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

pub fn parse_split(s: &str) -> Result<Split, CliError> {
    Split::parse(s).ok_or_else(|| CliError::Config(format!("unknown split '{s}'")))
}

pub fn parse_level(s: &str) -> Result<Level, CliError> {
    match s {
        "1" => Ok(Level::One),
        "2" => Ok(Level::Two),
        "3" => Ok(Level::Three),
        _ => Err(CliError::Config(format!("unknown level '{s}'"))),
    }
}

pub fn parse_languages(codes: &[String]) -> Result<BTreeSet<Language>, CliError> {
    codes
        .iter()
        .map(|c| {
            Language::parse(c).ok_or_else(|| CliError::Config(format!("unknown language '{c}'")))
        })
        .collect()
}

pub fn parse_source(s: &str) -> Result<CorpusSource, CliError> {
    match s {
        "discogem1" => Ok(CorpusSource::Discogem1),
        "discogem2" => Ok(CorpusSource::Discogem2),
        _ => Err(CliError::Config(format!("unknown corpus source '{s}'"))),
    }
}

impl CorpusSection {
    pub fn language_filter(&self) -> Result<Option<BTreeSet<Language>>, CliError> {
        self.languages
            .as_deref()
            .map(parse_languages)
            .transpose()
    }

    pub fn column_mapping(&self, hierarchy: &SenseHierarchy) -> ColumnMapping {
        let mut mapping = ColumnMapping::default_for(hierarchy);
        if let Some(c) = &self.columns {
            if let Some(v) = &c.item_id {
                mapping.item_id = v.clone();
            }
            if let Some(v) = &c.language {
                mapping.language = v.clone();
            }
            if let Some(v) = &c.arg1 {
                mapping.arg1 = v.clone();
            }
            if let Some(v) = &c.arg2 {
                mapping.arg2 = v.clone();
            }
            if let Some(v) = &c.split {
                mapping.split = v.clone();
            }
            if let Some(v) = &c.senses {
                mapping.senses = v.clone();
            }
            if let Some(v) = c.delimiter {
                mapping.delimiter = v;
            }
        }
        mapping
    }

    pub fn load(&self, hierarchy: &SenseHierarchy) -> Result<Corpus, CliError> {
        let source = parse_source(&self.source)?;
        let filter = self.language_filter()?;
        let corpus = match self.format.as_str() {
            "csv" => harch::corpus::load_corpus(
                &self.path,
                source,
                filter.as_ref(),
                &self.column_mapping(hierarchy),
                hierarchy,
            )?,
            "store" => {
                let corpus = harch::corpus::load_store(&self.path, source, hierarchy)?;
                match filter {
                    Some(langs) => filter_corpus(corpus, &langs),
                    None => corpus,
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown corpus format '{other}' (expected csv or store)"
                )))
            }
        };
        if corpus.is_empty() {
            return Err(CliError::Data(format!(
                "{}: no instances after filtering",
                self.path.display()
            )));
        }
        Ok(corpus)
    }
}

fn filter_corpus(corpus: Corpus, languages: &BTreeSet<Language>) -> Corpus {
    let instances: Vec<_> = corpus
        .instances
        .into_iter()
        .filter(|i| languages.contains(&i.language))
        .collect();
    let languages = instances.iter().map(|i| i.language).collect();
    Corpus {
        instances,
        languages,
        source: corpus.source,
    }
}

impl FileConfig {
    pub fn corpus_section(&self) -> Result<&CorpusSection, CliError> {
        self.corpus
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [corpus] section".into()))
    }

    /// Assembles the library training config from the [model] and
    /// [training] sections (both optional, defaulted).
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let model = self.model.clone().unwrap_or_default();
        let training = self.training.clone().unwrap_or_default();
        let level_targets = match training.level.as_str() {
            "all" => LevelTargets::All,
            other => LevelTargets::Single(parse_level(other)?),
        };
        Ok(TrainConfig {
            model: model.to_model_config(),
            epochs: training.epochs,
            batch_size: training.batch_size,
            learning_rate: training.learning_rate,
            seeds: training.seeds.clone(),
            language_filter: None, // filtering happens at corpus load
            level_targets,
            freeze_encoder: training.freeze_encoder,
            eval_split: parse_split(&training.eval_split)?,
        })
    }
}

pub fn parse_setting(s: &str) -> Result<LanguageSetting, CliError> {
    LanguageSetting::parse(s)
        .ok_or_else(|| CliError::Config(format!("unknown prompt setting '{s}'")))
}
