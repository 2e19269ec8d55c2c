//! Implementations of the individual subcommands.

use std::path::{Path, PathBuf};

use harch::corpus::{corpus_stats, save_store, Split};
use harch::evaluation::{evaluate, EvalReport, LevelScore};
use harch::hierarchy::builtin_connectives;
use harch::model::{HArchModel, IndividualModel};
use harch::prompting::{
    build_prompt, evaluate_llm, render_answer_vector, ChatClient, FnClient, HttpChatClient,
    LlmClientConfig, PromptError, ScaffoldStrings, TemplateConfig, TranscriptCache,
};
use harch::training::{run_experiment, train_individual, LevelTargets};
use harch::{Level, SenseHierarchy};
use serde::Serialize;

use crate::config::{parse_level, parse_setting, parse_split, FileConfig};
use crate::error::CliError;
use crate::manifest::Manifest;

fn write_json<T: Serialize>(
    manifest: &mut Manifest,
    name: &str,
    kind: &str,
    value: &T,
) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)?;
    manifest.write(name, kind, json.as_bytes())?;
    Ok(())
}

fn report_line(report: &EvalReport) -> String {
    format!(
        "{} on {}: L1 {}  L2 {}  L3 {}  (n={}, coverage {:.3})",
        report.model_id,
        report.split,
        report.levels[0].cell(),
        report.levels[1].cell(),
        report.levels[2].cell(),
        report.instance_count,
        report.coverage
    )
}

/// `stats`: per-sense vote-mass totals by language, one table per level.
pub fn stats(
    config: &FileConfig,
    manifest: &mut Manifest,
    level_flag: Option<u8>,
) -> Result<(), CliError> {
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;
    let selected = level_flag.unwrap_or_else(|| config.stats.clone().unwrap_or_default().level);
    let levels: Vec<Level> = match selected {
        0 => vec![Level::One, Level::Two, Level::Three],
        n => vec![parse_level(&n.to_string())?],
    };
    for level in levels {
        let table = corpus_stats(&corpus, level, &hierarchy);
        let name = format!("stats_level{}.tsv", level.as_number());
        manifest.write(&name, "stats", table.to_tsv().as_bytes())?;
        println!("wrote {name}");
    }
    Ok(())
}

/// `prepare`: normalize a release-format corpus into the canonical store.
pub fn prepare(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;
    let store = manifest.out_dir().join("corpus.jsonl");
    save_store(&corpus, &store)?;
    manifest.record("corpus.jsonl", "store")?;
    for level in [Level::One, Level::Two, Level::Three] {
        let table = corpus_stats(&corpus, level, &hierarchy);
        let name = format!("stats_level{}.tsv", level.as_number());
        manifest.write(&name, "stats", table.to_tsv().as_bytes())?;
    }
    println!("stored {} instances", corpus.len());
    Ok(())
}

/// `train`: multi-seed cascade training plus held-out evaluation.
pub fn train(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let train_config = config.train_config()?;
    if !matches!(train_config.level_targets, LevelTargets::All) {
        return Err(CliError::Config(
            "training.level must be \"all\" for train; use ablate for single-level models".into(),
        ));
    }
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;
    let result = run_experiment(&corpus, &train_config, Some(manifest.out_dir()))?;
    for run in &result.runs {
        manifest.record(&format!("harch-seed{}.json", run.seed), "checkpoint")?;
    }
    write_json(manifest, "runs.json", "train-log", &result.runs)?;
    write_json(manifest, "reports.json", "per-seed-reports", &result.reports)?;
    write_json(manifest, "report.json", "report", &result.aggregate)?;
    if !result.failed_seeds.is_empty() {
        write_json(manifest, "failed-seeds.json", "failures", &result.failed_seeds)?;
    }
    println!("{}", report_line(&result.aggregate));
    Ok(())
}

/// `evaluate`: score a saved checkpoint on a corpus split.
pub fn evaluate_cmd(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let section = config
        .evaluate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [evaluate] section".into()))?;
    let split = parse_split(&section.split)?;
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;
    let model = HArchModel::load_checkpoint(&section.checkpoint)?;
    let (scores, report) = evaluate(&model, &corpus, split, None)?;

    let mut lines = String::new();
    for score in &scores {
        lines.push_str(&serde_json::to_string(score)?);
        lines.push('\n');
    }
    manifest.write("scores.jsonl", "instance-scores", lines.as_bytes())?;
    write_json(manifest, "report.json", "report", &report)?;
    println!("{}", report_line(&report));
    Ok(())
}

#[derive(Serialize)]
struct EncoderCandidate {
    encoder: String,
    levels: [LevelScore; 3],
    report: EvalReport,
}

/// `encoder-select`: trains each candidate backbone and keeps the one with
/// the lowest level-3 mean JS distance on the selection split.
pub fn encoder_select(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let section = config
        .encoder_select
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [encoder_select] section".into()))?;
    if section.candidates.is_empty() {
        return Err(CliError::Config("encoder_select.candidates is empty".into()));
    }
    let split = parse_split(&section.split)?;
    let base = config.train_config()?;
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;

    let mut candidates = Vec::new();
    for encoder in &section.candidates {
        let mut tc = base.clone();
        tc.model.encoder = encoder.clone();
        tc.eval_split = split;
        let result = run_experiment(&corpus, &tc, None)?;
        println!("{}", report_line(&result.aggregate));
        candidates.push(EncoderCandidate {
            encoder: encoder.clone(),
            levels: result.aggregate.levels,
            report: result.aggregate,
        });
    }
    let best = candidates
        .iter()
        .map(|c| c.levels[2].mean)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| candidates[i].encoder.clone())
        .expect("non-empty candidates");

    let mut tsv = String::from("encoder\tlevel1\tlevel2\tlevel3\tselected\n");
    for c in &candidates {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            c.encoder,
            c.levels[0].cell(),
            c.levels[1].cell(),
            c.levels[2].cell(),
            if c.encoder == best { "*" } else { "" }
        ));
    }
    manifest.write("selection.tsv", "table", tsv.as_bytes())?;
    #[derive(Serialize)]
    struct Selection {
        selected: String,
        candidates: Vec<EncoderCandidate>,
    }
    write_json(
        manifest,
        "selection.json",
        "report",
        &Selection {
            selected: best.clone(),
            candidates,
        },
    )?;
    println!("selected encoder: {best}");
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    level: usize,
    mean: f64,
    std: f64,
    per_seed: Vec<f64>,
}

/// `ablate`: single-head models trained per level, mean ± sample std of JS
/// distance across seeds.
pub fn ablate(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let train_config = config.train_config()?;
    let levels: Vec<Level> = match train_config.level_targets {
        LevelTargets::All => vec![Level::One, Level::Two, Level::Three],
        LevelTargets::Single(level) => vec![level],
    };
    let hierarchy = SenseHierarchy::build_default();
    let corpus = config.corpus_section()?.load(&hierarchy)?;

    let mut rows = Vec::new();
    for level in levels {
        let mut per_seed = Vec::new();
        for &seed in &train_config.seeds {
            let mut model =
                IndividualModel::build(train_config.model.clone(), level, seed)?;
            train_individual(&mut model, &corpus, &train_config, seed)?;
            per_seed.push(individual_mean_js(
                &model,
                &corpus,
                train_config.eval_split,
                level,
            )?);
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        println!(
            "individual level {}: {:.3} ± {:.3}",
            level.as_number(),
            mean,
            std
        );
        rows.push(AblationRow {
            level: level.as_number(),
            mean,
            std,
            per_seed,
        });
    }

    let mut tsv = String::from("level\tjs\n");
    for row in &rows {
        tsv.push_str(&format!("{}\t{:.3} ± {:.3}\n", row.level, row.mean, row.std));
    }
    manifest.write("ablation.tsv", "table", tsv.as_bytes())?;
    write_json(manifest, "ablation.json", "report", &rows)?;
    Ok(())
}

fn individual_mean_js(
    model: &IndividualModel,
    corpus: &harch::corpus::Corpus,
    split: Split,
    level: Level,
) -> Result<f64, CliError> {
    let instances = corpus.select(Some(split), None);
    if instances.is_empty() {
        return Err(CliError::Data(format!("no instances in {split} split")));
    }
    let mut total = 0.0;
    for inst in &instances {
        let pooled = model.encode_pair(&inst.item_id, &inst.arg1, &inst.arg2)?;
        let pred = model.infer(&pooled)?;
        total += harch::evaluation::js_distance(&pred, inst.gold(level))?;
    }
    Ok(total / instances.len() as f64)
}

#[derive(Serialize)]
struct OutcomeLine<'a> {
    item_id: &'a str,
    requests: usize,
    from_cache: bool,
    failure: Option<&'a str>,
}

/// `prompt-eval`: few-shot connective-proxy benchmark of a chat model.
pub fn prompt_eval(config: &FileConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let section = config.prompting.clone().unwrap_or_default();
    let setting = parse_setting(&section.setting)?;
    let split = parse_split(&section.split)?;

    let mut hierarchy = SenseHierarchy::build_default();
    let scaffold_lang = setting.scaffold_language();
    match &section.connectives {
        Some(path) => {
            hierarchy.load_connective_map(scaffold_lang, path)?;
        }
        None => {
            let text = builtin_connectives(scaffold_lang).ok_or_else(|| {
                CliError::Config(format!(
                    "no bundled connective map for {}; set prompting.connectives",
                    scaffold_lang.code()
                ))
            })?;
            let map = hierarchy.parse_connective_map(scaffold_lang, text)?;
            hierarchy.set_connective_map(map);
        }
    }

    let corpus = config.corpus_section()?.load(&hierarchy)?;
    let scaffold = section
        .scaffold
        .as_deref()
        .map(ScaffoldStrings::load)
        .transpose()?;
    let template = build_prompt(
        &TemplateConfig {
            setting,
            example_count: section.example_count,
            seed: section.template_seed,
        },
        &hierarchy,
        &corpus,
        scaffold,
    )?;

    let (client, max_retries): (Box<dyn ChatClient>, usize) = match section.provider.as_str() {
        "openai-compatible" => {
            let client = HttpChatClient::new(LlmClientConfig {
                provider: section.provider.clone(),
                model: section.model.clone(),
                temperature: section.temperature,
                max_retries: section.max_retries,
                timeout_secs: section.timeout_secs,
                api_key_env: section.api_key_env.clone(),
                base_url: section.base_url.clone(),
            })?;
            (Box::new(client), section.max_retries)
        }
        "uniform" => {
            let answer = render_answer_vector(&vec![1.0 / 28.0; 28]);
            let model = section.model.clone();
            (
                Box::new(FnClient::new(&model, move |_: &[harch::prompting::Message]| Ok(answer.clone()))),
                section.max_retries,
            )
        }
        // Replay serves only from the transcript cache; anything uncached
        // is a flagged failure after a single (refused) request.
        "replay" => (
            Box::new(FnClient::new(&section.model, |_: &[harch::prompting::Message]| {
                Err(PromptError::Transport(
                    "replay mode: no live requests".into(),
                ))
            })),
            0,
        ),
        other => {
            return Err(CliError::Config(format!(
                "unknown provider '{other}' (expected openai-compatible, uniform or replay)"
            )))
        }
    };

    let cache_path = section
        .cache
        .clone()
        .unwrap_or_else(|| manifest.out_dir().join("transcripts.jsonl"));
    let mut cache = TranscriptCache::open(&cache_path)?;
    let result = evaluate_llm(
        client.as_ref(),
        &hierarchy,
        &corpus,
        split,
        &template,
        max_retries,
        Some(&mut cache),
    )?;

    let mut lines = String::new();
    for outcome in &result.outcomes {
        lines.push_str(&serde_json::to_string(&OutcomeLine {
            item_id: &outcome.item_id,
            requests: outcome.requests,
            from_cache: outcome.from_cache,
            failure: outcome.failure.as_deref(),
        })?);
        lines.push('\n');
    }
    manifest.write("outcomes.jsonl", "query-log", lines.as_bytes())?;
    write_json(manifest, "report.json", "report", &result.report)?;
    if cache_path.starts_with(manifest.out_dir()) {
        manifest.record("transcripts.jsonl", "transcripts")?;
    }
    println!("{}", report_line(&result.report));
    Ok(())
}

/// `report`: merges run reports into one comparison table, lowest mean per
/// level set in bold.
pub fn report(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut reports = Vec::new();
    for dir in dirs {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        reports.push((dir.clone(), report));
    }
    let split = reports[0].1.split;
    if reports.iter().any(|(_, r)| r.split != split) {
        return Err(CliError::Data(
            "reports evaluate different splits and cannot be compared".into(),
        ));
    }

    let best: Vec<f64> = (0..3)
        .map(|k| {
            reports
                .iter()
                .map(|(_, r)| r.levels[k].mean)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut table = String::from("run\tmodel\tsplit\tlevel1\tlevel2\tlevel3\n");
    for (dir, r) in &reports {
        let cells: Vec<String> = (0..3)
            .map(|k| {
                let cell = r.levels[k].cell();
                if r.levels[k].mean == best[k] {
                    format!("**{cell}**")
                } else {
                    cell
                }
            })
            .collect();
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            dir.display(),
            r.model_id,
            r.split,
            cells[0],
            cells[1],
            cells[2]
        ));
    }
    print!("{table}");
    if let Some(out) = out {
        let mut manifest = Manifest::new(out)?;
        manifest.write("comparison.tsv", "table", table.as_bytes())?;
        manifest.finish()?;
    }
    Ok(())
}
