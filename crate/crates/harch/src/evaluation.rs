//! Jensen-Shannon distance between predicted and gold distributions,
//! per-split evaluation and multi-run aggregation.
//!
//! The distance is the square root of the Jensen-Shannon divergence with
//! base-2 logarithms, so it is symmetric and bounded by 1.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split};
use crate::hierarchy::{Language, Level, SenseDistribution, SUM_TOLERANCE};
use crate::model::{HArchModel, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("distributions have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input distribution sums to {0}, expected 1")]
    Unnormalized(f64),
    #[error("split is empty after filtering")]
    EmptySplit,
    #[error("reports have mismatched metadata: {0}")]
    MismatchedReports(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn kl_to_mid_bits(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .map(|(&pi, &mi)| if pi > 0.0 { pi * (pi / mi).log2() } else { 0.0 })
        .sum()
}

/// Jensen-Shannon divergence in bits: `0.5 KL(p||m) + 0.5 KL(q||m)` with
/// `m = (p+q)/2`. Terms with zero mass contribute zero.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    if p.len() != q.len() {
        return Err(EvalError::LengthMismatch(p.len(), q.len()));
    }
    for dist in [p, q] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(EvalError::Unnormalized(sum));
        }
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let jsd = 0.5 * kl_to_mid_bits(p, &m) + 0.5 * kl_to_mid_bits(q, &m);
    // Clamp tiny negative rounding noise.
    Ok(jsd.max(0.0).min(1.0))
}

/// Jensen-Shannon distance: square root of the divergence. In `[0, 1]`.
pub fn js_distance(p: &SenseDistribution, q: &SenseDistribution) -> Result<f64, EvalError> {
    if p.level != q.level {
        return Err(EvalError::LengthMismatch(p.values.len(), q.values.len()));
    }
    Ok(js_divergence(&p.values, &q.values)?.sqrt())
}

/// Per-instance evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceScore {
    pub item_id: String,
    pub language: Language,
    pub js1: f64,
    pub js2: f64,
    pub js3: f64,
}

impl InstanceScore {
    pub fn at(&self, level: Level) -> f64 {
        match level {
            Level::One => self.js1,
            Level::Two => self.js2,
            Level::Three => self.js3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub mean: f64,
    pub std: f64,
}

impl LevelScore {
    /// Renders as in the result tables: three decimals, `m ± s`.
    pub fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Aggregated evaluation result: per-level means (and std across runs when
/// aggregated), instance count, per-language breakdown and run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub split: Split,
    pub config_hash: String,
    pub levels: [LevelScore; 3],
    pub instance_count: usize,
    /// Fraction of instances that produced a scored prediction.
    pub coverage: f64,
    pub languages: BTreeMap<Language, [f64; 3]>,
    pub runs: usize,
    /// True when the aggregate covers a single run only.
    pub single_run: bool,
    /// True when at least one run failed and was excluded.
    pub partial: bool,
}

/// Builds a report from per-instance scores of one run.
pub fn report_from_scores(
    model_id: &str,
    split: Split,
    config_hash: &str,
    scores: &[InstanceScore],
    attempted: usize,
) -> EvalReport {
    let n = scores.len().max(1) as f64;
    let mut means = [0.0; 3];
    for s in scores {
        means[0] += s.js1;
        means[1] += s.js2;
        means[2] += s.js3;
    }
    for m in &mut means {
        *m /= n;
    }
    let mut languages: BTreeMap<Language, ([f64; 3], usize)> = BTreeMap::new();
    for s in scores {
        let entry = languages.entry(s.language).or_insert(([0.0; 3], 0));
        entry.0[0] += s.js1;
        entry.0[1] += s.js2;
        entry.0[2] += s.js3;
        entry.1 += 1;
    }
    EvalReport {
        model_id: model_id.to_string(),
        split,
        config_hash: config_hash.to_string(),
        levels: [
            LevelScore { mean: means[0], std: 0.0 },
            LevelScore { mean: means[1], std: 0.0 },
            LevelScore { mean: means[2], std: 0.0 },
        ],
        instance_count: scores.len(),
        coverage: if attempted == 0 { 0.0 } else { scores.len() as f64 / attempted as f64 },
        languages: languages
            .into_iter()
            .map(|(l, (sums, c))| (l, [sums[0] / c as f64, sums[1] / c as f64, sums[2] / c as f64]))
            .collect(),
        runs: 1,
        single_run: true,
        partial: false,
    }
}

/// Runs the model over a split and scores every instance at all levels.
pub fn evaluate(
    model: &HArchModel,
    corpus: &Corpus,
    split: Split,
    languages: Option<&BTreeSet<Language>>,
) -> Result<(Vec<InstanceScore>, EvalReport), EvalError> {
    let selected = corpus.select(Some(split), languages);
    if selected.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let mut scores = Vec::with_capacity(selected.len());
    for inst in &selected {
        let pooled = model.encode_pair(&inst.item_id, &inst.arg1, &inst.arg2)?;
        let out = model.infer(&pooled)?;
        scores.push(InstanceScore {
            item_id: inst.item_id.clone(),
            language: inst.language,
            js1: js_distance(&out.p1, &inst.gold1)?,
            js2: js_distance(&out.p2, &inst.gold2)?,
            js3: js_distance(&out.p3, &inst.gold3)?,
        });
    }
    let report = report_from_scores(
        &model.config.encoder,
        split,
        &model.config.hash(),
        &scores,
        selected.len(),
    );
    Ok((scores, report))
}

/// Aggregates per-run reports into mean-of-means and sample std per level.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::MismatchedReports("no reports".into()))?;
    for r in reports {
        if r.split != first.split || r.model_id != first.model_id {
            return Err(EvalError::MismatchedReports(format!(
                "{}/{} vs {}/{}",
                r.model_id, r.split, first.model_id, first.split
            )));
        }
    }
    let n = reports.len() as f64;
    let mut levels = [LevelScore { mean: 0.0, std: 0.0 }; 3];
    for (k, level) in levels.iter_mut().enumerate() {
        let means: Vec<f64> = reports.iter().map(|r| r.levels[k].mean).collect();
        let mean = means.iter().sum::<f64>() / n;
        let std = if reports.len() > 1 {
            (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        *level = LevelScore { mean, std };
    }
    let mut languages: BTreeMap<Language, [f64; 3]> = BTreeMap::new();
    for (lang, _) in &first.languages {
        let mut acc = [0.0; 3];
        for r in reports {
            if let Some(v) = r.languages.get(lang) {
                for k in 0..3 {
                    acc[k] += v[k] / n;
                }
            }
        }
        languages.insert(*lang, acc);
    }
    Ok(EvalReport {
        model_id: first.model_id.clone(),
        split: first.split,
        config_hash: first.config_hash.clone(),
        levels,
        instance_count: first.instance_count,
        coverage: reports.iter().map(|r| r.coverage).sum::<f64>() / n,
        languages,
        runs: reports.len(),
        single_run: reports.len() == 1,
        partial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force JS distance: direct KL sums in a separate
    /// code path (natural log, converted to bits at the end).
    pub fn js_distance_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut kl_p = 0.0;
        let mut kl_q = 0.0;
        for i in 0..p.len() {
            let m = 0.5 * (p[i] + q[i]);
            if p[i] > 0.0 {
                kl_p += p[i] * (p[i] / m).ln();
            }
            if q[i] > 0.0 {
                kl_q += q[i] * (q[i] / m).ln();
            }
        }
        let jsd_nats = 0.5 * kl_p + 0.5 * kl_q;
        (jsd_nats / std::f64::consts::LN_2).sqrt()
    }

    fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn identical_distributions_give_zero() {
        let p = SenseDistribution::uniform(Level::One);
        assert_eq!(js_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_one_hots_give_one() {
        let p = SenseDistribution::one_hot(Level::One, 0);
        let q = SenseDistribution::one_hot(Level::One, 1);
        assert!((js_distance(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_half_vs_one_hot() {
        let p = vec![0.5, 0.5];
        let q = vec![1.0, 0.0];
        let d = js_divergence(&p, &q).unwrap().sqrt();
        let oracle = js_distance_oracle(&p, &q);
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 0.5579).abs() < 1e-4);
    }

    #[test]
    fn matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [4usize, 17, 28] {
            for _ in 0..1000 {
                let p = random_dist(n, &mut rng);
                let q = random_dist(n, &mut rng);
                let d = js_divergence(&p, &q).unwrap().sqrt();
                let o = js_distance_oracle(&p, &q);
                assert!((d - o).abs() < 1e-9);
                assert!((0.0..=1.0).contains(&d));
                // Symmetry is exact.
                assert_eq!(
                    js_divergence(&p, &q).unwrap().to_bits(),
                    js_divergence(&q, &p).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn triangle_inequality_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let p = random_dist(17, &mut rng);
            let q = random_dist(17, &mut rng);
            let r = random_dist(17, &mut rng);
            let pq = js_divergence(&p, &q).unwrap().sqrt();
            let qr = js_divergence(&q, &r).unwrap().sqrt();
            let pr = js_divergence(&p, &r).unwrap().sqrt();
            assert!(pr <= pq + qr + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            js_divergence(&[0.5, 0.5], &[0.3, 0.3, 0.4]),
            Err(EvalError::LengthMismatch(2, 3))
        ));
        assert!(matches!(
            js_divergence(&[0.5, 0.4], &[0.5, 0.5]),
            Err(EvalError::Unnormalized(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let mk = |mean: f64| EvalReport {
            model_id: "m".into(),
            split: Split::Test,
            config_hash: "h".into(),
            levels: [LevelScore { mean, std: 0.0 }; 3],
            instance_count: 10,
            coverage: 1.0,
            languages: BTreeMap::new(),
            runs: 1,
            single_run: true,
            partial: false,
        };
        // Identical reports x3 -> std 0.
        let agg = aggregate_runs(&[mk(0.3), mk(0.3), mk(0.3)]).unwrap();
        assert_eq!(agg.levels[0].std, 0.0);
        assert_eq!(agg.runs, 3);
        assert!(!agg.single_run);

        // Sample std of {0.30, 0.32, 0.34} is 0.02.
        let agg = aggregate_runs(&[mk(0.30), mk(0.32), mk(0.34)]).unwrap();
        assert!((agg.levels[0].mean - 0.32).abs() < 1e-12);
        assert!((agg.levels[0].std - 0.02).abs() < 1e-12);
        assert_eq!(agg.levels[0].cell(), "0.320 ± 0.020");

        // Single report -> flagged.
        let agg = aggregate_runs(&[mk(0.5)]).unwrap();
        assert!(agg.single_run);
        assert_eq!(agg.levels[0].std, 0.0);

        // Mismatched split -> error.
        let mut other = mk(0.5);
        other.split = Split::Validation;
        assert!(aggregate_runs(&[mk(0.5), other]).is_err());
    }

    #[test]
    fn report_means_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scores: Vec<InstanceScore> = (0..50)
            .map(|i| InstanceScore {
                item_id: format!("i{i}"),
                language: Language::Eng,
                js1: rng.gen_range(0.0..1.0),
                js2: rng.gen_range(0.0..1.0),
                js3: rng.gen_range(0.0..1.0),
            })
            .collect();
        let a = report_from_scores("m", Split::Test, "h", &scores, scores.len());
        scores.reverse();
        let b = report_from_scores("m", Split::Test, "h", &scores, scores.len());
        for k in 0..3 {
            assert!((a.levels[k].mean - b.levels[k].mean).abs() < 1e-12);
        }
    }
}
