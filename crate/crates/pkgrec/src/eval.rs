//! Ranking metrics, model evaluation, attention analytics, and
//! hyperparameter sweeps.
//!
//! Metrics are averaged per prediction instance and reported as percentages.
//! Rankings run over the full catalog (nothing is excluded, including items
//! already in the prefix); ties are broken in favor of the lower item index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{split, Corpus, DatasetSplit, Session, SplitConfig};
use crate::error::{Error, Result};
use crate::model::{
    draw_dependency_samples, draw_social_sample, AttentionRecord, BatchForward, EffectiveWiring,
    ModelConfig, ParameterSet, Variant,
};
use crate::streams;
use crate::train::{build_instances, train, TrainConfig};

/// K values reported by default.
pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

/// Instances scored per computation graph while evaluating.
const EVAL_CHUNK: usize = 256;

/// 1-based rank of `target` under descending scores, ties broken in favor
/// of the lower item index.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    let ts = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > ts || (s == ts && i < target))
        .count()
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Usage(format!("K must be at least 1, got {k}")));
    }
    Ok(())
}

/// Hit rate: percentage of instances whose target ranks within the top K.
/// Empty input yields 0.
pub fn hr_at_k(positions: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if positions.is_empty() {
        return Ok(0.0);
    }
    let hits = positions.iter().filter(|&&p| p <= k).count();
    Ok(100.0 * hits as f64 / positions.len() as f64)
}

/// NDCG: mean of 1/log2(1+pos) for positions within the top K, as a
/// percentage. Positions beyond K contribute 0. Empty input yields 0.
pub fn ndcg_at_k(positions: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if positions.is_empty() {
        return Ok(0.0);
    }
    let gain: f64 = positions
        .iter()
        .map(|&p| {
            if p <= k {
                1.0 / (1.0 + p as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * gain / positions.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: Variant,
    pub config: ModelConfig,
    pub rows: Vec<MetricRow>,
    pub instances: usize,
    pub skipped: usize,
}

impl EvalReport {
    /// Machine-readable form: `K,hr,ndcg,instances`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,hr,ndcg,instances\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{}",
                row.k, row.hr, row.ndcg, self.instances
            );
        }
        out
    }

    /// Aligned human-readable table, with a config echo.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "variant={} embed_dim={} hidden_dim={} layers={} social_budget={} dependency_budget={} dropout={} cell={}",
            self.variant.as_str(),
            self.config.embed_dim,
            self.config.hidden_dim,
            self.config.layers,
            self.config.social_budget,
            self.config.dependency_budget,
            self.config.dropout,
            self.config.cell.as_str(),
        );
        let _ = writeln!(
            out,
            "instances={} skipped={}",
            self.instances, self.skipped
        );
        let _ = writeln!(out, "{:>4}  {:>8}  {:>8}", "K", "HR", "NDCG");
        for row in &self.rows {
            let _ = writeln!(out, "{:>4}  {:>8.4}  {:>8.4}", row.k, row.hr, row.ndcg);
        }
        out
    }
}

/// Score every prediction instance derived from `sessions` (dropout off)
/// and aggregate HR@K / NDCG@K. Instances with out-of-range ids are skipped
/// and counted.
pub fn evaluate(
    corpus: &Corpus,
    params: &ParameterSet,
    config: &ModelConfig,
    variant: Variant,
    sessions: &[Session],
    ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    for &k in ks {
        check_k(k)?;
    }
    let wiring = EffectiveWiring::resolve(variant, config, corpus);
    let instances = build_instances(corpus, sessions);
    let num_items = corpus.num_packages();
    let num_developers = corpus.num_developers();

    let mut sample_rng = streams::stream_rng(seed, streams::EVAL);
    // Evaluation never drops units, so this rng is never consumed; the
    // forward pass only requires one to be present.
    let mut dropout_rng = streams::stream_rng(seed, streams::EVAL);

    let mut positions = Vec::new();
    let mut skipped = 0usize;
    for chunk in instances.chunks(EVAL_CHUNK.max(1)) {
        let deps = draw_dependency_samples(corpus, config, wiring, &mut sample_rng);
        let mut fwd = BatchForward::new(
            corpus,
            params,
            config,
            wiring,
            false,
            &deps,
            &mut dropout_rng,
        )?;
        for inst in chunk {
            let in_range = (inst.developer as usize) < num_developers
                && (inst.target as usize) < num_items
                && inst.prefix.iter().all(|&i| (i as usize) < num_items);
            if !in_range {
                skipped += 1;
                continue;
            }
            let social =
                draw_social_sample(corpus, config, wiring, inst.developer, &mut sample_rng);
            let out = fwd.instance(
                inst.developer,
                inst.time_step,
                &inst.prefix,
                social.as_ref(),
                &mut dropout_rng,
                false,
            )?;
            let scores = fwd.value(out.scores).data();
            positions.push(rank_of_target(scores, inst.target as usize));
        }
    }

    let rows = ks
        .iter()
        .map(|&k| {
            Ok(MetricRow {
                k,
                hr: hr_at_k(&positions, k)?,
                ndcg: ndcg_at_k(&positions, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        variant,
        config: config.clone(),
        rows,
        instances: positions.len(),
        skipped,
    })
}

/// Run the model over every instance derived from `sessions` and collect the
/// root attention weights. Empty when the social side is inactive.
pub fn collect_attention(
    corpus: &Corpus,
    params: &ParameterSet,
    config: &ModelConfig,
    variant: Variant,
    sessions: &[Session],
    seed: u64,
) -> Result<Vec<AttentionRecord>> {
    let wiring = EffectiveWiring::resolve(variant, config, corpus);
    if !wiring.social {
        return Ok(Vec::new());
    }
    let instances = build_instances(corpus, sessions);
    let mut sample_rng = streams::stream_rng(seed, streams::EVAL);
    let mut dropout_rng = streams::stream_rng(seed, streams::EVAL);
    let mut records = Vec::new();
    for chunk in instances.chunks(EVAL_CHUNK.max(1)) {
        let deps = draw_dependency_samples(corpus, config, wiring, &mut sample_rng);
        let mut fwd = BatchForward::new(
            corpus,
            params,
            config,
            wiring,
            false,
            &deps,
            &mut dropout_rng,
        )?;
        for inst in chunk {
            let social =
                draw_social_sample(corpus, config, wiring, inst.developer, &mut sample_rng);
            let out = fwd.instance(
                inst.developer,
                inst.time_step,
                &inst.prefix,
                social.as_ref(),
                &mut dropout_rng,
                true,
            )?;
            records.push(AttentionRecord {
                developer: inst.developer,
                session_t: inst.time_step,
                position: inst.prefix.len(),
                entries: out.attention,
            });
        }
    }
    Ok(records)
}

/// Comma-separated export of attention records:
/// `developer,session_T,position,friend,layer,alpha`.
pub fn records_to_csv(records: &[AttentionRecord]) -> String {
    let mut out = String::from("developer,session_T,position,friend,layer,alpha\n");
    for r in records {
        for e in &r.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.developer, r.session_t, r.position, e.friend, e.layer, e.alpha
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStat {
    pub developer: u32,
    pub friend: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeveloperStat {
    pub developer: u32,
    pub value: f64,
}

/// The three attention-variance families of the analytics report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionStats {
    /// Per (developer, friend): variance of α across positions within a
    /// session, averaged over sessions.
    pub intra_session: Vec<PairStat>,
    /// Per (developer, friend): variance across sessions of the
    /// session-mean α.
    pub inter_session: Vec<PairStat>,
    /// Per developer: variance across friends of the session-mean α,
    /// averaged over sessions.
    pub across_friend: Vec<DeveloperStat>,
}

fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Variance analytics over exported records, using only entries of
/// `final_layer`. Self-attention entries (friend == developer) are excluded.
pub fn attention_stats(records: &[AttentionRecord], final_layer: usize) -> AttentionStats {
    // (developer, session) -> friend -> alphas across positions.
    let mut per_session: BTreeMap<(u32, u64), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let slot = per_session.entry((r.developer, r.session_t)).or_default();
        for e in &r.entries {
            if e.layer == final_layer && e.friend != r.developer {
                slot.entry(e.friend).or_default().push(e.alpha);
            }
        }
    }

    // (developer, friend) -> per-session (variance, mean) pairs.
    let mut per_pair: BTreeMap<(u32, u32), Vec<(f64, f64)>> = BTreeMap::new();
    // developer -> per-session across-friend variance of session means.
    let mut per_dev: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for ((dev, _t), friends) in &per_session {
        let mut session_means = Vec::with_capacity(friends.len());
        for (&friend, alphas) in friends {
            let m = mean(alphas);
            per_pair
                .entry((*dev, friend))
                .or_default()
                .push((population_variance(alphas), m));
            session_means.push(m);
        }
        if !session_means.is_empty() {
            per_dev
                .entry(*dev)
                .or_default()
                .push(population_variance(&session_means));
        }
    }

    let mut stats = AttentionStats::default();
    for ((dev, friend), sessions) in &per_pair {
        let intra: Vec<f64> = sessions.iter().map(|(v, _)| *v).collect();
        let means: Vec<f64> = sessions.iter().map(|(_, m)| *m).collect();
        stats.intra_session.push(PairStat {
            developer: *dev,
            friend: *friend,
            value: mean(&intra),
        });
        stats.inter_session.push(PairStat {
            developer: *dev,
            friend: *friend,
            value: population_variance(&means),
        });
    }
    for (dev, vars) in &per_dev {
        stats.across_friend.push(DeveloperStat {
            developer: *dev,
            value: mean(vars),
        });
    }
    stats
}

/// Export of the three variance distributions:
/// `kind,developer,friend,value` (friend blank for across-friend rows).
pub fn stats_to_csv(stats: &AttentionStats) -> String {
    let mut out = String::from("kind,developer,friend,value\n");
    for s in &stats.intra_session {
        let _ = writeln!(out, "intra_session,{},{},{}", s.developer, s.friend, s.value);
    }
    for s in &stats.inter_session {
        let _ = writeln!(out, "inter_session,{},{},{}", s.developer, s.friend, s.value);
    }
    for s in &stats.across_friend {
        let _ = writeln!(out, "across_friend,{},,{}", s.developer, s.value);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Social neighborhood sample budget.
    Beta,
    /// Dependency neighborhood sample budget.
    Gamma,
    /// Session-merge factor applied to the week bucketing.
    Lifespan,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Lifespan => "lifespan",
        }
    }

    pub fn parse(name: &str) -> Option<SweepAxis> {
        match name {
            "beta" => Some(SweepAxis::Beta),
            "gamma" => Some(SweepAxis::Gamma),
            "lifespan" => Some(SweepAxis::Lifespan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub report: EvalReport,
}

/// Retrain and evaluate once per axis value, with a fixed seed.
///
/// Budget axes reuse the provided split; the lifespan axis merges adjacent
/// sessions (rather than re-ingesting raw events) and re-splits the merged
/// corpus with `split_config`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    corpus: &Corpus,
    dataset: &DatasetSplit,
    split_config: &SplitConfig,
    config: &ModelConfig,
    variant: Variant,
    train_config: &TrainConfig,
    axis: SweepAxis,
    values: &[usize],
    ks: &[usize],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one axis value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let report = match axis {
            SweepAxis::Beta => {
                let cfg = ModelConfig {
                    social_budget: value,
                    ..config.clone()
                };
                run_once(corpus, dataset, &cfg, variant, train_config, ks)?
            }
            SweepAxis::Gamma => {
                let cfg = ModelConfig {
                    dependency_budget: value,
                    ..config.clone()
                };
                run_once(corpus, dataset, &cfg, variant, train_config, ks)?
            }
            SweepAxis::Lifespan => {
                if value == 0 {
                    return Err(Error::Usage("lifespan factor must be at least 1".into()));
                }
                let merged = Corpus {
                    sessions: crate::data::merge_lifespan(&corpus.sessions, value as u64),
                    ..corpus.clone()
                };
                let redone = split(&merged.sessions, split_config)?;
                run_once(&merged, &redone, config, variant, train_config, ks)?
            }
        };
        rows.push(SweepRow { value, report });
    }
    Ok(rows)
}

fn run_once(
    corpus: &Corpus,
    dataset: &DatasetSplit,
    config: &ModelConfig,
    variant: Variant,
    train_config: &TrainConfig,
    ks: &[usize],
) -> Result<EvalReport> {
    let result = train(corpus, dataset, config, variant, train_config, |_| Ok(()))?;
    evaluate(
        corpus,
        &result.best_params,
        config,
        variant,
        &dataset.test,
        ks,
        train_config.seed,
    )
}
