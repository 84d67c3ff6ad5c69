//! Diagnostic evaluations: coreference-difficulty buckets, nested-role
//! subsets, paired bootstrap significance and decoding ablations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ceaf::{score_corpus, sum_roles, Counts, MatchMode, Prf, ScoreReport};
use crate::error::{Error, Result};
use crate::linearize::Dropped;
use crate::model::decode::{DecodeOptions, Phase, StepTrace};
use crate::model::{templates_by_id, GritModel};
use crate::ree::{normalize_mention, Corpus, Mention, RoleId, Template};

/// Average number of mentions per gold entity, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MentionRatio {
    pub mentions: usize,
    pub entities: usize,
}

impl MentionRatio {
    pub fn value(&self) -> f64 {
        self.mentions as f64 / self.entities as f64
    }

    /// `self <= num / den`, compared without rounding.
    fn at_most(&self, num: usize, den: usize) -> bool {
        self.mentions * den <= num * self.entities
    }
}

/// `None` for templates without entities.
pub fn compute_k(template: &Template) -> Option<MentionRatio> {
    let entities = template.num_entities();
    (entities > 0).then(|| MentionRatio {
        mentions: template.num_mentions(),
        entities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Bucket {
    One,
    UpTo1_25,
    UpTo1_5,
    UpTo1_75,
    Above1_75,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::One,
        Bucket::UpTo1_25,
        Bucket::UpTo1_5,
        Bucket::UpTo1_75,
        Bucket::Above1_75,
    ];

    pub fn of(k: MentionRatio) -> Bucket {
        if k.mentions == k.entities {
            Bucket::One
        } else if k.at_most(5, 4) {
            Bucket::UpTo1_25
        } else if k.at_most(3, 2) {
            Bucket::UpTo1_5
        } else if k.at_most(7, 4) {
            Bucket::UpTo1_75
        } else {
            Bucket::Above1_75
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::One => "k=1",
            Bucket::UpTo1_25 => "1<k<=1.25",
            Bucket::UpTo1_5 => "1.25<k<=1.5",
            Bucket::UpTo1_75 => "1.5<k<=1.75",
            Bucket::Above1_75 => "k>1.75",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub doc_ids: Vec<String>,
    pub report: ScoreReport,
}

#[derive(Debug, Clone)]
pub struct BucketReport {
    pub rows: Vec<BucketRow>,
    /// Gold documents without any entity.
    pub excluded: Vec<String>,
}

/// Split a scored corpus by the k bucket of each gold template.
pub fn bucketed_scores(gold: &BTreeMap<String, Template>, report: &ScoreReport) -> BucketReport {
    let mut members: BTreeMap<Bucket, Vec<String>> = Bucket::ALL.iter().map(|b| (*b, Vec::new())).collect();
    let mut excluded = Vec::new();
    for (id, t) in gold {
        match compute_k(t) {
            Some(k) => members.get_mut(&Bucket::of(k)).expect("all buckets").push(id.clone()),
            None => excluded.push(id.clone()),
        }
    }
    let rows = members
        .into_iter()
        .map(|(bucket, doc_ids)| BucketRow {
            bucket,
            report: report.restrict(doc_ids.iter().map(String::as_str)),
            doc_ids,
        })
        .collect();
    BucketReport { rows, excluded }
}

impl BucketReport {
    pub fn table(&self) -> String {
        let mut out = format!("{:<12} {:>5} {:>6} {:>6} {:>6}\n", "bucket", "docs", "P", "R", "F1");
        for row in &self.rows {
            let p = row.report.micro.prf();
            writeln!(
                out,
                "{:<12} {:>5} {:>6.2} {:>6.2} {:>6.2}",
                row.bucket.label(),
                row.doc_ids.len(),
                p.precision,
                p.recall,
                p.f1
            )
            .unwrap();
        }
        if !self.excluded.is_empty() {
            writeln!(out, "excluded (no gold entities): {}", self.excluded.len()).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "buckets": self.rows.iter().map(|r| serde_json::json!({
                "bucket": r.bucket.label(),
                "doc_ids": r.doc_ids,
                "report": r.report.to_json(false),
            })).collect::<Vec<_>>(),
            "excluded": self.excluded,
        })
    }
}

fn normalized_tokens(m: &Mention) -> Vec<String> {
    normalize_mention(&m.text).split(' ').map(str::to_string).collect()
}

/// `inner` strictly inside `outer`: a proper sub-span when both carry
/// offsets, otherwise a proper contiguous token run of the normalized text.
pub fn nested_in(inner: &Mention, outer: &Mention) -> bool {
    if let (Some(a), Some(b)) = (inner.span, outer.span) {
        return a.properly_within(&b);
    }
    let (a, b) = (normalized_tokens(inner), normalized_tokens(outer));
    a.len() < b.len() && b.windows(a.len()).any(|w| w == a.as_slice())
}

/// Documents where some mention of an `inner` entity is nested in some
/// mention of an `outer` entity.
pub fn nested_subset(gold: &BTreeMap<String, Template>, inner: RoleId, outer: RoleId) -> Result<Vec<String>> {
    if inner == outer {
        return Err(Error::Invalid(format!("nested roles must differ, got {inner} twice")));
    }
    Ok(gold
        .iter()
        .filter(|(_, t)| {
            t.role(inner).iter().flat_map(|e| e.mentions()).any(|m| {
                t.role(outer)
                    .iter()
                    .flat_map(|e| e.mentions())
                    .any(|o| nested_in(m, o))
            })
        })
        .map(|(id, _)| id.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub documents: usize,
    pub iterations: usize,
    pub seed: u64,
    pub f1_a: f64,
    pub f1_b: f64,
    /// `F1(A) - F1(B)` on the full corpus.
    pub observed_delta: f64,
    /// Fraction of replicates in which the observed winner does not win.
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const MIN_BOOTSTRAP_ITERATIONS: usize = 1000;

/// Paired bootstrap over documents. Replicate `r` draws from its own ChaCha
/// stream of `seed`, so results do not depend on evaluation order.
pub fn paired_bootstrap(
    gold: &BTreeMap<String, Template>,
    pred_a: &BTreeMap<String, Template>,
    pred_b: &BTreeMap<String, Template>,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if iterations < MIN_BOOTSTRAP_ITERATIONS {
        return Err(Error::Invalid(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_ITERATIONS} iterations, got {iterations}"
        )));
    }
    let (ka, kb): (BTreeSet<&String>, BTreeSet<&String>) = (pred_a.keys().collect(), pred_b.keys().collect());
    if ka != kb {
        let odd = ka.symmetric_difference(&kb).next().expect("sets differ");
        return Err(Error::Invalid(format!("prediction sets cover different documents (e.g. {odd})")));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("no gold documents".into()));
    }
    let a = score_corpus(gold, pred_a, MatchMode::Normalized)?;
    let b = score_corpus(gold, pred_b, MatchMode::Normalized)?;
    let docs: Vec<(Counts, Counts)> = gold
        .keys()
        .map(|id| (sum_roles(&a.per_document[id]), sum_roles(&b.per_document[id])))
        .collect();
    let n = docs.len();
    let observed = a.micro.f1() - b.micro.f1();

    let mut deltas = Vec::with_capacity(iterations);
    let mut non_wins = 0usize;
    for r in 0..iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (mut ca, mut cb) = (Counts::default(), Counts::default());
        for _ in 0..n {
            let (da, db) = docs[rng.random_range(0..n)];
            ca += da;
            cb += db;
        }
        let delta = ca.f1() - cb.f1();
        let wins = if observed > 0.0 {
            delta > 0.0
        } else if observed < 0.0 {
            delta < 0.0
        } else {
            false
        };
        non_wins += usize::from(!wins);
        deltas.push(delta);
    }
    deltas.sort_by(f64::total_cmp);
    let quantile = |q: f64| deltas[((q * iterations as f64).ceil() as usize).clamp(1, iterations) - 1];
    Ok(BootstrapResult {
        documents: n,
        iterations,
        seed,
        f1_a: a.micro.f1(),
        f1_b: b.micro.f1(),
        observed_delta: observed,
        p_value: non_wins as f64 / iterations as f64,
        ci_low: quantile(0.025),
        ci_high: quantile(0.975),
    })
}

impl BootstrapResult {
    pub fn table(&self) -> String {
        format!(
            "F1(A) {:.4}  F1(B) {:.4}  delta {:+.4}\np = {:.4}  95% CI [{:+.4}, {:+.4}]  ({} docs, {} iterations, seed {})\n",
            self.f1_a,
            self.f1_b,
            self.observed_delta,
            self.p_value,
            self.ci_low,
            self.ci_high,
            self.documents,
            self.iterations,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Ablation {
    Full,
    NoSepDownweigh,
    NoSpanOrder,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoSepDownweigh, Ablation::NoSpanOrder];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSepDownweigh => "no-sep-downweigh",
            Ablation::NoSpanOrder => "no-span-order",
        }
    }

    pub fn options(self, base: &DecodeOptions) -> DecodeOptions {
        let mut o = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoSepDownweigh => o.sep_downweigh = 1.0,
            Ablation::NoSpanOrder => o.enforce_span_order = false,
        }
        o
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub config: Ablation,
    pub scores: Prf,
    pub delta_f1: f64,
    pub dropped: Dropped,
    pub truncated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Decode steps at which the separator was a valid choice.
    pub separator_steps: usize,
    /// Steps where removing the downweigh would worsen the separator's rank.
    pub monotonicity_violations: usize,
}

/// Rank of the separator among the valid candidates (0 = argmax).
pub fn separator_rank(step: &StepTrace, sep: usize, factor: f64) -> Option<usize> {
    if step.phase != Phase::Begin {
        return None;
    }
    let sep_score = step.probs[sep] * factor;
    Some(
        step.probs
            .iter()
            .enumerate()
            .filter(|&(j, &p)| j != 0 && j != sep && p > sep_score)
            .count(),
    )
}

/// Decode `corpus` under each ablation of `base` and compare with the full decoder.
pub fn ablation_run(model: &GritModel, corpus: &Corpus, base: &DecodeOptions) -> Result<AblationReport> {
    let gold: BTreeMap<String, Template> = corpus
        .documents
        .iter()
        .map(|d| (d.doc_id.clone(), corpus.gold_for(&d.doc_id)))
        .collect();
    let mut rows: Vec<AblationRow> = Vec::new();
    let (mut separator_steps, mut violations) = (0, 0);
    for config in Ablation::ALL {
        let mut opts = config.options(base);
        opts.trace = true;
        let decoded = model.predict(&corpus.documents, &opts)?;
        let mut dropped = Dropped::default();
        for d in &decoded {
            dropped += d.dropped;
            let sep = d.output.sequence.sep;
            for step in &d.output.steps {
                let with = separator_rank(step, sep, base.sep_downweigh);
                let without = separator_rank(step, sep, 1.0);
                if let (Some(with), Some(without)) = (with, without) {
                    separator_steps += 1;
                    violations += usize::from(without > with);
                }
            }
        }
        let report = score_corpus(&gold, &templates_by_id(&decoded), MatchMode::Normalized)?;
        let scores = report.micro.prf();
        rows.push(AblationRow {
            config,
            delta_f1: rows.first().map_or(0.0, |full| scores.f1 - full.scores.f1),
            scores,
            dropped,
            truncated: decoded.iter().filter(|d| d.output.truncated).count(),
        });
    }
    Ok(AblationReport {
        rows,
        separator_steps,
        monotonicity_violations: violations,
    })
}

impl AblationReport {
    pub fn row(&self, config: Ablation) -> &AblationRow {
        self.rows.iter().find(|r| r.config == config).expect("every ablation is run")
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>6} {:>6} {:>7} {:>8}\n",
            "config", "P", "R", "F1", "dF1", "dropped"
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:<18} {:>6.2} {:>6.2} {:>6.2} {:>+7.2} {:>8}",
                r.config.label(),
                r.scores.precision * 100.0,
                r.scores.recall * 100.0,
                r.scores.f1 * 100.0,
                r.delta_f1 * 100.0,
                r.dropped.total()
            )
            .unwrap();
        }
        writeln!(
            out,
            "separator monotonicity: {}/{} steps",
            self.separator_steps - self.monotonicity_violations,
            self.separator_steps
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ree::Entity;

    fn with_counts(counts: &[usize]) -> Template {
        let mut t = Template::empty("d");
        for (i, &n) in counts.iter().enumerate() {
            let ms = (0..n).map(|j| Mention::text_only(format!("e{i} m{j}"))).collect();
            t.push(RoleId::Victim, Entity::new(ms).unwrap());
        }
        t
    }

    #[test]
    fn k_examples() {
        let k = compute_k(&with_counts(&[1, 1, 1])).unwrap();
        assert_eq!(k.value(), 1.0);
        assert_eq!(Bucket::of(k), Bucket::One);
        let k = compute_k(&with_counts(&[1, 3])).unwrap();
        assert_eq!(k.value(), 2.0);
        assert_eq!(Bucket::of(k), Bucket::Above1_75);
        let k = compute_k(&with_counts(&[1, 1, 1, 2])).unwrap();
        assert_eq!(k.value(), 1.25);
        assert_eq!(Bucket::of(k), Bucket::UpTo1_25);
        assert_eq!(compute_k(&Template::empty("x")), None);
    }

    #[test]
    fn bucket_edges_are_right_inclusive() {
        let b = |m, e| Bucket::of(MentionRatio { mentions: m, entities: e });
        assert_eq!(b(3, 2), Bucket::UpTo1_5);
        assert_eq!(b(7, 4), Bucket::UpTo1_75);
        assert_eq!(b(251, 200), Bucket::UpTo1_5);
        assert_eq!(b(351, 200), Bucket::Above1_75);
        assert_eq!(b(101, 100), Bucket::UpTo1_25);
    }

    #[test]
    fn substring_nesting_respects_word_boundaries() {
        let outer = Mention::text_only("two Shining Path members");
        assert!(nested_in(&Mention::text_only("shining path"), &outer));
        assert!(!nested_in(&Mention::text_only("two shining path members"), &outer));
        assert!(!nested_in(&Mention::text_only("path mem"), &outer));
        assert!(nested_in(&Mention::new("b", 3, 3), &Mention::new("a b", 2, 3)));
        assert!(!nested_in(&Mention::new("a b", 2, 3), &Mention::new("a b", 2, 3)));
    }

    #[test]
    fn same_role_nesting_rejected() {
        assert!(nested_subset(&BTreeMap::new(), RoleId::PerpOrg, RoleId::PerpOrg).is_err());
    }

    #[test]
    fn separator_rank_counts_better_candidates() {
        let step = StepTrace {
            phase: Phase::Begin,
            probs: vec![0.4, 0.1, 0.2, 0.3],
            chosen: 3,
        };
        assert_eq!(separator_rank(&step, 3, 1.0), Some(0));
        assert_eq!(separator_rank(&step, 3, 0.01), Some(2));
        let end = StepTrace {
            phase: Phase::End { begin: 1 },
            ..step
        };
        assert_eq!(separator_rank(&end, 3, 1.0), None);
    }
}
