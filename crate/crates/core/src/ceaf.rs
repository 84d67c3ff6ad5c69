//! CEAF-REE: entity-level precision, recall and F1 for role-filler extraction.
//!
//! For each role of each document, gold entities `R` and predicted entities
//! `S` are aligned one-to-one so as to maximize the total similarity
//! `Φ = Σ φ(r, g(r))`, where `φ(r, s) = 1` iff every mention of `s` is among
//! the mentions of `r`. Precision is `Φ / |S|` and recall `Φ / |R|`
//! (entity self-similarity is always 1). Counts are pooled before dividing, so
//! the corpus-level numbers are micro averages.
//!
//! Because `φ` is 0/1, the optimal alignment is a maximum-cardinality
//! bipartite matching on the 1-edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ree::{Entity, Mention, RoleId, Span, Template};

/// How mentions are compared when computing `φ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Normalized strings (lowercase, collapsed whitespace, trimmed punctuation).
    #[default]
    Normalized,
    /// Raw strings, no normalization.
    Exact,
    /// Token spans; offset-free mentions fall back to normalized text.
    Span,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum MentionKey {
    Text(String),
    Span(Span),
}

fn mention_key(m: &Mention, mode: MatchMode) -> MentionKey {
    match (mode, m.span) {
        (MatchMode::Exact, _) => MentionKey::Text(m.text.clone()),
        (MatchMode::Span, Some(span)) => MentionKey::Span(span),
        _ => MentionKey::Text(m.normalized()),
    }
}

fn key_set(e: &Entity, mode: MatchMode) -> BTreeSet<MentionKey> {
    e.mentions().iter().map(|m| mention_key(m, mode)).collect()
}

/// `φ(gold, pred)`: 1 iff the predicted mention set is a subset of the gold one.
pub fn phi(gold: &Entity, pred: &Entity, mode: MatchMode) -> u32 {
    let gold = key_set(gold, mode);
    u32::from(pred.mentions().iter().all(|m| gold.contains(&mention_key(m, mode))))
}

/// 0/1 similarities between the gold entities (rows) and predicted entities
/// (columns) of one role in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        SimilarityMatrix { rows, cols, values }
    }

    pub fn from_entities(gold: &[Entity], pred: &[Entity], mode: MatchMode) -> Self {
        let gold_sets: Vec<_> = gold.iter().map(|e| key_set(e, mode)).collect();
        let pred_sets: Vec<_> = pred.iter().map(|e| key_set(e, mode)).collect();
        SimilarityMatrix::from_fn(gold.len(), pred.len(), |i, j| {
            pred_sets[j].is_subset(&gold_sets[i])
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.cols + col]
    }
}

/// One optimal one-to-one alignment. `pairs` is a witness; only `total` is
/// unique across optimal alignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alignment {
    /// (gold index, predicted index)
    pub pairs: Vec<(usize, usize)>,
    pub total: usize,
}

/// Maximum total similarity alignment via augmenting paths (Kuhn's algorithm).
pub fn best_alignment(matrix: &SimilarityMatrix) -> Alignment {
    let mut pred_owner: Vec<Option<usize>> = vec![None; matrix.cols];

    fn augment(
        m: &SimilarityMatrix,
        row: usize,
        seen: &mut [bool],
        pred_owner: &mut [Option<usize>],
    ) -> bool {
        for col in 0..m.cols {
            if m.get(row, col) && !seen[col] {
                seen[col] = true;
                let free = match pred_owner[col] {
                    None => true,
                    Some(other) => augment(m, other, seen, pred_owner),
                };
                if free {
                    pred_owner[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    for row in 0..matrix.rows {
        let mut seen = vec![false; matrix.cols];
        augment(matrix, row, &mut seen, &mut pred_owner);
    }

    let mut pairs: Vec<(usize, usize)> = pred_owner
        .iter()
        .enumerate()
        .filter_map(|(col, row)| row.map(|r| (r, col)))
        .collect();
    pairs.sort_unstable();
    Alignment {
        total: pairs.len(),
        pairs,
    }
}

/// Pooled counts: total similarity, number of predicted and of gold entities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn new(matched: usize, predicted: usize, gold: usize) -> Self {
        Counts {
            matched,
            predicted,
            gold,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.predicted == 0 && self.gold == 0
    }

    /// 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.predicted)
    }

    /// 0 when there is no gold entity.
    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn prf(&self) -> Prf {
        Prf {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts {
            matched: self.matched + rhs.matched,
            predicted: self.predicted + rhs.predicted,
            gold: self.gold + rhs.gold,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Score one role of one document.
pub fn score_role(gold: &[Entity], pred: &[Entity], mode: MatchMode) -> Counts {
    let alignment = best_alignment(&SimilarityMatrix::from_entities(gold, pred, mode));
    Counts::new(alignment.total, pred.len(), gold.len())
}

/// Per-role counts for one document.
pub type RoleCounts = [Counts; RoleId::COUNT];

pub fn score_document(gold: &Template, pred: &Template, mode: MatchMode) -> RoleCounts {
    RoleId::ALL.map(|role| score_role(gold.role(role), pred.role(role), mode))
}

pub fn sum_roles(counts: &RoleCounts) -> Counts {
    counts.iter().copied().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub per_role: RoleCounts,
    pub micro: Counts,
    /// Per-document role counts; role cells with no gold and no predicted
    /// entities are omitted when rendered.
    pub per_document: BTreeMap<String, RoleCounts>,
}

#[derive(Debug, Serialize)]
struct CountsJson {
    matched: usize,
    predicted: usize,
    gold: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl From<Counts> for CountsJson {
    fn from(c: Counts) -> Self {
        CountsJson {
            matched: c.matched,
            predicted: c.predicted,
            gold: c.gold,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

fn roles_json(counts: &RoleCounts, skip_empty: bool) -> serde_json::Map<String, serde_json::Value> {
    RoleId::ALL
        .iter()
        .filter(|r| !(skip_empty && counts[r.rank()].is_empty()))
        .map(|r| {
            (
                r.as_str().to_string(),
                serde_json::to_value(CountsJson::from(counts[r.rank()])).unwrap(),
            )
        })
        .collect()
}

impl ScoreReport {
    pub fn from_documents(per_document: BTreeMap<String, RoleCounts>) -> Self {
        let mut per_role = RoleCounts::default();
        for counts in per_document.values() {
            for (acc, c) in per_role.iter_mut().zip(counts) {
                *acc += *c;
            }
        }
        ScoreReport {
            micro: sum_roles(&per_role),
            per_role,
            per_document,
        }
    }

    pub fn role(&self, role: RoleId) -> Counts {
        self.per_role[role.rank()]
    }

    /// Restrict to a subset of documents and re-pool.
    pub fn restrict<'a>(&self, doc_ids: impl IntoIterator<Item = &'a str>) -> ScoreReport {
        let per_document = doc_ids
            .into_iter()
            .filter_map(|id| self.per_document.get(id).map(|c| (id.to_string(), *c)))
            .collect();
        ScoreReport::from_documents(per_document)
    }

    /// Role rows plus a micro row, P/R/F1 to two decimals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "role", "match", "pred", "gold", "P", "R", "F1"
        )
        .unwrap();
        let rows = RoleId::ALL
            .iter()
            .map(|r| (r.as_str(), self.role(*r)))
            .chain(std::iter::once(("micro", self.micro)));
        for (name, c) in rows {
            writeln!(
                out,
                "{:<8} {:>6} {:>6} {:>6} {:>6.2} {:>6.2} {:>6.2}",
                name,
                c.matched,
                c.predicted,
                c.gold,
                c.precision(),
                c.recall(),
                c.f1()
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self, include_documents: bool) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("per_role".into(), roles_json(&self.per_role, false).into());
        obj.insert(
            "micro".into(),
            serde_json::to_value(CountsJson::from(self.micro)).unwrap(),
        );
        if include_documents {
            let docs: serde_json::Map<_, _> = self
                .per_document
                .iter()
                .map(|(id, c)| (id.clone(), roles_json(c, true).into()))
                .collect();
            obj.insert("per_document".into(), docs.into());
        }
        obj.into()
    }
}

/// Score every gold document; documents absent from `pred` count as empty
/// predictions. Predictions for unknown documents are an error.
pub fn score_corpus(
    gold: &BTreeMap<String, Template>,
    pred: &BTreeMap<String, Template>,
    mode: MatchMode,
) -> Result<ScoreReport> {
    if let Some(unknown) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::UnknownPrediction(unknown.clone()));
    }
    let per_document = gold
        .iter()
        .map(|(id, g)| {
            let counts = match pred.get(id) {
                Some(p) => score_document(g, p, mode),
                None => score_document(g, &Template::empty(id.clone()), mode),
            };
            (id.clone(), counts)
        })
        .collect();
    Ok(ScoreReport::from_documents(per_document))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(texts: &[&str]) -> Entity {
        Entity::new(texts.iter().map(|t| Mention::text_only(*t)).collect()).unwrap()
    }

    // Exhaustive search over every one-to-one partial map from rows to columns.
    fn brute_force(m: &SimilarityMatrix) -> usize {
        fn go(m: &SimilarityMatrix, row: usize, used: &mut Vec<bool>) -> usize {
            if row == m.rows() {
                return 0;
            }
            let mut best = go(m, row + 1, used);
            for col in 0..m.cols() {
                if !used[col] {
                    used[col] = true;
                    best = best.max(usize::from(m.get(row, col)) + go(m, row + 1, used));
                    used[col] = false;
                }
            }
            best
        }
        go(m, 0, &mut vec![false; m.cols()])
    }

    #[test]
    fn phi_subset_semantics() {
        let gold = ent(&["Pilmai telephone company building", "telephone company offices"]);
        assert_eq!(phi(&gold, &ent(&["telephone company offices"]), MatchMode::Normalized), 1);
        assert_eq!(phi(&gold, &gold, MatchMode::Normalized), 1);
        assert_eq!(phi(&ent(&["water pipes"]), &ent(&["telephone company offices"]), MatchMode::Normalized), 0);
        // all mentions of a multi-mention prediction must be in gold
        assert_eq!(phi(&gold, &ent(&["telephone company offices", "water pipes"]), MatchMode::Normalized), 0);
    }

    #[test]
    fn phi_modes() {
        let gold = ent(&["Shining Path"]);
        let pred = ent(&["shining path"]);
        assert_eq!(phi(&gold, &pred, MatchMode::Normalized), 1);
        assert_eq!(phi(&gold, &pred, MatchMode::Exact), 0);
        let a = Entity::single(Mention::new("shining path", 3, 4));
        let b = Entity::single(Mention::new("shining path", 9, 10));
        assert_eq!(phi(&a, &b, MatchMode::Normalized), 1);
        assert_eq!(phi(&a, &b, MatchMode::Span), 0);
        assert_eq!(phi(&a, &a, MatchMode::Span), 1);
    }

    #[test]
    fn three_gold_four_pred_with_a_duplicate() {
        // s4 matches the same gold as s3
        let m = SimilarityMatrix::from_fn(3, 4, |i, j| (i, j) == (0, 0) || (i, j) == (1, 1) || (i == 2 && j >= 2));
        assert_eq!(brute_force(&m), 3);
        let a = best_alignment(&m);
        assert_eq!(a.total, 3);
        assert_eq!(a.pairs.len(), 3);
    }

    #[test]
    fn empty_sides() {
        let m = SimilarityMatrix::from_fn(3, 0, |_, _| true);
        let a = best_alignment(&m);
        assert_eq!(a.total, 0);
        assert!(a.pairs.is_empty());
        assert_eq!(best_alignment(&SimilarityMatrix::from_fn(0, 0, |_, _| true)).total, 0);
    }

    #[test]
    fn alignment_needs_augmenting_path() {
        // greedy would match row 0 to col 0 and strand row 1
        let m = SimilarityMatrix::from_fn(2, 2, |i, j| !(i == 1 && j == 1));
        assert_eq!(best_alignment(&m).total, 2);
    }

    #[test]
    fn worked_cases() {
        let gold = vec![ent(&["a", "a2"]), ent(&["b"]), ent(&["c", "c2"])];
        // case 1: the fourth prediction is a coreferent duplicate of the third
        let pred = vec![ent(&["a"]), ent(&["b"]), ent(&["c"]), ent(&["c2"])];
        let c = score_role(&gold, &pred, MatchMode::Normalized);
        assert_eq!(c, Counts::new(3, 4, 3));
        assert!((c.precision() - 0.75).abs() < 0.005);
        assert!((c.recall() - 1.00).abs() < 0.005);
        assert!((c.f1() - 0.86).abs() < 0.005);

        let c = score_role(&gold, &gold, MatchMode::Normalized);
        assert_eq!(c.prf(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });

        let pred = vec![ent(&["a2"]), ent(&["c"])];
        let c = score_role(&gold, &pred, MatchMode::Normalized);
        assert!((c.precision() - 1.00).abs() < 0.005);
        assert!((c.recall() - 0.67).abs() < 0.005);
        assert!((c.f1() - 0.80).abs() < 0.005);
    }

    #[test]
    fn degenerate_denominators() {
        let c = Counts::new(0, 0, 3);
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
        let c = Counts::new(0, 2, 0);
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
        assert!(Counts::new(0, 0, 0).is_empty());
    }

    fn template(id: &str, role: RoleId, entities: Vec<Entity>) -> Template {
        let mut t = Template::empty(id);
        t.set_role(role, entities);
        t
    }

    #[test]
    fn corpus_pooling_is_micro() {
        let gold: BTreeMap<_, _> = ["d1", "d2"]
            .iter()
            .map(|id| (id.to_string(), template(id, RoleId::Target, vec![ent(&["x"]), ent(&["y"])])))
            .collect();
        let pred: BTreeMap<_, _> = ["d1", "d2"]
            .iter()
            .map(|id| (id.to_string(), template(id, RoleId::Target, vec![ent(&["x"])])))
            .collect();
        let report = score_corpus(&gold, &pred, MatchMode::Normalized).unwrap();
        assert_eq!(report.micro, Counts::new(2, 2, 4));
        assert!((report.micro.f1() - 2.0 / 3.0).abs() < 1e-12);

        let same = score_corpus(&gold, &gold, MatchMode::Normalized).unwrap();
        assert_eq!(same.micro.prf(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });

        let none = score_corpus(&gold, &BTreeMap::new(), MatchMode::Normalized).unwrap();
        assert_eq!((none.micro.recall(), none.micro.f1()), (0.0, 0.0));
    }

    #[test]
    fn unknown_prediction_doc_is_error() {
        let gold: BTreeMap<_, _> = [("d1".to_string(), Template::empty("d1"))].into();
        let pred: BTreeMap<_, _> = [("zz".to_string(), Template::empty("zz"))].into();
        assert!(matches!(
            score_corpus(&gold, &pred, MatchMode::Normalized),
            Err(Error::UnknownPrediction(_))
        ));
    }

    #[test]
    fn table_and_json_layout() {
        let gold: BTreeMap<_, _> =
            [("d1".to_string(), template("d1", RoleId::Victim, vec![ent(&["x"])]))].into();
        let report = score_corpus(&gold, &gold, MatchMode::Normalized).unwrap();
        let table = report.table();
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().last().unwrap().starts_with("micro"));
        assert!(table.contains("1.00"));
        let json = report.to_json(true);
        assert_eq!(json["micro"]["matched"], 1);
        assert_eq!(json["per_role"]["Weapon"]["gold"], 0);
        // empty cells are skipped in per-document breakdowns
        assert!(json["per_document"]["d1"].get("Weapon").is_none());
        assert_eq!(json["per_document"]["d1"]["Victim"]["f1"], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = SimilarityMatrix> {
            (0usize..=6, 0usize..=6).prop_flat_map(|(r, c)| {
                proptest::collection::vec(any::<bool>(), r * c)
                    .prop_map(move |v| SimilarityMatrix::from_fn(r, c, |i, j| v[i * c + j]))
            })
        }

        fn entities(max: usize) -> impl Strategy<Value = Vec<Entity>> {
            proptest::collection::vec(
                proptest::collection::vec(0u8..8, 1..3).prop_map(|ids| {
                    Entity::new(ids.iter().map(|i| Mention::text_only(format!("m{i}"))).collect()).unwrap()
                }),
                0..max,
            )
        }

        proptest! {
            #[test]
            fn matching_equals_brute_force(m in matrix()) {
                let a = best_alignment(&m);
                prop_assert_eq!(a.total, brute_force(&m));
                prop_assert!(a.total <= m.rows().min(m.cols()));
                let mut rows = BTreeSet::new();
                let mut cols = BTreeSet::new();
                for &(i, j) in &a.pairs {
                    prop_assert!(m.get(i, j));
                    prop_assert!(rows.insert(i));
                    prop_assert!(cols.insert(j));
                }
            }

            #[test]
            fn scores_bounded_and_permutation_invariant(
                gold in entities(6),
                pred in entities(6),
                seed in any::<u64>(),
            ) {
                let c = score_role(&gold, &pred, MatchMode::Normalized);
                for v in [c.precision(), c.recall(), c.f1()] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(c.matched <= gold.len().min(pred.len()));
                let mut g2 = gold.clone();
                let mut p2 = pred.clone();
                let k = (seed as usize) % (g2.len().max(1));
                g2.rotate_left(k);
                p2.reverse();
                prop_assert_eq!(score_role(&g2, &p2, MatchMode::Normalized), c);
            }

            #[test]
            fn spurious_prediction_lowers_precision(gold in entities(6), pred in entities(6)) {
                let before = score_role(&gold, &pred, MatchMode::Normalized);
                let mut more = pred.clone();
                more.push(ent(&["never-in-gold"]));
                let after = score_role(&gold, &more, MatchMode::Normalized);
                prop_assert_eq!(after.matched, before.matched);
                if before.matched > 0 {
                    prop_assert!(after.precision() < before.precision());
                }
            }
        }
    }
}
