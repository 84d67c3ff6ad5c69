//! Documents, roles, mentions, entities and templates.
//!
//! A [`Template`] is the unit of both gold annotation and system output: every
//! one of the five [`RoleId`]s maps to a (possibly empty) list of [`Entity`]
//! values. Gold entities list every alternative mention; predicted entities
//! normally carry exactly one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event roles, in linearization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoleId {
    PerpInd,
    PerpOrg,
    Target,
    Victim,
    Weapon,
}

impl RoleId {
    pub const COUNT: usize = 5;

    /// All roles in their fixed order.
    pub const ALL: [RoleId; RoleId::COUNT] = [
        RoleId::PerpInd,
        RoleId::PerpOrg,
        RoleId::Target,
        RoleId::Victim,
        RoleId::Weapon,
    ];

    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn from_rank(rank: usize) -> Option<RoleId> {
        RoleId::ALL.get(rank).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleId::PerpInd => "PerpInd",
            RoleId::PerpOrg => "PerpOrg",
            RoleId::Target => "Target",
            RoleId::Victim => "Victim",
            RoleId::Weapon => "Weapon",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            RoleId::PerpInd => "A person responsible for the incident.",
            RoleId::PerpOrg => "An organization responsible for the incident.",
            RoleId::Target => "A thing (inanimate object) that was attacked.",
            RoleId::Victim => {
                "The name of a person who was the obvious or apparent target of the attack \
                 or who became a victim of the attack."
            }
            RoleId::Weapon => "A device used by the perpetrator(s) in carrying out the attack.",
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoleId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRole(s.to_string()))
    }
}

/// Lowercase, collapse whitespace, and strip leading/trailing punctuation.
///
/// Idempotent: stripping happens after whitespace collapsing, so a second pass
/// finds nothing left to remove.
pub fn normalize_mention(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// An inclusive token span into a document body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        debug_assert!(begin <= end);
        Span { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.begin + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `self` lies inside `outer` and the two are not the same span.
    pub fn properly_within(&self, outer: &Span) -> bool {
        self.begin >= outer.begin && self.end <= outer.end && self != outer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mention {
    pub text: String,
    pub span: Option<Span>,
}

impl Mention {
    pub fn new(text: impl Into<String>, begin: usize, end: usize) -> Self {
        Mention {
            text: text.into(),
            span: Some(Span::new(begin, end)),
        }
    }

    /// A string-only mention (no document offsets).
    pub fn text_only(text: impl Into<String>) -> Self {
        Mention {
            text: text.into(),
            span: None,
        }
    }

    /// Build a mention from a document span, recovering its text.
    pub fn from_span(doc: &Document, span: Span) -> Result<Self> {
        if span.begin > span.end || span.end >= doc.tokens.len() {
            return Err(Error::SpanOutOfRange {
                doc_id: doc.doc_id.clone(),
                begin: span.begin,
                end: span.end,
                len: doc.tokens.len(),
            });
        }
        Ok(Mention {
            text: doc.tokens[span.begin..=span.end].join(" "),
            span: Some(span),
        })
    }

    pub fn is_offset_free(&self) -> bool {
        self.span.is_none()
    }

    pub fn normalized(&self) -> String {
        normalize_mention(&self.text)
    }

    /// Sort key for "first appearing" order: offset-bearing mentions by
    /// (begin, end), offset-free ones after all of them.
    fn order_key(&self) -> (bool, usize, usize) {
        match self.span {
            Some(s) => (false, s.begin, s.end),
            None => (true, 0, 0),
        }
    }
}

/// A set of coreferent mentions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    mentions: Vec<Mention>,
}

impl Entity {
    pub fn new(mentions: Vec<Mention>) -> Result<Self> {
        if mentions.is_empty() {
            return Err(Error::EmptyEntity);
        }
        Ok(Entity { mentions })
    }

    pub fn single(mention: Mention) -> Self {
        Entity {
            mentions: vec![mention],
        }
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    pub fn mentions_mut(&mut self) -> &mut [Mention] {
        &mut self.mentions
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    /// The earliest mention in document order; among offset-free mentions the
    /// first listed wins.
    pub fn first_mention(&self) -> &Mention {
        // min_by_key keeps the first of equal keys, which gives listing order
        // for offset-free ties.
        self.mentions
            .iter()
            .min_by_key(|m| m.order_key())
            .expect("entity has at least one mention")
    }

    /// This entity reduced to its first mention.
    pub fn first_mention_only(&self) -> Entity {
        Entity::single(self.first_mention().clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            tokens,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Whitespace-tokenize raw text into a document.
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Result<Self> {
        Document::new(
            doc_id,
            text.split_whitespace().map(str::to_string).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptyDocument(self.doc_id.clone()));
        }
        if self.tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyToken(self.doc_id.clone()));
        }
        Ok(())
    }

    /// Leftmost span whose tokens equal `text` split on whitespace.
    pub fn find_leftmost(&self, text: &str) -> Option<Span> {
        let needle: Vec<&str> = text.split_whitespace().collect();
        if needle.is_empty() || needle.len() > self.tokens.len() {
            return None;
        }
        self.tokens
            .windows(needle.len())
            .position(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
            .map(|begin| Span::new(begin, begin + needle.len() - 1))
    }
}

/// One generic template per document: every role present, possibly empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub doc_id: String,
    slots: [Vec<Entity>; RoleId::COUNT],
}

impl Template {
    pub fn empty(doc_id: impl Into<String>) -> Self {
        Template {
            doc_id: doc_id.into(),
            slots: Default::default(),
        }
    }

    pub fn role(&self, role: RoleId) -> &[Entity] {
        &self.slots[role.rank()]
    }

    /// Replace a role's entities, restoring canonical order.
    pub fn set_role(&mut self, role: RoleId, mut entities: Vec<Entity>) {
        canonical_sort(&mut entities);
        self.slots[role.rank()] = entities;
    }

    pub fn push(&mut self, role: RoleId, entity: Entity) {
        let slot = &mut self.slots[role.rank()];
        slot.push(entity);
        canonical_sort(slot);
    }

    pub fn iter(&self) -> impl Iterator<Item = (RoleId, &[Entity])> {
        RoleId::ALL.into_iter().map(|r| (r, self.role(r)))
    }

    pub fn num_entities(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn num_mentions(&self) -> usize {
        self.slots.iter().flatten().map(Entity::len).sum()
    }

    /// Every entity replaced by its first mention.
    pub fn first_mentions_only(&self) -> Template {
        let mut out = Template::empty(self.doc_id.clone());
        for (role, entities) in self.iter() {
            out.set_role(role, entities.iter().map(Entity::first_mention_only).collect());
        }
        out
    }

    pub(crate) fn slots_mut(&mut self) -> &mut [Vec<Entity>; RoleId::COUNT] {
        &mut self.slots
    }
}

/// Gold entities within a role are kept in first-mention document order.
pub(crate) fn canonical_sort(entities: &mut [Entity]) {
    entities.sort_by_key(|e| e.first_mention().order_key());
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub gold: BTreeMap<String, Template>,
}

impl Corpus {
    /// Validate referential integrity, resolve offset-free gold mentions by
    /// leftmost match and restore canonical entity order.
    pub fn new(documents: Vec<Document>, gold: BTreeMap<String, Template>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, doc) in documents.iter().enumerate() {
            doc.validate()?;
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
        }
        let mut gold = gold;
        for (doc_id, template) in gold.iter_mut() {
            let doc = index
                .get(doc_id)
                .map(|&i| &documents[i])
                .ok_or_else(|| Error::DanglingDocId(doc_id.clone()))?;
            resolve_template(doc, template)?;
        }
        Ok(Corpus { documents, gold })
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Gold template for a document, empty when the document has none.
    pub fn gold_for(&self, doc_id: &str) -> Template {
        self.gold
            .get(doc_id)
            .cloned()
            .unwrap_or_else(|| Template::empty(doc_id))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Check offsets against the document and resolve offset-free mentions.
pub fn resolve_template(doc: &Document, template: &mut Template) -> Result<()> {
    for slot in template.slots_mut().iter_mut() {
        for entity in slot.iter_mut() {
            for mention in entity.mentions_mut() {
                match mention.span {
                    Some(span) => {
                        let expected = Mention::from_span(doc, span)?;
                        if expected.text != mention.text {
                            return Err(Error::MentionTextMismatch {
                                doc_id: doc.doc_id.clone(),
                                text: mention.text.clone(),
                                span_text: expected.text,
                            });
                        }
                    }
                    None => mention.span = doc.find_leftmost(&mention.text),
                }
            }
        }
        canonical_sort(slot);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &str) -> Document {
        Document::from_text("d", tokens).unwrap()
    }

    #[test]
    fn role_ranks_are_a_bijection() {
        let mut ranks: Vec<usize> = RoleId::ALL.iter().map(|r| r.rank()).collect();
        ranks.sort();
        assert_eq!(ranks, vec![0, 1, 2, 3, 4]);
        for r in RoleId::ALL {
            assert_eq!(RoleId::from_rank(r.rank()), Some(r));
            assert_eq!(r.as_str().parse::<RoleId>().unwrap(), r);
        }
        assert!("Perpetrator".parse::<RoleId>().is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_mention("Shining  Path "), "shining path");
        assert_eq!(normalize_mention(""), "");
        assert_eq!(normalize_mention("FARC."), "farc");
        assert_eq!(normalize_mention(" \"the  U.S. embassy\" "), "the u.s. embassy");
    }

    #[test]
    fn first_mention_prefers_smallest_begin() {
        let e = Entity::new(vec![
            Mention::new("the attackers", 30, 31),
            Mention::new("two men", 4, 5),
        ])
        .unwrap();
        assert_eq!(e.first_mention(), &Mention::new("two men", 4, 5));

        let single = Entity::single(Mention::new("two men", 4, 5));
        assert_eq!(single.first_mention(), &Mention::new("two men", 4, 5));

        let mixed = Entity::new(vec![
            Mention::text_only("the attackers"),
            Mention::new("two men", 4, 5),
        ])
        .unwrap();
        assert_eq!(mixed.first_mention(), &Mention::new("two men", 4, 5));
    }

    #[test]
    fn first_mention_ties_break_on_end() {
        let e = Entity::new(vec![Mention::new("a b", 2, 3), Mention::new("a", 2, 2)]).unwrap();
        assert_eq!(e.first_mention().span, Some(Span::new(2, 2)));
    }

    #[test]
    fn empty_entity_rejected() {
        assert!(matches!(Entity::new(vec![]), Err(Error::EmptyEntity)));
    }

    #[test]
    fn documents_reject_empty_bodies_and_tokens() {
        assert!(Document::new("d", vec![]).is_err());
        assert!(Document::new("d", vec!["a".into(), "".into()]).is_err());
    }

    // Exhaustive scan over every token window, independent of `windows`.
    fn leftmost_oracle(tokens: &[String], needle: &[&str]) -> Option<(usize, usize)> {
        for b in 0..tokens.len() {
            for e in b..tokens.len() {
                let window: Vec<&str> = tokens[b..=e].iter().map(String::as_str).collect();
                if window == needle {
                    return Some((b, e));
                }
            }
        }
        None
    }

    #[test]
    fn leftmost_resolution_matches_exhaustive_scan() {
        let d = doc("the water pipes near the water pipes station burst");
        let oracle = leftmost_oracle(&d.tokens, &["water", "pipes"]);
        assert_eq!(oracle, Some((1, 2)));
        assert_eq!(d.find_leftmost("water pipes"), Some(Span::new(1, 2)));
        assert_eq!(d.find_leftmost("pipes station"), Some(Span::new(6, 7)));
        assert_eq!(d.find_leftmost("gas pipes"), None);
        assert_eq!(d.find_leftmost(""), None);
    }

    #[test]
    fn corpus_resolves_and_sorts() {
        let d = doc("bombs hit the water pipes and the embassy");
        let mut t = Template::empty("d");
        t.set_role(
            RoleId::Target,
            vec![
                Entity::single(Mention::text_only("the embassy")),
                Entity::single(Mention::text_only("water pipes")),
            ],
        );
        let corpus = Corpus::new(vec![d], [("d".to_string(), t)].into()).unwrap();
        let targets = corpus.gold["d"].role(RoleId::Target);
        assert_eq!(targets[0].first_mention().span, Some(Span::new(3, 4)));
        assert_eq!(targets[1].first_mention().span, Some(Span::new(6, 7)));
    }

    #[test]
    fn corpus_rejects_dangling_and_out_of_range() {
        let d = doc("a b c");
        let t = Template::empty("missing");
        let err = Corpus::new(vec![d.clone()], [("missing".to_string(), t)].into()).unwrap_err();
        assert!(err.to_string().contains("dangling doc_id"));

        let mut t = Template::empty("d");
        t.push(RoleId::Weapon, Entity::single(Mention::new("c d", 2, 3)));
        let err = Corpus::new(vec![d], [("d".to_string(), t)].into()).unwrap_err();
        assert!(matches!(err, Error::SpanOutOfRange { .. }));
    }

    #[test]
    fn proper_span_containment() {
        let outer = Span::new(3, 6);
        assert!(Span::new(4, 5).properly_within(&outer));
        assert!(Span::new(3, 5).properly_within(&outer));
        assert!(!outer.properly_within(&outer));
        assert!(!Span::new(2, 4).properly_within(&outer));
    }
}
