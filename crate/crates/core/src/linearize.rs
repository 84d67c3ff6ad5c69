//! Templates as pointer sequences over the source document.
//!
//! The source sequence is `[CLS] x_1 .. x_{m-1} [SEP]`. A target sequence is
//! `<S>` followed, for each role in fixed order, by the (begin, end) source
//! positions of each entity's first mention and a closing separator. Every
//! separator points at the final source `[SEP]` (index `m`); `<S>` is realized
//! as the `[CLS]` position 0.

use std::fmt::Write as _;

use log::warn;

use crate::error::{Error, Result};
use crate::ree::{Document, Entity, Mention, RoleId, Span, Template};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const DEFAULT_MAX_SOURCE_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSequence {
    pub doc_id: String,
    /// `[CLS]`, the (possibly truncated) body, `[SEP]`.
    pub tokens: Vec<String>,
    /// Body length before truncation.
    pub original_len: usize,
}

impl SourceSequence {
    /// Index `m` of the final `[SEP]`.
    pub fn sep_index(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn body_len(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn is_truncated(&self) -> bool {
        self.body_len() < self.original_len
    }

    /// Body span for a (begin, end) pair of source positions.
    pub fn mention(&self, begin: usize, end: usize) -> Mention {
        Mention::new(self.tokens[begin..=end].join(" "), begin - 1, end - 1)
    }
}

/// Wrap a document body in `[CLS]` .. `[SEP]`, truncating the tail so the
/// whole sequence fits in `max_len` positions.
pub fn build_source(doc: &Document, max_len: usize) -> SourceSequence {
    assert!(max_len >= 3, "max source length must leave room for one body token");
    let keep = doc.tokens.len().min(max_len - 2);
    let mut tokens = Vec::with_capacity(keep + 2);
    tokens.push(CLS.to_string());
    tokens.extend(doc.tokens[..keep].iter().cloned());
    tokens.push(SEP.to_string());
    SourceSequence {
        doc_id: doc.doc_id.clone(),
        tokens,
        original_len: doc.tokens.len(),
    }
}

/// A pointer target: `indices[0]` is `<S>`; role segments are closed by `sep`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PointerSequence {
    pub indices: Vec<usize>,
    pub sep: usize,
}

impl PointerSequence {
    pub const START: usize = 0;

    /// `<S>` followed by five separators.
    pub fn empty(sep: usize) -> Self {
        let mut indices = vec![Self::START];
        indices.extend(std::iter::repeat_n(sep, RoleId::COUNT));
        PointerSequence { indices, sep }
    }

    /// Positions after `<S>`.
    pub fn body(&self) -> &[usize] {
        &self.indices[1..]
    }

    pub fn num_separators(&self) -> usize {
        self.body().iter().filter(|&&i| i == self.sep).count()
    }

    /// Split the body into per-role segments (separators excluded).
    pub fn segments(&self) -> Result<Vec<&[usize]>> {
        if self.indices.first() != Some(&Self::START) {
            return Err(malformed("start", 0, "sequence must begin with <S>"));
        }
        let body = self.body();
        let mut out = Vec::with_capacity(RoleId::COUNT);
        let mut start = 0;
        for (i, &idx) in body.iter().enumerate() {
            if idx == self.sep {
                if out.len() == RoleId::COUNT {
                    return Err(malformed("after Weapon", i + 1, "more than five separators"));
                }
                out.push(&body[start..i]);
                start = i + 1;
            }
        }
        if out.len() != RoleId::COUNT {
            return Err(malformed(
                "end",
                self.indices.len(),
                &format!("expected five separators, found {}", out.len()),
            ));
        }
        if start != body.len() {
            return Err(malformed("after Weapon", start + 1, "indices after the fifth separator"));
        }
        Ok(out)
    }

    /// Check the structural invariants against a source sequence.
    pub fn validate(&self, src: &SourceSequence) -> Result<()> {
        delinearize(self, src).map(|_| ())
    }

    /// `1 2 | | 4 5 | | |`: pointers with `|` for separators, `<S>` omitted.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for (i, &idx) in self.body().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if idx == self.sep {
                out.push('|');
            } else {
                write!(out, "{idx}").unwrap();
            }
        }
        out
    }

    pub fn from_dump(text: &str, sep: usize) -> Result<Self> {
        let mut indices = vec![Self::START];
        for (i, tok) in text.split_whitespace().enumerate() {
            if tok == "|" {
                indices.push(sep);
            } else {
                let idx = tok.parse::<usize>().map_err(|_| {
                    malformed("dump", i + 1, &format!("not an index or separator: {tok:?}"))
                })?;
                indices.push(idx);
            }
        }
        Ok(PointerSequence { indices, sep })
    }
}

fn malformed(role: &str, position: usize, reason: &str) -> Error {
    Error::MalformedSequence {
        role: role.to_string(),
        position,
        reason: reason.to_string(),
    }
}

/// What to do with an entity whose first mention cannot be pointed at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Unresolvable {
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedEntity {
    pub doc_id: String,
    pub role: RoleId,
    pub text: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linearized {
    pub sequence: PointerSequence,
    pub skipped: Vec<SkippedEntity>,
}

/// Build the training target for a template over its source sequence.
pub fn linearize(
    template: &Template,
    src: &SourceSequence,
    policy: Unresolvable,
) -> Result<Linearized> {
    let sep = src.sep_index();
    let mut indices = vec![PointerSequence::START];
    let mut skipped = Vec::new();
    for (role, entities) in template.iter() {
        let mut spans: Vec<Span> = Vec::with_capacity(entities.len());
        for entity in entities {
            let first = entity.first_mention();
            let reason = match first.span {
                None => Some("first mention has no offsets"),
                Some(s) if s.end >= src.body_len() => Some("first mention beyond truncated source"),
                Some(_) => None,
            };
            if let Some(reason) = reason {
                if policy == Unresolvable::Fail {
                    return Err(Error::Unlinearizable {
                        doc_id: template.doc_id.clone(),
                        role,
                        text: first.text.clone(),
                        reason: reason.to_string(),
                    });
                }
                warn!("{}: dropping {} entity {:?}: {}", template.doc_id, role, first.text, reason);
                skipped.push(SkippedEntity {
                    doc_id: template.doc_id.clone(),
                    role,
                    text: first.text.clone(),
                    reason,
                });
                continue;
            }
            spans.push(first.span.unwrap());
        }
        spans.sort_unstable();
        spans.dedup();
        for s in spans {
            indices.push(s.begin + 1);
            indices.push(s.end + 1);
        }
        indices.push(sep);
    }
    Ok(Linearized {
        sequence: PointerSequence { indices, sep },
        skipped,
    })
}

/// Recover a template (one mention per entity) from a well-formed sequence.
pub fn delinearize(seq: &PointerSequence, src: &SourceSequence) -> Result<Template> {
    if seq.sep != src.sep_index() {
        return Err(malformed(
            "start",
            0,
            &format!("separator index {} does not match source length {}", seq.sep, src.len()),
        ));
    }
    let segments = seq.segments()?;
    let mut template = Template::empty(src.doc_id.clone());
    // position of the first index of each segment within `indices`
    let mut offset = 1;
    for (role, seg) in RoleId::ALL.into_iter().zip(segments) {
        if seg.len() % 2 != 0 {
            return Err(malformed(role.as_str(), offset + seg.len(), "odd-length role segment"));
        }
        let mut entities = Vec::with_capacity(seg.len() / 2);
        for (k, pair) in seg.chunks_exact(2).enumerate() {
            let (begin, end) = (pair[0], pair[1]);
            let position = offset + 2 * k;
            for (p, idx) in [(position, begin), (position + 1, end)] {
                if idx == 0 || idx >= src.sep_index() {
                    return Err(malformed(role.as_str(), p, &format!("index {idx} out of range")));
                }
            }
            if begin > end {
                return Err(malformed(role.as_str(), position, &format!("begin {begin} > end {end}")));
            }
            entities.push(Entity::single(src.mention(begin, end)));
        }
        template.set_role(role, entities);
        offset += seg.len() + 1;
    }
    Ok(template)
}

/// Counts of pairs discarded by [`delinearize_lenient`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Dropped {
    pub inverted: usize,
    pub out_of_range: usize,
    pub dangling: usize,
    pub missing_separators: usize,
}

impl Dropped {
    pub fn total(&self) -> usize {
        self.inverted + self.out_of_range + self.dangling
    }
}

impl std::ops::AddAssign for Dropped {
    fn add_assign(&mut self, rhs: Dropped) {
        self.inverted += rhs.inverted;
        self.out_of_range += rhs.out_of_range;
        self.dangling += rhs.dangling;
        self.missing_separators += rhs.missing_separators;
    }
}

/// Recover what can be recovered from a possibly malformed sequence: pairs
/// with begin > end or out-of-range indices are dropped, a trailing unpaired
/// index is dropped, and missing trailing roles are left empty.
pub fn delinearize_lenient(seq: &PointerSequence, src: &SourceSequence) -> (Template, Dropped) {
    let mut dropped = Dropped::default();
    let mut template = Template::empty(src.doc_id.clone());
    let sep = src.sep_index();
    let mut role_rank = 0;
    let mut segment: Vec<usize> = Vec::new();
    let flush = |segment: &mut Vec<usize>, rank: usize, dropped: &mut Dropped, template: &mut Template| {
        let Some(role) = RoleId::from_rank(rank) else {
            dropped.dangling += segment.len() / 2 + segment.len() % 2;
            segment.clear();
            return;
        };
        if segment.len() % 2 == 1 {
            dropped.dangling += 1;
            segment.pop();
        }
        let mut entities = Vec::new();
        for pair in segment.chunks_exact(2) {
            let (b, e) = (pair[0], pair[1]);
            if b == 0 || e == 0 || b >= sep || e >= sep {
                dropped.out_of_range += 1;
            } else if b > e {
                dropped.inverted += 1;
            } else {
                entities.push(Entity::single(src.mention(b, e)));
            }
        }
        template.set_role(role, entities);
        segment.clear();
    };
    for &idx in seq.body() {
        if idx == sep {
            flush(&mut segment, role_rank, &mut dropped, &mut template);
            role_rank += 1;
        } else {
            segment.push(idx);
        }
    }
    if !segment.is_empty() || role_rank < RoleId::COUNT {
        flush(&mut segment, role_rank, &mut dropped, &mut template);
        dropped.missing_separators = RoleId::COUNT.saturating_sub(role_rank);
    }
    (template, dropped)
}

/// One dump line: `doc_id<TAB>pointers`.
pub fn dump_line(doc_id: &str, seq: &PointerSequence) -> String {
    format!("{doc_id}\t{}", seq.to_dump())
}

/// Split a dump line into its doc_id and pointer text.
pub fn split_dump_line(line: &str) -> Result<(&str, &str)> {
    line.split_once('\t')
        .ok_or_else(|| malformed("dump", 0, "missing tab after doc_id"))
}
