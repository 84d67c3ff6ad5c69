//! Seeded synthetic REE corpus for end-to-end checks.
//!
//! Role fillers are planted inside role-specific marker sentences and padded
//! with filler sentences. Victims and targets may be mentioned again later
//! through an alias, so entities carry several mentions; some perpetrator
//! individuals are phrased as "two <org> members" with the organization span
//! nested inside.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ree::{Corpus, Document, Entity, Mention, RoleId, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a role is filled at all.
    pub role_rate: f64,
    /// Probability that a filled role gets a second entity.
    pub multi_rate: f64,
    /// Probability of a later alias mention for victims and targets.
    pub alias_rate: f64,
    /// Probability that a perpetrator individual nests the organization.
    pub nested_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_docs: 1000,
            dev_docs: 100,
            min_tokens: 40,
            max_tokens: 80,
            role_rate: 0.8,
            multi_rate: 0.3,
            alias_rate: 0.4,
            nested_rate: 0.3,
            seed: 2021,
        }
    }
}

pub struct SynthCorpus {
    pub train: Corpus,
    pub dev: Corpus,
}

const FIRST: &[&str] = &[
    "juan", "maria", "carlos", "ana", "jose", "luis", "elena", "pedro", "rosa", "miguel", "lucia",
    "jorge", "sofia", "diego", "marta", "pablo", "clara", "andres", "isabel", "tomas",
];
const LAST: &[&str] = &[
    "perez", "gomez", "ramirez", "torres", "flores", "rivera", "castro", "morales", "ortiz",
    "vargas", "mendoza", "rojas", "herrera", "medina", "aguilar", "navarro", "silva", "reyes",
    "campos", "vega",
];
const TITLE: &[&str] = &["mayor", "judge", "colonel", "priest", "senator", "journalist", "doctor", "minister"];
const CITY: &[&str] = &[
    "northern", "central", "san_lucas", "la_paz", "valdez", "coastal", "eastern", "el_rosal", "mirador",
    "villanueva",
];
const FACILITY: &[&str] = &[
    "power station", "embassy", "bank", "bridge", "police post", "pipeline", "radio station",
    "army barracks", "town hall", "bus terminal", "water plant", "courthouse",
];
const ORG_A: &[&str] = &["red", "people's", "national", "free", "black", "united", "popular", "armed"];
const ORG_B: &[&str] = &["dawn", "liberation", "resistance", "revolutionary", "workers", "justice", "path"];
const ORG_C: &[&str] = &["front", "army", "movement", "command", "brigade", "union"];
const NUMBER: &[&str] = &["two", "three", "four", "several", "five", "six"];
const KIND: &[&str] = &["gunmen", "guerrillas", "terrorists", "assailants", "rebels", "commandos"];
const MEMBER: &[&str] = &["members", "militants", "fighters"];
const WEAPON: &[&str] = &[
    "dynamite", "car bomb", "machine guns", "grenades", "rifles", "mortar rounds", "explosives",
    "rocket launcher", "pistols", "land mine",
];
const FILLER: &[&str] = &[
    "the", "officials", "said", "on", "monday", "authorities", "reported", "that", "an",
    "investigation", "is", "under", "way", "residents", "were", "calm", "in", "city", "region",
    "security", "forces", "arrived", "after", "incident", "local", "press", "government", "spokesman",
    "described", "situation", "as", "tense", "no", "further", "details", "released", "yesterday",
    "morning", "night", "area", "remains", "closed", "roads", "traffic", "was", "diverted", "news",
    "agency", "quoted", "sources", "meanwhile", "talks", "continued", "capital",
];

type Marker = (&'static [&'static str], &'static [&'static str]);

/// `(before, after)` contexts of the first mention for each role.
fn markers(role: RoleId) -> &'static [Marker] {
    match role {
        RoleId::PerpInd => &[
            (&["witnesses", "said"], &["opened", "fire", "."]),
            (&["the", "attack", "was", "carried", "out", "by"], &["."]),
            (&["police", "are", "searching", "for"], &["who", "fled", "."]),
        ],
        RoleId::PerpOrg => &[
            (&[], &["claimed", "responsibility", "for", "the", "attack", "."]),
            (&["a", "communique", "signed", "by", "the"], &["was", "received", "."]),
            (&["authorities", "blamed", "the"], &["for", "the", "attack", "."]),
        ],
        RoleId::Target => &[
            (&["the", "bomb", "severely", "damaged"], &["."]),
            (&["the", "rebels", "attacked"], &["at", "dawn", "."]),
            (&["an", "explosion", "destroyed"], &["."]),
        ],
        RoleId::Victim => &[
            (&["the", "attack", "killed"], &["."]),
            (&["among", "the", "dead", "was"], &["."]),
            (&["gunfire", "wounded"], &["near", "the", "square", "."]),
        ],
        RoleId::Weapon => &[
            (&["the", "attackers", "used"], &["."]),
            (&["investigators", "found", "traces", "of"], &["at", "the", "site", "."]),
            (&["the", "group", "was", "armed", "with"], &["."]),
        ],
    }
}

const ALIAS_MARKERS: &[Marker] = &[
    (&["reports", "about"], &["continued", "to", "arrive", "."]),
    (&["relatives", "of"], &["gathered", "outside", "."]),
    (&["photographs", "of"], &["appeared", "in", "the", "press", "."]),
];

struct PlannedEntity {
    role: RoleId,
    text: Vec<String>,
    alias: Option<Vec<String>>,
    /// Nested organization: (entity index within PerpOrg, offset in `text`).
    nested: Option<(usize, usize)>,
}

struct Sentence {
    tokens: Vec<String>,
    /// `(role, entity index within role, begin, end exclusive)` relative to the sentence.
    mentions: Vec<(RoleId, usize, usize, usize)>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

fn org_name(rng: &mut ChaCha8Rng) -> Vec<String> {
    vec![pick(rng, ORG_A).into(), pick(rng, ORG_B).into(), pick(rng, ORG_C).into()]
}

/// Filler text: `(canonical, alias)`.
fn filler_text(rng: &mut ChaCha8Rng, role: RoleId) -> (Vec<String>, Option<Vec<String>>) {
    match role {
        RoleId::PerpInd => (words(&format!("{} {}", pick(rng, NUMBER), pick(rng, KIND))), None),
        RoleId::PerpOrg => (org_name(rng), None),
        RoleId::Target => {
            let facility = pick(rng, FACILITY);
            (
                words(&format!("the {} {facility}", pick(rng, CITY))),
                Some(words(&format!("the {facility}"))),
            )
        }
        RoleId::Victim => {
            let last = pick(rng, LAST);
            let title = pick(rng, TITLE);
            (
                words(&format!("{title} {} {last}", pick(rng, FIRST))),
                Some(words(&format!("{title} {last}"))),
            )
        }
        RoleId::Weapon => (words(pick(rng, WEAPON)), None),
    }
}

fn plan(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<PlannedEntity> {
    let mut out: Vec<PlannedEntity> = Vec::new();
    for role in RoleId::ALL {
        if !rng.random_bool(cfg.role_rate) {
            continue;
        }
        let n = if rng.random_bool(cfg.multi_rate) { 2 } else { 1 };
        let mut made = 0;
        for _ in 0..10 {
            if made == n {
                break;
            }
            let (text, alias) = filler_text(rng, role);
            if out.iter().any(|e| e.text == text) {
                continue;
            }
            let alias = alias.filter(|_| rng.random_bool(cfg.alias_rate));
            out.push(PlannedEntity {
                role,
                text,
                alias,
                nested: None,
            });
            made += 1;
        }
    }
    // rewrite one perpetrator individual as "<number> <org> <members>"
    let org = out.iter().position(|e| e.role == RoleId::PerpOrg);
    let ind = out.iter().position(|e| e.role == RoleId::PerpInd);
    if let (Some(org), Some(ind)) = (org, ind) {
        if rng.random_bool(cfg.nested_rate) {
            let mut text = vec![pick(rng, NUMBER).to_string()];
            text.extend(out[org].text.iter().cloned());
            text.push(pick(rng, MEMBER).to_string());
            out[ind].text = text;
            out[ind].nested = Some((0, 1));
        }
    }
    out
}

fn marked(rng: &mut ChaCha8Rng, markers: &[Marker], fillers: &[(&[String], RoleId, usize)]) -> Sentence {
    let (before, after) = *markers.choose(rng).expect("markers");
    let mut tokens: Vec<String> = before.iter().map(|s| s.to_string()).collect();
    let mut mentions = Vec::new();
    for (k, (text, role, idx)) in fillers.iter().enumerate() {
        if k > 0 {
            tokens.push("and".into());
        }
        mentions.push((*role, *idx, tokens.len(), tokens.len() + text.len()));
        tokens.extend(text.iter().cloned());
    }
    tokens.extend(after.iter().map(|s| s.to_string()));
    Sentence { tokens, mentions }
}

fn filler_sentence(rng: &mut ChaCha8Rng, len: usize) -> Sentence {
    let mut tokens: Vec<String> = (0..len.saturating_sub(1)).map(|_| pick(rng, FILLER).to_string()).collect();
    tokens.push(".".into());
    tokens.truncate(len);
    Sentence {
        tokens,
        mentions: Vec::new(),
    }
}

fn generate_document(rng: &mut ChaCha8Rng, cfg: &SynthConfig, doc_id: &str) -> Result<(Document, Template)> {
    for _ in 0..100 {
        let entities = plan(rng, cfg);
        let index_in_role = |i: usize| entities[..i].iter().filter(|e| e.role == entities[i].role).count();

        // the first mentions: roles with two entities share one sentence about half the time
        let mut sentences = Vec::new();
        for role in RoleId::ALL {
            let members: Vec<usize> = (0..entities.len()).filter(|&i| entities[i].role == role).collect();
            let group = |ids: &[usize]| -> Vec<(&[String], RoleId, usize)> {
                ids.iter().map(|&i| (entities[i].text.as_slice(), role, index_in_role(i))).collect()
            };
            if members.len() > 1 && rng.random_bool(0.5) {
                sentences.push(marked(rng, markers(role), &group(&members)));
            } else {
                for &i in &members {
                    sentences.push(marked(rng, markers(role), &group(&[i])));
                }
            }
        }
        sentences.shuffle(rng);
        for (i, e) in entities.iter().enumerate() {
            if let Some(alias) = &e.alias {
                let s = marked(rng, ALIAS_MARKERS, &[(alias.as_slice(), e.role, index_in_role(i))]);
                sentences.push(s);
            }
        }

        let core: usize = sentences.iter().map(|s| s.tokens.len()).sum();
        let target = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        if core > target {
            continue;
        }
        let mut remaining = target - core;
        while remaining > 0 {
            let len = if remaining <= 8 { remaining } else { rng.random_range(3..=8) };
            let at = rng.random_range(0..=sentences.len());
            sentences.insert(at, filler_sentence(rng, len));
            remaining -= len;
        }

        let mut tokens = Vec::new();
        let mut mentions: BTreeMap<(usize, usize), Vec<Mention>> = BTreeMap::new();
        for s in &sentences {
            let base = tokens.len();
            for &(role, idx, b, e) in &s.mentions {
                let text = s.tokens[b..e].join(" ");
                mentions
                    .entry((role.rank(), idx))
                    .or_default()
                    .push(Mention::new(text, base + b, base + e - 1));
            }
            tokens.extend(s.tokens.iter().cloned());
        }
        // nested organization spans become extra mentions of the organization
        for (i, e) in entities.iter().enumerate() {
            if let Some((org_idx, offset)) = e.nested {
                let outer = mentions[&(e.role.rank(), index_in_role(i))][0].clone();
                let span = outer.span.expect("planted with offsets");
                let org_len = e.text.len() - 2;
                let b = span.begin + offset;
                let text = tokens[b..b + org_len].join(" ");
                mentions
                    .entry((RoleId::PerpOrg.rank(), org_idx))
                    .or_default()
                    .push(Mention::new(text, b, b + org_len - 1));
            }
        }

        let doc = Document::new(doc_id, tokens)?;
        let mut template = Template::empty(doc_id);
        for ((rank, _), ms) in mentions {
            let role = RoleId::from_rank(rank).expect("valid rank");
            template.push(role, Entity::new(ms)?);
        }
        return Ok((doc, template));
    }
    Err(Error::Config(format!(
        "cannot fit planted sentences into {} tokens",
        cfg.max_tokens
    )))
}

fn split(rng: &mut ChaCha8Rng, cfg: &SynthConfig, prefix: &str, n: usize) -> Result<Corpus> {
    let mut docs = Vec::with_capacity(n);
    let mut gold = BTreeMap::new();
    for i in 0..n {
        let id = format!("{prefix}-{i:04}");
        let (doc, template) = generate_document(rng, cfg, &id)?;
        docs.push(doc);
        gold.insert(id, template);
    }
    Corpus::new(docs, gold)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens {
        return Err(Error::Config("need 0 < min_tokens <= max_tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(SynthCorpus {
        train: split(&mut rng, cfg, "train", cfg.train_docs)?,
        dev: split(&mut rng, cfg, "dev", cfg.dev_docs)?,
    })
}
