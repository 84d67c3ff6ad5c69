//! Line-delimited JSON interchange for documents and templates.
//!
//! Documents: `{"doc_id": str, "tokens": [str, ...]}`
//!
//! Templates: `{"doc_id": str, "roles": {"PerpInd": [[{"text": str, "begin": int?, "end": int?}, ...], ...], ...}}`
//! where each role holds a list of entities and each entity a list of
//! alternative mentions. Offsets are inclusive and 0-based.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ree::{Corpus, Document, Entity, Mention, RoleId, Template};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMention {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    begin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTemplate {
    doc_id: String,
    roles: BTreeMap<String, Vec<Vec<RawMention>>>,
}

#[derive(Debug, Serialize)]
struct RawTemplateOut<'a> {
    doc_id: &'a str,
    roles: RawRolesOut,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "PascalCase")]
struct RawRolesOut {
    perp_ind: Vec<Vec<RawMention>>,
    perp_org: Vec<Vec<RawMention>>,
    target: Vec<Vec<RawMention>>,
    victim: Vec<Vec<RawMention>>,
    weapon: Vec<Vec<RawMention>>,
}

fn parse_err(path: &str, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.to_string(),
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_documents(text: &str, path: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (line, record) in records(text) {
        let doc: Document =
            serde_json::from_str(record).map_err(|e| parse_err(path, line, e))?;
        doc.validate().map_err(|e| parse_err(path, line, e))?;
        docs.push(doc);
    }
    Ok(docs)
}

fn mention_from_raw(raw: RawMention) -> std::result::Result<Mention, String> {
    match (raw.begin, raw.end) {
        (Some(begin), Some(end)) if begin <= end => Ok(Mention::new(raw.text, begin, end)),
        (Some(begin), Some(end)) => Err(format!("mention begin {begin} > end {end}")),
        (None, None) => Ok(Mention::text_only(raw.text)),
        _ => Err("mention must carry both begin and end or neither".into()),
    }
}

pub fn parse_templates(text: &str, path: &str) -> Result<BTreeMap<String, Template>> {
    let mut out = BTreeMap::new();
    for (line, record) in records(text) {
        let raw: RawTemplate =
            serde_json::from_str(record).map_err(|e| parse_err(path, line, e))?;
        let mut template = Template::empty(raw.doc_id.clone());
        for (name, entities) in raw.roles {
            let role: RoleId = name
                .parse()
                .map_err(|e: Error| parse_err(path, line, e))?;
            let mut parsed = Vec::with_capacity(entities.len());
            for mentions in entities {
                let mentions = mentions
                    .into_iter()
                    .map(mention_from_raw)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(path, line, e))?;
                parsed.push(Entity::new(mentions).map_err(|e| parse_err(path, line, e))?);
            }
            template.set_role(role, parsed);
        }
        if out.insert(raw.doc_id.clone(), template).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("duplicate template for doc_id {:?}", raw.doc_id),
            ));
        }
    }
    Ok(out)
}

pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_documents(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn read_templates(path: impl AsRef<Path>) -> Result<BTreeMap<String, Template>> {
    let path = path.as_ref();
    parse_templates(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn load_corpus(docs_path: impl AsRef<Path>, templates_path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::new(read_documents(docs_path)?, read_templates(templates_path)?)
}

pub fn document_line(doc: &Document) -> String {
    serde_json::to_string(doc).expect("documents serialize")
}

pub fn template_line(template: &Template) -> String {
    let role = |r: RoleId| -> Vec<Vec<RawMention>> {
        template
            .role(r)
            .iter()
            .map(|e| {
                e.mentions()
                    .iter()
                    .map(|m| RawMention {
                        text: m.text.clone(),
                        begin: m.span.map(|s| s.begin),
                        end: m.span.map(|s| s.end),
                    })
                    .collect()
            })
            .collect()
    };
    let out = RawTemplateOut {
        doc_id: &template.doc_id,
        roles: RawRolesOut {
            perp_ind: role(RoleId::PerpInd),
            perp_org: role(RoleId::PerpOrg),
            target: role(RoleId::Target),
            victim: role(RoleId::Victim),
            weapon: role(RoleId::Weapon),
        },
    };
    serde_json::to_string(&out).expect("templates serialize")
}

pub fn documents_to_string<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter().map(|d| document_line(d) + "\n").collect()
}

pub fn templates_to_string<'a>(templates: impl IntoIterator<Item = &'a Template>) -> String {
    templates.into_iter().map(|t| template_line(t) + "\n").collect()
}

/// Write via a sibling temporary file and rename into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_corpus(
    corpus: &Corpus,
    docs_path: impl AsRef<Path>,
    templates_path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(docs_path, documents_to_string(&corpus.documents).as_bytes())?;
    write_atomic(templates_path, templates_to_string(corpus.gold.values()).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ree::Span;

    const DOCS: &str = r#"{"doc_id": "d1", "tokens": ["two", "men", "blew", "up", "the", "water", "pipes"]}"#;
    const TEMPLATES: &str = r#"{"doc_id": "d1", "roles": {"Target": [[{"text": "water pipes"}]], "PerpInd": [[{"text": "two men", "begin": 0, "end": 1}]]}}"#;

    #[test]
    fn minimal_corpus() {
        let docs = parse_documents(DOCS, "docs").unwrap();
        let templates = parse_templates(TEMPLATES, "templates").unwrap();
        let corpus = Corpus::new(docs, templates).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        let t = &corpus.gold["d1"];
        assert_eq!(t.role(RoleId::Target).len(), 1);
        assert_eq!(t.role(RoleId::Target)[0].first_mention().span, Some(Span::new(5, 6)));
        assert!(t.role(RoleId::Victim).is_empty());
    }

    #[test]
    fn unknown_role_is_parse_error_with_line() {
        let text = format!("\n{}", TEMPLATES.replace("Target", "Location"));
        let err = parse_templates(&text, "t.jsonl").unwrap_err();
        assert!(err.is_parse());
        assert!(err.to_string().starts_with("t.jsonl:2:"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{DOCS}\n{{\"doc_id\": \"d2\", \"tokens\": [\n");
        let err = parse_documents(&text, "docs").unwrap_err();
        assert!(err.to_string().starts_with("docs:2:"), "{err}");
    }

    #[test]
    fn half_offsets_rejected() {
        let text = r#"{"doc_id": "d1", "roles": {"Target": [[{"text": "x", "begin": 1}]]}}"#;
        assert!(parse_templates(text, "t").is_err());
    }

    #[test]
    fn template_line_has_all_roles_in_order() {
        let t = Template::empty("d");
        assert_eq!(
            template_line(&t),
            r#"{"doc_id":"d","roles":{"PerpInd":[],"PerpOrg":[],"Target":[],"Victim":[],"Weapon":[]}}"#
        );
    }

    #[test]
    fn save_then_load_round_trips() {
        let docs = parse_documents(DOCS, "docs").unwrap();
        let templates = parse_templates(TEMPLATES, "templates").unwrap();
        let corpus = Corpus::new(docs, templates).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (dp, tp) = (dir.path().join("docs.jsonl"), dir.path().join("t.jsonl"));
        save_corpus(&corpus, &dp, &tp).unwrap();
        assert_eq!(load_corpus(&dp, &tp).unwrap(), corpus);
    }
}
