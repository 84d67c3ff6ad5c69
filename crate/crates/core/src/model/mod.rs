//! A generative pointer transformer for role-filler entity extraction.
//!
//! A single transformer stack encodes the source document and decodes the
//! pointer sequence: target tokens are embedded with the position of the
//! source token they point at ("pointer embeddings"), a partially causal mask
//! keeps source states independent of the target, and the output layer is a
//! parameter-free dot product against the source states.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod mask;
pub mod params;
pub mod pointer;
pub mod train;
pub mod transformer;
pub mod vocab;

use std::collections::BTreeMap;

pub use config::ModelConfig;
pub use decode::{decode, DecodeOptions, DecodeOutput};
pub use mask::{build_mask, AttentionMask};
pub use params::Params;
pub use pointer::TrainingExample;
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
pub use vocab::Vocab;

use crate::ceaf::{score_corpus, MatchMode, ScoreReport};
use crate::error::Result;
use crate::linearize::{build_source, delinearize_lenient, linearize, Dropped, Linearized, Unresolvable};
use crate::ree::{Corpus, Document, Template};

/// Configuration, vocabulary and weights: everything needed to decode.
#[derive(Debug, Clone, PartialEq)]
pub struct GritModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub template: Template,
    pub output: DecodeOutput,
    pub dropped: Dropped,
}

impl GritModel {
    /// Fresh seeded weights for `vocab`; `config.vocab_size` is set from it.
    pub fn new(mut config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let params = Params::init(&config);
        Ok(GritModel {
            config,
            vocab,
            params,
        })
    }

    pub fn source_ids(&self, doc: &Document) -> Vec<usize> {
        self.vocab.encode(&build_source(doc, self.config.max_source_len).tokens)
    }

    /// Encode a gold pair; entities that cannot be pointed at are skipped.
    pub fn example(&self, doc: &Document, gold: &Template) -> Result<(TrainingExample, Linearized)> {
        let src = build_source(doc, self.config.max_source_len);
        let lin = linearize(gold, &src, Unresolvable::Skip)?;
        let ex = TrainingExample {
            doc_id: doc.doc_id.clone(),
            source_ids: self.vocab.encode(&src.tokens),
            target: lin.sequence.indices.clone(),
        };
        Ok((ex, lin))
    }

    pub fn decode_document(&self, doc: &Document, opts: &DecodeOptions) -> Result<Decoded> {
        let src = build_source(doc, self.config.max_source_len);
        let ids = self.vocab.encode(&src.tokens);
        let output = decode(&self.params, &self.config, &ids, opts)?;
        let (template, dropped) = delinearize_lenient(&output.sequence, &src);
        Ok(Decoded {
            template,
            output,
            dropped,
        })
    }

    pub fn predict(&self, docs: &[Document], opts: &DecodeOptions) -> Result<Vec<Decoded>> {
        docs.iter().map(|d| self.decode_document(d, opts)).collect()
    }
}

/// Predicted templates keyed by doc_id.
pub fn templates_by_id(decoded: &[Decoded]) -> BTreeMap<String, Template> {
    decoded
        .iter()
        .map(|d| (d.template.doc_id.clone(), d.template.clone()))
        .collect()
}

/// Decode every document of `corpus` and score against its gold templates.
pub fn evaluate(model: &GritModel, corpus: &Corpus, opts: &DecodeOptions) -> Result<(ScoreReport, Vec<Decoded>)> {
    let decoded = model.predict(&corpus.documents, opts)?;
    let pred = templates_by_id(&decoded);
    let gold: BTreeMap<String, Template> = corpus
        .documents
        .iter()
        .map(|d| (d.doc_id.clone(), corpus.gold_for(&d.doc_id)))
        .collect();
    Ok((score_corpus(&gold, &pred, MatchMode::Normalized)?, decoded))
}
