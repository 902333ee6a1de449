//! Documents, event mentions, label inventories and relation annotations.
//!
//! Corpora are JSONL, one document per line:
//!
//! ```text
//! {"doc_id": "d1",
//!  "mentions": [{"tokens": ["troops", "attacked"], "trigger_index": 2, "event_class": "Attack"}],
//!  "relations": [{"i": 0, "j": 1, "label": "CAUSE"}]}
//! ```
//!
//! `trigger_index` is 1-based; relation endpoints `i`/`j` are 0-based
//! positions in `mentions`. Pairs are unordered and stored with `i < j`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum token sequence length.
pub const MAX_TOKENS: usize = 128;
/// Default per-document mention cap. Use 50 for OntoEvent-Doc-style corpora.
pub const DEFAULT_MENTION_CAP: usize = 40;
pub const NONE_CLASS: &str = "None";
pub const NA_RELATION: &str = "NA";

/// Event class inventory, relation inventory and the derived token label space.
///
/// Token labels are 0-based here: `0..|E|` are event classes, `|E|` marks a
/// non-trigger token and `|E| + 1` a padding position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpaces {
    event_classes: Vec<String>,
    relations: Vec<String>,
}

impl LabelSpaces {
    pub fn new(event_classes: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let count = |xs: &[String], name: &str| xs.iter().filter(|x| *x == name).count();
        if count(&event_classes, NONE_CLASS) != 1 {
            return Err(Error::Validation(format!(
                "event classes must contain \"{NONE_CLASS}\" exactly once"
            )));
        }
        if count(&relations, NA_RELATION) != 1 {
            return Err(Error::Validation(format!(
                "relations must contain \"{NA_RELATION}\" exactly once"
            )));
        }
        for (kind, xs) in [("event class", &event_classes), ("relation", &relations)] {
            let unique: BTreeSet<&String> = xs.iter().collect();
            if unique.len() != xs.len() {
                return Err(Error::Validation(format!("duplicate {kind} name")));
            }
        }
        Ok(Self {
            event_classes,
            relations,
        })
    }

    pub fn event_classes(&self) -> &[String] {
        &self.event_classes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_classes(&self) -> usize {
        self.event_classes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn token_label_count(&self) -> usize {
        self.event_classes.len() + 2
    }

    pub fn non_trigger_label(&self) -> usize {
        self.event_classes.len()
    }

    pub fn padding_label(&self) -> usize {
        self.event_classes.len() + 1
    }

    pub fn none_index(&self) -> usize {
        self.class_index(NONE_CLASS)
            .expect("validated on construction")
    }

    pub fn na_index(&self) -> usize {
        self.relation_index(NA_RELATION)
            .expect("validated on construction")
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.event_classes.iter().position(|c| c == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub tokens: Vec<String>,
    /// 1-based position of the trigger token.
    pub trigger_index: usize,
    pub event_class: usize,
    pub mention_id: Option<String>,
}

impl EventMention {
    /// The explicit id when present, else `<doc_id>#<position>`.
    pub fn id(&self, doc_id: &str, position: usize) -> String {
        self.mention_id
            .clone()
            .unwrap_or_else(|| format!("{doc_id}#{position}"))
    }

    pub fn trigger_token(&self) -> &str {
        &self.tokens[self.trigger_index - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub mentions: Vec<EventMention>,
    /// `(i, j) -> relation index` with `i < j`; absent pairs are NA.
    pub relations: BTreeMap<(usize, usize), usize>,
}

impl Document {
    /// Copy keeping only the first `cap` mentions and the relations among them.
    pub fn truncated(&self, cap: usize) -> Document {
        if self.mentions.len() <= cap {
            return self.clone();
        }
        Document {
            doc_id: self.doc_id.clone(),
            mentions: self.mentions[..cap].to_vec(),
            relations: self
                .relations
                .iter()
                .filter(|((_, j), _)| *j < cap)
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub document_count: usize,
    pub mention_count: usize,
    /// Annotated relation counts keyed by relation name.
    pub relation_counts: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn tally(docs: &[Document], spaces: &LabelSpaces) -> Self {
        let mut stats = CorpusStats {
            document_count: docs.len(),
            ..Default::default()
        };
        for doc in docs {
            stats.mention_count += doc.mentions.len();
            for &rel in doc.relations.values() {
                *stats
                    .relation_counts
                    .entry(spaces.relations()[rel].clone())
                    .or_default() += 1;
            }
        }
        stats
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    tokens: Vec<String>,
    trigger_index: usize,
    event_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mention_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRelation {
    i: usize,
    j: usize,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    doc_id: String,
    mentions: Vec<RawMention>,
    #[serde(default)]
    relations: Vec<RawRelation>,
}

/// Loads a JSONL corpus, truncating every mention to [`MAX_TOKENS`].
///
/// When `spaces` is `None` the label spaces are built from the data: "None"
/// (resp. "NA") first, then the remaining names sorted.
pub fn load_corpus(
    path: impl AsRef<Path>,
    spaces: Option<&LabelSpaces>,
) -> Result<(Vec<Document>, LabelSpaces, CorpusStats)> {
    load_corpus_with(path, spaces, MAX_TOKENS)
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    spaces: Option<&LabelSpaces>,
    max_tokens: usize,
) -> Result<(Vec<Document>, LabelSpaces, CorpusStats)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raws = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        raws.push((n + 1, raw));
    }

    let spaces = match spaces {
        Some(s) => s.clone(),
        None => spaces_from_raw(raws.iter().map(|(_, r)| r))?,
    };
    let docs = raws
        .into_iter()
        .map(|(line, raw)| convert_document(raw, &spaces, max_tokens, line))
        .collect::<Result<Vec<_>>>()?;
    let stats = CorpusStats::tally(&docs, &spaces);
    Ok((docs, spaces, stats))
}

fn spaces_from_raw<'a>(raws: impl Iterator<Item = &'a RawDocument>) -> Result<LabelSpaces> {
    let mut classes = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for raw in raws {
        classes.extend(raw.mentions.iter().map(|m| m.event_class.clone()));
        relations.extend(raw.relations.iter().map(|r| r.label.clone()));
    }
    classes.remove(NONE_CLASS);
    relations.remove(NA_RELATION);
    let classes = std::iter::once(NONE_CLASS.to_string())
        .chain(classes)
        .collect();
    let relations = std::iter::once(NA_RELATION.to_string())
        .chain(relations)
        .collect();
    LabelSpaces::new(classes, relations)
}

fn convert_document(
    raw: RawDocument,
    spaces: &LabelSpaces,
    max_tokens: usize,
    line: usize,
) -> Result<Document> {
    let invalid = |msg: String| Error::Validation(format!("line {line} ({}): {msg}", raw.doc_id));
    let mut mentions = Vec::with_capacity(raw.mentions.len());
    for (k, m) in raw.mentions.iter().enumerate() {
        let event_class = spaces
            .class_index(&m.event_class)
            .ok_or_else(|| invalid(format!("unknown event class {:?}", m.event_class)))?;
        let mut tokens = m.tokens.clone();
        tokens.truncate(max_tokens);
        if m.trigger_index == 0 || m.trigger_index > tokens.len() {
            return Err(invalid(format!(
                "mention {k}: trigger_index {} outside 1..={}",
                m.trigger_index,
                tokens.len()
            )));
        }
        mentions.push(EventMention {
            tokens,
            trigger_index: m.trigger_index,
            event_class,
            mention_id: m.mention_id.clone(),
        });
    }
    let mut relations = BTreeMap::new();
    for r in &raw.relations {
        let label = spaces
            .relation_index(&r.label)
            .ok_or_else(|| invalid(format!("unknown relation {:?}", r.label)))?;
        if r.i == r.j {
            return Err(invalid(format!("self-pair ({}, {})", r.i, r.j)));
        }
        let key = (r.i.min(r.j), r.i.max(r.j));
        if key.1 >= mentions.len() {
            return Err(invalid(format!("relation endpoint {} out of range", key.1)));
        }
        if relations.insert(key, label).is_some() {
            return Err(invalid(format!("more than one relation for pair {key:?}")));
        }
    }
    Ok(Document {
        doc_id: raw.doc_id,
        mentions,
        relations,
    })
}

/// Writes documents as JSONL in the format read by [`load_corpus`].
pub fn write_corpus<W: Write>(mut out: W, docs: &[Document], spaces: &LabelSpaces) -> Result<()> {
    for doc in docs {
        let raw = RawDocument {
            doc_id: doc.doc_id.clone(),
            mentions: doc
                .mentions
                .iter()
                .map(|m| RawMention {
                    tokens: m.tokens.clone(),
                    trigger_index: m.trigger_index,
                    event_class: spaces.event_classes()[m.event_class].clone(),
                    mention_id: m.mention_id.clone(),
                })
                .collect(),
            relations: doc
                .relations
                .iter()
                .map(|(&(i, j), &l)| RawRelation {
                    i,
                    j,
                    label: spaces.relations()[l].clone(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("corpus documents always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io("<corpus output>", e))?;
    }
    Ok(())
}

pub fn write_corpus_file(
    path: impl AsRef<Path>,
    docs: &[Document],
    spaces: &LabelSpaces,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(&mut w, docs, spaces)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every unordered pair `i < j` among the first `min(len, cap)` mentions,
/// labeled with its annotation or NA.
///
/// # Panics
/// If `cap < 2`.
pub fn enumerate_pairs(doc: &Document, cap: usize, na_index: usize) -> Vec<(usize, usize, usize)> {
    assert!(cap >= 2, "mention cap must be at least 2");
    let m = doc.mentions.len().min(cap);
    let mut pairs = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let label = doc.relations.get(&(i, j)).copied().unwrap_or(na_index);
            pairs.push((i, j, label));
        }
    }
    pairs
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    /// Includes the None class.
    pub n_classes: usize,
    /// Includes NA.
    pub n_relations: usize,
    pub vocab_size: usize,
    pub mentions_per_doc: usize,
    pub seed: u64,
}

/// Probability that a pair follows the class-pair rule rather than being NA.
pub const SYNTH_RULE_STRENGTH: f64 = 0.9;
const SYNTH_MIN_LEN: usize = 5;
const SYNTH_MAX_LEN: usize = 12;
const RELATION_NAMES: &[&str] = &[
    "BEFORE",
    "CAUSE",
    "SUBEVENT",
    "OVERLAP",
    "PRECONDITION",
    "CONTAINS",
    "SIMULTANEOUS",
    "BEGINS-ON",
    "ENDS-ON",
];

/// Class prior of the generator: weights `2n - c` for class index `c`.
pub fn class_prior(n_classes: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..n_classes).map(|c| (2 * n_classes - c) as f64).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Label spaces used by the generator: `None, E1, E2, ...` and
/// `NA, BEFORE, CAUSE, SUBEVENT, ...`.
pub fn synthetic_spaces(n_classes: usize, n_relations: usize) -> LabelSpaces {
    let classes = std::iter::once(NONE_CLASS.to_string())
        .chain((1..n_classes).map(|c| format!("E{c}")))
        .collect();
    let relations = std::iter::once(NA_RELATION.to_string())
        .chain((1..n_relations).map(|r| {
            RELATION_NAMES
                .get(r - 1)
                .map_or_else(|| format!("REL{r}"), |s| s.to_string())
        }))
        .collect();
    LabelSpaces::new(classes, relations).expect("generated names are unique")
}

/// Relation assigned by the generator's rule to an unordered class pair.
///
/// The table depends only on the seed and the inventory sizes.
#[allow(clippy::needless_range_loop)]
pub fn synthetic_relation_table(
    n_classes: usize,
    n_relations: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7ab1e);
    let mut table = vec![vec![0; n_classes]; n_classes];
    for a in 0..n_classes {
        for b in a..n_classes {
            let r = rng.random_range(0..n_relations);
            table[a][b] = r;
            table[b][a] = r;
        }
    }
    table
}

/// Generates a learnable corpus.
///
/// Each class owns a disjoint set of signature trigger tokens; all other
/// tokens are filler. Pair labels follow a fixed table over class pairs with
/// probability [`SYNTH_RULE_STRENGTH`] and are NA otherwise.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<(Vec<Document>, LabelSpaces)> {
    if cfg.n_docs == 0
        || cfg.n_classes == 0
        || cfg.n_relations == 0
        || cfg.vocab_size == 0
        || cfg.mentions_per_doc == 0
    {
        return Err(Error::Config(
            "all synthetic corpus counts must be >= 1".into(),
        ));
    }
    if cfg.vocab_size < cfg.n_classes {
        return Err(Error::Config(format!(
            "vocab_size {} is smaller than n_classes {}",
            cfg.vocab_size, cfg.n_classes
        )));
    }
    let spaces = synthetic_spaces(cfg.n_classes, cfg.n_relations);
    let per_class = (cfg.vocab_size / (2 * cfg.n_classes)).clamp(1, 3);
    let word = |i: usize| format!("w{i}");
    let signatures: Vec<Vec<String>> = (0..cfg.n_classes)
        .map(|c| (c * per_class..(c + 1) * per_class).map(word).collect())
        .collect();
    let filler: Vec<String> = (cfg.n_classes * per_class..cfg.vocab_size)
        .map(word)
        .collect();
    let table = synthetic_relation_table(cfg.n_classes, cfg.n_relations, cfg.seed);
    let prior = class_prior(cfg.n_classes);
    let na = spaces.na_index();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for d in 0..cfg.n_docs {
        let doc_id = format!("doc{d:05}");
        let mut mentions = Vec::with_capacity(cfg.mentions_per_doc);
        for m in 0..cfg.mentions_per_doc {
            let class = sample_categorical(&prior, &mut rng);
            let len = rng.random_range(SYNTH_MIN_LEN..=SYNTH_MAX_LEN);
            let trigger = rng.random_range(0..len);
            let tokens = (0..len)
                .map(|p| {
                    if p == trigger || filler.is_empty() {
                        signatures[class]
                            .choose(&mut rng)
                            .expect("nonempty")
                            .clone()
                    } else {
                        filler.choose(&mut rng).expect("nonempty").clone()
                    }
                })
                .collect();
            mentions.push(EventMention {
                tokens,
                trigger_index: trigger + 1,
                event_class: class,
                mention_id: Some(format!("{doc_id}-m{m}")),
            });
        }
        let mut relations = BTreeMap::new();
        for i in 0..mentions.len() {
            for j in i + 1..mentions.len() {
                let rule = table[mentions[i].event_class][mentions[j].event_class];
                let label = if rng.random::<f64>() < SYNTH_RULE_STRENGTH {
                    rule
                } else {
                    na
                };
                if label != na {
                    relations.insert((i, j), label);
                }
            }
        }
        docs.push(Document {
            doc_id,
            mentions,
            relations,
        });
    }
    Ok((docs, spaces))
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Dataset partition selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Seeded document-level partition into train / valid / test index lists.
pub fn split_indices(
    n_docs: usize,
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n_docs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5917_0000));
    let n_test = ((n_docs as f64 * test_fraction).round() as usize).min(n_docs);
    let n_valid = ((n_docs as f64 * valid_fraction).round() as usize).min(n_docs - n_test);
    let sorted = |xs: &[usize]| {
        let mut v = xs.to_vec();
        v.sort_unstable();
        v
    };
    [
        sorted(&order[n_test + n_valid..]),
        sorted(&order[n_test..n_test + n_valid]),
        sorted(&order[..n_test]),
    ]
}

pub fn select_split(docs: &[Document], indices: &[usize]) -> Vec<Document> {
    indices.iter().map(|&i| docs[i].clone()).collect()
}
