//! Seeded synthetic three-KB benchmark.
//!
//! Every topic owns a name and three facet vocabularies (definition,
//! principle, clinical). The encyclopedia KB `E` holds short entry chunks
//! whose topic-term density is `density_bias` times that of the classics KB
//! `T` and the clinical KB `P`. Topic names and typed facet terms are
//! annotated as entities, and each topic also mentions a partner topic, which
//! gives the alignment graph multi-hop links across KBs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    compute_token_len, write_queries, Chunk, Corpus, EntityRef, EntityType, GoldLabel, KbId, Query,
    QuestionType,
};
use crate::error::{Error, Result};

const QUESTION_TYPES: [QuestionType; 4] = [
    QuestionType::Definition,
    QuestionType::ClassicsPrinciple,
    QuestionType::ClinicalEvidence,
    QuestionType::CrossKbSynthesis,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub n_queries: usize,
    /// Fractions of definition, classics-principle, clinical-evidence and
    /// cross-KB questions.
    pub type_mix: [f64; 4],
    /// Target chunk count per KB; must name exactly `E`, `T` and `P`.
    pub kb_sizes: BTreeMap<KbId, usize>,
    pub density_bias: f64,
    pub seed: u64,
    pub n_topics: usize,
    pub shape: BenchShape,
}

/// Corpus shape knobs. Defaults produce the reference benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchShape {
    /// Probability that a T or P word slot holds a topic term; E uses this
    /// times `density_bias`.
    pub base_density: f64,
    /// Share of T and P topic terms about the chunk's own topic; the rest
    /// name other topics of the same book or random other topics.
    pub focus: f64,
    pub terms_per_facet: usize,
    pub e_docs_per_topic: usize,
    pub topics_per_book: usize,
    /// Inclusive word-count ranges per chunk.
    pub words_e: [usize; 2],
    pub words_t: [usize; 2],
    pub words_p: [usize; 2],
    /// Weights over name, definition, principle and clinical terms.
    pub mix_e: [f64; 4],
    pub mix_t: [f64; 4],
    pub mix_p: [f64; 4],
    /// Share of E entries that get a near-duplicate alias entry.
    pub alias_rate: f64,
    /// Probability that a word slot names the topic's partner topic.
    pub partner_rate: f64,
}

impl Default for BenchShape {
    fn default() -> Self {
        BenchShape {
            base_density: 0.2,
            focus: 0.5,
            terms_per_facet: 5,
            e_docs_per_topic: 8,
            topics_per_book: 4,
            words_e: [15, 25],
            words_t: [60, 90],
            words_p: [45, 70],
            mix_e: [0.2, 0.6, 0.1, 0.1],
            mix_t: [0.15, 0.1, 0.65, 0.1],
            mix_p: [0.15, 0.1, 0.1, 0.65],
            alias_rate: 0.2,
            partner_rate: 0.04,
        }
    }
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_queries: 500,
            type_mix: [0.25; 4],
            kb_sizes: [(kb("E"), 640), (kb("T"), 1200), (kb("P"), 960)].into_iter().collect(),
            density_bias: 2.0,
            seed: 42,
            n_topics: 80,
            shape: BenchShape::default(),
        }
    }
}

fn kb(s: &str) -> KbId {
    KbId::new(s).expect("static id")
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_queries == 0 {
            return bad("n_queries must be positive");
        }
        if self.type_mix.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return bad("type_mix fractions must be non-negative");
        }
        if (self.type_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("type_mix fractions must sum to 1");
        }
        if !self.density_bias.is_finite() || self.density_bias < 1.0 {
            return bad("density_bias must be at least 1");
        }
        let names: Vec<&str> = self.kb_sizes.keys().map(KbId::as_str).collect();
        if names != ["E", "P", "T"] {
            return bad("kb_sizes must name exactly E, T and P");
        }
        if self.kb_sizes.values().any(|&n| n == 0) {
            return bad("kb_sizes must be positive");
        }
        if self.n_topics < 2 {
            return bad("n_topics must be at least 2");
        }
        let sh = &self.shape;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(sh.base_density) && unit(sh.focus) && unit(sh.alias_rate) && unit(sh.partner_rate)) {
            return bad("shape rates must lie in [0,1]");
        }
        if sh.base_density + sh.partner_rate > 1.0 {
            return bad("base_density + partner_rate must not exceed 1");
        }
        if sh.terms_per_facet == 0 || sh.e_docs_per_topic == 0 || sh.topics_per_book == 0 {
            return bad("shape counts must be positive");
        }
        if [sh.words_e, sh.words_t, sh.words_p].iter().any(|[lo, hi]| *lo == 0 || lo > hi) {
            return bad("word ranges must be non-empty and positive");
        }
        for mix in [sh.mix_e, sh.mix_t, sh.mix_p] {
            if mix.iter().any(|w| !w.is_finite() || *w < 0.0) || mix.iter().sum::<f64>() <= 0.0 {
                return bad("facet mixes need non-negative weights with a positive sum");
            }
        }
        Ok(())
    }

    fn per_topic(&self, k: &str) -> usize {
        (self.kb_sizes[&kb(k)] / self.n_topics).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    /// Every topic name and facet term.
    pub vocabulary: BTreeSet<String>,
}

impl Benchmark {
    /// Writes `corpus.jsonl` and `queries.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus_path = dir.join("corpus.jsonl");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?,
        );
        self.corpus.write_jsonl(&mut f)?;
        f.flush().map_err(|e| Error::io(&corpus_path, e))?;
        let query_path = dir.join("queries.jsonl");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&query_path).map_err(|e| Error::io(&query_path, e))?,
        );
        write_queries(&self.queries, &mut f)?;
        f.flush().map_err(|e| Error::io(&query_path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Facet {
    Definition,
    Principle,
    Clinical,
}

impl Facet {
    fn of_kb(k: &str) -> Facet {
        match k {
            "E" => Facet::Definition,
            "T" => Facet::Principle,
            _ => Facet::Clinical,
        }
    }

    fn kb(self) -> &'static str {
        match self {
            Facet::Definition => "E",
            Facet::Principle => "T",
            Facet::Clinical => "P",
        }
    }
}

struct Term {
    word: String,
    entity: Option<EntityRef>,
}

struct Topic {
    name: Term,
    facets: BTreeMap<Facet, Vec<Term>>,
    partner: usize,
}

struct Vocab {
    topics: Vec<Topic>,
    filler: Vec<String>,
}

fn cjk(offset: u32) -> char {
    char::from_u32(0x4E00 + offset).expect("CJK block")
}

fn gen_vocab(rng: &mut ChaCha8Rng, n_topics: usize, terms_per_facet: usize) -> Vocab {
    let mut bigrams: BTreeSet<(char, char)> = BTreeSet::new();
    let mut word = |rng: &mut ChaCha8Rng, len: usize, lo: u32, span: u32| loop {
        let cs: Vec<char> = (0..len).map(|_| cjk(lo + rng.gen_range(0..span))).collect();
        let grams: Vec<(char, char)> = cs.windows(2).map(|w| (w[0], w[1])).collect();
        if grams.iter().all(|g| !bigrams.contains(g)) && cs.windows(2).all(|w| w[0] != w[1]) {
            bigrams.extend(grams);
            return cs.into_iter().collect::<String>();
        }
    };
    let name_types = [EntityType::Drug, EntityType::Disease, EntityType::Formula];
    let mut topics = Vec::with_capacity(n_topics);
    for t in 0..n_topics {
        let name_word = word(rng, 3, 0, 3000);
        let name = Term {
            entity: Some(EntityRef::new(&name_word, name_types[t % 3]).expect("non-empty")),
            word: name_word,
        };
        let mut facets = BTreeMap::new();
        for (facet, kinds) in [
            (Facet::Definition, [EntityType::Other, EntityType::Other]),
            (Facet::Principle, [EntityType::Concept, EntityType::Concept]),
            (Facet::Clinical, [EntityType::Symptom, EntityType::Therapy]),
        ] {
            let terms = (0..terms_per_facet)
                .map(|i| {
                    let w = word(rng, 2, 0, 3000);
                    let entity = kinds.get(i).map(|k| EntityRef::new(&w, *k).expect("non-empty"));
                    Term { word: w, entity }
                })
                .collect();
            facets.insert(facet, terms);
        }
        let partner = (t + 1 + rng.gen_range(0..n_topics - 1)) % n_topics;
        topics.push(Topic { name, facets, partner });
    }
    let filler = (0..600).map(|_| word(rng, 2, 6000, 400)).collect();
    Vocab { topics, filler }
}

struct Draft {
    chunk: Chunk,
    topic: Option<usize>,
    words: BTreeSet<String>,
}

struct Writer<'v> {
    vocab: &'v Vocab,
    shape: &'v BenchShape,
    density_e: f64,
}

impl Writer<'_> {
    fn density(&self, k: &str) -> f64 {
        if k == "E" {
            self.density_e
        } else {
            self.shape.base_density
        }
    }

    fn mix(&self, k: &str) -> [f64; 4] {
        match k {
            "E" => self.shape.mix_e,
            "T" => self.shape.mix_t,
            _ => self.shape.mix_p,
        }
    }

    fn topic_term<'t>(&self, rng: &mut ChaCha8Rng, t: &'t Topic, mix: &WeightedIndex<f64>) -> &'t Term {
        match mix.sample(rng) {
            0 => &t.name,
            f => {
                let facet = [Facet::Definition, Facet::Principle, Facet::Clinical][f - 1];
                t.facets[&facet].choose(rng).expect("non-empty facet")
            }
        }
    }

    /// Draws a chunk body of `n_words` words about `topic`. Off-focus topic
    /// words come from `others`.
    fn body(
        &self,
        rng: &mut ChaCha8Rng,
        k: &str,
        topic: usize,
        others: &[usize],
        n_words: usize,
    ) -> (String, BTreeSet<EntityRef>, BTreeSet<String>) {
        let t = &self.vocab.topics[topic];
        let mix = WeightedIndex::new(self.mix(k)).expect("positive weights");
        let rho = self.density(k);
        let focus = if k == "E" || others.is_empty() { 1.0 } else { self.shape.focus };
        let mut text = String::new();
        let mut entities = BTreeSet::new();
        let mut words = BTreeSet::new();
        for i in 0..n_words {
            let draw = rng.gen::<f64>();
            let term = if draw < rho {
                if rng.gen::<f64>() < focus {
                    let term = self.topic_term(rng, t, &mix);
                    words.insert(term.word.clone());
                    Some(term)
                } else {
                    let other = &self.vocab.topics[*others.choose(rng).expect("non-empty")];
                    Some(self.topic_term(rng, other, &mix))
                }
            } else if draw < rho + self.shape.partner_rate {
                Some(&self.vocab.topics[t.partner].name)
            } else {
                None
            };
            match term {
                Some(term) => {
                    text.push_str(&term.word);
                    entities.extend(term.entity.clone());
                }
                None => text.push_str(self.vocab.filler.choose(rng).expect("filler")),
            }
            text.push(if i + 1 == n_words {
                '。'
            } else if i % 8 == 7 {
                '，'
            } else {
                continue;
            });
        }
        (text, entities, words)
    }

    #[allow(clippy::too_many_arguments)]
    fn draft(
        &self,
        rng: &mut ChaCha8Rng,
        k: &str,
        topic: usize,
        others: &[usize],
        doc_id: &str,
        idx: usize,
        path: Vec<String>,
    ) -> Draft {
        let [lo, hi] = match k {
            "E" => self.shape.words_e,
            "T" => self.shape.words_t,
            _ => self.shape.words_p,
        };
        let n_words = rng.gen_range(lo..=hi);
        let (text, entities, words) = self.body(rng, k, topic, others, n_words);
        Draft {
            chunk: Chunk {
                chunk_id: format!("{doc_id}-c{idx:02}"),
                kb: kb(k),
                doc_id: doc_id.to_string(),
                path,
                token_len: compute_token_len(&text),
                text,
                entities,
            },
            topic: Some(topic),
            words,
        }
    }
}

/// Splits `total` into `parts` near-equal positive shares.
fn shares(total: usize, parts: usize) -> Vec<usize> {
    let parts = parts.clamp(1, total.max(1));
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

fn gen_chunks(rng: &mut ChaCha8Rng, spec: &BenchSpec, vocab: &Vocab) -> Vec<Draft> {
    let shape = &spec.shape;
    let writer = Writer {
        vocab,
        shape,
        density_e: (shape.base_density * spec.density_bias).min(0.95),
    };
    let n = spec.n_topics;
    let all: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();

    for t in 0..n {
        let name = &vocab.topics[t].name.word;
        for (d, per) in shares(spec.per_topic("E"), shape.e_docs_per_topic).into_iter().enumerate() {
            let doc = format!("E-t{t:03}-{d}");
            let entry: Vec<Draft> = (0..per)
                .map(|i| writer.draft(rng, "E", t, &[], &doc, i, vec![format!("{name}{d}")]))
                .collect();
            if rng.gen::<f64>() < shape.alias_rate {
                let src = &entry[0];
                let alias_doc = format!("E-t{t:03}-a{d}");
                let mut chunk = src.chunk.clone();
                chunk.chunk_id = format!("{alias_doc}-c00");
                chunk.doc_id = alias_doc;
                chunk.text.push('。');
                chunk.token_len = compute_token_len(&chunk.text);
                out.push(Draft {
                    chunk,
                    topic: Some(t),
                    words: src.words.clone(),
                });
            }
            out.extend(entry);
        }
    }

    for (b, topics) in all.chunks(shape.topics_per_book.max(1)).enumerate() {
        let doc = format!("T-b{b:03}");
        let book = format!("卷{b}");
        let mut preface_text = String::new();
        let mut preface_entities = BTreeSet::new();
        for &t in topics {
            let name = &vocab.topics[t].name;
            preface_text.push_str(&name.word);
            preface_text.push_str(vocab.filler.choose(rng).expect("filler"));
            preface_entities.extend(name.entity.clone());
        }
        preface_text.push('。');
        out.push(Draft {
            chunk: Chunk {
                chunk_id: format!("{doc}-c00"),
                kb: kb("T"),
                doc_id: doc.clone(),
                path: vec![book.clone()],
                token_len: compute_token_len(&preface_text),
                text: preface_text,
                entities: preface_entities,
            },
            topic: None,
            words: BTreeSet::new(),
        });
        let mut idx = 1;
        for &t in topics {
            let others: Vec<usize> = topics.iter().copied().filter(|&o| o != t).collect();
            let chapter = format!("篇{t}");
            for _ in 0..spec.per_topic("T") {
                out.push(writer.draft(rng, "T", t, &others, &doc, idx, vec![book.clone(), chapter.clone()]));
                idx += 1;
            }
        }
    }

    for t in 0..n {
        let others: Vec<usize> = all.iter().copied().filter(|&o| o != t).collect();
        for (p, per) in shares(spec.per_topic("P"), spec.per_topic("P").div_ceil(6)).into_iter().enumerate() {
            let doc = format!("P-t{t:03}-{p}");
            for i in 0..per {
                let section = ["摘要", "方法", "结果"][(i * 3) / per];
                out.push(writer.draft(rng, "P", t, &others, &doc, i, vec![doc.clone(), section.to_string()]));
            }
        }
    }
    out
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn apportion(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 4];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn gold_for(drafts: &[Draft], topic: usize, required: &BTreeSet<KbId>, terms: &[&Term]) -> BTreeSet<String> {
    let mut gold = BTreeSet::new();
    for k in required {
        let hits: Vec<(&Draft, usize)> = drafts
            .iter()
            .filter(|d| d.topic == Some(topic) && &d.chunk.kb == k)
            .map(|d| (d, terms.iter().filter(|t| d.words.contains(&t.word)).count()))
            .collect();
        let best = hits.iter().map(|h| h.1).max().unwrap_or(0);
        let floor = if best >= 2 { 2 } else { best.max(1) };
        let mut picked: Vec<&str> = hits
            .iter()
            .filter(|h| h.1 >= floor)
            .map(|h| h.0.chunk.chunk_id.as_str())
            .collect();
        if picked.is_empty() {
            picked.extend(hits.first().map(|h| h.0.chunk.chunk_id.as_str()));
        }
        gold.extend(picked.into_iter().map(String::from));
    }
    gold
}

pub fn gen_benchmark(spec: &BenchSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = gen_vocab(&mut rng, spec.n_topics, spec.shape.terms_per_facet);
    let drafts = gen_chunks(&mut rng, spec, &vocab);

    let counts = apportion(spec.n_queries, &spec.type_mix);
    let mut types: Vec<QuestionType> = QUESTION_TYPES
        .iter()
        .zip(counts)
        .flat_map(|(q, c)| std::iter::repeat_n(*q, c))
        .collect();
    types.shuffle(&mut rng);

    let pairs = [("T", "P"), ("P", "T"), ("E", "T"), ("T", "E"), ("E", "P"), ("P", "E")];
    let mut queries = Vec::with_capacity(types.len());
    for (i, qtype) in types.into_iter().enumerate() {
        let topic_ix = rng.gen_range(0..spec.n_topics);
        let topic = &vocab.topics[topic_ix];
        let (primary, facets): (&str, Vec<(Facet, usize)>) = match qtype {
            QuestionType::Definition => ("E", vec![(Facet::Definition, 3)]),
            QuestionType::ClassicsPrinciple => ("T", vec![(Facet::Principle, 3)]),
            QuestionType::ClinicalEvidence => ("P", vec![(Facet::Clinical, 3)]),
            QuestionType::CrossKbSynthesis => {
                let (a, b) = *pairs.choose(&mut rng).expect("pairs");
                (a, vec![(Facet::of_kb(a), 2), (Facet::of_kb(b), 2)])
            }
        };
        let required: BTreeSet<KbId> = facets.iter().map(|(f, _)| kb(f.kb())).collect();
        let mut terms: Vec<&Term> = Vec::new();
        for (facet, n) in &facets {
            terms.extend(topic.facets[facet].choose_multiple(&mut rng, *n));
        }
        let text = std::iter::once(topic.name.word.as_str())
            .chain(terms.iter().map(|t| t.word.as_str()))
            .collect::<Vec<_>>()
            .join(" ");
        let entities = std::iter::once(&topic.name)
            .chain(terms.iter().copied())
            .filter_map(|t| t.entity.clone());
        let gold = GoldLabel {
            primary_kb: kb(primary),
            evidence_chunk_ids: gold_for(&drafts, topic_ix, &required, &terms),
            required_kbs: required,
            question_type: qtype,
        };
        let mut q = Query::new(format!("q{:04}", i + 1), text).with_entities(entities);
        q.gold = Some(gold);
        queries.push(q);
    }

    let vocabulary = vocab
        .topics
        .iter()
        .flat_map(|t| std::iter::once(&t.name).chain(t.facets.values().flatten()))
        .map(|t| t.word.clone())
        .collect();
    let corpus = Corpus::from_chunks(
        vec![kb("E"), kb("T"), kb("P")],
        drafts.into_iter().map(|d| d.chunk).collect(),
    )?;
    Ok(Benchmark {
        corpus,
        queries,
        vocabulary,
    })
}
