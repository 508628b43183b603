//! Token- and entity-level scoring, the BIO auditor and the argmax baseline.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::labelspace::{Family, Tag, NUM_ORIGINAL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{gold} gold sentences but {pred} predicted")]
    SentenceCountMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: {gold} gold labels but {pred} predicted")]
    LengthMismatch { sentence: usize, gold: usize, pred: usize },
    #[error("baseline needs a non-empty training split")]
    EmptyTraining,
}

/// True/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }

    fn merge(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_shapes(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                sentence: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

/// Per-label counts over the five BIO tags, accumulated over the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenScores {
    pub per_label: [Counts; NUM_ORIGINAL],
    pub correct: usize,
    pub total: usize,
}

impl TokenScores {
    pub fn label(&self, tag: Tag) -> &Counts {
        &self.per_label[tag.index()]
    }

    /// Micro-averaged counts over the four aspect/opinion tags (`OTHER` excluded).
    pub fn micro(&self) -> Counts {
        let mut c = Counts::default();
        for tag in &Tag::ORIGINAL[1..] {
            c.merge(self.label(*tag));
        }
        c
    }

    pub fn micro_f1(&self) -> f64 {
        self.micro().f1()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
}

/// Scores word-level BIO labels. Auxiliary tags in `pred` count as wrong for
/// every label.
pub fn token_f1(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<TokenScores, EvalError> {
    check_shapes(gold, pred)?;
    let mut s = TokenScores::default();
    for (g_seq, p_seq) in gold.iter().zip(pred) {
        for (&g, &p) in g_seq.iter().zip(p_seq) {
            s.total += 1;
            if g == p {
                s.correct += 1;
                if g.is_original() {
                    s.per_label[g.index()].tp += 1;
                }
                continue;
            }
            if p.is_original() {
                s.per_label[p.index()].fp += 1;
            }
            if g.is_original() {
                s.per_label[g.index()].fn_ += 1;
            }
        }
    }
    Ok(s)
}

/// How entities are identified for entity-level scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityDefinition {
    /// B-/I- prefixes stripped, then scored token by token.
    CollapsedToken,
    /// Maximal B-X I-X* runs, credited only on exact boundary and type match.
    SpanExact,
}

impl EntityDefinition {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityDefinition::CollapsedToken => "collapsed",
            EntityDefinition::SpanExact => "span",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityScores {
    pub aspect: Counts,
    pub sentiment: Counts,
}

impl EntityScores {
    pub fn family(&self, family: Family) -> &Counts {
        match family {
            Family::Aspect => &self.aspect,
            Family::Sentiment => &self.sentiment,
        }
    }

    fn family_mut(&mut self, family: Family) -> &mut Counts {
        match family {
            Family::Aspect => &mut self.aspect,
            Family::Sentiment => &mut self.sentiment,
        }
    }

    pub fn micro(&self) -> Counts {
        let mut c = self.aspect;
        c.merge(&self.sentiment);
        c
    }
}

/// An entity span: inclusive word indices, family, and whether it opened with `B-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub family: Family,
    pub valid_start: bool,
}

/// Extracts spans. `I-X` continues a span of family X; otherwise it opens a
/// span flagged as an invalid start, which only matches an identical
/// invalid-start span.
pub fn spans(labels: &[Tag]) -> Vec<Span> {
    let mut out: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &tag) in labels.iter().enumerate() {
        let family = tag.family().filter(|_| tag.is_original());
        match (family, tag.is_inside(), open.as_mut()) {
            (Some(f), true, Some(span)) if span.family == f => span.end = i,
            (Some(f), inside, _) => {
                out.extend(open.take());
                open = Some(Span {
                    start: i,
                    end: i,
                    family: f,
                    valid_start: !inside,
                });
            }
            (None, _, _) => out.extend(open.take()),
        }
    }
    out.extend(open);
    out
}

pub fn entity_f1(gold: &[Vec<Tag>], pred: &[Vec<Tag>], definition: EntityDefinition) -> Result<EntityScores, EvalError> {
    check_shapes(gold, pred)?;
    let mut s = EntityScores::default();
    for (g_seq, p_seq) in gold.iter().zip(pred) {
        match definition {
            EntityDefinition::CollapsedToken => {
                for (&g, &p) in g_seq.iter().zip(p_seq) {
                    let gf = g.family().filter(|_| g.is_original());
                    let pf = p.family().filter(|_| p.is_original());
                    if gf == pf {
                        if let Some(f) = gf {
                            s.family_mut(f).tp += 1;
                        }
                        continue;
                    }
                    if let Some(f) = pf {
                        s.family_mut(f).fp += 1;
                    }
                    if let Some(f) = gf {
                        s.family_mut(f).fn_ += 1;
                    }
                }
            }
            EntityDefinition::SpanExact => {
                let gold_spans = spans(g_seq);
                let pred_spans = spans(p_seq);
                for p in &pred_spans {
                    let hit = gold_spans.contains(p);
                    let c = s.family_mut(p.family);
                    if hit {
                        c.tp += 1;
                    } else {
                        c.fp += 1;
                    }
                }
                for g in &gold_spans {
                    let hit = pred_spans.contains(g);
                    if !hit {
                        s.family_mut(g.family).fn_ += 1;
                    }
                }
            }
        }
    }
    Ok(s)
}

/// One invalid `I-X`: its predecessor is neither `B-X` nor `I-X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub sentence: String,
    pub position: usize,
    pub previous: Option<Tag>,
    pub tag: Tag,
    /// `word(LABEL)` window around the offending token, when words are known.
    pub context: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    pub violations: Vec<Violation>,
}

impl Census {
    pub fn count(&self) -> usize {
        self.violations.len()
    }

    /// `sentence,position,previous,tag,context` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sentence,position,previous,tag,context\n");
        for v in &self.violations {
            let prev = v.previous.map_or("", |t| t.as_str());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&v.sentence),
                v.position,
                prev,
                v.tag,
                csv_field(&v.context)
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Positions of invalid `I-X` tags in one sequence.
pub fn bio_violations(labels: &[Tag]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            t.is_inside() && {
                let prev = if *i == 0 { None } else { Some(labels[i - 1]) };
                !prev.is_some_and(|p| p.is_original() && p.family() == t.family() && p != Tag::O)
            }
        })
        .map(|(i, _)| i)
        .collect()
}

const CONTEXT_RADIUS: usize = 2;

/// Audits every sentence. `words`, when given, fills the context column.
pub fn audit_bio(ids: &[String], labels: &[Vec<Tag>], words: Option<&[Vec<String>]>) -> Census {
    let mut census = Census::default();
    for (s, seq) in labels.iter().enumerate() {
        for position in bio_violations(seq) {
            let context = words
                .and_then(|w| w.get(s))
                .map(|ws| {
                    let lo = position.saturating_sub(CONTEXT_RADIUS);
                    let hi = (position + CONTEXT_RADIUS + 1).min(seq.len()).min(ws.len());
                    (lo..hi)
                        .map(|i| format!("{}({})", ws[i], seq[i]))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default();
            census.violations.push(Violation {
                sentence: ids.get(s).cloned().unwrap_or_else(|| s.to_string()),
                position,
                previous: position.checked_sub(1).map(|p| seq[p]),
                tag: seq[position],
                context,
            });
        }
    }
    census
}

pub fn audit_corpus(corpus: &Corpus) -> Census {
    let ids: Vec<String> = corpus.sentences.iter().map(|s| s.id.clone()).collect();
    let words: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.words.clone()).collect();
    audit_bio(&ids, &corpus.labels(), Some(&words))
}

/// Most frequent training label per token string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxBaseline {
    counts: HashMap<String, [usize; NUM_ORIGINAL]>,
    majority: Tag,
}

/// Highest count wins; ties go to the lexicographically smaller label string.
fn argmax_label(counts: &[usize; NUM_ORIGINAL]) -> Tag {
    let mut best = Tag::ORIGINAL[0];
    for &tag in &Tag::ORIGINAL[1..] {
        let (c, b) = (counts[tag.index()], counts[best.index()]);
        if c > b || (c == b && tag.as_str() < best.as_str()) {
            best = tag;
        }
    }
    best
}

impl ArgmaxBaseline {
    pub fn fit(train: &Corpus) -> Result<Self, EvalError> {
        let mut counts: HashMap<String, [usize; NUM_ORIGINAL]> = HashMap::new();
        let mut global = [0usize; NUM_ORIGINAL];
        for s in &train.sentences {
            for (w, t) in s.words.iter().zip(&s.labels) {
                counts.entry(w.clone()).or_default()[t.index()] += 1;
                global[t.index()] += 1;
            }
        }
        if global.iter().sum::<usize>() == 0 {
            return Err(EvalError::EmptyTraining);
        }
        Ok(ArgmaxBaseline {
            counts,
            majority: argmax_label(&global),
        })
    }

    pub fn majority(&self) -> Tag {
        self.majority
    }

    pub fn predict_word(&self, word: &str) -> Tag {
        self.counts.get(word).map_or(self.majority, argmax_label)
    }

    pub fn predict(&self, words: &[String]) -> Vec<Tag> {
        words.iter().map(|w| self.predict_word(w)).collect()
    }

    pub fn predict_corpus(&self, corpus: &Corpus) -> Vec<Vec<Tag>> {
        corpus.sentences.iter().map(|s| self.predict(&s.words)).collect()
    }
}

/// Everything reported for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub token: TokenScores,
    pub collapsed: EntityScores,
    pub span: EntityScores,
    pub census: Census,
    /// Word-initial auxiliary predictions repaired during collapse.
    pub repairs: usize,
}

impl EvalReport {
    pub fn new(gold: &[Vec<Tag>], pred: &[Vec<Tag>], ids: &[String], words: Option<&[Vec<String>]>) -> Result<Self, EvalError> {
        Ok(EvalReport {
            token: token_f1(gold, pred)?,
            collapsed: entity_f1(gold, pred, EntityDefinition::CollapsedToken)?,
            span: entity_f1(gold, pred, EntityDefinition::SpanExact)?,
            census: audit_bio(ids, pred, words),
            repairs: 0,
        })
    }

    pub fn with_repairs(mut self, repairs: usize) -> Self {
        self.repairs = repairs;
        self
    }

    /// Plain-text tables: per-label token scores, then entity scores.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Token level (BIO)");
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>8}", "Label", "Precision", "Recall", "F1", "Support");
        for tag in Tag::ORIGINAL_REPORT_ORDER {
            let c = self.token.label(tag);
            let _ = writeln!(
                out,
                "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>8}",
                tag.report_name(),
                c.precision(),
                c.recall(),
                c.f1(),
                c.support()
            );
        }
        let m = self.token.micro();
        let _ = writeln!(
            out,
            "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>8}",
            "micro",
            m.precision(),
            m.recall(),
            m.f1(),
            m.support()
        );
        let _ = writeln!(out, "accuracy {:.3}", self.token.accuracy());
        let _ = writeln!(out);
        let _ = writeln!(out, "Entity level");
        let _ = writeln!(out, "{:<12} {:>9} {:>9}", "Definition", "Aspect", "Sentiment");
        for (name, s) in [("collapsed", &self.collapsed), ("span", &self.span)] {
            let _ = writeln!(
                out,
                "{:<12} {:>9.3} {:>9.3}",
                name,
                s.aspect.f1(),
                s.sentiment.f1()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "invalid BIO sequences: {}", self.census.count());
        if self.repairs > 0 {
            let _ = writeln!(out, "auxiliary predictions repaired: {}", self.repairs);
        }
        out
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: String, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        for tag in Tag::ORIGINAL_REPORT_ORDER {
            let c = self.token.label(tag);
            let name = tag.report_name();
            put(format!("token.{name}.precision"), format!("{:.6}", c.precision()));
            put(format!("token.{name}.recall"), format!("{:.6}", c.recall()));
            put(format!("token.{name}.f1"), format!("{:.6}", c.f1()));
            put(format!("token.{name}.support"), c.support().to_string());
        }
        put("token.micro.f1".into(), format!("{:.6}", self.token.micro_f1()));
        put("token.accuracy".into(), format!("{:.6}", self.token.accuracy()));
        for (def, s) in [("collapsed", &self.collapsed), ("span", &self.span)] {
            for f in Family::ALL {
                let c = s.family(f);
                let name = f.as_str();
                put(format!("entity.{def}.{name}.precision"), format!("{:.6}", c.precision()));
                put(format!("entity.{def}.{name}.recall"), format!("{:.6}", c.recall()));
                put(format!("entity.{def}.{name}.f1"), format!("{:.6}", c.f1()));
            }
            put(format!("entity.{def}.micro.f1"), format!("{:.6}", s.micro().f1()));
        }
        put("violations".into(), self.census.count().to_string());
        put("repairs".into(), self.repairs.to_string());
        out
    }
}
