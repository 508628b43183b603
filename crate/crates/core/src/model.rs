//! Trained model and its text file format.
//!
//! ```text
//! auxcrf-model 1
//! tags O B-ASPECT I-ASPECT B-SENTIMENT I-SENTIMENT A Z X-ASPECT X-SENTIMENT Y
//! vocab <path, or - for none>
//! emissions features|external
//! mask_train true|false
//! mask_decode true|false
//! hash_dim <u32>            (features only)
//! hash_seed <u64>           (features only)
//! start <10 floats>
//! end <10 floats>
//! transition <from-tag> <10 floats>      x10, in tag order
//! features <count>                       (features only)
//! feature <id> <10 floats>               x count, ascending id
//! ```
//!
//! Fields are separated by single spaces. Floats use Rust's shortest
//! round-trip formatting, so save → load reproduces every bit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::crf::{CrfParams, Row};
use crate::emit::FeatureEmitter;
use crate::labelspace::{parse_tag, Tag, NUM_TAGS};

pub const MAGIC: &str = "auxcrf-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported model version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: CrfParams,
    /// `None` when emissions come from external logits.
    pub emitter: Option<FeatureEmitter>,
    /// Vocabulary file the segmenter was built from, if any.
    pub vocab: Option<String>,
    pub mask_train: bool,
    pub mask_decode: bool,
}

fn write_row(out: &mut impl Write, row: &Row) -> io::Result<()> {
    for v in row {
        write!(out, " {v:?}")?;
    }
    writeln!(out)
}

impl Model {
    pub fn save(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        let tags: Vec<&str> = Tag::ALL.iter().map(|t| t.as_str()).collect();
        writeln!(out, "tags {}", tags.join(" "))?;
        writeln!(out, "vocab {}", self.vocab.as_deref().unwrap_or("-"))?;
        writeln!(
            out,
            "emissions {}",
            if self.emitter.is_some() { "features" } else { "external" }
        )?;
        writeln!(out, "mask_train {}", self.mask_train)?;
        writeln!(out, "mask_decode {}", self.mask_decode)?;
        if let Some(e) = &self.emitter {
            writeln!(out, "hash_dim {}", e.hash_dim())?;
            writeln!(out, "hash_seed {}", e.hash_seed())?;
        }
        write!(out, "start")?;
        write_row(&mut out, &self.params.start)?;
        write!(out, "end")?;
        write_row(&mut out, &self.params.end)?;
        for (tag, row) in Tag::ALL.iter().zip(&self.params.transitions) {
            write!(out, "transition {tag}")?;
            write_row(&mut out, row)?;
        }
        if let Some(e) = &self.emitter {
            writeln!(out, "features {}", e.weights.len())?;
            for (id, row) in &e.weights {
                write!(out, "feature {id}")?;
                write_row(&mut out, row)?;
            }
        }
        out.flush()
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.save(io::BufWriter::new(File::create(path)?))
    }

    pub fn load(reader: impl BufRead) -> Result<Model, ModelError> {
        let mut lines = Lines {
            inner: reader.lines(),
            line: 0,
        };

        let header = lines.next_fields()?;
        if header.len() != 2 || header[0] != MAGIC {
            return Err(lines.err("not a model file"));
        }
        let version: u32 = lines.parse(&header[1])?;
        if version != VERSION {
            return Err(ModelError::Version(version));
        }

        let tags = lines.keyed("tags")?;
        let expected: Vec<&str> = Tag::ALL.iter().map(|t| t.as_str()).collect();
        if tags != expected {
            return Err(lines.err("tag order differs from this build"));
        }

        let vocab_line = lines.next_line()?;
        let vocab = match vocab_line.strip_prefix("vocab ") {
            Some("-") => None,
            Some(path) => Some(path.to_string()),
            None => return Err(lines.err("expected vocab")),
        };

        let kind = lines.single("emissions")?;
        let features = match kind.as_str() {
            "features" => true,
            "external" => false,
            other => return Err(lines.err(&format!("unknown emissions kind {other:?}"))),
        };
        let mask_train: bool = {
            let v = lines.single("mask_train")?;
            lines.parse(&v)?
        };
        let mask_decode: bool = {
            let v = lines.single("mask_decode")?;
            lines.parse(&v)?
        };

        let mut emitter = if features {
            let dim_text = lines.single("hash_dim")?;
            let dim: u32 = lines.parse(&dim_text)?;
            let seed_text = lines.single("hash_seed")?;
            let seed: u64 = lines.parse(&seed_text)?;
            Some(FeatureEmitter::new(dim, seed).map_err(|e| lines.err(&e.to_string()))?)
        } else {
            None
        };

        let mut params = CrfParams::zeros();
        params.start = lines.row("start")?;
        params.end = lines.row("end")?;
        for (i, tag) in Tag::ALL.iter().enumerate() {
            let fields = lines.keyed("transition")?;
            if fields.first().map(|s| parse_tag(s).ok()) != Some(Some(*tag)) {
                return Err(lines.err(&format!("expected transition row for {tag}")));
            }
            params.transitions[i] = lines.floats(&fields[1..])?;
        }

        if let Some(e) = emitter.as_mut() {
            let count_text = lines.single("features")?;
            let count: usize = lines.parse(&count_text)?;
            for _ in 0..count {
                let fields = lines.keyed("feature")?;
                let Some((id, rest)) = fields.split_first() else {
                    return Err(lines.err("empty feature line"));
                };
                let id: u32 = lines.parse(id)?;
                let row = lines.floats(rest)?;
                if e.weights.insert(id, row).is_some() {
                    return Err(lines.err(&format!("duplicate feature {id}")));
                }
            }
            e.validate().map_err(|err| lines.err(&err.to_string()))?;
        }
        if !params.is_finite() {
            return Err(lines.err("non-finite CRF parameter"));
        }
        if lines.inner.any(|l| l.map_or(true, |l| !l.trim().is_empty())) {
            return Err(ModelError::Parse {
                line: lines.line + 1,
                reason: "trailing content".into(),
            });
        }

        Ok(Model {
            params,
            emitter,
            vocab,
            mask_train,
            mask_decode,
        })
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        Model::load(BufReader::new(File::open(path)?))
    }
}

struct Lines<R: BufRead> {
    inner: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, reason: &str) -> ModelError {
        ModelError::Parse {
            line: self.line,
            reason: reason.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<String, ModelError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn next_fields(&mut self) -> Result<Vec<String>, ModelError> {
        Ok(self.next_line()?.split(' ').map(str::to_string).collect())
    }

    /// Fields after an expected leading key.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>, ModelError> {
        let mut fields = self.next_fields()?;
        if fields.first().map(String::as_str) != Some(key) {
            return Err(self.err(&format!("expected {key}")));
        }
        fields.remove(0);
        Ok(fields)
    }

    fn single(&mut self, key: &str) -> Result<String, ModelError> {
        let fields = self.keyed(key)?;
        match <[String; 1]>::try_from(fields) {
            Ok([v]) => Ok(v),
            Err(_) => Err(self.err(&format!("{key} takes one value"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, text: &str) -> Result<T, ModelError> {
        text.parse().map_err(|_| self.err(&format!("cannot parse {text:?}")))
    }

    fn floats(&self, fields: &[String]) -> Result<Row, ModelError> {
        if fields.len() != NUM_TAGS {
            return Err(self.err(&format!("expected {NUM_TAGS} values, got {}", fields.len())));
        }
        let mut row = [0.0; NUM_TAGS];
        for (slot, f) in row.iter_mut().zip(fields) {
            *slot = self.parse(f)?;
        }
        Ok(row)
    }

    fn row(&mut self, key: &str) -> Result<Row, ModelError> {
        let fields = self.keyed(key)?;
        self.floats(&fields)
    }
}
