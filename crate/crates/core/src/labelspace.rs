//! The tag inventory: five BIO tags for aspect/opinion extraction plus the
//! auxiliary tags used on the subword side (`A` for `[CLS]`, `Z` for `[SEP]`,
//! `X-ASPECT`/`X-SENTIMENT` for trailing pieces of aspect/opinion words and
//! `Y` for trailing pieces of everything else).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of tags in the expanded label space.
pub const NUM_TAGS: usize = 10;

/// Number of original (word-level) BIO tags.
pub const NUM_ORIGINAL: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("tag index {0} out of range")]
    IndexOutOfRange(usize),
}

/// One tag of the expanded label space.
///
/// The discriminants are the model-file column order and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    O = 0,
    BAspect = 1,
    IAspect = 2,
    BSentiment = 3,
    ISentiment = 4,
    A = 5,
    Z = 6,
    XAspect = 7,
    XSentiment = 8,
    Y = 9,
}

/// Entity family a tag belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Aspect,
    Sentiment,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Aspect, Family::Sentiment];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Aspect => "ASPECT",
            Family::Sentiment => "SENTIMENT",
        }
    }

    pub fn begin(self) -> Tag {
        match self {
            Family::Aspect => Tag::BAspect,
            Family::Sentiment => Tag::BSentiment,
        }
    }

    pub fn inside(self) -> Tag {
        match self {
            Family::Aspect => Tag::IAspect,
            Family::Sentiment => Tag::ISentiment,
        }
    }

    pub fn trailing(self) -> Tag {
        match self {
            Family::Aspect => Tag::XAspect,
            Family::Sentiment => Tag::XSentiment,
        }
    }
}

impl Tag {
    /// All tags in index order.
    pub const ALL: [Tag; NUM_TAGS] = [
        Tag::O,
        Tag::BAspect,
        Tag::IAspect,
        Tag::BSentiment,
        Tag::ISentiment,
        Tag::A,
        Tag::Z,
        Tag::XAspect,
        Tag::XSentiment,
        Tag::Y,
    ];

    /// The word-level BIO tags.
    pub const ORIGINAL: [Tag; NUM_ORIGINAL] = [
        Tag::O,
        Tag::BAspect,
        Tag::IAspect,
        Tag::BSentiment,
        Tag::ISentiment,
    ];

    /// BIO tags in the order report tables list them, `OTHER` last.
    pub const ORIGINAL_REPORT_ORDER: [Tag; NUM_ORIGINAL] = [
        Tag::BAspect,
        Tag::IAspect,
        Tag::BSentiment,
        Tag::ISentiment,
        Tag::O,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Tag, LabelError> {
        Tag::ALL
            .get(index)
            .copied()
            .ok_or(LabelError::IndexOutOfRange(index))
    }

    pub fn is_original(self) -> bool {
        self.index() < NUM_ORIGINAL
    }

    pub fn is_auxiliary(self) -> bool {
        !self.is_original()
    }

    /// Canonical label string; `O` rather than `OTHER`.
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::BAspect => "B-ASPECT",
            Tag::IAspect => "I-ASPECT",
            Tag::BSentiment => "B-SENTIMENT",
            Tag::ISentiment => "I-SENTIMENT",
            Tag::A => "A",
            Tag::Z => "Z",
            Tag::XAspect => "X-ASPECT",
            Tag::XSentiment => "X-SENTIMENT",
            Tag::Y => "Y",
        }
    }

    /// Name used in report tables, where `O` is printed `OTHER`.
    pub fn report_name(self) -> &'static str {
        match self {
            Tag::O => "OTHER",
            other => other.as_str(),
        }
    }

    pub fn family(self) -> Option<Family> {
        match self {
            Tag::BAspect | Tag::IAspect | Tag::XAspect => Some(Family::Aspect),
            Tag::BSentiment | Tag::ISentiment | Tag::XSentiment => Some(Family::Sentiment),
            _ => None,
        }
    }

    pub fn is_begin(self) -> bool {
        matches!(self, Tag::BAspect | Tag::BSentiment)
    }

    pub fn is_inside(self) -> bool {
        matches!(self, Tag::IAspect | Tag::ISentiment)
    }

    /// Label carried by the trailing subwords of a word with this tag.
    ///
    /// Only meaningful for original tags; auxiliary tags map to themselves.
    pub fn trailing(self) -> Tag {
        match self {
            Tag::O => Tag::Y,
            t if t.is_original() => t.family().map(Family::trailing).unwrap_or(Tag::Y),
            t => t,
        }
    }

    /// Maps an auxiliary prediction found at a word-initial position back onto
    /// an original tag. Original tags are returned unchanged.
    pub fn repaired(self) -> Tag {
        match self {
            Tag::XAspect => Tag::IAspect,
            Tag::XSentiment => Tag::ISentiment,
            Tag::Y | Tag::A | Tag::Z => Tag::O,
            t => t,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_tag(s)
    }
}

/// Parses a label string, case-insensitively. `O` and `OTHER` are the same tag.
pub fn parse_tag(text: &str) -> Result<Tag, LabelError> {
    let upper = text.trim().to_ascii_uppercase();
    let tag = match upper.as_str() {
        "O" | "OTHER" => Tag::O,
        "B-ASPECT" => Tag::BAspect,
        "I-ASPECT" => Tag::IAspect,
        "B-SENTIMENT" => Tag::BSentiment,
        "I-SENTIMENT" => Tag::ISentiment,
        "A" => Tag::A,
        "Z" => Tag::Z,
        "X-ASPECT" => Tag::XAspect,
        "X-SENTIMENT" => Tag::XSentiment,
        "Y" => Tag::Y,
        _ => return Err(LabelError::UnknownLabel(text.to_string())),
    };
    Ok(tag)
}

/// Hard transition constraints over the expanded tag space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintMask {
    /// `allowed[i][j]`: tag `j` may immediately follow tag `i`.
    pub allowed: [[bool; NUM_TAGS]; NUM_TAGS],
    pub start_allowed: [bool; NUM_TAGS],
    pub end_allowed: [bool; NUM_TAGS],
}

impl ConstraintMask {
    #[inline]
    pub fn allows(&self, from: Tag, to: Tag) -> bool {
        self.allowed[from.index()][to.index()]
    }

    /// Checks a full tag sequence, including the start and end conditions.
    pub fn is_legal(&self, tags: &[Tag]) -> bool {
        self.first_violation(tags).is_none()
    }

    /// Index of the first offending position, if any. A bad start is reported
    /// at 0, a bad bigram at the position of its second tag, a bad end at `len - 1`.
    pub fn first_violation(&self, tags: &[Tag]) -> Option<usize> {
        let first = *tags.first()?;
        if !self.start_allowed[first.index()] {
            return Some(0);
        }
        for (t, pair) in tags.windows(2).enumerate() {
            if !self.allows(pair[0], pair[1]) {
                return Some(t + 1);
            }
        }
        let last = tags[tags.len() - 1];
        if !self.end_allowed[last.index()] {
            return Some(tags.len() - 1);
        }
        None
    }

    /// Plain-text dump: one row per source tag, `+` for allowed, `.` for forbidden.
    pub fn to_table(&self) -> String {
        let width = Tag::ALL.iter().map(|t| t.as_str().len()).max().unwrap_or(1);
        let mut out = String::new();
        out.push_str(&format!("{:>width$}", "from\\to"));
        for (j, _) in Tag::ALL.iter().enumerate() {
            out.push_str(&format!(" {:>2}", j));
        }
        out.push('\n');
        for from in Tag::ALL {
            out.push_str(&format!("{:>width$}", from.as_str()));
            for to in Tag::ALL {
                out.push_str(if self.allows(from, to) { "  +" } else { "  ." });
            }
            out.push('\n');
        }
        let render = |v: &[bool; NUM_TAGS]| {
            Tag::ALL
                .iter()
                .filter(|t| v[t.index()])
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!("start: {}\n", render(&self.start_allowed)));
        out.push_str(&format!("end: {}\n", render(&self.end_allowed)));
        out.push_str("columns: ");
        out.push_str(
            &Tag::ALL
                .iter()
                .enumerate()
                .map(|(i, t)| format!("{i}={t}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        out.push('\n');
        out
    }
}

/// Tags that may follow a tag whose outgoing behaviour is that of `source`
/// (an original tag, or `A` for the sentence start).
fn successors_of(source: Tag) -> Vec<Tag> {
    let mut next = vec![Tag::O, Tag::BAspect, Tag::BSentiment];
    match source {
        Tag::A => {}
        Tag::O => next.extend([Tag::Y, Tag::Z]),
        t => {
            let family = t.family().expect("original non-O tag has a family");
            next.extend([family.inside(), family.trailing(), Tag::Z]);
        }
    }
    next
}

/// The BIO grammar extended with the auxiliary tags.
///
/// Sequences start at `A` and end at `Z`. `A` behaves like a sentence start
/// (no `I-*` directly after it). `X-*` only continues its own family and `Y`
/// only continues `O`; after a trailing tag the same tags are legal as after
/// the word-initial tag it continues.
pub fn default_constraint_mask() -> ConstraintMask {
    let mut allowed = [[false; NUM_TAGS]; NUM_TAGS];
    for from in Tag::ALL {
        let behaves_as = match from {
            Tag::Z => continue,
            Tag::XAspect => Tag::BAspect,
            Tag::XSentiment => Tag::BSentiment,
            Tag::Y => Tag::O,
            t => t,
        };
        for to in successors_of(behaves_as) {
            allowed[from.index()][to.index()] = true;
        }
    }
    let mut start_allowed = [false; NUM_TAGS];
    start_allowed[Tag::A.index()] = true;
    let mut end_allowed = [false; NUM_TAGS];
    end_allowed[Tag::Z.index()] = true;
    ConstraintMask {
        allowed,
        start_allowed,
        end_allowed,
    }
}

/// Tag inventory with its index mapping and transition constraints.
#[derive(Debug, Clone)]
pub struct LabelSpace {
    tags: [Tag; NUM_TAGS],
    mask: ConstraintMask,
}

impl Default for LabelSpace {
    fn default() -> Self {
        LabelSpace {
            tags: Tag::ALL,
            mask: default_constraint_mask(),
        }
    }
}

impl LabelSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tags(&self) -> &[Tag; NUM_TAGS] {
        &self.tags
    }

    pub fn index_of(&self, tag: Tag) -> usize {
        tag.index()
    }

    pub fn tag_at(&self, index: usize) -> Result<Tag, LabelError> {
        Tag::from_index(index)
    }

    pub fn mask(&self) -> &ConstraintMask {
        &self.mask
    }
}
