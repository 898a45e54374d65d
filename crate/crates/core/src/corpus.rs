//! Tokenization, tagged-sentence parsing, vocabulary construction and
//! integer encoding of examples.
//!
//! Tagged-example files hold one record per blank-line separated block:
//!
//! ```text
//! s1<TAB>The discography of <e1>Billie Piper</e1> ( as known as <e2>Billie</e2> )
//! per:alternate-names(e2,e1)
//! ```

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::RelationSchema;

/// Characters that always form a token of their own.
pub const SPLIT_PUNCTUATION: &[char] = &['.', ',', '(', ')', ';', ':', '\'', '"'];

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_MARKER: &str = "<pad>";
pub const UNK_MARKER: &str = "<unk>";

/// Default clip distance for position features.
pub const DEFAULT_CLIP: usize = 30;
/// Default sentence-length limit in tokens.
pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub norm: String,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let norm = surface.to_lowercase();
        Token { surface, norm }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        Ok(Sentence {
            id: id.into(),
            tokens,
        })
    }

    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self> {
        Sentence::new(id, tokenize(text)?)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn norms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.norm.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    E1,
    E2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub role: Role,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, role: Role) -> Self {
        EntitySpan { start, end, role }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, position: usize) -> bool {
        (self.start..=self.end).contains(&position)
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Direction of a relation label relative to the marked entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// `rel(e1,e2)`
    Forward,
    /// `rel(e2,e1)`
    Backward,
    None,
}

impl Direction {
    pub fn suffix(self) -> &'static str {
        match self {
            Direction::Forward => "(e1,e2)",
            Direction::Backward => "(e2,e1)",
            Direction::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedExample {
    pub sentence: Sentence,
    pub e1: EntitySpan,
    pub e2: EntitySpan,
    pub label: Option<String>,
    pub direction: Direction,
}

impl TaggedExample {
    pub fn new(
        sentence: Sentence,
        e1: EntitySpan,
        e2: EntitySpan,
        label: Option<String>,
        direction: Direction,
    ) -> Result<Self> {
        let len = sentence.len();
        for span in [&e1, &e2] {
            if span.start > span.end || span.end >= len {
                return Err(Error::contract(format!(
                    "span [{}, {}] outside sentence of {} tokens",
                    span.start, span.end, len
                )));
            }
        }
        if e1.role != Role::E1 || e2.role != Role::E2 {
            return Err(Error::contract("entity spans carry the wrong roles"));
        }
        if e1.overlaps(&e2) {
            return Err(Error::contract("entity spans overlap"));
        }
        if label.is_none() && direction != Direction::None {
            return Err(Error::contract("unlabeled example carries a direction"));
        }
        Ok(TaggedExample {
            sentence,
            e1,
            e2,
            label,
            direction,
        })
    }

    pub fn id(&self) -> &str {
        &self.sentence.id
    }

    pub fn span_norms(&self, role: Role) -> Vec<String> {
        let span = match role {
            Role::E1 => &self.e1,
            Role::E2 => &self.e2,
        };
        self.sentence.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.norm.clone())
            .collect()
    }

    /// Label line as written in tagged files.
    pub fn label_line(&self) -> String {
        match &self.label {
            Some(label) => format!("{label}{}", self.direction.suffix()),
            None => String::new(),
        }
    }

    /// Sentence text with `<e1>`/`<e2>` markers re-inserted.
    pub fn marked_text(&self) -> String {
        let mut out = String::new();
        for (i, token) in self.sentence.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if i == self.e1.start {
                out.push_str("<e1>");
            }
            if i == self.e2.start {
                out.push_str("<e2>");
            }
            out.push_str(&token.surface);
            if i == self.e1.end {
                out.push_str("</e1>");
            }
            if i == self.e2.end {
                out.push_str("</e2>");
            }
        }
        out
    }
}

/// Splits on whitespace and isolates [`SPLIT_PUNCTUATION`].
pub fn tokenize(raw: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in raw.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if SPLIT_PUNCTUATION.contains(&ch) {
            flush(&mut current, &mut tokens);
            tokens.push(Token::new(ch.to_string()));
        } else {
            current.push(ch);
        }
    }
    flush(&mut current, &mut tokens);
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

fn flush(current: &mut String, tokens: &mut Vec<Token>) {
    if !current.is_empty() {
        tokens.push(Token::new(std::mem::take(current)));
    }
}

/// Parses a relation label line into `(relation, direction)`.
///
/// A label without a direction suffix is the negative class unless a schema
/// says otherwise: with a non-directional schema a bare positive relation is
/// read as `Forward`.
pub fn parse_label(line: &str, schema: Option<&RelationSchema>) -> Result<(String, Direction)> {
    let line = line.trim();
    let (name, mut direction) = if let Some(name) = line.strip_suffix("(e1,e2)") {
        (name, Direction::Forward)
    } else if let Some(name) = line.strip_suffix("(e2,e1)") {
        (name, Direction::Backward)
    } else {
        (line, Direction::None)
    };
    if name.is_empty() {
        return Err(Error::contract("empty relation label"));
    }
    if let Some(schema) = schema {
        if !schema.contains(name) {
            return Err(Error::Schema(format!("unknown relation `{name}`")));
        }
        if schema.is_negative(name) {
            direction = Direction::None;
        } else if direction == Direction::None {
            direction = Direction::Forward;
        }
    }
    Ok((name.to_string(), direction))
}

/// Parses one sentence carrying `<e1>…</e1>` and `<e2>…</e2>` markers,
/// plus an optional label line.
pub fn parse_tagged(
    id: &str,
    marked: &str,
    label: Option<&str>,
    schema: Option<&RelationSchema>,
) -> Result<TaggedExample> {
    parse_tagged_at(id, marked, label, schema, 1)
}

fn parse_tagged_at(
    id: &str,
    marked: &str,
    label: Option<&str>,
    schema: Option<&RelationSchema>,
    line: usize,
) -> Result<TaggedExample> {
    let format = |message: String| Error::Format { line, message };

    let mut tokens: Vec<Token> = Vec::new();
    let mut spans: [Option<(usize, usize)>; 2] = [None, None];
    let mut open: Option<(usize, usize)> = None;
    let mut rest = marked;

    loop {
        let next = rest.find('<').and_then(|at| {
            MARKERS
                .iter()
                .find(|(tag, _, _)| rest[at..].starts_with(tag))
                .map(|m| (at, *m))
        });
        let Some((at, (tag, which, opening))) = next else {
            push_tokens(rest, &mut tokens);
            break;
        };
        push_tokens(&rest[..at], &mut tokens);
        rest = &rest[at + tag.len()..];

        if opening {
            if let Some((other, _)) = open {
                return Err(format(format!(
                    "nested entity marker <e{}> inside <e{}>",
                    which + 1,
                    other + 1
                )));
            }
            if spans[which].is_some() {
                return Err(format(format!("duplicate <e{}> marker", which + 1)));
            }
            open = Some((which, tokens.len()));
        } else {
            match open {
                Some((current, start)) if current == which => {
                    if tokens.len() == start {
                        return Err(format(format!("empty <e{}> span", which + 1)));
                    }
                    spans[which] = Some((start, tokens.len() - 1));
                    open = None;
                }
                _ => {
                    return Err(format(format!(
                        "unmatched </e{}> marker",
                        which + 1
                    )))
                }
            }
        }
    }

    if let Some((which, _)) = open {
        return Err(format(format!("unclosed <e{}> marker", which + 1)));
    }
    let [Some(e1), Some(e2)] = spans else {
        let missing = if spans[0].is_none() { "e1" } else { "e2" };
        return Err(format(format!("missing <{missing}> marker")));
    };

    let (label, direction) = match label.map(str::trim).filter(|l| !l.is_empty()) {
        Some(line) => {
            let (name, direction) = parse_label(line, schema)?;
            (Some(name), direction)
        }
        None => (None, Direction::None),
    };

    let sentence = Sentence::new(id, tokens).map_err(|_| format("empty sentence".into()))?;
    TaggedExample::new(
        sentence,
        EntitySpan::new(e1.0, e1.1, Role::E1),
        EntitySpan::new(e2.0, e2.1, Role::E2),
        label,
        direction,
    )
    .map_err(|e| format(e.to_string()))
}

const MARKERS: [(&str, usize, bool); 4] = [
    ("<e1>", 0, true),
    ("</e1>", 0, false),
    ("<e2>", 1, true),
    ("</e2>", 1, false),
];

fn push_tokens(text: &str, tokens: &mut Vec<Token>) {
    if let Ok(more) = tokenize(text) {
        tokens.extend(more);
    }
}

/// Reads a tagged-example file.
pub fn read_tagged<R: BufRead>(
    reader: R,
    schema: Option<&RelationSchema>,
) -> Result<Vec<TaggedExample>> {
    let mut examples = Vec::new();
    let mut block: Vec<(usize, String)> = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if !block.is_empty() {
                examples.push(parse_block(&block, schema)?);
                block.clear();
            }
        } else {
            block.push((index + 1, line));
        }
    }
    if !block.is_empty() {
        examples.push(parse_block(&block, schema)?);
    }
    Ok(examples)
}

fn parse_block(block: &[(usize, String)], schema: Option<&RelationSchema>) -> Result<TaggedExample> {
    let (line, first) = &block[0];
    if block.len() > 2 {
        return Err(Error::Format {
            line: block[2].0,
            message: "record has more than two lines".into(),
        });
    }
    let Some((id, marked)) = first.split_once('\t') else {
        return Err(Error::Format {
            line: *line,
            message: "expected `id<TAB>sentence`".into(),
        });
    };
    let label = block.get(1).map(|(_, l)| l.as_str());
    parse_tagged_at(id.trim(), marked, label, schema, *line)
}

pub fn write_tagged<W: Write>(mut writer: W, examples: &[TaggedExample]) -> Result<()> {
    for (i, example) in examples.iter().enumerate() {
        if i > 0 {
            writeln!(writer)?;
        }
        writeln!(writer, "{}\t{}", example.id(), example.marked_text())?;
        if example.label.is_some() {
            writeln!(writer, "{}", example.label_line())?;
        }
    }
    Ok(())
}

/// Reads a plain corpus: one sentence per line, `#` lines ignored. Sentence
/// ids are `line-<n>`.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        sentences.push(Sentence::from_text(format!("line-{}", index + 1), trimmed)?);
    }
    Ok(sentences)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from a token list whose first two entries are the PAD and UNK
    /// slots.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::contract("vocabulary lacks PAD/UNK slots"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate().skip(2) {
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary entry `{token}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, norm: &str) -> Option<usize> {
        self.index.get(norm).copied()
    }

    pub fn id(&self, norm: &str) -> usize {
        self.get(norm).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Counts token norms and keeps those seen at least `min_count` times,
/// ordered by descending frequency then lexicographically.
pub fn build_vocab(examples: &[TaggedExample], min_count: usize) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(Error::contract("cannot build a vocabulary from no examples"));
    }
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in examples.iter().flat_map(|e| e.sentence.tokens.iter()) {
        *counts.entry(token.norm.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, count)| count >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec![PAD_MARKER.to_string(), UNK_MARKER.to_string()];
    tokens.extend(kept.into_iter().map(|(norm, _)| norm.to_string()));
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    pub pos1_ids: Vec<usize>,
    pub pos2_ids: Vec<usize>,
    pub gold: Option<usize>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Position id of `position` relative to `span`, in `[0, 2 * clip]`.
pub fn position_id(position: usize, span: &EntitySpan, clip: usize) -> usize {
    let distance = if span.contains(position) {
        0
    } else {
        position as i64 - span.start as i64
    };
    let clip = clip as i64;
    (distance.clamp(-clip, clip) + clip) as usize
}

pub fn encode(
    example: &TaggedExample,
    vocab: &Vocabulary,
    clip: usize,
    max_len: usize,
    gold: Option<usize>,
) -> Result<EncodedExample> {
    let len = example.sentence.len();
    if len > max_len {
        return Err(Error::Length { len, max: max_len });
    }
    let token_ids = example.sentence.norms().map(|n| vocab.id(n)).collect();
    let pos1_ids = (0..len).map(|t| position_id(t, &example.e1, clip)).collect();
    let pos2_ids = (0..len).map(|t| position_id(t, &example.e2, clip)).collect();
    Ok(EncodedExample {
        token_ids,
        pos1_ids,
        pos2_ids,
        gold,
    })
}

impl fmt::Display for TaggedExample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.id(), self.marked_text())
    }
}
