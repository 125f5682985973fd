//! Recursive character splitting.
//!
//! Text is split on the first separator (from an ordered hierarchy) that occurs in it.
//! Pieces that still exceed `chunk_size` are split again with the remaining separators;
//! the rest are merged greedily into windows of at most `chunk_size` characters, each
//! window seeding the next with a suffix of at most `chunk_overlap` characters.
//!
//! Lengths and spans are counted in Unicode scalar values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: usize = 500;
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;

pub fn default_separators() -> Vec<String> {
    ["\n\n", "\n", " ", ""].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChunkError {
    #[error("invalid chunking parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    #[serde(default = "default_separators")]
    pub separators: Vec<String>,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            separators: default_separators(),
        }
    }
}

impl ChunkParams {
    pub fn new(chunk_size: usize, chunk_overlap: usize) -> Result<Self, ChunkError> {
        let params = Self {
            chunk_size,
            chunk_overlap,
            separators: default_separators(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_separators(mut self, separators: Vec<String>) -> Result<Self, ChunkError> {
        self.separators = separators;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::InvalidParams("chunk_size must be positive".into()));
        }
        if self.chunk_overlap >= self.chunk_size {
            return Err(ChunkError::InvalidParams(format!(
                "chunk_overlap ({}) must be smaller than chunk_size ({})",
                self.chunk_overlap, self.chunk_size
            )));
        }
        match self.separators.last() {
            Some(last) if last.is_empty() => Ok(()),
            _ => Err(ChunkError::InvalidParams(
                "separators must be nonempty and end with \"\"".into(),
            )),
        }
    }
}

/// A trimmed slice of the source text. `start..end` are character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub span: (usize, usize),
}

impl Chunk {
    pub fn record_id(&self) -> String {
        format!("{}:{}", self.doc_id, self.seq)
    }
}

/// Splits `text` into trimmed, non-blank spans of at most `chunk_size` characters.
pub fn split_text(text: &str, params: &ChunkParams) -> Result<Vec<TextSpan>, ChunkError> {
    params.validate()?;
    let chars: Vec<char> = text.chars().collect();
    let separators: Vec<Vec<char>> = params.separators.iter().map(|s| s.chars().collect()).collect();
    let splitter = Splitter {
        chars: &chars,
        size: params.chunk_size,
        overlap: params.chunk_overlap,
    };
    let mut windows = Vec::new();
    splitter.split(0, chars.len(), &separators, &mut windows);

    Ok(windows
        .into_iter()
        .filter_map(|(start, end)| {
            let slice = &chars[start..end];
            let lead = slice.iter().take_while(|c| c.is_whitespace()).count();
            if lead == slice.len() {
                return None;
            }
            let trail = slice.iter().rev().take_while(|c| c.is_whitespace()).count();
            let (start, end) = (start + lead, end - trail);
            Some(TextSpan {
                text: chars[start..end].iter().collect(),
                start,
                end,
            })
        })
        .collect())
}

/// Splits a document's text and stamps `doc_id` and consecutive `seq` numbers.
pub fn chunk_document(doc_id: &str, text: &str, params: &ChunkParams) -> Result<Vec<Chunk>, ChunkError> {
    Ok(split_text(text, params)?
        .into_iter()
        .enumerate()
        .map(|(seq, span)| Chunk {
            doc_id: doc_id.to_string(),
            seq,
            text: span.text,
            span: (span.start, span.end),
        })
        .collect())
}

#[derive(Clone, Copy)]
struct Piece {
    start: usize,
    end: usize,
}

impl Piece {
    fn len(self) -> usize {
        self.end - self.start
    }
}

struct Splitter<'a> {
    chars: &'a [char],
    size: usize,
    overlap: usize,
}

impl Splitter<'_> {
    fn split(&self, lo: usize, hi: usize, separators: &[Vec<char>], out: &mut Vec<(usize, usize)>) {
        let segment = &self.chars[lo..hi];
        let idx = separators
            .iter()
            .position(|sep| sep.is_empty() || contains(segment, sep))
            .unwrap_or(separators.len() - 1);
        let separator = &separators[idx];
        let rest = &separators[idx + 1..];

        let mut good: Vec<Piece> = Vec::new();
        for piece in pieces(lo, hi, segment, separator) {
            if piece.len() <= self.size {
                good.push(piece);
                continue;
            }
            if !good.is_empty() {
                self.merge(&good, separator.len(), out);
                good.clear();
            }
            if rest.is_empty() {
                // Only reachable with a hierarchy that lacks the "" fallback.
                out.push((piece.start, piece.end));
            } else {
                self.split(piece.start, piece.end, rest, out);
            }
        }
        if !good.is_empty() {
            self.merge(&good, separator.len(), out);
        }
    }

    fn merge(&self, pieces: &[Piece], sep_len: usize, out: &mut Vec<(usize, usize)>) {
        // Window of consecutive pieces, tracked as a range into `pieces` plus its joined length.
        let mut first = 0;
        let mut joined = 0;
        let joined_len = |from: usize, to: usize| -> usize {
            if from == to {
                0
            } else {
                pieces[from..to].iter().map(|p| p.len()).sum::<usize>() + sep_len * (to - from - 1)
            }
        };

        for (i, piece) in pieces.iter().enumerate() {
            let open = i > first;
            let extra = if open { sep_len } else { 0 };
            if open && joined + extra + piece.len() > self.size {
                out.push((pieces[first].start, pieces[i - 1].end));
                while first < i && (joined > self.overlap || joined + sep_len + piece.len() > self.size) {
                    first += 1;
                    joined = joined_len(first, i);
                }
            }
            joined = if i > first { joined + sep_len + piece.len() } else { piece.len() };
        }
        if first < pieces.len() {
            out.push((pieces[first].start, pieces[pieces.len() - 1].end));
        }
    }
}

fn contains(haystack: &[char], needle: &[char]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn pieces(lo: usize, hi: usize, segment: &[char], separator: &[char]) -> Vec<Piece> {
    if separator.is_empty() {
        return (lo..hi).map(|i| Piece { start: i, end: i + 1 }).collect();
    }
    let mut out = Vec::new();
    let mut piece_start = 0;
    let mut i = 0;
    while i + separator.len() <= segment.len() {
        if &segment[i..i + separator.len()] == separator {
            out.push(Piece {
                start: lo + piece_start,
                end: lo + i,
            });
            i += separator.len();
            piece_start = i;
        } else {
            i += 1;
        }
    }
    out.push(Piece {
        start: lo + piece_start,
        end: hi,
    });
    out
}
