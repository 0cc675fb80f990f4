use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based candidate positions, distinct and within `[1, k0]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(indices: Vec<usize>, k0: usize) -> Result<Self> {
        let mut seen = vec![false; k0 + 1];
        for &i in &indices {
            if i == 0 || i > k0 {
                return Err(Error::Invalid(format!("permutation index {i} outside [1, {k0}]")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("permutation repeats index {i}")));
            }
        }
        Ok(Permutation(indices))
    }

    /// `[1, 2, ..., k]`.
    pub fn identity(k: usize) -> Self {
        Permutation((1..=k).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bracketed integers (`[12]`, `[ 3 ]`) in order of appearance. Values too
/// large for `usize` are skipped.
fn bracketed_integers(text: &str) -> Vec<Option<usize>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        let start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let end = j;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        if end > start && j < bytes.len() && bytes[j] == b']' {
            out.push(text[start..end].parse::<usize>().ok());
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// The last line that chains at least two bracketed indices with `>`.
fn ranking_line(text: &str) -> Option<&str> {
    text.lines()
        .rev()
        .find(|line| line.contains('>') && bracketed_integers(line).len() >= 2)
}

/// Turns a reranker reply into a permutation of length `min(k1, k0)`.
///
/// If the reply has a `[i] > [j] > ...` line, only the last such line is
/// read (reasoning text above it may cite documents in any order); otherwise
/// every bracketed integer in the reply is read in order. Duplicates keep
/// their first occurrence, out-of-range indices are dropped, and a short
/// result is filled from the retrieval order. Never fails.
pub fn parse_permutation(text: &str, k0: usize, k1: usize) -> Permutation {
    let k = k1.min(k0);
    let source = ranking_line(text).unwrap_or(text);
    let mut seen = vec![false; k0 + 1];
    let mut out = Vec::with_capacity(k);
    for i in bracketed_integers(source).into_iter().flatten() {
        if out.len() == k {
            break;
        }
        if (1..=k0).contains(&i) && !seen[i] {
            seen[i] = true;
            out.push(i);
        }
    }
    for i in 1..=k0 {
        if out.len() == k {
            break;
        }
        if !seen[i] {
            seen[i] = true;
            out.push(i);
        }
    }
    Permutation(out)
}
