//! Distant supervision: gold edit matrices from (incomplete, rewritten) pairs.
//!
//! The rewritten utterance is aligned to the incomplete one by LCS. Every
//! maximal run of rewritten tokens outside the alignment is an added span;
//! it replaces the incomplete tokens skipped at the same place, or is inserted
//! before the next aligned incomplete token (the sentinel column at the end).
//! Spans are then located verbatim in the dialogue history and turned into
//! Substitute rectangles or PreInsert column stripes.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dialogue, InputSequence, Utterance};
use crate::error::{Error, Result};
use crate::rewrite::{apply_edits, cells_to_spans, resolve_conflicts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditOp {
    Substitute,
    PreInsert,
}

impl EditOp {
    pub const ALL: [EditOp; 2] = [EditOp::Substitute, EditOp::PreInsert];

    pub fn code(self) -> &'static str {
        match self {
            EditOp::Substitute => "S",
            EditOp::PreInsert => "I",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "S" => Some(EditOp::Substitute),
            "I" => Some(EditOp::PreInsert),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Sparse labeled cells over (context row, incomplete column). The last
/// column is the sentinel and only admits PreInsert.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EditMatrix {
    n_rows: usize,
    n_cols: usize,
    cells: BTreeSet<(usize, usize, EditOp)>,
}

#[derive(Serialize, Deserialize)]
struct EditMatrixRepr {
    rows: usize,
    cols: usize,
    cells: Vec<(usize, usize, String)>,
}

impl Serialize for EditMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EditMatrixRepr {
            rows: self.n_rows,
            cols: self.n_cols,
            cells: self
                .cells
                .iter()
                .map(|&(r, c, op)| (r, c, op.code().to_owned()))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EditMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = EditMatrixRepr::deserialize(d)?;
        let mut m = EditMatrix::new(repr.rows, repr.cols);
        for (r, c, code) in repr.cells {
            let op = EditOp::from_code(&code)
                .ok_or_else(|| D::Error::custom(format!("unknown edit op `{code}`")))?;
            m.insert(r, c, op).map_err(D::Error::custom)?;
        }
        Ok(m)
    }
}

impl EditMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        EditMatrix {
            n_rows,
            n_cols,
            cells: BTreeSet::new(),
        }
    }

    /// Empty matrix shaped for `input`.
    pub fn for_input(input: &InputSequence) -> Self {
        Self::new(input.n_rows(), input.n_cols())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn sentinel_col(&self) -> usize {
        self.n_cols.saturating_sub(1)
    }

    pub fn insert(&mut self, row: usize, col: usize, op: EditOp) -> Result<bool> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::Shape(format!(
                "cell ({row}, {col}) outside {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if op == EditOp::Substitute && col == self.sentinel_col() {
            return Err(Error::Shape("Substitute cell on the sentinel column".into()));
        }
        Ok(self.cells.insert((row, col, op)))
    }

    pub fn contains(&self, row: usize, col: usize, op: EditOp) -> bool {
        self.cells.contains(&(row, col, op))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, EditOp)> + '_ {
        self.cells.iter().copied()
    }

    pub fn cells_of(&self, op: EditOp) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .filter(move |c| c.2 == op)
            .map(|&(r, c, _)| (r, c))
    }

    /// Drops cells whose row is outside `rows`.
    pub fn retain_rows(&mut self, rows: Range<usize>) {
        self.cells.retain(|(r, _, _)| rows.contains(r));
    }
}

/// Maximum-cardinality monotone matching of equal elements, leftmost among
/// co-optimal alignments. The table holds suffix LCS lengths and is traced
/// from the start, preferring match, then skip in `a`, then skip in `b`.
pub fn lcs_align<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i * w + j] = if a[i] == b[j] {
                dp[(i + 1) * w + j + 1] + 1
            } else {
                dp[(i + 1) * w + j].max(dp[i * w + j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(dp[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if dp[(i + 1) * w + j] >= dp[i * w + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Replace this interval of incomplete columns.
    Replace(Range<usize>),
    /// Insert before this column; `len(incomplete)` is the sentinel.
    InsertBefore(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedSpan {
    pub tokens: Vec<String>,
    /// Where the run sits in the rewritten utterance.
    pub rewritten_range: Range<usize>,
    pub anchor: Anchor,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diff {
    pub spans: Vec<AddedSpan>,
    /// Incomplete intervals dropped with nothing in their place.
    pub deletions: Vec<Range<usize>>,
}

pub fn diff_spans(incomplete: &Utterance, rewritten: &Utterance, alignment: &[(usize, usize)]) -> Diff {
    let (n, m) = (incomplete.len(), rewritten.len());
    let mut diff = Diff::default();
    let mut prev = (0usize, 0usize);
    for &(ni, nj) in alignment.iter().chain(std::iter::once(&(n, m))) {
        let inc_gap = prev.0..ni;
        let rew_gap = prev.1..nj;
        if !rew_gap.is_empty() {
            let anchor = if inc_gap.is_empty() {
                Anchor::InsertBefore(ni)
            } else {
                Anchor::Replace(inc_gap)
            };
            diff.spans.push(AddedSpan {
                tokens: rewritten.tokens[rew_gap.clone()]
                    .iter()
                    .map(|t| t.text.clone())
                    .collect(),
                rewritten_range: rew_gap,
                anchor,
            });
        } else if !inc_gap.is_empty() {
            diff.deletions.push(inc_gap);
        }
        prev = (ni + 1, nj + 1);
    }
    diff
}

/// Aligns and diffs in one step.
pub fn diff_utterances(incomplete: &Utterance, rewritten: &Utterance) -> Diff {
    let alignment = lcs_align(&incomplete.texts(), &rewritten.texts());
    diff_spans(incomplete, rewritten, &alignment)
}

/// Incomplete intervals that the gold rewrite substitutes.
pub fn substitution_intervals(incomplete: &Utterance, rewritten: &Utterance) -> Vec<Range<usize>> {
    diff_utterances(incomplete, rewritten)
        .spans
        .into_iter()
        .filter_map(|s| match s.anchor {
            Anchor::Replace(r) => Some(r),
            Anchor::InsertBefore(_) => None,
        })
        .collect()
}

/// Exact contiguous match of `span` inside one history utterance, scanning
/// the latest utterance first and each utterance left to right.
pub fn locate_in_context<S: AsRef<str>>(span: &[S], input: &InputSequence) -> Option<Range<usize>> {
    if span.is_empty() {
        return None;
    }
    for turn in input.history_turns.iter().rev() {
        if turn.len() < span.len() {
            continue;
        }
        for start in turn.start..=turn.end - span.len() {
            if span
                .iter()
                .enumerate()
                .all(|(k, s)| input.text(start + k) == s.as_ref())
            {
                return Some(start..start + span.len());
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expressibility {
    Full,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSpan {
    pub text: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub id: String,
    pub status: Expressibility,
    pub cells: usize,
    pub skipped: Vec<SkippedSpan>,
    pub deletions: Vec<Range<usize>>,
    /// Whether decoding the gold matrix reproduces the gold rewrite.
    pub round_trip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupervisionReport {
    pub full: usize,
    pub partial: usize,
    pub failed: usize,
    pub examples: Vec<ExampleReport>,
}

impl SupervisionReport {
    pub fn push(&mut self, ex: ExampleReport) {
        match ex.status {
            Expressibility::Full => self.full += 1,
            Expressibility::Partial => self.partial += 1,
            Expressibility::Failed => self.failed += 1,
        }
        self.examples.push(ex);
    }
}

/// Builds the gold matrix of `dialogue` laid out on `input`.
pub fn build_edit_matrix(dialogue: &Dialogue, input: &InputSequence) -> Result<(EditMatrix, ExampleReport)> {
    let rewritten = dialogue.rewritten.as_ref().ok_or(Error::MissingGold)?;
    let incomplete = &dialogue.incomplete;
    let diff = diff_utterances(incomplete, rewritten);
    let mut matrix = EditMatrix::for_input(input);
    let mut skipped = Vec::new();

    for span in &diff.spans {
        let Some(rows) = locate_in_context(&span.tokens, input) else {
            skipped.push(SkippedSpan {
                text: span.tokens.clone(),
                reason: "not found in history".into(),
            });
            continue;
        };
        match &span.anchor {
            Anchor::Replace(cols) => {
                for r in rows.clone() {
                    for c in cols.clone() {
                        matrix.insert(r, c, EditOp::Substitute)?;
                    }
                }
            }
            Anchor::InsertBefore(col) => {
                for r in rows.clone() {
                    matrix.insert(r, *col, EditOp::PreInsert)?;
                }
            }
        }
    }

    let decoded = resolve_conflicts(cells_to_spans(&matrix).spans);
    let round_trip = apply_edits(incomplete, &decoded, input)
        .map(|u| u.texts() == rewritten.texts())
        .unwrap_or(false);
    let needs_edit = incomplete.texts() != rewritten.texts();
    let status = if skipped.is_empty() && diff.deletions.is_empty() && round_trip {
        Expressibility::Full
    } else if needs_edit && matrix.is_empty() {
        Expressibility::Failed
    } else if skipped.is_empty() && diff.deletions.is_empty() {
        // every span placed but decoding disagrees
        Expressibility::Failed
    } else {
        Expressibility::Partial
    };
    let report = ExampleReport {
        id: dialogue.id.clone(),
        status,
        cells: matrix.len(),
        skipped,
        deletions: diff.deletions,
        round_trip,
    };
    Ok((matrix, report))
}
