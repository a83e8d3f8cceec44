//! Score grids to rewritten utterances.
//!
//! Decoding thresholds each grid, groups labeled cells into spans (Substitute
//! cells into rectangles, PreInsert cells into per-column row runs), resolves
//! overlaps by mean score and splices the copied history tokens into the
//! incomplete utterance.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datamodel::{build_input_sequence, Dialogue, InputSequence, Role, Utterance};
use crate::error::{Error, Result};
use crate::querygen::{build_query, DependencyParse, PronounLexicon, QueryOptions, QueryTemplate};
use crate::scoring::{ImportedVectors, Model, ScoreGrid};
use crate::supervision::{EditMatrix, EditOp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Replace(Range<usize>),
    InsertBefore(usize),
}

impl Target {
    fn first_col(&self) -> usize {
        match self {
            Target::Replace(r) => r.start,
            Target::InsertBefore(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpan {
    pub op: EditOp,
    pub source_rows: Range<usize>,
    pub target: Target,
    /// Mean score of the member cells (0 when extracted without grids).
    pub score: f64,
    /// The member cells do not fill the bounding box.
    pub ragged: bool,
}

/// Labels every cell with `s >= theta`. Substitute is never labeled on the
/// sentinel column.
pub fn decode_labels(grid: &ScoreGrid, theta: f64) -> EditMatrix {
    let (rows, cols) = grid.values.dim();
    let mut m = EditMatrix::new(rows, cols);
    for ((r, c), &s) in grid.values.indexed_iter() {
        if s >= theta && !(grid.op == EditOp::Substitute && c + 1 == cols) {
            m.insert(r, c, grid.op).expect("in range");
        }
    }
    m
}

/// Thresholds both grids into one matrix.
pub fn decode_all(grids: &[ScoreGrid], theta: f64) -> EditMatrix {
    let mut out: Option<EditMatrix> = None;
    for g in grids {
        let m = decode_labels(g, theta);
        match out.as_mut() {
            None => out = Some(m),
            Some(acc) => {
                for (r, c, op) in m.cells() {
                    acc.insert(r, c, op).expect("same shape");
                }
            }
        }
    }
    out.unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanExtraction {
    pub spans: Vec<EditSpan>,
    /// Number of Substitute components kept as a bounding box over a ragged shape.
    pub ragged: usize,
}

pub fn cells_to_spans(matrix: &EditMatrix) -> SpanExtraction {
    extract(matrix, |_, _, _| 0.0)
}

/// As [`cells_to_spans`], scoring each span by the mean of its cells in `grids`.
pub fn cells_to_scored_spans(matrix: &EditMatrix, grids: &[ScoreGrid]) -> SpanExtraction {
    extract(matrix, |op, r, c| {
        grids
            .iter()
            .find(|g| g.op == op)
            .map_or(0.0, |g| g.values[[r, c]])
    })
}

fn extract(matrix: &EditMatrix, score: impl Fn(EditOp, usize, usize) -> f64) -> SpanExtraction {
    let (rows, cols) = (matrix.n_rows(), matrix.n_cols());
    let mut spans = Vec::new();
    let mut ragged = 0;

    // Substitute: 4-connected components, then bounding boxes.
    let mut seen = vec![false; rows * cols];
    for (r0, c0) in matrix.cells_of(EditOp::Substitute) {
        if seen[r0 * cols + c0] {
            continue;
        }
        seen[r0 * cols + c0] = true;
        let mut stack = vec![(r0, c0)];
        let mut members = Vec::new();
        while let Some((r, c)) = stack.pop() {
            members.push((r, c));
            let mut nbrs = Vec::with_capacity(4);
            if r > 0 {
                nbrs.push((r - 1, c));
            }
            if r + 1 < rows {
                nbrs.push((r + 1, c));
            }
            if c > 0 {
                nbrs.push((r, c - 1));
            }
            if c + 1 < cols {
                nbrs.push((r, c + 1));
            }
            for (nr, nc) in nbrs {
                if !seen[nr * cols + nc] && matrix.contains(nr, nc, EditOp::Substitute) {
                    seen[nr * cols + nc] = true;
                    stack.push((nr, nc));
                }
            }
        }
        let rmin = members.iter().map(|m| m.0).min().unwrap();
        let rmax = members.iter().map(|m| m.0).max().unwrap();
        let cmin = members.iter().map(|m| m.1).min().unwrap();
        let cmax = members.iter().map(|m| m.1).max().unwrap();
        let is_ragged = members.len() != (rmax - rmin + 1) * (cmax - cmin + 1);
        if is_ragged {
            ragged += 1;
            log::debug!("ragged substitute component at rows {rmin}..={rmax}, cols {cmin}..={cmax}");
        }
        let mean = members.iter().map(|&(r, c)| score(EditOp::Substitute, r, c)).sum::<f64>()
            / members.len() as f64;
        spans.push(EditSpan {
            op: EditOp::Substitute,
            source_rows: rmin..rmax + 1,
            target: Target::Replace(cmin..cmax + 1),
            score: mean,
            ragged: is_ragged,
        });
    }

    // PreInsert: maximal row runs per column. Cells iterate in (row, col) order.
    let mut by_col: Vec<Vec<usize>> = vec![Vec::new(); cols];
    for (r, c) in matrix.cells_of(EditOp::PreInsert) {
        by_col[c].push(r);
    }
    for (c, rows_here) in by_col.iter().enumerate() {
        let mut i = 0;
        while i < rows_here.len() {
            let mut j = i + 1;
            while j < rows_here.len() && rows_here[j] == rows_here[j - 1] + 1 {
                j += 1;
            }
            let run = &rows_here[i..j];
            let mean = run.iter().map(|&r| score(EditOp::PreInsert, r, c)).sum::<f64>() / run.len() as f64;
            spans.push(EditSpan {
                op: EditOp::PreInsert,
                source_rows: run[0]..run[run.len() - 1] + 1,
                target: Target::InsertBefore(c),
                score: mean,
                ragged: false,
            });
            i = j;
        }
    }
    sort_spans(&mut spans);
    SpanExtraction { spans, ragged }
}

fn sort_spans(spans: &mut [EditSpan]) {
    spans.sort_by(|a, b| {
        a.target
            .first_col()
            .cmp(&b.target.first_col())
            .then_with(|| b.op.cmp(&a.op)) // inserts before replacements at one column
            .then_with(|| a.source_rows.start.cmp(&b.source_rows.start))
    });
}

/// Higher score first; ties go to the lower source row.
fn rank(a: &EditSpan, b: &EditSpan) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source_rows.start.cmp(&b.source_rows.start))
        .then_with(|| a.source_rows.end.cmp(&b.source_rows.end))
}

/// Keeps the best of overlapping replacements and of inserts sharing a
/// column, and drops inserts strictly inside a kept replacement.
pub fn resolve_conflicts(spans: Vec<EditSpan>) -> Vec<EditSpan> {
    let (mut replaces, mut inserts): (Vec<_>, Vec<_>) =
        spans.into_iter().partition(|s| matches!(s.target, Target::Replace(_)));
    replaces.sort_by(rank);
    inserts.sort_by(rank);

    let mut kept: Vec<EditSpan> = Vec::new();
    for s in replaces {
        let Target::Replace(cols) = &s.target else { unreachable!() };
        let overlaps = kept.iter().any(|k| match &k.target {
            Target::Replace(kc) => kc.start < cols.end && cols.start < kc.end,
            Target::InsertBefore(_) => false,
        });
        if !overlaps {
            kept.push(s);
        }
    }
    let mut insert_cols = std::collections::BTreeSet::new();
    let mut kept_inserts = Vec::new();
    for s in inserts {
        let Target::InsertBefore(col) = s.target else { unreachable!() };
        let interior = kept.iter().any(|k| match &k.target {
            Target::Replace(kc) => kc.start < col && col < kc.end,
            Target::InsertBefore(_) => false,
        });
        if !interior && insert_cols.insert(col) {
            kept_inserts.push(s);
        }
    }
    kept.extend(kept_inserts);
    sort_spans(&mut kept);
    kept
}

/// Splices span sources into `incomplete`, left to right. At each column any
/// insert comes first, then the replacement (or the original token).
pub fn apply_edits(incomplete: &Utterance, spans: &[EditSpan], input: &InputSequence) -> Result<Utterance> {
    let n = incomplete.len();
    let hist = &input.history_range;
    for s in spans {
        for row in [s.source_rows.start, s.source_rows.end.saturating_sub(1)] {
            if s.source_rows.is_empty() || !hist.contains(&row) {
                return Err(Error::RowOutOfRange {
                    row,
                    start: hist.start,
                    end: hist.end,
                });
            }
        }
        match &s.target {
            Target::Replace(cols) if cols.is_empty() || cols.end > n => {
                return Err(Error::ColOutOfRange {
                    col: cols.end,
                    max: n.saturating_sub(1),
                })
            }
            Target::InsertBefore(col) if *col > n => {
                return Err(Error::ColOutOfRange { col: *col, max: n })
            }
            _ => {}
        }
    }
    let source = |s: &EditSpan| s.source_rows.clone().map(|r| input.text(r).to_owned());

    let mut out: Vec<String> = Vec::new();
    let mut j = 0;
    while j <= n {
        for s in spans {
            if s.target == Target::InsertBefore(j) {
                out.extend(source(s));
            }
        }
        if j == n {
            break;
        }
        let replacement = spans.iter().find(|s| matches!(&s.target, Target::Replace(c) if c.start == j));
        match replacement {
            Some(s) => {
                out.extend(source(s));
                let Target::Replace(cols) = &s.target else { unreachable!() };
                j = cols.end;
            }
            None => {
                out.push(incomplete.tokens[j].text.clone());
                j += 1;
            }
        }
    }
    Ok(Utterance::from_texts(out, incomplete.speaker_turn, Role::Incomplete))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOptions {
    pub theta: f64,
    pub query: QueryOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub id: String,
    pub query: QueryTemplate,
    pub input: InputSequence,
    pub grids: Vec<ScoreGrid>,
    pub labels: EditMatrix,
    pub raw_spans: Vec<EditSpan>,
    pub spans: Vec<EditSpan>,
    pub ragged: usize,
    pub output: Utterance,
}

impl Diagnostics {
    /// JSON view; with `grid_strings` grid values are rendered as decimal
    /// strings with 16 significant digits.
    pub fn to_json(&self, grid_strings: bool) -> serde_json::Value {
        use serde_json::json;
        let grids: Vec<_> = self
            .grids
            .iter()
            .map(|g| {
                let rows: Vec<serde_json::Value> = g
                    .values
                    .rows()
                    .into_iter()
                    .map(|row| {
                        if grid_strings {
                            json!(row.iter().map(|v| format!("{v:.15e}")).collect::<Vec<_>>())
                        } else {
                            json!(row.to_vec())
                        }
                    })
                    .collect();
                json!({ "op": g.op.code(), "values": rows })
            })
            .collect();
        json!({
            "id": self.id,
            "query": self.query.texts(),
            "input": self.input.tokens.iter().map(|t| &t.text).collect::<Vec<_>>(),
            "query_range": [self.input.query_range.start, self.input.query_range.end],
            "history_range": [self.input.history_range.start, self.input.history_range.end],
            "incomplete_range": [self.input.incomplete_range.start, self.input.incomplete_range.end],
            "grids": grids,
            "labels": self.labels,
            "raw_spans": self.raw_spans,
            "spans": self.spans,
            "ragged_components": self.ragged,
            "output": self.output.texts(),
        })
    }
}

/// Decodes grids for an already-built input: threshold, drop query rows,
/// aggregate, resolve and apply.
pub fn decode_and_apply(
    incomplete: &Utterance,
    input: &InputSequence,
    grids: &[ScoreGrid],
    theta: f64,
) -> Result<(Utterance, EditMatrix, SpanExtraction, Vec<EditSpan>)> {
    let mut labels = decode_all(grids, theta);
    labels.retain_rows(input.history_range.clone());
    let extraction = cells_to_scored_spans(&labels, grids);
    let spans = resolve_conflicts(extraction.spans.clone());
    let output = apply_edits(incomplete, &spans, input)?;
    Ok((output, labels, extraction, spans))
}

/// Full pipeline: query, input sequence, scores, decoding, edits.
pub fn rewrite(
    dialogue: &Dialogue,
    model: &Model,
    opts: &RewriteOptions,
    lexicon: &PronounLexicon,
    parse: Option<&DependencyParse>,
    vectors: Option<&ImportedVectors>,
) -> Result<(Utterance, Diagnostics)> {
    let query = build_query(&dialogue.incomplete, lexicon, parse, &opts.query)?;
    let input = build_input_sequence(&query, dialogue);
    let grids = model.score(&dialogue.id, &input, vectors)?;
    let (output, labels, extraction, spans) =
        decode_and_apply(&dialogue.incomplete, &input, &grids, opts.theta)?;
    let diagnostics = Diagnostics {
        id: dialogue.id.clone(),
        query,
        input,
        grids,
        labels,
        raw_spans: extraction.spans,
        spans,
        ragged: extraction.ragged,
        output: output.clone(),
    };
    Ok((output, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::TokenizerMode;
    use crate::supervision::build_edit_matrix;
    use ndarray::array;

    fn grid(op: EditOp, values: ndarray::Array2<f64>) -> ScoreGrid {
        ScoreGrid { op, values }
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = grid(EditOp::PreInsert, array![[0.2, -0.3], [0.05, 0.1]]);
        let m = decode_labels(&g, 0.1);
        let cells: Vec<_> = m.cells_of(EditOp::PreInsert).collect();
        assert_eq!(cells, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn threshold_extremes() {
        let g = grid(EditOp::PreInsert, array![[0.2, -0.3], [0.05, 0.1]]);
        assert!(decode_labels(&g, 1.0).is_empty());
        assert_eq!(decode_labels(&g, f64::NEG_INFINITY).len(), 4);
        // Substitute skips the sentinel column.
        let g = grid(EditOp::Substitute, array![[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(decode_labels(&g, f64::NEG_INFINITY).len(), 2);
    }

    #[test]
    fn single_rectangle() {
        let mut m = EditMatrix::new(6, 6);
        for r in 2..5 {
            m.insert(r, 3, EditOp::Substitute).unwrap();
        }
        let ex = cells_to_spans(&m);
        assert_eq!(ex.spans.len(), 1);
        assert_eq!(ex.spans[0].source_rows, 2..5);
        assert_eq!(ex.spans[0].target, Target::Replace(3..4));
        assert_eq!(ex.ragged, 0);
    }

    #[test]
    fn empty_matrix_no_spans() {
        assert!(cells_to_spans(&EditMatrix::new(4, 4)).spans.is_empty());
    }

    #[test]
    fn two_insert_stripes() {
        let mut m = EditMatrix::new(8, 6);
        for r in 1..3 {
            m.insert(r, 1, EditOp::PreInsert).unwrap();
        }
        for r in 5..8 {
            m.insert(r, 4, EditOp::PreInsert).unwrap();
        }
        let ex = cells_to_spans(&m);
        assert_eq!(ex.spans.len(), 2);
        assert_eq!(ex.spans[0].target, Target::InsertBefore(1));
        assert_eq!(ex.spans[1].source_rows, 5..8);
    }

    #[test]
    fn ragged_component_uses_bounding_box() {
        let mut m = EditMatrix::new(5, 5);
        for (r, c) in [(1, 1), (2, 1), (2, 2)] {
            m.insert(r, c, EditOp::Substitute).unwrap();
        }
        let ex = cells_to_spans(&m);
        assert_eq!(ex.ragged, 1);
        assert!(ex.spans[0].ragged);
        assert_eq!(ex.spans[0].source_rows, 1..3);
        assert_eq!(ex.spans[0].target, Target::Replace(1..3));
    }

    fn span(op: EditOp, rows: Range<usize>, target: Target, score: f64) -> EditSpan {
        EditSpan {
            op,
            source_rows: rows,
            target,
            score,
            ragged: false,
        }
    }

    #[test]
    fn best_replacement_wins() {
        let a = span(EditOp::Substitute, 3..4, Target::Replace(2..3), 0.3);
        let b = span(EditOp::Substitute, 7..9, Target::Replace(2..3), 0.9);
        let out = resolve_conflicts(vec![a, b.clone()]);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn disjoint_spans_unchanged() {
        let a = span(EditOp::Substitute, 3..4, Target::Replace(0..1), 0.3);
        let b = span(EditOp::PreInsert, 7..9, Target::InsertBefore(2), 0.9);
        assert_eq!(resolve_conflicts(vec![a.clone(), b.clone()]), vec![a, b]);
    }

    #[test]
    fn ties_go_to_lower_row() {
        let a = span(EditOp::PreInsert, 6..7, Target::InsertBefore(1), 0.5);
        let b = span(EditOp::PreInsert, 2..4, Target::InsertBefore(1), 0.5);
        assert_eq!(resolve_conflicts(vec![a, b.clone()]), vec![b]);
    }

    #[test]
    fn interior_inserts_dropped_boundary_kept() {
        let r = span(EditOp::Substitute, 3..4, Target::Replace(1..4), 0.1);
        let inside = span(EditOp::PreInsert, 5..6, Target::InsertBefore(2), 0.9);
        let at_start = span(EditOp::PreInsert, 6..7, Target::InsertBefore(1), 0.9);
        let at_end = span(EditOp::PreInsert, 7..8, Target::InsertBefore(4), 0.9);
        let out = resolve_conflicts(vec![r.clone(), inside, at_start.clone(), at_end.clone()]);
        assert_eq!(out, vec![at_start, r, at_end]);
    }

    fn table_one() -> (Dialogue, InputSequence) {
        let d = Dialogue::from_text(
            "t1",
            TokenizerMode::CharCjk,
            &["史密斯需要在附近找一家昂贵的餐馆。", "史密斯关心菜肴的类型吗？"],
            "不，他不关心。",
            Some("不，史密斯不关心菜肴的类型。"),
        );
        let q = build_query(&d.incomplete, &PronounLexicon::default_zh(), None, &QueryOptions::unified(true))
            .unwrap();
        let input = build_input_sequence(&q, &d);
        (d, input)
    }

    #[test]
    fn table_one_gold_matrix_applies() {
        let (d, input) = table_one();
        let (m, _) = build_edit_matrix(&d, &input).unwrap();
        let spans = resolve_conflicts(cells_to_spans(&m).spans);
        let out = apply_edits(&d.incomplete, &spans, &input).unwrap();
        assert_eq!(out.texts().concat(), "不，史密斯不关心菜肴的类型。");
    }

    #[test]
    fn no_spans_is_identity() {
        let (d, input) = table_one();
        let out = apply_edits(&d.incomplete, &[], &input).unwrap();
        assert_eq!(out.texts(), d.incomplete.texts());
    }

    #[test]
    fn table_nine_sentinel_insert() {
        let d = Dialogue::from_text(
            "t9",
            TokenizerMode::CharCjk,
            &["帮我找一下西安到商洛的顺风车", "哪的"],
            "能不能找到",
            Some("能不能找到西安到商洛的顺风车"),
        );
        let q = QueryTemplate::plain(d.incomplete.clone());
        let input = build_input_sequence(&q, &d);
        let (m, report) = build_edit_matrix(&d, &input).unwrap();
        assert_eq!(m.cells_of(EditOp::PreInsert).count(), 9);
        assert!(m.cells_of(EditOp::PreInsert).all(|(_, c)| c == 5));
        let spans = resolve_conflicts(cells_to_spans(&m).spans);
        let out = apply_edits(&d.incomplete, &spans, &input).unwrap();
        assert_eq!(out.texts().concat(), "能不能找到西安到商洛的顺风车");
        assert!(report.round_trip);
    }

    #[test]
    fn out_of_range_rows_error() {
        let (d, input) = table_one();
        let bad = span(EditOp::Substitute, 0..1, Target::Replace(2..3), 1.0);
        assert!(matches!(
            apply_edits(&d.incomplete, &[bad], &input),
            Err(Error::RowOutOfRange { .. })
        ));
        let bad = span(EditOp::Substitute, 10..99, Target::Replace(2..3), 1.0);
        assert!(apply_edits(&d.incomplete, &[bad], &input).is_err());
    }
}
