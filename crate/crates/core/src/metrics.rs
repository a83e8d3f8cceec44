//! Corpus BLEU, ROUGE-n, ROUGE-L and exact match over token sequences.
//!
//! BLEU is corpus-level with uniform weights. A zero clipped count is
//! replaced by `1e-9`; an order with no hypothesis n-grams at all (every
//! hypothesis shorter than `n`) is left out of the geometric mean. ROUGE
//! scores are per-pair F1 averaged over the corpus. All scores but EM are
//! on a 0-100 scale.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::datamodel::Utterance;
use crate::error::{Error, Result};
use crate::supervision::lcs_align;

const SMOOTH: f64 = 1e-9;

pub fn exact_match(hyp: &Utterance, reference: &Utterance) -> bool {
    hyp.texts() == reference.texts()
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

/// `(clipped matches, hypothesis n-gram total, reference n-gram total)`.
fn overlap<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (usize, usize, usize) {
    let h = ngrams(hyp, n);
    let r = ngrams(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, h.values().sum(), r.values().sum())
}

fn check<S>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::CorpusMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    Ok(())
}

pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], max_n: usize) -> Result<f64> {
    check(hyps, refs)?;
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let (matched, total) = hyps
            .iter()
            .zip(refs)
            .map(|(h, r)| overlap(h, r, n))
            .fold((0, 0), |(m, t), (m1, t1, _)| (m + m1, t + t1));
        if total == 0 {
            continue;
        }
        let m = if matched == 0 { SMOOTH } else { matched as f64 };
        log_sum += (m / total as f64).ln();
        orders += 1;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_sum / orders as f64).exp())
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    100.0 * xs.sum::<f64>() / n as f64
}

pub fn rouge_n<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], n: usize) -> Result<f64> {
    check(hyps, refs)?;
    let per_pair = hyps.iter().zip(refs).map(|(h, r)| {
        let (m, th, tr) = overlap(h, r, n);
        match (th, tr) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => f1(m as f64 / th as f64, m as f64 / tr as f64),
        }
    });
    Ok(mean(per_pair, hyps.len()))
}

pub fn rouge_l<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    check(hyps, refs)?;
    let per_pair = hyps.iter().zip(refs).map(|(h, r)| {
        if h.is_empty() && r.is_empty() {
            return 1.0;
        }
        if h.is_empty() || r.is_empty() {
            return 0.0;
        }
        let h: Vec<&str> = h.iter().map(AsRef::as_ref).collect();
        let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        let l = lcs_align(&h, &r).len() as f64;
        f1(l / h.len() as f64, l / r.len() as f64)
    });
    Ok(mean(per_pair, hyps.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub em: f64,
    pub bleu: BTreeMap<usize, f64>,
    pub rouge_n: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    pub count: usize,
}

impl EvalResult {
    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut rows = vec![("EM".to_owned(), 100.0 * self.em)];
        rows.extend(self.bleu.iter().map(|(n, v)| (format!("BLEU-{n}"), *v)));
        rows.extend(self.rouge_n.iter().map(|(n, v)| (format!("ROUGE-{n}"), *v)));
        rows.push(("ROUGE-L".to_owned(), self.rouge_l));
        let mut out = format!("{:<10}{:>8}\n", "metric", "score");
        for (name, v) in rows {
            out.push_str(&format!("{name:<10}{v:>8.2}\n"));
        }
        out.push_str(&format!("{:<10}{:>8}\n", "count", self.count));
        out
    }
}

pub fn evaluate<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<EvalResult> {
    check(hyps, refs)?;
    let em = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| h.iter().map(AsRef::as_ref).eq(r.iter().map(AsRef::as_ref)))
        .count() as f64
        / hyps.len() as f64;
    Ok(EvalResult {
        em,
        bleu: (1..=4).map(|n| Ok((n, bleu(hyps, refs, n)?))).collect::<Result<_>>()?,
        rouge_n: (1..=2).map(|n| Ok((n, rouge_n(hyps, refs, n)?))).collect::<Result<_>>()?,
        rouge_l: rouge_l(hyps, refs)?,
        count: hyps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Role, TokenizerMode};
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn corpus(xs: &[&str]) -> Vec<Vec<String>> {
        xs.iter().map(|s| toks(s)).collect()
    }

    #[test]
    fn exact_match_is_on_tokens() {
        let m = TokenizerMode::WhitespacePunct;
        let a = Utterance::new("yes , he does", m, 0, Role::Incomplete);
        let b = Utterance::new("yes,  he does", m, 0, Role::Incomplete);
        let c = Utterance::new("yes, she does", m, 0, Role::Incomplete);
        assert!(exact_match(&a, &b));
        assert!(!exact_match(&a, &c));
    }

    #[test]
    fn brevity_fixture() {
        let b = bleu(&corpus(&["a b c d"]), &corpus(&["a b c d e"]), 4).unwrap();
        assert_abs_diff_eq!(b, 100.0 * (-0.25f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(b, 77.880, epsilon = 0.01);
    }

    #[test]
    fn hand_computed_precisions() {
        // p1 = 3/4, p2 = 1/3, c = r = 4
        let b = bleu(&corpus(&["a b x d"]), &corpus(&["a b c d"]), 2).unwrap();
        assert_abs_diff_eq!(b, 100.0 * (0.75f64 * (1.0 / 3.0)).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn disjoint_bleu_is_near_zero() {
        let b = bleu(&corpus(&["x y z"]), &corpus(&["a b c"]), 4).unwrap();
        assert!(b < 1e-6, "{b}");
    }

    #[test]
    fn identical_corpora_score_perfectly() {
        let c = corpus(&["a b c", "d", "e f g h i"]);
        let r = evaluate(&c, &c).unwrap();
        assert_eq!(r.em, 1.0);
        for v in r.bleu.values().chain(r.rouge_n.values()) {
            assert_abs_diff_eq!(*v, 100.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(r.rouge_l, 100.0, epsilon = 1e-9);
        assert_eq!(r.count, 3);
    }

    #[test]
    fn rouge_one_fixture() {
        let r = rouge_n(&corpus(&["a b"]), &corpus(&["a c"]), 1).unwrap();
        assert_abs_diff_eq!(r, 50.0, epsilon = 1e-12);
        assert_eq!(rouge_n(&corpus(&["x"]), &corpus(&["a c"]), 1).unwrap(), 0.0);
    }

    #[test]
    fn rouge_l_fixture() {
        // lcs "a c" = 2; p = 2/3, r = 2/4
        let r = rouge_l(&corpus(&["a b c"]), &corpus(&["a x c y"])).unwrap();
        assert_abs_diff_eq!(r, 100.0 * f1(2.0 / 3.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn order_invariance() {
        let h = corpus(&["a b c", "d e", "f"]);
        let r = corpus(&["a c", "d e f", "g"]);
        let hr: Vec<_> = h.iter().rev().cloned().collect();
        let rr: Vec<_> = r.iter().rev().cloned().collect();
        let a = evaluate(&h, &r).unwrap();
        let b = evaluate(&hr, &rr).unwrap();
        assert_eq!(a.em, b.em);
        for (x, y) in a.bleu.values().zip(b.bleu.values()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(a.rouge_l, b.rouge_l, epsilon = 1e-9);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(bleu(&empty, &empty, 4), Err(Error::EmptyCorpus)));
        assert!(matches!(
            evaluate(&corpus(&["a"]), &corpus(&["a", "b"])),
            Err(Error::CorpusMismatch { .. })
        ));
    }

    #[test]
    fn table_lists_every_metric() {
        let c = corpus(&["a b"]);
        let t = evaluate(&c, &c).unwrap().table();
        for name in ["EM", "BLEU-1", "BLEU-4", "ROUGE-2", "ROUGE-L", "count"] {
            assert!(t.contains(name), "{t}");
        }
    }
}
