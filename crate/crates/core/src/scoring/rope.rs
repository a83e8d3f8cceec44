//! Rotary position embedding.
//!
//! Each pair `(2m, 2m+1)` of a `d_head`-wide chunk is rotated by `pos * w_m`
//! with `w_m = 10000^(-2m/d_head)`. Rotations compose additively, so
//! `<R_i q, R_j k> = <q, R_(j-i) k>` and scores depend only on the offset.

use ndarray::{Array2, ArrayViewMut1};

const BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Rope {
    d_head: usize,
    freqs: Vec<f64>,
}

impl Rope {
    pub fn new(d_head: usize) -> Self {
        assert!(d_head > 0 && d_head % 2 == 0, "d_head must be positive and even");
        let freqs = (0..d_head / 2)
            .map(|m| BASE.powf(-2.0 * m as f64 / d_head as f64))
            .collect();
        Rope { d_head, freqs }
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Rotates `v` in place; `v.len()` must be a multiple of `d_head`, each
    /// chunk (head) being rotated independently. Negative `pos` applies the
    /// inverse rotation.
    pub fn rotate(&self, v: &mut [f64], pos: f64) {
        debug_assert_eq!(v.len() % self.d_head, 0);
        if pos == 0.0 {
            return;
        }
        for chunk in v.chunks_exact_mut(self.d_head) {
            for (m, &w) in self.freqs.iter().enumerate() {
                let (s, c) = (pos * w).sin_cos();
                let (x0, x1) = (chunk[2 * m], chunk[2 * m + 1]);
                chunk[2 * m] = x0 * c - x1 * s;
                chunk[2 * m + 1] = x0 * s + x1 * c;
            }
        }
    }

    fn rotate_view(&self, mut row: ArrayViewMut1<f64>, pos: f64) {
        match row.as_slice_mut() {
            Some(s) => self.rotate(s, pos),
            None => {
                let mut tmp = row.to_vec();
                self.rotate(&mut tmp, pos);
                row.iter_mut().zip(tmp).for_each(|(d, s)| *d = s);
            }
        }
    }

    /// Rotates row `i` of `m` by `sign * positions[i]`.
    pub fn rotate_rows(&self, m: &mut Array2<f64>, positions: &[usize], sign: f64) {
        for (row, &p) in m.rows_mut().into_iter().zip(positions) {
            self.rotate_view(row, sign * p as f64);
        }
    }
}

/// Rotates a single `d_head`-wide vector to position `pos`.
pub fn rope_rotate(v: &[f64], pos: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    Rope::new(v.len()).rotate(&mut out, pos as f64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn position_zero_is_identity() {
        let v = [0.3, -1.2, 2.0, 0.5];
        assert_eq!(rope_rotate(&v, 0), v);
    }

    #[test]
    fn unit_rotation() {
        let r = rope_rotate(&[1.0, 0.0], 1);
        assert_abs_diff_eq!(r[0], 1f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 1f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn frequencies() {
        let rope = Rope::new(8);
        assert_eq!(rope.freqs[0], 1.0);
        assert_abs_diff_eq!(rope.freqs[1], 10_000f64.powf(-0.25), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn norm_preserving(v in proptest::collection::vec(-5.0f64..5.0, 8), pos in 0usize..2000) {
            let r = rope_rotate(&v, pos);
            prop_assert!((dot(&r, &r).sqrt() - dot(&v, &v).sqrt()).abs() < 1e-9);
        }

        #[test]
        fn relative_position(
            q in proptest::collection::vec(-2.0f64..2.0, 16),
            k in proptest::collection::vec(-2.0f64..2.0, 16),
            i in 0usize..512, j in 0usize..512,
        ) {
            let rope = Rope::new(16);
            let (mut qi, mut kj, mut krel) = (q.clone(), k.clone(), k.clone());
            rope.rotate(&mut qi, i as f64);
            rope.rotate(&mut kj, j as f64);
            rope.rotate(&mut krel, j as f64 - i as f64);
            prop_assert!((dot(&qi, &kj) - dot(&q, &krel)).abs() <= 1e-9);
        }
    }

    #[test]
    fn heads_rotate_independently() {
        let rope = Rope::new(2);
        let mut v = vec![1.0, 0.0, 1.0, 0.0];
        rope.rotate(&mut v, 1.0);
        assert_abs_diff_eq!(v[0], v[2], epsilon = 0.0);
        assert_abs_diff_eq!(v[1], v[3], epsilon = 0.0);
    }
}
