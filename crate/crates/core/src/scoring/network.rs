//! Forward pass with caches and exact reverse-mode gradients.
//!
//! Mixer block (row-vector convention, `c = 1/sqrt(d_model)`, RoPE over
//! absolute positions on the attention queries/keys):
//!
//! ```text
//! x0 = E[tok] + Role[role]
//! A  = softmax(c · R(x0 Wq) R(x0 Wk)^T)
//! x1 = x0 + A (x0 Wv) Wo
//! h  = x1 + tanh(x1 W1 + b1) W2 + b2
//! ```

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use super::loss::circle_loss_grad;
use super::{EncoderMode, EncoderParams, ImportedVectors, MixerParams, Model, OpHead, Params, Rope};
use crate::datamodel::InputSequence;
use crate::error::{Error, Result};
use crate::supervision::{EditMatrix, EditOp};

/// One supervised example: model input plus its gold matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub input: InputSequence,
    pub gold: EditMatrix,
}

pub(crate) fn positions(input: &InputSequence) -> (Vec<usize>, Vec<usize>) {
    (
        (0..input.n_rows()).collect(),
        (input.incomplete_range.start..=input.sentinel_index).collect(),
    )
}

fn row_sums(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

struct MixerCache {
    x0: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    z: Array2<f64>,
    x1: Array2<f64>,
    g: Array2<f64>,
}

fn mixer_forward(m: &MixerParams, x0: Array2<f64>, rope: &Rope, pos: &[usize]) -> (Array2<f64>, MixerCache) {
    let c = 1.0 / (x0.ncols() as f64).sqrt();
    let mut q = x0.dot(&m.wq);
    let mut k = x0.dot(&m.wk);
    rope.rotate_rows(&mut q, pos, 1.0);
    rope.rotate_rows(&mut k, pos, 1.0);
    let v = x0.dot(&m.wv);
    let mut a = q.dot(&k.t()) * c;
    for mut row in a.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        row.mapv_inplace(|x| (x - mx).exp());
        let sum = row.sum();
        row /= sum;
    }
    let z = a.dot(&v);
    let x1 = &x0 + &z.dot(&m.wo);
    let g = (x1.dot(&m.w1) + &m.b1).mapv(f64::tanh);
    let h = &x1 + &(g.dot(&m.w2) + &m.b2);
    (h, MixerCache { x0, q, k, v, a, z, x1, g })
}

/// Accumulates mixer gradients into `grad`, returns d loss / d x0.
fn mixer_backward(
    m: &MixerParams,
    cache: &MixerCache,
    dh: &Array2<f64>,
    rope: &Rope,
    pos: &[usize],
    grad: &mut MixerParams,
) -> Array2<f64> {
    let c = 1.0 / (cache.x0.ncols() as f64).sqrt();
    grad.w2 += &cache.g.t().dot(dh);
    grad.b2 += &row_sums(dh);
    let dg = dh.dot(&m.w2.t());
    let dp = dg * cache.g.mapv(|g| 1.0 - g * g);
    grad.w1 += &cache.x1.t().dot(&dp);
    grad.b1 += &row_sums(&dp);
    let dx1 = dh + &dp.dot(&m.w1.t());

    grad.wo += &cache.z.t().dot(&dx1);
    let dz = dx1.dot(&m.wo.t());
    let da = dz.dot(&cache.v.t());
    let dv = cache.a.t().dot(&dz);
    let mut ds = Array2::zeros(da.raw_dim());
    for ((mut out, a_row), da_row) in ds.rows_mut().into_iter().zip(cache.a.rows()).zip(da.rows()) {
        let inner: f64 = a_row.iter().zip(da_row.iter()).map(|(a, d)| a * d).sum();
        for ((o, &a), &d) in out.iter_mut().zip(a_row.iter()).zip(da_row.iter()) {
            *o = c * a * (d - inner);
        }
    }
    let mut dq = ds.dot(&cache.k);
    let mut dk = ds.t().dot(&cache.q);
    rope.rotate_rows(&mut dq, pos, -1.0);
    rope.rotate_rows(&mut dk, pos, -1.0);
    grad.wq += &cache.x0.t().dot(&dq);
    grad.wk += &cache.x0.t().dot(&dk);
    grad.wv += &cache.x0.t().dot(&dv);
    dx1 + dq.dot(&m.wq.t()) + dk.dot(&m.wk.t()) + dv.dot(&m.wv.t())
}

struct EncoderCache {
    ids: Vec<usize>,
    roles: Vec<usize>,
    mixer: Option<MixerCache>,
}

fn encoder_forward(enc: &EncoderParams, model: &Model, input: &InputSequence) -> (Array2<f64>, EncoderCache) {
    let ids: Vec<usize> = input.tokens.iter().map(|t| model.vocab.id(&t.text)).collect();
    let roles: Vec<usize> = input.tokens.iter().map(|t| t.role.index()).collect();
    let d = model.config.d_model;
    let mut x0 = Array2::zeros((input.len(), d));
    for (t, mut row) in x0.rows_mut().into_iter().enumerate() {
        row += &enc.embedding.row(ids[t]);
        row += &enc.role.row(roles[t]);
    }
    match &enc.mixer {
        None => (
            x0,
            EncoderCache {
                ids,
                roles,
                mixer: None,
            },
        ),
        Some(m) => {
            let pos: Vec<usize> = (0..input.len()).collect();
            let (h, cache) = mixer_forward(m, x0, &Rope::new(d), &pos);
            (
                h,
                EncoderCache {
                    ids,
                    roles,
                    mixer: Some(cache),
                },
            )
        }
    }
}

fn encoder_backward(enc: &EncoderParams, cache: &EncoderCache, dh: Array2<f64>, grad: &mut EncoderParams) {
    let dx0 = match (&enc.mixer, &cache.mixer, grad.mixer.as_mut()) {
        (Some(m), Some(mc), Some(gm)) => {
            let pos: Vec<usize> = (0..dh.nrows()).collect();
            mixer_backward(m, mc, &dh, &Rope::new(dh.ncols()), &pos, gm)
        }
        _ => dh,
    };
    for (t, row) in dx0.rows().into_iter().enumerate() {
        let mut e = grad.embedding.row_mut(cache.ids[t]);
        e += &row;
        let mut r = grad.role.row_mut(cache.roles[t]);
        r += &row;
    }
}

pub(crate) fn encode(
    model: &Model,
    example_id: &str,
    input: &InputSequence,
    vectors: Option<&ImportedVectors>,
) -> Result<Array2<f64>> {
    match (model.config.mode, &model.params.encoder) {
        (EncoderMode::TrainableEmbedding, Some(enc)) => Ok(encoder_forward(enc, model, input).0),
        (EncoderMode::TrainableEmbedding, None) => {
            Err(Error::ModelFormat("trainable encoder has no parameters".into()))
        }
        (EncoderMode::ImportedVectors, _) => {
            let vectors = vectors.ok_or_else(|| Error::Vectors("model requires imported vectors".into()))?;
            vectors.get(example_id, input.len(), model.config.d_model)
        }
    }
}

/// Loss of one example (summed over both operations) and its gradient.
pub fn example_grad(model: &Model, ex: &TrainExample, vectors: Option<&ImportedVectors>) -> Result<(f64, Params)> {
    let input = &ex.input;
    if ex.gold.n_rows() != input.n_rows() || ex.gold.n_cols() != input.n_cols() {
        return Err(Error::Shape(format!(
            "gold matrix {}x{} vs input {}x{} for `{}`",
            ex.gold.n_rows(),
            ex.gold.n_cols(),
            input.n_rows(),
            input.n_cols(),
            ex.id
        )));
    }
    let (h, enc_cache) = match (&model.params.encoder, model.config.mode) {
        (Some(enc), EncoderMode::TrainableEmbedding) => {
            let (h, c) = encoder_forward(enc, model, input);
            (h, Some(c))
        }
        _ => (encode(model, &ex.id, input, vectors)?, None),
    };
    let rope = model.rope();
    let (row_pos, col_pos) = positions(input);
    let n_rows = input.n_rows();
    let col_span = input.incomplete_range.start..input.sentinel_index + 1;
    let rows = h.slice(s![..n_rows, ..]);
    let cols = h.slice(s![col_span.clone(), ..]);

    let mut grad = model.params.zeros_like();
    let mut dh = Array2::<f64>::zeros(h.raw_dim());
    let mut loss = 0.0;
    for op in EditOp::ALL {
        let head: &OpHead = model.params.head.op(op);
        let mut qr = rows.dot(&head.wq) + &head.bq;
        let mut kr = cols.dot(&head.wk) + &head.bk;
        rope.rotate_rows(&mut qr, &row_pos, 1.0);
        rope.rotate_rows(&mut kr, &col_pos, 1.0);
        let scores = qr.dot(&kr.t());
        let (l, ds) = circle_loss_grad(&scores, &ex.gold, op);
        loss += l;

        let mut dq = ds.dot(&kr);
        let mut dk = ds.t().dot(&qr);
        rope.rotate_rows(&mut dq, &row_pos, -1.0);
        rope.rotate_rows(&mut dk, &col_pos, -1.0);
        let g = grad.head.op_mut(op);
        g.wq += &rows.t().dot(&dq);
        g.bq += &row_sums(&dq);
        g.wk += &cols.t().dot(&dk);
        g.bk += &row_sums(&dk);
        let mut dh_rows = dh.slice_mut(s![..n_rows, ..]);
        dh_rows += &dq.dot(&head.wq.t());
        let mut dh_cols = dh.slice_mut(s![col_span.clone(), ..]);
        dh_cols += &dk.dot(&head.wk.t());
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            example: ex.id.clone(),
        });
    }
    if let (Some(enc), Some(cache), Some(genc)) =
        (&model.params.encoder, enc_cache.as_ref(), grad.encoder.as_mut())
    {
        encoder_backward(enc, cache, dh, genc);
    }
    Ok((loss, grad))
}

/// Mean loss and mean gradient over `batch`. Per-example work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_grad(model: &Model, batch: &[&TrainExample], vectors: Option<&ImportedVectors>) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Ok((0.0, model.params.zeros_like()));
    }
    let parts: Vec<Result<(f64, Params)>> = batch.par_iter().map(|ex| example_grad(model, ex, vectors)).collect();
    let mut total = 0.0;
    let mut acc = model.params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        total += l;
        acc.add_assign(&g);
    }
    let k = 1.0 / batch.len() as f64;
    acc.scale(k);
    Ok((total * k, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_input_sequence, Dialogue, TokenizerMode};
    use crate::querygen::{build_query, PronounLexicon, QueryOptions};
    use crate::scoring::{circle_loss, ModelConfig, Vocab};
    use crate::supervision::build_edit_matrix;

    fn example() -> TrainExample {
        let d = Dialogue::from_text(
            "e",
            TokenizerMode::WhitespacePunct,
            &["tom bought a red car", "does tom like it"],
            "yes he likes",
            Some("yes tom likes a red car"),
        );
        let q = build_query(&d.incomplete, &PronounLexicon::default_en(), None, &QueryOptions::unified(true))
            .unwrap();
        let input = build_input_sequence(&q, &d);
        let (gold, _) = build_edit_matrix(&d, &input).unwrap();
        TrainExample {
            id: d.id.clone(),
            input,
            gold,
        }
    }

    fn model(mixer: bool) -> Model {
        let ex = example();
        let config = ModelConfig {
            d_model: 8,
            d_head: 4,
            d_ff: 6,
            mixer,
            ..ModelConfig::default()
        };
        Model::init(config, Vocab::build([&ex.input]), 3).unwrap()
    }

    #[test]
    fn loss_matches_scored_grids() {
        let ex = example();
        for mixer in [false, true] {
            let m = model(mixer);
            let (loss, _) = example_grad(&m, &ex, None).unwrap();
            let grids = m.score(&ex.id, &ex.input, None).unwrap();
            assert!((loss - circle_loss(&grids, &ex.gold)).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_vocabulary_rows_get_zero_gradient() {
        let ex = example();
        let mut m = model(true);
        let mut tokens = m.vocab.tokens().to_vec();
        tokens.push("zzz-unused".into());
        m.vocab = Vocab::from_tokens(tokens).unwrap();
        let enc = m.params.encoder.as_mut().unwrap();
        enc.embedding.push_row(ndarray::Array1::from_elem(8, 0.1).view()).unwrap();
        let (_, g) = example_grad(&m, &ex, None).unwrap();
        let last = g.encoder.unwrap().embedding.row(m.vocab.len() - 1).to_owned();
        assert!(last.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_examples_do_not_change_mean_gradient() {
        let ex = example();
        let m = model(true);
        let (l1, g1) = batch_grad(&m, &[&ex], None).unwrap();
        let (l2, g2) = batch_grad(&m, &[&ex, &ex], None).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ex = example();
        ex.gold = EditMatrix::new(1, 1);
        assert!(matches!(example_grad(&model(false), &ex, None), Err(Error::Shape(_))));
    }
}
