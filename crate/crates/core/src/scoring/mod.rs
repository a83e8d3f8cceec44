//! Edit-operation scoring network.
//!
//! ```text
//! tokens ──encoder──▶ h ──┬─ rows (query+history) ─▶ q = h·Wq + bq ─▶ R_i q ─┐
//!                         └─ cols (incomplete+END) ─▶ k = h·Wk + bk ─▶ R_j k ─┴─▶ s_ij = <R_i q, R_j k>
//! ```
//!
//! One independent `(Wq, bq, Wk, bk)` set per edit operation. Weights are
//! stored as `d_model × width` and applied to row vectors. The encoder is
//! either a trainable embedding table (token + role) with an optional
//! single-block mixer, or externally computed vectors read from a sidecar.

mod ctxvec;
mod loss;
mod network;
mod persist;
mod rope;
mod train;

use std::collections::{BTreeSet, HashMap};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{InputSequence, Role};
use crate::error::{Error, Result};
use crate::supervision::EditOp;

pub use ctxvec::{read_ctxvec, write_ctxvec, ImportedVectors};
pub use loss::{circle_loss, circle_loss_grad};
pub use network::{batch_grad, example_grad, TrainExample};
pub use persist::{load_model, save_model, Checkpoint, Dtype};
pub use rope::{rope_rotate, Rope};
pub use train::{train, AdamState, DevEval, EpochLog, TrainConfig, Trainer, TrainingLog};

/// Vocabulary entry reserved for unknown tokens.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    TrainableEmbedding,
    ImportedVectors,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: EncoderMode,
    pub d_model: usize,
    /// Width of one head; the projection width is `heads * d_head`.
    pub d_head: usize,
    pub heads: usize,
    pub mixer: bool,
    pub d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: EncoderMode::TrainableEmbedding,
            d_model: 64,
            d_head: 32,
            heads: 1,
            mixer: true,
            d_ff: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be positive and even".into()));
        }
        if self.d_head == 0 || self.d_head % 2 != 0 {
            return Err(Error::Config("d_head must be positive and even".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be positive".into()));
        }
        if self.mixer && self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive when the mixer is enabled".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.heads * self.d_head
    }

    fn has_mixer(&self) -> bool {
        self.mode == EncoderMode::TrainableEmbedding && self.mixer
    }
}

/// Token ↔ id map; id 0 is [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::ModelFormat(format!("vocabulary must start with {UNK_TOKEN}")));
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::ModelFormat("duplicate vocabulary entry".into()));
        }
        Ok(Vocab { tokens, index })
    }

    /// Sorted vocabulary of every token text in `inputs`.
    pub fn build<'a>(inputs: impl IntoIterator<Item = &'a InputSequence>) -> Self {
        let set: BTreeSet<&str> = inputs
            .into_iter()
            .flat_map(|i| i.tokens.iter().map(|t| t.text.as_str()))
            .filter(|t| *t != UNK_TOKEN)
            .collect();
        let tokens = std::iter::once(UNK_TOKEN)
            .chain(set)
            .map(str::to_owned)
            .collect();
        Vocab::from_tokens(tokens).expect("unique by construction")
    }

    pub fn empty() -> Self {
        Vocab::from_tokens(vec![UNK_TOKEN.to_owned()]).expect("valid")
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `|V| × d_model`.
    pub embedding: Array2<f64>,
    /// One row per [`Role`].
    pub role: Array2<f64>,
    pub mixer: Option<MixerParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpHead {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub substitute: OpHead,
    pub pre_insert: OpHead,
}

impl HeadParams {
    pub fn op(&self, op: EditOp) -> &OpHead {
        match op {
            EditOp::Substitute => &self.substitute,
            EditOp::PreInsert => &self.pre_insert,
        }
    }

    pub fn op_mut(&mut self, op: EditOp) -> &mut OpHead {
        match op {
            EditOp::Substitute => &mut self.substitute,
            EditOp::PreInsert => &mut self.pre_insert,
        }
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub encoder: Option<EncoderParams>,
    pub head: HeadParams,
}

impl Params {
    /// Tensors in canonical order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.push(("encoder.embedding".to_owned(), &e.embedding));
            out.push(("encoder.role".to_owned(), &e.role));
            if let Some(m) = &e.mixer {
                for (n, t) in [
                    ("wq", &m.wq),
                    ("wk", &m.wk),
                    ("wv", &m.wv),
                    ("wo", &m.wo),
                    ("w1", &m.w1),
                    ("b1", &m.b1),
                    ("w2", &m.w2),
                    ("b2", &m.b2),
                ] {
                    out.push((format!("encoder.mixer.{n}"), t));
                }
            }
        }
        for op in EditOp::ALL {
            let h = self.head.op(op);
            for (n, t) in [("wq", &h.wq), ("bq", &h.bq), ("wk", &h.wk), ("bk", &h.bk)] {
                out.push((format!("head.{}.{n}", op.code()), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.push(("encoder.embedding".to_owned(), &mut e.embedding));
            out.push(("encoder.role".to_owned(), &mut e.role));
            if let Some(m) = &mut e.mixer {
                for (n, t) in [
                    ("wq", &mut m.wq),
                    ("wk", &mut m.wk),
                    ("wv", &mut m.wv),
                    ("wo", &mut m.wo),
                    ("w1", &mut m.w1),
                    ("b1", &mut m.b1),
                    ("w2", &mut m.w2),
                    ("b2", &mut m.b2),
                ] {
                    out.push((format!("encoder.mixer.{n}"), t));
                }
            }
        }
        let head = &mut self.head;
        for (code, h) in [("S", &mut head.substitute), ("I", &mut head.pre_insert)] {
            for (n, t) in [("wq", &mut h.wq), ("bq", &mut h.bq), ("wk", &mut h.wk), ("bk", &mut h.bk)] {
                out.push((format!("head.{code}.{n}"), t));
            }
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            *t *= k;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Real-valued scores for one operation: context rows × (incomplete + sentinel).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub op: EditOp,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

impl Model {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, all drawn from `seed`.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let w = config.width();
        let a = 1.0 / (d as f64).sqrt();
        let encoder = match config.mode {
            EncoderMode::ImportedVectors => None,
            EncoderMode::TrainableEmbedding => {
                let embedding = uniform(&mut rng, (vocab.len(), d), a);
                let role = uniform(&mut rng, (Role::ALL.len(), d), a);
                let mixer = config.has_mixer().then(|| MixerParams {
                    wq: uniform(&mut rng, (d, d), a),
                    wk: uniform(&mut rng, (d, d), a),
                    wv: uniform(&mut rng, (d, d), a),
                    wo: uniform(&mut rng, (d, d), a),
                    w1: uniform(&mut rng, (d, config.d_ff), a),
                    b1: Array2::zeros((1, config.d_ff)),
                    w2: uniform(&mut rng, (config.d_ff, d), 1.0 / (config.d_ff as f64).sqrt()),
                    b2: Array2::zeros((1, d)),
                });
                Some(EncoderParams {
                    embedding,
                    role,
                    mixer,
                })
            }
        };
        let op_head = |rng: &mut ChaCha8Rng| OpHead {
            wq: uniform(rng, (d, w), a),
            bq: Array2::zeros((1, w)),
            wk: uniform(rng, (d, w), a),
            bk: Array2::zeros((1, w)),
        };
        let head = HeadParams {
            substitute: op_head(&mut rng),
            pre_insert: op_head(&mut rng),
        };
        Ok(Model {
            config,
            vocab,
            params: Params { encoder, head },
        })
    }

    /// All parameters zero: every score is 0.
    pub fn zeros(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        let mut m = Self::init(config, vocab, 0)?;
        m.params = m.params.zeros_like();
        Ok(m)
    }

    pub fn rope(&self) -> Rope {
        Rope::new(self.config.d_head)
    }

    /// One `d_model` vector per input position, sentinel included.
    pub fn encode(&self, example_id: &str, input: &InputSequence, vectors: Option<&ImportedVectors>) -> Result<Array2<f64>> {
        network::encode(self, example_id, input, vectors)
    }

    /// Score grids for both operations, Substitute first.
    pub fn score(&self, example_id: &str, input: &InputSequence, vectors: Option<&ImportedVectors>) -> Result<Vec<ScoreGrid>> {
        let h = self.encode(example_id, input, vectors)?;
        let rope = self.rope();
        let rows = h.slice(s![..input.n_rows(), ..]).to_owned();
        let cols = h.slice(s![input.incomplete_range.start..=input.sentinel_index, ..]).to_owned();
        let (row_pos, col_pos) = network::positions(input);
        Ok(EditOp::ALL
            .iter()
            .map(|&op| {
                let (q, k) = project(&rows, &cols, self.params.head.op(op));
                score_grid(&q, &k, &row_pos, &col_pos, op, &rope)
            })
            .collect())
    }
}

/// `q = rows·Wq + bq`, `k = cols·Wk + bk`.
pub fn project(rows: &Array2<f64>, cols: &Array2<f64>, head: &OpHead) -> (Array2<f64>, Array2<f64>) {
    (rows.dot(&head.wq) + &head.bq, cols.dot(&head.wk) + &head.bk)
}

/// `s_ij = <R_{pos_i} q_i, R_{pos_j} k_j>`.
pub fn score_grid(
    q: &Array2<f64>,
    k: &Array2<f64>,
    row_positions: &[usize],
    col_positions: &[usize],
    op: EditOp,
    rope: &Rope,
) -> ScoreGrid {
    let mut qr = q.clone();
    let mut kr = k.clone();
    rope.rotate_rows(&mut qr, row_positions, 1.0);
    rope.rotate_rows(&mut kr, col_positions, 1.0);
    ScoreGrid {
        op,
        values: qr.dot(&kr.t()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_input_sequence, Dialogue, TokenizerMode};
    use crate::querygen::QueryTemplate;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn head(w: Array2<f64>, b: Array2<f64>) -> OpHead {
        OpHead {
            wq: w.clone(),
            bq: b.clone(),
            wk: w,
            bk: b,
        }
    }

    #[test]
    fn identity_projection() {
        let h = array![[1.0, 2.0], [3.0, -4.0]];
        let (q, k) = project(&h, &h, &head(Array2::eye(2), Array2::zeros((1, 2))));
        assert_eq!(q, h);
        assert_eq!(k, h);
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let h = Array2::zeros((3, 2));
        let (q, _) = project(&h, &h, &head(array![[1.0, 2.0], [3.0, 4.0]], array![[0.5, -1.0]]));
        for row in q.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0]);
        }
    }

    #[test]
    fn hand_matrix_arithmetic() {
        // column convention W=[[1,2],[3,4]] is row convention W^T
        let w = array![[1.0, 2.0], [3.0, 4.0]].reversed_axes();
        let (q, _) = project(&array![[1.0, 1.0]], &array![[1.0, 1.0]], &head(w, array![[1.0, 1.0]]));
        assert_eq!(q, array![[4.0, 8.0]]);
    }

    #[test]
    fn equal_positions_give_squared_norm() {
        let rope = Rope::new(4);
        let q = array![[0.3, -1.0, 2.0, 0.7]];
        let g = score_grid(&q, &q, &[9], &[9], EditOp::PreInsert, &rope);
        assert_abs_diff_eq!(g.values[[0, 0]], q.iter().map(|x| x * x).sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn zero_queries_give_zero_grid() {
        let rope = Rope::new(2);
        let q = Array2::zeros((3, 2));
        let k = array![[1.0, 2.0], [3.0, 4.0]];
        let g = score_grid(&q, &k, &[0, 1, 2], &[3, 4], EditOp::Substitute, &rope);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relative_identity_and_shift_equivariance() {
        let rope = Rope::new(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = uniform(&mut rng, (4, 8), 1.0);
        let k = uniform(&mut rng, (3, 8), 1.0);
        let rp = [0, 1, 2, 3];
        let cp = [10, 11, 12];
        let g = score_grid(&q, &k, &rp, &cp, EditOp::PreInsert, &rope);
        let shifted = score_grid(
            &q,
            &k,
            &rp.map(|p| p + 77),
            &cp.map(|p| p + 77),
            EditOp::PreInsert,
            &rope,
        );
        for i in 0..4 {
            for j in 0..3 {
                let mut kj = k.row(j).to_vec();
                rope.rotate(&mut kj, cp[j] as f64 - rp[i] as f64);
                let rel: f64 = q.row(i).iter().zip(&kj).map(|(a, b)| a * b).sum();
                assert_abs_diff_eq!(g.values[[i, j]], rel, epsilon = 1e-9);
                assert_abs_diff_eq!(g.values[[i, j]], shifted.values[[i, j]], epsilon = 1e-9);
            }
        }
    }

    fn repeated_token_input() -> InputSequence {
        let d = Dialogue::from_text("r", TokenizerMode::WhitespacePunct, &["a b a c"], "a d", None);
        build_input_sequence(&QueryTemplate::plain(d.incomplete.clone()), &d)
    }

    #[test]
    fn encode_shape() {
        let input = repeated_token_input();
        let config = ModelConfig {
            d_model: 32,
            ..ModelConfig::default()
        };
        let m = Model::init(config, Vocab::build([&input]), 1).unwrap();
        let h = m.encode("r", &input, None).unwrap();
        assert_eq!(h.dim(), (input.len(), 32));
    }

    #[test]
    fn lookup_without_mixer_is_context_free() {
        let input = repeated_token_input();
        let config = ModelConfig {
            d_model: 8,
            mixer: false,
            ..ModelConfig::default()
        };
        let m = Model::init(config, Vocab::build([&input]), 1).unwrap();
        let h = m.encode("r", &input, None).unwrap();
        // history "a" at 2 and 4
        assert_eq!(h.row(2), h.row(4));
    }

    #[test]
    fn mixer_makes_vectors_contextual() {
        let input = repeated_token_input();
        let config = ModelConfig {
            d_model: 8,
            d_ff: 16,
            ..ModelConfig::default()
        };
        let m = Model::init(config, Vocab::build([&input]), 1).unwrap();
        let h = m.encode("r", &input, None).unwrap();
        // history "a" at 2 and 4: same token and role, different context
        assert_ne!(h.row(2), h.row(4));
    }

    #[test]
    fn unknown_tokens_map_to_reserved_id() {
        let v = Vocab::build([&repeated_token_input()]);
        assert_eq!(v.id("zzz"), 0);
        assert_eq!(v.tokens()[0], UNK_TOKEN);
        assert!(v.id("a") > 0);
    }
}
