use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::model::ModelConfig;
use crate::numerics::Matrix;

pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    /// Fused query/key/value projection, `d_model x 3*d_model`.
    pub w_qkv: Matrix,
    pub b_qkv: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
    pub w_fc: Matrix,
    pub b_fc: Matrix,
    pub w_proj: Matrix,
    pub b_proj: Matrix,
}

impl LayerWeights {
    const NAMES: [&'static str; 12] = [
        "ln1.gamma",
        "ln1.beta",
        "attn.w_qkv",
        "attn.b_qkv",
        "attn.w_out",
        "attn.b_out",
        "ln2.gamma",
        "ln2.beta",
        "mlp.w_fc",
        "mlp.b_fc",
        "mlp.w_proj",
        "mlp.b_proj",
    ];

    fn zeros(d: usize, ff: usize) -> Self {
        Self {
            ln1_gamma: Matrix::zeros(1, d),
            ln1_beta: Matrix::zeros(1, d),
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: Matrix::zeros(1, 3 * d),
            w_out: Matrix::zeros(d, d),
            b_out: Matrix::zeros(1, d),
            ln2_gamma: Matrix::zeros(1, d),
            ln2_beta: Matrix::zeros(1, d),
            w_fc: Matrix::zeros(d, ff),
            b_fc: Matrix::zeros(1, ff),
            w_proj: Matrix::zeros(ff, d),
            b_proj: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_out,
            &self.b_out,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w_fc,
            &self.b_fc,
            &self.w_proj,
            &self.b_proj,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.w_fc,
            &mut self.b_fc,
            &mut self.w_proj,
            &mut self.b_proj,
        ]
    }
}

/// All trainable parameters of the decoder. The same layout doubles as the
/// gradient accumulator during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerWeights>,
    pub lnf_gamma: Matrix,
    pub lnf_beta: Matrix,
    /// `d_model x vocab_size`
    pub lm_head: Matrix,
}

/// Deterministic initialization: N(0, 0.02) for projections and embeddings,
/// ones for norm scales, zeros for every bias and norm offset.
pub fn init_model(config: &ModelConfig) -> Result<TransformerWeights> {
    config.validate()?;
    let mut w = TransformerWeights::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let mut fill = |m: &mut Matrix| {
        for v in m.data_mut() {
            *v = normal.sample(&mut rng);
        }
    };
    fill(&mut w.tok_emb);
    fill(&mut w.pos_emb);
    for layer in &mut w.layers {
        fill(&mut layer.w_qkv);
        fill(&mut layer.w_out);
        fill(&mut layer.w_fc);
        fill(&mut layer.w_proj);
        layer.ln1_gamma.fill(1.0);
        layer.ln2_gamma.fill(1.0);
    }
    w.lnf_gamma.fill(1.0);
    fill(&mut w.lm_head);
    Ok(w)
}

impl TransformerWeights {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            config: config.clone(),
            tok_emb: Matrix::zeros(config.vocab_size, d),
            pos_emb: Matrix::zeros(config.max_positions, d),
            layers: (0..config.n_layers)
                .map(|_| LayerWeights::zeros(d, config.d_ff))
                .collect(),
            lnf_gamma: Matrix::zeros(1, d),
            lnf_beta: Matrix::zeros(1, d),
            lm_head: Matrix::zeros(d, config.vocab_size),
        }
    }

    /// Tensors with stable names, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LayerWeights::NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("lnf.gamma".into(), &self.lnf_gamma));
        out.push(("lnf.beta".into(), &self.lnf_beta));
        out.push(("lm_head".into(), &self.lm_head));
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.lnf_gamma);
        out.push(&mut self.lnf_beta);
        out.push(&mut self.lm_head);
        out
    }

    /// Rebuilds weights from named tensors, checking every name and shape.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        config.validate()?;
        let mut w = Self::zeros(config);
        let expected: Vec<(String, (usize, usize))> =
            w.named_tensors().into_iter().map(|(n, m)| (n, m.shape())).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((slot, (name, shape)), (got_name, m)) in w.tensors_mut().into_iter().zip(expected).zip(tensors) {
            if name != got_name {
                return Err(Error::Config(format!(
                    "tensor `{got_name}` where `{name}` was expected"
                )));
            }
            if m.shape() != shape {
                return Err(dim_err(
                    "TransformerWeights::from_named",
                    format!("{name}: {:?} vs {:?}", m.shape(), shape),
                ));
            }
            *slot = m;
        }
        Ok(w)
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, m) in self.named_tensors() {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(dim_err(
                "TransformerWeights::load_flat",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &TransformerWeights) -> Result<()> {
        let others: Vec<&Matrix> = other.named_tensors().into_iter().map(|(_, m)| m).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(others) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn zero(&mut self) {
        for m in self.tensors_mut() {
            m.fill(0.0);
        }
    }
}
