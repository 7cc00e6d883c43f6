//! A small frozen text encoder standing in for a pretrained text tower.
//!
//! Architecture: hashed bag-of-tokens -> mean-pooled token embeddings ->
//! two linear layers with GELU between -> layer norm -> L2 normalize. The
//! two linear layers are the adapted ones; everything (including the norm's
//! affine parameters) is frozen and fully determined by the construction
//! seed. Any frozen differentiable text-to-embedding map would do; this one
//! is cheap and deterministic.

use crate::encoder::adapter::TaskVector;
use crate::encoder::prompt::{tokenize, ClassPrompt};
use crate::error::{Error, Result};
use crate::numerics::graph::{Activation, Graph, NodeId};
use crate::numerics::param::ParamSet;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{l2_normalize, EmbeddingVector, Tensor1D, Tensor2D};
use serde::{Deserialize, Serialize};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Dimensions and seed of a [`ReferenceEncoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub seed: u64,
    pub vocab: usize,
    pub d_tok: usize,
    pub hidden: usize,
    pub d_out: usize,
    /// Which of the two linear layers adapters displace (0-based).
    pub adapted_layers: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            seed: 17,
            vocab: 512,
            d_tok: 64,
            hidden: 128,
            d_out: 64,
            adapted_layers: vec![0, 1],
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.d_tok == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::contract("encoder dimensions must be positive"));
        }
        if self.adapted_layers.is_empty() {
            return Err(Error::contract("at least one layer must be adaptable"));
        }
        for &l in &self.adapted_layers {
            if l > 1 {
                return Err(Error::contract(format!("no encoder layer {l} to adapt")));
            }
        }
        let mut sorted = self.adapted_layers.clone();
        sorted.dedup();
        if sorted.len() != self.adapted_layers.len() {
            return Err(Error::contract("duplicate adapted layer index"));
        }
        Ok(())
    }
}

/// Frozen stand-in text encoder.
#[derive(Clone, Debug)]
pub struct ReferenceEncoder {
    config: EncoderConfig,
    params: ParamSet,
    fingerprint: u64,
}

impl ReferenceEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed).derive("encoder-init", 0);
        let mut params = ParamSet::new();
        let embed = Tensor2D::random_normal(config.vocab, config.d_tok, 1.0, &mut rng);
        params.insert("embed", embed, false)?;
        let w0 = Tensor2D::random_normal(
            config.hidden,
            config.d_tok,
            (1.0 / config.d_tok as f64).sqrt(),
            &mut rng,
        );
        params.insert("layer0.w", w0, false)?;
        params.insert("layer0.b", Tensor1D::zeros(config.hidden), false)?;
        let w1 = Tensor2D::random_normal(
            config.d_out,
            config.hidden,
            (1.0 / config.hidden as f64).sqrt(),
            &mut rng,
        );
        params.insert("layer1.w", w1, false)?;
        params.insert("layer1.b", Tensor1D::zeros(config.d_out), false)?;
        params.insert("ln.gamma", Tensor1D::filled(config.d_out, 1.0), false)?;
        params.insert("ln.beta", Tensor1D::zeros(config.d_out), false)?;
        let fingerprint = params.fingerprint();
        Ok(ReferenceEncoder {
            config,
            params,
            fingerprint,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d_out
    }

    /// Content hash of the frozen parameters; used to pair hubs with the
    /// encoder they were built against.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// (d_out, d_in) of each adapted layer, in config order.
    pub fn adapted_shapes(&self) -> Vec<(usize, usize)> {
        self.config
            .adapted_layers
            .iter()
            .map(|&l| self.layer_shape(l))
            .collect()
    }

    fn layer_shape(&self, layer: usize) -> (usize, usize) {
        match layer {
            0 => (self.config.hidden, self.config.d_tok),
            _ => (self.config.d_out, self.config.hidden),
        }
    }

    /// Mean-pooled token embedding of a rendered prompt.
    pub fn pooled_input(&self, text: &str) -> Result<Tensor1D> {
        let tokens = tokenize(text, self.config.vocab);
        if tokens.is_empty() {
            return Err(Error::contract("prompt tokenized to nothing"));
        }
        let embed = self.params.matrix("embed")?;
        let mut pooled = vec![0.0; self.config.d_tok];
        for &tok in &tokens {
            for (p, &e) in pooled.iter_mut().zip(embed.row(tok)) {
                *p += e;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
        Tensor1D::from_vec(pooled)
    }

    /// Effective weight of a linear layer under an optional displacement.
    fn effective_weight(
        &self,
        layer: usize,
        tv: Option<&TaskVector>,
        alpha: f64,
    ) -> Result<Tensor2D> {
        let base = self.params.matrix(&format!("layer{layer}.w"))?;
        let (tv, slot) = match (tv, self.adapted_slot(layer)) {
            (Some(tv), Some(slot)) if alpha != 0.0 => (tv, slot),
            _ => return Ok(base.clone()),
        };
        let delta = tv.layer(slot);
        if delta.shape() != base.shape() {
            return Err(Error::contract(format!(
                "task vector layer {slot} shape {:?} does not match encoder layer {layer} {:?}",
                delta.shape(),
                base.shape()
            )));
        }
        base.add(&delta.scale(alpha))
    }

    /// Position of an encoder layer in the adapted-layer list, if adapted.
    fn adapted_slot(&self, layer: usize) -> Option<usize> {
        self.config.adapted_layers.iter().position(|&l| l == layer)
    }

    fn check_task_vector(&self, tv: &TaskVector) -> Result<()> {
        if tv.num_layers() != self.config.adapted_layers.len() {
            return Err(Error::contract(format!(
                "task vector has {} layers, encoder adapts {}",
                tv.num_layers(),
                self.config.adapted_layers.len()
            )));
        }
        Ok(())
    }

    /// Pre-normalization activations (after layer norm, before the final L2
    /// normalize) of a forward pass with weights theta0 + alpha * tau.
    pub fn encode_prenorm(
        &self,
        prompt: &ClassPrompt,
        tv: Option<&TaskVector>,
        alpha: f64,
    ) -> Result<Tensor1D> {
        self.encode_text_prenorm(&prompt.rendered()?, tv, alpha)
    }

    pub(crate) fn encode_text_prenorm(
        &self,
        text: &str,
        tv: Option<&TaskVector>,
        alpha: f64,
    ) -> Result<Tensor1D> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::contract(format!("alpha {alpha} outside [0, 1]")));
        }
        if let Some(tv) = tv {
            self.check_task_vector(tv)?;
        }
        let x = self.pooled_input(text)?;
        let w0 = self.effective_weight(0, tv, alpha)?;
        let h = w0.matvec(&x)?.add(self.params.vector("layer0.b")?)?;
        let a = Tensor1D::from_vec(
            h.as_slice()
                .iter()
                .map(|&v| Activation::Gelu.apply(v))
                .collect(),
        )?;
        let w1 = self.effective_weight(1, tv, alpha)?;
        let o = w1.matvec(&a)?.add(self.params.vector("layer1.b")?)?;
        layer_norm_frozen(
            &o,
            self.params.vector("ln.gamma")?,
            self.params.vector("ln.beta")?,
        )
    }

    /// Unit-norm text embedding with effective weights theta0 + alpha * tau.
    /// With `tv = None` or `alpha = 0` this is exactly the zero-shot
    /// embedding: the displacement math is skipped entirely.
    pub fn encode(
        &self,
        prompt: &ClassPrompt,
        tv: Option<&TaskVector>,
        alpha: f64,
    ) -> Result<EmbeddingVector> {
        l2_normalize(&self.encode_prenorm(prompt, tv, alpha)?)
    }

    /// [`ReferenceEncoder::encode`] over raw prompt text.
    pub fn encode_text(
        &self,
        text: &str,
        tv: Option<&TaskVector>,
        alpha: f64,
    ) -> Result<EmbeddingVector> {
        l2_normalize(&self.encode_text_prenorm(text, tv, alpha)?)
    }

    /// Zero-shot embedding of a prompt (no adapter).
    pub fn zero_shot(&self, prompt: &ClassPrompt) -> Result<EmbeddingVector> {
        self.encode(prompt, None, 0.0)
    }

    /// Record the encode forward pass on a gradient tape, with per-layer
    /// displacement nodes supplied by a staged adapter. Training always runs
    /// at full displacement (alpha = 1); smoothing is an inference step.
    ///
    /// Returns the node holding the unit-norm text embedding.
    pub fn stage_encode(
        &self,
        graph: &mut Graph,
        pooled: &Tensor1D,
        deltas: &[NodeId],
    ) -> Result<NodeId> {
        if deltas.len() != self.config.adapted_layers.len() {
            return Err(Error::contract(format!(
                "{} displacement nodes for {} adapted layers",
                deltas.len(),
                self.config.adapted_layers.len()
            )));
        }
        let x = graph.vector(pooled.clone());

        let w0 = graph.matrix(self.params.matrix("layer0.w")?.clone());
        let w0_eff = match self.adapted_slot(0) {
            Some(slot) => graph.mat_add(w0, deltas[slot])?,
            None => w0,
        };
        let b0 = graph.vector(self.params.vector("layer0.b")?.clone());
        let h = graph.mat_vec(w0_eff, x)?;
        let h = graph.vec_add(h, b0)?;
        let a = graph.activation(h, Activation::Gelu)?;

        let w1 = graph.matrix(self.params.matrix("layer1.w")?.clone());
        let w1_eff = match self.adapted_slot(1) {
            Some(slot) => graph.mat_add(w1, deltas[slot])?,
            None => w1,
        };
        let b1 = graph.vector(self.params.vector("layer1.b")?.clone());
        let o = graph.mat_vec(w1_eff, a)?;
        let o = graph.vec_add(o, b1)?;

        let gamma = graph.vector(self.params.vector("ln.gamma")?.clone());
        let beta = graph.vector(self.params.vector("ln.beta")?.clone());
        let ln = graph.layer_norm(o, gamma, beta, LAYER_NORM_EPS)?;
        graph.l2_normalize(ln)
    }
}

fn layer_norm_frozen(x: &Tensor1D, gamma: &Tensor1D, beta: &Tensor1D) -> Result<Tensor1D> {
    let n = x.len() as f64;
    let mean = x.as_slice().iter().sum::<f64>() / n;
    let var = x
        .as_slice()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let s = (var + LAYER_NORM_EPS).sqrt();
    Tensor1D::from_vec(
        x.as_slice()
            .iter()
            .zip(gamma.as_slice())
            .zip(beta.as_slice())
            .map(|((&xi, &gi), &bi)| gi * (xi - mean) / s + bi)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::adapter::{combine, AdapterSpace, AdapterVariant};
    use crate::ids::ClassId;
    use approx::assert_relative_eq;

    fn small_encoder() -> ReferenceEncoder {
        ReferenceEncoder::new(EncoderConfig {
            seed: 5,
            vocab: 64,
            d_tok: 8,
            hidden: 12,
            d_out: 8,
            adapted_layers: vec![0, 1],
        })
        .unwrap()
    }

    fn randomized_adapter(space: &AdapterSpace, seed: u64) -> crate::encoder::AdapterModule {
        let mut adapter = space.new_adapter(ClassId(0), seed);
        let mut rng = SeededRng::new(seed).derive("fill", 0);
        for (_, p) in adapter.params_mut().iter_mut() {
            for x in p.value.elems_mut() {
                *x = 0.2 * rng.normal();
            }
        }
        adapter
    }

    #[test]
    fn same_seed_same_encoder() {
        let a = small_encoder();
        let b = small_encoder();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ReferenceEncoder::new(EncoderConfig {
            seed: 6,
            ..a.config().clone()
        })
        .unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn none_and_alpha_zero_recover_zero_shot_exactly() {
        let enc = small_encoder();
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 11);
        let tv = space.materialize(&adapter).unwrap();
        let prompt = ClassPrompt::canonical(ClassId(0), "ocelot");

        let zero_shot = enc.encode(&prompt, None, 0.7).unwrap();
        let with_zero_alpha = enc.encode(&prompt, Some(&tv), 0.0).unwrap();
        assert_eq!(zero_shot.as_slice(), with_zero_alpha.as_slice());

        // Pre-normalization activations agree exactly too.
        let p1 = enc.encode_prenorm(&prompt, None, 0.0).unwrap();
        let p2 = enc.encode_prenorm(&prompt, Some(&tv), 0.0).unwrap();
        assert_eq!(p1.as_slice(), p2.as_slice());
    }

    #[test]
    fn alpha_one_matches_manual_weight_materialization() {
        let enc = small_encoder();
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 3);
        let tv = space.materialize(&adapter).unwrap();
        let prompt = ClassPrompt::canonical(ClassId(0), "heron");

        let encoded = enc.encode(&prompt, Some(&tv), 1.0).unwrap();

        // Oracle: rebuild the forward pass with displaced weight copies.
        let x = enc.pooled_input(&prompt.rendered().unwrap()).unwrap();
        let w0 = enc.params().matrix("layer0.w").unwrap().add(tv.layer(0)).unwrap();
        let h = w0.matvec(&x).unwrap();
        let a = Tensor1D::from_vec(
            h.as_slice().iter().map(|&v| Activation::Gelu.apply(v)).collect(),
        )
        .unwrap();
        let w1 = enc.params().matrix("layer1.w").unwrap().add(tv.layer(1)).unwrap();
        let o = w1.matvec(&a).unwrap();
        let ln = layer_norm_frozen(
            &o,
            enc.params().vector("ln.gamma").unwrap(),
            enc.params().vector("ln.beta").unwrap(),
        )
        .unwrap();
        let oracle = l2_normalize(&ln).unwrap();

        for (a, b) in encoded.as_slice().iter().zip(oracle.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn alpha_scaling_commutes_with_task_vector_scaling() {
        let enc = small_encoder();
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 21);
        let tv = space.materialize(&adapter).unwrap();
        let prompt = ClassPrompt::canonical(ClassId(0), "marsh wren");

        for alpha in [0.25, 0.5, 0.9] {
            let smoothed = enc.encode(&prompt, Some(&tv), alpha).unwrap();
            let prescaled = enc.encode(&prompt, Some(&tv.scale(alpha)), 1.0).unwrap();
            for (a, b) in smoothed.as_slice().iter().zip(prescaled.as_slice()) {
                assert_relative_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn merge_identity_is_bitwise_at_task_vector_level() {
        let enc = small_encoder();
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 8);
        let tv = space.materialize(&adapter).unwrap();
        let merged = combine(&[(tv.clone(), 1.0)]).unwrap();
        assert_eq!(merged.layers(), tv.layers());
        let prompt = ClassPrompt::canonical(ClassId(0), "kestrel");
        let a = enc.encode(&prompt, Some(&tv), 1.0).unwrap();
        let b = enc.encode(&prompt, Some(&merged), 1.0).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn staged_encode_agrees_with_plain_encode() {
        let enc = small_encoder();
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 15);
        let tv = space.materialize(&adapter).unwrap();
        let prompt = ClassPrompt::canonical(ClassId(0), "gannet");

        let plain = enc.encode(&prompt, Some(&tv), 1.0).unwrap();

        let mut graph = Graph::new();
        let (_binding, deltas) = space.stage_on_graph(&mut graph, &adapter).unwrap();
        let pooled = enc.pooled_input(&prompt.rendered().unwrap()).unwrap();
        let out = enc.stage_encode(&mut graph, &pooled, &deltas).unwrap();
        let staged = graph.vector_value(out).unwrap();
        for (a, b) in plain.as_slice().iter().zip(staged.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_adapted_layer_config_works() {
        let enc = ReferenceEncoder::new(EncoderConfig {
            seed: 5,
            vocab: 64,
            d_tok: 8,
            hidden: 12,
            d_out: 8,
            adapted_layers: vec![1],
        })
        .unwrap();
        assert_eq!(enc.adapted_shapes(), vec![(8, 12)]);
        let space = AdapterSpace::new(AdapterVariant::Lora, 2, enc.adapted_shapes(), 1).unwrap();
        let adapter = randomized_adapter(&space, 2);
        let tv = space.materialize(&adapter).unwrap();
        let prompt = ClassPrompt::canonical(ClassId(0), "plover");
        let a = enc.encode(&prompt, Some(&tv), 1.0).unwrap();
        assert_eq!(a.dim(), 8);
    }
}
