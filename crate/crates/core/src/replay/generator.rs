//! Per-task class-conditioned diffusion generators over embedding space.
//!
//! Each generator is an epsilon-prediction MLP conditioned on a learned
//! class embedding and a sinusoidal timestep embedding, trained with the
//! usual forward-noising MSE and sampled with ancestral denoising. Because
//! the features live in a low-dimensional embedding space, a plain MLP is
//! enough.

use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ids::{ClassId, TaskId};
use crate::numerics::graph::{Activation, Graph};
use crate::numerics::mlp::{forward_mlp_batch, forward_mlp_on_graph, MlpSpec};
use crate::numerics::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::numerics::param::ParamSet;
use crate::numerics::rng::{derive_seed, SeededRng};
use crate::numerics::tensor::{l2_normalize, EmbeddingVector, Tensor1D, Tensor2D};
use crate::replay::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use std::path::Path;

const GENERATOR_MAGIC: &[u8; 4] = b"MODG";
const GENERATOR_VERSION: u32 = 1;

/// Generator architecture and training hyperparameters. The defaults are the
/// published recipe: an eight-layer, 256-wide SELU MLP trained with AdamW at
/// lr 1e-3 and weight decay 1e-2 (iteration count scaled down to desk size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub hidden: usize,
    pub d_cond: usize,
    pub d_time: usize,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub activation: Activation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            layers: 8,
            hidden: 256,
            d_cond: 16,
            d_time: 16,
            iters: 2000,
            batch: 64,
            lr: 1e-3,
            weight_decay: 1e-2,
            activation: Activation::Selu,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.d_cond == 0 || self.d_time == 0 {
            return Err(Error::contract("generator dimensions must be positive"));
        }
        if self.d_time % 2 != 0 {
            return Err(Error::contract("d_time must be even (sin/cos pairs)"));
        }
        if self.batch == 0 {
            return Err(Error::contract("generator batch size must be positive"));
        }
        Ok(())
    }
}

/// Sinusoidal timestep embedding of dimension `d_time`.
pub fn time_embedding(t: usize, d_time: usize) -> Tensor1D {
    let half = d_time / 2;
    let mut data = vec![0.0; d_time];
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        data[i] = (t as f64 * freq).sin();
        data[half + i] = (t as f64 * freq).cos();
    }
    Tensor1D::from_vec(data).unwrap()
}

/// Forward-noising closed form: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn q_sample(x0: &[f64], eps: &[f64], schedule: &NoiseSchedule, t: usize) -> Vec<f64> {
    let abar = schedule.alpha_bar(t);
    let (c0, c1) = (abar.sqrt(), (1.0 - abar).sqrt());
    x0.iter().zip(eps).map(|(&x, &e)| c0 * x + c1 * e).collect()
}

/// Result of [`train_generator`]: the trained generator and the per-iteration
/// loss curve.
#[derive(Debug)]
pub struct GeneratorTraining {
    pub generator: DiffusionGenerator,
    pub losses: Vec<f64>,
}

/// Trained epsilon-prediction model for one task.
#[derive(Clone, Debug)]
pub struct DiffusionGenerator {
    params: ParamSet,
    class_ids: Vec<ClassId>,
    schedule: NoiseSchedule,
    config: GeneratorConfig,
    task_id: TaskId,
    dim: usize,
    seed: u64,
    final_loss: Option<f64>,
}

impl DiffusionGenerator {
    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Loss at the last training iteration, if any iterations ran.
    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    fn class_index(&self, class_id: ClassId) -> Result<usize> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .ok_or(Error::UnknownClass(class_id))
    }

    /// Predicted noise for a batch of states at a shared timestep and class.
    fn predict_eps(&self, x: &Tensor2D, class_idx: usize, t: usize) -> Result<Tensor2D> {
        let rows = x.rows();
        let table = self.params.matrix("class_embed")?;
        let t_emb = time_embedding(t, self.config.d_time);
        let width = self.dim + self.config.d_cond + self.config.d_time;
        let mut input = Tensor2D::zeros(rows, width);
        for r in 0..rows {
            let row = input.row_mut(r);
            row[..self.dim].copy_from_slice(x.row(r));
            row[self.dim..self.dim + self.config.d_cond].copy_from_slice(table.row(class_idx));
            row[self.dim + self.config.d_cond..].copy_from_slice(t_emb.as_slice());
        }
        forward_mlp_batch(&self.params, &input, self.config.activation)
    }

    /// Ancestral sampling: n unit-norm embeddings of `class_id`,
    /// deterministic in `seed`. Each trajectory draws from its own derived
    /// substream, so results do not depend on internal chunking.
    pub fn sample(&self, class_id: ClassId, n: usize, seed: u64) -> Result<Vec<EmbeddingVector>> {
        self.sample_range(class_id, 0, n, seed)
    }

    /// Trajectories `[first, first + n)` of the stream [`Self::sample`]
    /// produces: randomness is keyed by global trajectory index, so ranges
    /// compose exactly.
    pub fn sample_range(
        &self,
        class_id: ClassId,
        first: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<EmbeddingVector>> {
        let class_idx = self.class_index(class_id)?;
        let mut out = Vec::with_capacity(n);
        let chunk_size = 64;
        let steps = self.schedule.steps();
        let mut start = 0;
        while start < n {
            let len = chunk_size.min(n - start);
            let mut rngs: Vec<SeededRng> = (0..len)
                .map(|i| SeededRng::new(derive_seed(seed, "traj", (first + start + i) as u64)))
                .collect();
            let mut x = Tensor2D::zeros(len, self.dim);
            for (r, rng) in rngs.iter_mut().enumerate() {
                rng.fill_normal(x.row_mut(r));
            }
            for t in (1..=steps).rev() {
                let eps_hat = self.predict_eps(&x, class_idx, t)?;
                let beta = self.schedule.beta(t);
                let alpha = self.schedule.alpha(t);
                let abar = self.schedule.alpha_bar(t);
                let coef = beta / (1.0 - abar).sqrt();
                let inv_sqrt_alpha = 1.0 / alpha.sqrt();
                let sigma = beta.sqrt();
                for r in 0..len {
                    let eh = eps_hat.row(r);
                    let row = x.row_mut(r);
                    for (xi, &e) in row.iter_mut().zip(eh) {
                        *xi = (*xi - coef * e) * inv_sqrt_alpha;
                    }
                    if t > 1 {
                        let rng = &mut rngs[r];
                        for xi in row.iter_mut() {
                            *xi += sigma * rng.normal();
                        }
                    }
                }
            }
            for r in 0..len {
                let row = Tensor1D::from_vec(x.row(r).to_vec())?;
                out.push(l2_normalize(&row)?);
            }
            start += len;
        }
        Ok(out)
    }

    /// Serialize to the shared container format (float32 payloads).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(GENERATOR_MAGIC, GENERATOR_VERSION);
        w.u32(self.task_id.0);
        w.u64(self.seed);
        w.u32(self.dim as u32);
        w.u32(self.config.layers as u32);
        w.u32(self.config.hidden as u32);
        w.u32(self.config.d_cond as u32);
        w.u32(self.config.d_time as u32);
        w.u8(match self.config.activation {
            Activation::Selu => 0,
            Activation::Gelu => 1,
            Activation::Tanh => 2,
        });
        w.u32(self.schedule.steps() as u32);
        w.f32_slice(self.schedule.betas());
        w.u32(self.class_ids.len() as u32);
        for c in &self.class_ids {
            w.u32(c.0);
        }
        w.matrix(self.params.matrix("class_embed")?);
        for l in 0..self.config.layers {
            w.matrix(self.params.matrix(&format!("layer{l}.w"))?);
            w.vector(self.params.vector(&format!("layer{l}.b"))?);
        }
        std::fs::write(path, w.into_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader::new(&bytes, "generator file");
        r.expect_magic(GENERATOR_MAGIC)?;
        r.expect_version(GENERATOR_VERSION)?;
        let task_id = TaskId(r.u32()?);
        let seed = r.u64()?;
        let dim = r.u32()? as usize;
        let layers = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let d_cond = r.u32()? as usize;
        let d_time = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Selu,
            1 => Activation::Gelu,
            2 => Activation::Tanh,
            other => {
                return Err(Error::Format(format!(
                    "generator file: unknown activation tag {other}"
                )))
            }
        };
        let steps = r.u32()? as usize;
        let betas = r.f32_vec(steps)?;
        let schedule = NoiseSchedule::from_betas(betas)
            .map_err(|e| Error::Format(format!("generator file: {e}")))?;
        let n_classes = r.u32()? as usize;
        let class_ids: Vec<ClassId> = (0..n_classes)
            .map(|_| r.u32().map(ClassId))
            .collect::<Result<_>>()?;
        let mut params = ParamSet::new();
        params.insert("class_embed", r.matrix()?, true)?;
        for l in 0..layers {
            params.insert(format!("layer{l}.w"), r.matrix()?, true)?;
            params.insert(format!("layer{l}.b"), r.vector()?, true)?;
        }
        r.finish()?;
        let config = GeneratorConfig {
            layers,
            hidden,
            d_cond,
            d_time,
            activation,
            ..GeneratorConfig::default()
        };
        Ok(DiffusionGenerator {
            params,
            class_ids,
            schedule,
            config,
            task_id,
            dim,
            seed,
            final_loss: None,
        })
    }
}

/// Train a generator on one task's features.
///
/// Every iteration draws a batch of (feature, class) pairs, noises them to a
/// uniform random timestep with the closed-form marginal, and regresses the
/// injected noise with MSE under AdamW.
pub fn train_generator(
    features: &[(EmbeddingVector, ClassId)],
    schedule: &NoiseSchedule,
    seed: u64,
    config: &GeneratorConfig,
    task_id: TaskId,
) -> Result<GeneratorTraining> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::contract("train_generator needs at least one feature"));
    }
    let dim = features[0].0.dim();
    for (f, _) in features {
        if f.dim() != dim {
            return Err(Error::shape("train_generator", "inconsistent feature dims"));
        }
    }
    let mut class_ids: Vec<ClassId> = features.iter().map(|(_, c)| *c).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut init_rng = SeededRng::new(seed).derive("gen-init", 0);
    let spec = MlpSpec::new(
        dim + config.d_cond + config.d_time,
        config.hidden,
        dim,
        config.layers,
    )?;
    let mut params = spec.init_params(&mut init_rng);
    let table = Tensor2D::random_normal(
        class_ids.len(),
        config.d_cond,
        (1.0 / config.d_cond as f64).sqrt(),
        &mut init_rng,
    );
    params.insert("class_embed", table, true)?;

    let class_index: std::collections::BTreeMap<ClassId, usize> = class_ids
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();

    let mut opt = AdamWState::new(AdamWConfig::new(config.lr, config.weight_decay))?;
    let mut data_rng = SeededRng::new(seed).derive("gen-data", 0);
    let mut noise_rng = SeededRng::new(seed).derive("gen-noise", 0);
    let mut losses = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let batch = config.batch;
        let mut x_t = Tensor2D::zeros(batch, dim);
        let mut target = Tensor2D::zeros(batch, dim);
        let mut cond_indices = Vec::with_capacity(batch);
        let mut t_rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let idx = data_rng.below(features.len());
            let (x0, class) = &features[idx];
            let t = 1 + data_rng.below(schedule.steps());
            let mut eps = vec![0.0; dim];
            noise_rng.fill_normal(&mut eps);
            let noised = q_sample(x0.as_slice(), &eps, schedule, t);
            x_t.row_mut(b).copy_from_slice(&noised);
            target.row_mut(b).copy_from_slice(&eps);
            cond_indices.push(class_index[class]);
            t_rows.push(t);
        }

        let mut graph = Graph::new();
        let binding = graph.bind(&params);
        let x_node = graph.matrix(x_t);
        let table_node = binding.node("class_embed")?;
        let cond_node = graph.embed_rows(table_node, cond_indices)?;
        let mut t_emb = Tensor2D::zeros(batch, config.d_time);
        for (b, &t) in t_rows.iter().enumerate() {
            t_emb
                .row_mut(b)
                .copy_from_slice(time_embedding(t, config.d_time).as_slice());
        }
        let t_node = graph.matrix(t_emb);
        let input = graph.concat_cols(vec![x_node, cond_node, t_node])?;
        let pred = forward_mlp_on_graph(&mut graph, &binding, &params, input, config.activation)?;
        let loss = graph.mse_loss(pred, target)?;
        let loss_value = graph.scalar_value(loss)?;
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!(
                "generator loss became {loss_value} at iteration {iter}"
            )));
        }
        losses.push(loss_value);
        let grads = graph.backward(loss)?;
        let param_grads = binding.param_grads(&grads, &params)?;
        adamw_step(&mut params, &param_grads, &mut opt)?;
    }

    let final_loss = losses.last().copied();
    Ok(GeneratorTraining {
        generator: DiffusionGenerator {
            params,
            class_ids,
            schedule: schedule.clone(),
            config: config.clone(),
            task_id,
            dim,
            seed,
            final_loss,
        },
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(data: Vec<f64>) -> EmbeddingVector {
        l2_normalize(&Tensor1D::from_vec(data).unwrap()).unwrap()
    }

    fn tiny_config(iters: usize) -> GeneratorConfig {
        GeneratorConfig {
            layers: 3,
            hidden: 16,
            d_cond: 4,
            d_time: 4,
            iters,
            batch: 8,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn untrained_generator_still_samples_valid_embeddings() {
        let schedule = NoiseSchedule::linear(2, 1e-4, 0.02).unwrap();
        let features = vec![(unit(vec![1.0, 0.0, 0.0, 0.0]), ClassId(0))];
        let out = train_generator(&features, &schedule, 1, &tiny_config(0), TaskId(0)).unwrap();
        assert!(out.generator.final_loss().is_none());
        let samples = out.generator.sample(ClassId(0), 5, 9).unwrap();
        assert_eq!(samples.len(), 5);
        for s in &samples {
            assert_eq!(s.dim(), 4);
            assert!(s.tensor().all_finite());
            assert_relative_eq!(s.tensor().norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn q_sample_matches_closed_form() {
        let schedule = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let x0 = [0.5, -0.25];
        let eps = [1.0, 2.0];
        for t in [1, 5, 10] {
            let abar = schedule.alpha_bar(t);
            let got = q_sample(&x0, &eps, &schedule, t);
            for i in 0..2 {
                let expected = abar.sqrt() * x0[i] + (1.0 - abar).sqrt() * eps[i];
                assert_relative_eq!(got[i], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let schedule = NoiseSchedule::linear(5, 1e-4, 0.02).unwrap();
        let features = vec![
            (unit(vec![1.0, 0.2, 0.0]), ClassId(3)),
            (unit(vec![0.0, 1.0, 0.1]), ClassId(4)),
        ];
        let out = train_generator(&features, &schedule, 2, &tiny_config(5), TaskId(1)).unwrap();
        let a = out.generator.sample(ClassId(3), 7, 42).unwrap();
        let b = out.generator.sample(ClassId(3), 7, 42).unwrap();
        assert_eq!(a, b);
        let c = out.generator.sample(ClassId(3), 7, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_net_single_step_sampling_matches_hand_formula() {
        // With an epsilon net that outputs zero and one diffusion step, the
        // sample is x_1 / sqrt(abar_1), normalized.
        let schedule = NoiseSchedule::linear(1, 0.01, 0.02).unwrap();
        let features = vec![(unit(vec![1.0, 0.0]), ClassId(0))];
        let mut out = train_generator(&features, &schedule, 3, &tiny_config(0), TaskId(0)).unwrap();
        // Zero the final layer so the net output is identically zero.
        let last = out.generator.config.layers - 1;
        for name in [format!("layer{last}.w"), format!("layer{last}.b")] {
            let p = out.generator.params.get_mut(&name).unwrap();
            for v in p.value.elems_mut() {
                *v = 0.0;
            }
        }
        let seed = 77;
        let got = out.generator.sample(ClassId(0), 1, seed).unwrap();

        // Reproduce x_1 from the same trajectory substream.
        let mut rng = SeededRng::new(derive_seed(seed, "traj", 0));
        let mut x1 = vec![0.0; 2];
        rng.fill_normal(&mut x1);
        let abar = schedule.alpha_bar(1);
        let rescaled: Vec<f64> = x1.iter().map(|v| v / abar.sqrt()).collect();
        let expected = l2_normalize(&Tensor1D::from_vec(rescaled).unwrap()).unwrap();
        for (a, b) in got[0].as_slice().iter().zip(expected.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn unknown_class_is_lookup_error() {
        let schedule = NoiseSchedule::linear(2, 1e-4, 0.02).unwrap();
        let features = vec![(unit(vec![1.0, 0.0]), ClassId(0))];
        let out = train_generator(&features, &schedule, 1, &tiny_config(0), TaskId(0)).unwrap();
        assert!(matches!(
            out.generator.sample(ClassId(9), 1, 0),
            Err(Error::UnknownClass(ClassId(9)))
        ));
    }

    #[test]
    fn empty_features_is_contract_error() {
        let schedule = NoiseSchedule::linear(2, 1e-4, 0.02).unwrap();
        assert!(train_generator(&[], &schedule, 1, &tiny_config(1), TaskId(0)).is_err());
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let schedule = NoiseSchedule::linear(4, 1e-4, 0.02).unwrap();
        let features = vec![
            (unit(vec![1.0, 0.0, 0.0]), ClassId(0)),
            (unit(vec![0.0, 1.0, 0.0]), ClassId(1)),
        ];
        let cfg = GeneratorConfig {
            lr: 1e18,
            iters: 50,
            ..tiny_config(50)
        };
        let err = train_generator(&features, &schedule, 1, &cfg, TaskId(0)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn training_reduces_loss_and_save_load_round_trips() {
        let schedule = NoiseSchedule::linear(8, 1e-3, 0.05).unwrap();
        let mut rng = SeededRng::new(5);
        let mut features = Vec::new();
        for _ in 0..32 {
            let mut v = vec![1.0, 0.0, 0.0, 0.0];
            for x in v.iter_mut() {
                *x += 0.05 * rng.normal();
            }
            features.push((unit(v), ClassId(0)));
        }
        let cfg = tiny_config(150);
        let out = train_generator(&features, &schedule, 4, &cfg, TaskId(2)).unwrap();
        let first: f64 = out.losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = out.losses[out.losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "loss did not decrease: {first} -> {last}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.modg");
        out.generator.save(&path).unwrap();
        let loaded = DiffusionGenerator::load(&path).unwrap();
        assert_eq!(loaded.task_id(), TaskId(2));
        assert_eq!(loaded.class_ids(), out.generator.class_ids());
        assert_eq!(loaded.schedule().steps(), 8);
        // Parameters survive at float32 precision.
        for (name, p) in out.generator.params().iter() {
            let lp = loaded.params().get(name).unwrap();
            for (a, b) in p.value.elems().iter().zip(lp.value.elems()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }

        // Truncated file is a format error.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            DiffusionGenerator::load(&path),
            Err(Error::Format(_))
        ));
    }
}
