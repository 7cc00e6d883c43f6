//! Low-rank adapter parametrizations and task-vector algebra.
//!
//! An adapter owns the trainable factors for one class expert. Materializing
//! it yields a [`TaskVector`]: dense per-layer displacements that add onto
//! the frozen encoder weights. Task vectors form a linear space, which is
//! what makes expert merging possible.

use crate::error::{Error, Result};
use crate::ids::ClassId;
use crate::numerics::graph::{Graph, NodeId, ParamBinding};
use crate::numerics::param::ParamSet;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{Tensor1D, Tensor2D};
use serde::{Deserialize, Serialize};

/// Adapter parametrization family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterVariant {
    /// Per-expert factor pair: displacement = B · A.
    Lora,
    /// Frozen shared random factors with per-expert scaling vectors:
    /// displacement = diag(b_vec) · B~ · diag(d_vec) · A~.
    Vera,
}

/// Shared context for all adapters of one hub: variant, rank, the adapted
/// layer shapes, and (for VeRA) the frozen shared random factors derived
/// from the hub seed with variance 1/d_in.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSpace {
    variant: AdapterVariant,
    rank: usize,
    layer_shapes: Vec<(usize, usize)>,
    vera_shared: Vec<(Tensor2D, Tensor2D)>,
}

impl AdapterSpace {
    pub fn new(
        variant: AdapterVariant,
        rank: usize,
        layer_shapes: Vec<(usize, usize)>,
        hub_seed: u64,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::contract("adapter rank must be positive"));
        }
        if layer_shapes.is_empty() {
            return Err(Error::contract("adapter space needs at least one layer"));
        }
        for &(d_out, d_in) in &layer_shapes {
            if rank >= d_out.min(d_in) {
                return Err(Error::contract(format!(
                    "rank {rank} must be below min({d_out}, {d_in})"
                )));
            }
        }
        let mut vera_shared = Vec::new();
        if variant == AdapterVariant::Vera {
            let mut rng = SeededRng::new(hub_seed).derive("vera-shared", 0);
            for &(d_out, d_in) in &layer_shapes {
                let std = (1.0 / d_in as f64).sqrt();
                let b = Tensor2D::random_normal(d_out, rank, std, &mut rng);
                let a = Tensor2D::random_normal(rank, d_in, std, &mut rng);
                vera_shared.push((b, a));
            }
        }
        Ok(AdapterSpace {
            variant,
            rank,
            layer_shapes,
            vera_shared,
        })
    }

    pub fn variant(&self) -> AdapterVariant {
        self.variant
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layer_shapes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn vera_shared(&self) -> &[(Tensor2D, Tensor2D)] {
        &self.vera_shared
    }

    /// Fresh adapter for a class. LoRA starts at B = 0, A ~ N(0, 1/d_in), so
    /// the displacement is exactly zero and a new expert begins at the
    /// zero-shot encoder. VeRA starts at b_vec = 0, d_vec = 0.1 for the same
    /// reason.
    pub fn new_adapter(&self, class_id: ClassId, init_seed: u64) -> AdapterModule {
        let mut rng = SeededRng::new(init_seed);
        let mut params = ParamSet::new();
        for (l, &(d_out, d_in)) in self.layer_shapes.iter().enumerate() {
            match self.variant {
                AdapterVariant::Lora => {
                    let b = Tensor2D::zeros(d_out, self.rank);
                    let std = (1.0 / d_in as f64).sqrt();
                    let a = Tensor2D::random_normal(self.rank, d_in, std, &mut rng);
                    params.insert(format!("layer{l}.b"), b, true).unwrap();
                    params.insert(format!("layer{l}.a"), a, true).unwrap();
                }
                AdapterVariant::Vera => {
                    let d_vec = Tensor1D::filled(self.rank, 0.1);
                    let b_vec = Tensor1D::zeros(d_out);
                    params.insert(format!("layer{l}.d_vec"), d_vec, true).unwrap();
                    params.insert(format!("layer{l}.b_vec"), b_vec, true).unwrap();
                }
            }
        }
        AdapterModule {
            class_id,
            variant: self.variant,
            params,
        }
    }

    /// Dense per-layer displacements for an adapter.
    pub fn materialize(&self, adapter: &AdapterModule) -> Result<TaskVector> {
        if adapter.variant != self.variant {
            return Err(Error::contract("adapter variant does not match space"));
        }
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let delta = match self.variant {
                AdapterVariant::Lora => {
                    let b = adapter.params.matrix(&format!("layer{l}.b"))?;
                    let a = adapter.params.matrix(&format!("layer{l}.a"))?;
                    b.matmul(a)?
                }
                AdapterVariant::Vera => {
                    let d_vec = adapter.params.vector(&format!("layer{l}.d_vec"))?;
                    let b_vec = adapter.params.vector(&format!("layer{l}.b_vec"))?;
                    let (shared_b, shared_a) = &self.vera_shared[l];
                    // diag(b_vec) · B~ · diag(d_vec) · A~
                    let mut scaled_b = shared_b.clone();
                    for r in 0..scaled_b.rows() {
                        for (x, &d) in scaled_b.row_mut(r).iter_mut().zip(d_vec.as_slice()) {
                            *x *= d;
                        }
                    }
                    let mut delta = scaled_b.matmul(shared_a)?;
                    for r in 0..delta.rows() {
                        let s = b_vec.as_slice()[r];
                        for x in delta.row_mut(r) {
                            *x *= s;
                        }
                    }
                    delta
                }
            };
            let expected = self.layer_shapes[l];
            if delta.shape() != expected {
                return Err(Error::shape(
                    "materialize",
                    format!("layer {l}: {:?} vs {:?}", delta.shape(), expected),
                ));
            }
            layers.push(delta);
        }
        Ok(TaskVector {
            layers,
            provenance: format!("expert:{}", adapter.class_id),
        })
    }

    /// Stage an adapter's displacement computation on a gradient tape. The
    /// returned binding exposes the trainable factor leaves; the per-layer
    /// nodes evaluate to the dense displacements.
    pub fn stage_on_graph(
        &self,
        graph: &mut Graph,
        adapter: &AdapterModule,
    ) -> Result<(ParamBinding, Vec<NodeId>)> {
        let binding = graph.bind(&adapter.params);
        let mut deltas = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let delta = match self.variant {
                AdapterVariant::Lora => {
                    let b = binding.node(&format!("layer{l}.b"))?;
                    let a = binding.node(&format!("layer{l}.a"))?;
                    graph.matmul(b, a)?
                }
                AdapterVariant::Vera => {
                    let d_vec = binding.node(&format!("layer{l}.d_vec"))?;
                    let b_vec = binding.node(&format!("layer{l}.b_vec"))?;
                    let (shared_b, shared_a) = &self.vera_shared[l];
                    let sb = graph.matrix(shared_b.clone());
                    let sa = graph.matrix(shared_a.clone());
                    let scaled = graph.col_scale(sb, d_vec)?;
                    let prod = graph.matmul(scaled, sa)?;
                    graph.row_scale(prod, b_vec)?
                }
            };
            deltas.push(delta);
        }
        Ok((binding, deltas))
    }
}

/// Trainable factors of one class expert.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterModule {
    class_id: ClassId,
    variant: AdapterVariant,
    params: ParamSet,
}

impl AdapterModule {
    pub fn class_id(&self) -> ClassId {
        self.class_id
    }

    pub fn variant(&self) -> AdapterVariant {
        self.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Rebuild from raw parts (deserialization path).
    pub fn from_parts(class_id: ClassId, variant: AdapterVariant, params: ParamSet) -> Self {
        AdapterModule {
            class_id,
            variant,
            params,
        }
    }
}

/// Dense per-layer weight displacement: the materialized form of an expert
/// or of a merge of experts. Elementwise addition and scaling are the
/// linear-space operations merging relies on.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector {
    layers: Vec<Tensor2D>,
    provenance: String,
}

impl TaskVector {
    pub fn from_layers(layers: Vec<Tensor2D>, provenance: impl Into<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("task vector needs at least one layer"));
        }
        Ok(TaskVector {
            layers,
            provenance: provenance.into(),
        })
    }

    pub fn layers(&self) -> &[Tensor2D] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Tensor2D {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn scale(&self, c: f64) -> TaskVector {
        TaskVector {
            layers: self.layers.iter().map(|m| m.scale(c)).collect(),
            provenance: format!("{} * {c}", self.provenance),
        }
    }
}

/// Weighted sum of task vectors: sum_i w_i * tau_i, elementwise.
pub fn combine(tvs: &[(TaskVector, f64)]) -> Result<TaskVector> {
    combine_refs(&tvs.iter().map(|(t, w)| (t, *w)).collect::<Vec<_>>())
}

/// [`combine`] over borrowed task vectors.
pub fn combine_refs(tvs: &[(&TaskVector, f64)]) -> Result<TaskVector> {
    let (first, w0) = match tvs.first() {
        Some(x) => x,
        None => return Err(Error::contract("combine over an empty list")),
    };
    let mut layers: Vec<Tensor2D> = first.layers.iter().map(|m| m.scale(*w0)).collect();
    let mut provenance = format!("merge[{}:{w0}", first.provenance);
    for (tv, w) in &tvs[1..] {
        if tv.num_layers() != layers.len() {
            return Err(Error::contract(format!(
                "layer counts differ: {} vs {}",
                tv.num_layers(),
                layers.len()
            )));
        }
        for (acc, layer) in layers.iter_mut().zip(&tv.layers) {
            if acc.shape() != layer.shape() {
                return Err(Error::contract(format!(
                    "layer shapes differ: {:?} vs {:?}",
                    acc.shape(),
                    layer.shape()
                )));
            }
            for (x, &y) in acc.as_mut_slice().iter_mut().zip(layer.as_slice()) {
                *x += w * y;
            }
        }
        provenance.push_str(&format!(", {}:{w}", tv.provenance));
    }
    provenance.push(']');
    Ok(TaskVector { layers, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lora_space() -> AdapterSpace {
        AdapterSpace::new(AdapterVariant::Lora, 2, vec![(6, 4), (4, 6)], 99).unwrap()
    }

    #[test]
    fn zero_b_materializes_to_zero() {
        let space = lora_space();
        let adapter = space.new_adapter(ClassId(0), 1);
        let tv = space.materialize(&adapter).unwrap();
        assert!(tv.layers().iter().all(|m| m.as_slice().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn rank_one_product_matches_hand_matrix() {
        let space = AdapterSpace::new(AdapterVariant::Lora, 1, vec![(2, 2)], 0).unwrap();
        let mut adapter = space.new_adapter(ClassId(3), 7);
        let p = adapter.params_mut();
        *p.get_mut("layer0.b").unwrap() = crate::numerics::param::Param {
            value: Tensor2D::from_rows(vec![vec![1.0], vec![0.0]]).unwrap().into(),
            trainable: true,
        };
        *p.get_mut("layer0.a").unwrap() = crate::numerics::param::Param {
            value: Tensor2D::from_rows(vec![vec![0.0, 2.0]]).unwrap().into(),
            trainable: true,
        };
        let tv = space.materialize(&adapter).unwrap();
        assert_eq!(tv.layer(0).as_slice(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn vera_unit_scaling_reproduces_shared_product() {
        let space = AdapterSpace::new(AdapterVariant::Vera, 2, vec![(5, 4)], 123).unwrap();
        let mut adapter = space.new_adapter(ClassId(0), 9);
        for name in ["layer0.d_vec", "layer0.b_vec"] {
            let p = adapter.params_mut().get_mut(name).unwrap();
            for x in p.value.elems_mut() {
                *x = 1.0;
            }
        }
        let tv = space.materialize(&adapter).unwrap();
        let (b, a) = &space.vera_shared()[0];
        let expected = b.matmul(a).unwrap();
        for (x, y) in tv.layer(0).as_slice().iter().zip(expected.as_slice()) {
            assert_relative_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn vera_shared_matrices_identical_across_adapters() {
        let s1 = AdapterSpace::new(AdapterVariant::Vera, 3, vec![(8, 6)], 42).unwrap();
        let s2 = AdapterSpace::new(AdapterVariant::Vera, 3, vec![(8, 6)], 42).unwrap();
        assert_eq!(s1.vera_shared(), s2.vera_shared());
        let s3 = AdapterSpace::new(AdapterVariant::Vera, 3, vec![(8, 6)], 43).unwrap();
        assert_ne!(s1.vera_shared(), s3.vera_shared());
    }

    #[test]
    fn combine_identity_and_linearity() {
        let space = lora_space();
        let mut rng = SeededRng::new(4);
        let mut adapter = space.new_adapter(ClassId(1), 2);
        for (_, p) in adapter.params_mut().iter_mut() {
            for x in p.value.elems_mut() {
                *x = rng.normal();
            }
        }
        let tv = space.materialize(&adapter).unwrap();

        let single = combine(&[(tv.clone(), 1.0)]).unwrap();
        assert_eq!(single.layers(), tv.layers());

        let halves = combine(&[(tv.clone(), 0.5), (tv.clone(), 0.5)]).unwrap();
        assert_eq!(halves.layers(), tv.layers());
    }

    #[test]
    fn combine_weighted_matches_elementwise_oracle() {
        let t1 = TaskVector::from_layers(
            vec![Tensor2D::from_rows(vec![vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap()],
            "t1",
        )
        .unwrap();
        let t2 = TaskVector::from_layers(
            vec![Tensor2D::from_rows(vec![vec![-1.0, 1.0], vec![2.0, 0.0]]).unwrap()],
            "t2",
        )
        .unwrap();
        let merged = combine(&[(t1.clone(), 0.3), (t2.clone(), 0.7)]).unwrap();
        for i in 0..4 {
            let expected = 0.3 * t1.layer(0).as_slice()[i] + 0.7 * t2.layer(0).as_slice()[i];
            assert_relative_eq!(merged.layer(0).as_slice()[i], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn combine_rejects_empty_and_mismatched() {
        assert!(combine(&[]).is_err());
        let t1 = TaskVector::from_layers(vec![Tensor2D::zeros(2, 2)], "a").unwrap();
        let t2 = TaskVector::from_layers(vec![Tensor2D::zeros(3, 2)], "b").unwrap();
        assert!(combine(&[(t1, 1.0), (t2, 1.0)]).is_err());
    }
}
