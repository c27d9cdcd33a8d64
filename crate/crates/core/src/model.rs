//! Model assembly: maps a declarative spec onto a stack of layer nodes with
//! compatible representations, owns the trainable parameters, and provides
//! forward/backward over the whole stack.

use crate::basis::{solve_basis, KernelBasis};
use crate::error::{Error, Result};
use crate::group::{turn_cos_sin, CyclicGroup, FeatureField, Representation};
use crate::layers::{
    relu, relu_backward, GroupConvLayer, LowRankSteerableConvLayer, RelaxedGroupConvLayer,
    RelaxedSteerableConvLayer, SpatialWeights, SteerableConvLayer,
};
use crate::reg::{l_gconv, l_sconv};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Plain 2D convolutions (trivial group), no symmetry bias.
    Conv,
    /// Strict group convolution over C_n with lifting and projection.
    GConv,
    /// Relaxed group convolution (L banks, rotation-indexed weights).
    RGConv,
    /// Strict steerable convolution from a solved kernel basis.
    Steer,
    /// Relaxed steerable convolution (offset- or angle-indexed weights).
    RSteer,
    /// Relaxed steerable convolution with the low-rank translation
    /// relaxation on top.
    LowRank,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxMode {
    Spatial,
    Angular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Rotation group order n.
    pub group: usize,
    /// Number of convolution layers in the main stack.
    pub depth: usize,
    /// Hidden multiplicity (copies of the regular representation, so
    /// hidden channels = hidden * n for equivariant families).
    pub hidden: usize,
    /// Kernel half-width.
    pub k: usize,
    /// Filter banks L for relaxed group convolution.
    #[serde(default = "default_banks")]
    pub banks: usize,
    #[serde(default = "default_relax")]
    pub relax: RelaxMode,
    /// Angular sector count for the angular relaxation (0 = group order).
    #[serde(default)]
    pub n_angles: usize,
    /// Plain convolution layers prepended before the equivariant stack.
    #[serde(default)]
    pub combo_prefix: usize,
    /// Rank of the translation relaxation.
    #[serde(default = "default_rank")]
    pub rank: usize,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Conv => "conv",
            ModelFamily::GConv => "gconv",
            ModelFamily::RGConv => "rgconv",
            ModelFamily::Steer => "steer",
            ModelFamily::RSteer => "rsteer",
            ModelFamily::LowRank => "lowrank",
        }
    }
}

fn default_banks() -> usize {
    3
}

fn default_relax() -> RelaxMode {
    RelaxMode::Spatial
}

fn default_rank() -> usize {
    1
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.group == 0 {
            return Err(Error::Config("group order must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden multiplicity must be positive".into()));
        }
        if matches!(self.family, ModelFamily::RGConv) && self.banks == 0 {
            return Err(Error::Config("relaxed group conv needs banks >= 1".into()));
        }
        if self.combo_prefix > 0
            && !matches!(
                self.family,
                ModelFamily::Steer | ModelFamily::RSteer | ModelFamily::LowRank
            )
        {
            return Err(Error::Config(
                "combo prefix applies to steerable families only".into(),
            ));
        }
        Ok(())
    }
}

/// One element of the model stack.
#[derive(Clone, Debug)]
pub enum LayerNode<T> {
    GConv(GroupConvLayer<T>),
    RGConv(RelaxedGroupConvLayer<T>),
    Steer(SteerableConvLayer<T>),
    RSteer(RelaxedSteerableConvLayer<T>),
    LowRank(LowRankSteerableConvLayer<T>),
    Lift(LiftFieldLayer<T>),
    Project(ProjectLayer<T>),
    Relu,
    /// Relabels channels with a different representation/group without
    /// touching the data (used at the plain/equivariant seams).
    Reinterpret {
        rep: Representation,
        group: CyclicGroup,
    },
}

/// Lifts a field whose representation is a direct sum of trivial and
/// irrep(1) blocks into regular-representation features, one regular copy per
/// block: trivial blocks are tiled, vector blocks use the cosine lift.
#[derive(Clone, Debug)]
pub struct LiftFieldLayer<T> {
    pub group: CyclicGroup,
    pub blocks: Vec<Representation>,
    /// One trainable scalar per block, initialized to 1.
    pub c: Tensor<T>,
}

impl<T: Scalar> LiftFieldLayer<T> {
    pub fn new(group: CyclicGroup, in_rep: &Representation, in_mult: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        for _ in 0..in_mult {
            for b in in_rep.blocks() {
                match b {
                    Representation::Trivial | Representation::Irrep(1) => blocks.push(b.clone()),
                    other => {
                        return Err(Error::Config(format!(
                            "lift supports trivial and irrep(1) blocks, got {other:?}"
                        )))
                    }
                }
            }
        }
        let c = Tensor::filled(&[blocks.len()], T::one());
        Ok(LiftFieldLayer { group, blocks, c })
    }

    fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let n = self.group.order();
        let hw = f.height() * f.width();
        let expected: usize = self.blocks.iter().map(|b| b.dim(self.group)).sum();
        if f.channels() != expected {
            return Err(Error::Shape(format!(
                "lift expects {expected} channels, got {}",
                f.channels()
            )));
        }
        let mut out = Tensor::zeros(&[self.blocks.len() * n, f.height(), f.width()]);
        let src = f.data.data();
        let mut off = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            let cb = self.c.data()[bi];
            for i in 0..n {
                let dst = (bi * n + i) * hw;
                match block {
                    Representation::Trivial => {
                        for p in 0..hw {
                            out.data_mut()[dst + p] = cb * src[off * hw + p];
                        }
                    }
                    Representation::Irrep(1) => {
                        let (ci, si) = turn_cos_sin(i as i64, n as i64);
                        let (ci, si) = (cast::<T>(ci), cast::<T>(si));
                        for p in 0..hw {
                            out.data_mut()[dst + p] = cb
                                * (ci * src[off * hw + p] + si * src[(off + 1) * hw + p]);
                        }
                    }
                    _ => unreachable!(),
                }
            }
            off += block.dim(self.group);
        }
        FeatureField::new(out, Representation::Regular, self.group)
    }

    fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        let n = self.group.order();
        let hw = f.height() * f.width();
        let mut din = Tensor::zeros(&f.data.dims().to_vec());
        let mut dc = Tensor::zeros(&[self.blocks.len()]);
        let src = f.data.data();
        let up = upstream.data.data();
        let mut off = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            let cb = self.c.data()[bi];
            let mut dcb = T::zero();
            for i in 0..n {
                let u_off = (bi * n + i) * hw;
                match block {
                    Representation::Trivial => {
                        for p in 0..hw {
                            let u = up[u_off + p];
                            din.data_mut()[off * hw + p] += cb * u;
                            dcb += src[off * hw + p] * u;
                        }
                    }
                    Representation::Irrep(1) => {
                        let (ci, si) = turn_cos_sin(i as i64, n as i64);
                        let (ci, si) = (cast::<T>(ci), cast::<T>(si));
                        for p in 0..hw {
                            let u = up[u_off + p];
                            din.data_mut()[off * hw + p] += cb * ci * u;
                            din.data_mut()[(off + 1) * hw + p] += cb * si * u;
                            dcb += (ci * src[off * hw + p] + si * src[(off + 1) * hw + p]) * u;
                        }
                    }
                    _ => unreachable!(),
                }
            }
            dc.data_mut()[bi] = dcb;
            off += block.dim(self.group);
        }
        Ok((
            FeatureField {
                data: din,
                rep: f.rep.clone(),
                group: f.group,
            },
            dc,
        ))
    }
}

/// Projects regular-representation features back onto trivial / irrep(1)
/// output blocks: group averaging for invariant channels, first Fourier
/// coefficients for vector channels. Adjoint-shaped to the lift.
#[derive(Clone, Debug)]
pub struct ProjectLayer<T> {
    pub group: CyclicGroup,
    pub blocks: Vec<Representation>,
    pub c: Tensor<T>,
}

impl<T: Scalar> ProjectLayer<T> {
    pub fn new(group: CyclicGroup, out_rep: &Representation) -> Result<Self> {
        let mut blocks = Vec::new();
        for b in out_rep.blocks() {
            match b {
                Representation::Trivial | Representation::Irrep(1) => blocks.push(b.clone()),
                other => {
                    return Err(Error::Config(format!(
                        "projection supports trivial and irrep(1) blocks, got {other:?}"
                    )))
                }
            }
        }
        let c = Tensor::filled(&[blocks.len()], T::one());
        Ok(ProjectLayer { group, blocks, c })
    }

    fn out_rep(&self) -> Representation {
        if self.blocks.len() == 1 {
            self.blocks[0].clone()
        } else {
            Representation::DirectSum(self.blocks.clone())
        }
    }

    fn forward(&self, f: &FeatureField<T>) -> Result<FeatureField<T>> {
        let n = self.group.order();
        if f.rep != Representation::Regular || f.channels() != self.blocks.len() * n {
            return Err(Error::Shape(format!(
                "projection expects {} regular channels, got {}",
                self.blocks.len() * n,
                f.channels()
            )));
        }
        let hw = f.height() * f.width();
        let out_ch: usize = self.blocks.iter().map(|b| b.dim(self.group)).sum();
        let mut out = Tensor::zeros(&[out_ch, f.height(), f.width()]);
        let src = f.data.data();
        let inv_n = cast::<T>(1.0 / n as f64);
        let two_inv_n = cast::<T>(2.0 / n as f64);
        let mut off = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            let cb = self.c.data()[bi];
            match block {
                Representation::Trivial => {
                    for i in 0..n {
                        let s = (bi * n + i) * hw;
                        for p in 0..hw {
                            out.data_mut()[off * hw + p] += cb * inv_n * src[s + p];
                        }
                    }
                }
                Representation::Irrep(1) => {
                    for i in 0..n {
                        let (ci, si) = turn_cos_sin(i as i64, n as i64);
                        let (ci, si) = (cast::<T>(ci), cast::<T>(si));
                        let s = (bi * n + i) * hw;
                        for p in 0..hw {
                            out.data_mut()[off * hw + p] += cb * two_inv_n * ci * src[s + p];
                            out.data_mut()[(off + 1) * hw + p] +=
                                cb * two_inv_n * si * src[s + p];
                        }
                    }
                }
                _ => unreachable!(),
            }
            off += block.dim(self.group);
        }
        FeatureField::new(out, self.out_rep(), self.group)
    }

    fn backward(
        &self,
        f: &FeatureField<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Tensor<T>)> {
        let n = self.group.order();
        let hw = f.height() * f.width();
        let mut din = Tensor::zeros(&f.data.dims().to_vec());
        let mut dc = Tensor::zeros(&[self.blocks.len()]);
        let src = f.data.data();
        let up = upstream.data.data();
        let inv_n = cast::<T>(1.0 / n as f64);
        let two_inv_n = cast::<T>(2.0 / n as f64);
        let mut off = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            let cb = self.c.data()[bi];
            let mut dcb = T::zero();
            match block {
                Representation::Trivial => {
                    for i in 0..n {
                        let s = (bi * n + i) * hw;
                        for p in 0..hw {
                            let u = up[off * hw + p];
                            din.data_mut()[s + p] += cb * inv_n * u;
                            dcb += inv_n * src[s + p] * u;
                        }
                    }
                }
                Representation::Irrep(1) => {
                    for i in 0..n {
                        let (ci, si) = turn_cos_sin(i as i64, n as i64);
                        let (ci, si) = (cast::<T>(ci), cast::<T>(si));
                        let s = (bi * n + i) * hw;
                        for p in 0..hw {
                            let ua = up[off * hw + p];
                            let ub = up[(off + 1) * hw + p];
                            din.data_mut()[s + p] += cb * two_inv_n * (ci * ua + si * ub);
                            dcb += two_inv_n * src[s + p] * (ci * ua + si * ub);
                        }
                    }
                }
                _ => unreachable!(),
            }
            dc.data_mut()[bi] = dcb;
            off += block.dim(self.group);
        }
        Ok((
            FeatureField {
                data: din,
                rep: f.rep.clone(),
                group: f.group,
            },
            dc,
        ))
    }
}

pub struct Trace<T> {
    /// Input to each node, in stack order.
    pub inputs: Vec<FeatureField<T>>,
    pub output: FeatureField<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub nodes: Vec<LayerNode<T>>,
    pub group: CyclicGroup,
    pub data_rep: Representation,
    pub input_len: usize,
    pub grid: usize,
}

impl<T: Scalar> Model<T> {
    /// Builds the layer stack for `spec` on data whose single-frame channel
    /// action is `data_rep` under C_{spec.group} rotations; the model maps a
    /// window of `input_len` frames to one frame.
    pub fn build(
        spec: &ModelSpec,
        data_rep: &Representation,
        input_len: usize,
        grid: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group = CyclicGroup::new(spec.group)?;
        let data_dim = data_rep.dim(group);
        let mut nodes: Vec<LayerNode<T>> = Vec::new();
        let mut basis_cache: HashMap<String, KernelBasis<T>> = HashMap::new();
        let mut solve = |rin: &Representation, rout: &Representation, k: usize| -> Result<KernelBasis<T>> {
            let key = format!("{rin:?}->{rout:?}@{k}");
            if let Some(b) = basis_cache.get(&key) {
                return Ok(b.clone());
            }
            let b = solve_basis::<T>(group, rin, rout, k)?;
            basis_cache.insert(key, b.clone());
            Ok(b)
        };

        match spec.family {
            ModelFamily::Conv => {
                // plain convs on raw channels under the trivial group
                let c1 = CyclicGroup::new(1)?;
                nodes.push(LayerNode::Reinterpret {
                    rep: Representation::Regular,
                    group: c1,
                });
                let width = spec.hidden * spec.group; // channel budget matched
                let mut c_in = input_len * data_dim;
                for d in 0..spec.depth {
                    let c_out = if d + 1 == spec.depth { data_dim } else { width };
                    let mut layer = GroupConvLayer::zeros(c1, c_out, c_in, spec.k);
                    init_uniform(&mut layer.kernel, c_in * (2 * spec.k + 1).pow(2), &mut rng);
                    nodes.push(LayerNode::GConv(layer));
                    if d + 1 != spec.depth {
                        nodes.push(LayerNode::Relu);
                    }
                    c_in = c_out;
                }
                nodes.push(LayerNode::Reinterpret {
                    rep: data_rep.clone(),
                    group,
                });
            }
            ModelFamily::GConv | ModelFamily::RGConv => {
                let lift = LiftFieldLayer::new(group, data_rep, input_len)?;
                let n = group.order();
                let blocks_in = lift.blocks.len();
                let blocks_out = data_rep.blocks().len();
                nodes.push(LayerNode::Lift(lift));
                let mut in_mult = blocks_in;
                for d in 0..spec.depth {
                    let out_mult = if d + 1 == spec.depth { blocks_out } else { spec.hidden };
                    let fan_in = in_mult * n * (2 * spec.k + 1).pow(2);
                    match spec.family {
                        ModelFamily::GConv => {
                            let mut layer = GroupConvLayer::zeros(group, out_mult, in_mult, spec.k);
                            init_uniform(&mut layer.kernel, fan_in, &mut rng);
                            nodes.push(LayerNode::GConv(layer));
                        }
                        ModelFamily::RGConv => {
                            let ks = 2 * spec.k + 1;
                            let banks = (0..spec.banks)
                                .map(|_| {
                                    let mut b =
                                        Tensor::zeros(&[n, out_mult, in_mult, ks, ks]);
                                    init_uniform(&mut b, fan_in, &mut rng);
                                    b
                                })
                                .collect();
                            let w = Tensor::filled(
                                &[spec.banks, n],
                                cast::<T>(1.0 / spec.banks as f64),
                            );
                            nodes.push(LayerNode::RGConv(RelaxedGroupConvLayer::new(
                                group, out_mult, in_mult, spec.k, banks, w,
                            )?));
                        }
                        _ => unreachable!(),
                    }
                    if d + 1 != spec.depth {
                        nodes.push(LayerNode::Relu);
                    }
                    in_mult = out_mult;
                }
                nodes.push(LayerNode::Project(ProjectLayer::new(group, data_rep)?));
            }
            ModelFamily::Steer | ModelFamily::RSteer | ModelFamily::LowRank => {
                let mut in_rep = data_rep.clone();
                let mut in_mult = input_len;
                if spec.combo_prefix > 0 {
                    let c1 = CyclicGroup::new(1)?;
                    nodes.push(LayerNode::Reinterpret {
                        rep: Representation::Regular,
                        group: c1,
                    });
                    let width = spec.hidden * spec.group;
                    let mut c_in = input_len * data_dim;
                    for _ in 0..spec.combo_prefix {
                        let mut layer = GroupConvLayer::zeros(c1, width, c_in, spec.k);
                        init_uniform(&mut layer.kernel, c_in * (2 * spec.k + 1).pow(2), &mut rng);
                        nodes.push(LayerNode::GConv(layer));
                        nodes.push(LayerNode::Relu);
                        c_in = width;
                    }
                    nodes.push(LayerNode::Reinterpret {
                        rep: Representation::Trivial,
                        group,
                    });
                    in_rep = Representation::Trivial;
                    in_mult = width;
                }
                for d in 0..spec.depth {
                    let last = d + 1 == spec.depth;
                    let (out_rep, out_mult) = if last {
                        (data_rep.clone(), 1)
                    } else {
                        (Representation::Regular, spec.hidden)
                    };
                    let basis = solve(&in_rep, &out_rep, spec.k)?;
                    if basis.is_empty() {
                        return Err(Error::Config(format!(
                            "empty steerable basis for {in_rep:?} -> {out_rep:?}"
                        )));
                    }
                    let fan_in = in_mult * basis.len();
                    match spec.family {
                        ModelFamily::Steer => {
                            let mut layer = SteerableConvLayer::zeros(basis, out_mult, in_mult);
                            init_uniform(&mut layer.w, fan_in, &mut rng);
                            nodes.push(LayerNode::Steer(layer));
                        }
                        ModelFamily::RSteer => {
                            let kind = match spec.relax {
                                RelaxMode::Spatial => SpatialWeights::PerOffset,
                                RelaxMode::Angular => SpatialWeights::Angular {
                                    n_angles: if spec.n_angles == 0 {
                                        spec.group
                                    } else {
                                        spec.n_angles
                                    },
                                },
                            };
                            let mut layer = RelaxedSteerableConvLayer::zeros(
                                basis, out_mult, in_mult, kind,
                            );
                            init_tiled_over_offsets(&mut layer.w, fan_in, &mut rng);
                            nodes.push(LayerNode::RSteer(layer));
                        }
                        ModelFamily::LowRank => {
                            let mut layer = LowRankSteerableConvLayer::zeros(
                                basis, out_mult, in_mult, grid, grid, spec.rank,
                            );
                            layer.a.fill(cast::<T>(1.0 / spec.rank as f64));
                            init_lowrank_b(&mut layer.b, fan_in, &mut rng);
                            nodes.push(LayerNode::LowRank(layer));
                        }
                        _ => unreachable!(),
                    }
                    if !last {
                        nodes.push(LayerNode::Relu);
                    }
                    in_rep = out_rep;
                    in_mult = out_mult;
                }
            }
        }

        Ok(Model {
            spec: spec.clone(),
            nodes,
            group,
            data_rep: data_rep.clone(),
            input_len,
            grid,
        })
    }

    pub fn forward(&self, input: &FeatureField<T>) -> Result<FeatureField<T>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &FeatureField<T>) -> Result<Trace<T>> {
        let mut inputs = Vec::with_capacity(self.nodes.len());
        let mut x = input.clone();
        for node in &self.nodes {
            inputs.push(x.clone());
            x = match node {
                LayerNode::GConv(l) => l.forward(&x)?,
                LayerNode::RGConv(l) => l.forward(&x)?,
                LayerNode::Steer(l) => l.forward(&x)?,
                LayerNode::RSteer(l) => l.forward(&x)?,
                LayerNode::LowRank(l) => l.forward(&x)?,
                LayerNode::Lift(l) => l.forward(&x)?,
                LayerNode::Project(l) => l.forward(&x)?,
                LayerNode::Relu => relu(&x),
                LayerNode::Reinterpret { rep, group } => {
                    FeatureField::new(x.data, rep.clone(), *group)?
                }
            };
        }
        Ok(Trace { inputs, output: x })
    }

    /// Reverse pass: returns (grad wrt model input, grads aligned with
    /// `params()` order).
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &FeatureField<T>,
    ) -> Result<(FeatureField<T>, Vec<Tensor<T>>)> {
        let mut grads_rev: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        let mut up = upstream.clone();
        for (node, input) in self.nodes.iter().zip(trace.inputs.iter()).rev() {
            let (dinput, node_grads) = match node {
                LayerNode::GConv(l) => {
                    let (d, g) = l.backward(input, &up)?;
                    (d, vec![g])
                }
                LayerNode::RGConv(l) => {
                    let (d, mut banks, w) = l.backward(input, &up)?;
                    banks.push(w);
                    (d, banks)
                }
                LayerNode::Steer(l) => {
                    let (d, g) = l.backward(input, &up)?;
                    (d, vec![g])
                }
                LayerNode::RSteer(l) => {
                    let (d, g) = l.backward(input, &up)?;
                    (d, vec![g])
                }
                LayerNode::LowRank(l) => {
                    let (d, da, db) = l.backward(input, &up)?;
                    (d, vec![da, db])
                }
                LayerNode::Lift(l) => {
                    let (d, dc) = l.backward(input, &up)?;
                    (d, vec![dc])
                }
                LayerNode::Project(l) => {
                    let (d, dc) = l.backward(input, &up)?;
                    (d, vec![dc])
                }
                LayerNode::Relu => (relu_backward(input, &up)?, vec![]),
                LayerNode::Reinterpret { .. } => (
                    FeatureField::new(up.data.clone(), input.rep.clone(), input.group)?,
                    vec![],
                ),
            };
            grads_rev.push(node_grads);
            up = dinput;
        }
        let mut grads = Vec::new();
        for node_grads in grads_rev.into_iter().rev() {
            grads.extend(node_grads);
        }
        Ok((up, grads))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node {
                LayerNode::GConv(l) => out.push(&l.kernel),
                LayerNode::RGConv(l) => {
                    out.extend(l.banks.iter());
                    out.push(&l.w);
                }
                LayerNode::Steer(l) => out.push(&l.w),
                LayerNode::RSteer(l) => out.push(&l.w),
                LayerNode::LowRank(l) => {
                    out.push(&l.a);
                    out.push(&l.b);
                }
                LayerNode::Lift(l) => out.push(&l.c),
                LayerNode::Project(l) => out.push(&l.c),
                LayerNode::Relu | LayerNode::Reinterpret { .. } => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match node {
                LayerNode::GConv(l) => out.push(&mut l.kernel),
                LayerNode::RGConv(l) => {
                    out.extend(l.banks.iter_mut());
                    out.push(&mut l.w);
                }
                LayerNode::Steer(l) => out.push(&mut l.w),
                LayerNode::RSteer(l) => out.push(&mut l.w),
                LayerNode::LowRank(l) => {
                    out.push(&mut l.a);
                    out.push(&mut l.b);
                }
                LayerNode::Lift(l) => out.push(&mut l.c),
                LayerNode::Project(l) => out.push(&mut l.c),
                LayerNode::Relu | LayerNode::Reinterpret { .. } => {}
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                LayerNode::GConv(_) => out.push(format!("n{i}.kernel")),
                LayerNode::RGConv(l) => {
                    for b in 0..l.banks.len() {
                        out.push(format!("n{i}.bank{b}"));
                    }
                    out.push(format!("n{i}.w"));
                }
                LayerNode::Steer(_) => out.push(format!("n{i}.w")),
                LayerNode::RSteer(_) => out.push(format!("n{i}.w")),
                LayerNode::LowRank(_) => {
                    out.push(format!("n{i}.a"));
                    out.push(format!("n{i}.b"));
                }
                LayerNode::Lift(_) => out.push(format!("n{i}.lift_c")),
                LayerNode::Project(_) => out.push(format!("n{i}.proj_c")),
                LayerNode::Relu | LayerNode::Reinterpret { .. } => {}
            }
        }
        out
    }

    pub fn num_scalar_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Soft equivariance penalties over all relaxed layers. Returns
    /// (scaled loss, per-parameter gradients aligned with `params()`,
    /// unscaled weight-variation term).
    pub fn regularizers(&self, alpha: f64) -> Result<(T, Vec<Tensor<T>>, f64)> {
        let mut loss = T::zero();
        let mut raw = 0.0;
        let mut grads: Vec<Tensor<T>> = self
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.dims()))
            .collect();
        let mut idx = 0usize;
        for node in &self.nodes {
            match node {
                LayerNode::GConv(_) => idx += 1,
                LayerNode::RGConv(l) => {
                    idx += l.banks.len();
                    let (v, g) = l_gconv(&l.w, alpha)?;
                    let (raw_v, _) = l_gconv(&l.w, 1.0)?;
                    loss += v;
                    raw += to_f64(raw_v);
                    grads[idx] = g;
                    idx += 1;
                }
                LayerNode::Steer(_) => idx += 1,
                LayerNode::RSteer(l) => {
                    match l.kind {
                        SpatialWeights::PerOffset => {
                            let (v, g) = l_sconv(&l.w, alpha)?;
                            let (raw_v, _) = l_sconv(&l.w, 1.0)?;
                            loss += v;
                            raw += to_f64(raw_v);
                            grads[idx] = g;
                        }
                        SpatialWeights::Angular { .. } => {
                            // pairwise penalty over angular buckets
                            let (v, g) = angular_pairwise_penalty(&l.w, alpha)?;
                            let (raw_v, _) = angular_pairwise_penalty(&l.w, 1.0)?;
                            loss += v;
                            raw += to_f64(raw_v);
                            grads[idx] = g;
                        }
                    }
                    idx += 1;
                }
                LayerNode::LowRank(l) => {
                    // translation relaxation: penalize spatial variation of
                    // the per-position factors
                    let (v, g) = spatial_variation_penalty(&l.a, alpha)?;
                    let (raw_v, _) = spatial_variation_penalty(&l.a, 1.0)?;
                    loss += v;
                    raw += to_f64(raw_v);
                    grads[idx] = g;
                    idx += 1;
                    // rotation relaxation: penalize offset variation of b
                    let (v, g) = lowrank_offset_penalty(&l.b, alpha)?;
                    let (raw_v, _) = lowrank_offset_penalty(&l.b, 1.0)?;
                    loss += v;
                    raw += to_f64(raw_v);
                    grads[idx] = g;
                    idx += 1;
                }
                LayerNode::Lift(_) | LayerNode::Project(_) => idx += 1,
                LayerNode::Relu | LayerNode::Reinterpret { .. } => {}
            }
        }
        Ok((loss, grads, raw))
    }
}

/// Uniform init in [-s, s] with s = 1/sqrt(fan_in).
fn init_uniform<T: Scalar>(t: &mut Tensor<T>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    *t = Tensor::rand_uniform(t.dims(), -s, s, rng);
}

/// Relaxed steerable weights start exactly equivariant: random per
/// (mult_out, mult_in, basis) coefficient, tiled identically over every
/// offset/sector slot.
fn init_tiled_over_offsets<T: Scalar>(w: &mut Tensor<T>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let dims = w.dims().to_vec();
    let (lead, rest): (usize, usize) = match dims.len() {
        5 => (dims[0] * dims[1], dims[2] * dims[3] * dims[4]),
        4 => (dims[0], dims[1] * dims[2] * dims[3]),
        _ => (1, w.len()),
    };
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    let base = Tensor::<T>::rand_uniform(&[rest], -s, s, rng);
    for slot in 0..lead {
        w.data_mut()[slot * rest..(slot + 1) * rest].copy_from_slice(base.data());
    }
}

/// Low-rank b factors start constant over offsets (equivariant start),
/// random per (rank, basis, mult_out, mult_in).
fn init_lowrank_b<T: Scalar>(b: &mut Tensor<T>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let dims = b.dims().to_vec(); // (R, L, ks, ks, om, im)
    let (r_count, l_count, ks, om, im) = (dims[0], dims[1], dims[2], dims[4], dims[5]);
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    for r in 0..r_count {
        for l in 0..l_count {
            for u in 0..om {
                for v in 0..im {
                    let val = cast::<T>((rng.gen::<f64>() * 2.0 - 1.0) * s);
                    for ky in 0..ks {
                        for kx in 0..ks {
                            *b.at_mut(&[r, l, ky, kx, u, v]) = val;
                        }
                    }
                }
            }
        }
    }
}

/// l_gconv-style pairwise penalty across the leading bucket axis of
/// (buckets, om, im, L) angular weights.
fn angular_pairwise_penalty<T: Scalar>(w: &Tensor<T>, alpha: f64) -> Result<(T, Tensor<T>)> {
    let dims = w.dims().to_vec();
    let buckets = dims[0];
    let rest: usize = dims[1..].iter().product();
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&dims);
    for r in 0..rest {
        for a in 0..buckets {
            for b in 0..buckets {
                let diff = w.data()[a * rest + r] - w.data()[b * rest + r];
                loss += diff.abs();
                let s = sign_of(diff);
                grad.data_mut()[a * rest + r] += alpha_t * s;
                grad.data_mut()[b * rest + r] -= alpha_t * s;
            }
        }
    }
    Ok((alpha_t * loss, grad))
}

/// Forward-difference variation of (R, H, W) position factors.
fn spatial_variation_penalty<T: Scalar>(a: &Tensor<T>, alpha: f64) -> Result<(T, Tensor<T>)> {
    let dims = a.dims().to_vec(); // (R, H, W)
    let (r_count, h, w) = (dims[0], dims[1], dims[2]);
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&dims);
    for r in 0..r_count {
        let base = r * h * w;
        for i in 0..h {
            for j in 0..w {
                let idx = base + i * w + j;
                if i + 1 < h {
                    let diff = a.data()[idx + w] - a.data()[idx];
                    loss += diff.abs();
                    let s = sign_of(diff);
                    grad.data_mut()[idx + w] += alpha_t * s;
                    grad.data_mut()[idx] -= alpha_t * s;
                }
                if j + 1 < w {
                    let diff = a.data()[idx + 1] - a.data()[idx];
                    loss += diff.abs();
                    let s = sign_of(diff);
                    grad.data_mut()[idx + 1] += alpha_t * s;
                    grad.data_mut()[idx] -= alpha_t * s;
                }
            }
        }
    }
    Ok((alpha_t * loss, grad))
}

/// Forward-difference variation of the (R, L, ks, ks, om, im) offset factors
/// along the kernel axes.
fn lowrank_offset_penalty<T: Scalar>(b: &Tensor<T>, alpha: f64) -> Result<(T, Tensor<T>)> {
    let dims = b.dims().to_vec();
    let (r_count, l_count, ks) = (dims[0], dims[1], dims[2]);
    let rest = dims[4] * dims[5];
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&dims);
    let idx = |r: usize, l: usize, ky: usize, kx: usize, q: usize| {
        (((r * l_count + l) * ks + ky) * ks + kx) * rest + q
    };
    for r in 0..r_count {
        for l in 0..l_count {
            for ky in 0..ks {
                for kx in 0..ks {
                    for q in 0..rest {
                        if ky + 1 < ks {
                            let diff =
                                b.data()[idx(r, l, ky + 1, kx, q)] - b.data()[idx(r, l, ky, kx, q)];
                            loss += diff.abs();
                            let s = sign_of(diff);
                            grad.data_mut()[idx(r, l, ky + 1, kx, q)] += alpha_t * s;
                            grad.data_mut()[idx(r, l, ky, kx, q)] -= alpha_t * s;
                        }
                        if kx + 1 < ks {
                            let diff =
                                b.data()[idx(r, l, ky, kx + 1, q)] - b.data()[idx(r, l, ky, kx, q)];
                            loss += diff.abs();
                            let s = sign_of(diff);
                            grad.data_mut()[idx(r, l, ky, kx + 1, q)] += alpha_t * s;
                            grad.data_mut()[idx(r, l, ky, kx, q)] -= alpha_t * s;
                        }
                    }
                }
            }
        }
    }
    Ok((alpha_t * loss, grad))
}

use crate::reg::sign as sign_of;
