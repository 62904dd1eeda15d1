//! Materialized networks: weights for every planned layer, forward/backward
//! composition, and a flat registry of trainable arrays in a deterministic
//! order (layer order, weights before bias, gamma before beta).

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelPlan};
use crate::ops::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormState, BnCache,
};
use crate::ops::conv::{
    conv2d_backward, conv2d_forward, sepconv2d_backward, sepconv2d_forward_with_mid, ConvKernel,
    SepConvKernel,
};
use crate::ops::dense::{dense_backward, dense_forward, DenseLayer};
use crate::ops::pool::{maxpool4x4s2_backward, maxpool4x4s2_forward, ArgmaxMap};
use crate::ops::reshape::{
    flatten_backward, flatten_forward, global_avg_pool_backward, global_avg_pool_forward,
};
use crate::ops::{relu_backward, relu_forward};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One instantiated layer.
#[derive(Clone, Debug)]
pub enum Layer<T: Scalar> {
    Conv(ConvKernel<T>),
    SepConv(SepConvKernel<T>),
    Relu,
    MaxPool,
    BatchNorm(BatchNormState<T>),
    Flatten,
    GlobalAvgPool,
    Dense(DenseLayer<T>),
}

impl<T: Scalar> Layer<T> {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv3x3",
            Layer::SepConv(_) => "sepconv3x3",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool4x4s2",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Flatten => "flatten",
            Layer::GlobalAvgPool => "gap",
            Layer::Dense(_) => "dense",
        }
    }
}

/// A trainable array's position in the registry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotMeta {
    /// Index into the layer sequence.
    pub layer: usize,
    /// Which array within the layer ("weights", "bias", "gamma", ...).
    pub name: &'static str,
    pub len: usize,
}

impl SlotMeta {
    pub fn label(&self) -> String {
        format!("layer {} {}", self.layer, self.name)
    }
}

/// Gradients for every trainable array, in registry order.
pub struct Gradients<T> {
    pub slots: Vec<Vec<T>>,
}

/// Everything the backward pass needs from one forward pass. Also carries
/// the refreshed batch-norm moving statistics, which the caller applies with
/// [`Network::commit_batchnorm`] as an explicit state-replacing step.
pub struct ForwardCache<T: Scalar> {
    /// activations[i] is the input of layer i; the last entry is the logits.
    activations: Vec<Tensor4<T>>,
    extras: Vec<Extra<T>>,
    layer_count: usize,
}

enum Extra<T: Scalar> {
    None,
    Pool(ArgmaxMap),
    Bn {
        cache: BnCache<T>,
        new_mean: Vec<T>,
        new_var: Vec<T>,
    },
    SepMid(Tensor4<T>),
}

impl<T: Scalar> ForwardCache<T> {
    pub fn logits(&self) -> &Tensor4<T> {
        self.activations.last().expect("cache holds the logits")
    }

    /// Input of layer `i` (activation flowing into it).
    pub fn layer_input(&self, i: usize) -> &Tensor4<T> {
        &self.activations[i]
    }
}

/// Weights, batch-norm statistics, and the seed that produced them.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    plan: ModelPlan,
    layers: Vec<Layer<T>>,
    seed: u64,
}

/// Uniform Glorot-style bound: sqrt(6 / (fan_in + fan_out)).
fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform<T: Scalar>(rng: &mut ChaCha8Rng, buf: &mut [T], limit: f64) {
    let dist = Uniform::new(-limit, limit);
    for v in buf.iter_mut() {
        *v = T::from_f64(rng.sample(dist));
    }
}

/// Materializes a plan. Identical seeds produce bit-identical states.
pub fn init_network<T: Scalar>(plan: &ModelPlan, seed: u64) -> Network<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = plan
        .layers()
        .iter()
        .map(|spec| match *spec {
            LayerSpec::Conv { in_ch, out_ch } => {
                let mut k = ConvKernel::zeros(in_ch, out_ch);
                fill_uniform(&mut rng, &mut k.weights, glorot_limit(9 * in_ch, 9 * out_ch));
                Layer::Conv(k)
            }
            LayerSpec::SepConv { in_ch, out_ch } => {
                let mut k = SepConvKernel::zeros(in_ch, out_ch);
                fill_uniform(&mut rng, &mut k.depthwise, glorot_limit(9 * in_ch, 9));
                fill_uniform(&mut rng, &mut k.pointwise, glorot_limit(in_ch, out_ch));
                Layer::SepConv(k)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool => Layer::MaxPool,
            LayerSpec::BatchNorm { ch } => Layer::BatchNorm(BatchNormState::new(ch)),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let mut d = DenseLayer::zeros(in_features, out_features);
                fill_uniform(&mut rng, &mut d.weights, glorot_limit(in_features, out_features));
                Layer::Dense(d)
            }
        })
        .collect();
    Network {
        plan: plan.clone(),
        layers,
        seed,
    }
}

impl<T: Scalar> Network<T> {
    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let (h, w, c) = self.plan.input_shape();
        if (x.h(), x.w(), x.c()) != (h, w, c) {
            return Err(Error::shape(format!(
                "network input must be (n, {h}, {w}, {c}), got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    /// Every scalar the network owns, moving statistics included. Matches
    /// the plan's grand parameter total.
    pub fn scalar_param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(k) => k.param_count() as u64,
                Layer::SepConv(k) => k.param_count() as u64,
                Layer::BatchNorm(s) => s.param_count() as u64,
                Layer::Dense(d) => d.param_count() as u64,
                _ => 0,
            })
            .sum()
    }

    /// Registry order: layer order, weights before bias, gamma before beta.
    pub fn param_slots(&self) -> Vec<SlotMeta> {
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(k) => {
                    slots.push(SlotMeta { layer: i, name: "weights", len: k.weights.len() });
                    slots.push(SlotMeta { layer: i, name: "bias", len: k.bias.len() });
                }
                Layer::SepConv(k) => {
                    slots.push(SlotMeta { layer: i, name: "depthwise", len: k.depthwise.len() });
                    slots.push(SlotMeta { layer: i, name: "pointwise", len: k.pointwise.len() });
                    slots.push(SlotMeta { layer: i, name: "bias", len: k.bias.len() });
                }
                Layer::BatchNorm(s) => {
                    slots.push(SlotMeta { layer: i, name: "gamma", len: s.gamma.len() });
                    slots.push(SlotMeta { layer: i, name: "beta", len: s.beta.len() });
                }
                Layer::Dense(d) => {
                    slots.push(SlotMeta { layer: i, name: "weights", len: d.weights.len() });
                    slots.push(SlotMeta { layer: i, name: "bias", len: d.bias.len() });
                }
                _ => {}
            }
        }
        slots
    }

    /// Visits every trainable array in registry order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut [T])) {
        let mut slot = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(k) => {
                    f(slot, &mut k.weights);
                    f(slot + 1, &mut k.bias);
                    slot += 2;
                }
                Layer::SepConv(k) => {
                    f(slot, &mut k.depthwise);
                    f(slot + 1, &mut k.pointwise);
                    f(slot + 2, &mut k.bias);
                    slot += 3;
                }
                Layer::BatchNorm(s) => {
                    f(slot, &mut s.gamma);
                    f(slot + 1, &mut s.beta);
                    slot += 2;
                }
                Layer::Dense(d) => {
                    f(slot, &mut d.weights);
                    f(slot + 1, &mut d.bias);
                    slot += 2;
                }
                _ => {}
            }
        }
    }

    /// Train-mode forward: batch statistics for batch norm, full cache for
    /// the backward pass. The network itself is not mutated; refreshed
    /// moving statistics ride along in the cache until committed.
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut extras = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for layer in &self.layers {
            let cur = activations.last().expect("nonempty");
            let (next, extra) = match layer {
                Layer::Conv(k) => (conv2d_forward(cur, k)?, Extra::None),
                Layer::SepConv(k) => {
                    let (y, mid) = sepconv2d_forward_with_mid(cur, k)?;
                    (y, Extra::SepMid(mid))
                }
                Layer::Relu => (relu_forward(cur), Extra::None),
                Layer::MaxPool => {
                    let (y, map) = maxpool4x4s2_forward(cur);
                    (y, Extra::Pool(map))
                }
                Layer::BatchNorm(s) => {
                    let (y, cache, next_state) = batchnorm_forward_train(cur, s)?;
                    (
                        y,
                        Extra::Bn {
                            cache,
                            new_mean: next_state.moving_mean,
                            new_var: next_state.moving_var,
                        },
                    )
                }
                Layer::Flatten => (flatten_forward(cur), Extra::None),
                Layer::GlobalAvgPool => (global_avg_pool_forward(cur), Extra::None),
                Layer::Dense(d) => (dense_forward(cur, d)?, Extra::None),
            };
            activations.push(next);
            extras.push(extra);
        }
        Ok(ForwardCache {
            activations,
            extras,
            layer_count: self.layers.len(),
        })
    }

    /// Infer-mode forward: moving statistics, no cache, bit-identical on
    /// repeated calls.
    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(k) => conv2d_forward(&cur, k)?,
                Layer::SepConv(k) => {
                    let (y, _) = sepconv2d_forward_with_mid(&cur, k)?;
                    y
                }
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool => maxpool4x4s2_forward(&cur).0,
                Layer::BatchNorm(s) => batchnorm_forward_infer(&cur, s)?,
                Layer::Flatten => flatten_forward(&cur),
                Layer::GlobalAvgPool => global_avg_pool_forward(&cur),
                Layer::Dense(d) => dense_forward(&cur, d)?,
            };
        }
        Ok(cur)
    }

    /// Copies the cache's refreshed batch-norm moving statistics into the
    /// network. Call once per training step, after the forward pass.
    pub fn commit_batchnorm(&mut self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.layer_count != self.layers.len() {
            return Err(Error::shape(
                "commit_batchnorm: cache does not belong to this network".to_string(),
            ));
        }
        for (layer, extra) in self.layers.iter_mut().zip(&cache.extras) {
            if let (Layer::BatchNorm(s), Extra::Bn { new_mean, new_var, .. }) = (layer, extra) {
                s.moving_mean.copy_from_slice(new_mean);
                s.moving_var.copy_from_slice(new_var);
            }
        }
        Ok(())
    }

    /// Chain-rule composition of the per-op backward passes; gradient arrays
    /// come back in registry order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        if cache.layer_count != self.layers.len() || cache.extras.len() != self.layers.len() {
            return Err(Error::shape(
                "backward: cache does not belong to this network".to_string(),
            ));
        }
        if grad_logits.dims() != cache.logits().dims() {
            return Err(Error::shape(format!(
                "backward: grad_logits dims {:?} do not match logits {:?}",
                grad_logits.dims(),
                cache.logits().dims()
            )));
        }

        let slots = self.param_slots();
        let mut grads: Vec<Vec<T>> = slots.iter().map(|s| vec![T::ZERO; s.len]).collect();
        // Map (layer index) -> first slot index.
        let mut first_slot = vec![usize::MAX; self.layers.len()];
        for (si, meta) in slots.iter().enumerate() {
            if first_slot[meta.layer] == usize::MAX {
                first_slot[meta.layer] = si;
            }
        }

        let mut grad = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let extra = &cache.extras[i];
            grad = match (layer, extra) {
                (Layer::Conv(k), Extra::None) => {
                    let g = conv2d_backward(input, k, &grad)?;
                    grads[first_slot[i]] = g.grad_weights;
                    grads[first_slot[i] + 1] = g.grad_bias;
                    g.grad_x
                }
                (Layer::SepConv(k), Extra::SepMid(mid)) => {
                    let g = sepconv2d_backward(input, mid, k, &grad)?;
                    grads[first_slot[i]] = g.grad_depthwise;
                    grads[first_slot[i] + 1] = g.grad_pointwise;
                    grads[first_slot[i] + 2] = g.grad_bias;
                    g.grad_x
                }
                (Layer::Relu, _) => relu_backward(input, &grad)?,
                (Layer::MaxPool, Extra::Pool(map)) => maxpool4x4s2_backward(map, &grad)?,
                (Layer::BatchNorm(s), Extra::Bn { cache: bn, .. }) => {
                    let (gx, dgamma, dbeta) = batchnorm_backward(bn, s, &grad)?;
                    grads[first_slot[i]] = dgamma;
                    grads[first_slot[i] + 1] = dbeta;
                    gx
                }
                (Layer::Flatten, _) => flatten_backward(input.dims(), &grad)?,
                (Layer::GlobalAvgPool, _) => global_avg_pool_backward(input.dims(), &grad)?,
                (Layer::Dense(d), Extra::None) => {
                    let g = dense_backward(input, d, &grad)?;
                    grads[first_slot[i]] = g.grad_weights;
                    grads[first_slot[i] + 1] = g.grad_bias;
                    g.grad_x
                }
                (layer, _) => {
                    return Err(Error::shape(format!(
                        "backward: cache entry {} does not match layer kind {}",
                        i,
                        layer.kind()
                    )))
                }
            };
        }
        Ok(Gradients { slots: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_plan, count_params, HyperParams};
    use crate::testutil::random_tensor;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            input_shape: (8, 8, 1),
            num_classes: 3,
            k: 1.5,
            width: 2,
            nl: (2, 1),
            separ: false,
            flat: true,
            add_layer: false,
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_networks() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let a: Network<f32> = init_network(&plan, 7);
        let b: Network<f32> = init_network(&plan, 7);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            match (la, lb) {
                (Layer::Conv(x), Layer::Conv(y)) => assert_eq!(x, y),
                (Layer::Dense(x), Layer::Dense(y)) => assert_eq!(x, y),
                (Layer::BatchNorm(x), Layer::BatchNorm(y)) => assert_eq!(x, y),
                _ => {}
            }
        }
        let c: Network<f32> = init_network(&plan, 8);
        let differs = match (&a.layers()[0], &c.layers()[0]) {
            (Layer::Conv(x), Layer::Conv(y)) => x.weights != y.weights,
            _ => false,
        };
        assert!(differs);
    }

    #[test]
    fn materialized_count_matches_plan_total() {
        for (separ, flat) in [(false, true), (false, false), (true, true), (true, false)] {
            let mut hp = tiny_hp();
            hp.separ = separ;
            hp.flat = flat;
            let plan = build_plan(&hp).unwrap();
            let net: Network<f32> = init_network(&plan, 1);
            assert_eq!(net.scalar_param_count(), count_params(&plan).total);
        }
    }

    #[test]
    fn init_weights_respect_glorot_bound() {
        // One million draws through the same sampling path used by init.
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut buf = vec![0.0f32; 1_000_000];
        let limit = glorot_limit(1000, 1000);
        fill_uniform(&mut rng, &mut buf, limit);
        assert!(buf.iter().all(|v| (v.abs() as f64) <= limit));
        // The draws actually spread toward the bound.
        assert!(buf.iter().any(|v| (v.abs() as f64) > 0.9 * limit));
    }

    #[test]
    fn forward_output_shape_is_batch_by_classes() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 3);
        for n in [1usize, 2, 5] {
            let x = random_tensor::<f32>(n, 8, 8, 1, n as u64);
            let y = net.forward_infer(&x).unwrap();
            assert_eq!(y.dims(), [n, 1, 1, 3]);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 3);
        let x = random_tensor::<f32>(1, 9, 8, 1, 5);
        assert!(net.forward_infer(&x).is_err());
    }

    #[test]
    fn infer_forward_is_pure() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 9);
        let x = random_tensor::<f32>(2, 8, 8, 1, 10);
        let a = net.forward_infer(&x).unwrap();
        let b = net.forward_infer(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_grad_logits_gives_all_zero_registry() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f64> = init_network(&plan, 11);
        let x = random_tensor::<f64>(2, 8, 8, 1, 12);
        let cache = net.forward_train(&x).unwrap();
        let zeros = Tensor4::<f64>::zeros(2, 1, 1, 3);
        let grads = net.backward(&cache, &zeros).unwrap();
        for slot in &grads.slots {
            assert!(slot.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 1);
        let mut hp2 = tiny_hp();
        hp2.nl = (1, 1);
        let other: Network<f32> = init_network(&build_plan(&hp2).unwrap(), 1);
        let x = random_tensor::<f32>(2, 8, 8, 1, 2);
        let cache = other.forward_train(&x).unwrap();
        let g = random_tensor::<f32>(2, 1, 1, 3, 3);
        assert!(net.backward(&cache, &g).is_err());
    }

    #[test]
    fn registry_order_is_layerwise_weights_then_bias() {
        let plan = build_plan(&tiny_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 1);
        let slots = net.param_slots();
        let mut last_layer = 0;
        for meta in &slots {
            assert!(meta.layer >= last_layer);
            last_layer = meta.layer;
        }
        // First conv layer contributes weights then bias.
        assert_eq!(slots[0].name, "weights");
        assert_eq!(slots[1].name, "bias");
        let total: usize = slots.iter().map(|s| s.len).sum();
        let report = count_params(&plan);
        assert_eq!(total as u64, report.trainable);
    }
}
