//! Architecture planning: translate the six NL-CNN hyper-parameters into a
//! concrete layer sequence, and compute exact parameter counts, MAC
//! estimates, and receptive fields without materializing any weights.
//!
//! A network is a stack of macro-layers. Macro-layer `i` runs `nl_i` blocks
//! of (3×3 conv → ReLU) at `f_i` filters, then a 4×4/stride-2 max-pool, then
//! one batch normalization over `f_i` channels. Filter counts follow the
//! iterated-floor law `f_0 = width`, `f_{i+1} = floor(k·f_i)`. The head is
//! either a flatten or a global average pool feeding a dense softmax
//! classifier.

use crate::error::{Error, Result};
use crate::ops::pool::pool_out_dim;
use serde::{Deserialize, Serialize};

/// The six paper knobs plus input shape and class count. Fully determines an
/// architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// (height, width, channels) of one input sample.
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    /// Filter expansion factor applied between macro-layers.
    pub k: f64,
    /// Filters in the first macro-layer.
    pub width: usize,
    /// Conv cascade depths of the first and second macro-layers; later
    /// macro-layers always use depth 1.
    pub nl: (usize, usize),
    /// Replace every convolution with a depthwise-separable one.
    pub separ: bool,
    /// Head: true = flatten all activations, false = global average pool.
    pub flat: bool,
    /// Append a fourth macro-layer (for larger inputs).
    pub add_layer: bool,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if h < 8 || w < 8 {
            return Err(Error::config(format!(
                "input spatial dims must be at least 8x8 so three pooling halvings stay >= 1, got {h}x{w}"
            )));
        }
        if c < 1 {
            return Err(Error::config("input must have at least 1 channel"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::config(format!(
                "expansion factor k must be a positive real, got {}",
                self.k
            )));
        }
        if self.width < 1 {
            return Err(Error::config("width must be at least 1"));
        }
        if self.nl.0 < 1 || self.nl.1 < 1 {
            return Err(Error::config(format!(
                "nl pair must be at least (1,1), got ({},{})",
                self.nl.0, self.nl.1
            )));
        }
        Ok(())
    }

    pub fn macro_layer_count(&self) -> usize {
        3 + usize::from(self.add_layer)
    }

    /// Conv cascade depth of macro-layer `i`.
    pub fn cascade_depth(&self, i: usize) -> usize {
        match i {
            0 => self.nl.0,
            1 => self.nl.1,
            _ => 1,
        }
    }
}

/// Side of the input neighborhood one macro-layer output pixel sees before
/// pooling: 3 + 2·(nl − 1).
pub fn receptive_field(cascade_depth: usize) -> usize {
    3 + 2 * (cascade_depth - 1)
}

/// One resolved macro-layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroLayerSpec {
    pub filters: usize,
    pub conv_count: usize,
    pub separable: bool,
}

/// One concrete layer in execution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize },
    SepConv { in_ch: usize, out_ch: usize },
    Relu,
    MaxPool,
    BatchNorm { ch: usize },
    Flatten,
    GlobalAvgPool,
    Dense { in_features: usize, out_features: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv3x3",
            LayerSpec::SepConv { .. } => "sepconv3x3",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool4x4s2",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Trainable + non-trainable scalars owned by this layer.
    pub fn param_count(&self) -> u64 {
        match *self {
            LayerSpec::Conv { in_ch, out_ch } => (9 * in_ch as u64 + 1) * out_ch as u64,
            LayerSpec::SepConv { in_ch, out_ch } => {
                9 * in_ch as u64 + (in_ch as u64) * out_ch as u64 + out_ch as u64
            }
            LayerSpec::BatchNorm { ch } => 4 * ch as u64,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (in_features as u64 + 1) * out_features as u64,
            _ => 0,
        }
    }

    /// Scalars that never receive gradients (batch-norm moving statistics).
    pub fn non_trainable_count(&self) -> u64 {
        match *self {
            LayerSpec::BatchNorm { ch } => 2 * ch as u64,
            _ => 0,
        }
    }

    /// Multiply-accumulates for one sample at the given output resolution.
    pub fn mac_count(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        match *self {
            LayerSpec::Conv { in_ch, out_ch } => hw * 9 * in_ch as u64 * out_ch as u64,
            LayerSpec::SepConv { in_ch, out_ch } => {
                hw * (9 * in_ch as u64 + in_ch as u64 * out_ch as u64)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features as u64 * out_features as u64,
            _ => 0,
        }
    }
}

/// Ordered layer plan with resolved filter counts and per-layer shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    hp: HyperParams,
    macro_layers: Vec<MacroLayerSpec>,
    /// Batch norm sits after the pool by default; the flag is kept explicit
    /// because the placement is parameter-count-invariant.
    bn_before_pool: bool,
    layers: Vec<LayerSpec>,
    /// Per-sample (h, w, c) after each layer.
    output_shapes: Vec<(usize, usize, usize)>,
}

impl ModelPlan {
    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }
    pub fn macro_layers(&self) -> &[MacroLayerSpec] {
        &self.macro_layers
    }
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }
    pub fn output_shapes(&self) -> &[(usize, usize, usize)] {
        &self.output_shapes
    }
    pub fn num_classes(&self) -> usize {
        self.hp.num_classes
    }
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.hp.input_shape
    }

    /// Resolved filter counts f_0..f_{L−1}.
    pub fn filters(&self) -> Vec<usize> {
        self.macro_layers.iter().map(|m| m.filters).collect()
    }
}

/// The filter law: f_0 = width, f_{i+1} = floor(k·f_i).
pub fn filter_counts(width: usize, k: f64, macro_layers: usize) -> Vec<usize> {
    let mut f = Vec::with_capacity(macro_layers);
    let mut cur = width;
    for _ in 0..macro_layers {
        f.push(cur);
        cur = (k * cur as f64).floor() as usize;
    }
    f
}

/// Turns hyper-parameters into a deterministic layer plan.
pub fn build_plan(hp: &HyperParams) -> Result<ModelPlan> {
    hp.validate()?;
    let count = hp.macro_layer_count();
    let filters = filter_counts(hp.width, hp.k, count);
    for (i, &f) in filters.iter().enumerate() {
        if f < 1 {
            return Err(Error::config(format!(
                "macro-layer {i} resolves to {f} filters (width={}, k={})",
                hp.width, hp.k
            )));
        }
    }

    let (mut h, mut w, mut c) = hp.input_shape;
    let mut layers = Vec::new();
    let mut shapes = Vec::new();
    let mut macro_layers = Vec::new();

    let mut push = |layers: &mut Vec<LayerSpec>,
                    shapes: &mut Vec<(usize, usize, usize)>,
                    spec: LayerSpec,
                    shape: (usize, usize, usize)| {
        layers.push(spec);
        shapes.push(shape);
    };

    for (i, &f) in filters.iter().enumerate() {
        let depth = hp.cascade_depth(i);
        macro_layers.push(MacroLayerSpec {
            filters: f,
            conv_count: depth,
            separable: hp.separ,
        });
        for _ in 0..depth {
            let spec = if hp.separ {
                LayerSpec::SepConv { in_ch: c, out_ch: f }
            } else {
                LayerSpec::Conv { in_ch: c, out_ch: f }
            };
            c = f;
            push(&mut layers, &mut shapes, spec, (h, w, c));
            push(&mut layers, &mut shapes, LayerSpec::Relu, (h, w, c));
        }
        h = pool_out_dim(h);
        w = pool_out_dim(w);
        if h < 1 || w < 1 {
            return Err(Error::config(format!(
                "macro-layer {i} collapses spatial dims below 1x1"
            )));
        }
        push(&mut layers, &mut shapes, LayerSpec::MaxPool, (h, w, c));
        push(&mut layers, &mut shapes, LayerSpec::BatchNorm { ch: c }, (h, w, c));
    }

    let features = if hp.flat {
        let flat = h * w * c;
        push(&mut layers, &mut shapes, LayerSpec::Flatten, (1, 1, flat));
        flat
    } else {
        push(&mut layers, &mut shapes, LayerSpec::GlobalAvgPool, (1, 1, c));
        c
    };
    push(
        &mut layers,
        &mut shapes,
        LayerSpec::Dense {
            in_features: features,
            out_features: hp.num_classes,
        },
        (1, 1, hp.num_classes),
    );

    Ok(ModelPlan {
        hp: hp.clone(),
        macro_layers,
        bn_before_pool: false,
        layers,
        output_shapes: shapes,
    })
}

/// One row of the layer table.
#[derive(Clone, Debug)]
pub struct LayerRow {
    pub index: usize,
    pub kind: String,
    pub out_shape: (usize, usize, usize),
    pub params: u64,
}

/// Per-layer parameter counts plus totals and a MAC estimate for one forward
/// pass of a single sample.
#[derive(Clone, Debug)]
pub struct ParamReport {
    pub rows: Vec<LayerRow>,
    pub trainable: u64,
    pub non_trainable: u64,
    pub total: u64,
    pub mac_estimate: u64,
    /// Receptive-field side per macro-layer.
    pub receptive_fields: Vec<usize>,
}

impl ParamReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<6} {:<22} {:<12} {:>12}\n",
            "layer", "kind", "out_shape", "params"
        ));
        for row in &self.rows {
            let shape = format!("{}x{}x{}", row.out_shape.0, row.out_shape.1, row.out_shape.2);
            out.push_str(&format!(
                "{:<6} {:<22} {:<12} {:>12}\n",
                row.index, row.kind, shape, row.params
            ));
        }
        out.push_str(&format!("trainable params     {:>12}\n", self.trainable));
        out.push_str(&format!("non-trainable params {:>12}\n", self.non_trainable));
        out.push_str(&format!("total params         {:>12}\n", self.total));
        out.push_str(&format!("macs per sample      {:>12}\n", self.mac_estimate));
        let rf: Vec<String> = self
            .receptive_fields
            .iter()
            .enumerate()
            .map(|(i, r)| format!("macro {i}: {r}x{r}"))
            .collect();
        out.push_str(&format!("receptive fields     {}\n", rf.join(", ")));
        out
    }

    /// CSV rows (columns: layer, kind, out_shape, params).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,out_shape,params\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}x{}x{},{}\n",
                row.index, row.kind, row.out_shape.0, row.out_shape.1, row.out_shape.2, row.params
            ));
        }
        out
    }
}

/// Exact per-layer parameter counts for a plan.
pub fn count_params(plan: &ModelPlan) -> ParamReport {
    let mut rows = Vec::with_capacity(plan.layers.len());
    let mut trainable = 0u64;
    let mut non_trainable = 0u64;
    for (i, (spec, &shape)) in plan.layers.iter().zip(&plan.output_shapes).enumerate() {
        let params = spec.param_count();
        let kind = match spec {
            LayerSpec::Conv { in_ch, out_ch } => format!("conv3x3 {in_ch}->{out_ch}"),
            LayerSpec::SepConv { in_ch, out_ch } => format!("sepconv3x3 {in_ch}->{out_ch}"),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => format!("dense {in_features}->{out_features}"),
            other => other.kind().to_string(),
        };
        non_trainable += spec.non_trainable_count();
        trainable += params - spec.non_trainable_count();
        rows.push(LayerRow {
            index: i,
            kind,
            out_shape: shape,
            params,
        });
    }
    ParamReport {
        rows,
        trainable,
        non_trainable,
        total: trainable + non_trainable,
        mac_estimate: estimate_macs(plan),
        receptive_fields: plan
            .macro_layers
            .iter()
            .map(|m| receptive_field(m.conv_count))
            .collect(),
    }
}

/// Multiply-accumulate count for one forward pass of a single sample.
pub fn estimate_macs(plan: &ModelPlan) -> u64 {
    let (h0, w0, _) = plan.hp.input_shape;
    let mut total = 0u64;
    let mut prev = (h0, w0);
    for (spec, &shape) in plan.layers.iter().zip(&plan.output_shapes) {
        total += spec.mac_count(prev.0, prev.1);
        prev = (shape.0, shape.1);
    }
    total
}
