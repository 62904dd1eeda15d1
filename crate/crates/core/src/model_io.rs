//! Self-describing binary weight files.
//!
//! Layout: magic "NLCW", u16 LE format version, u32 LE header length, UTF-8
//! JSON header (hyper-parameters, layer list, seed, metrics summary, payload
//! CRC), then every persisted array as little-endian f32 in registry order —
//! for each layer: weights before bias, gamma before beta, with batch-norm
//! moving statistics following their layer's trainable arrays.

use crate::error::{Error, Result};
use crate::model::{build_plan, HyperParams};
use crate::network::{init_network, Layer, Network};
use crate::trainer::RunMetrics;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"NLCW";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub best_test_acc: f64,
    pub total_train_seconds: f64,
    pub epochs: usize,
}

impl From<&RunMetrics> for MetricsSummary {
    fn from(m: &RunMetrics) -> Self {
        MetricsSummary {
            best_test_acc: m.best_test_acc,
            total_train_seconds: m.total_train_seconds,
            epochs: m.rows.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDesc {
    kind: String,
    arrays: Vec<(String, usize)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper_params: HyperParams,
    seed: u64,
    scalar_count: u64,
    payload_crc32: u32,
    layers: Vec<LayerDesc>,
    metrics: Option<MetricsSummary>,
}

/// Persisted arrays of one layer, in file order.
fn layer_arrays(layer: &Layer<f32>) -> Vec<(&'static str, &[f32])> {
    match layer {
        Layer::Conv(k) => vec![("weights", &k.weights[..]), ("bias", &k.bias[..])],
        Layer::SepConv(k) => vec![
            ("depthwise", &k.depthwise[..]),
            ("pointwise", &k.pointwise[..]),
            ("bias", &k.bias[..]),
        ],
        Layer::BatchNorm(s) => vec![
            ("gamma", &s.gamma[..]),
            ("beta", &s.beta[..]),
            ("moving_mean", &s.moving_mean[..]),
            ("moving_var", &s.moving_var[..]),
        ],
        Layer::Dense(d) => vec![("weights", &d.weights[..]), ("bias", &d.bias[..])],
        _ => vec![],
    }
}

fn layer_arrays_mut(layer: &mut Layer<f32>) -> Vec<&mut Vec<f32>> {
    match layer {
        Layer::Conv(k) => vec![&mut k.weights, &mut k.bias],
        Layer::SepConv(k) => vec![&mut k.depthwise, &mut k.pointwise, &mut k.bias],
        Layer::BatchNorm(s) => vec![
            &mut s.gamma,
            &mut s.beta,
            &mut s.moving_mean,
            &mut s.moving_var,
        ],
        Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
        _ => vec![],
    }
}

fn layer_kind(layer: &Layer<f32>) -> &'static str {
    match layer {
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

/// Writes the network, its hyper-parameters, and an optional metrics summary.
pub fn save_model(net: &Network<f32>, metrics: Option<&RunMetrics>, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let mut layers = Vec::new();
    let mut scalar_count = 0u64;
    for layer in net.layers() {
        let arrays = layer_arrays(layer);
        let desc = LayerDesc {
            kind: layer_kind(layer).to_string(),
            arrays: arrays
                .iter()
                .map(|(name, a)| (name.to_string(), a.len()))
                .collect(),
        };
        for (_, a) in arrays {
            scalar_count += a.len() as u64;
            for v in a {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        layers.push(desc);
    }

    let header = Header {
        hyper_params: net.plan().hyper_params().clone(),
        seed: net.seed(),
        scalar_count,
        payload_crc32: crc32fast::hash(&payload),
        layers,
        metrics: metrics.map(MetricsSummary::from),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::config(format!("header encode: {e}")))?;

    let mut out = Vec::with_capacity(10 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Reads a weight file back into a network whose infer-mode outputs are
/// bit-identical to the saved one's.
pub fn load_model(path: &Path) -> Result<(Network<f32>, HyperParams)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 {
        return Err(Error::format(
            bytes.len() as u64,
            "file too short for the NLCW preamble",
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"NLCW\"", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header truncated: need {payload_start} bytes"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[10..payload_start])
        .map_err(|e| Error::format(10, format!("header JSON: {e}")))?;

    let payload = &bytes[payload_start..];
    let expected_bytes = header.scalar_count as usize * 4;
    if payload.len() != expected_bytes {
        return Err(Error::format(
            payload_start as u64,
            format!(
                "payload is {} bytes, header declares {} scalars ({expected_bytes} bytes)",
                payload.len(),
                header.scalar_count
            ),
        ));
    }
    let crc = crc32fast::hash(payload);
    if crc != header.payload_crc32 {
        return Err(Error::format(
            payload_start as u64,
            format!(
                "payload checksum {crc:#010x} does not match header {:#010x}",
                header.payload_crc32
            ),
        ));
    }

    let plan = build_plan(&header.hyper_params)?;
    let mut net: Network<f32> = init_network(&plan, header.seed);
    if net.layers().len() != header.layers.len() {
        return Err(Error::format(
            10,
            format!(
                "header lists {} layers but the plan builds {}",
                header.layers.len(),
                net.layers().len()
            ),
        ));
    }

    let mut cursor = 0usize;
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let desc = &header.layers[li];
        let arrays = layer_arrays_mut(layer);
        if arrays.len() != desc.arrays.len() {
            return Err(Error::format(
                10,
                format!("layer {li}: header lists {} arrays, layer has {}", desc.arrays.len(), arrays.len()),
            ));
        }
        for (target, (name, len)) in arrays.into_iter().zip(&desc.arrays) {
            if target.len() != *len {
                return Err(Error::format(
                    10,
                    format!(
                        "layer {li} {name}: header length {len} does not match plan length {}",
                        target.len()
                    ),
                ));
            }
            for v in target.iter_mut() {
                let b = [
                    payload[cursor],
                    payload[cursor + 1],
                    payload[cursor + 2],
                    payload[cursor + 3],
                ];
                *v = f32::from_le_bytes(b);
                cursor += 4;
            }
        }
    }

    Ok((net, header.hyper_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_params;
    use crate::testutil::random_tensor;

    fn table_one_hp() -> HyperParams {
        HyperParams {
            input_shape: (28, 28, 1),
            num_classes: 10,
            k: 2.0,
            width: 20,
            nl: (2, 2),
            separ: false,
            flat: true,
            add_layer: false,
        }
    }

    #[test]
    fn round_trip_preserves_all_scalars_bitwise() {
        let plan = build_plan(&table_one_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 77);
        assert_eq!(net.scalar_param_count(), 67750);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nlcw");
        save_model(&net, None, &path).unwrap();
        let (loaded, hp) = load_model(&path).unwrap();
        assert_eq!(&hp, net.plan().hyper_params());

        let x = random_tensor::<f32>(3, 28, 28, 1, 5);
        let a = net.forward_infer(&x).unwrap();
        let b = loaded.forward_infer(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_size_is_four_bytes_per_scalar_plus_header() {
        let mut hp = table_one_hp();
        hp.width = 30;
        hp.flat = false;
        let plan = build_plan(&hp).unwrap();
        let report = count_params(&plan);
        assert_eq!(report.total, 124120);
        let net: Network<f32> = init_network(&plan, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nlcw");
        save_model(&net, None, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len();
        let payload = 4 * report.total;
        assert!(size > payload, "file must carry a header");
        // Bytes-to-params ratio stays close to 4.
        let ratio = size as f64 / report.total as f64;
        assert!(ratio < 4.2, "ratio {ratio}");
    }

    #[test]
    fn corrupted_payload_byte_fails_checksum() {
        let plan = build_plan(&table_one_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nlcw");
        save_model(&net, None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let plan = build_plan(&table_one_hp()).unwrap();
        let net: Network<f32> = init_network(&plan, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nlcw");
        save_model(&net, None, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nlcw");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x00\x00").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }
}
