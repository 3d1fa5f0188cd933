//! JSON weight files.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Scaling};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    /// Row-major `out x in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    scaling: Scaling,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn net_to_json(net: &DenseNet) -> String {
    let file = WeightFile {
        format_version: FORMAT_VERSION,
        layer_dims: net.layer_dims.clone(),
        activations: net.activations.clone(),
        weights: net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
        biases: net.biases.iter().map(|b| b.to_vec()).collect(),
        scaling: net.scaling,
    };
    serde_json::to_string(&file).expect("weight file serialises")
}

pub fn net_from_json(text: &str) -> Result<DenseNet> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::from_json("weight file", e))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: probe.format_version,
        });
    }
    let file: WeightFile =
        serde_json::from_str(text).map_err(|e| Error::from_json("weight file", e))?;
    if file.weights.len() + 1 != file.layer_dims.len() {
        return Err(Error::parse("weights", "layer count does not match layer_dims"));
    }
    let weights = file
        .weights
        .into_iter()
        .zip(file.layer_dims.windows(2))
        .enumerate()
        .map(|(i, (flat, pair))| {
            Array2::from_shape_vec((pair[1], pair[0]), flat)
                .map_err(|e| Error::parse(format!("weights[{i}]"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    let biases = file.biases.into_iter().map(Array1::from).collect();
    DenseNet::from_parts(file.layer_dims, file.activations, weights, biases, file.scaling)
}

pub fn save_net(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, net_to_json(net))?;
    Ok(())
}

pub fn load_net(path: impl AsRef<Path>) -> Result<DenseNet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    net_from_json(&text)
}
