//! Checkpoints: a directory holding one tensor file per parameter plus a
//! `params.toml` manifest with shapes, the training seed, the config hash,
//! and the gradient-reversal factors.
//!
//! Tensors are stored in the same binary container as clips (f64 payload),
//! so a checkpoint can be inspected with the ordinary tensor tooling.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array5};
use serde::{Deserialize, Serialize};

use super::model::{
    AffineLayer, Conv3dLayer, ModelParams, TConv3dLayer, CONV_STRIDES, DEC_OUT_PAD, DEC_STRIDES,
};
use super::NetError;
use crate::dataio::{read_tensor_f64, write_tensor_f64};

pub const MANIFEST_NAME: &str = "params.toml";
const FORMAT_TAG: &str = "osar-model-v1";

/// Provenance carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub config_hash: String,
    pub epoch: usize,
    pub arm: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    seed: u64,
    config_hash: String,
    epoch: usize,
    arm: String,
    lambda_d: f64,
    lambda_s: f64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    dims: Vec<u32>,
}

fn tensor_file_name(name: &str) -> String {
    format!("{}.vtn", name.replace('.', "_"))
}

fn io_err(path: &Path, source: std::io::Error) -> NetError {
    NetError::Data(crate::dataio::DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(dir: &Path, p: &ModelParams, info: &CheckpointInfo) -> Result<(), NetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::new();
    for (name, view) in p.tensors() {
        let dims: Vec<u32> = view.shape().iter().map(|&d| d as u32).collect();
        let data: Vec<f64> = view.iter().copied().collect();
        let file = tensor_file_name(name);
        write_tensor_f64(&dir.join(&file), &dims, &data)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            file,
            dims,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT_TAG.to_string(),
        seed: info.seed,
        config_hash: info.config_hash.clone(),
        epoch: info.epoch,
        arm: info.arm.clone(),
        lambda_d: p.lambda_d,
        lambda_s: p.lambda_s,
        tensors: entries,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| NetError::Checkpoint(format!("serialize manifest: {e}")))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

struct TensorStore {
    tensors: HashMap<String, (Vec<u32>, Vec<f64>)>,
}

impl TensorStore {
    fn take5(&mut self, name: &str) -> Result<Array5<f64>, NetError> {
        let (dims, data) = self.take(name, 5)?;
        let d: [usize; 5] = std::array::from_fn(|i| dims[i] as usize);
        Ok(Array5::from_shape_vec((d[0], d[1], d[2], d[3], d[4]), data).unwrap())
    }

    fn take2(&mut self, name: &str) -> Result<Array2<f64>, NetError> {
        let (dims, data) = self.take(name, 2)?;
        Ok(Array2::from_shape_vec((dims[0] as usize, dims[1] as usize), data).unwrap())
    }

    fn take1(&mut self, name: &str) -> Result<Array1<f64>, NetError> {
        let (_, data) = self.take(name, 1)?;
        Ok(Array1::from_vec(data))
    }

    fn take(&mut self, name: &str, rank: usize) -> Result<(Vec<u32>, Vec<f64>), NetError> {
        let (dims, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name:?}")))?;
        if dims.len() != rank {
            return Err(NetError::Checkpoint(format!(
                "tensor {name:?} has rank {}, expected {rank}",
                dims.len()
            )));
        }
        Ok((dims, data))
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointInfo), NetError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: CheckpointManifest = toml::from_str(&text)
        .map_err(|e| NetError::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != FORMAT_TAG {
        return Err(NetError::Checkpoint(format!(
            "unsupported format {:?} (expected {FORMAT_TAG:?})",
            manifest.format
        )));
    }

    let mut tensors = HashMap::new();
    for entry in &manifest.tensors {
        let (dims, data) = read_tensor_f64(&dir.join(&entry.file))?;
        if dims != entry.dims {
            return Err(NetError::Checkpoint(format!(
                "tensor {:?}: file dims {dims:?} disagree with manifest dims {:?}",
                entry.name, entry.dims
            )));
        }
        tensors.insert(entry.name.clone(), (dims, data));
    }
    let mut store = TensorStore { tensors };

    let conv = [
        Conv3dLayer {
            w: store.take5("conv0.w")?,
            b: store.take1("conv0.b")?,
            stride: CONV_STRIDES[0],
        },
        Conv3dLayer {
            w: store.take5("conv1.w")?,
            b: store.take1("conv1.b")?,
            stride: CONV_STRIDES[1],
        },
        Conv3dLayer {
            w: store.take5("conv2.w")?,
            b: store.take1("conv2.b")?,
            stride: CONV_STRIDES[2],
        },
    ];
    let dec = [
        TConv3dLayer {
            w: store.take5("dec0.w")?,
            b: store.take1("dec0.b")?,
            stride: DEC_STRIDES[0],
            out_pad: DEC_OUT_PAD[0],
        },
        TConv3dLayer {
            w: store.take5("dec1.w")?,
            b: store.take1("dec1.b")?,
            stride: DEC_STRIDES[1],
            out_pad: DEC_OUT_PAD[1],
        },
        TConv3dLayer {
            w: store.take5("dec2.w")?,
            b: store.take1("dec2.b")?,
            stride: DEC_STRIDES[2],
            out_pad: DEC_OUT_PAD[2],
        },
    ];
    let params = ModelParams {
        conv,
        edl: AffineLayer {
            w: store.take2("edl.w")?,
            b: store.take1("edl.b")?,
        },
        dec,
        scene1: AffineLayer {
            w: store.take2("scene1.w")?,
            b: store.take1("scene1.b")?,
        },
        scene2: AffineLayer {
            w: store.take2("scene2.w")?,
            b: store.take1("scene2.b")?,
        },
        lambda_d: manifest.lambda_d,
        lambda_s: manifest.lambda_s,
    };
    if let Some(extra) = store.tensors.keys().next() {
        return Err(NetError::Checkpoint(format!(
            "unexpected tensor {extra:?} in manifest"
        )));
    }
    Ok((
        params,
        CheckpointInfo {
            seed: manifest.seed,
            config_hash: manifest.config_hash,
            epoch: manifest.epoch,
            arm: manifest.arm,
        },
    ))
}
