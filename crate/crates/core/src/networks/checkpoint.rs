use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    spec: NetworkSpec,
    entries: Vec<Entry>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` (little-endian f64, parameters then batch-norm moving
/// statistics) and the `<stem>.json` sidecar.
pub fn save_checkpoint(net: &Network, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: [usize; 2], data: &[f64]| {
        entries.push(Entry { name, shape, offset });
        offset += data.len();
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, p) in net.names().iter().zip(&net.params) {
        push(name.clone(), p.shape(), p.data());
    }
    for (k, s) in net.bn.iter().enumerate() {
        push(format!("bn_state{k}.moving_mean"), [1, s.moving_mean.len()], &s.moving_mean);
        push(format!("bn_state{k}.moving_var"), [1, s.moving_var.len()], &s.moving_var);
    }
    let side = Sidecar {
        version: CHECKPOINT_VERSION,
        spec: net.spec,
        entries,
    };
    if let Some(dir) = bin.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin, bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Rebuilds the network layout from the sidecar spec and fills every tensor
/// from the binary file.
pub fn load_checkpoint(stem: &Path) -> Result<Network> {
    let (bin, json) = paths(stem);
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if side.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "sidecar version {} not supported (expected {CHECKPOINT_VERSION})",
            side.version
        )));
    }
    let bytes = fs::read(&bin)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("{} is not a whole number of f64", bin.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut net = Network::build(side.spec, 0)?;
    let n_params = net.params.len();
    if side.entries.len() != n_params + 2 * net.bn.len() {
        return Err(Error::Checkpoint(format!(
            "sidecar lists {} entries, layout needs {}",
            side.entries.len(),
            n_params + 2 * net.bn.len()
        )));
    }
    for (k, e) in side.entries.iter().enumerate() {
        let len = e.shape[0] * e.shape[1];
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("entry `{}` runs past the end of the data", e.name)))?
            .to_vec();
        if k < n_params {
            if net.names()[k] != e.name {
                return Err(Error::Checkpoint(format!("entry `{}` where `{}` was expected", e.name, net.names()[k])));
            }
            if net.params[k].shape() != e.shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` has shape {:?}, layout needs {:?}",
                    e.name,
                    e.shape,
                    net.params[k].shape()
                )));
            }
            net.params[k] = Tensor::new(e.shape[0], e.shape[1], data)?;
        } else {
            let j = k - n_params;
            let s = &mut net.bn[j / 2];
            let slot = if j % 2 == 0 { &mut s.moving_mean } else { &mut s.moving_var };
            if slot.len() != len {
                return Err(Error::Checkpoint(format!("entry `{}` has {len} values, layout needs {}", e.name, slot.len())));
            }
            *slot = data;
        }
    }
    Ok(net)
}
