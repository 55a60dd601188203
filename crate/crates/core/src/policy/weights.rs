//! JSON weight files.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "kind": "policy",
//!   "obs_dim": 9,
//!   "act_dim": 4,
//!   "activation": "sigmoid",
//!   "bounds": [1.0, 1.0, 1.0, 20.0],
//!   "log_std": [...],
//!   "layers": [{"rows": 512, "cols": 9, "w": [...], "b": [...]}, ...]
//! }
//! ```
//!
//! `w` is row-major with `rows` outputs and `cols` inputs. Value files use
//! `kind: "value"`, `act_dim: 1` and empty `bounds`/`log_std`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, PolicyParameters, ValueParameters};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format_version: u32,
    pub kind: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub activation: String,
    pub bounds: Vec<f64>,
    pub log_std: Vec<f64>,
    pub layers: Vec<LayerFile>,
}

fn layers_of(net: &Mlp) -> Vec<LayerFile> {
    net.layers
        .iter()
        .map(|l| LayerFile {
            rows: l.rows,
            cols: l.cols,
            w: l.w.clone(),
            b: l.b.clone(),
        })
        .collect()
}

impl WeightFile {
    pub fn from_policy(p: &PolicyParameters) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: "policy".into(),
            obs_dim: p.obs_dim(),
            act_dim: p.act_dim(),
            activation: p.net.activation.name().into(),
            bounds: p.bounds.clone(),
            log_std: p.log_std.clone(),
            layers: layers_of(&p.net),
        }
    }

    pub fn from_value(v: &ValueParameters) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: "value".into(),
            obs_dim: v.obs_dim(),
            act_dim: 1,
            activation: v.net.activation.name().into(),
            bounds: vec![],
            log_std: vec![],
            layers: layers_of(&v.net),
        }
    }

    fn all_values(&self) -> impl Iterator<Item = &f64> {
        self.bounds
            .iter()
            .chain(&self.log_std)
            .chain(self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)))
    }

    fn to_mlp(&self) -> std::result::Result<Mlp, String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!(
                "format_version {} not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        let activation = Activation::from_name(&self.activation)
            .ok_or_else(|| format!("unknown activation `{}`", self.activation))?;
        if self.all_values().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.layers.is_empty() {
            return Err("no layers".into());
        }
        let mut expected_in = self.obs_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.cols != expected_in {
                return Err(format!(
                    "layer {k} has {} cols, expected {expected_in}",
                    l.cols
                ));
            }
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(format!(
                    "layer {k} storage does not match {}x{}",
                    l.rows, l.cols
                ));
            }
            expected_in = l.rows;
        }
        if expected_in != self.act_dim {
            return Err(format!(
                "last layer emits {expected_in}, expected act_dim {}",
                self.act_dim
            ));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                rows: l.rows,
                cols: l.cols,
                w: l.w.clone(),
                b: l.b.clone(),
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn into_policy(self) -> std::result::Result<PolicyParameters, String> {
        if self.kind != "policy" {
            return Err(format!("expected kind `policy`, found `{}`", self.kind));
        }
        let net = self.to_mlp()?;
        if self.log_std.len() != self.act_dim || self.bounds.len() != self.act_dim {
            return Err("log_std/bounds length must equal act_dim".into());
        }
        if self.bounds.iter().any(|b| *b <= 0.0) {
            return Err("bounds must be positive".into());
        }
        Ok(PolicyParameters {
            net,
            log_std: self.log_std,
            bounds: self.bounds,
        })
    }

    pub fn into_value(self) -> std::result::Result<ValueParameters, String> {
        if self.kind != "value" {
            return Err(format!("expected kind `value`, found `{}`", self.kind));
        }
        if self.act_dim != 1 {
            return Err("value networks have act_dim 1".into());
        }
        Ok(ValueParameters {
            net: self.to_mlp()?,
        })
    }

    /// Canonical serialized form.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn write_file(file: &WeightFile, path: &Path) -> Result<()> {
    if file.all_values().any(|v| !v.is_finite()) {
        return Err(Error::WeightFormat {
            path: path.to_path_buf(),
            reason: "refusing to save non-finite weights".into(),
        });
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, file.to_json()?)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<WeightFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::WeightFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_policy(p: &PolicyParameters, path: &Path) -> Result<()> {
    write_file(&WeightFile::from_policy(p), path)
}

pub fn save_value(v: &ValueParameters, path: &Path) -> Result<()> {
    write_file(&WeightFile::from_value(v), path)
}

pub fn load_policy(path: &Path) -> Result<PolicyParameters> {
    read_file(path)?
        .into_policy()
        .map_err(|reason| Error::WeightFormat {
            path: path.to_path_buf(),
            reason,
        })
}

pub fn load_value(path: &Path) -> Result<ValueParameters> {
    read_file(path)?
        .into_value()
        .map_err(|reason| Error::WeightFormat {
            path: path.to_path_buf(),
            reason,
        })
}
