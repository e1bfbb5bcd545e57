//! Versioned model files: a JSON envelope holding the payload and its
//! SHA-256 checksum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::ScaleParams;
use crate::error::{Error, Result};
use crate::eval::FittedModel;

pub const FORMAT_NAME: &str = "abht-model";
pub const FORMAT_VERSION: u32 = 1;

/// A fitted model with what is needed to predict on raw inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: FittedModel,
    /// Scaling fit on the training data, if the inputs were scaled.
    pub scale: Option<ScaleParams>,
    pub feature_names: Vec<String>,
    pub target: String,
    /// Selected hyperparameters, for display.
    pub params: String,
}

impl SavedModel {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Predicts on a raw feature row, undoing any target standardization.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        match &self.scale {
            Some(s) => Ok(s.unscale_target(self.model.predict(&s.scale_row(x))?)),
            None => self.model.predict(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format: String,
    version: u32,
    checksum: String,
    payload: Value,
}

fn digest(payload: &Value) -> Result<String> {
    let bytes = serde_json::to_vec(payload)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn to_json(model: &SavedModel) -> Result<String> {
    let payload = serde_json::to_value(model)?;
    let env = Envelope {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        checksum: digest(&payload)?,
        payload,
    };
    Ok(serde_json::to_string(&env)?)
}

pub fn from_json(text: &str) -> Result<SavedModel> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if env.format != FORMAT_NAME {
        return Err(Error::Format(format!("unknown format {:?}", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: env.version,
            supported: FORMAT_VERSION,
        });
    }
    let found = digest(&env.payload)?;
    if found != env.checksum {
        return Err(Error::Checksum {
            expected: env.checksum,
            found,
        });
    }
    serde_json::from_value(env.payload).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    from_json(&fs::read_to_string(path)?)
}
