//! JSON model files.
//!
//! ```json
//! {"N": 1, "hbar": 1.0,
//!  "A": [[0, 0], [0, -2]], "D": [[1, 0], [0, 1]],
//!  "unravellings": {
//!    "observed": {"type": "homodyne", "eta": 0.5, "theta": 1.1780972450961724},
//!    "bob": {"type": "explicit", "C": [[1.0, 0.0]], "Gamma": [[-0.5, 0.0]]}}}
//! ```
//!
//! Angles are in radians and matrices are row-major. Homodyne and heterodyne
//! entries accept an optional `"mode"` (default 0).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    make_heterodyne, make_homodyne, matrix_from_rows, matrix_from_rows_with_cols, matrix_to_rows,
    SystemModel, Unravelling,
};
use crate::presets;

/// Name of the built-in OPO preset accepted wherever a model path is.
pub const OPO_PRESET: &str = "opo";

fn default_hbar() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "N")]
    pub n_modes: usize,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(rename = "A")]
    pub drift: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub diffusion: Vec<Vec<f64>>,
    #[serde(default)]
    pub unravellings: BTreeMap<String, UnravellingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UnravellingSpec {
    Homodyne {
        eta: f64,
        theta: f64,
        #[serde(default)]
        mode: usize,
    },
    Heterodyne {
        eta: f64,
        #[serde(default)]
        theta: f64,
        #[serde(default)]
        mode: usize,
    },
    Explicit {
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
        #[serde(rename = "Gamma")]
        gamma: Vec<Vec<f64>>,
    },
}

impl UnravellingSpec {
    pub fn build(&self, model: &SystemModel) -> Result<Unravelling> {
        match self {
            UnravellingSpec::Homodyne { eta, theta, mode } => make_homodyne(*eta, *theta, *mode, model),
            UnravellingSpec::Heterodyne { eta, theta, mode } => {
                make_heterodyne(*eta, *theta, *mode, model)
            }
            UnravellingSpec::Explicit { c, gamma } => Unravelling::new(
                matrix_from_rows_with_cols(c, model.dim())?,
                matrix_from_rows_with_cols(gamma, model.dim())?,
            ),
        }
    }
}

/// A validated model together with its named unravellings.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: SystemModel,
    pub unravellings: BTreeMap<String, Unravelling>,
    pub source: ModelFile,
}

impl LoadedModel {
    pub fn from_file_data(source: ModelFile) -> Result<Self> {
        let model = SystemModel::new(
            source.n_modes,
            source.hbar,
            matrix_from_rows(&source.drift)?,
            matrix_from_rows(&source.diffusion)?,
        )?;
        let mut unravellings = BTreeMap::new();
        for (name, spec) in &source.unravellings {
            let u = spec
                .build(&model)
                .map_err(|e| Error::Input(format!("unravelling {name:?}: {e}")))?;
            if u.dim() != model.dim() {
                return Err(Error::Input(format!(
                    "unravelling {name:?} acts on dimension {} but the model has dimension {}",
                    u.dim(),
                    model.dim()
                )));
            }
            unravellings.insert(name.clone(), u);
        }
        Ok(Self {
            model,
            unravellings,
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let source: ModelFile = serde_json::from_str(text)?;
        Self::from_file_data(source)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Loads `spec`, which is either the preset name `opo` or a file path.
    pub fn load(spec: &str) -> Result<Self> {
        if spec == OPO_PRESET {
            Ok(opo_preset(1.0))
        } else {
            Self::from_path(Path::new(spec))
        }
    }

    pub fn unravelling(&self, name: &str) -> Result<&Unravelling> {
        self.unravellings.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.unravellings.keys().map(String::as_str).collect();
            Error::Input(format!("unknown unravelling {name:?}; known: {known:?}"))
        })
    }

    /// SHA-256 of the canonical JSON form of the model file.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.source).expect("model file serialises");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// The OPO preset with the observed homodyne (`observed`) and the two named
/// unobserved options `homodyne:-pi/8` and `heterodyne:balanced`.
pub fn opo_preset(hbar: f64) -> LoadedModel {
    let model = presets::opo_model(hbar);
    let mut unravellings = BTreeMap::new();
    unravellings.insert(
        "observed".to_string(),
        UnravellingSpec::Homodyne {
            eta: presets::OBSERVED_ETA,
            theta: presets::OBSERVED_THETA,
            mode: 0,
        },
    );
    unravellings.insert(
        "homodyne:-pi/8".to_string(),
        UnravellingSpec::Homodyne {
            eta: 1.0 - presets::OBSERVED_ETA,
            theta: presets::UNOBSERVED_THETA,
            mode: 0,
        },
    );
    unravellings.insert(
        "heterodyne:balanced".to_string(),
        UnravellingSpec::Heterodyne {
            eta: 1.0 - presets::OBSERVED_ETA,
            theta: 0.0,
            mode: 0,
        },
    );
    let source = ModelFile {
        n_modes: 1,
        hbar,
        drift: matrix_to_rows(model.drift()),
        diffusion: matrix_to_rows(model.diffusion()),
        unravellings,
    };
    LoadedModel::from_file_data(source).expect("OPO preset is valid")
}
