//! JSON checkpoints: `{arch, seed, task_index, u, v, heads: [{w, frozen}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::Head;
use crate::error::Result;
use crate::nn::matrix::Matrix;
use crate::nn::mlp::{Architecture, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub w: Matrix,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub seed: u64,
    pub task_index: usize,
    pub u: Matrix,
    pub v: Matrix,
    pub heads: Vec<HeadRecord>,
}

impl Checkpoint {
    pub fn capture(model: &MlpModel, seed: u64, task_index: usize) -> Self {
        Self {
            arch: *model.arch(),
            seed,
            task_index,
            u: model.u().clone(),
            v: model.v().clone(),
            heads: model
                .heads()
                .iter()
                .map(|h| HeadRecord {
                    w: h.weights().clone(),
                    frozen: h.is_frozen(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        let heads = self
            .heads
            .into_iter()
            .enumerate()
            .map(|(task_id, rec)| {
                let mut head = Head::from_weights(rec.w).with_task_id(task_id);
                if rec.frozen {
                    head.freeze();
                }
                head
            })
            .collect();
        MlpModel::from_parts(self.arch, self.u, self.v, heads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
