//! Model checkpoints: parameters, optimiser moments and training history
//! in the shared container format, enough to resume training bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aphynity::{AphynityModel, EpochStats, LagrangianConfig, DECODER};
use crate::container::Container;
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::hvae::{HvaeConfig, HvaeModel};
use crate::hybrid::{ArchConfig, Predictor};
use crate::tensor::{Adam, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Aphynity,
    Hvae,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Aphynity => "aphynity",
            Flavor::Hvae => "hvae",
        }
    }
}

/// Either trained model flavour.
#[derive(Clone, Debug)]
pub enum HybridModel {
    Aphynity(AphynityModel),
    Hvae(HvaeModel),
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    weight_decay: f64,
    step: u64,
}

impl HybridModel {
    pub fn flavor(&self) -> Flavor {
        match self {
            HybridModel::Aphynity(_) => Flavor::Aphynity,
            HybridModel::Hvae(_) => Flavor::Hvae,
        }
    }

    pub fn spec(&self) -> &SystemSpec {
        match self {
            HybridModel::Aphynity(m) => &m.net.spec,
            HybridModel::Hvae(m) => &m.net.spec,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        match self {
            HybridModel::Aphynity(m) => &m.net.arch,
            HybridModel::Hvae(m) => &m.net.arch,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            HybridModel::Aphynity(m) => &m.store,
            HybridModel::Hvae(m) => &m.store,
        }
    }

    fn adam(&self) -> &Adam {
        match self {
            HybridModel::Aphynity(m) => &m.state.adam,
            HybridModel::Hvae(m) => &m.state.adam,
        }
    }

    pub fn epoch(&self) -> usize {
        match self {
            HybridModel::Aphynity(m) => m.state.epoch,
            HybridModel::Hvae(m) => m.state.epoch,
        }
    }

    pub fn history(&self) -> &[EpochStats] {
        match self {
            HybridModel::Aphynity(m) => &m.state.history,
            HybridModel::Hvae(m) => &m.state.history,
        }
    }

    pub fn decoder_hash(&self) -> String {
        self.store().hash(|n| n.starts_with(DECODER))
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            HybridModel::Aphynity(m) => m,
            HybridModel::Hvae(m) => m,
        }
    }

    /// `notes` is stored verbatim in the manifest (provenance, augmentation
    /// settings and the like).
    pub fn to_container(&self, notes: Value) -> Result<Container> {
        let adam = self.adam();
        let mut manifest = json!({
            "kind": "checkpoint",
            "flavor": self.flavor(),
            "system": self.spec(),
            "arch": self.arch(),
            "epoch": self.epoch(),
            "history": self.history(),
            "adam": AdamMeta { lr: adam.lr, weight_decay: adam.weight_decay, step: adam.steps() },
            "decoder_hash": self.decoder_hash(),
            "notes": notes,
        });
        match self {
            HybridModel::Aphynity(m) => manifest["lambda"] = json!(m.state.lambda),
            HybridModel::Hvae(m) => manifest["hvae"] = serde_json::to_value(&m.cfg)?,
        }
        let mut c = Container::new(manifest);
        for (name, t) in self.store().iter() {
            c.push(format!("param/{name}"), t.clone());
        }
        let (first, second) = adam.moments();
        for (i, (m, v)) in first.iter().zip(second).enumerate() {
            c.push(format!("adam.m/{i}"), Tensor::vector(m));
            c.push(format!("adam.v/{i}"), Tensor::vector(v));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<HybridModel> {
        let m = &c.manifest;
        if m.get("kind").and_then(Value::as_str) != Some("checkpoint") {
            return Err(Error::Malformed("container is not a checkpoint".into()));
        }
        let field = |k: &str| m.get(k).cloned().ok_or_else(|| Error::Malformed(format!("checkpoint lacks `{k}`")));
        let flavor: Flavor = serde_json::from_value(field("flavor")?)?;
        let spec: SystemSpec = serde_json::from_value(field("system")?)?;
        let arch: ArchConfig = serde_json::from_value(field("arch")?)?;
        let epoch: usize = serde_json::from_value(field("epoch")?)?;
        let history: Vec<EpochStats> = serde_json::from_value(field("history")?)?;
        let meta: AdamMeta = serde_json::from_value(field("adam")?)?;

        let params: Vec<(String, Tensor)> = c
            .arrays
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("param/").map(|n| (n.to_string(), t.clone())))
            .collect();
        let mut first = Vec::new();
        let mut second = Vec::new();
        while let (Some(m), Some(v)) = (c.get(&format!("adam.m/{}", first.len())), c.get(&format!("adam.v/{}", first.len()))) {
            first.push(m.data().to_vec());
            second.push(v.data().to_vec());
        }
        let adam = Adam::from_state(meta.lr, meta.weight_decay, meta.step, first, second);

        let model = match flavor {
            Flavor::Aphynity => {
                let lambda: f64 = serde_json::from_value(field("lambda")?)?;
                let cfg = LagrangianConfig { lambda0: lambda, ..LagrangianConfig::for_system(spec.system) };
                let mut model = AphynityModel::new(spec, arch, &cfg, 0)?;
                model.store.load_named(&params)?;
                model.state.epoch = epoch;
                model.state.lambda = lambda;
                model.state.history = history;
                model.state.adam = adam;
                HybridModel::Aphynity(model)
            }
            Flavor::Hvae => {
                let cfg: HvaeConfig = serde_json::from_value(field("hvae")?)?;
                let mut model = HvaeModel::new(spec, arch, &cfg, 0)?;
                model.store.load_named(&params)?;
                model.state.epoch = epoch;
                model.state.history = history;
                model.state.adam = adam;
                HybridModel::Hvae(model)
            }
        };
        let recorded = m.get("decoder_hash").and_then(Value::as_str).unwrap_or_default();
        if recorded != model.decoder_hash() {
            return Err(Error::Malformed("decoder parameters do not match the recorded hash".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, notes: Value) -> Result<()> {
        self.to_container(notes)?.save(path)
    }

    /// The model and the manifest it was stored with.
    pub fn load(path: &Path) -> Result<(HybridModel, Value)> {
        let c = Container::load(path)?;
        let model = HybridModel::from_container(&c)?;
        Ok((model, c.manifest))
    }
}
