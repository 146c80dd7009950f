use std::path::{Path, PathBuf};

use feedcap::captioner::{CaptionerConfig, PretrainConfig};
use feedcap::corpus::SceneConfig;
use feedcap::fbn::{FbnConfig, FbnTrainConfig};
use feedcap::feedback::TeacherConfig;
use feedcap::pgtrain::{AnnealSchedule, RlConfig, RlMode};
use feedcap::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub captions_per_scene: usize,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 2000,
            test_scenes: 300,
            captions_per_scene: 5,
            scene: SceneConfig {
                noise_sigma: 0.35,
                ..SceneConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbnSection {
    /// Scripted records on freshly corrupted captions, added to the store's.
    pub synthetic_records: usize,
    pub model: FbnConfig,
    pub train: FbnTrainConfig,
}

impl Default for FbnSection {
    fn default() -> Self {
        Self {
            synthetic_records: 2000,
            model: FbnConfig::default(),
            train: FbnTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSection {
    pub mode: RlMode,
    /// The first `images` training scenes are captioned, annotated and used for RL.
    pub images: usize,
    /// Evaluate on the test split after every epoch.
    pub eval_each_epoch: bool,
    pub train: RlConfig,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            mode: "4gt+fb".parse().expect("valid mode"),
            images: 500,
            eval_each_epoch: false,
            train: RlConfig {
                lr: 5e-5,
                batch: 50,
                schedule: AnnealSchedule { k: 0, t: 40, m: 5 },
                ..RlConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Everything a run depends on. Seeds inside the sections are ignored: every
/// random stream derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub captioner: CaptionerConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub fbn: FbnSection,
    #[serde(default)]
    pub rl: RlSection,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_pretrain() -> PretrainConfig {
    PretrainConfig {
        lr: 2e-3,
        batch: 16,
        epochs: 3,
        seed: 0,
    }
}

/// Random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub features: u64,
    pub fbn_data: u64,
    pub teacher: u64,
    pub rl: u64,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json<T: Serialize>(x: &T) -> Result<String> {
    let v = serde_json::to_value(x).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = String::new();
    write_canonical(&v, &mut out);
    Ok(out)
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            out.push('{');
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
        Value::Array(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Overlays `patch` on `base`, descending into objects present in both.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    /// Reads `path` (or starts from `{}`), applies the overrides and parses.
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let user: Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut v = serde_json::to_value(Self::with_seed(0)).map_err(|e| Error::Config(e.to_string()))?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        obj.remove("seed");
        merge(&mut v, user);
        let obj = v.as_object_mut().expect("merged config is an object");
        if let Some(s) = over.seed {
            obj.insert("seed".into(), s.into());
        }
        let mut section = |name: &str, key: &str, value: Value| -> Result<()> {
            let entry = obj.entry(name).or_insert_with(|| Value::Object(Default::default()));
            entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("config `{name}` must be an object")))?
                .insert(key.into(), value);
            Ok(())
        };
        if let Some(m) = &over.mode {
            let mode: RlMode = m.parse()?;
            section("rl", "mode", Value::String(mode.to_string()))?;
        }
        if let Some(o) = &over.out {
            section("paths", "out", Value::String(o.to_string_lossy().into_owned()))?;
        }
        if !obj.contains_key("seed") {
            return Err(Error::Config("a seed is required, in the config or with --seed".into()));
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        self.captioner.validate()?;
        self.rl.train.validate()?;
        if self.captioner.feature_dim != self.data.scene.feature_dim() {
            return Err(Error::Config(format!(
                "captioner feature_dim {} does not match the scene feature size {}",
                self.captioner.feature_dim,
                self.data.scene.feature_dim()
            )));
        }
        if self.data.train_scenes == 0 || self.data.test_scenes == 0 || self.data.captions_per_scene == 0 {
            return Err(Error::Config("data sizes must be positive".into()));
        }
        if self.rl.images == 0 || self.rl.images > self.data.train_scenes {
            return Err(Error::Config(format!(
                "rl.images must be in 1..={}, got {}",
                self.data.train_scenes, self.rl.images
            )));
        }
        if self.rl.mode.gt > self.data.captions_per_scene {
            return Err(Error::Config(format!(
                "mode {} needs {} ground-truth captions per scene, data has {}",
                self.rl.mode, self.rl.mode.gt, self.data.captions_per_scene
            )));
        }
        Ok(())
    }

    pub fn canonical(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical()?.as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            init: s,
            train_data: s.wrapping_add(1),
            test_data: s.wrapping_add(2),
            features: s,
            fbn_data: s.wrapping_add(3),
            teacher: s.wrapping_add(5),
            rl: s,
        }
    }
}
