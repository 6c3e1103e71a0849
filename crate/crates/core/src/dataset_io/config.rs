//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Every key is listed in
//! [`CONFIG_KEYS`]; unknown or repeated keys are rejected. The same `set`
//! path is used for command-line overrides.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::decoder::{Activation, MlpConfig};
use crate::error::{MapError, Result};
use crate::field::FieldLayout;
use crate::mesher::{MeshFormat, Validity};
use crate::sampler::SamplerConfig;
use crate::trainer::{AdamConfig, LossConfig, TrainConfig};
use crate::Vec3;

#[derive(Clone, Copy, Debug)]
pub struct ConfigKey {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> ConfigKey {
    ConfigKey { name, default, help }
}

pub const CONFIG_KEYS: &[ConfigKey] = &[
    key("scan_dir", "", "directory of .bin/.ply scans, read in file name order"),
    key("pose_file", "", "pose file, one row-major 3x4 matrix per line"),
    key("out_dir", "out", "directory for outputs whose path is not set explicitly"),
    key("field_file", "", "feature field file [out_dir/field.imf]"),
    key("model_file", "", "decoder file; written by map-batch, read by map-incremental [out_dir/decoder.imm]"),
    key("log_file", "", "training log CSV [out_dir/train_log.csv]"),
    key("mesh_file", "", "output mesh [out_dir/mesh.ply]"),
    key("pred_mesh", "", "mesh to evaluate [mesh_file]"),
    key("gt_mesh", "", "ground truth mesh (PLY)"),
    key("gt_mask", "", "optional pre-masked ground truth mesh used for accuracy"),
    key("report_file", "", "evaluation report CSV [out_dir/report.csv]"),
    key("leaf_size", "0.1", "edge of a finest-level node, m"),
    key("levels", "4", "number of octree levels H"),
    key("feature_len", "8", "feature vector length L"),
    key("hidden_layers", "2", "decoder hidden layers M"),
    key("hidden_width", "32", "decoder hidden layer width"),
    key("n_free", "5", "free-space samples per beam N_f"),
    key("n_band", "5", "truncation-band samples per beam N_s"),
    key("sigma", "0.05", "sigmoid flatness sigma, m"),
    key("lambda_e", "0.1", "Eikonal weight"),
    key("lambda_r", "1000", "anchor regularization weight (incremental)"),
    key("omega_max", "1000", "importance weight cap"),
    key("fd_step", "0", "Eikonal difference step, m [leaf_size / 2]"),
    key("lr_features", "0.01", "feature learning rate"),
    key("lr_mlp", "0.001", "decoder learning rate"),
    key("beta1", "0.9", "first moment decay"),
    key("beta2", "0.999", "second moment decay"),
    key("adam_eps", "1e-8", "optimizer epsilon"),
    key("batch_size", "4096", "samples per iteration"),
    key("iterations", "2000", "iterations of batch training"),
    key("iters_per_scan", "50", "iterations per scan in incremental mode"),
    key("max_range", "60", "drop returns beyond this range, m (0 disables)"),
    key("voxel_downsample", "0", "keep one point per voxel of this edge before sampling, m (0 disables)"),
    key("checkpoint_every", "0", "write a field checkpoint every k scans (0 disables)"),
    key("resume", "false", "continue map-incremental from the checkpoint in out_dir"),
    key("mesh_cell", "0.05", "marching cubes lattice spacing, m"),
    key("mesh_block", "64", "cells per axis evaluated at once during meshing"),
    key("mesh_format", "ply_binary", "ply_binary, ply_ascii or obj"),
    key("mesh_validity", "any", "lattice points kept: 'any' (any level hit) or 'finest' (observed leaf only)"),
    key("bbox", "", "meshing region 'x0,y0,z0,x1,y1,z1' [allocated bounds]"),
    key("eval_samples", "1000000", "surface samples per mesh for evaluation"),
    key("tau", "0.1", "distance threshold of completion ratio and F-score, m"),
    key("scene", "sphere", "synthetic scene: sphere, room or two-region"),
    key("scan_count", "0", "synthetic scans to generate [scene default]"),
    key("seed", "42", "random seed"),
    key("threads", "0", "worker threads (0 = all cores)"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scan_dir: PathBuf,
    pub pose_file: PathBuf,
    pub out_dir: PathBuf,
    pub field_file: PathBuf,
    pub model_file: PathBuf,
    pub log_file: PathBuf,
    pub mesh_file: PathBuf,
    pub pred_mesh: PathBuf,
    pub gt_mesh: PathBuf,
    pub gt_mask: PathBuf,
    pub report_file: PathBuf,
    pub leaf_size: f64,
    pub levels: usize,
    pub feature_len: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub n_free: usize,
    pub n_band: usize,
    pub sigma: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub omega_max: f64,
    pub fd_step: f64,
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub iters_per_scan: usize,
    pub max_range: f64,
    pub voxel_downsample: f64,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub mesh_cell: f64,
    pub mesh_block: usize,
    pub mesh_format: MeshFormat,
    pub mesh_validity: Validity,
    pub bbox: Option<(Vec3, Vec3)>,
    pub eval_samples: usize,
    pub tau: f64,
    pub scene: String,
    pub scan_count: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            scan_dir: PathBuf::new(),
            pose_file: PathBuf::new(),
            out_dir: PathBuf::new(),
            field_file: PathBuf::new(),
            model_file: PathBuf::new(),
            log_file: PathBuf::new(),
            mesh_file: PathBuf::new(),
            pred_mesh: PathBuf::new(),
            gt_mesh: PathBuf::new(),
            gt_mask: PathBuf::new(),
            report_file: PathBuf::new(),
            leaf_size: 0.0,
            levels: 0,
            feature_len: 0,
            hidden_layers: 0,
            hidden_width: 0,
            n_free: 0,
            n_band: 0,
            sigma: 0.0,
            lambda_e: 0.0,
            lambda_r: 0.0,
            omega_max: 0.0,
            fd_step: 0.0,
            lr_features: 0.0,
            lr_mlp: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            adam_eps: 0.0,
            batch_size: 0,
            iterations: 0,
            iters_per_scan: 0,
            max_range: 0.0,
            voxel_downsample: 0.0,
            checkpoint_every: 0,
            resume: false,
            mesh_cell: 0.0,
            mesh_block: 0,
            mesh_format: MeshFormat::PlyBinary,
            mesh_validity: Validity::default(),
            bbox: None,
            eval_samples: 0,
            tau: 0.0,
            scene: String::new(),
            scan_count: 0,
            seed: 0,
            threads: 0,
        };
        for k in CONFIG_KEYS {
            cfg.set(k.name, k.default).expect("built-in default must parse");
        }
        cfg
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MapError::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bbox(value: &str) -> Result<Option<(Vec3, Vec3)>> {
    if value.is_empty() {
        return Ok(None);
    }
    let v: Vec<f64> = value
        .split(',')
        .map(|t| parse_num::<f64>("bbox", t.trim()))
        .collect::<Result<_>>()?;
    if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
        return Err(MapError::Config(format!("bbox: expected six finite numbers, got '{value}'")));
    }
    let lo = Vec3::new(v[0], v[1], v[2]);
    let hi = Vec3::new(v[3], v[4], v[5]);
    if (0..3).any(|k| hi[k] <= lo[k]) {
        return Err(MapError::Config(format!("bbox: upper corner must exceed lower corner, got '{value}'")));
    }
    Ok(Some((lo, hi)))
}

impl RunConfig {
    /// Defaults overridden by the file at `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| MapError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(MapError::Config(format!("line {}: expected 'key = value'", n + 1)));
            };
            let k = k.trim();
            if !seen.insert(k.to_owned()) {
                return Err(MapError::Config(format!("line {}: key '{k}' repeated", n + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| MapError::Config(format!("line {}: {}", n + 1, config_message(e))))?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! num {
            ($f:ident) => {
                self.$f = parse_num(key, value)?
            };
        }
        match key {
            "scan_dir" => self.scan_dir = value.into(),
            "pose_file" => self.pose_file = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "field_file" => self.field_file = value.into(),
            "model_file" => self.model_file = value.into(),
            "log_file" => self.log_file = value.into(),
            "mesh_file" => self.mesh_file = value.into(),
            "pred_mesh" => self.pred_mesh = value.into(),
            "gt_mesh" => self.gt_mesh = value.into(),
            "gt_mask" => self.gt_mask = value.into(),
            "report_file" => self.report_file = value.into(),
            "leaf_size" => num!(leaf_size),
            "levels" => num!(levels),
            "feature_len" => num!(feature_len),
            "hidden_layers" => num!(hidden_layers),
            "hidden_width" => num!(hidden_width),
            "n_free" => num!(n_free),
            "n_band" => num!(n_band),
            "sigma" => num!(sigma),
            "lambda_e" => num!(lambda_e),
            "lambda_r" => num!(lambda_r),
            "omega_max" => num!(omega_max),
            "fd_step" => num!(fd_step),
            "lr_features" => num!(lr_features),
            "lr_mlp" => num!(lr_mlp),
            "beta1" => num!(beta1),
            "beta2" => num!(beta2),
            "adam_eps" => num!(adam_eps),
            "batch_size" => num!(batch_size),
            "iterations" => num!(iterations),
            "iters_per_scan" => num!(iters_per_scan),
            "max_range" => num!(max_range),
            "voxel_downsample" => num!(voxel_downsample),
            "checkpoint_every" => num!(checkpoint_every),
            "resume" => num!(resume),
            "mesh_cell" => num!(mesh_cell),
            "mesh_block" => num!(mesh_block),
            "mesh_format" => {
                self.mesh_format = match value {
                    "ply_binary" => MeshFormat::PlyBinary,
                    "ply_ascii" => MeshFormat::PlyAscii,
                    "obj" => MeshFormat::Obj,
                    _ => return Err(MapError::Config(format!("mesh_format: unknown format '{value}'"))),
                }
            }
            "mesh_validity" => {
                self.mesh_validity = match value {
                    "finest" => Validity::FinestLevel,
                    "any" => Validity::AnyLevel,
                    _ => return Err(MapError::Config(format!("mesh_validity: expected 'finest' or 'any', got '{value}'"))),
                }
            }
            "bbox" => self.bbox = parse_bbox(value)?,
            "eval_samples" => num!(eval_samples),
            "tau" => num!(tau),
            "scene" => self.scene = value.to_owned(),
            "scan_count" => num!(scan_count),
            "seed" => num!(seed),
            "threads" => num!(threads),
            _ => return Err(MapError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Range checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("leaf_size", self.leaf_size),
            ("sigma", self.sigma),
            ("lr_features", self.lr_features),
            ("lr_mlp", self.lr_mlp),
            ("adam_eps", self.adam_eps),
            ("mesh_cell", self.mesh_cell),
            ("tau", self.tau),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MapError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda_e", self.lambda_e),
            ("lambda_r", self.lambda_r),
            ("omega_max", self.omega_max),
            ("fd_step", self.fd_step),
            ("max_range", self.max_range),
            ("voxel_downsample", self.voxel_downsample),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MapError::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(MapError::Config(format!("{k} must be in [0, 1), got {v}")));
            }
        }
        for (k, v) in [
            ("levels", self.levels),
            ("feature_len", self.feature_len),
            ("hidden_width", self.hidden_width),
            ("n_band", self.n_band),
            ("batch_size", self.batch_size),
            ("mesh_block", self.mesh_block),
            ("eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return Err(MapError::Config(format!("{k} must be at least 1")));
            }
        }
        self.layout().map_err(|e| MapError::Config(config_message(e)))?;
        self.mlp_config().validate().map_err(|e| MapError::Config(config_message(e)))?;
        Ok(())
    }

    fn or_default(&self, explicit: &Path, name: &str) -> PathBuf {
        if explicit.as_os_str().is_empty() {
            self.out_dir.join(name)
        } else {
            explicit.to_path_buf()
        }
    }

    pub fn field_path(&self) -> PathBuf {
        self.or_default(&self.field_file, "field.imf")
    }

    pub fn model_path(&self) -> PathBuf {
        self.or_default(&self.model_file, "decoder.imm")
    }

    pub fn log_path(&self) -> PathBuf {
        self.or_default(&self.log_file, "train_log.csv")
    }

    pub fn mesh_path(&self) -> PathBuf {
        self.or_default(&self.mesh_file, "mesh.ply")
    }

    pub fn pred_mesh_path(&self) -> PathBuf {
        if self.pred_mesh.as_os_str().is_empty() {
            self.mesh_path()
        } else {
            self.pred_mesh.clone()
        }
    }

    pub fn report_path(&self) -> PathBuf {
        self.or_default(&self.report_file, "report.csv")
    }

    pub fn layout(&self) -> Result<FieldLayout> {
        FieldLayout::new(self.leaf_size, self.levels, self.feature_len)
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            input_len: self.feature_len,
            activation: Activation::Relu,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_free: self.n_free,
            n_band: self.n_band,
            sigma: self.sigma,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            sigma: self.sigma,
            lambda_e: self.lambda_e,
            lambda_r: self.lambda_r,
            omega_max: self.omega_max,
            fd_step: if self.fd_step > 0.0 { self.fd_step } else { 0.5 * self.leaf_size },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss_config(),
            adam: AdamConfig {
                lr_features: self.lr_features,
                lr_mlp: self.lr_mlp,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            batch_size: self.batch_size,
        }
    }
}

fn config_message(e: MapError) -> String {
    match e {
        MapError::Config(m) | MapError::Argument(m) => m,
        other => other.to_string(),
    }
}
