//! `imap`: build, mesh and evaluate implicit maps from posed range scans.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use implicit_map::dataset_io::{RunConfig, CONFIG_KEYS};
use implicit_map::{pipeline, MapError};

const COMMON: &[&str] = &["out_dir", "seed", "threads"];

const MAP_BATCH: &[&str] = &[
    "scan_dir", "pose_file", "field_file", "model_file", "log_file", "leaf_size", "levels", "feature_len",
    "hidden_layers", "hidden_width", "n_free", "n_band", "sigma", "lambda_e", "fd_step", "lr_features", "lr_mlp",
    "beta1", "beta2", "adam_eps", "batch_size", "iterations", "max_range", "voxel_downsample",
];

const MAP_INCREMENTAL: &[&str] = &[
    "scan_dir", "pose_file", "field_file", "model_file", "log_file", "leaf_size", "levels", "feature_len",
    "n_free", "n_band", "sigma", "lambda_e", "lambda_r", "omega_max", "fd_step", "lr_features", "beta1", "beta2",
    "adam_eps", "batch_size", "iters_per_scan", "max_range", "voxel_downsample", "checkpoint_every", "resume",
];

const MESH: &[&str] = &[
    "field_file", "model_file", "mesh_file", "mesh_cell", "mesh_block", "mesh_format", "mesh_validity", "bbox",
];

const EVAL: &[&str] = &["mesh_file", "pred_mesh", "gt_mesh", "gt_mask", "report_file", "eval_samples", "tau"];

const MAKE_SYNTHETIC: &[&str] = &["scene", "scan_count"];

fn subcommands() -> [(&'static str, &'static str, &'static [&'static str]); 5] {
    [
        ("map-batch", "Train features and a decoder jointly on all scans", MAP_BATCH),
        ("map-incremental", "Map scan by scan with a frozen pre-trained decoder", MAP_INCREMENTAL),
        ("mesh", "Extract the zero level set of a trained map", MESH),
        ("eval", "Score a mesh against ground truth", EVAL),
        ("make-synthetic", "Generate scans of an analytic scene", MAKE_SYNTHETIC),
    ]
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut app = Command::new("imap")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Incremental implicit SDF mapping")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, keys) in subcommands() {
        let keys: Vec<&str> = keys.iter().chain(COMMON).copied().collect();
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .help("config file of 'key = value' lines; flags override it"),
        );
        for key in &keys {
            let spec = CONFIG_KEYS.iter().find(|k| k.name == *key).expect("known key");
            let help = if spec.default.is_empty() || spec.default.starts_with('[') {
                format!("{} ({})", spec.help, spec.name)
            } else {
                format!("{} ({}, default {})", spec.help, spec.name, spec.default)
            };
            let arg = Arg::new(spec.name).long(flag_name(spec.name)).help(help);
            sub = sub.arg(if spec.name == "resume" {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE")
            });
        }
        sub = sub.after_help(format!("Config keys: {}", keys.join(", ")));
        app = app.subcommand(sub);
    }
    app
}

fn build_config(m: &ArgMatches, keys: &[&str]) -> Result<RunConfig, MapError> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => RunConfig::load(PathBuf::from(path))?,
        None => RunConfig::default(),
    };
    for key in keys.iter().chain(COMMON) {
        if *key == "resume" {
            if m.get_flag(key) {
                cfg.resume = true;
            }
        } else if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| MapError::Config(format!("--{}: {e}", flag_name(key))))?;
        }
    }
    Ok(cfg)
}

fn run(name: &str, cfg: &RunConfig) -> Result<(), MapError> {
    match name {
        "map-batch" | "map-incremental" => {
            let s = if name == "map-batch" {
                pipeline::map_batch(cfg)?
            } else {
                pipeline::map_incremental(cfg)?
            };
            println!(
                "{} scans, {} points, {} samples, {} feature slots, {} iterations in {:.1} s",
                s.scans, s.points, s.samples, s.slots, s.iterations, s.seconds
            );
            if let Some(r) = s.last {
                println!("final loss {:.6} (bce {:.6}, eikonal {:.6}, reg {:.6})", r.total, r.bce, r.eikonal, r.reg);
            }
            println!("field written to {}", s.field_file.display());
        }
        "mesh" => {
            let (mesh, path) = pipeline::mesh(cfg)?;
            println!(
                "{} vertices, {} triangles written to {}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                path.display()
            );
        }
        "eval" => {
            let report = pipeline::eval(cfg)?;
            print!("{report}");
            println!("{}", implicit_map::evaluator::ReconReport::CSV_HEADER);
            println!("{}", report.csv_row());
        }
        "make-synthetic" => {
            let files = pipeline::make_synthetic(cfg)?;
            println!(
                "{} points in {}, poses in {}, ground truth in {}",
                files.points,
                files.scan_dir.display(),
                files.pose_file.display(),
                files.gt_mesh.display()
            );
        }
        _ => unreachable!("subcommand_required"),
    }
    Ok(())
}

fn exit_code(e: &MapError) -> u8 {
    match e {
        MapError::Config(_) | MapError::Argument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand_required");
    let keys = subcommands()
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|s| s.2)
        .expect("registered subcommand");
    let result = build_config(sub, keys).and_then(|cfg| {
        if cfg.threads > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
                log::warn!("thread pool: {e}");
            }
        }
        run(name, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
