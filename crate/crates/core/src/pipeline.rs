//! End-to-end runs driven by a [`RunConfig`]: batch and incremental mapping,
//! mesh extraction, evaluation and synthetic data generation.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset_io::{read_mesh_ply, read_scan, read_scan_ply, scan_sequence, to_world, voxel_downsample, Pose, RunConfig, Scan};
use crate::error::{MapError, Result};
use crate::evaluator::{compute_report, sample_surface, ReconReport};
use crate::mesher::{extract_mesh, write_mesh, MeshOptions, TriangleMesh};
use crate::sampler::{sample_scan, Sample};
use crate::synthetic::{SceneFiles, SyntheticScene};
use crate::trainer::{TrainReport, Trainer};
use crate::{FeatureField, MlpDecoder};

/// Outcome of a mapping run.
#[derive(Clone, Debug, Default)]
pub struct MapSummary {
    pub scans: usize,
    pub points: usize,
    pub samples: usize,
    pub slots: usize,
    pub iterations: u64,
    pub last: Option<TrainReport>,
    pub field_file: PathBuf,
    pub seconds: f64,
}

/// Fails with a configuration error unless `path` names an existing file.
pub fn require_file(key: &str, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(MapError::Config(format!("{key} is not set")));
    }
    if !path.is_file() {
        return Err(MapError::Config(format!("{key}: {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(key: &str, path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(MapError::Config(format!("{key}: {} is not a directory", path.display())));
    }
    Ok(())
}

fn create_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| MapError::io(&cfg.out_dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| MapError::io(p, e)),
        _ => Ok(()),
    }
}

fn scan_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn load_scan(cfg: &RunConfig, path: &Path, pose: &Pose, index: usize) -> Result<Scan> {
    let raw = read_scan(path)?;
    let mut scan = to_world(&raw, pose, cfg.max_range, index);
    if cfg.voxel_downsample > 0.0 {
        scan.points = voxel_downsample(&scan.points, cfg.voxel_downsample);
    }
    Ok(scan)
}

fn input_sequence(cfg: &RunConfig) -> Result<Vec<(PathBuf, Pose)>> {
    require_dir("scan_dir", &cfg.scan_dir)?;
    require_file("pose_file", &cfg.pose_file)?;
    let seq = scan_sequence(&cfg.scan_dir, &cfg.pose_file)?;
    if seq.is_empty() {
        return Err(MapError::Config(format!("no scans in {}", cfg.scan_dir.display())));
    }
    Ok(seq)
}

/// Reads scans on a helper thread, at most two ahead of `consume`.
fn for_each_scan(
    cfg: &RunConfig,
    seq: &[(PathBuf, Pose)],
    start: usize,
    mut consume: impl FnMut(Scan) -> Result<ControlFlow<()>>,
) -> Result<()> {
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel::<Result<Scan>>(2);
        s.spawn(move || {
            for (i, (path, pose)) in seq.iter().enumerate().skip(start) {
                if tx.send(load_scan(cfg, path, pose, i)).is_err() {
                    break;
                }
            }
        });
        for scan in rx {
            if consume(scan?)?.is_break() {
                break;
            }
        }
        Ok(())
    })
}

/// Joint training of features and a fresh decoder on all scans at once.
pub fn map_batch(cfg: &RunConfig) -> Result<MapSummary> {
    cfg.validate()?;
    let seq = input_sequence(cfg)?;
    create_out_dir(cfg)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = cfg.layout()?.centered_on(&seq[0].1.translation);
    let mut field = FeatureField::new(layout)?;
    let mut decoder = MlpDecoder::new(cfg.mlp_config(), &mut rng)?;
    let sampler = cfg.sampler_config();
    let mut samples: Vec<Sample> = Vec::new();
    let mut summary = MapSummary::default();
    for_each_scan(cfg, &seq, 0, |scan| {
        field.allocate_for_points(&scan.points, &mut rng)?;
        let (s, skipped) = sample_scan(&scan.sensor_origin, &scan.points, &sampler, &mut rng);
        if skipped > 0 {
            log::debug!("scan {}: {skipped} degenerate beams", scan.index);
        }
        summary.scans += 1;
        summary.points += scan.points.len();
        samples.extend(s);
        Ok(ControlFlow::Continue(()))
    })?;
    log::info!(
        "{} scans, {} points, {} samples, {} feature slots",
        summary.scans,
        summary.points,
        samples.len(),
        field.slot_count()
    );
    let log_path = cfg.log_path();
    create_parent(&log_path)?;
    let mut trainer = Trainer::new(cfg.train_config())?.with_log(&log_path)?;
    let reports = trainer.train_batch(&mut field, &mut decoder, &samples, cfg.iterations, &mut rng)?;
    let field_file = cfg.field_path();
    create_parent(&field_file)?;
    field.save(&field_file)?;
    let model_file = cfg.model_path();
    create_parent(&model_file)?;
    decoder.save(&model_file)?;
    summary.samples = samples.len();
    summary.slots = field.slot_count();
    summary.iterations = trainer.iteration();
    summary.last = reports.last().copied();
    summary.field_file = field_file;
    summary.seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Where an incremental run keeps its periodic snapshot.
pub fn checkpoint_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    (cfg.out_dir.join("checkpoint.imf"), cfg.out_dir.join("checkpoint.next"))
}

fn write_checkpoint(cfg: &RunConfig, field: &FeatureField, next_scan: usize) -> Result<()> {
    let (field_path, next_path) = checkpoint_paths(cfg);
    let tmp = field_path.with_extension("imf.tmp");
    field.save(&tmp)?;
    fs::rename(&tmp, &field_path).map_err(|e| MapError::io(&field_path, e))?;
    fs::write(&next_path, format!("{next_scan}\n")).map_err(|e| MapError::io(&next_path, e))
}

fn read_checkpoint(cfg: &RunConfig) -> Result<Option<(FeatureField, usize)>> {
    let (field_path, next_path) = checkpoint_paths(cfg);
    if !field_path.is_file() || !next_path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&next_path).map_err(|e| MapError::io(&next_path, e))?;
    let next = text
        .trim()
        .parse::<usize>()
        .map_err(|_| MapError::format(&next_path, format!("expected a scan index, found '{}'", text.trim())))?;
    Ok(Some((FeatureField::load(&field_path)?, next)))
}

/// Per-scan incremental mapping with a frozen pre-trained decoder.
///
/// Every scan draws from its own random stream, so a run resumed from a
/// checkpoint reproduces the uninterrupted run exactly. `stop_after` ends
/// the run early once that many scans have been processed in this call.
pub fn map_incremental_until(cfg: &RunConfig, stop_after: Option<usize>) -> Result<MapSummary> {
    cfg.validate()?;
    require_file("model_file", &cfg.model_file)?;
    let mut decoder = MlpDecoder::load_for(&cfg.model_file, cfg.feature_len)?;
    decoder.freeze();
    let seq = input_sequence(cfg)?;
    create_out_dir(cfg)?;
    let start = Instant::now();

    let resumed = if cfg.resume { read_checkpoint(cfg)? } else { None };
    let (mut field, first) = match resumed {
        Some((field, next)) => {
            if field.layout().feature_len != cfg.feature_len {
                return Err(MapError::Config(format!(
                    "checkpoint has feature length {}, configuration says {}",
                    field.layout().feature_len,
                    cfg.feature_len
                )));
            }
            log::info!("resuming at scan {next} of {}", seq.len());
            (field, next.min(seq.len()))
        }
        None => (FeatureField::new(cfg.layout()?.centered_on(&seq[0].1.translation))?, 0),
    };

    let log_path = cfg.log_path();
    create_parent(&log_path)?;
    let mut trainer = Trainer::new(cfg.train_config())?.with_log(&log_path)?;
    let sampler = cfg.sampler_config();
    let mut summary = MapSummary::default();
    let mut done = 0usize;
    for_each_scan(cfg, &seq, first, |scan| {
        if stop_after.is_some_and(|n| done >= n) {
            return Ok(ControlFlow::Break(()));
        }
        let mut rng = scan_rng(cfg.seed, scan.index);
        field.allocate_for_points(&scan.points, &mut rng)?;
        let (samples, _) = sample_scan(&scan.sensor_origin, &scan.points, &sampler, &mut rng);
        let reports = trainer.train_incremental_step(&mut field, &decoder, &samples, cfg.iters_per_scan, &mut rng)?;
        if let Some(r) = reports.last() {
            log::debug!("scan {}: loss {:.5} ({} samples)", scan.index, r.total, samples.len());
            summary.last = Some(*r);
        }
        summary.scans += 1;
        summary.points += scan.points.len();
        summary.samples += samples.len();
        done += 1;
        let next = scan.index + 1;
        if cfg.checkpoint_every > 0 && next % cfg.checkpoint_every == 0 && next < seq.len() {
            write_checkpoint(cfg, &field, next)?;
        }
        Ok(ControlFlow::Continue(()))
    })?;
    let field_file = cfg.field_path();
    // an interrupted run leaves only its checkpoint behind
    if first + done == seq.len() {
        create_parent(&field_file)?;
        field.save(&field_file)?;
    }
    summary.slots = field.slot_count();
    summary.iterations = trainer.iteration();
    summary.field_file = field_file;
    summary.seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn map_incremental(cfg: &RunConfig) -> Result<MapSummary> {
    map_incremental_until(cfg, None)
}

pub fn mesh_options(cfg: &RunConfig) -> MeshOptions {
    MeshOptions {
        bbox: cfg.bbox,
        block_cells: cfg.mesh_block,
        validity: cfg.mesh_validity,
        ..MeshOptions::new(cfg.mesh_cell)
    }
}

/// Loads the field and decoder named by the configuration.
pub fn load_map(cfg: &RunConfig) -> Result<(FeatureField, MlpDecoder)> {
    let field_path = cfg.field_path();
    let model_path = cfg.model_path();
    require_file("field_file", &field_path)?;
    require_file("model_file", &model_path)?;
    let field = FeatureField::load(&field_path)?;
    let decoder = MlpDecoder::load_for(&model_path, field.layout().feature_len)?;
    Ok((field, decoder))
}

/// Extracts the zero level set and writes it to `mesh_file`.
pub fn mesh(cfg: &RunConfig) -> Result<(TriangleMesh, PathBuf)> {
    if !(cfg.mesh_cell > 0.0) {
        return Err(MapError::Argument(format!("mesh_cell must be positive, got {}", cfg.mesh_cell)));
    }
    let (field, decoder) = load_map(cfg)?;
    let mesh = extract_mesh(&field, &decoder, &mesh_options(cfg))?;
    let path = cfg.mesh_path();
    create_parent(&path)?;
    write_mesh(&mesh, &path, cfg.mesh_format)?;
    Ok((mesh, path))
}

/// Surface points of a PLY file: area-weighted samples of its faces, or its
/// vertices when it has none.
pub fn surface_points(path: &Path, n: usize, seed: u64) -> Result<Vec<crate::Vec3>> {
    let mesh = read_mesh_ply(path)?;
    if mesh.triangles.is_empty() {
        Ok(mesh.vertices)
    } else {
        sample_surface(&mesh, n, seed)
    }
}

/// Scores the predicted mesh against ground truth and writes the CSV report.
pub fn eval(cfg: &RunConfig) -> Result<ReconReport> {
    let pred_path = cfg.pred_mesh_path();
    require_file("pred_mesh", &pred_path)?;
    require_file("gt_mesh", &cfg.gt_mesh)?;
    let pred = surface_points(&pred_path, cfg.eval_samples, cfg.seed)?;
    let gt = surface_points(&cfg.gt_mesh, cfg.eval_samples, cfg.seed.wrapping_add(1))?;
    let mask = if cfg.gt_mask.as_os_str().is_empty() {
        None
    } else {
        require_file("gt_mask", &cfg.gt_mask)?;
        Some(read_scan_ply(&cfg.gt_mask)?.points)
    };
    let report = compute_report(&pred, &gt, mask.as_deref(), cfg.tau)?;
    let path = cfg.report_path();
    create_parent(&path)?;
    fs::write(&path, format!("{}\n{}\n", ReconReport::CSV_HEADER, report.csv_row()))
        .map_err(|e| MapError::io(&path, e))?;
    Ok(report)
}

/// Generates the configured synthetic scene into `out_dir`.
pub fn make_synthetic(cfg: &RunConfig) -> Result<SceneFiles> {
    let scene = SyntheticScene::by_name(&cfg.scene, cfg.scan_count, cfg.seed)?;
    create_out_dir(cfg)?;
    scene.write(&cfg.out_dir)
}
