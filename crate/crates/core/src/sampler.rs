//! Training pairs drawn along sensor beams.
//!
//! Every sample carries the projected signed distance to the beam endpoint
//! (positive on the sensor side) and its sigmoid label.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MapError, Result};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beam {
    pub origin: Vec3,
    pub endpoint: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Free,
    Band,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub position: Vec3,
    pub proj_sdf: f64,
    pub label: f64,
    pub kind: SampleKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_free: usize,
    pub n_band: usize,
    pub sigma: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_free: 5,
            n_band: 5,
            sigma: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_band == 0 || !(self.sigma > 0.0) {
            return Err(MapError::Argument(format!(
                "sampler needs n_band >= 1 and sigma > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn band_half_width(&self) -> f64 {
        3.0 * self.sigma
    }
}

/// `1 / (1 + exp(d / sigma))`: close to 1 in front of the surface, 0 behind it.
#[inline]
pub fn sigmoid_label(d: f64, sigma: f64) -> f64 {
    1.0 / (1.0 + (d / sigma).exp())
}

/// Samples for one beam, or `None` for a zero-length beam.
pub fn sample_beam<R: Rng + ?Sized>(beam: &Beam, cfg: &SamplerConfig, rng: &mut R) -> Option<Vec<Sample>> {
    let ray = beam.endpoint - beam.origin;
    let length = ray.norm();
    if !(length > 0.0) || !length.is_finite() {
        return None;
    }
    let dir = ray / length;
    let band = cfg.band_half_width();
    let mut out = Vec::with_capacity(cfg.n_band + cfg.n_free);
    let make = |d: f64, kind| Sample {
        position: beam.endpoint - dir * d,
        proj_sdf: d,
        label: sigmoid_label(d, cfg.sigma),
        kind,
    };
    if length > band {
        for _ in 0..cfg.n_band {
            out.push(make(rng.random_range(-band..=band), SampleKind::Band));
        }
        let free_len = length - band;
        for _ in 0..cfg.n_free {
            let t = rng.random_range(0.0..free_len);
            out.push(make(length - t, SampleKind::Free));
        }
    } else {
        // short beam: everything comes from the band, clipped at the sensor
        for _ in 0..cfg.n_band + cfg.n_free {
            out.push(make(rng.random_range(-band..=length), SampleKind::Band));
        }
    }
    Some(out)
}

/// Samples for every beam from `origin` to each point. Returns the samples and
/// the number of degenerate beams skipped.
pub fn sample_scan<R: Rng + ?Sized>(
    origin: &Vec3,
    points: &[Vec3],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> (Vec<Sample>, usize) {
    let mut samples = Vec::with_capacity(points.len() * (cfg.n_band + cfg.n_free));
    let mut skipped = 0;
    for p in points {
        match sample_beam(&Beam { origin: *origin, endpoint: *p }, cfg, rng) {
            Some(s) => samples.extend(s),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} zero-length beams");
    }
    (samples, skipped)
}

/// A shuffled partition of `0..pool` into batches; one call is one epoch.
pub fn assemble_batch<R: Rng + ?Sized>(pool: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Endless stream of minibatches drawn epoch by epoch.
pub struct BatchStream {
    pool: usize,
    batch_size: usize,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream {
    pub fn new(pool: usize, batch_size: usize) -> Self {
        Self {
            pool,
            batch_size: batch_size.max(1),
            pending: Vec::new().into_iter(),
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Vec<usize>> {
        if self.pool == 0 {
            return None;
        }
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.pending = assemble_batch(self.pool, self.batch_size, rng).into_iter();
        self.pending.next()
    }
}
