//! Loss and gradient evaluation over a minibatch.
//!
//! Samples are split into fixed-size chunks evaluated in parallel; chunk
//! results are merged in chunk order so sums are reproducible regardless of
//! the number of worker threads.

use rayon::prelude::*;

use super::loss::{bce_from_sdf, reg_loss};
use super::LossConfig;
use crate::decoder::{MlpDecoder, Workspace};
use crate::field::table::MortonTable;
use crate::field::{FeatureField, QueryResult};
use crate::sampler::{Sample, SampleKind};
use crate::Vec3;

const CHUNK: usize = 128;

/// Gradient over a sparse set of feature slots, in first-touch order.
#[derive(Clone, Debug)]
pub struct SparseGrad {
    feature_len: usize,
    index: MortonTable,
    slots: Vec<u32>,
    values: Vec<f64>,
}

impl SparseGrad {
    pub fn new(feature_len: usize) -> Self {
        Self {
            feature_len,
            index: MortonTable::default(),
            slots: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    fn entry(&mut self, slot: u32) -> &mut [f64] {
        let next = self.slots.len() as u32;
        let (pos, fresh) = self.index.get_or_insert_with(slot as u64, || next);
        if fresh {
            self.slots.push(slot);
            self.values.resize(self.values.len() + self.feature_len, 0.0);
        }
        let l = self.feature_len;
        &mut self.values[pos as usize * l..(pos as usize + 1) * l]
    }

    /// Adds `scale * v` to the gradient of `slot`.
    #[inline]
    pub fn add_scaled(&mut self, slot: u32, scale: f64, v: &[f64]) {
        for (g, x) in self.entry(slot).iter_mut().zip(v) {
            *g += scale * x;
        }
    }

    /// Adds `|scale * v|` elementwise.
    #[inline]
    fn add_abs(&mut self, slot: u32, scale: f64, v: &[f64]) {
        for (g, x) in self.entry(slot).iter_mut().zip(v) {
            *g += (scale * x).abs();
        }
    }

    fn merge_scaled(&mut self, other: &SparseGrad, scale: f64) {
        for (slot, g) in other.iter() {
            self.add_scaled(slot, scale, g);
        }
    }

    pub fn get(&self, slot: u32) -> Option<&[f64]> {
        let pos = self.index.get(slot as u64)? as usize;
        Some(&self.values[pos * self.feature_len..(pos + 1) * self.feature_len])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.slots.iter().copied().zip(self.values.chunks_exact(self.feature_len))
    }

    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Loss values for one minibatch. `total = bce + lambda_e * eikonal + lambda_r * reg`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub bce: f64,
    pub eikonal: f64,
    pub reg: f64,
    pub total: f64,
    pub bce_samples: usize,
    pub eikonal_samples: usize,
    pub eikonal_skipped: usize,
    pub misses: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub terms: LossTerms,
    pub features: SparseGrad,
    pub mlp: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mlp_grad: bool,
    pub include_reg: bool,
}

struct ChunkAccum {
    bce_sum: f64,
    eik_sum: f64,
    n_bce: usize,
    n_eik: usize,
    eik_skipped: usize,
    misses: usize,
    bce_feat: SparseGrad,
    eik_feat: SparseGrad,
    bce_mlp: Option<Vec<f64>>,
    eik_mlp: Option<Vec<f64>>,
}

struct Scratch {
    q: QueryResult,
    ws: Workspace,
    probes: [QueryResult; 6],
    probe_ws: [Workspace; 6],
    d_in: Vec<f64>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            q: QueryResult::default(),
            ws: Workspace::default(),
            probes: Default::default(),
            probe_ws: Default::default(),
            d_in: Vec::new(),
        }
    }
}

fn eval_chunk(
    field: &FeatureField,
    decoder: &MlpDecoder,
    samples: &[&Sample],
    cfg: &LossConfig,
    mlp_grad: bool,
) -> ChunkAccum {
    let l = field.feature_len();
    let np = decoder.param_count();
    let mut acc = ChunkAccum {
        bce_sum: 0.0,
        eik_sum: 0.0,
        n_bce: 0,
        n_eik: 0,
        eik_skipped: 0,
        misses: 0,
        bce_feat: SparseGrad::new(l),
        eik_feat: SparseGrad::new(l),
        bce_mlp: mlp_grad.then(|| vec![0.0; np]),
        eik_mlp: mlp_grad.then(|| vec![0.0; np]),
    };
    let mut s = Scratch::new();
    let eps = cfg.fd_step;
    for sample in samples {
        if !field.query_into(&sample.position, &mut s.q) {
            acc.misses += 1;
            continue;
        }
        let f = decoder.forward_ws(&s.q.summed_feature, &mut s.ws);
        let (loss, dldf) = bce_from_sdf(f, sample.label, cfg.sigma);
        acc.bce_sum += loss;
        acc.n_bce += 1;
        s.d_in.clear();
        s.d_in.resize(l, 0.0);
        decoder.backward_ws(&mut s.ws, dldf, acc.bce_mlp.as_deref_mut(), &mut s.d_in);
        for c in &s.q.contributions {
            acc.bce_feat.add_scaled(c.slot, c.weight, &s.d_in);
        }

        if cfg.lambda_e == 0.0 || sample.kind != SampleKind::Band {
            continue;
        }
        let mut values = [0.0; 6];
        let mut ok = true;
        for p in 0..6 {
            let mut x = sample.position;
            x[p / 2] += if p % 2 == 0 { eps } else { -eps };
            if !field.query_into(&x, &mut s.probes[p]) {
                ok = false;
                break;
            }
            values[p] = decoder.forward_ws(&s.probes[p].summed_feature, &mut s.probe_ws[p]);
        }
        if !ok {
            acc.eik_skipped += 1;
            continue;
        }
        let g = Vec3::new(
            (values[0] - values[1]) / (2.0 * eps),
            (values[2] - values[3]) / (2.0 * eps),
            (values[4] - values[5]) / (2.0 * eps),
        );
        let norm = g.norm();
        acc.eik_sum += (norm - 1.0).powi(2);
        acc.n_eik += 1;
        if norm == 0.0 {
            continue;
        }
        for p in 0..6 {
            let dg = 2.0 * (norm - 1.0) * g[p / 2] / norm;
            let upstream = if p % 2 == 0 { dg } else { -dg } / (2.0 * eps);
            s.d_in.clear();
            s.d_in.resize(l, 0.0);
            decoder.backward_ws(&mut s.probe_ws[p], upstream, acc.eik_mlp.as_deref_mut(), &mut s.d_in);
            for c in &s.probes[p].contributions {
                acc.eik_feat.add_scaled(c.slot, c.weight, &s.d_in);
            }
        }
    }
    acc
}

/// Loss and gradients of the minibatch objective: mean BCE over samples that
/// hit the field, plus `lambda_e` times the mean Eikonal term over band
/// samples whose six probes hit, plus (optionally) `lambda_r` times the anchor
/// regularizer over every slot touched by those queries.
pub fn evaluate(
    field: &FeatureField,
    decoder: &MlpDecoder,
    samples: &[&Sample],
    cfg: &LossConfig,
    opts: EvalOptions,
) -> Evaluation {
    let chunks: Vec<ChunkAccum> = samples
        .par_chunks(CHUNK)
        .map(|c| eval_chunk(field, decoder, c, cfg, opts.mlp_grad))
        .collect();

    let mut terms = LossTerms::default();
    let (mut bce_sum, mut eik_sum) = (0.0, 0.0);
    for c in &chunks {
        bce_sum += c.bce_sum;
        eik_sum += c.eik_sum;
        terms.bce_samples += c.n_bce;
        terms.eikonal_samples += c.n_eik;
        terms.eikonal_skipped += c.eik_skipped;
        terms.misses += c.misses;
    }
    let bce_scale = if terms.bce_samples > 0 { 1.0 / terms.bce_samples as f64 } else { 0.0 };
    let eik_scale = if terms.eikonal_samples > 0 {
        cfg.lambda_e / terms.eikonal_samples as f64
    } else {
        0.0
    };
    terms.bce = bce_sum * bce_scale;
    terms.eikonal = if terms.eikonal_samples > 0 { eik_sum / terms.eikonal_samples as f64 } else { 0.0 };

    let mut features = SparseGrad::new(field.feature_len());
    let mut mlp = opts.mlp_grad.then(|| vec![0.0; decoder.param_count()]);
    for c in &chunks {
        features.merge_scaled(&c.bce_feat, bce_scale);
        if let (Some(m), Some(g)) = (mlp.as_mut(), c.bce_mlp.as_ref()) {
            for (a, b) in m.iter_mut().zip(g) {
                *a += bce_scale * b;
            }
        }
    }
    for c in &chunks {
        features.merge_scaled(&c.eik_feat, eik_scale);
        if let (Some(m), Some(g)) = (mlp.as_mut(), c.eik_mlp.as_ref()) {
            for (a, b) in m.iter_mut().zip(g) {
                *a += eik_scale * b;
            }
        }
    }

    if opts.include_reg && cfg.lambda_r != 0.0 {
        let touched = features.slots().to_vec();
        terms.reg = reg_loss(field, &touched);
        let l = field.feature_len();
        let scale = 2.0 * cfg.lambda_r;
        let mut d = vec![0.0; l];
        for slot in touched {
            if !field.is_anchored(slot) {
                continue;
            }
            let base = slot as usize * l;
            for (j, dj) in d.iter_mut().enumerate() {
                let i = base + j;
                *dj = field.importance()[i] * (field.features()[i] - field.anchors()[i]);
            }
            features.add_scaled(slot, scale, &d);
        }
    }
    terms.total = terms.bce + cfg.lambda_e * terms.eikonal + cfg.lambda_r * terms.reg;
    Evaluation { terms, features, mlp }
}

/// Sum over samples of `|dL_bce / dtheta_i|` for every feature parameter the
/// samples touch, using unnormalized per-sample BCE.
pub fn bce_gradient_magnitudes(
    field: &FeatureField,
    decoder: &MlpDecoder,
    samples: &[Sample],
    sigma: f64,
) -> SparseGrad {
    let l = field.feature_len();
    let chunks: Vec<SparseGrad> = samples
        .par_chunks(CHUNK * 8)
        .map(|chunk| {
            let mut acc = SparseGrad::new(l);
            let mut q = QueryResult::default();
            let mut ws = Workspace::default();
            let mut d_in = vec![0.0; l];
            for sample in chunk {
                if !field.query_into(&sample.position, &mut q) {
                    continue;
                }
                let f = decoder.forward_ws(&q.summed_feature, &mut ws);
                let (_, dldf) = bce_from_sdf(f, sample.label, sigma);
                d_in.iter_mut().for_each(|v| *v = 0.0);
                decoder.backward_ws(&mut ws, dldf, None, &mut d_in);
                // each slot appears at most once per query
                for c in &q.contributions {
                    acc.add_abs(c.slot, c.weight, &d_in);
                }
            }
            acc
        })
        .collect();
    let mut out = SparseGrad::new(l);
    for c in &chunks {
        out.merge_scaled(c, 1.0);
    }
    out
}
