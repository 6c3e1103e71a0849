//! Helpers shared by the integration tests: tiny random maps and an
//! independent re-implementation of the batch objective.

#![allow(dead_code)]

use implicit_map::field::FieldLayout;
use implicit_map::{Activation, FeatureField, LossConfig, MlpConfig, MlpDecoder, Sample, SampleKind, Vec3};
use rand::Rng;

pub struct TinyMap {
    pub field: FeatureField,
    pub decoder: MlpDecoder,
    pub samples: Vec<Sample>,
    pub loss: LossConfig,
    /// Lower corner and edge of the allocated 2x2x2 leaf block.
    pub block_min: Vec3,
    pub leaf: f64,
}

/// Two levels over a 2x2x2 block of leaves aligned to one level-1 node, so
/// every sample and Eikonal probe lands inside allocated space (35 slots).
pub fn tiny_map<R: Rng>(rng: &mut R, feature_len: usize, hidden_width: usize, n_samples: usize) -> TinyMap {
    let leaf = rng.random_range(0.2..0.6);
    let layout = FieldLayout::new(leaf, 2, feature_len).unwrap();
    let mut field = FeatureField::new(layout).unwrap();
    let node = [0; 3].map(|_| 2 * rng.random_range(-20i64..20));
    let block_min = Vec3::new(node[0] as f64, node[1] as f64, node[2] as f64) * leaf;
    let centers: Vec<Vec3> = (0..8)
        .map(|c| block_min + leaf * Vec3::new(0.5 + (c & 1) as f64, 0.5 + (c >> 1 & 1) as f64, 0.5 + (c >> 2 & 1) as f64))
        .collect();
    field.allocate_for_points(&centers, rng).unwrap();
    for v in field.features_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let decoder = MlpDecoder::new(
        MlpConfig {
            hidden_layers: 2,
            hidden_width,
            input_len: feature_len,
            activation: Activation::Relu,
        },
        rng,
    )
    .unwrap();
    let mut loss = LossConfig::for_leaf(leaf);
    loss.sigma = rng.random_range(0.05..0.3);
    loss.lambda_e = rng.random_range(0.1..1.0);
    let samples = (0..n_samples)
        .map(|_| {
            // keep probes at +-leaf/2 inside the block
            let position = block_min + Vec3::from_fn(|_, _| rng.random_range(0.55..1.45) * leaf);
            let proj_sdf = rng.random_range(-0.5..0.5);
            Sample {
                position,
                proj_sdf,
                label: 1.0 / (1.0 + (proj_sdf / loss.sigma).exp()),
                kind: if rng.random_bool(0.5) { SampleKind::Band } else { SampleKind::Free },
            }
        })
        .collect();
    TinyMap {
        field,
        decoder,
        samples,
        loss,
        block_min,
        leaf,
    }
}

/// Summed multi-level feature built from slot lookups and explicit
/// trilinear weights.
pub fn oracle_feature(field: &FeatureField, x: &Vec3) -> Option<Vec<f64>> {
    let layout = field.layout().clone();
    let l = layout.feature_len;
    let leaf_idx = layout.leaf_index(x).ok()?;
    let mut sum = vec![0.0; l];
    let mut any = false;
    'levels: for h in 0..layout.level_count {
        let node = leaf_idx.map(|i| i >> h);
        let size = layout.leaf_size * (1u64 << h) as f64;
        let origin = layout.corner_position(h, node);
        let t = (x - origin) / size;
        let mut acc = vec![0.0; l];
        for c in 0..8usize {
            let d = [c & 1, c >> 1 & 1, c >> 2 & 1];
            let corner = [0, 1, 2].map(|k| node[k] + d[k] as i64);
            let Some(slot) = field.slot_at(h, corner) else {
                continue 'levels;
            };
            let w: f64 = (0..3).map(|k| if d[k] == 1 { t[k] } else { 1.0 - t[k] }).product();
            for (a, f) in acc.iter_mut().zip(field.feature(slot)) {
                *a += w * f;
            }
        }
        for (s, a) in sum.iter_mut().zip(&acc) {
            *s += a;
        }
        any = true;
    }
    any.then_some(sum)
}

/// MLP forward pass from the flat parameter view; appends the sign of every
/// hidden pre-activation to `pattern`.
pub fn oracle_mlp(dec: &MlpDecoder, input: &[f64], pattern: &mut Vec<bool>) -> f64 {
    let cfg = *dec.config();
    let p = dec.params();
    let mut h = input.to_vec();
    for layer in 0..=cfg.hidden_layers {
        let out = if layer == cfg.hidden_layers { 1 } else { cfg.hidden_width };
        let z: Vec<f64> = (0..out)
            .map(|r| p[dec.bias_index(layer, r)] + (0..h.len()).map(|c| p[dec.weight_index(layer, r, c)] * h[c]).sum::<f64>())
            .collect();
        if layer == cfg.hidden_layers {
            return z[0];
        }
        pattern.extend(z.iter().map(|v| *v > 0.0));
        h = match cfg.activation {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Identity => z,
        };
    }
    unreachable!()
}

pub fn oracle_sdf(field: &FeatureField, dec: &MlpDecoder, x: &Vec3, pattern: &mut Vec<bool>) -> Option<f64> {
    oracle_feature(field, x).map(|f| oracle_mlp(dec, &f, pattern))
}

/// Mean BCE over hits plus `lambda_e` times the mean `(|g| - 1)^2` over band
/// samples whose six probes hit.
pub fn oracle_batch_loss(
    field: &FeatureField,
    dec: &MlpDecoder,
    samples: &[Sample],
    cfg: &LossConfig,
    pattern: &mut Vec<bool>,
) -> f64 {
    let (mut bce, mut n_bce, mut eik, mut n_eik) = (0.0, 0usize, 0.0, 0usize);
    for s in samples {
        let Some(f) = oracle_sdf(field, dec, &s.position, pattern) else {
            continue;
        };
        let o = 1.0 / (1.0 + (f / cfg.sigma).exp());
        bce += -(s.label * o.ln() + (1.0 - s.label) * (1.0 - o).ln());
        n_bce += 1;
        if s.kind != SampleKind::Band || cfg.lambda_e == 0.0 {
            continue;
        }
        let h = cfg.fd_step;
        let mut g = Vec3::zeros();
        let mut ok = true;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            match (
                oracle_sdf(field, dec, &(s.position + e), pattern),
                oracle_sdf(field, dec, &(s.position - e), pattern),
            ) {
                (Some(a), Some(b)) => g[k] = (a - b) / (2.0 * h),
                _ => ok = false,
            }
        }
        if ok {
            eik += (g.norm() - 1.0).powi(2);
            n_eik += 1;
        }
    }
    let bce = if n_bce > 0 { bce / n_bce as f64 } else { 0.0 };
    let eik = if n_eik > 0 { eik / n_eik as f64 } else { 0.0 };
    bce + cfg.lambda_e * eik
}

/// FNV-1a over the bit patterns of a float slice.
pub fn hash_f64(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
