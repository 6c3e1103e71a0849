//! Scalar loss terms.

use crate::decoder::MlpDecoder;
use crate::field::{FeatureField, QueryResult};
use crate::Vec3;

/// Lower/upper clamp applied to the predicted occupancy before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross entropy `-(l ln o + (1 - l) ln(1 - o))` with `o` clamped.
pub fn bce_loss(o: f64, l: f64) -> f64 {
    let o = o.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(l * o.ln() + (1.0 - l) * (1.0 - o).ln())
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// BCE of the sigmoid-mapped prediction `o = 1 / (1 + exp(f / sigma))`
/// against label `l`, evaluated in logit space. Returns the loss and its
/// derivative with respect to the raw output `f`.
#[inline]
pub fn bce_from_sdf(f: f64, l: f64, sigma: f64) -> (f64, f64) {
    let z = f / sigma;
    let loss = l * softplus(z) + (1.0 - l) * softplus(-z);
    let o = 1.0 / (1.0 + z.exp());
    (loss, (l - o) / sigma)
}

/// `(|g| - 1)^2`.
pub fn eikonal_loss(grad: &Vec3) -> f64 {
    (grad.norm() - 1.0).powi(2)
}

/// Importance-weighted squared drift from the anchors over the parameters of
/// `slots`. Slots that were never anchored contribute nothing.
pub fn reg_loss(field: &FeatureField, slots: &[u32]) -> f64 {
    let l = field.feature_len();
    let (theta, anchor, omega) = (field.features(), field.anchors(), field.importance());
    let mut sum = 0.0;
    for &s in slots {
        if !field.is_anchored(s) {
            continue;
        }
        let base = s as usize * l;
        for i in base..base + l {
            let d = theta[i] - anchor[i];
            sum += omega[i] * d * d;
        }
    }
    sum
}

/// Decoded signed distance at `x`, or `None` on a miss.
pub fn field_sdf(field: &FeatureField, decoder: &MlpDecoder, x: &Vec3) -> Option<f64> {
    let mut q = QueryResult::default();
    if !field.query_into(x, &mut q) {
        return None;
    }
    Some(decoder.forward_ws(&q.summed_feature, &mut Default::default()))
}

/// Central-difference spatial gradient with step `eps`; `None` if any of the
/// six probes misses.
pub fn spatial_gradient(field: &FeatureField, decoder: &MlpDecoder, x: &Vec3, eps: f64) -> Option<Vec3> {
    let mut g = Vec3::zeros();
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = eps;
        let plus = field_sdf(field, decoder, &(x + e))?;
        let minus = field_sdf(field, decoder, &(x - e))?;
        g[k] = (plus - minus) / (2.0 * eps);
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{Activation, MlpConfig};
    use crate::field::FieldLayout;
    use crate::sampler::sigmoid_label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        let direct = -(0.1 * 0.9f64.ln() + 0.9 * 0.1f64.ln());
        assert!((bce_loss(0.9, 0.1) - direct).abs() < 1e-12);
        assert!((bce_loss(0.9, 0.1) - 2.08286).abs() < 1e-5);
        for l in [0.05, 0.3, 0.5, 0.77] {
            let entropy = -(l * f64::ln(l) + (1.0 - l) * f64::ln(1.0 - l));
            assert!((bce_loss(l, l) - entropy).abs() < 1e-12);
            for o in [0.01, 0.2, 0.4, 0.6, 0.99] {
                assert!(bce_loss(o, l) >= entropy - 1e-12);
            }
        }
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert!(bce_loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn logit_form_matches_clamped_form() {
        let sigma = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let f = rng.random_range(-0.5..0.5);
            let l = sigmoid_label(rng.random_range(-0.2..0.2), sigma);
            let (loss, dldf) = bce_from_sdf(f, l, sigma);
            let o = sigmoid_label(f, sigma);
            assert!((loss - bce_loss(o, l)).abs() < 1e-9 * loss.max(1.0));
            let h = 1e-6;
            let fd = (bce_from_sdf(f + h, l, sigma).0 - bce_from_sdf(f - h, l, sigma).0) / (2.0 * h);
            assert!((fd - dldf).abs() < 1e-5 * dldf.abs().max(1.0));
        }
    }

    #[test]
    fn eikonal_examples() {
        assert_eq!(eikonal_loss(&Vec3::new(0.6, 0.8, 0.0)), 0.0);
        assert_eq!(eikonal_loss(&Vec3::zeros()), 1.0);
        assert_eq!(eikonal_loss(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
    }

    fn one_cell_field() -> FeatureField {
        let mut f = FeatureField::new(FieldLayout::new(1.0, 1, 3).unwrap()).unwrap();
        f.allocate_for_points(&[Vec3::new(0.5, 0.5, 0.5)], &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        f
    }

    /// Decoder returning the first input entry unchanged.
    fn passthrough() -> MlpDecoder {
        let cfg = MlpConfig {
            hidden_layers: 1,
            hidden_width: 1,
            input_len: 3,
            activation: Activation::Identity,
        };
        MlpDecoder::from_params(cfg, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn gradient_of_linear_and_constant_fields() {
        let mut f = one_cell_field();
        // feature[0] at each corner equals its x coordinate: field is g(x) = x
        let base = f.layout().leaf_index(&Vec3::new(0.5, 0.5, 0.5)).unwrap();
        for c in 0..8i64 {
            let corner = [base[0] + (c & 1), base[1] + ((c >> 1) & 1), base[2] + ((c >> 2) & 1)];
            let pos = f.layout().corner_position(0, corner);
            let s = f.slot_at(0, corner).unwrap();
            f.feature_mut(s).copy_from_slice(&[pos.x, 0.0, 0.0]);
        }
        let dec = passthrough();
        let g = spatial_gradient(&f, &dec, &Vec3::new(0.4, 0.5, 0.6), 0.05).unwrap();
        assert!((g - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-6);

        for v in f.features_mut() {
            *v = 0.3;
        }
        let g = spatial_gradient(&f, &dec, &Vec3::new(0.4, 0.5, 0.6), 0.05).unwrap();
        assert!(g.norm() < 1e-12);
        // probes leaving the allocated cell miss
        assert!(spatial_gradient(&f, &dec, &Vec3::new(0.01, 0.5, 0.5), 0.05).is_none());
    }

    #[test]
    fn reg_loss_examples() {
        let mut f = one_cell_field();
        let all: Vec<u32> = (0..8).collect();
        assert_eq!(reg_loss(&f, &all), 0.0); // nothing anchored yet
        f.snapshot_anchors(&all);
        assert_eq!(reg_loss(&f, &all), 0.0);
        f.importance_mut()[7] = 4.0;
        f.features_mut()[7] += 0.5;
        assert!((reg_loss(&f, &all) - 4.0 * 0.25).abs() < 1e-15);
        assert_eq!(reg_loss(&f, &[0, 1]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = f.param_count();
        for i in 0..n {
            f.importance_mut()[i] = rng.random_range(0.0..10.0);
            f.features_mut()[i] += rng.random_range(-0.1..0.1);
        }
        let mut oracle = 0.0;
        for i in 0..n {
            let d = f.features()[i] - f.anchors()[i];
            oracle += f.importance()[i] * d * d;
        }
        assert!((reg_loss(&f, &all) - oracle).abs() < 1e-12);
    }
}
