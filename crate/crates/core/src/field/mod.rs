//! Sparse multi-resolution feature grid.
//!
//! Level `h` partitions space into cubes of edge `leaf_size * 2^h`. Every
//! allocated cube owns the feature vectors at its eight corners; a corner
//! shared by neighbouring cubes of the same level is stored once. Corners are
//! addressed by the Morton code of their integer lattice index, one hash table
//! per level, and all feature vectors live in a single flat slot array.

mod io;
pub mod morton;
pub mod table;

use rand::Rng;

use crate::error::{MapError, Result};
use crate::Vec3;

pub use io::{FIELD_MAGIC, FIELD_VERSION};
use morton::{encode_unchecked, MAX_BITS_PER_AXIS};
use table::MortonTable;

/// Half-width of the uniform distribution new features are drawn from.
pub const FEATURE_INIT_SCALE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldLayout {
    /// Edge length of a level-0 node in meters.
    pub leaf_size: f64,
    pub level_count: usize,
    pub feature_len: usize,
    /// Added to `floor(x / leaf_size)` so every lattice index is non-negative.
    pub world_offset: [i64; 3],
    pub bits_per_axis: u32,
}

impl FieldLayout {
    /// Layout whose representable cube is centered on the world origin.
    pub fn new(leaf_size: f64, level_count: usize, feature_len: usize) -> Result<Self> {
        let half = 1i64 << (MAX_BITS_PER_AXIS - 1);
        let layout = Self {
            leaf_size,
            level_count,
            feature_len,
            world_offset: [half; 3],
            bits_per_axis: MAX_BITS_PER_AXIS,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Re-centers the representable cube on `origin` (typically the first sensor position).
    pub fn centered_on(mut self, origin: &Vec3) -> Self {
        let half = 1i64 << (self.bits_per_axis - 1);
        for k in 0..3 {
            self.world_offset[k] = half - (origin[k] / self.leaf_size).floor() as i64;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leaf_size > 0.0 && self.leaf_size.is_finite()) {
            return Err(MapError::Argument(format!("leaf_size must be positive, got {}", self.leaf_size)));
        }
        if self.level_count == 0 || self.feature_len == 0 {
            return Err(MapError::Argument("level_count and feature_len must be at least 1".into()));
        }
        if self.bits_per_axis == 0 || self.bits_per_axis > MAX_BITS_PER_AXIS {
            return Err(MapError::Argument(format!(
                "bits_per_axis must be in 1..={MAX_BITS_PER_AXIS}, got {}",
                self.bits_per_axis
            )));
        }
        if self.level_count as u32 >= self.bits_per_axis {
            return Err(MapError::Argument("level_count must be below bits_per_axis".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn node_size(&self, level: usize) -> f64 {
        self.leaf_size * (1u64 << level) as f64
    }

    /// Level-0 lattice index of the node containing `x`, offset into the representable range.
    pub fn leaf_index(&self, x: &Vec3) -> Result<[i64; 3]> {
        // the +1 corner of the node must also be representable
        let limit = (1i64 << self.bits_per_axis) - 1;
        let mut out = [0i64; 3];
        for (k, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
            let f = (x[k] / self.leaf_size).floor();
            if !f.is_finite() || f.abs() > 1e15 {
                return Err(MapError::Range { axis, index: i64::MAX, limit });
            }
            let idx = f as i64 + self.world_offset[k];
            if !(0..limit).contains(&idx) {
                return Err(MapError::Range { axis, index: idx, limit });
            }
            out[k] = idx;
        }
        Ok(out)
    }

    /// World position of lattice corner `corner` at `level`.
    pub fn corner_position(&self, level: usize, corner: [i64; 3]) -> Vec3 {
        Vec3::from_fn(|k, _| ((corner[k] << level) - self.world_offset[k]) as f64 * self.leaf_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub slot: u32,
    pub weight: f64,
    pub level: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryResult {
    /// Sum over contributing levels of the trilinearly interpolated feature.
    pub summed_feature: Vec<f64>,
    /// Eight entries per contributing level, in level order.
    pub contributions: Vec<Contribution>,
    /// Bit `h` set when level `h` contributed.
    pub level_mask: u32,
}

impl QueryResult {
    pub fn is_hit(&self) -> bool {
        self.level_mask != 0
    }

    pub fn clear(&mut self, feature_len: usize) {
        self.summed_feature.clear();
        self.summed_feature.resize(feature_len, 0.0);
        self.contributions.clear();
        self.level_mask = 0;
    }
}

/// Corner offsets in the order used everywhere: bit 0 = x, bit 1 = y, bit 2 = z.
#[inline]
pub(crate) fn corner_offset(c: usize) -> [i64; 3] {
    [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64]
}

/// The learnable feature store: per-level corner tables plus the flat
/// parameter, anchor and importance arrays.
#[derive(Clone, Debug)]
pub struct FeatureField {
    layout: FieldLayout,
    tables: Vec<MortonTable>,
    features: Vec<f64>,
    anchors: Vec<f64>,
    importance: Vec<f64>,
    anchored: Vec<bool>,
}

impl FeatureField {
    pub fn new(layout: FieldLayout) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            tables: vec![MortonTable::default(); layout.level_count],
            layout,
            features: Vec::new(),
            anchors: Vec::new(),
            importance: Vec::new(),
            anchored: Vec::new(),
        })
    }

    pub fn layout(&self) -> &FieldLayout {
        &self.layout
    }

    pub fn feature_len(&self) -> usize {
        self.layout.feature_len
    }

    pub fn slot_count(&self) -> usize {
        self.anchored.len()
    }

    pub fn param_count(&self) -> usize {
        self.features.len()
    }

    /// Number of corner slots allocated at one level.
    pub fn level_slot_count(&self, level: usize) -> usize {
        self.tables[level].len()
    }

    pub fn slot_at(&self, level: usize, corner: [i64; 3]) -> Option<u32> {
        let limit = 1i64 << self.layout.bits_per_axis;
        if corner.iter().any(|c| !(0..limit).contains(c)) {
            return None;
        }
        self.tables[level].get(encode_unchecked(corner[0] as u32, corner[1] as u32, corner[2] as u32))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn feature(&self, slot: u32) -> &[f64] {
        let l = self.layout.feature_len;
        &self.features[slot as usize * l..(slot as usize + 1) * l]
    }

    pub fn feature_mut(&mut self, slot: u32) -> &mut [f64] {
        let l = self.layout.feature_len;
        &mut self.features[slot as usize * l..(slot as usize + 1) * l]
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn importance_mut(&mut self) -> &mut [f64] {
        &mut self.importance
    }

    pub fn is_anchored(&self, slot: u32) -> bool {
        self.anchored[slot as usize]
    }

    /// Ensures every level's node around each point exists with all eight
    /// corners. Returns the number of slots created.
    pub fn allocate_for_points<R: Rng + ?Sized>(&mut self, points: &[Vec3], rng: &mut R) -> Result<usize> {
        let before = self.slot_count();
        for p in points {
            let leaf = self.layout.leaf_index(p)?;
            for level in 0..self.layout.level_count {
                let node = leaf.map(|i| i >> level);
                for c in 0..8 {
                    let off = corner_offset(c);
                    let code = encode_unchecked(
                        (node[0] + off[0]) as u32,
                        (node[1] + off[1]) as u32,
                        (node[2] + off[2]) as u32,
                    );
                    let next = self.anchored.len() as u32;
                    let (_, fresh) = self.tables[level].get_or_insert_with(code, || next);
                    if fresh {
                        self.push_slot(rng);
                    }
                }
            }
        }
        Ok(self.slot_count() - before)
    }

    fn push_slot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for _ in 0..self.layout.feature_len {
            self.features.push(rng.random_range(-FEATURE_INIT_SCALE..=FEATURE_INIT_SCALE));
            self.anchors.push(0.0);
            self.importance.push(0.0);
        }
        self.anchored.push(false);
    }

    /// Trilinear multi-level query. Returns `false` (miss) when no level has
    /// all eight corners of its containing node allocated.
    pub fn query_into(&self, x: &Vec3, out: &mut QueryResult) -> bool {
        let l = self.layout.feature_len;
        out.clear(l);
        let Ok(leaf) = self.layout.leaf_index(x) else {
            return false;
        };
        let mut slots = [0u32; 8];
        'levels: for level in 0..self.layout.level_count {
            let node = leaf.map(|i| i >> level);
            for (c, slot) in slots.iter_mut().enumerate() {
                let off = corner_offset(c);
                let code = encode_unchecked(
                    (node[0] + off[0]) as u32,
                    (node[1] + off[1]) as u32,
                    (node[2] + off[2]) as u32,
                );
                match self.tables[level].get(code) {
                    Some(s) => *slot = s,
                    None => continue 'levels,
                }
            }
            let size = self.layout.node_size(level);
            let base = self.layout.corner_position(level, node);
            let t = Vec3::from_fn(|k, _| ((x[k] - base[k]) / size).clamp(0.0, 1.0));
            for (c, &slot) in slots.iter().enumerate() {
                let wx = if c & 1 == 1 { t.x } else { 1.0 - t.x };
                let wy = if c & 2 == 2 { t.y } else { 1.0 - t.y };
                let wz = if c & 4 == 4 { t.z } else { 1.0 - t.z };
                let w = wx * wy * wz;
                let feat = &self.features[slot as usize * l..(slot as usize + 1) * l];
                for (s, f) in out.summed_feature.iter_mut().zip(feat) {
                    *s += w * f;
                }
                out.contributions.push(Contribution {
                    slot,
                    weight: w,
                    level: level as u8,
                });
            }
            out.level_mask |= 1 << level;
        }
        out.is_hit()
    }

    pub fn query(&self, x: &Vec3) -> Option<QueryResult> {
        let mut out = QueryResult::default();
        self.query_into(x, &mut out).then_some(out)
    }

    /// Copies the current parameters of `touched` slots into the anchor array.
    pub fn snapshot_anchors(&mut self, touched: &[u32]) {
        let l = self.layout.feature_len;
        for &slot in touched {
            let r = slot as usize * l..(slot as usize + 1) * l;
            self.anchors[r.clone()].copy_from_slice(&self.features[r]);
            self.anchored[slot as usize] = true;
        }
    }

    /// Axis-aligned bounds of all allocated level-0 nodes, or `None` when empty.
    pub fn allocated_bounds(&self) -> Option<(Vec3, Vec3)> {
        let entries = self.tables[0].sorted_entries();
        if entries.is_empty() {
            return None;
        }
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (code, _) in entries {
            let (x, y, z) = morton::morton_decode(code);
            for (k, v) in [x, y, z].into_iter().enumerate() {
                lo[k] = lo[k].min(v as i64);
                hi[k] = hi[k].max(v as i64);
            }
        }
        Some((self.layout.corner_position(0, lo), self.layout.corner_position(0, hi)))
    }
}
