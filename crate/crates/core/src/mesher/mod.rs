//! Surface extraction: evaluate the decoded field on a regular lattice and
//! run marching cubes on its zero level set.

mod export;
pub mod tables;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::decoder::{MlpDecoder, Workspace};
use crate::error::{MapError, Result};
use crate::field::{FeatureField, QueryResult};
use crate::Vec3;

pub use export::{write_mesh, MeshFormat};
use tables::{case_table, EDGE_CORNERS};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Undirected edges used by exactly one triangle. Zero for a closed surface.
    pub fn boundary_edge_count(&self) -> usize {
        let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        uses.values().filter(|&&n| n == 1).count()
    }
}

/// Field values on a block of a regular lattice, x fastest. Point `idx` of
/// the block sits at `origin + (first + idx) * cell_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    pub origin: Vec3,
    pub cell_size: f64,
    /// Global lattice index of the block's first point.
    pub first: [usize; 3],
    /// Lattice points per axis.
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    /// `false` where the field has no prediction; cubes touching such a
    /// point emit nothing.
    pub valid: Vec<bool>,
}

impl SdfGrid {
    /// Samples an analytic function on the lattice (every point valid).
    pub fn from_fn(origin: Vec3, cell_size: f64, dims: [usize; 3], f: impl Fn(&Vec3) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&lattice_point(&origin, cell_size, [i, j, k])));
                }
            }
        }
        let valid = vec![true; values.len()];
        Self {
            origin,
            cell_size,
            first: [0; 3],
            dims,
            values,
            valid,
        }
    }

    #[inline]
    pub fn point(&self, idx: [usize; 3]) -> Vec3 {
        lattice_point(&self.origin, self.cell_size, [0, 1, 2].map(|k| self.first[k] + idx[k]))
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]
    }
}

/// Which field queries count as a prediction when building the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Validity {
    /// Any level contributed.
    #[default]
    AnyLevel,
    /// The finest level contributed, i.e. the point lies in an observed leaf.
    FinestLevel,
}

#[inline]
fn lattice_point(origin: &Vec3, cell: f64, idx: [usize; 3]) -> Vec3 {
    Vec3::new(
        origin.x + idx[0] as f64 * cell,
        origin.y + idx[1] as f64 * cell,
        origin.z + idx[2] as f64 * cell,
    )
}

/// Cells per axis covering `bbox` at `cell_size` (at least one).
fn lattice_cells(bbox: &(Vec3, Vec3), cell_size: f64) -> Result<[usize; 3]> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(MapError::Argument(format!("cell size must be positive, got {cell_size}")));
    }
    let (lo, hi) = bbox;
    let mut cells = [0usize; 3];
    for k in 0..3 {
        let extent = hi[k] - lo[k];
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(MapError::Argument(format!("bounding box {lo:?} .. {hi:?} has no volume")));
        }
        cells[k] = ((extent / cell_size).ceil() as usize).max(1);
    }
    Ok(cells)
}

/// Evaluates the decoded field at every lattice point of `bbox` in parallel.
/// The lattice starts at the lower corner and covers the upper one.
pub fn query_grid(
    field: &FeatureField,
    decoder: &MlpDecoder,
    bbox: (Vec3, Vec3),
    cell_size: f64,
    validity: Validity,
) -> Result<SdfGrid> {
    let cells = lattice_cells(&bbox, cell_size)?;
    Ok(query_block(field, decoder, bbox.0, cell_size, [0; 3], cells.map(|c| c + 1), validity))
}

fn query_block(
    field: &FeatureField,
    decoder: &MlpDecoder,
    origin: Vec3,
    cell_size: f64,
    first: [usize; 3],
    dims: [usize; 3],
    validity: Validity,
) -> SdfGrid {
    let n = dims[0] * dims[1] * dims[2];
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    let row = dims[0].max(1);
    values
        .par_chunks_mut(row)
        .zip(valid.par_chunks_mut(row))
        .enumerate()
        .for_each_init(
            || (QueryResult::default(), Workspace::default()),
            |(q, ws), (r, (vals, oks))| {
                let j = r % dims[1];
                let k = r / dims[1];
                for i in 0..dims[0] {
                    let x = lattice_point(&origin, cell_size, [first[0] + i, first[1] + j, first[2] + k]);
                    let hit = field.query_into(&x, q)
                        && match validity {
                            Validity::AnyLevel => true,
                            Validity::FinestLevel => q.level_mask & 1 == 1,
                        };
                    if hit {
                        vals[i] = decoder.forward_ws(&q.summed_feature, ws);
                        oks[i] = true;
                    }
                }
            },
        );
    SdfGrid {
        origin,
        cell_size,
        first,
        dims,
        values,
        valid,
    }
}

struct MarchState {
    mesh: TriangleMesh,
    /// Vertex of each crossed lattice edge, keyed by global edge id.
    edge_vertex: HashMap<(u32, u32, u32, u8), u32>,
}

impl MarchState {
    fn new() -> Self {
        Self {
            mesh: TriangleMesh::default(),
            edge_vertex: HashMap::new(),
        }
    }

    fn march(&mut self, grid: &SdfGrid, iso: f64) {
        let table = case_table();
        let [nx, ny, nz] = grid.dims;
        if nx < 2 || ny < 2 || nz < 2 {
            return;
        }
        let mut vals = [0.0f64; 8];
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                'cube: for i in 0..nx - 1 {
                    let mut case = 0usize;
                    for c in 0..8 {
                        let idx = [i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)];
                        let lin = grid.linear(idx);
                        if !grid.valid[lin] {
                            continue 'cube;
                        }
                        vals[c] = grid.values[lin];
                        if vals[c] < iso {
                            case |= 1 << c;
                        }
                    }
                    for tri in &table.triangles[case] {
                        let v = tri.map(|e| self.edge_vertex(grid, iso, [i, j, k], e as usize, &vals));
                        self.mesh.triangles.push(v);
                    }
                }
            }
        }
    }

    fn edge_vertex(
        &mut self,
        grid: &SdfGrid,
        iso: f64,
        cube: [usize; 3],
        edge: usize,
        vals: &[f64; 8],
    ) -> u32 {
        let (a, b) = EDGE_CORNERS[edge];
        let base = [cube[0] + (a & 1), cube[1] + ((a >> 1) & 1), cube[2] + ((a >> 2) & 1)];
        let key = (
            (base[0] + grid.first[0]) as u32,
            (base[1] + grid.first[1]) as u32,
            (base[2] + grid.first[2]) as u32,
            tables::edge_axis(edge) as u8,
        );
        let mesh = &mut self.mesh;
        *self.edge_vertex.entry(key).or_insert_with(|| {
            let axis = tables::edge_axis(edge);
            let pa = grid.point(base);
            let (va, vb) = (vals[a], vals[b]);
            let t = (iso - va) / (vb - va);
            let mut p = pa;
            p[axis] += t * grid.cell_size;
            mesh.vertices.push(p);
            (mesh.vertices.len() - 1) as u32
        })
    }
}

/// Marching cubes on a single grid. Vertices on shared lattice edges are
/// emitted once, so closed level sets give closed meshes.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> TriangleMesh {
    let mut state = MarchState::new();
    state.march(grid, iso);
    state.mesh
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshOptions {
    pub cell_size: f64,
    pub iso: f64,
    /// Region to extract; defaults to the allocated leaf bounds.
    pub bbox: Option<(Vec3, Vec3)>,
    /// Cells per axis evaluated at once; bounds peak grid memory.
    pub block_cells: usize,
    pub validity: Validity,
}

impl MeshOptions {
    pub fn new(cell_size: f64) -> Self {
        Self {
            cell_size,
            iso: 0.0,
            bbox: None,
            block_cells: 64,
            validity: Validity::default(),
        }
    }
}

/// Extracts the zero level set of the decoded field block by block. Blocks
/// share their boundary lattice planes and a global edge cache, so the
/// result is identical to marching one grid covering the whole region.
pub fn extract_mesh(field: &FeatureField, decoder: &MlpDecoder, opts: &MeshOptions) -> Result<TriangleMesh> {
    if !(opts.cell_size > 0.0 && opts.cell_size.is_finite()) {
        return Err(MapError::Argument(format!("mesh cell size must be positive, got {}", opts.cell_size)));
    }
    if opts.block_cells == 0 {
        return Err(MapError::Argument("block_cells must be at least 1".into()));
    }
    let Some(bbox) = opts.bbox.or_else(|| field.allocated_bounds()) else {
        return Ok(TriangleMesh::default());
    };
    let cells = lattice_cells(&bbox, opts.cell_size)?;
    let lo = bbox.0;
    let b = opts.block_cells;
    let blocks = cells.map(|c| c.div_ceil(b));
    let mut state = MarchState::new();
    for bz in 0..blocks[2] {
        for by in 0..blocks[1] {
            for bx in 0..blocks[0] {
                let start = [bx * b, by * b, bz * b];
                let dims = [0, 1, 2].map(|k| (cells[k] - start[k]).min(b) + 1);
                let grid = query_block(field, decoder, lo, opts.cell_size, start, dims, opts.validity);
                state.march(&grid, opts.iso);
            }
        }
    }
    log::debug!(
        "extracted {} vertices, {} triangles over {:?} cells",
        state.mesh.vertices.len(),
        state.mesh.triangles.len(),
        cells
    );
    Ok(state.mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_grid(radius: f64, cell: f64) -> SdfGrid {
        let n = (2.0 * (radius + 2.0 * cell) / cell).ceil() as usize + 1;
        let o = -(radius + 2.0 * cell);
        SdfGrid::from_fn(Vec3::new(o, o, o), cell, [n; 3], |p| p.norm() - radius)
    }

    #[test]
    fn constant_field_gives_no_surface() {
        let g = SdfGrid::from_fn(Vec3::zeros(), 0.1, [5, 5, 5], |_| 1.0);
        assert!(marching_cubes(&g, 0.0).is_empty());
        let g = SdfGrid::from_fn(Vec3::zeros(), 0.1, [5, 5, 5], |_| -1.0);
        assert!(marching_cubes(&g, 0.0).is_empty());
    }

    #[test]
    fn vertex_interpolates_linearly_along_the_edge() {
        // values -a at x=0 and +b at x=h: crossing at h * a / (a + b)
        let (a, b, h) = (0.3, 0.9, 0.5);
        let g = SdfGrid::from_fn(Vec3::zeros(), h, [2, 2, 2], |p| if p.x < h / 2.0 { -a } else { b });
        let mesh = marching_cubes(&g, 0.0);
        assert_eq!(mesh.triangles.len(), 2);
        for v in &mesh.vertices {
            assert!((v.x - h * a / (a + b)).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn sphere_is_closed_accurate_and_outward() {
        let r = 1.0;
        let mesh = marching_cubes(&sphere_grid(r, 0.05), 0.0);
        assert!(mesh.triangles.len() > 1000);
        assert_eq!(mesh.boundary_edge_count(), 0);
        let max_err = mesh.vertices.iter().map(|v| (v.norm() - r).abs()).fold(0.0, f64::max);
        assert!(max_err < 0.05 * 0.05, "max radial error {max_err}");
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(t);
            let n = (b - a).cross(&(c - a));
            // lattice points exactly on the sphere give zero-area triangles
            if n.norm() > 1e-12 {
                assert!(n.dot(&(a + b + c)) > 0.0, "triangle {t} faces inward");
            }
        }
        let area = mesh.area();
        let exact = 4.0 * std::f64::consts::PI * r * r;
        assert!((area - exact).abs() / exact < 0.01, "area {area}");
    }

    #[test]
    fn random_fields_give_closed_surfaces_inside_the_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 7;
            let mut g = SdfGrid::from_fn(Vec3::zeros(), 1.0, [n; 3], |_| 0.0);
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let border = [i, j, k].iter().any(|&c| c == 0 || c == n - 1);
                        let lin = g.linear([i, j, k]);
                        g.values[lin] = if border { 1.0 } else { rng.random_range(-1.0..1.0) };
                    }
                }
            }
            let mesh = marching_cubes(&g, 0.0);
            assert_eq!(mesh.boundary_edge_count(), 0);
        }
    }

    #[test]
    fn invalid_points_suppress_cubes() {
        let mut g = sphere_grid(1.0, 0.1);
        let full = marching_cubes(&g, 0.0).triangles.len();
        for k in 0..g.dims[2] / 2 {
            for j in 0..g.dims[1] {
                for i in 0..g.dims[0] {
                    let lin = g.linear([i, j, k]);
                    g.valid[lin] = false;
                }
            }
        }
        let half = marching_cubes(&g, 0.0);
        assert!(half.triangles.len() < full * 6 / 10 && half.triangles.len() > full * 4 / 10);
        assert!(half.vertices.iter().all(|v| v.z > -0.15));
    }

    fn sphere_field(r: f64) -> (FeatureField, MlpDecoder) {
        use crate::decoder::{Activation, MlpConfig};
        use crate::field::FieldLayout;
        use rand::SeedableRng;
        let layout = FieldLayout::new(0.1, 1, 1).unwrap();
        let mut field = FeatureField::new(layout.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        // every leaf within a shell around the sphere
        let n = (2.0 * (r + 0.3) / 0.05) as i32;
        let pts: Vec<Vec3> = (0..n * n * n)
            .map(|i| Vec3::new((i % n) as f64, ((i / n) % n) as f64, (i / (n * n)) as f64) * 0.05 - Vec3::from_element(r + 0.3))
            .filter(|p| (p.norm() - r).abs() < 0.2)
            .collect();
        field.allocate_for_points(&pts, &mut rng).unwrap();
        let lo = layout.leaf_index(&Vec3::from_element(-r - 0.2)).unwrap();
        let hi = layout.leaf_index(&Vec3::from_element(r + 0.2)).unwrap();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(slot) = field.slot_at(0, [x, y, z]) {
                        let p = layout.corner_position(0, [x, y, z]);
                        field.feature_mut(slot)[0] = p.norm() - r;
                    }
                }
            }
        }
        let cfg = MlpConfig {
            hidden_layers: 1,
            hidden_width: 1,
            input_len: 1,
            activation: Activation::Identity,
        };
        (field, MlpDecoder::from_params(cfg, vec![1.0, 0.0, 1.0, 0.0]).unwrap())
    }

    fn sorted_vertices(m: &TriangleMesh) -> Vec<[u64; 3]> {
        let mut v: Vec<[u64; 3]> = m.vertices.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        v.sort();
        v
    }

    #[test]
    fn block_size_does_not_change_the_surface() {
        let (field, dec) = sphere_field(0.8);
        let mut opts = MeshOptions::new(0.04);
        let whole = extract_mesh(&field, &dec, &MeshOptions { block_cells: 10_000, ..opts.clone() }).unwrap();
        opts.block_cells = 7;
        let blocked = extract_mesh(&field, &dec, &opts).unwrap();
        assert!(whole.triangles.len() > 500);
        assert_eq!(whole.triangles.len(), blocked.triangles.len());
        assert_eq!(sorted_vertices(&whole), sorted_vertices(&blocked));
        assert_eq!(blocked.boundary_edge_count(), 0);
        let max_err = blocked.vertices.iter().map(|v| (v.norm() - 0.8).abs()).fold(0.0, f64::max);
        assert!(max_err < 0.02, "{max_err}");
        assert_eq!(extract_mesh(&field, &dec, &opts).unwrap(), blocked);
    }

    #[test]
    fn empty_field_gives_empty_mesh_and_bad_options_fail() {
        let (field, dec) = sphere_field(0.8);
        let empty = FeatureField::new(field.layout().clone()).unwrap();
        assert!(extract_mesh(&empty, &dec, &MeshOptions::new(0.1)).unwrap().is_empty());
        assert!(extract_mesh(&field, &dec, &MeshOptions::new(0.0)).is_err());
        let far = MeshOptions {
            bbox: Some((Vec3::from_element(5.0), Vec3::from_element(6.0))),
            ..MeshOptions::new(0.1)
        };
        assert!(extract_mesh(&field, &dec, &far).unwrap().is_empty());
    }

    #[test]
    fn query_grid_dims_and_masks() {
        let (field, dec) = sphere_field(0.8);
        let g = query_grid(&field, &dec, (Vec3::zeros(), Vec3::from_element(0.1)), 0.1, Validity::AnyLevel).unwrap();
        assert_eq!(g.dims, [2, 2, 2]);
        assert_eq!(g.values.len(), 8);
        let g = query_grid(&field, &dec, (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.3, 0.5, 0.25)), 0.1, Validity::AnyLevel).unwrap();
        assert_eq!(g.dims, [4, 6, 4]);
        assert_eq!(g.values.len(), 96);
        let far = (Vec3::from_element(5.0), Vec3::from_element(6.0));
        let g = query_grid(&field, &dec, far, 0.25, Validity::AnyLevel).unwrap();
        assert!(g.valid.iter().all(|v| !v));
        let flat = (Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0));
        assert!(query_grid(&field, &dec, flat, 0.1, Validity::AnyLevel).is_err());
        assert!(query_grid(&field, &dec, far, -1.0, Validity::AnyLevel).is_err());
    }

    #[test]
    fn vertices_sit_near_the_decoded_zero_level() {
        let (field, dec) = sphere_field(0.8);
        let cell = 0.04;
        let mesh = extract_mesh(&field, &dec, &MeshOptions::new(cell)).unwrap();
        let mut q = QueryResult::default();
        let mut ws = Workspace::default();
        for v in &mesh.vertices {
            assert!(field.query_into(v, &mut q));
            assert!(dec.forward_ws(&q.summed_feature, &mut ws).abs() < cell);
        }
    }
}
