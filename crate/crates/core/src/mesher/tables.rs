//! The 256-case marching cubes triangulation table.
//!
//! Corner `c` of a cube sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`; a set
//! bit `c` in the case index means corner `c` is inside (value below the
//! isolevel). Edges 0..4 run along x, 4..8 along y, 8..12 along z.
//!
//! The table is built rather than transcribed. For every case, each cube face
//! contributes oriented segments between its crossed edges, walking the face
//! counter-clockwise as seen from outside the cube and keeping the inside
//! corners on the left. Chaining the segments gives closed loops on the cube
//! surface, and each loop is fan-triangulated with the winding reversed so
//! normals point toward the outside (positive) region.
//!
//! Ambiguous faces (two diagonal inside corners) always separate the inside
//! corners. The decision depends on the four face values only, so the two
//! cubes sharing a face agree and the extracted surface has no cracks.

use std::sync::OnceLock;

pub const CORNER_COUNT: usize = 8;
pub const EDGE_COUNT: usize = 12;

/// Corner pairs of the twelve cube edges, lower corner first.
pub const EDGE_CORNERS: [(usize, usize); EDGE_COUNT] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Axis an edge runs along.
#[inline]
pub fn edge_axis(edge: usize) -> usize {
    edge / 4
}

fn edge_between(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGE_CORNERS
        .iter()
        .position(|e| *e == key)
        .expect("corners are not adjacent")
}

/// Corners of each face, counter-clockwise when viewed from outside.
fn face_cycles() -> [[usize; 4]; 6] {
    let mut faces = [[0usize; 4]; 6];
    for axis in 0..3 {
        let u = (axis + 1) % 3;
        let v = (axis + 2) % 3;
        for side in 0..2 {
            let corner = |ub: usize, vb: usize| (side << axis) | (ub << u) | (vb << v);
            // (u, v, axis) is right-handed: this order is CCW seen from +axis
            let mut cyc = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            if side == 0 {
                cyc.reverse();
            }
            faces[axis * 2 + side] = cyc;
        }
    }
    faces
}

pub struct CaseTable {
    /// Triangles as triples of edge indices, per case.
    pub triangles: Vec<Vec<[u8; 3]>>,
    /// Bit mask of crossed edges, per case.
    pub edge_masks: Vec<u16>,
}

fn build_case(case: usize, faces: &[[usize; 4]; 6]) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next = [usize::MAX; EDGE_COUNT];
    for cyc in faces {
        let edge = |k: usize| edge_between(cyc[k % 4], cyc[(k + 1) % 4]);
        let crossings = (0..4).filter(|&k| inside(cyc[k]) != inside(cyc[(k + 1) % 4])).count();
        match crossings {
            0 => {}
            2 => {
                let start = (0..4).find(|&k| inside(cyc[k]) && !inside(cyc[(k + 1) % 4])).unwrap();
                let end = (0..4).find(|&k| !inside(cyc[k]) && inside(cyc[(k + 1) % 4])).unwrap();
                next[edge(start)] = edge(end);
            }
            4 => {
                for k in 0..4 {
                    if inside(cyc[k]) {
                        next[edge(k)] = edge(k + 3);
                    }
                }
            }
            _ => unreachable!("a face has an even number of sign changes"),
        }
    }
    let mut visited = [false; EDGE_COUNT];
    let mut tris = Vec::new();
    for start in 0..EDGE_COUNT {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            lp.push(e as u8);
            e = next[e];
        }
        debug_assert_eq!(e, start, "segments must close into loops");
        for i in 1..lp.len() - 1 {
            tris.push([lp[0], lp[i + 1], lp[i]]);
        }
    }
    tris
}

pub fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = face_cycles();
        let triangles: Vec<_> = (0..256).map(|c| build_case(c, &faces)).collect();
        let edge_masks = (0..256)
            .map(|case| {
                EDGE_CORNERS
                    .iter()
                    .enumerate()
                    .filter(|(_, (a, b))| ((case >> a) & 1) != ((case >> b) & 1))
                    .fold(0u16, |m, (e, _)| m | (1 << e))
            })
            .collect();
        CaseTable { triangles, edge_masks }
    })
}
