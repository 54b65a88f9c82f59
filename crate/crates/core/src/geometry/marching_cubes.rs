//! Marching cubes with case tables derived from face walks.
//!
//! For every corner sign pattern the iso-contour on each cube face is traced
//! by walking the face counter-clockwise (seen from outside the cube). A chord
//! runs from each positive-to-negative crossing to the next
//! negative-to-positive crossing, which on ambiguous faces separates the
//! negative corners. Chords chain into closed loops that are fanned into
//! triangles, oriented so that normals point toward increasing values.
//! Adjacent cubes see a shared face with opposite orientation and therefore
//! agree on the chords, so the welded mesh is watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::mesh::TriangleMesh;
use super::GeometryError;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Edge `a * 4 + k` joins the k-th corner with bit `a` clear to its
/// neighbour along axis `a`.
fn edges() -> [(usize, usize, usize); 12] {
    let mut out = [(0, 0, 0); 12];
    for a in 0..3 {
        let mut k = 0;
        for c in 0..8 {
            if c & (1 << a) == 0 {
                out[a * 4 + k] = (c, c | (1 << a), a);
                k += 1;
            }
        }
    }
    out
}

fn edge_between(c0: usize, c1: usize) -> usize {
    let e = edges();
    e.iter()
        .position(|&(a, b, _)| (a == c0 && b == c1) || (a == c1 && b == c0))
        .expect("corners are adjacent")
}

/// Corners of the six faces in counter-clockwise order seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..3 {
        for side in 0..2 {
            let (u, v) = ((a + 1) % 3, (a + 2) % 3);
            // Walk the square in the (u, v) plane.
            let square = [(0, 0), (1, 0), (1, 1), (0, 1)];
            let mut ring = [0usize; 4];
            for (i, &(du, dv)) in square.iter().enumerate() {
                ring[i] = (side << a) | (du << u) | (dv << v);
            }
            // (u, v, a) is right-handed, so this ring is counter-clockwise
            // around +a; reverse it for the face on the negative side.
            if side == 0 {
                ring.reverse();
            }
            out.push(ring);
        }
    }
    out
}

/// Loops of edge indices for each of the 256 sign patterns. Bit `c` of the
/// case index is set when corner `c` is negative.
pub fn case_table() -> &'static Vec<Vec<Vec<usize>>> {
    static TABLE: OnceLock<Vec<Vec<Vec<usize>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_loops).collect())
}

fn case_loops(case: usize) -> Vec<Vec<usize>> {
    let neg = |c: usize| case & (1 << c) != 0;
    // next[e] = edge the chord starting at e leads to.
    let mut next: HashMap<usize, usize> = HashMap::new();
    for ring in faces() {
        let mut crossings = Vec::new();
        for i in 0..4 {
            let (c0, c1) = (ring[i], ring[(i + 1) % 4]);
            if neg(c0) != neg(c1) {
                // true: positive to negative
                crossings.push((edge_between(c0, c1), !neg(c0)));
            }
        }
        let n = crossings.len();
        for i in 0..n {
            if crossings[i].1 {
                let j = (1..n)
                    .map(|k| (i + k) % n)
                    .find(|&j| !crossings[j].1)
                    .expect("crossings alternate");
                next.insert(crossings[i].0, crossings[j].0);
            }
        }
    }
    let mut loops = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = std::collections::HashSet::new();
    for s in starts {
        if used.contains(&s) {
            continue;
        }
        let mut lp = vec![s];
        used.insert(s);
        let mut e = next[&s];
        while e != s {
            lp.push(e);
            used.insert(e);
            e = next[&e];
        }
        loops.push(lp);
    }
    loops
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Extracts the zero level set of `sdf` over the box `[lo, hi]` sampled on
/// `n` cells per axis.
pub fn marching_cubes<F>(sdf: F, lo: [f64; 3], hi: [f64; 3], n: usize) -> Result<TriangleMesh, GeometryError>
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
{
    if n < 8 {
        return Err(GeometryError::Resolution(n));
    }
    if (0..3).any(|a| !(hi[a] > lo[a])) {
        return Err(GeometryError::Invalid(format!("empty bounding box {lo:?}..{hi:?}")));
    }
    let m = n + 1;
    let pos = |i: usize, j: usize, k: usize| -> [f64; 3] {
        let idx = [i, j, k];
        std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / n as f64)
    };
    let values: Vec<f64> = (0..m * m * m)
        .into_par_iter()
        .map(|g| {
            let (i, j, k) = (g % m, (g / m) % m, g / (m * m));
            sdf(&pos(i, j, k))
        })
        .collect();
    let value = |i: usize, j: usize, k: usize| values[(k * m + j) * m + i];
    let table = case_table();
    let edge_list = edges();
    let mut mesh = TriangleMesh::default();
    let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let mut case = 0usize;
                let mut vals = [0.0; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = value(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for lp in &table[case] {
                    let ids: Vec<u32> = lp
                        .iter()
                        .map(|&e| {
                            let (c0, c1, axis) = edge_list[e];
                            let o0 = CORNERS[c0];
                            let g0 = ((k + o0[2]) * m + (j + o0[1])) * m + (i + o0[0]);
                            *vertex_of.entry((g0, axis)).or_insert_with(|| {
                                let o1 = CORNERS[c1];
                                let p0 = pos(i + o0[0], j + o0[1], k + o0[2]);
                                let p1 = pos(i + o1[0], j + o1[1], k + o1[2]);
                                let t = vals[c0] / (vals[c0] - vals[c1]);
                                mesh.vertices.push(std::array::from_fn(|a| p0[a] + t * (p1[a] - p0[a])));
                                (mesh.vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    for q in 1..ids.len() - 1 {
                        let tri = [ids[0], ids[q], ids[q + 1]];
                        let [a, b, c] = tri.map(|v| mesh.vertices[v as usize]);
                        let nrm = cross(sub(b, a), sub(c, a));
                        if nrm.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        mesh.faces.push(tri);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_corner_cases_are_triangles() {
        let t = case_table();
        for c in 0..8 {
            assert_eq!(t[1 << c].len(), 1);
            assert_eq!(t[1 << c][0].len(), 3);
            assert_eq!(t[255 ^ (1 << c)][0].len(), 3);
        }
        assert!(t[0].is_empty() && t[255].is_empty());
    }

    #[test]
    fn every_crossing_edge_used_once() {
        let e = edges();
        for (case, loops) in case_table().iter().enumerate() {
            let mut used: Vec<usize> = loops.iter().flatten().copied().collect();
            used.sort_unstable();
            let expected: Vec<usize> = (0..12)
                .filter(|&k| ((case >> e[k].0) & 1) != ((case >> e[k].1) & 1))
                .collect();
            assert_eq!(used, expected, "case {case}");
        }
    }

    #[test]
    fn faces_are_counter_clockwise_from_outside() {
        for ring in faces() {
            let p: Vec<[f64; 3]> = ring.iter().map(|&c| CORNERS[c].map(|v| v as f64)).collect();
            let n = cross(sub(p[1], p[0]), sub(p[2], p[1]));
            let center: [f64; 3] = std::array::from_fn(|a| p.iter().map(|q| q[a]).sum::<f64>() / 4.0 - 0.5);
            assert!(n[0] * center[0] + n[1] * center[1] + n[2] * center[2] > 0.0);
        }
    }

    #[test]
    fn all_positive_is_empty() {
        let m = marching_cubes(|_| 1.0, [-1.0; 3], [1.0; 3], 8).unwrap();
        assert!(m.vertices.is_empty() && m.faces.is_empty());
        assert!(matches!(
            marching_cubes(|_| 1.0, [-1.0; 3], [1.0; 3], 7),
            Err(GeometryError::Resolution(7))
        ));
    }
}
