use crate::linalg3::Vec3;
use crate::scalar::Real;

use super::{MolError, Molecule};

/// ε in the inverse squared distance `(d² + ε)⁻¹`, Å².
pub const EDGE_EPS: f64 = 1e-8;

/// Directed edge: messages flow from `j` (sender) to `i` (receiver).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    /// `x_i − x_j`
    pub r_ij: Vec3<T>,
    pub d2: T,
    pub inv_d2: T,
}

/// Cutoff graph with cached rotation-invariant edge inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    pub n_nodes: usize,
    /// Sorted by `(i, j)`.
    pub edges: Vec<Edge<T>>,
    /// `neighbors[i]` lists every `j` with an edge `(i, j)`, ascending.
    pub neighbors: Vec<Vec<usize>>,
}

impl<T: Real> Graph<T> {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// All ordered pairs `(i, j)` with `0 < ‖x_i − x_j‖ ≤ r_c`.
pub fn build_graph<T: Real>(mol: &Molecule<T>, cutoff: T) -> Result<Graph<T>, MolError> {
    if !(cutoff > T::zero()) || !cutoff.is_finite() {
        return Err(MolError::BadCutoff(cutoff.to_f64_lossless()));
    }
    let n = mol.n_atoms();
    let rc2 = cutoff * cutoff;
    let eps = T::lit(EDGE_EPS);
    let mut neighbors = vec![Vec::new(); n];
    let mut pair_d2 = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let r = mol.positions[i] - mol.positions[j];
            let d2 = r.norm_squared();
            if d2 == T::zero() {
                return Err(MolError::CoincidentAtoms { id: mol.molecule_id.clone(), i, j });
            }
            if d2 <= rc2 {
                neighbors[i].push(j);
                neighbors[j].push(i);
                pair_d2.push(((i, j), r, d2));
            }
        }
    }
    for list in neighbors.iter_mut() {
        list.sort_unstable();
    }
    // d² is shared by (i, j) and (j, i) so the cache stays exactly symmetric.
    let mut edges = Vec::with_capacity(2 * pair_d2.len());
    for ((i, j), r, d2) in pair_d2 {
        let inv_d2 = (d2 + eps).recip();
        edges.push(Edge { i, j, r_ij: r, d2, inv_d2 });
        edges.push(Edge { i: j, j: i, r_ij: -r, d2, inv_d2 });
    }
    edges.sort_by_key(|e| (e.i, e.j));
    Ok(Graph { n_nodes: n, edges, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg3::{random_rotation, Mat3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mol(pos: Vec<Vec3<f64>>) -> Molecule<f64> {
        let z = vec![1; pos.len()];
        Molecule::new("m", "c", z, pos, None).unwrap()
    }

    #[test]
    fn hydrogen_pair() {
        let m = mol(vec![Vec3::zero(), Vec3::new(0.74, 0.0, 0.0)]);
        let g = build_graph(&m, 4.0).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!((g.edges[0].i, g.edges[0].j), (0, 1));
        assert_eq!((g.edges[1].i, g.edges[1].j), (1, 0));
        assert_eq!(g.edges[0].r_ij, Vec3::new(-0.74, 0.0, 0.0));
        assert!((g.edges[0].inv_d2 - 1.0 / (0.74f64 * 0.74 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn beyond_cutoff() {
        let m = mol(vec![Vec3::zero(), Vec3::new(5.0, 0.0, 0.0)]);
        assert_eq!(build_graph(&m, 4.0).unwrap().n_edges(), 0);
    }

    #[test]
    fn coincident_atoms_rejected() {
        let m = mol(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0)]);
        let err = build_graph(&m, 4.0).unwrap_err();
        assert!(err.to_string().contains("coincident atoms"));
        assert!(matches!(build_graph(&mol(vec![Vec3::zero()]), 0.0), Err(MolError::BadCutoff(_))));
    }

    #[test]
    fn matches_brute_force_and_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pos: Vec<_> = (0..12)
            .map(|_| Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)))
            .collect();
        let m = mol(pos.clone());
        let g = build_graph(&m, 4.0).unwrap();
        let mut expected = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let d = ((pos[i].x - pos[j].x).powi(2) + (pos[i].y - pos[j].y).powi(2) + (pos[i].z - pos[j].z).powi(2)).sqrt();
                if i != j && d <= 4.0 {
                    expected.push((i, j));
                }
            }
        }
        let got: Vec<_> = g.edges.iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(got, expected);
        for e in &g.edges {
            assert!((e.d2 - e.r_ij.norm_squared()).abs() <= 1e-12 * e.d2.max(1.0));
            assert!(g.neighbors[e.i].contains(&e.j));
        }

        let r: Mat3<f64> = random_rotation(&mut rng);
        let moved = m.transformed(&r, Vec3::new(3.0, -1.0, 0.5));
        let g2 = build_graph(&moved, 4.0).unwrap();
        assert_eq!(g2.edges.iter().map(|e| (e.i, e.j)).collect::<Vec<_>>(), got);
        for (a, b) in g.edges.iter().zip(&g2.edges) {
            assert!((a.d2 - b.d2).abs() <= 1e-12 * a.d2.max(1.0));
        }
    }
}
