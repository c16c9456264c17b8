//! Additive bond-polarizability model used as exactly equivariant ground
//! truth for desk-scale training:
//!
//! ```text
//! α = Σ_i a(Z_i)·I + Σ_{i<j, d_ij ≤ r_c} e^{−d/λ} [ b∥ ûûᵀ + b⊥ (I − ûûᵀ) ]
//! b∥ = k∥·√(a(Z_i)a(Z_j)),  b⊥ = k⊥·√(a(Z_i)a(Z_j))
//! ```

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg3::{Mat3, Vec3};
use crate::scalar::Real;

use super::{build_graph, MolError, Molecule};

/// H, C, N, O, S, Cl.
pub const ELEMENTS: [u32; 6] = [1, 6, 7, 8, 16, 17];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Isotropic atomic term a(Z), bohr³.
    pub atomic: Vec<(u32, f64)>,
    pub parallel_coef: f64,
    pub perpendicular_coef: f64,
    /// λ, Å.
    pub decay_length: f64,
    /// Å
    pub cutoff: f64,
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Nearest-neighbour distance window for generated geometries, Å.
    pub min_dist: f64,
    pub max_dist: f64,
    /// Relative sampling weights aligned with [`ELEMENTS`].
    pub element_weights: [f64; 6],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            atomic: vec![(1, 4.5), (6, 12.0), (7, 7.4), (8, 5.4), (16, 19.6), (17, 14.6)],
            parallel_coef: 0.6,
            perpendicular_coef: 0.2,
            decay_length: 2.0,
            cutoff: 4.0,
            min_atoms: 4,
            max_atoms: 16,
            min_dist: 0.8,
            max_dist: 2.0,
            element_weights: [0.40, 0.30, 0.10, 0.12, 0.04, 0.04],
        }
    }
}

impl SynthParams {
    pub fn atomic_term(&self, z: u32) -> Result<f64, MolError> {
        self.atomic.iter().find(|(k, _)| *k == z).map(|(_, a)| *a).ok_or(MolError::UnknownElement(z))
    }
}

pub fn synth_polarizability<T: Real>(mol: &Molecule<T>, params: &SynthParams) -> Result<Mat3<T>, MolError> {
    let graph = build_graph(mol, T::lit(params.cutoff))?;
    let a: Vec<T> = mol
        .atomic_numbers
        .iter()
        .map(|&z| params.atomic_term(z).map(T::lit))
        .collect::<Result<_, _>>()?;
    let eye = Mat3::<T>::identity();
    let mut alpha = Mat3::zeros();
    for &ai in &a {
        alpha += eye.scale(ai);
    }
    let kpar = T::lit(params.parallel_coef);
    let kperp = T::lit(params.perpendicular_coef);
    let lambda = T::lit(params.decay_length);
    for e in graph.edges.iter().filter(|e| e.i < e.j) {
        let d = e.d2.sqrt();
        let u = (mol.positions[e.j] - mol.positions[e.i]).scale(d.recip());
        let uu = u.outer(u);
        let damp = (-d / lambda).exp();
        let geo = (a[e.i] * a[e.j]).sqrt() * damp;
        alpha += uu.scale(kpar * geo) + (eye - uu).scale(kperp * geo);
    }
    Ok(alpha.symmetrized())
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v: Vec3<f64> = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n2 = v.norm_squared();
        if n2 > 1e-4 && n2 <= 1.0 {
            return v.scale(n2.sqrt().recip());
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn connected(pos: &[Vec3<f64>], cutoff: f64) -> bool {
    let n = pos.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (pos[i] - pos[j]).norm_squared() <= cutoff * cutoff {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|k| find(&mut parent, k) == root)
}

/// Grows one geometry atom by atom; each new atom sits within
/// `[min_dist, max_dist]` of a random existing atom and no closer than
/// `min_dist` to any other.
fn grow_geometry(n: usize, p: &SynthParams, rng: &mut ChaCha8Rng) -> Option<Vec<Vec3<f64>>> {
    let mut pos = vec![Vec3::zero()];
    while pos.len() < n {
        let mut placed = false;
        for _ in 0..1000 {
            let anchor = pos[rng.gen_range(0..pos.len())];
            let dist = rng.gen_range(p.min_dist..=p.max_dist);
            let cand = anchor + random_unit(rng).scale(dist);
            if pos.iter().all(|q| (cand - *q).norm() >= p.min_dist) {
                pos.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(pos)
}

/// `n` random molecules with synthetic targets; deterministic per seed.
pub fn gen_synthetic<T: Real>(n: usize, seed: u64, params: &SynthParams) -> Result<Vec<Molecule<T>>, MolError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = WeightedIndex::new(params.element_weights).expect("positive element weights");
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let n_atoms = rng.gen_range(params.min_atoms..=params.max_atoms);
        let z: Vec<u32> = (0..n_atoms).map(|_| ELEMENTS[weights.sample(&mut rng)]).collect();
        let pos = loop {
            match grow_geometry(n_atoms, params, &mut rng) {
                Some(p) if connected(&p, params.cutoff) => break p,
                _ => continue,
            }
        };
        let mut mol = Molecule::new(
            format!("syn{seed}-{k:05}"),
            "opt",
            z,
            pos.iter().map(|p| p.cast()).collect(),
            None,
        )?;
        mol.polarizability = Some(synth_polarizability(&mol, params)?);
        out.push(mol);
    }
    Ok(out)
}
