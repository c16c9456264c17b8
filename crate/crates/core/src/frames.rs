//! Charge-weighted PCA local frames.
//!
//! For atom `i` with cutoff neighbours `j` and weights `w_ij = |Z_j|`:
//!
//! ```text
//! μ_i = Σ w d_ij / Σ w,          d_ij = r_j − r_i
//! C_i = Σ w d_ij d_ijᵀ / Σ w − μ_i μ_iᵀ = E Λ Eᵀ   (ascending Λ)
//! z_i = sign(z̃ᵀ μ_i) z̃,          z̃ = E(:,1)
//! x_i = normalize(s − (s·z) z),  s = μ_i, or E(:,3) when ‖μ_i‖ ≤ ε_μ
//! y_i = normalize(z × x)
//! F_i = (x y z) ∈ SO(3)
//! ```
//!
//! Construction never fails: ill-posed neighbourhoods fall back to a
//! deterministic choice and are flagged so that callers can tell which
//! frames are not rotation-equivariant.

use crate::linalg3::{cross, orthonormalize, sym_eig3, Mat3, Vec3};
use crate::molgraph::{Graph, Molecule};
use crate::scalar::Real;

/// Which fallback (if any) was taken while building a frame. When several
/// apply, the most severe one is reported (`Isolated` > `MuSmall` >
/// `XParallelZ` > `SignUnstable`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fallback {
    None,
    SignUnstable,
    XParallelZ,
    MuSmall,
    Isolated,
}

impl Fallback {
    pub const ALL: [Fallback; 5] =
        [Fallback::None, Fallback::SignUnstable, Fallback::XParallelZ, Fallback::MuSmall, Fallback::Isolated];

    pub fn name(self) -> &'static str {
        match self {
            Fallback::None => "none",
            Fallback::SignUnstable => "sign_unstable",
            Fallback::XParallelZ => "x_parallel_z",
            Fallback::MuSmall => "mu_small",
            Fallback::Isolated => "isolated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig<T> {
    /// Threshold on ‖μ‖, Å.
    pub eps_mu: T,
    /// Relative threshold on |z̃ᵀμ| / ‖μ‖.
    pub eps_sign: T,
    /// Relative eigen-gap (λ₂ − λ₁) / tr C below which z̃ is ambiguous.
    pub eps_gap: T,
}

impl<T: Real> Default for FrameConfig<T> {
    fn default() -> Self {
        Self { eps_mu: T::lit(1e-6), eps_sign: T::lit(1e-6), eps_gap: T::lit(1e-6) }
    }
}

impl<T: Real> FrameConfig<T> {
    pub fn cast<U: Real>(&self) -> FrameConfig<U> {
        FrameConfig {
            eps_mu: U::lit(self.eps_mu.to_f64_lossless()),
            eps_sign: U::lit(self.eps_sign.to_f64_lossless()),
            eps_gap: U::lit(self.eps_gap.to_f64_lossless()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame<T> {
    /// Columns are the local x, y, z axes.
    pub f: Mat3<T>,
    pub degenerate: bool,
    pub fallback: Fallback,
    /// Ascending eigenvalues of the weighted covariance.
    pub eigenvalues: [T; 3],
    pub mu_norm: T,
}

impl<T: Real> Frame<T> {
    pub fn identity_isolated() -> Self {
        Self {
            f: Mat3::identity(),
            degenerate: true,
            fallback: Fallback::Isolated,
            eigenvalues: [T::zero(); 3],
            mu_norm: T::zero(),
        }
    }

    /// Neither degenerate nor produced by a fallback path; only such frames
    /// are guaranteed to rotate with the molecule.
    pub fn is_clean(&self) -> bool {
        !self.degenerate && self.fallback == Fallback::None
    }

    /// Same diagnostics with the basis replaced by `R·F`.
    pub fn rotated(&self, rot: &Mat3<T>) -> Self {
        Self { f: *rot * self.f, ..*self }
    }
}

/// Per-molecule diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameSummary {
    pub n_atoms: usize,
    pub degenerate: usize,
    pub sign_unstable: usize,
    pub x_parallel_z: usize,
    pub mu_small: usize,
    pub isolated: usize,
}

impl FrameSummary {
    pub fn from_frames<T: Real>(frames: &[Frame<T>]) -> Self {
        let mut s = FrameSummary { n_atoms: frames.len(), ..Default::default() };
        for f in frames {
            s.degenerate += f.degenerate as usize;
            match f.fallback {
                Fallback::None => {}
                Fallback::SignUnstable => s.sign_unstable += 1,
                Fallback::XParallelZ => s.x_parallel_z += 1,
                Fallback::MuSmall => s.mu_small += 1,
                Fallback::Isolated => s.isolated += 1,
            }
        }
        s
    }

    pub fn fallbacks(&self) -> usize {
        self.sign_unstable + self.x_parallel_z + self.mu_small + self.isolated
    }

    /// Atoms that are degenerate or used a fallback.
    pub fn is_clean(&self) -> bool {
        self.degenerate == 0 && self.fallbacks() == 0
    }

    pub fn merge(&mut self, o: &FrameSummary) {
        self.n_atoms += o.n_atoms;
        self.degenerate += o.degenerate;
        self.sign_unstable += o.sign_unstable;
        self.x_parallel_z += o.x_parallel_z;
        self.mu_small += o.mu_small;
        self.isolated += o.isolated;
    }
}

/// Charge-weighted mean direction μ_i and covariance C_i over the cutoff
/// neighbours of atom `i`. `None` for an isolated atom.
pub fn weighted_moments<T: Real>(mol: &Molecule<T>, graph: &Graph<T>, i: usize) -> Option<(Vec3<T>, Mat3<T>)> {
    let nbrs = &graph.neighbors[i];
    if nbrs.is_empty() {
        return None;
    }
    let ri = mol.positions[i];
    let mut wsum = T::zero();
    let mut first = Vec3::zero();
    let mut second = Mat3::zeros();
    for &j in nbrs {
        let w = T::lit(mol.atomic_numbers[j] as f64).abs();
        let d = mol.positions[j] - ri;
        wsum += w;
        first += d.scale(w);
        second += d.outer(d).scale(w);
    }
    let inv = wsum.recip();
    let mu = first.scale(inv);
    let cov = second.scale(inv) - mu.outer(mu);
    Some((mu, cov))
}

fn normalized<T: Real>(v: Vec3<T>) -> Vec3<T> {
    v.scale(v.norm().recip())
}

pub fn build_frame<T: Real>(mol: &Molecule<T>, graph: &Graph<T>, i: usize, cfg: &FrameConfig<T>) -> Frame<T> {
    let Some((mu, cov)) = weighted_moments(mol, graph, i) else {
        return Frame::identity_isolated();
    };
    let Ok(eig) = sym_eig3(&cov) else {
        return Frame::identity_isolated();
    };
    let mu_norm = mu.norm();
    let mut fallback = Fallback::None;
    let raise = |f: Fallback, cur: &mut Fallback| {
        if f > *cur {
            *cur = f;
        }
    };

    // A single neighbour (or several at one point) leaves C at rounding
    // level, where the gap test alone can go either way.
    let spread = cov.trace();
    let gap = eig.values[1] - eig.values[0];
    let degenerate = !(gap > cfg.eps_gap * spread) || spread <= cfg.eps_gap * mu_norm * mu_norm;

    let z_raw = eig.vector(0);
    let proj = z_raw.dot(mu);
    let z = if proj.abs() > cfg.eps_sign * mu_norm {
        if proj < T::zero() {
            -z_raw
        } else {
            z_raw
        }
    } else {
        raise(Fallback::SignUnstable, &mut fallback);
        z_raw
    };

    let seed = if mu_norm > cfg.eps_mu {
        mu
    } else {
        raise(Fallback::MuSmall, &mut fallback);
        eig.vector(2)
    };
    let mut x_raw = seed - z.scale(seed.dot(z));
    if x_raw.norm() <= cfg.eps_mu {
        raise(Fallback::XParallelZ, &mut fallback);
        let alt = eig.vector(1);
        x_raw = alt - z.scale(alt.dot(z));
    }
    let x = normalized(x_raw);
    let y = normalized(cross(z, x));

    match orthonormalize(&Mat3::from_cols(x, y, z)) {
        Ok(f) => Frame { f, degenerate, fallback, eigenvalues: eig.values, mu_norm },
        Err(_) => Frame { f: Mat3::identity(), degenerate: true, fallback, eigenvalues: eig.values, mu_norm },
    }
}

/// `F_ij = F_iᵀ F_j`: maps coordinates in frame `j` to coordinates in frame `i`.
pub fn relative_rotation<T: Real>(fi: &Mat3<T>, fj: &Mat3<T>) -> Mat3<T> {
    fi.transpose() * *fj
}

pub fn frames_for_molecule<T: Real>(
    mol: &Molecule<T>,
    graph: &Graph<T>,
    cfg: &FrameConfig<T>,
) -> (Vec<Frame<T>>, FrameSummary) {
    let frames: Vec<_> = (0..mol.n_atoms()).map(|i| build_frame(mol, graph, i, cfg)).collect();
    let summary = FrameSummary::from_frames(&frames);
    (frames, summary)
}
