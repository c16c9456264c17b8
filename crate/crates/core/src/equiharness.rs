//! Model and pipeline equivariance protocols.
//!
//! Model mode rotates positions and the base frames together; pipeline mode
//! rotates positions only and rebuilds the frames, so it also sees PCA sign
//! flips and near-degenerate neighbourhoods.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::frames::FrameSummary;
use crate::linalg3::{random_rotation, Mat3};
use crate::molgraph::Molecule;
use crate::scalar::Real;
use crate::svtnet::{Model, SvtError};

/// Denominator guard of [`rel_frob`].
pub const REL_FROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Model,
    Pipeline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Model => "model",
            Mode::Pipeline => "pipeline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(Mode::Model),
            "pipeline" => Ok(Mode::Pipeline),
            other => Err(format!("unknown mode `{other}` (expected model or pipeline)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `‖α_R − R α Rᵀ‖_F / (½(‖α_R‖_F + ‖α‖_F) + ε)`.
pub fn rel_frob<T: Real>(rotated: &Mat3<T>, base: &Mat3<T>, r: &Mat3<T>) -> T {
    let num = (*rotated - base.conjugate(r)).frobenius_norm();
    let den = T::lit(0.5) * (rotated.frobenius_norm() + base.frobenius_norm()) + T::lit(REL_FROB_EPS);
    num / den
}

/// `n` rotations from a seeded stream; the same list is applied to every
/// molecule.
pub fn seeded_rotations<T: Real>(n: usize, seed: u64) -> Vec<Mat3<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_rotation(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeEqui {
    pub molecule_id: String,
    pub conformer_id: String,
    /// One value per rotation, in rotation order.
    pub rel: Vec<f64>,
    /// Frame diagnostics of the unrotated geometry.
    pub frames: FrameSummary,
    /// Rotations whose rebuilt frames reported different diagnostics than
    /// the base geometry (pipeline mode only).
    pub flag_changes: usize,
}

impl MoleculeEqui {
    pub fn mean(&self) -> f64 {
        self.rel.iter().sum::<f64>() / self.rel.len() as f64
    }

    pub fn worst(&self) -> f64 {
        self.rel.iter().copied().fold(0.0, f64::max)
    }

    /// No degenerate frame, no fallback, and stable under every rotation.
    pub fn is_clean(&self) -> bool {
        self.frames.is_clean() && self.flag_changes == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquiReport {
    pub mode: Mode,
    pub seed: u64,
    pub n_rotations: usize,
    pub molecules: Vec<MoleculeEqui>,
    /// Over all (molecule, rotation) pairs.
    pub mean: f64,
    /// Population standard deviation over the same pairs.
    pub std: f64,
    pub clean_mean: Option<f64>,
    pub flagged_mean: Option<f64>,
    /// Frame diagnostics summed over the base geometries.
    pub frames: FrameSummary,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt()))
}

impl EquiReport {
    fn assemble(mode: Mode, seed: u64, n_rotations: usize, molecules: Vec<MoleculeEqui>) -> Self {
        let all = molecules.iter().flat_map(|m| m.rel.iter().copied());
        let (mean, std) = mean_std(all).unwrap_or((0.0, 0.0));
        let subset = |clean: bool| {
            mean_std(molecules.iter().filter(move |m| m.is_clean() == clean).flat_map(|m| m.rel.iter().copied()))
                .map(|(m, _)| m)
        };
        let mut frames = FrameSummary::default();
        for m in &molecules {
            frames.merge(&m.frames);
        }
        Self { mode, seed, n_rotations, clean_mean: subset(true), flagged_mean: subset(false), molecules, mean, std, frames }
    }

    pub fn flagged_molecules(&self) -> usize {
        self.molecules.iter().filter(|m| !m.is_clean()).count()
    }

    pub fn worst(&self) -> f64 {
        self.molecules.iter().map(MoleculeEqui::worst).fold(0.0, f64::max)
    }

    /// Header, one line per molecule, then the aggregate block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# equivariance mode={} seed={} rotations={} molecules={}",
            self.mode,
            self.seed,
            self.n_rotations,
            self.molecules.len()
        );
        let _ = writeln!(s, "# molecule\tconformer\tatoms\tdegenerate\tfallbacks\tflag_changes\tmean\tworst");
        for m in &self.molecules {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}",
                m.molecule_id,
                m.conformer_id,
                m.frames.n_atoms,
                m.frames.degenerate,
                m.frames.fallbacks(),
                m.flag_changes,
                m.mean(),
                m.worst()
            );
        }
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
        let _ = writeln!(s, "mean\t{:.6e}", self.mean);
        let _ = writeln!(s, "std\t{:.6e}", self.std);
        let _ = writeln!(s, "worst\t{:.6e}", self.worst());
        let _ = writeln!(s, "clean_mean\t{}", opt(self.clean_mean));
        let _ = writeln!(s, "flagged_mean\t{}", opt(self.flagged_mean));
        let _ = writeln!(s, "flagged_molecules\t{}", self.flagged_molecules());
        let f = &self.frames;
        let _ = writeln!(
            s,
            "frames\tatoms={} degenerate={} sign_unstable={} x_parallel_z={} mu_small={} isolated={}",
            f.n_atoms, f.degenerate, f.sign_unstable, f.x_parallel_z, f.mu_small, f.isolated
        );
        let _ = writeln!(s, "rel_frob\t{:.3e} ± {:.3e}", self.mean, self.std);
        s
    }
}

fn one_molecule<T: Real>(
    model: &Model<T>,
    mol: &Molecule<T>,
    rotations: &[Mat3<T>],
    mode: Mode,
) -> Result<MoleculeEqui, SvtError> {
    let base = model.prepare(mol)?;
    let base_pred = model.predict_prepared(&base)?;
    let mut rel = Vec::with_capacity(rotations.len());
    let mut flag_changes = 0;
    for r in rotations {
        let moved = mol.rotated(r);
        let pred = match mode {
            Mode::Model => {
                let frames: Vec<Mat3<T>> = base.frames.iter().map(|f| *r * *f).collect();
                model.predict_with_frames(&moved, &frames)?
            }
            Mode::Pipeline => {
                let p = model.prepare(&moved)?;
                flag_changes += (p.summary != base.summary) as usize;
                model.predict_prepared(&p)?
            }
        };
        rel.push(rel_frob(&pred, &base_pred, r).to_f64_lossless());
    }
    Ok(MoleculeEqui {
        molecule_id: mol.molecule_id.clone(),
        conformer_id: mol.conformer_id.clone(),
        rel,
        frames: base.summary,
        flag_changes,
    })
}

/// Runs either protocol with an explicit rotation list. Molecules are
/// processed in parallel; aggregation follows input order.
pub fn equivariance_with_rotations<T: Real>(
    model: &Model<T>,
    mols: &[Molecule<T>],
    rotations: &[Mat3<T>],
    mode: Mode,
    seed: u64,
) -> Result<EquiReport, SvtError> {
    if rotations.is_empty() {
        return Err(SvtError::Config("at least one rotation is required".into()));
    }
    let per: Vec<MoleculeEqui> =
        mols.par_iter().map(|m| one_molecule(model, m, rotations, mode)).collect::<Result<_, _>>()?;
    Ok(EquiReport::assemble(mode, seed, rotations.len(), per))
}

/// Positions and base frames rotated together; frames are not rebuilt.
pub fn model_equivariance<T: Real>(
    model: &Model<T>,
    mols: &[Molecule<T>],
    n_rotations: usize,
    seed: u64,
) -> Result<EquiReport, SvtError> {
    equivariance_with_rotations(model, mols, &seeded_rotations(n_rotations, seed), Mode::Model, seed)
}

/// Positions rotated, frames rebuilt from the rotated geometry.
pub fn pipeline_equivariance<T: Real>(
    model: &Model<T>,
    mols: &[Molecule<T>],
    n_rotations: usize,
    seed: u64,
) -> Result<EquiReport, SvtError> {
    equivariance_with_rotations(model, mols, &seeded_rotations(n_rotations, seed), Mode::Pipeline, seed)
}
