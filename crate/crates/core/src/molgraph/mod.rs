//! Molecule records, cutoff graphs, dataset files, grouped splits and the
//! synthetic bond-polarizability generator.

mod dataset;
mod graph;
mod split;
mod synth;

pub use dataset::{format_record, parse_dataset, read_dataset, write_dataset};
pub use graph::{build_graph, Edge, Graph, EDGE_EPS};
pub use split::{split_by_molecule, Split, SplitAssignment};
pub use synth::{gen_synthetic, synth_polarizability, SynthParams, ELEMENTS};

use thiserror::Error;

use crate::linalg3::{Mat3, Vec3};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MolError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {msg}")]
    Parse { line: usize, field: &'static str, msg: String },
    #[error("record `{id}`: {n_z} atomic numbers but {n_pos} positions")]
    CountMismatch { id: String, n_z: usize, n_pos: usize },
    #[error("record `{id}`: target tensor is not symmetric (max asymmetry {asym:e})")]
    NonSymmetricTarget { id: String, asym: f64 },
    #[error("molecule `{0}` has no atoms")]
    Empty(String),
    #[error("molecule `{id}`: coincident atoms {i} and {j}")]
    CoincidentAtoms { id: String, i: usize, j: usize },
    #[error("cutoff must be positive, got {0}")]
    BadCutoff(f64),
    #[error("unknown element Z={0}")]
    UnknownElement(u32),
    #[error("cannot split an empty molecule list")]
    EmptySplit,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("non-finite value in molecule `{0}`")]
    NonFinite(String),
}

/// One labelled (or unlabelled) conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule<T> {
    pub molecule_id: String,
    pub conformer_id: String,
    pub atomic_numbers: Vec<u32>,
    /// Å
    pub positions: Vec<Vec3<T>>,
    /// bohr³
    pub polarizability: Option<Mat3<T>>,
}

impl<T: Real> Molecule<T> {
    pub fn new(
        molecule_id: impl Into<String>,
        conformer_id: impl Into<String>,
        atomic_numbers: Vec<u32>,
        positions: Vec<Vec3<T>>,
        polarizability: Option<Mat3<T>>,
    ) -> Result<Self, MolError> {
        let mol = Self {
            molecule_id: molecule_id.into(),
            conformer_id: conformer_id.into(),
            atomic_numbers,
            positions,
            polarizability,
        };
        mol.validate()?;
        Ok(mol)
    }

    pub fn validate(&self) -> Result<(), MolError> {
        let id = &self.molecule_id;
        if self.atomic_numbers.len() != self.positions.len() {
            return Err(MolError::CountMismatch {
                id: id.clone(),
                n_z: self.atomic_numbers.len(),
                n_pos: self.positions.len(),
            });
        }
        if self.atomic_numbers.is_empty() {
            return Err(MolError::Empty(id.clone()));
        }
        if let Some(&z) = self.atomic_numbers.iter().find(|&&z| z == 0) {
            return Err(MolError::UnknownElement(z));
        }
        if !self.positions.iter().all(|p| p.is_finite()) {
            return Err(MolError::NonFinite(id.clone()));
        }
        if let Some(a) = &self.polarizability {
            if !a.is_finite() {
                return Err(MolError::NonFinite(id.clone()));
            }
            let asym = a.asymmetry().to_f64_lossless();
            if asym > 1e-9 {
                return Err(MolError::NonSymmetricTarget { id: id.clone(), asym });
            }
        }
        Ok(())
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    /// Positions mapped by `x ↦ R·x + t`; the target (if any) becomes `R α Rᵀ`.
    pub fn transformed(&self, rot: &Mat3<T>, shift: Vec3<T>) -> Self {
        Self {
            molecule_id: self.molecule_id.clone(),
            conformer_id: self.conformer_id.clone(),
            atomic_numbers: self.atomic_numbers.clone(),
            positions: self.positions.iter().map(|&p| *rot * p + shift).collect(),
            polarizability: self.polarizability.map(|a| a.conjugate(rot)),
        }
    }

    pub fn rotated(&self, rot: &Mat3<T>) -> Self {
        self.transformed(rot, Vec3::zero())
    }

    pub fn translated(&self, shift: Vec3<T>) -> Self {
        Self {
            positions: self.positions.iter().map(|&p| p + shift).collect(),
            ..self.clone()
        }
    }

    pub fn cast<U: Real>(&self) -> Molecule<U> {
        Molecule {
            molecule_id: self.molecule_id.clone(),
            conformer_id: self.conformer_id.clone(),
            atomic_numbers: self.atomic_numbers.clone(),
            positions: self.positions.iter().map(|p| p.cast()).collect(),
            polarizability: self.polarizability.map(|a| a.cast()),
        }
    }
}
