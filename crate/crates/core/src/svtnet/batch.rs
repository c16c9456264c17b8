use std::sync::Arc;

use crate::frames::{frames_for_molecule, relative_rotation, FrameConfig, FrameSummary};
use crate::linalg3::Mat3;
use crate::molgraph::{build_graph, Molecule};
use crate::scalar::Real;

use super::SvtError;

/// Graph, frames and element indices of one molecule, computed once and
/// reused by every forward pass.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub molecule_id: String,
    pub n_atoms: usize,
    /// Row of the embedding table per atom.
    pub species: Vec<usize>,
    /// `(receiver, sender)` per directed edge.
    pub edges: Vec<(usize, usize)>,
    /// `(d², (d² + ε)⁻¹)` per edge.
    pub edge_inputs: Vec<[T; 2]>,
    /// Local frame per atom, columns are the local axes in global coordinates.
    pub frames: Vec<Mat3<T>>,
    pub summary: FrameSummary,
    pub target: Option<Mat3<T>>,
}

impl<T: Real> Prepared<T> {
    /// Builds the cutoff graph and, unless `frames` is given, the local frames.
    pub fn new(
        mol: &Molecule<T>,
        elements: &[u32],
        cutoff: T,
        frames: Option<&[Mat3<T>]>,
    ) -> Result<Self, SvtError> {
        let graph = build_graph(mol, cutoff)?;
        let species = mol
            .atomic_numbers
            .iter()
            .map(|&z| elements.iter().position(|&e| e == z).ok_or(SvtError::UnknownElement(z)))
            .collect::<Result<Vec<_>, _>>()?;
        let (frames, summary) = match frames {
            Some(f) => {
                if f.len() != mol.n_atoms() {
                    return Err(SvtError::Config(format!(
                        "{} frames supplied for {} atoms",
                        f.len(),
                        mol.n_atoms()
                    )));
                }
                (f.to_vec(), FrameSummary { n_atoms: f.len(), ..Default::default() })
            }
            None => {
                let (fr, s) = frames_for_molecule(mol, &graph, &FrameConfig::default());
                (fr.into_iter().map(|f| f.f).collect(), s)
            }
        };
        Ok(Self {
            molecule_id: mol.molecule_id.clone(),
            n_atoms: mol.n_atoms(),
            species,
            edges: graph.edges.iter().map(|e| (e.i, e.j)).collect(),
            edge_inputs: graph.edges.iter().map(|e| [e.d2, e.inv_d2]).collect(),
            frames,
            summary,
            target: mol.polarizability,
        })
    }
}

/// Disjoint union of prepared molecules.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub n_nodes: usize,
    pub n_mols: usize,
    pub species: Arc<[usize]>,
    pub node_mol: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub src: Arc<[usize]>,
    /// `[E, 2]` row-major.
    pub edge_inputs: Vec<T>,
    pub frames: Arc<[Mat3<T>]>,
    /// `F_iᵀ F_j` per edge.
    pub transport: Arc<[Mat3<T>]>,
}

impl<T: Real> Batch<T> {
    pub fn new(mols: &[&Prepared<T>]) -> Self {
        let (mut species, mut node_mol, mut dst, mut src) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut edge_inputs, mut frames, mut transport) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for (m, p) in mols.iter().enumerate() {
            species.extend_from_slice(&p.species);
            node_mol.extend(std::iter::repeat_n(m, p.n_atoms));
            frames.extend_from_slice(&p.frames);
            for (&(i, j), inp) in p.edges.iter().zip(&p.edge_inputs) {
                dst.push(offset + i);
                src.push(offset + j);
                edge_inputs.extend_from_slice(inp);
                transport.push(relative_rotation(&p.frames[i], &p.frames[j]));
            }
            offset += p.n_atoms;
        }
        Self {
            n_nodes: offset,
            n_mols: mols.len(),
            species: species.into(),
            node_mol: node_mol.into(),
            dst: dst.into(),
            src: src.into(),
            edge_inputs,
            frames: frames.into(),
            transport: transport.into(),
        }
    }

    pub fn single(p: &Prepared<T>) -> Self {
        Self::new(&[p])
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }
}
