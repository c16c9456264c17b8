use rayon::prelude::*;

use crate::linalg3::Mat3;
use crate::molgraph::{synth_polarizability, Molecule, Split, SynthParams};
use crate::svtnet::Model;

use super::metrics::{anisotropy_invariant, MetricValues};
use super::TrainError;

/// Anything that maps a molecule to a polarizability tensor.
pub trait Predictor: Sync {
    fn predict(&self, mol: &Molecule<f64>) -> Result<Mat3<f64>, TrainError>;
}

impl Predictor for Model<f64> {
    fn predict(&self, mol: &Molecule<f64>) -> Result<Mat3<f64>, TrainError> {
        Ok(Model::predict(self, mol)?)
    }
}

/// Recomputes the synthetic ground truth; a perfect predictor on data from
/// [`crate::molgraph::gen_synthetic`] with the same parameters.
#[derive(Debug, Clone, Default)]
pub struct SynthOracle(pub SynthParams);

impl Predictor for SynthOracle {
    fn predict(&self, mol: &Molecule<f64>) -> Result<Mat3<f64>, TrainError> {
        Ok(synth_polarizability(mol, &self.0)?)
    }
}

/// Returns the same tensor for every molecule.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub Mat3<f64>);

impl Predictor for ConstantPredictor {
    fn predict(&self, _: &Molecule<f64>) -> Result<Mat3<f64>, TrainError> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub split: Option<Split>,
    pub n_molecules: usize,
    /// Mean per-molecule errors.
    pub mae: MetricValues,
    /// Mean of each metric taken against the zero tensor: the typical size
    /// of the quantity being predicted.
    pub ground_truth: MetricValues,
    /// Mean absolute error of the conventional anisotropy `Δα`.
    pub delta_alpha_mae: f64,
}

impl MetricReport {
    /// Aligned table: metric, MAE, ground-truth scale.
    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let split = self.split.map(|s| s.name()).unwrap_or("all");
        let _ = writeln!(s, "# split={split} molecules={}", self.n_molecules);
        let _ = writeln!(s, "{:<10} {:>24} {:>24}", "metric", "mae", "ground_truth_mean");
        let names = ["tensor", "trace", "aniso", "frob"];
        for ((n, m), g) in names.iter().zip(self.mae.as_array()).zip(self.ground_truth.as_array()) {
            let _ = writeln!(s, "{n:<10} {m:>24.16e} {g:>24.16e}");
        }
        let _ = writeln!(s, "# delta_alpha_mae={:.16e}", self.delta_alpha_mae);
        s
    }
}

/// Per-molecule metrics averaged over `mols`; predictions run in parallel,
/// the sums are accumulated in input order.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    mols: &[&Molecule<f64>],
    split: Option<Split>,
) -> Result<MetricReport, TrainError> {
    if mols.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let rows = mols
        .par_iter()
        .map(|m| {
            let truth = m.polarizability.ok_or_else(|| TrainError::MissingLabel(m.molecule_id.clone()))?;
            let pred = predictor.predict(m)?;
            Ok((
                MetricValues::between(&pred, &truth),
                MetricValues::between(&truth, &Mat3::zeros()),
                (anisotropy_invariant(&pred) - anisotropy_invariant(&truth)).abs(),
            ))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut mae = MetricValues::default();
    let mut gt = MetricValues::default();
    let mut da = 0.0;
    for (e, g, d) in &rows {
        mae.add(e);
        gt.add(g);
        da += d;
    }
    let k = 1.0 / rows.len() as f64;
    mae.scale(k);
    gt.scale(k);
    Ok(MetricReport { split, n_molecules: rows.len(), mae, ground_truth: gt, delta_alpha_mae: da * k })
}
