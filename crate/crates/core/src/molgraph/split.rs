use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

use super::{MolError, Molecule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// molecule_id → split. Every conformer of a molecule lands in one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, molecule_id: &str) -> Option<Split> {
        self.map.get(molecule_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// (train, val, test) molecule counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in self.map.values() {
            match s {
                Split::Train => c.0 += 1,
                Split::Val => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Records of `mols` that belong to `split`, in input order.
    pub fn select<'a, T: Real>(&self, mols: &'a [Molecule<T>], split: Split) -> Vec<&'a Molecule<T>> {
        mols.iter().filter(|m| self.get(&m.molecule_id) == Some(split)).collect()
    }
}

/// Grouped, seeded split over unique molecule ids.
///
/// Ids are deduplicated and sorted before a seeded shuffle, so the result
/// does not depend on record order. Counts are `round(f·n)` for train and
/// validation, the remainder goes to test.
pub fn split_by_molecule<T: Real>(
    mols: &[Molecule<T>],
    seed: u64,
    fractions: [f64; 3],
) -> Result<SplitAssignment, MolError> {
    if mols.is_empty() {
        return Err(MolError::EmptySplit);
    }
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MolError::BadFractions(fractions));
    }
    let ids: BTreeSet<&str> = mols.iter().map(|m| m.molecule_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let map = ids
        .into_iter()
        .enumerate()
        .map(|(k, id)| {
            let s = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment { map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg3::Vec3;

    fn mols(ids: impl IntoIterator<Item = String>) -> Vec<Molecule<f64>> {
        ids.into_iter().map(|id| Molecule::new(id, "opt", vec![1], vec![Vec3::zero()], None).unwrap()).collect()
    }

    #[test]
    fn ten_ids_split_8_1_1() {
        let m = mols((0..10).map(|k| format!("m{k}")));
        let s = split_by_molecule(&m, 1, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(s.counts(), (8, 1, 1));
        assert_eq!(s, split_by_molecule(&m, 1, [0.8, 0.1, 0.1]).unwrap());
    }

    #[test]
    fn conformers_share_a_split_and_duplicates_collapse() {
        let mut m = mols((0..30).map(|k| format!("m{}", k % 10)));
        for (k, mol) in m.iter_mut().enumerate() {
            mol.conformer_id = format!("c{k}");
        }
        let s = split_by_molecule(&m, 9, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(s.len(), 10);
        for split in [Split::Train, Split::Val, Split::Test] {
            let chosen = s.select(&m, split);
            for mol in chosen {
                assert_eq!(s.get(&mol.molecule_id), Some(split));
            }
        }
    }

    #[test]
    fn paper_sized_partition() {
        let m = mols((0..6900).map(|k| format!("q{k}")));
        let s = split_by_molecule(&m, 2024, [0.8, 0.1, 0.1]).unwrap();
        let (a, b, c) = s.counts();
        assert_eq!(a + b + c, 6900);
        assert!(a.abs_diff(5520) <= 1 && b.abs_diff(690) <= 1 && c.abs_diff(690) <= 1);
        // Each id appears exactly once.
        assert_eq!(s.iter().count(), 6900);
    }

    #[test]
    fn order_independent_and_errors() {
        let m = mols((0..50).map(|k| format!("m{k}")));
        let mut r = m.clone();
        r.reverse();
        assert_eq!(split_by_molecule(&m, 4, [0.8, 0.1, 0.1]).unwrap(), split_by_molecule(&r, 4, [0.8, 0.1, 0.1]).unwrap());
        assert!(matches!(split_by_molecule::<f64>(&[], 0, [0.8, 0.1, 0.1]), Err(MolError::EmptySplit)));
        assert!(matches!(split_by_molecule(&m, 0, [0.8, 0.3, 0.1]), Err(MolError::BadFractions(_))));
    }
}
