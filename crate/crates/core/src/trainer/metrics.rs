use crate::diffengine::{DiffError, Tape, Var};
use crate::linalg3::Mat3;
use crate::scalar::Real;

const DIAG: [usize; 3] = [0, 4, 8];
const OFF_DIAG: [usize; 6] = [1, 2, 3, 5, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Mean absolute component error.
    Tensor,
    /// Absolute trace error.
    Trace,
    /// Mean absolute error of the six off-diagonal components.
    Aniso,
    /// Frobenius norm of the error.
    Frob,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Tensor, Metric::Trace, Metric::Aniso, Metric::Frob];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tensor => "tensor",
            Metric::Trace => "trace",
            Metric::Aniso => "aniso",
            Metric::Frob => "frob",
        }
    }

    /// Per-molecule error between two tensors.
    pub fn eval<T: Real>(self, pred: &Mat3<T>, truth: &Mat3<T>) -> T {
        let d = (*pred - *truth).to_flat();
        match self {
            Metric::Tensor => d.iter().map(|x| x.abs()).sum::<T>() / T::lit(9.0),
            Metric::Trace => DIAG.iter().map(|&k| d[k]).sum::<T>().abs(),
            Metric::Aniso => OFF_DIAG.iter().map(|&k| d[k].abs()).sum::<T>() / T::lit(6.0),
            Metric::Frob => d.iter().map(|&x| x * x).sum::<T>().sqrt(),
        }
    }

    /// The same error on the tape, averaged over the rows of
    /// `pred`/`truth: [M, 9]`; `1×1` result.
    pub fn loss<T: Real>(self, tape: &mut Tape<T>, pred: Var, truth: Var) -> Result<Var, DiffError> {
        let m = tape.shape(pred).0;
        let d = tape.sub(pred, truth)?;
        let select = |tape: &mut Tape<T>, idx: &[usize]| {
            let mut w = vec![T::zero(); 9];
            for &k in idx {
                w[k] = T::one();
            }
            tape.constant(9, 1, w)
        };
        let per_mol = match self {
            Metric::Tensor => {
                let a = tape.abs(d);
                let s = tape.sum_axis(a, 1)?;
                tape.scale(s, T::lit(9.0).recip())
            }
            Metric::Trace => {
                let w = select(tape, &DIAG)?;
                let tr = tape.matmul(d, w)?;
                tape.abs(tr)
            }
            Metric::Aniso => {
                let w = select(tape, &OFF_DIAG)?;
                let a = tape.abs(d);
                let s = tape.matmul(a, w)?;
                tape.scale(s, T::lit(6.0).recip())
            }
            Metric::Frob => {
                let sq = tape.mul(d, d)?;
                let s = tape.sum_axis(sq, 1)?;
                tape.sqrt(s)
            }
        };
        let total = tape.sum_axis(per_mol, 0)?;
        Ok(tape.scale(total, T::from_count(m).recip()))
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}` (expected tensor, trace, aniso or frob)"))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per [`Metric`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricValues {
    pub tensor: f64,
    pub trace: f64,
    pub aniso: f64,
    pub frob: f64,
}

impl MetricValues {
    pub fn between<T: Real>(pred: &Mat3<T>, truth: &Mat3<T>) -> Self {
        let f = |m: Metric| m.eval(pred, truth).to_f64_lossless();
        Self { tensor: f(Metric::Tensor), trace: f(Metric::Trace), aniso: f(Metric::Aniso), frob: f(Metric::Frob) }
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Tensor => self.tensor,
            Metric::Trace => self.trace,
            Metric::Aniso => self.aniso,
            Metric::Frob => self.frob,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tensor, self.trace, self.aniso, self.frob]
    }

    pub(crate) fn add(&mut self, o: &Self) {
        self.tensor += o.tensor;
        self.trace += o.trace;
        self.aniso += o.aniso;
        self.frob += o.frob;
    }

    pub(crate) fn scale(&mut self, k: f64) {
        self.tensor *= k;
        self.trace *= k;
        self.aniso *= k;
        self.frob *= k;
    }
}

/// Conventional polarizability anisotropy
/// `Δα = √(½[(a₁₁−a₂₂)² + (a₂₂−a₃₃)² + (a₃₃−a₁₁)² + 6(a₁₂² + a₂₃² + a₁₃²)])`.
pub fn anisotropy_invariant<T: Real>(a: &Mat3<T>) -> T {
    let m = &a.m;
    let d = (m[0][0] - m[1][1]).powi(2) + (m[1][1] - m[2][2]).powi(2) + (m[2][2] - m[0][0]).powi(2);
    let o = m[0][1].powi(2) + m[1][2].powi(2) + m[0][2].powi(2);
    (T::lit(0.5) * (d + T::lit(6.0) * o)).sqrt()
}
