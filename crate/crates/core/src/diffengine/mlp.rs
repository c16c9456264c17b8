use rand::Rng;

use crate::scalar::Real;

use super::params::{Param, ParamStore};
use super::tape::{Tape, Var};
use super::DiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Logistic,
}

/// Two-layer perceptron `W₂·act(W₁·x + b₁) + b₂`, optionally followed by a
/// logistic gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub output_gate: bool,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize, output_gate: bool) -> Self {
        Self { in_dim, hidden_dim, out_dim, output_gate, activation: Activation::Tanh }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.out_dim + self.out_dim
    }

    fn names(prefix: &str) -> [String; 4] {
        [format!("{prefix}.w1"), format!("{prefix}.b1"), format!("{prefix}.w2"), format!("{prefix}.b2")]
    }
}

/// Adds `prefix.{w1,b1,w2,b2}` to `store`: Glorot weights, zero biases.
pub fn init_mlp<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut R,
) -> Result<(), DiffError> {
    if spec.in_dim == 0 || spec.hidden_dim == 0 || spec.out_dim == 0 {
        return Err(DiffError::Shape { op: "mlp_spec", left: (spec.in_dim, spec.hidden_dim), right: (spec.hidden_dim, spec.out_dim) });
    }
    let [w1, b1, w2, b2] = MlpSpec::names(prefix);
    store.insert(w1, Param::glorot(spec.in_dim, spec.hidden_dim, rng))?;
    store.insert(b1, Param::zeros(1, spec.hidden_dim))?;
    store.insert(w2, Param::glorot(spec.hidden_dim, spec.out_dim, rng))?;
    store.insert(b2, Param::zeros(1, spec.out_dim))?;
    Ok(())
}

/// Applies the MLP row-wise to `input: [N, in_dim]`.
pub fn mlp_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    spec: &MlpSpec,
    input: Var,
) -> Result<Var, DiffError> {
    let shape = tape.shape(input);
    if shape.1 != spec.in_dim {
        return Err(DiffError::Shape { op: "mlp_forward", left: shape, right: (spec.in_dim, spec.out_dim) });
    }
    let [w1, b1, w2, b2] = MlpSpec::names(prefix);
    let (w1, b1) = (tape.param(store, &w1)?, tape.param(store, &b1)?);
    let (w2, b2) = (tape.param(store, &w2)?, tape.param(store, &b2)?);
    let h = tape.matmul(input, w1)?;
    let h = tape.add_bias(h, b1)?;
    mlp_tail(tape, spec, h, w2, b2)
}

/// Second half of an MLP whose first affine map was computed elsewhere.
pub fn mlp_tail<T: Real>(tape: &mut Tape<T>, spec: &MlpSpec, pre: Var, w2: Var, b2: Var) -> Result<Var, DiffError> {
    let h = match spec.activation {
        Activation::Tanh => tape.tanh(pre),
        Activation::Logistic => tape.logistic(pre),
    };
    let o = tape.matmul(h, w2)?;
    let o = tape.add_bias(o, b2)?;
    Ok(if spec.output_gate { tape.logistic(o) } else { o })
}
