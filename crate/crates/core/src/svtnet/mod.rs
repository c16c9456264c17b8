//! Scalar-baseline and scalar/vector/tensor message-passing models with
//! local-frame transport and a pooled equivariant readout.

mod batch;
mod layers;

pub use batch::{Batch, Prepared};
pub use layers::{pool, NodeState};

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffengine::{init_mlp, Checkpoint, DiffError, MlpSpec, Param, ParamStore, Tape};
use crate::frames::Frame;
use crate::linalg3::Mat3;
use crate::molgraph::{MolError, Molecule, ELEMENTS};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SvtError {
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("element Z={0} has no embedding row")]
    UnknownElement(u32),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ScalarBaseline,
    Tensorial,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ScalarBaseline => "scalar",
            Variant::Tensorial => "tensorial",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scalar" | "scalar_baseline" => Ok(Variant::ScalarBaseline),
            "tensorial" => Ok(Variant::Tensorial),
            other => Err(format!("unknown model variant `{other}` (expected scalar or tensorial)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hidden width of every two-layer MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenWidth {
    /// `max(min(in, out), 16)`
    Auto,
    Fixed(usize),
}

impl HiddenWidth {
    pub fn resolve(self, in_dim: usize, out_dim: usize) -> usize {
        match self {
            HiddenWidth::Auto => in_dim.min(out_dim).max(16),
            HiddenWidth::Fixed(h) => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub cs: usize,
    pub cv: usize,
    pub ct: usize,
    /// Å
    pub cutoff: f64,
    /// Embedding rows, one per atomic number.
    pub elements: Vec<u32>,
    pub hidden: HiddenWidth,
    /// Fixed multiplier on every local contribution, bohr³. Keeps the
    /// network's outputs O(1) when per-atom targets are not.
    pub output_scale: f64,
}

impl ModelConfig {
    /// Desk-scale tensorial model.
    pub fn desk_tensorial() -> Self {
        Self {
            variant: Variant::Tensorial,
            layers: 4,
            cs: 32,
            cv: 4,
            ct: 8,
            cutoff: 4.0,
            elements: ELEMENTS.to_vec(),
            hidden: HiddenWidth::Auto,
            output_scale: 1.0,
        }
    }

    pub fn desk_scalar(cs: usize) -> Self {
        Self { variant: Variant::ScalarBaseline, cs, cv: 0, ct: 0, ..Self::desk_tensorial() }
    }

    pub fn paper_tensorial() -> Self {
        Self { layers: 8, cs: 128, cv: 4, ct: 32, ..Self::desk_tensorial() }
    }

    pub fn paper_scalar() -> Self {
        Self { layers: 8, ..Self::desk_scalar(331) }
    }

    pub fn validate(&self) -> Result<(), SvtError> {
        let bad = |m: &str| Err(SvtError::Config(m.to_string()));
        if self.layers < 2 {
            return bad("at least 2 layers are required");
        }
        if self.cs == 0 {
            return bad("scalar width must be positive");
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return bad("cutoff must be positive");
        }
        if self.elements.is_empty() {
            return bad("element list is empty");
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return bad("output scale must be positive");
        }
        if let HiddenWidth::Fixed(0) = self.hidden {
            return bad("hidden width must be positive");
        }
        match self.variant {
            Variant::ScalarBaseline if self.cv != 0 || self.ct != 0 => {
                bad("the scalar baseline takes no vector or tensor channels")
            }
            Variant::Tensorial if self.cv == 0 || self.ct == 0 => {
                bad("the tensorial model needs vector and tensor channels")
            }
            _ => Ok(()),
        }
    }

    fn mlp(&self, in_dim: usize, out_dim: usize, gate: bool) -> MlpSpec {
        MlpSpec::new(in_dim, self.hidden.resolve(in_dim, out_dim), out_dim, gate)
    }

    /// Every MLP of the model with its parameter prefix, in creation order.
    pub fn mlps(&self) -> Vec<(String, MlpSpec)> {
        let (cs, cv, ct) = (self.cs, self.cv, self.ct);
        let mut out = Vec::new();
        for l in 0..self.layers {
            out.push((format!("layer{l}.edge"), self.mlp(2 * cs + 2, cs, false)));
            out.push((format!("layer{l}.gate"), self.mlp(cs, 1, true)));
            out.push((format!("layer{l}.update"), self.mlp(2 * cs, cs, false)));
        }
        if self.variant == Variant::Tensorial {
            out.push(("init.vec".into(), self.mlp(cs, 3 * cv, false)));
            out.push(("init.ten".into(), self.mlp(cs, 9 * ct, false)));
            for l in 1..self.layers {
                out.push((format!("layer{l}.vec"), self.mlp(cs, 3 * cv, false)));
                out.push((format!("layer{l}.ten"), self.mlp(cs, 9 * ct, false)));
                out.push((format!("layer{l}.vec_int"), self.mlp(2 * cs, 2 * cv * cv, true)));
                out.push((format!("layer{l}.ten_int"), self.mlp(2 * cs, 2 * ct * ct, true)));
            }
        }
        out.push(("readout".into(), self.mlp(self.readout_dim(), 9, false)));
        out
    }

    pub fn readout_dim(&self) -> usize {
        self.cs + 3 * self.cv + 9 * self.ct
    }

    pub fn param_count(&self) -> usize {
        self.elements.len() * self.cs + self.mlps().iter().map(|(_, s)| s.param_count()).sum::<usize>()
    }

    /// Parameter names and shapes in store order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = vec![("embed".to_string(), (self.elements.len(), self.cs))];
        for (p, s) in self.mlps() {
            out.push((format!("{p}.w1"), (s.in_dim, s.hidden_dim)));
            out.push((format!("{p}.b1"), (1, s.hidden_dim)));
            out.push((format!("{p}.w2"), (s.hidden_dim, s.out_dim)));
            out.push((format!("{p}.b2"), (1, s.out_dim)));
        }
        out
    }

    /// `key = value` pairs stored in checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = match self.hidden {
            HiddenWidth::Auto => "auto".to_string(),
            HiddenWidth::Fixed(h) => h.to_string(),
        };
        let elements: Vec<String> = self.elements.iter().map(u32::to_string).collect();
        [
            ("variant", self.variant.name().to_string()),
            ("layers", self.layers.to_string()),
            ("cs", self.cs.to_string()),
            ("cv", self.cv.to_string()),
            ("ct", self.ct.to_string()),
            ("cutoff", format!("{:?}", self.cutoff)),
            ("elements", elements.join(",")),
            ("hidden", hidden),
            ("output_scale", format!("{:?}", self.output_scale)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, SvtError> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| SvtError::Config(format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<usize, SvtError> {
            get(k)?.parse().map_err(|e| SvtError::Config(format!("`{k}`: {e}")))
        };
        let cfg = Self {
            variant: get("variant")?.parse().map_err(SvtError::Config)?,
            layers: num("layers")?,
            cs: num("cs")?,
            cv: num("cv")?,
            ct: num("ct")?,
            cutoff: get("cutoff")?.parse().map_err(|e| SvtError::Config(format!("`cutoff`: {e}")))?,
            elements: get("elements")?
                .split(',')
                .map(|z| z.parse().map_err(|e| SvtError::Config(format!("`elements`: {e}"))))
                .collect::<Result<_, _>>()?,
            hidden: match get("hidden")? {
                "auto" => HiddenWidth::Auto,
                h => HiddenWidth::Fixed(h.parse().map_err(|e| SvtError::Config(format!("`hidden`: {e}")))?),
            },
            output_scale: get("output_scale")?
                .parse()
                .map_err(|e| SvtError::Config(format!("`output_scale`: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scalar width of a baseline whose parameter count is closest to `target`.
pub fn matched_scalar_width(template: &ModelConfig, target: usize) -> usize {
    (1..=4096)
        .map(|cs| {
            let c = ModelConfig { variant: Variant::ScalarBaseline, cs, cv: 0, ct: 0, ..template.clone() };
            (c.param_count().abs_diff(target), cs)
        })
        .min()
        .map(|(_, cs)| cs)
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    specs: HashMap<String, MlpSpec>,
}

impl<T: Real> Model<T> {
    /// Glorot-initialized parameters, deterministic per seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, SvtError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("embed", Param::glorot(config.elements.len(), config.cs, &mut rng))?;
        for (prefix, spec) in config.mlps() {
            init_mlp(&mut params, &prefix, &spec, &mut rng)?;
        }
        Ok(Self::from_parts(config, params))
    }

    fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Self {
        let specs = config.mlps().into_iter().collect();
        Self { config, params, specs }
    }

    pub(crate) fn spec(&self, prefix: &str) -> MlpSpec {
        self.specs[prefix]
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn prepare(&self, mol: &Molecule<T>) -> Result<Prepared<T>, SvtError> {
        Prepared::new(mol, &self.config.elements, T::lit(self.config.cutoff), None)
    }

    pub fn prepare_with_frames(&self, mol: &Molecule<T>, frames: &[Mat3<T>]) -> Result<Prepared<T>, SvtError> {
        Prepared::new(mol, &self.config.elements, T::lit(self.config.cutoff), Some(frames))
    }

    /// Predicted tensors of every molecule in `batch`, `[n_mols, 9]`.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<crate::diffengine::Var, SvtError> {
        let state = self.encode(tape, batch)?;
        self.readout(tape, batch, &state)
    }

    /// Node states after the last layer.
    pub fn encode(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<NodeState, SvtError> {
        let mut s = self.embed(tape, batch)?;
        s = self.scalar_layer(tape, batch, 0, s)?;
        let mut state = NodeState { s, v: None, t: None };
        if self.config.variant == Variant::Tensorial {
            let (v, t) = self.init_vt(tape, s)?;
            state.v = Some(v);
            state.t = Some(t);
        }
        for l in 1..self.config.layers {
            state.s = self.scalar_layer(tape, batch, l, state.s)?;
            if let (Some(v), Some(t)) = (state.v, state.t) {
                state.v = Some(self.vector_layer(tape, batch, l, state.s, v)?);
                state.t = Some(self.tensor_layer(tape, batch, l, state.s, t)?);
            }
        }
        Ok(state)
    }

    pub fn predict_prepared(&self, p: &Prepared<T>) -> Result<Mat3<T>, SvtError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &Batch::single(p))?;
        Ok(Mat3::from_slice(tape.value(out)))
    }

    /// Prediction with frames recomputed from the geometry.
    pub fn predict(&self, mol: &Molecule<T>) -> Result<Mat3<T>, SvtError> {
        self.predict_prepared(&self.prepare(mol)?)
    }

    /// Prediction with caller-supplied frames.
    pub fn predict_with_frames(&self, mol: &Molecule<T>, frames: &[Mat3<T>]) -> Result<Mat3<T>, SvtError> {
        self.predict_prepared(&self.prepare_with_frames(mol, frames)?)
    }

    pub fn predict_with(&self, mol: &Molecule<T>, frames: &[Frame<T>]) -> Result<Mat3<T>, SvtError> {
        let f: Vec<Mat3<T>> = frames.iter().map(|f| f.f).collect();
        self.predict_with_frames(mol, &f)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model::from_parts(self.config.clone(), self.params.cast())
    }
}

impl Model<f64> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.config.to_pairs(), params: self.params.clone(), optimizer: None }
    }

    /// Rebuilds a model, checking that every parameter has the shape the
    /// stored config implies.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SvtError> {
        let config = ModelConfig::from_pairs(&ck.config)?;
        let expected = config.param_shapes();
        let mismatch = expected.len() != ck.params.len()
            || expected.iter().zip(ck.params.iter()).any(|((na, shape), (nb, p))| na != nb || *shape != (p.rows, p.cols));
        if mismatch {
            return Err(SvtError::Config("checkpoint parameters do not match its model config".into()));
        }
        Ok(Self::from_parts(config, ck.params.clone()))
    }
}
