//! Local-frame SO(3)-equivariant graph network for molecular polarizability
//! tensors.
//!
//! Every numeric module is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`, which is what training, checkpoints and the CLI use.

pub mod diffengine;
pub mod equiharness;
pub mod frames;
pub mod linalg3;
pub mod molgraph;
pub mod scalar;
pub mod svtnet;
pub mod trainer;

pub use scalar::Real;

pub type Scalar = f64;
pub type Vec3 = linalg3::Vec3<Scalar>;
pub type Mat3 = linalg3::Mat3<Scalar>;
pub type Molecule = molgraph::Molecule<Scalar>;
pub type Graph = molgraph::Graph<Scalar>;
pub type Frame = frames::Frame<Scalar>;
pub type Model = svtnet::Model<Scalar>;
pub type Tape = diffengine::Tape<Scalar>;
pub type ParamStore = diffengine::ParamStore<Scalar>;
