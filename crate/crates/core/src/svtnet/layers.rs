use crate::diffengine::{mlp_forward, mlp_tail, DiffError, Tape, Var};
use crate::scalar::Real;

use super::{Batch, Model, SvtError};

/// Per-node activations: `s: [N, C_s]`, `v: [N, 3·C_v]`, `t: [N, 9·C_t]`,
/// vectors and tensors stored channel-major in local coordinates.
#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub s: Var,
    pub v: Option<Var>,
    pub t: Option<Var>,
}

impl<T: Real> Model<T> {
    /// Receiver/sender pair MLP `φ([s_i, s_j, extra])` evaluated edge-wise.
    /// The first affine map is split by input block so the node parts are
    /// computed once per node and gathered.
    fn pair_mlp(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        prefix: &str,
        s: Var,
        extra: Option<Var>,
    ) -> Result<Var, DiffError> {
        let spec = self.spec(prefix);
        let cs = self.config.cs;
        let w1 = tape.param(&self.params, &format!("{prefix}.w1"))?;
        let b1 = tape.param(&self.params, &format!("{prefix}.b1"))?;
        let w2 = tape.param(&self.params, &format!("{prefix}.w2"))?;
        let b2 = tape.param(&self.params, &format!("{prefix}.b2"))?;
        let wi = tape.slice_rows(w1, 0, cs)?;
        let wj = tape.slice_rows(w1, cs, cs)?;
        let hi = tape.matmul(s, wi)?;
        let hj = tape.matmul(s, wj)?;
        let hi = tape.gather_rows(hi, batch.dst.clone())?;
        let hj = tape.gather_rows(hj, batch.src.clone())?;
        let mut pre = tape.add(hi, hj)?;
        if let Some(x) = extra {
            let k = tape.shape(x).1;
            let wx = tape.slice_rows(w1, 2 * cs, k)?;
            let hx = tape.matmul(x, wx)?;
            pre = tape.add(pre, hx)?;
        }
        let pre = tape.add_bias(pre, b1)?;
        mlp_tail(tape, &spec, pre, w2, b2)
    }

    /// Embedding rows `s⁰_i = E[Z_i]`.
    pub fn embed(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Var, SvtError> {
        let table = tape.param(&self.params, "embed")?;
        Ok(tape.gather_rows(table, batch.species.clone())?)
    }

    /// Gated invariant message passing with a residual update.
    pub fn scalar_layer(&self, tape: &mut Tape<T>, batch: &Batch<T>, layer: usize, s: Var) -> Result<Var, SvtError> {
        let p = format!("layer{layer}");
        let cs = self.config.cs;
        let n = batch.n_nodes;
        let agg = if batch.n_edges() == 0 {
            tape.constant(n, cs, vec![T::zero(); n * cs])?
        } else {
            let feats = tape.constant(batch.n_edges(), 2, batch.edge_inputs.clone())?;
            let m = self.pair_mlp(tape, batch, &format!("{p}.edge"), s, Some(feats))?;
            let g = mlp_forward(tape, &self.params, &format!("{p}.gate"), &self.spec(&format!("{p}.gate")), m)?;
            let gm = tape.mul_col(m, g)?;
            tape.scatter_add_rows(gm, batch.dst.clone(), n)?
        };
        let upd_in = tape.concat(&[s, agg])?;
        let prefix = format!("{p}.update");
        let upd = mlp_forward(tape, &self.params, &prefix, &self.spec(&prefix), upd_in)?;
        Ok(tape.add(s, upd)?)
    }

    /// Initial local-frame vectors and tensors from the scalar state.
    pub fn init_vt(&self, tape: &mut Tape<T>, s: Var) -> Result<(Var, Var), SvtError> {
        if self.config.variant != super::Variant::Tensorial {
            return Err(SvtError::Config("the scalar baseline has no vector or tensor channels".into()));
        }
        let v = mlp_forward(tape, &self.params, "init.vec", &self.spec("init.vec"), s)?;
        let t = mlp_forward(tape, &self.params, "init.ten", &self.spec("init.ten"), s)?;
        Ok((v, t))
    }

    /// Shared body of the vector and tensor layers; `block` is 3 or 9.
    fn mixing_layer(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        layer: usize,
        s: Var,
        x: Var,
        block: usize,
    ) -> Result<Var, SvtError> {
        let (kind, c) = if block == 3 { ("vec", self.config.cv) } else { ("ten", self.config.ct) };
        if batch.n_edges() == 0 {
            return Ok(x);
        }
        let prefix = format!("layer{layer}.{kind}");
        let cand = mlp_forward(tape, &self.params, &prefix, &self.spec(&prefix), s)?;
        let own = tape.gather_rows(cand, batch.dst.clone())?;
        let sent = tape.gather_rows(cand, batch.src.clone())?;
        let sent = if block == 3 {
            tape.rotate_vectors(sent, batch.transport.clone())?
        } else {
            tape.conjugate_tensors(sent, batch.transport.clone())?
        };
        let stacked = tape.concat(&[own, sent])?;
        let w = self.pair_mlp(tape, batch, &format!("layer{layer}.{kind}_int"), s, None)?;
        let mix = tape.batched_matmul(w, stacked, c, 2 * c, block)?;
        let agg = tape.scatter_add_rows(mix, batch.dst.clone(), batch.n_nodes)?;
        Ok(tape.add(x, agg)?)
    }

    pub fn vector_layer(&self, tape: &mut Tape<T>, batch: &Batch<T>, layer: usize, s: Var, v: Var) -> Result<Var, SvtError> {
        self.mixing_layer(tape, batch, layer, s, v, 3)
    }

    pub fn tensor_layer(&self, tape: &mut Tape<T>, batch: &Batch<T>, layer: usize, s: Var, t: Var) -> Result<Var, SvtError> {
        self.mixing_layer(tape, batch, layer, s, t, 9)
    }

    /// Symmetrized local head outputs, `[N, 9]`, before rotation to global axes.
    pub fn local_contributions(&self, tape: &mut Tape<T>, state: &NodeState) -> Result<Var, SvtError> {
        let mut parts = vec![state.s];
        parts.extend(state.v);
        parts.extend(state.t);
        let z = if parts.len() == 1 { state.s } else { tape.concat(&parts)? };
        let a = mlp_forward(tape, &self.params, "readout", &self.spec("readout"), z)?;
        let a = tape.symmetrize3(a)?;
        if self.config.output_scale == 1.0 {
            return Ok(a);
        }
        Ok(tape.scale(a, T::lit(self.config.output_scale)))
    }

    /// `Σ_i F_i sym(A_i) F_iᵀ` per molecule, `[n_mols, 9]`.
    pub fn readout(&self, tape: &mut Tape<T>, batch: &Batch<T>, state: &NodeState) -> Result<Var, SvtError> {
        let local = self.local_contributions(tape, state)?;
        pool(tape, batch, local)
    }
}

/// Rotates per-node local tensors `[N, 9]` to global axes and sums them per
/// molecule.
pub fn pool<T: Real>(tape: &mut Tape<T>, batch: &Batch<T>, local: Var) -> Result<Var, SvtError> {
    let global = tape.conjugate_tensors(local, batch.frames.clone())?;
    Ok(tape.scatter_add_rows(global, batch.node_mol.clone(), batch.n_mols)?)
}
