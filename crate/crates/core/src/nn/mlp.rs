use rand::Rng;

use super::{affine, xavier_uniform, MlpConfig, ObsBatch, Result, N_ACTIONS};
use crate::tensor::{Bound, ParamSet, Scalar, Tape, Tensor, Var};

pub(super) fn init<T: Scalar>(c: &MlpConfig, n_features: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let mut ps = ParamSet::new();
    ps.insert("l1.w", xavier_uniform(rng, n_features, c.h1));
    ps.insert("l1.b", Tensor::zeros(&[c.h1]));
    ps.insert("l2.w", xavier_uniform(rng, c.h1, c.h2));
    ps.insert("l2.b", Tensor::zeros(&[c.h2]));
    ps.insert("head.w", xavier_uniform(rng, c.h2, N_ACTIONS));
    ps.insert("head.b", Tensor::zeros(&[N_ACTIONS]));
    ps
}

/// Two tanh layers over the last row of each window, then the head.
pub(super) fn forward<T: Scalar>(tape: &mut Tape<T>, p: &Bound, obs: &ObsBatch<T>) -> Result<Var> {
    let x = tape.constant(obs.timestep(obs.window - 1))?;
    let h = affine(tape, p, x, "l1.w", "l1.b")?;
    let h = tape.tanh(h)?;
    let h = affine(tape, p, h, "l2.w", "l2.b")?;
    let h = tape.tanh(h)?;
    affine(tape, p, h, "head.w", "head.b")
}
