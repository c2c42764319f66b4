use rand::Rng;

use super::{affine, xavier_uniform, LstmConfig, ObsBatch, Result, N_ACTIONS};
use crate::tensor::{Bound, ParamSet, Scalar, Tape, Tensor, Var};

// Gate blocks are laid out [input | forget | cell | output] along the
// columns of w_ih, w_hh and b.
pub(super) fn init<T: Scalar>(c: &LstmConfig, n_features: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let h = c.hidden;
    let mut ps = ParamSet::new();
    for l in 0..c.layers {
        let input = if l == 0 { n_features } else { h };
        ps.insert(format!("lstm{l}.w_ih"), xavier_uniform(rng, input, 4 * h));
        ps.insert(format!("lstm{l}.w_hh"), xavier_uniform(rng, h, 4 * h));
        let mut b = Tensor::zeros(&[4 * h]);
        for x in &mut b.data_mut()[h..2 * h] {
            *x = T::one();
        }
        ps.insert(format!("lstm{l}.b"), b);
    }
    ps.insert("head.w", xavier_uniform(rng, h, N_ACTIONS));
    ps.insert("head.b", Tensor::zeros(&[N_ACTIONS]));
    ps
}

pub(super) fn forward<T: Scalar>(c: &LstmConfig, tape: &mut Tape<T>, p: &Bound, obs: &ObsBatch<T>) -> Result<Var> {
    let h = c.hidden;
    let mut seq = Vec::with_capacity(obs.window);
    for t in 0..obs.window {
        seq.push(tape.constant(obs.timestep(t))?);
    }
    for l in 0..c.layers {
        let w_hh = p.get(&format!("lstm{l}.w_hh"))?;
        let (wi, bi) = (format!("lstm{l}.w_ih"), format!("lstm{l}.b"));
        let mut state: Option<(Var, Var)> = None;
        let mut outputs = Vec::with_capacity(seq.len());
        for &x in &seq {
            let mut gates = affine(tape, p, x, &wi, &bi)?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, w_hh)?;
                gates = tape.add(gates, rec)?;
            }
            let i = tape.slice_cols(gates, 0, h)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(gates, h, 2 * h)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
            let g = tape.tanh(g)?;
            let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
            let o = tape.sigmoid(o)?;
            let ig = tape.mul(i, g)?;
            // zero initial state: c_0 = i * g
            let cell = match state {
                Some((_, c_prev)) => {
                    let fc = tape.mul(f, c_prev)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(cell)?;
            let hidden = tape.mul(o, tc)?;
            state = Some((hidden, cell));
            outputs.push(hidden);
        }
        seq = outputs;
    }
    let last = *seq.last().expect("window is non-empty");
    affine(tape, p, last, "head.w", "head.b")
}
