use rand::Rng;

use super::{affine, normal, xavier_uniform, ObsBatch, Result, TransformerConfig, N_ACTIONS};
use crate::tensor::{lit, Bound, ParamSet, Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

pub(super) fn init<T: Scalar>(c: &TransformerConfig, n_features: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let d = c.model_dim;
    let mut ps = ParamSet::new();
    ps.insert("in.w", xavier_uniform(rng, n_features, d));
    ps.insert("in.b", Tensor::zeros(&[d]));
    ps.insert("pos", normal(rng, &[c.window, d], c.pos_init_std));
    for l in 0..c.layers {
        let n = |s: &str| format!("enc{l}.{s}");
        ps.insert(n("ln1.g"), Tensor::full(&[d], T::one()));
        ps.insert(n("ln1.b"), Tensor::zeros(&[d]));
        for proj in ["q", "k", "v", "o"] {
            ps.insert(n(&format!("w{proj}")), xavier_uniform(rng, d, d));
            ps.insert(n(&format!("b{proj}")), Tensor::zeros(&[d]));
        }
        ps.insert(n("ln2.g"), Tensor::full(&[d], T::one()));
        ps.insert(n("ln2.b"), Tensor::zeros(&[d]));
        ps.insert(n("ff1.w"), xavier_uniform(rng, d, c.ff_dim));
        ps.insert(n("ff1.b"), Tensor::zeros(&[c.ff_dim]));
        ps.insert(n("ff2.w"), xavier_uniform(rng, c.ff_dim, d));
        ps.insert(n("ff2.b"), Tensor::zeros(&[d]));
    }
    ps.insert("head.w", xavier_uniform(rng, d, N_ACTIONS));
    ps.insert("head.b", Tensor::zeros(&[N_ACTIONS]));
    ps
}

/// Input projection, learned positions, pre-norm encoder layers with full
/// (unmasked) self-attention, then the head on the last position.
pub(super) fn forward<T: Scalar>(
    c: &TransformerConfig,
    tape: &mut Tape<T>,
    p: &Bound,
    obs: &ObsBatch<T>,
    mut attn: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let (b, w) = (obs.batch, obs.window);
    let dh = c.head_dim();
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());

    let x = tape.constant(obs.flat())?;
    let mut h = affine(tape, p, x, "in.w", "in.b")?;
    let pos = p.get("pos")?;
    let tiled = tape.concat_rows(&vec![pos; b])?;
    h = tape.add(h, tiled)?;

    for l in 0..c.layers {
        let n = |s: &str| format!("enc{l}.{s}");
        let a = tape.layer_norm(h, p.get(&n("ln1.g"))?, p.get(&n("ln1.b"))?, lit(LN_EPS))?;
        let q = affine(tape, p, a, &n("wq"), &n("bq"))?;
        let k = affine(tape, p, a, &n("wk"), &n("bk"))?;
        let v = affine(tape, p, a, &n("wv"), &n("bv"))?;
        let mut per_sample = Vec::with_capacity(b);
        for s in 0..b {
            let rows: Vec<usize> = (s * w..(s + 1) * w).collect();
            let (qs, ks, vs) = (
                tape.select_rows(q, &rows)?,
                tape.select_rows(k, &rows)?,
                tape.select_rows(v, &rows)?,
            );
            let mut heads = Vec::with_capacity(c.heads);
            for hd in 0..c.heads {
                let (lo, hi) = (hd * dh, (hd + 1) * dh);
                let qh = tape.slice_cols(qs, lo, hi)?;
                let kh = tape.slice_cols(ks, lo, hi)?;
                let vh = tape.slice_cols(vs, lo, hi)?;
                let kt = tape.transpose(kh)?;
                let logits = tape.matmul(qh, kt)?;
                let logits = tape.scale(logits, scale)?;
                let weights = tape.softmax(logits)?;
                if let Some(sink) = attn.as_deref_mut() {
                    sink.push(weights);
                }
                heads.push(tape.matmul(weights, vh)?);
            }
            per_sample.push(tape.concat_cols(&heads)?);
        }
        let ctx = tape.concat_rows(&per_sample)?;
        let o = affine(tape, p, ctx, &n("wo"), &n("bo"))?;
        h = tape.add(h, o)?;

        let f = tape.layer_norm(h, p.get(&n("ln2.g"))?, p.get(&n("ln2.b"))?, lit(LN_EPS))?;
        let f = affine(tape, p, f, &n("ff1.w"), &n("ff1.b"))?;
        let f = tape.relu(f)?;
        let f = affine(tape, p, f, &n("ff2.w"), &n("ff2.b"))?;
        h = tape.add(h, f)?;
    }

    let last: Vec<usize> = (0..b).map(|s| s * w + w - 1).collect();
    let out = tape.select_rows(h, &last)?;
    affine(tape, p, out, "head.w", "head.b")
}
