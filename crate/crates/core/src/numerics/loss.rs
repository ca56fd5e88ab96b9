//! Batch-mean probability losses recorded on a [`GradTape`]. Every node is
//! `rows x C`; losses are `1 x 1`. Callers detach whichever side is a target.

use super::{mix_weights, GradTape, NodeId, Scalar, EPS};
use crate::error::Result;

fn batch_mean<T: Scalar>(tape: &mut GradTape<T>, per_entry: NodeId) -> NodeId {
    let rows = tape.shape(per_entry).0.max(1);
    let s = tape.sum(per_entry);
    tape.scale(s, T::one() / T::lit(rows as f64))
}

/// Mean over rows of `D_KL(p_i || q_i)`.
pub fn kl_mean<T: Scalar>(tape: &mut GradTape<T>, p: NodeId, q: NodeId) -> Result<NodeId> {
    let eps = T::lit(EPS);
    let lp = tape.ln_clamp(p, eps);
    let lq = tape.ln_clamp(q, eps);
    let d = tape.sub(lp, lq)?;
    let e = tape.mul(p, d)?;
    Ok(batch_mean(tape, e))
}

/// Mean over rows of `-sum target_i * ln(pred_i)`.
pub fn cross_entropy_mean<T: Scalar>(tape: &mut GradTape<T>, target: NodeId, pred: NodeId) -> Result<NodeId> {
    let lp = tape.ln_clamp(pred, T::lit(EPS));
    let e = tape.mul(target, lp)?;
    let m = batch_mean(tape, e);
    Ok(tape.scale(m, -T::one()))
}

/// Mean over rows of `H(p_i)`.
pub fn entropy_mean<T: Scalar>(tape: &mut GradTape<T>, p: NodeId) -> Result<NodeId> {
    cross_entropy_mean(tape, p, p)
}

/// `H(mean_i p_i) - mean_i H(p_i)`.
pub fn mutual_information<T: Scalar>(tape: &mut GradTape<T>, p: NodeId) -> Result<NodeId> {
    let pbar = tape.mean_rows(p);
    let h_bar = entropy_mean(tape, pbar)?;
    let h_each = entropy_mean(tape, p)?;
    tape.sub(h_bar, h_each)
}

/// Row `i` is `lambda_i * a_i + (1 - lambda_i) * b_i`, using [`mix_weights`].
pub fn mix_rows<T: Scalar>(tape: &mut GradTape<T>, a: NodeId, b: NodeId, lambdas: &[T]) -> Result<NodeId> {
    let (wa, wb): (Vec<T>, Vec<T>) = lambdas.iter().map(|&l| mix_weights(l)).unzip();
    let sa = tape.row_scale(a, wa)?;
    let sb = tape.row_scale(b, wb)?;
    tape.add(sa, sb)
}
