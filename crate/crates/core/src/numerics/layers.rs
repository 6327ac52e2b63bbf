//! Composite primitives built from graph operations.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};

/// One LSTM step with gate order (input, forget, cell, output).
///
/// `x_proj` is the precomputed 1×4H input projection x·W_ih + b; `h` and `c`
/// are the 1×H previous hidden and cell states.
pub fn lstm_step(g: &mut Graph, x_proj: Var, h: Var, c: Var, w_hh: Var) -> Result<(Var, Var)> {
    let hidden = g.value(h).cols();
    let rec = g.matmul(h, w_hh)?;
    let gates = g.add(x_proj, rec)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, hidden)?;
    let cand = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Full LSTM cell: x (1×E), weights W_ih (E×4H), W_hh (H×4H), bias (4H).
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let xp = g.linear(x, w_ih, Some(b))?;
    lstm_step(g, xp, h, c, w_hh)
}

/// Gated linear unit over the last axis: a ⊙ sigmoid(b) for x = [a | b].
pub fn glu(g: &mut Graph, x: Var) -> Result<Var> {
    let half = g.value(x).cols() / 2;
    let a = g.slice_cols(x, 0, half)?;
    let b = g.slice_cols(x, half, half)?;
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}
