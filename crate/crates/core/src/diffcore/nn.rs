//! Small composite layers built from tape primitives.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Weights of one LSTM cell. Gate blocks are ordered input, forget,
/// candidate, output along the `4 * hidden` axis.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step over a batch of rows.
///
/// `x: [n, d_in]`, `h, c: [n, hidden]`; returns `(h', c')`.
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, p: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[1];
    if tape.shape(p.w_hh) != [hidden, 4 * hidden] || tape.shape(c) != tape.shape(h) {
        return Err(Error::shape(format!(
            "lstm_step hidden {:?}/{:?} with w_hh {:?}",
            tape.shape(h),
            tape.shape(c),
            tape.shape(p.w_hh)
        )));
    }
    let xi = tape.matmul(x, p.w_ih)?;
    let hh = tape.matmul(h, p.w_hh)?;
    let pre = tape.add(xi, hh)?;
    let gates = tape.add_row(pre, p.bias)?;

    let i = tape.narrow(gates, 1, 0, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.narrow(gates, 1, hidden, hidden)?;
    let f = tape.sigmoid(f);
    let g = tape.narrow(gates, 1, 2 * hidden, hidden)?;
    let g = tape.tanh(g);
    let o = tape.narrow(gates, 1, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
