//! Small composite building blocks on top of the tape.

use crate::error::{AutodiffError, Result};
use crate::params::{GradBuffer, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Weights of one single-layer LSTM: `w` is `[4n, m + n]`, `b` is `[4n]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

/// Runs an LSTM over `tokens` from a zero state and returns the hidden
/// state at every position.
pub fn seq_encode<T: Real>(tape: &mut Tape<T>, tokens: &[Var], lstm: LstmWeights) -> Result<Vec<Var>> {
    if tokens.is_empty() {
        return Err(AutodiffError::Contract("seq_encode over an empty sequence".into()));
    }
    let n = lstm.hidden;
    let mut state = tape.zeros(2 * n)?;
    let mut rows = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        state = tape.lstm_cell(tok, state, lstm.w, lstm.b)?;
        rows.push(tape.slice(state, 0, n)?);
    }
    Ok(rows)
}

/// `relu(w · x + b)`.
pub fn ffn<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.linear(x, w, Some(b))?;
    Ok(tape.relu(z))
}

impl<T: Real> Tape<T> {
    /// Adds every parameter-bound gradient on this tape into `buf`.
    pub fn harvest(&self, buf: &mut GradBuffer<T>) {
        for (id, offset, g) in self.param_grads() {
            buf.accumulate(id, offset, g);
        }
    }

    /// Adds every parameter-bound gradient on this tape into the store.
    pub fn harvest_into_store(&self, store: &mut ParamStore<T>) {
        for (id, offset, g) in self.param_grads() {
            store.accumulate(id, offset, g);
        }
    }
}
