use crate::error::{AdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Recurrent state carried between LSTM steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self { hidden: Tensor::zeros(&[batch, hidden]), cell: Tensor::zeros(&[batch, hidden]) }
    }

    pub fn batch(&self) -> usize {
        self.hidden.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden.cols()
    }

    /// Zero the rows flagged in `mask` (episode starts).
    pub fn reset_rows(&mut self, mask: &[bool]) {
        let h = self.hidden_size();
        for (r, &reset) in mask.iter().enumerate() {
            if reset {
                self.hidden.data_mut()[r * h..(r + 1) * h].fill(0.0);
                self.cell.data_mut()[r * h..(r + 1) * h].fill(0.0);
            }
        }
    }

    /// Rows `idx` gathered into a new state.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let h = self.hidden_size();
        let pick = |t: &Tensor| {
            let mut d = Vec::with_capacity(idx.len() * h);
            for &i in idx {
                d.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), h, d).expect("gather shape")
        };
        Self { hidden: pick(&self.hidden), cell: pick(&self.cell) }
    }
}

/// Tape handles of one LSTM layer's parameters.
///
/// Gate blocks are laid out `[input, forget, candidate, output]` along the
/// `4H` axis of `w_ih: [I,4H]`, `w_hh: [H,4H]` and `bias: [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step on the tape. Returns `(hidden, cell)`; the hidden output is
/// also the layer output.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var)> {
    let hidden = tape.value(h).cols();
    let gate_width = tape.value(w.w_hh).cols();
    if gate_width != 4 * hidden || tape.value(w.w_hh).rows() != hidden {
        return Err(AdError::ShapeMismatch {
            op: "lstm_cell",
            lhs: tape.value(h).shape().to_vec(),
            rhs: tape.value(w.w_hh).shape().to_vec(),
        });
    }
    if tape.value(c).shape() != tape.value(h).shape() {
        return Err(AdError::ShapeMismatch {
            op: "lstm_cell",
            lhs: tape.value(h).shape().to_vec(),
            rhs: tape.value(c).shape().to_vec(),
        });
    }
    let xi = tape.matmul(x, w.w_ih)?;
    let hh = tape.matmul(h, w.w_hh)?;
    let pre = tape.add(xi, hh)?;
    let pre = tape.add_bias(pre, w.bias)?;

    let i = tape.slice_cols(pre, 0, hidden)?;
    let f = tape.slice_cols(pre, hidden, hidden)?;
    let g = tape.slice_cols(pre, 2 * hidden, hidden)?;
    let o = tape.slice_cols(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new)?;
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Value-level convenience: runs one step on a scratch tape and returns the
/// output and the new state; `state` is left untouched.
pub fn lstm_step(
    input: &Tensor,
    state: &LstmState,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LstmState)> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let h = tape.constant(state.hidden.clone());
    let c = tape.constant(state.cell.clone());
    let w = LstmVars {
        w_ih: tape.constant(w_ih.clone()),
        w_hh: tape.constant(w_hh.clone()),
        bias: tape.constant(bias.clone()),
    };
    let (h2, c2) = lstm_cell(&mut tape, x, h, c, w)?;
    let hidden = tape.value(h2).clone();
    let cell = tape.value(c2).clone();
    Ok((hidden.clone(), LstmState { hidden, cell }))
}
