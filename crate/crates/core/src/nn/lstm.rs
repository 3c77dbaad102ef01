use crate::error::{check_width, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor, Var};

/// LSTM cell with gates stacked as `[input, forget, output, candidate]`
/// over the concatenation `[x; h]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize) -> Self {
        let w = store.add_kind(
            format!("{name}.w"),
            Tensor::zeros(&[4 * hidden, input + hidden]),
            ParamKind::Weight,
        );
        let b = store.add_kind(
            format!("{name}.b"),
            Tensor::zeros(&[4 * hidden]),
            ParamKind::LstmBias { hidden },
        );
        Self { w, b, input, hidden }
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<'_, T>) -> LstmState {
        let h = g.constant(Tensor::zeros(&[self.hidden]));
        let c = g.constant(Tensor::zeros(&[self.hidden]));
        LstmState { h, c }
    }

    /// One recurrence step.
    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, prev: LstmState) -> Result<LstmState> {
        check_width("lstm input", self.input, g.value(x).len())?;
        check_width("lstm hidden", self.hidden, g.value(prev.h).len())?;
        check_width("lstm cell", self.hidden, g.value(prev.c).len())?;
        let d = self.hidden;
        let xh = g.concat(&[x, prev.h]);
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.affine(w, xh, Some(b));
        let zi = g.slice(z, 0, d);
        let zf = g.slice(z, d, d);
        let zo = g.slice(z, 2 * d, d);
        let zu = g.slice(z, 3 * d, d);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let u = g.tanh(zu);
        let keep = g.mul(f, prev.c);
        let write = g.mul(i, u);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        Ok(LstmState { h, c })
    }
}

/// Runs a forward and a backward cell over `inputs`; state `i` is
/// `[forward_i; backward_i]` (width `2d`) and the decoder seed is
/// `forward_last + backward_first`.
pub fn bilstm_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    fwd: &LstmCell,
    bwd: &LstmCell,
    inputs: &[Var],
) -> Result<(Vec<Var>, Var)> {
    if inputs.is_empty() {
        return Err(Error::Empty("source sequence"));
    }
    check_width("bilstm hidden", fwd.hidden, bwd.hidden)?;
    let m = inputs.len();
    let mut forward = Vec::with_capacity(m);
    let mut state = fwd.zero_state(g);
    for x in inputs {
        state = fwd.step(g, *x, state)?;
        forward.push(state.h);
    }
    let mut backward = vec![forward[0]; m];
    let mut state = bwd.zero_state(g);
    for i in (0..m).rev() {
        state = bwd.step(g, inputs[i], state)?;
        backward[i] = state.h;
    }
    let states = (0..m).map(|i| g.concat(&[forward[i], backward[i]])).collect();
    let h0 = g.add(forward[m - 1], backward[0]);
    Ok((states, h0))
}
