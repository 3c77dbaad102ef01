//! Layers shared by the generator and the vocabulary predictor.

mod init;
mod lstm;
mod norm;

use crate::error::{check_width, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor, Var};

pub use init::{init_params, INIT_RANGE};
pub use lstm::{bilstm_encode, LstmCell, LstmState};
pub use norm::{BatchNorm, ResidualBlock, BN_EPS, BN_MOMENTUM};

/// `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize) -> Self {
        let w = store.add_kind(format!("{name}.w"), Tensor::zeros(&[output, input]), ParamKind::Weight);
        let b = store.add_kind(format!("{name}.b"), Tensor::zeros(&[output]), ParamKind::Bias);
        Self { w, b, input, output }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check_width("linear input", self.input, g.value(x).len())?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.affine(w, x, Some(b)))
    }

    /// Row-batched form over `x: [B, in]`.
    pub fn forward_rows<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check_width("linear input", self.input, g.value(x).cols())?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.affine_rows(x, w, b))
    }
}

/// Lookup table `[rows, width]`. Two embeddings built over the same
/// [`ParamId`] share one storage (weight tying).
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub width: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, rows: usize, width: usize) -> Self {
        let table = store.add_kind(name, Tensor::zeros(&[rows, width]), ParamKind::Weight);
        Self { table, rows, width }
    }

    /// View an existing `[rows, width]` parameter as an embedding table.
    pub fn tied<T: Scalar>(store: &ParamStore<T>, table: ParamId) -> Self {
        let shape = store.get(table).shape();
        Self {
            table,
            rows: shape[0],
            width: shape[1],
        }
    }

    pub fn lookup<T: Scalar>(&self, g: &mut Graph<'_, T>, id: usize) -> Result<Var> {
        if id >= self.rows {
            return Err(crate::Error::Invalid(format!(
                "token id {id} out of range for table of {} rows",
                self.rows
            )));
        }
        let t = g.param(self.table);
        Ok(g.row(t, id))
    }

    /// `[ids.len(), width]` matrix of rows.
    pub fn lookup_many<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var> {
        if let Some(bad) = ids.iter().find(|i| **i >= self.rows) {
            return Err(crate::Error::Invalid(format!(
                "token id {bad} out of range for table of {} rows",
                self.rows
            )));
        }
        let t = g.param(self.table);
        Ok(g.gather_rows(t, ids))
    }
}


/// Inverted dropout: in training graphs zeroes entries with probability
/// `rate` and rescales survivors by `1 / (1 - rate)`; identity otherwise.
pub fn dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, rate: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(crate::Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(g.dropout(x, rate))
}
