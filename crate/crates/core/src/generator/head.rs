use crate::predictor::VocabMask;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, Var};

/// Output rows gathered for one mask: row `i` of `w` is row `ids[i]` of the
/// full output matrix, so gradients land on exactly those rows.
#[derive(Debug, Clone)]
pub struct ReducedHead {
    pub mask: VocabMask,
    pub w: Var,
    pub b: Var,
}

/// Output layer of a decoder step, bound to one graph.
#[derive(Debug, Clone)]
pub enum OutputHead {
    Full { w: Var, b: Var, vocab: usize },
    Reduced(ReducedHead),
}

impl OutputHead {
    pub fn full<T: Scalar>(g: &mut Graph<'_, T>, w: ParamId, b: ParamId) -> Self {
        let vocab = g.params().get(w).rows();
        let (w, b) = (g.param(w), g.param(b));
        OutputHead::Full { w, b, vocab }
    }

    pub fn reduced<T: Scalar>(g: &mut Graph<'_, T>, w: ParamId, b: ParamId, mask: &VocabMask) -> Self {
        let (wf, bf) = (g.param(w), g.param(b));
        let w = g.gather_rows(wf, mask.ids());
        let b = g.gather_rows(bf, mask.ids());
        OutputHead::Reduced(ReducedHead { mask: mask.clone(), w, b })
    }

    /// Number of output classes.
    pub fn len(&self) -> usize {
        match self {
            OutputHead::Full { vocab, .. } => *vocab,
            OutputHead::Reduced(h) => h.mask.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_reduced(&self) -> bool {
        matches!(self, OutputHead::Reduced(_))
    }

    pub fn global(&self, local: usize) -> usize {
        match self {
            OutputHead::Full { .. } => local,
            OutputHead::Reduced(h) => h.mask.global(local),
        }
    }

    pub fn local(&self, global: usize) -> Option<usize> {
        match self {
            OutputHead::Full { vocab, .. } => (global < *vocab).then_some(global),
            OutputHead::Reduced(h) => h.mask.local(global),
        }
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<'_, T>, s: Var) -> Var {
        let (w, b) = match self {
            OutputHead::Full { w, b, .. } => (*w, *b),
            OutputHead::Reduced(h) => (h.w, h.b),
        };
        g.affine(w, s, Some(b))
    }

    /// Softmax distribution over the head's classes.
    pub fn distribution<T: Scalar>(&self, g: &mut Graph<'_, T>, s: Var) -> Var {
        let l = self.logits(g, s);
        g.softmax(l)
    }

    pub fn log_distribution<T: Scalar>(&self, g: &mut Graph<'_, T>, s: Var) -> Var {
        let l = self.logits(g, s);
        g.log_softmax(l)
    }
}
