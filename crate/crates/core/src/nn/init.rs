use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::{ParamKind, ParamStore};

/// Half-width of the uniform initialization range for weights and embeddings.
pub const INIT_RANGE: f64 = 0.1;

/// Weights and embeddings uniform in `[-0.1, 0.1]`, biases zero, LSTM forget
/// gate biases one, normalization gains one. Deterministic in `seed`.
pub fn init_params<T: Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let kind = store.kind(id);
        let data = store.get_mut(id).data_mut();
        match kind {
            ParamKind::Weight => {
                for v in data.iter_mut() {
                    *v = T::lit(rng.gen_range(-INIT_RANGE..=INIT_RANGE));
                }
            }
            ParamKind::Bias => data.fill(T::zero()),
            ParamKind::Gain => data.fill(T::one()),
            ParamKind::LstmBias { hidden } => {
                data.fill(T::zero());
                data[hidden..2 * hidden].fill(T::one());
            }
        }
    }
}
