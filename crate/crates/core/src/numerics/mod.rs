//! Dense matrices, small MLPs with reverse-mode gradients, and the
//! optimizers used to fit the autoencoder and the flow.

pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;

use rand::seq::SliceRandom;
use rand::Rng;

pub use gradcheck::{grad_check, grad_check_flat, GradCheckReport};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use mlp::{
    init_params, init_params_with_rng, mlp_backward, mlp_forward, Activation, Dense, Gradients,
    InitScheme, LayerGrad, MlpCache, MlpParams,
};
pub use optim::{adam_step, plateau_step, AdamState, PlateauScheduler};

/// Training sets up to this size are fitted full-batch.
pub const FULL_BATCH_LIMIT: usize = 4096;
pub const MINI_BATCH_SIZE: usize = 256;

/// Row-index batches for one epoch: a single batch in input order when
/// `n <= FULL_BATCH_LIMIT`, otherwise shuffled chunks of `MINI_BATCH_SIZE`.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= FULL_BATCH_LIMIT {
        return vec![idx];
    }
    idx.shuffle(rng);
    idx.chunks(MINI_BATCH_SIZE).map(<[usize]>::to_vec).collect()
}

/// Shuffled chunks of `size` rows regardless of `n`.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_sets_are_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(1000, &mut rng);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn large_sets_are_partitioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(5000, &mut rng);
        assert_eq!(b.len(), 5000usize.div_ceil(MINI_BATCH_SIZE));
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..5000).collect::<Vec<_>>());
    }
}
