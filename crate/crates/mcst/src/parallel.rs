//! Data-parallel helpers with order-preserving results.

use mcst_core::model::{backward, Example, LossAndGrads, SeqModel};
use mcst_core::train::BatchGradients;
use rayon::prelude::*;

/// Per-example gradients computed on the rayon pool. Results come back in
/// batch order, so the trainer's summation order is unchanged.
pub struct ParallelGradients;

impl BatchGradients for ParallelGradients {
    fn batch(&self, model: &SeqModel, batch: &[&Example]) -> mcst_core::Result<Vec<LossAndGrads>> {
        batch.par_iter().map(|ex| backward(model, ex)).collect()
    }
}
