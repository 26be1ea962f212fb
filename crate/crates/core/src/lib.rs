//! Learning in a two-player tag game with a hidden opponent type.
//!
//! The protagonist either keeps a Bayesian belief over the opponent's type
//! or learns a recurrent policy from raw observations. Opponents are trained
//! as an ensemble, refined by neuroevolution, distilled into per-type models
//! for the belief filter, and the ensemble composition itself is tuned by
//! simulated annealing.

pub mod belief;
pub mod distill;
pub mod ensemble;
pub mod env;
pub mod experiment;
pub mod learner;
pub mod meta;
pub mod nn;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
