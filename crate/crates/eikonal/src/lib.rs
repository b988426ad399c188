//! Exact parametric solutions of the coupled eikonal system
//!
//! ```text
//! u_mu u_mu = 0,   v_mu v_mu = 0,   u_mu v_mu = 1
//! ```
//!
//! in Minkowski space with signature (+,-,-,-), built from user-supplied
//! generating functions. The 3+1D family is parametrized by a point
//! (z1, z2) in the open unit disk; the 2+1D family by a scalar z in (-1,1).
//! Solution branches at a spacetime point are found by solving the envelope
//! constraints numerically, and every branch is checked against the system
//! residuals with finite-difference gradients.
//!
//! Because the published closure formulas come in mutually inconsistent
//! displays, the [`verify`] module audits all formula variants against the
//! residuals and reports which combination (if any) actually solves the
//! system for a given family.

pub mod expr;
pub mod numkernel;
pub mod family3d;
pub mod family2d;
pub mod verify;
pub mod cli;

/// Map items to results, in parallel when the `parallel` feature is enabled.
/// Output order always matches input order.
pub(crate) fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Sequential counterpart of [`par_map`], available regardless of features
/// (used by benchmarks to compare against the parallel path).
pub fn seq_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
