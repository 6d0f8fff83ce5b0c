//! Telemetry to regression data: imputation, discretization, expansion.

mod discretize;
mod expand;
mod impute;
mod telemetry;

pub use discretize::{discretize, MIN_SOJOURN};
pub use expand::{expand, stack, ExpandedData, ExpandedRow};
pub use impute::{
    default_time_step, fit_bridge_sigma, imputation_rng, impute_paths, impute_with, BrownianBridge, PathImputer,
};
pub use telemetry::{ContinuousPath, Fix, Telemetry};

use rayon::prelude::*;

use crate::covariates::DesignContext;
use crate::error::Result;

/// Discretizes and expands one imputed path. Off-grid splits are expanded
/// separately and concatenated.
pub fn expand_continuous(path: &ContinuousPath, ctx: &DesignContext, censor_final: bool) -> Result<ExpandedData> {
    let mut out = ExpandedData::empty(ctx.labels().to_vec());
    for piece in discretize(path, ctx.grid())? {
        out.append(&expand(&piece, ctx, censor_final, 0)?)?;
    }
    Ok(out)
}

/// Discretizes and expands every imputation, tags rows with the imputation
/// index as `path_id`, and stacks them with weight `1/P`.
pub fn expand_and_stack(paths: &[ContinuousPath], ctx: &DesignContext, censor_final: bool) -> Result<ExpandedData> {
    let parts: Vec<ExpandedData> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = expand_continuous(p, ctx, censor_final)?;
            e.set_path_id(i as u32);
            Ok(e)
        })
        .collect::<Result<_>>()?;
    stack(&parts)
}
