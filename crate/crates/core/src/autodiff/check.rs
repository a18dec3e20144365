//! Central finite differences for validating reverse-mode gradients.

use super::net::{NetGrads, NetParams, Parameters};
use crate::error::Result;

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every parameter of `params`.
pub fn finite_difference(params: &NetParams, h: f64, mut f: impl FnMut(&NetParams) -> Result<f64>) -> Result<NetGrads> {
    let mut out = NetGrads::zeros_like(params);
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    for (bi, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.blocks()[bi][i];
            probe.blocks_mut()[bi][i] = orig + h;
            let up = f(&probe)?;
            probe.blocks_mut()[bi][i] = orig - h;
            let down = f(&probe)?;
            probe.blocks_mut()[bi][i] = orig;
            out.blocks_mut()[bi][i] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries. The floor keeps
/// gradients that are zero up to rounding from dominating the ratio.
pub fn max_relative_error(analytic: &NetGrads, numeric: &NetGrads, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.blocks().into_iter().zip(numeric.blocks()) {
        for (x, y) in a.iter().zip(n) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(floor));
        }
    }
    worst
}
