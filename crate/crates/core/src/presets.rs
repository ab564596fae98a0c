//! Built-in emitter presets.
//!
//! The rates are an inversion of observables, not measured microscopic
//! constants: saturated excitation (`k_exc = k_fl`), 0.1% triplet branching,
//! a detection efficiency giving ~150 kcounts/s at the central triplet
//! lifetime, and a bleach hazard putting the median photon count without
//! feedback near 1e5.

use crate::ensemble::LifetimeDistribution;
use crate::photophysics::PhotophysicsParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub params: PhotophysicsParams,
    pub lifetime: LifetimeDistribution,
}

const DII_TAU_T: f64 = 240e-6;
const TERRYLENE_TAU_T: f64 = 217e-6;
const LOG_SIGMA: f64 = 0.8;

fn params(tau_t: f64) -> PhotophysicsParams {
    PhotophysicsParams {
        k_exc: 1e8,
        k_fl: 1e8,
        k_isc: 1e5,
        tau_t,
        eta: 0.039,
        k_bleach: 1.0,
        dark_rate: 0.0,
    }
}

pub fn dii() -> Preset {
    Preset {
        name: "dii",
        params: params(DII_TAU_T),
        lifetime: LifetimeDistribution::lognormal_median(DII_TAU_T, LOG_SIGMA),
    }
}

pub fn terrylene() -> Preset {
    Preset {
        name: "terrylene",
        params: params(TERRYLENE_TAU_T),
        lifetime: LifetimeDistribution::lognormal_median(TERRYLENE_TAU_T, LOG_SIGMA),
    }
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "dii" => Some(dii()),
        "terrylene" => Some(terrylene()),
        _ => None,
    }
}

pub const NAMES: [&str; 2] = ["dii", "terrylene"];
