//! Every tolerance and threshold used by the driver, in one place.

use bubbleimg::invert::InvertOptions;
use serde::Serialize;

/// Acceptance tolerances and runtime budgets of the validation suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub mu_rel: f64,
    pub mu_seconds: f64,
    pub minnaert_rel: f64,
    pub minnaert_peak_rel: f64,
    pub minnaert_seconds: f64,
    pub newtonian_rel: f64,
    pub newtonian_scaling_rel: f64,
    pub newtonian_seconds: f64,
    pub w_identity_rel: f64,
    pub w_trend: [f64; 2],
    pub asymptotic_ratio: [f64; 2],
    pub asymptotic_seconds: f64,
    pub layer_rel: f64,
    pub divergence_rel: f64,
    pub coupled_farfield_rel: f64,
    pub rho0_linf: f64,
    pub k0_l2: f64,
    pub inversion_seconds: f64,
    pub body_wave_rel: f64,
    pub background_swap_rel: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    mu_rel: 1e-3,
    mu_seconds: 5.0,
    minnaert_rel: 1e-10,
    minnaert_peak_rel: 0.02,
    minnaert_seconds: 30.0,
    newtonian_rel: 0.01,
    newtonian_scaling_rel: 1e-10,
    newtonian_seconds: 60.0,
    w_identity_rel: 1e-8,
    w_trend: [7.0, 9.0],
    asymptotic_ratio: [1.5, 3.0],
    asymptotic_seconds: 120.0,
    layer_rel: 0.01,
    divergence_rel: 1e-6,
    coupled_farfield_rel: 0.02,
    rho0_linf: 0.02,
    k0_l2: 0.05,
    inversion_seconds: 600.0,
    body_wave_rel: 0.005,
    background_swap_rel: 0.001,
};

/// Driver defaults: subcommand flags fall back to these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Defaults {
    pub invert: InvertOptions,
    /// Clusters reported by `spectrum`.
    pub spectrum_count: usize,
    pub tolerances: Tolerances,
}

pub fn defaults() -> Defaults {
    Defaults {
        invert: InvertOptions::default(),
        spectrum_count: 6,
        tolerances: TOLERANCES,
    }
}

/// `name = value` lines, flattened from the JSON encoding.
pub fn table() -> String {
    let v = serde_json::to_value(defaults()).expect("defaults serialise");
    let mut out = String::new();
    flatten("", &v, &mut out);
    out
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => out.push_str(&format!("{prefix} = {v}\n")),
    }
}
