//! Browser bindings: each export returns a JSON string for the page to render.

use realitylab::experiments::{
    direction_xz, run_epr, run_ideal, singlet_correlation, EprConfig, Extension,
};
use realitylab::linalg::DEFAULT_TOL;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest support the page may request; keeps the tab responsive.
pub const MAX_SPECIMENS: usize = 200_000;

fn parse_extension(s: &str) -> Result<Extension, String> {
    match s {
        "strict" => Ok(Extension::Strict),
        "wide" => Ok(Extension::Wide),
        other => Err(format!("unknown extension '{other}'")),
    }
}

fn check_n(n: usize) -> Result<(), String> {
    if n == 0 || n > MAX_SPECIMENS {
        return Err(format!("n must be in 1..={MAX_SPECIMENS}"));
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn epr_json(
    n: usize,
    seed: u64,
    extension: &str,
    policy: &str,
    theta_a: f64,
    theta_b: f64,
) -> Result<String, String> {
    check_n(n)?;
    let cfg = EprConfig {
        n,
        seed,
        extension: parse_extension(extension)?,
        policy: policy.to_string(),
        theta_a,
        theta_b,
        tol: DEFAULT_TOL,
    };
    let (report, _) = run_epr(&cfg).map_err(|e| e.to_string())?;
    to_json(&report)
}

pub fn ideal_json(n: usize, seed: u64, extension: &str) -> Result<String, String> {
    check_n(n)?;
    let (report, _) =
        run_ideal(n, seed, parse_extension(extension)?, DEFAULT_TOL).map_err(|e| e.to_string())?;
    to_json(&report)
}

#[derive(Serialize)]
struct CurvePoint {
    theta: f64,
    correlation: f64,
}

/// `⟨σ_a ⊗ σ_b⟩` on the singlet for `n_b` swept over `[0, 2π]` at `points` angles.
pub fn singlet_curve_json(theta_a: f64, points: usize) -> Result<String, String> {
    if !(2..=1000).contains(&points) {
        return Err("points must be in 2..=1000".into());
    }
    let curve = (0..points)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / (points - 1) as f64;
            singlet_correlation(direction_xz(theta_a), direction_xz(theta))
                .map(|correlation| CurvePoint { theta, correlation })
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    to_json(&curve)
}

#[wasm_bindgen]
pub fn epr(
    n: u32,
    seed: u32,
    extension: &str,
    policy: &str,
    theta_a: f64,
    theta_b: f64,
) -> Result<String, JsError> {
    epr_json(n as usize, seed as u64, extension, policy, theta_a, theta_b)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ideal(n: u32, seed: u32, extension: &str) -> Result<String, JsError> {
    ideal_json(n as usize, seed as u64, extension).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn singlet_curve(theta_a: f64, points: u32) -> Result<String, JsError> {
    singlet_curve_json(theta_a, points as usize).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn epr_strict_verdict() {
        let v: Value = serde_json::from_str(
            &epr_json(500, 42, "strict", "A,Q:0.5;P,B:0.5", 0.0, 1.2).unwrap(),
        )
        .unwrap();
        assert_eq!(v["simultaneous_set_size"], 0);
        assert_eq!(v["extension"], "strict");
    }

    #[test]
    fn ideal_matches_table() {
        let v: Value = serde_json::from_str(&ideal_json(500, 1, "wide").unwrap()).unwrap();
        assert_eq!(v["table_conformance"], true);
        assert_eq!(v["table"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn curve_endpoints() {
        let v: Value = serde_json::from_str(&singlet_curve_json(0.0, 5).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 5);
        assert!((pts[0]["correlation"].as_f64().unwrap() + 1.0).abs() < 1e-12);
        assert!((pts[2]["correlation"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(epr_json(0, 1, "strict", "A,Q:1", 0.0, 1.0).is_err());
        assert!(epr_json(10, 1, "loose", "A,Q:1", 0.0, 1.0).is_err());
        assert!(epr_json(10, 1, "strict", "A,B:1", 0.0, 1.0).is_err());
        assert!(ideal_json(MAX_SPECIMENS + 1, 1, "strict").is_err());
        assert!(singlet_curve_json(0.0, 1).is_err());
    }
}
