//! Browser bindings: cutoff profiles, radial density profiles and cluster
//! classes. Results come back as flat `Float64Array`/`Uint32Array` values.

use wasm_bindgen::prelude::*;

use rhoreg::cluster::{self, ClusterSelection, CutoffFamily};
use rhoreg::density::{self, MCSettings};
use rhoreg::wavefunction::{AnyModel, CorrelatedToy, HydrogenicProduct};
use rhoreg::MolecularSystem;

/// Upper limit so a slider typo cannot freeze the tab.
const MAX_SAMPLES: u32 = 2_000_000;

fn cutoff_rows(radius: f64, electrons: usize, points: usize) -> Result<Vec<f64>, String> {
    let family = CutoffFamily::new(radius, electrons).map_err(|e| e.to_string())?;
    let points = points.max(2);
    let t_max = 1.25 * family.outer();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let t = t_max * i as f64 / (points - 1) as f64;
        let (c1, c2) = family.chi(t);
        out.extend([t, c1, c2]);
    }
    Ok(out)
}

/// `[t, χ₁(t), χ₂(t)]` triples for `t ∈ [0, 1.25·R/(2N)]`.
#[wasm_bindgen]
pub fn cutoff_curve(radius: f64, electrons: u32, points: u32) -> Result<Vec<f64>, JsError> {
    cutoff_rows(radius, electrons as usize, points as usize).map_err(|e| JsError::new(&e))
}

#[allow(clippy::too_many_arguments)]
fn radial_rows(
    family: &str,
    a: f64,
    b: f64,
    electrons: usize,
    r_max: f64,
    points: usize,
    samples: u32,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(format!("maximum radius must be positive, got {r_max}"));
    }
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(format!("samples must lie in 1..={MAX_SAMPLES}"));
    }
    let model: AnyModel = match family {
        "hydrogenic" => HydrogenicProduct::new(electrons as f64, a, electrons).map(Into::into),
        "correlated" => CorrelatedToy::new(a, b, electrons).map(Into::into),
        other => return Err(format!("unknown model family {other:?}")),
    }
    .map_err(|e| e.to_string())?;
    let system = MolecularSystem::atom(electrons as f64, electrons).map_err(|e| e.to_string())?;
    let points = points.max(2);
    let radii: Vec<f64> = (0..points).map(|i| r_max * i as f64 / (points - 1) as f64).collect();
    let xs: Vec<_> = radii.iter().map(|&r| [0.0, 0.0, r]).collect();
    let est = density::estimate_rho_many(&model, &system, &xs, &MCSettings::new(samples as u64, seed))
        .map_err(|e| e.to_string())?;
    Ok(radii.iter().zip(&est).flat_map(|(&r, e)| [r, e.value, e.std_error]).collect())
}

/// `[r, ρ(r ẑ), std_error]` triples for `r ∈ [0, r_max]`, all points sharing
/// one set of Monte-Carlo draws. `b` is ignored for the hydrogenic family.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn radial_density(
    family: &str,
    a: f64,
    b: f64,
    electrons: u32,
    r_max: f64,
    points: u32,
    samples: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    radial_rows(family, a, b, electrons as usize, r_max, points as usize, samples, seed as u64)
        .map_err(|e| JsError::new(&e))
}

fn class_of(electrons: usize, pairs: &[u32]) -> Result<Vec<u32>, String> {
    if !pairs.len().is_multiple_of(2) {
        return Err("pairs must be given as a flat list of (j, k) entries".into());
    }
    let mut zero_based = Vec::with_capacity(pairs.len() / 2);
    for p in pairs.chunks(2) {
        let (j, k) = (p[0] as usize, p[1] as usize);
        if j == 0 || k == 0 || j > electrons || k > electrons || j == k {
            return Err(format!("({j}, {k}) is not a pair of distinct electrons in 1..={electrons}"));
        }
        zero_based.push((j.min(k) - 1, j.max(k) - 1));
    }
    let selection = ClusterSelection::from_pairs(electrons, &zero_based).map_err(|e| e.to_string())?;
    Ok(cluster::equivalence_class(&selection).p().into_iter().map(|j| j as u32 + 1).collect())
}

/// Electrons (1-based) linked to electron 1 through the selected pairs,
/// given as a flat list `[j₁, k₁, j₂, k₂, …]`.
#[wasm_bindgen]
pub fn cluster_of(electrons: u32, pairs: Vec<u32>) -> Result<Vec<u32>, JsError> {
    class_of(electrons as usize, &pairs).map_err(|e| JsError::new(&e))
}
