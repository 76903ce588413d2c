use anyhow::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use rhoreg::cluster::{self, ClusterSelection};
use rhoreg::density::{self, DecaySettings, DensityEstimate, MultiIndex, ProbeSettings};
use rhoreg::mc::stream_rng;
use rhoreg::regularization::RegularizingFactors;
use rhoreg::transform::ClusterFrame;
use rhoreg::{geom, Configuration, Error, Vec3};

use crate::config::Resolved;
use crate::Command;

/// Results of one subcommand before they are wrapped into a report.
pub struct Outcome {
    pub results: Value,
    pub pass: bool,
    /// Radial profile rows, for `density profile`.
    pub profile: Vec<ProfileRow>,
}

impl Outcome {
    fn new(results: Value, pass: bool) -> Self {
        Self {
            results,
            pass,
            profile: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProfileRow {
    pub radius: f64,
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn one_based(electrons: &[usize]) -> Vec<usize> {
    electrons.iter().map(|j| j + 1).collect()
}

fn pairs_one_based(pairs: &[(usize, usize)]) -> Vec<[usize; 2]> {
    pairs.iter().map(|&(j, k)| [j + 1, k + 1]).collect()
}

fn positions(config: &Configuration) -> Value {
    to_value(&config.positions())
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> Vec3 {
    [0; 3].map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0))
}

/// Library errors that carry a witness become failed reports; the rest are
/// configuration problems.
fn violation(err: Error) -> Result<Outcome> {
    match err {
        Error::SignalBelowNoise { radius, value, std_error } => Ok(Outcome::new(
            json!({
                "error": err.to_string(),
                "witness": {"radius": radius, "value": value, "std_error": std_error},
            }),
            false,
        )),
        Error::CertificateViolated { ref config, value, bound } => Ok(Outcome::new(
            json!({
                "error": err.to_string(),
                "witness": {"config": positions(config), "value": value, "bound": bound},
            }),
            false,
        )),
        other => Err(other.into()),
    }
}

pub fn run(command: Command, r: &Resolved) -> Result<Outcome> {
    let outcome = match command {
        Command::VerifyAnsatz => verify_ansatz(r),
        Command::VerifyPou => verify_pou(r),
        Command::VerifyCluster => verify_cluster(r),
        Command::VerifyTransform => verify_transform(r),
        Command::VerifySupports => verify_supports(r),
        Command::DensityEval => density_eval(r),
        Command::DensityProfile => density_profile(r),
        Command::DensityDerivatives => density_derivatives(r),
        Command::DensityDecay => density_decay(r),
    };
    outcome.or_else(|e| match e.downcast::<Error>() {
        Ok(lib) => violation(lib),
        Err(e) => Err(e),
    })
}

fn verify_ansatz(r: &Resolved) -> Result<Outcome> {
    let sys = &r.system;
    let f = RegularizingFactors::new(sys);
    let n = sys.electron_count();
    let mut rng = stream_rng(r.mc.seed, 0);
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    let mut worst_config = None;
    let mut violations = 0u64;
    let mut first_violation = None;
    let mut rejected = 0u64;
    let mut tested = 0u64;
    while tested < r.config.task.configs {
        // Electrons scattered around the nuclei in turn.
        let x = Configuration::new(
            (0..n)
                .map(|j| geom::add(sys.nuclei()[j % sys.nuclei().len()].position, uniform(&mut rng, 2.0)))
                .collect(),
        );
        if sys.coalescence_distance(&x) < 1e-6 {
            rejected += 1;
            continue;
        }
        tested += 1;
        let v = sys.potential(&x)?;
        let err = f.verify_ansatz(&x)?.abs();
        let rel = err / (1.0 + v.abs());
        worst_abs = worst_abs.max(err);
        if rel > worst_rel {
            worst_rel = rel;
            worst_config = Some(x.clone());
        }
        if rel > 1e-10 {
            violations += 1;
            if first_violation.is_none() {
                first_violation = Some(json!({"config": positions(&x), "abs_error": err, "potential": v}));
            }
        }
    }
    let mut results = json!({
        "configs_tested": tested,
        "coalescent_rejected": rejected,
        "max_abs_error": worst_abs,
        "max_rel_error": worst_rel,
        "tolerance": "|ΔF - V| <= 1e-10 (1 + |V|)",
        "violations": violations,
        "worst_config": worst_config.as_ref().map(positions),
    });
    if let Some(w) = first_violation {
        results["witness"] = w;
    }
    Ok(Outcome::new(results, violations == 0))
}

fn verify_pou(r: &Resolved) -> Result<Outcome> {
    let n = r.system.electron_count();
    let family = &r.family;
    let selections: Vec<_> = cluster::all_selections(n)?.collect();
    let mut rng = stream_rng(r.mc.seed, 0);
    let mut worst = 0.0f64;
    let mut out_of_range = 0u64;
    let mut transitional = 0u64;
    let mut violations = 0u64;
    let mut witness = None;
    // Boxes comparable to the cutoff scale put pair distances in the
    // transition region of χ₁.
    let half = 0.75 * family.outer();
    for _ in 0..r.config.task.configs {
        let x = Configuration::new((0..n).map(|_| uniform(&mut rng, half)).collect());
        let values: Vec<f64> = selections.iter().map(|s| cluster::phi(s, family, &x)).collect();
        let bad_range = values.iter().filter(|v| !(0.0..=1.0).contains(*v)).count() as u64;
        out_of_range += bad_range;
        if values.iter().filter(|&&v| v > 0.0).count() > 1 {
            transitional += 1;
        }
        let defect = (values.iter().sum::<f64>() - 1.0).abs();
        worst = worst.max(defect);
        if defect > 1e-12 || bad_range > 0 {
            violations += 1;
            if witness.is_none() {
                witness = Some(json!({"config": positions(&x), "sum_defect": defect}));
            }
        }
    }
    let mut results = json!({
        "configs_tested": r.config.task.configs,
        "selections": selections.len(),
        "max_sum_defect": worst,
        "phi_out_of_range": out_of_range,
        "configs_with_several_active": transitional,
        "tolerance": 1e-12,
        "violations": violations,
    });
    if let Some(w) = witness {
        results["witness"] = w;
    }
    Ok(Outcome::new(results, violations == 0))
}

/// Warshall closure of the pair graph, seen from electron 0.
fn closure_oracle(n: usize, selection: &ClusterSelection) -> Vec<usize> {
    let mut reach = vec![vec![false; n]; n];
    for (j, row) in reach.iter_mut().enumerate() {
        row[j] = true;
    }
    for (j, k) in selection.included() {
        reach[j][k] = true;
        reach[k][j] = true;
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][m] && reach[m][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).filter(|&j| reach[0][j]).collect()
}

fn verify_cluster(r: &Resolved) -> Result<Outcome> {
    let n = r.system.electron_count();
    let mut total = 0u64;
    let mut matches = 0u64;
    let mut long_paths = 0u64;
    let mut witness = None;
    for s in cluster::all_selections(n)? {
        total += 1;
        let p = cluster::equivalence_class(&s).p();
        let oracle = closure_oracle(n, &s);
        if p == oracle {
            matches += 1;
        } else if witness.is_none() {
            witness = Some(json!({
                "selection": pairs_one_based(&s.included()),
                "P": one_based(&p),
                "closure": one_based(&oracle),
            }));
        }
        for &j in &p {
            let path = cluster::connecting_path(&s, j);
            if path.is_none_or(|path| path.len() > n.max(1)) {
                long_paths += 1;
            }
        }
    }
    let mut results = json!({
        "electrons": n,
        "selections": total,
        "matches": matches,
        "mismatches": total - matches,
        "path_bound_violations": long_paths,
    });
    if let Some(w) = witness {
        results["witness"] = w;
    }
    Ok(Outcome::new(results, matches == total && long_paths == 0))
}

fn verify_transform(r: &Resolved) -> Result<Outcome> {
    let n = r.system.electron_count();
    if n > 16 {
        anyhow::bail!("verify transform enumerates every cluster, which needs at most 16 electrons (got {n})");
    }
    let mut rng = stream_rng(r.mc.seed, 0);
    let per_frame = r.config.task.configs.div_ceil((1u64 << n) - 1).max(1);
    let mut worst = [0.0f64; 3];
    let mut witness = None;
    for mask in 1u32..(1 << n) {
        let p: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let frame = ClusterFrame::build(n, &p)?;
        let defect = frame.orthogonality_defect();
        let mut frame_worst = [defect, 0.0, 0.0];
        let mut sample = None;
        for _ in 0..per_frame {
            let x = Configuration::new((0..n).map(|_| uniform(&mut rng, 3.0)).collect());
            let (x_p, x_prime) = frame.forward(&x);
            let back = frame.inverse(x_p, &x_prime);
            let err = x.flat().iter().zip(back.flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            // Moving x_P must leave separations within P and within Q fixed.
            let shifted = frame.inverse(geom::add(x_p, uniform(&mut rng, 3.0)), &x_prime);
            let q: Vec<usize> = (0..n).filter(|j| !p.contains(j)).collect();
            let mut drift = 0.0f64;
            for group in [&p, &q] {
                for &j in group {
                    for &k in group {
                        let d0 = geom::sub(back.position(j), back.position(k));
                        let d1 = geom::sub(shifted.position(j), shifted.position(k));
                        drift = drift.max(geom::norm(geom::sub(d0, d1)));
                    }
                }
            }
            if err > frame_worst[1] || drift > frame_worst[2] {
                sample = Some(x.clone());
            }
            frame_worst[1] = frame_worst[1].max(err);
            frame_worst[2] = frame_worst[2].max(drift);
        }
        if frame_worst.iter().any(|&w| w >= 1e-12) && witness.is_none() {
            witness = Some(json!({
                "P": one_based(&p),
                "orthogonality_defect": frame_worst[0],
                "round_trip_error": frame_worst[1],
                "separation_drift": frame_worst[2],
                "config": sample.as_ref().map(positions),
            }));
        }
        for i in 0..3 {
            worst[i] = worst[i].max(frame_worst[i]);
        }
    }
    let pass = witness.is_none();
    let mut results = json!({
        "frames": (1u64 << n) - 1,
        "configs_per_frame": per_frame,
        "max_orthogonality_defect": worst[0],
        "max_round_trip_error": worst[1],
        "max_separation_drift": worst[2],
        "tolerance": 1e-12,
    });
    if let Some(w) = witness {
        results["witness"] = w;
    }
    Ok(Outcome::new(results, pass))
}

fn verify_supports(r: &Resolved) -> Result<Outcome> {
    let n = r.system.electron_count();
    let selections: Vec<ClusterSelection> = match &r.selection {
        Some(s) => vec![s.clone()],
        None => cluster::all_selections(n)?.collect(),
    };
    let mut reports = Vec::new();
    let mut witness = None;
    let mut pass = true;
    for (i, s) in selections.iter().enumerate() {
        let cert = cluster::support_certificate(s, &r.family, &r.system, r.config.task.support_samples, r.mc.seed.wrapping_add(i as u64))?;
        pass &= cert.passed();
        let entry = json!({
            "selection": pairs_one_based(&cert.selection),
            "P": one_based(&cert.cluster),
            "samples_tested": cert.samples_tested,
            "proposals": cert.proposals,
            "violations": cert.violations,
            "min_margins": to_value(&cert.min_margins),
        });
        if let (Some(x), None) = (&cert.first_violation, &witness) {
            witness = Some(json!({
                "selection": pairs_one_based(&cert.selection),
                "config": positions(x),
            }));
        }
        reports.push(entry);
    }
    let mut results = json!({
        "bounds": {
            "nucleus": "|x_j - R_l| > R/4 for j in P",
            "pair": "|x_j - x_k| > R/(4N) for j in P, k in Q",
        },
        "certificates": reports,
    });
    if let Some(w) = witness {
        results["witness"] = w;
    }
    Ok(Outcome::new(results, pass))
}

fn estimate_json(e: &DensityEstimate) -> Value {
    to_value(e)
}

fn nonnegative(e: &DensityEstimate) -> bool {
    e.value >= 0.0 && e.value.is_finite() && e.std_error.is_finite()
}

/// `‖ψ‖²` if requested.
fn normalization(r: &Resolved) -> Result<Option<DensityEstimate>> {
    if !r.config.task.normalize {
        return Ok(None);
    }
    Ok(Some(density::estimate_norm(&r.model, &r.system, &r.mc)?))
}

fn density_eval(r: &Resolved) -> Result<Outcome> {
    let x = r.config.task.point;
    let rho = density::estimate_rho(&r.model, &r.system, x, &r.mc)?;
    let mut pass = nonnegative(&rho);
    let mut results = json!({"point": x, "rho": estimate_json(&rho)});
    if r.system.electron_count() >= 2 {
        let n = density::estimate_n(&r.model, &r.system, x, &r.mc)?;
        pass &= nonnegative(&n);
        results["n"] = estimate_json(&n);
    }
    if let Some(s) = &r.selection {
        let p = cluster::equivalence_class(s).p();
        let rho_i = density::estimate_rho_clustered(&r.model, &r.system, x, s, &r.family, &r.mc)?;
        pass &= nonnegative(&rho_i);
        let mut entry = json!({
            "selection": pairs_one_based(&s.included()),
            "P": one_based(&p),
            "rho_I": estimate_json(&rho_i),
        });
        if matches!(r.gamma.order(), 1 | 2) {
            let d = density::estimate_rho_derivative(&r.model, &r.system, x, r.gamma, s, &r.family, &r.mc)?;
            entry["derivative"] = estimate_json(&d);
        }
        results["clustered"] = entry;
    }
    match r.gamma.order() {
        0 => {}
        1 | 2 => {
            let total = density::estimate_rho_derivative_total(&r.model, &r.system, x, &[r.gamma], &r.family, &r.mc)?;
            results["derivative"] = json!({
                "gamma": r.gamma.0,
                "method": "chain_rule",
                "estimate": estimate_json(&total.total[0]),
            });
        }
        _ => {
            let fd = density::estimate_rho_fd(&r.model, &r.system, x, r.gamma, r.config.task.fd_step, &r.mc)?;
            results["derivative"] = json!({
                "gamma": r.gamma.0,
                "method": "finite_difference",
                "step": r.config.task.fd_step,
                "estimate": estimate_json(&fd),
            });
        }
    }
    if let Some(norm) = normalization(r)? {
        results["normalization"] = json!({
            "label": "values divided by the Monte-Carlo estimate of ‖ψ‖²",
            "norm_squared": estimate_json(&norm),
            "rho_normalized": rho.value / norm.value,
        });
    }
    if !pass {
        results["witness"] = json!({"point": x});
    }
    Ok(Outcome::new(results, pass))
}

fn density_profile(r: &Resolved) -> Result<Outcome> {
    let t = &r.config.task;
    let points: Vec<Vec3> = t.radii.iter().map(|&radius| geom::scale(t.direction, radius)).collect();
    let estimates = density::estimate_rho_many(&r.model, &r.system, &points, &r.mc)?;
    let rows: Vec<ProfileRow> = t
        .radii
        .iter()
        .zip(&estimates)
        .map(|(&radius, e)| ProfileRow {
            radius,
            value: e.value,
            std_error: e.std_error,
            samples: e.samples,
            seed: e.seed,
        })
        .collect();
    let negative: Vec<f64> = rows.iter().zip(&estimates).filter(|(_, e)| !nonnegative(e)).map(|(row, _)| row.radius).collect();
    let mut results = json!({"direction": t.direction, "profile": to_value(&rows)});
    if let Some(norm) = normalization(r)? {
        results["normalization"] = json!({
            "label": "values divided by the Monte-Carlo estimate of ‖ψ‖²",
            "norm_squared": estimate_json(&norm),
            "values_normalized": rows.iter().map(|row| row.value / norm.value).collect::<Vec<_>>(),
        });
    }
    let pass = negative.is_empty();
    if !pass {
        results["witness"] = json!({"radii": negative});
    }
    Ok(Outcome {
        results,
        pass,
        profile: rows,
    })
}

fn density_derivatives(r: &Resolved) -> Result<Outcome> {
    let t = &r.config.task;
    let settings = ProbeSettings {
        max_order: t.max_order,
        step: t.step,
        cusp_step: t.cusp_step,
        cusp_tolerance: t.cusp_tolerance,
    };
    let table = density::smoothness_probe(&r.model, &r.system, t.point, &settings, &r.mc)?;
    // The widest stencil reaches 1.5 h from the point.
    let away = r.system.nearest_nucleus_distance(t.point) > 2.0 * t.step;
    let pass = !away || table.smooth;
    let mut results = json!({
        "away_from_nuclei": away,
        "smooth_order_threshold": density::SMOOTH_ORDER,
        "table": to_value(&table),
    });
    if !pass {
        let rows: Vec<Value> = table
            .rows
            .iter()
            .filter(|row| !row.smooth)
            .map(|row| json!({"gamma": row.gamma.0, "consistency_order": row.consistency_order}))
            .collect();
        results["witness"] = json!({"point": t.point, "rows": rows});
    }
    Ok(Outcome::new(results, pass))
}

fn density_decay(r: &Resolved) -> Result<Outcome> {
    let t = &r.config.task;
    let settings = DecaySettings {
        direction: t.direction,
        eps_tol: t.eps_tol,
        cutoff_radius: t.radius,
        fd_step: t.fd_step,
    };
    let gamma: MultiIndex = r.gamma;
    let fit = density::decay_fit(&r.model, &r.system, gamma, &t.radii, &settings, &r.mc)?;
    let mut results = json!({"fit": to_value(&fit)});
    if !fit.satisfied {
        results["witness"] = json!({
            "slope": fit.slope,
            "bound": fit.bound,
            "radii": fit.radii,
        });
    }
    Ok(Outcome::new(results, fit.satisfied))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_oracle_matches_worked_cases() {
        let s = ClusterSelection::from_pairs(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(closure_oracle(3, &s), vec![0, 1, 2]);
        let s = ClusterSelection::from_pairs(3, &[(0, 1)]).unwrap();
        assert_eq!(closure_oracle(3, &s), vec![0, 1]);
        let s = ClusterSelection::from_pairs(4, &[(1, 2), (2, 3)]).unwrap();
        assert_eq!(closure_oracle(4, &s), vec![0]);
    }
}
