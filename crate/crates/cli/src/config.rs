//! Run configuration: the TOML file as written, and the resolved form with
//! every default filled in, which is what reports record and hash.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use rhoreg::cluster::{ClusterSelection, CutoffFamily, MAX_EXHAUSTIVE_ELECTRONS};
use rhoreg::density::{MCSettings, MultiIndex, SumMode};
use rhoreg::wavefunction::{AnyModel, CorrelatedToy, DecayCertificate, HydrogenicProduct, WavefunctionModel};
use rhoreg::{geom, MolecularSystem, Nucleus, Vec3};

use crate::Command;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    system: RawSystem,
    model: RawModel,
    #[serde(default)]
    task: RawTask,
    #[serde(default)]
    mc: RawMc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    electrons: usize,
    nuclei: Vec<NucleusSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NucleusSection {
    pub pos: Vec3,
    pub charge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Hydrogenic,
    Correlated,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: Family,
    a: f64,
    b: Option<f64>,
    #[serde(rename = "Z", alias = "z")]
    z: Option<f64>,
    #[serde(rename = "N", alias = "n")]
    n: Option<usize>,
    c: Option<f64>,
    lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    #[serde(rename = "R", alias = "r")]
    radius: Option<f64>,
    eps_tol: Option<f64>,
    radii: Option<Vec<f64>>,
    gamma: Option<[usize; 3]>,
    selection: Option<Vec<[usize; 2]>>,
    point: Option<Vec3>,
    direction: Option<Vec3>,
    configs: Option<u64>,
    support_samples: Option<u64>,
    fd_step: Option<f64>,
    max_order: Option<usize>,
    step: Option<f64>,
    cusp_step: Option<f64>,
    cusp_tolerance: Option<f64>,
    normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    samples: Option<u64>,
    seed: Option<u64>,
    proposal_scale: Option<f64>,
    exponent: Option<f64>,
    mode: Option<SumMode>,
}

/// Fully resolved configuration, serialized into every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub system: SystemSection,
    pub model: ModelSection,
    pub task: TaskSection,
    pub mc: McSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemSection {
    pub electrons: usize,
    pub nuclei: Vec<NucleusSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSection {
    pub family: Family,
    pub a: f64,
    /// Pair exponent; correlated family only.
    pub b: Option<f64>,
    /// Charge; hydrogenic family only.
    #[serde(rename = "Z")]
    pub z: Option<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub c: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskSection {
    #[serde(rename = "R")]
    pub radius: f64,
    pub eps_tol: f64,
    pub radii: Vec<f64>,
    pub gamma: [usize; 3],
    /// 1-based electron pairs; `None` means every selection.
    pub selection: Option<Vec<[usize; 2]>>,
    pub point: Vec3,
    pub direction: Vec3,
    pub configs: u64,
    pub support_samples: u64,
    pub fd_step: f64,
    pub max_order: usize,
    pub step: f64,
    pub cusp_step: f64,
    pub cusp_tolerance: f64,
    pub normalize: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSection {
    pub samples: u64,
    pub seed: u64,
    pub proposal_scale: f64,
    pub exponent: f64,
    pub mode: SumMode,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
}

/// Validated configuration together with the library objects built from it.
pub struct Resolved {
    pub config: RunConfig,
    pub system: MolecularSystem,
    pub model: AnyModel,
    pub family: CutoffFamily,
    pub mc: MCSettings,
    pub gamma: MultiIndex,
    pub selection: Option<ClusterSelection>,
}

pub fn load(path: &Path, command: Command, overrides: Overrides) -> Result<Resolved> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: RawConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    resolve(raw, command, overrides)
}

fn finite(name: &str, v: f64) -> Result<f64> {
    ensure!(v.is_finite(), "{name} must be finite, got {v}");
    Ok(v)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
    Ok(v)
}

pub fn resolve(raw: RawConfig, command: Command, overrides: Overrides) -> Result<Resolved> {
    let nuclei: Vec<Nucleus> = raw
        .system
        .nuclei
        .iter()
        .map(|n| Nucleus {
            position: n.pos,
            charge: n.charge,
        })
        .collect();
    let system = MolecularSystem::new(nuclei, raw.system.electrons)?;
    let electrons = system.electron_count();

    let m = raw.model;
    if let Some(n) = m.n {
        ensure!(n == electrons, "model.N = {n} differs from system.electrons = {electrons}");
    }
    let custom = match (m.c, m.lambda) {
        (None, None) => None,
        (c, lambda) => Some((c.unwrap_or(1.0), lambda)),
    };
    let (model, b, z): (AnyModel, _, _) = match m.family {
        Family::Hydrogenic => {
            ensure!(m.b.is_none(), "model.b is only used by the correlated family");
            let z = m.z.unwrap_or_else(|| system.total_charge());
            let base = HydrogenicProduct::new(z, m.a, electrons)?;
            let model = match custom {
                None => base,
                Some((c, lambda)) => {
                    let lambda = lambda.unwrap_or(base.certificate().lambda);
                    HydrogenicProduct::with_certificate(z, m.a, electrons, DecayCertificate::new(c, lambda)?)?
                }
            };
            (model.into(), None, Some(z))
        }
        Family::Correlated => {
            ensure!(m.z.is_none(), "model.Z is only used by the hydrogenic family");
            let b = m.b.context("model.b is required for the correlated family")?;
            let base = CorrelatedToy::new(m.a, b, electrons)?;
            let model = match custom {
                None => base,
                Some((c, lambda)) => {
                    let lambda = lambda.unwrap_or(base.certificate().lambda);
                    CorrelatedToy::with_certificate(m.a, b, electrons, DecayCertificate::new(c, lambda)?)?
                }
            };
            (model.into(), Some(b), None)
        }
    };
    let cert = model.certificate();

    let t = raw.task;
    let radius = positive("task.R", t.radius.unwrap_or(1.0))?;
    let eps_tol = t.eps_tol.unwrap_or(0.05);
    ensure!(eps_tol > 0.0 && eps_tol < 1.0, "task.eps_tol must lie in (0, 1), got {eps_tol}");
    let radii = t.radii.unwrap_or_else(|| (0..7).map(|i| 2.0 + 0.5 * i as f64).collect());
    for &r in &radii {
        ensure!(r >= 0.0 && r.is_finite(), "task.radii must be finite and nonnegative, got {r}");
    }
    let gamma = MultiIndex(t.gamma.unwrap_or([0; 3]));
    ensure!(gamma.order() <= 3, "task.gamma has order {} but at most 3 is supported", gamma.order());
    let selection = match &t.selection {
        None => None,
        Some(pairs) => {
            let mut zero_based = Vec::with_capacity(pairs.len());
            for &[j, k] in pairs {
                ensure!(
                    j >= 1 && k >= 1 && j <= electrons && k <= electrons && j != k,
                    "task.selection pair ({j}, {k}) is not a pair of distinct electrons in 1..={electrons}"
                );
                zero_based.push((j.min(k) - 1, j.max(k) - 1));
            }
            Some(ClusterSelection::from_pairs(electrons, &zero_based)?)
        }
    };
    let point = t.point.unwrap_or([0.0, 0.0, 1.5 * radius + system.max_nucleus_norm()]);
    for (i, &v) in point.iter().enumerate() {
        finite(&format!("task.point[{i}]"), v)?;
    }
    let direction = t.direction.unwrap_or([1.0, 1.0, 1.0]);
    let len = geom::norm(direction);
    ensure!(len > 0.0 && len.is_finite(), "task.direction must be a nonzero finite vector");
    let direction = geom::scale(direction, 1.0 / len);
    let default_configs = if command == Command::VerifyAnsatz { 10_000 } else { 1_000 };
    let mut configs = t.configs.unwrap_or(default_configs);
    let mut support_samples = t.support_samples.unwrap_or(10_000);
    let fd_step = positive("task.fd_step", t.fd_step.unwrap_or(0.05))?;
    let max_order = t.max_order.unwrap_or(3);
    ensure!((1..=3).contains(&max_order), "task.max_order must be 1, 2 or 3, got {max_order}");
    let step = positive("task.step", t.step.unwrap_or(0.1))?;
    let cusp_step = positive("task.cusp_step", t.cusp_step.unwrap_or(0.01))?;
    let cusp_tolerance = positive("task.cusp_tolerance", t.cusp_tolerance.unwrap_or(0.1))?;
    let normalize = t.normalize.unwrap_or(false);

    let mc_raw = raw.mc;
    let mut samples = mc_raw.samples.unwrap_or(100_000);
    let seed = overrides.seed.or(mc_raw.seed).unwrap_or(0);
    let proposal_scale = mc_raw.proposal_scale.unwrap_or(1.0);
    let exponent = mc_raw.exponent.unwrap_or(cert.lambda);
    let mode = mc_raw.mode.unwrap_or_default();
    if let Some(n) = overrides.samples {
        match command {
            Command::VerifyAnsatz | Command::VerifyPou | Command::VerifyTransform => configs = n,
            Command::VerifySupports => support_samples = n,
            _ => samples = n,
        }
    }
    ensure!(configs >= 1, "task.configs must be at least 1");
    ensure!(support_samples >= 1, "task.support_samples must be at least 1");
    let mc = MCSettings {
        samples,
        seed,
        proposal_scale,
        exponent: Some(exponent),
        mode,
    };
    mc.validate()?;

    let family = CutoffFamily::new(radius, electrons)?;
    let exhaustive = matches!(command, Command::VerifyPou | Command::VerifyCluster)
        || (command == Command::VerifySupports && selection.is_none())
        || (matches!(command, Command::DensityEval | Command::DensityDecay) && matches!(gamma.order(), 1 | 2));
    if exhaustive && electrons > MAX_EXHAUSTIVE_ELECTRONS {
        bail!("{command} enumerates every pair selection, which needs at most {MAX_EXHAUSTIVE_ELECTRONS} electrons (got {electrons})");
    }
    let needs_clear_point = command == Command::DensityEval && (gamma.order() > 0 || selection.is_some());
    if needs_clear_point {
        let d = system.nearest_nucleus_distance(point);
        ensure!(
            d > radius,
            "task.point lies within R = {radius} of a nucleus (distance {d}); clustered estimates need it outside"
        );
    }
    if command == Command::DensityDecay {
        ensure!(radii.len() >= 2, "density decay needs at least two radii");
        let threshold = system.max_nucleus_norm() + 1.0;
        for &r in &radii {
            ensure!(r > threshold, "task.radii must exceed max |R_l| + 1 = {threshold}, got {r}");
        }
    }
    if command == Command::DensityProfile {
        ensure!(!radii.is_empty(), "density profile needs at least one radius");
    }

    let config = RunConfig {
        system: SystemSection {
            electrons,
            nuclei: raw.system.nuclei,
        },
        model: ModelSection {
            family: m.family,
            a: m.a,
            b,
            z,
            n: electrons,
            c: cert.c,
            lambda: cert.lambda,
        },
        task: TaskSection {
            radius,
            eps_tol,
            radii,
            gamma: gamma.0,
            selection: t.selection,
            point,
            direction,
            configs,
            support_samples,
            fd_step,
            max_order,
            step,
            cusp_step,
            cusp_tolerance,
            normalize,
        },
        mc: McSection {
            samples,
            seed,
            proposal_scale,
            exponent,
            mode,
        },
    };
    Ok(Resolved {
        config,
        system,
        model,
        family,
        mc,
        gamma,
        selection,
    })
}
