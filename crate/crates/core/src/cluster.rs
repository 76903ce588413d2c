//! Cluster decomposition of configuration space.
//!
//! Every electron pair `(j, k)`, `j < k`, is declared either close (in the
//! selection `I`, weighted by `χ₁(|x_j - x_k|)`) or apart (in `J = M \ I`,
//! weighted by `χ₂`). Multiplying out `Π_{j<k} (χ₁ + χ₂) = 1` gives the
//! partition of unity `Σ_I φ_I = 1`. The cluster associated with `I` is the
//! class of electron 1 (label 0 here) under the equivalence relation
//! generated by the pairs of `I`.
//!
//! Electron labels are 0-based throughout this crate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mc;
use crate::system::{Configuration, MolecularSystem};

/// Exhaustive enumeration of selections is limited to `N ≤ 6` (2¹⁵ subsets).
pub const MAX_EXHAUSTIVE_ELECTRONS: usize = 6;

/// Proposal budget of [`support_certificate`] per selection.
pub const CERTIFICATE_PROPOSAL_BUDGET: u64 = 10_000_000;

/// The index set `M = {(j, k) : j < k}` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    electrons: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn new(electrons: usize) -> Self {
        let pairs = (0..electrons)
            .flat_map(|j| (j + 1..electrons).map(move |k| (j, k)))
            .collect();
        Self { electrons, pairs }
    }

    pub fn electron_count(&self) -> usize {
        self.electrons
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Position of `(j, k)` (in either order) in the lexicographic list.
    pub fn index_of(&self, j: usize, k: usize) -> Option<usize> {
        let (j, k) = if j < k { (j, k) } else { (k, j) };
        if j == k || k >= self.electrons {
            return None;
        }
        let n = self.electrons;
        Some(j * (2 * n - j - 1) / 2 + (k - j - 1))
    }
}

/// A subset `I ⊆ M`; its complement is `J`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterSelection {
    electrons: usize,
    included: Vec<bool>,
}

impl ClusterSelection {
    pub fn empty(electrons: usize) -> Self {
        Self {
            electrons,
            included: vec![false; PairSet::new(electrons).len()],
        }
    }

    pub fn full(electrons: usize) -> Self {
        Self {
            electrons,
            included: vec![true; PairSet::new(electrons).len()],
        }
    }

    /// Bit `i` of `mask` selects the `i`-th pair of [`PairSet`].
    pub fn from_mask(electrons: usize, mask: u64) -> Result<Self> {
        let m = PairSet::new(electrons).len();
        if m > 64 || (m < 64 && mask >> m != 0) {
            return Err(Error::InvalidCluster(format!(
                "mask {mask:#x} does not fit the {m} pairs of N = {electrons}"
            )));
        }
        Ok(Self {
            electrons,
            included: (0..m).map(|i| mask >> i & 1 == 1).collect(),
        })
    }

    pub fn from_pairs(electrons: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let set = PairSet::new(electrons);
        let mut sel = Self::empty(electrons);
        for &(j, k) in pairs {
            let idx = set.index_of(j, k).ok_or_else(|| {
                Error::InvalidCluster(format!("({}, {}) is not a pair of N = {electrons}", j + 1, k + 1))
            })?;
            sel.included[idx] = true;
        }
        Ok(sel)
    }

    pub fn electron_count(&self) -> usize {
        self.electrons
    }

    pub fn mask(&self) -> Option<u64> {
        (self.included.len() <= 64).then(|| {
            self.included
                .iter()
                .enumerate()
                .fold(0u64, |m, (i, &b)| m | (u64::from(b) << i))
        })
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        PairSet::new(self.electrons)
            .index_of(j, k)
            .is_some_and(|i| self.included[i])
    }

    /// Pairs of `I`.
    pub fn included(&self) -> Vec<(usize, usize)> {
        self.iter_pairs().filter(|p| p.1).map(|p| p.0).collect()
    }

    /// Pairs of `J = M \ I`.
    pub fn excluded(&self) -> Vec<(usize, usize)> {
        self.iter_pairs().filter(|p| !p.1).map(|p| p.0).collect()
    }

    /// Every pair of `M` with its membership in `I`.
    pub fn iter_pairs(&self) -> impl Iterator<Item = ((usize, usize), bool)> + '_ {
        let n = self.electrons;
        (0..n)
            .flat_map(move |j| (j + 1..n).map(move |k| (j, k)))
            .zip(self.included.iter().copied())
    }
}

/// All `2^{|M|}` selections, for `N ≤` [`MAX_EXHAUSTIVE_ELECTRONS`].
pub fn all_selections(electrons: usize) -> Result<impl Iterator<Item = ClusterSelection>> {
    if electrons > MAX_EXHAUSTIVE_ELECTRONS {
        return Err(Error::Precondition(format!(
            "exhaustive selection enumeration is limited to N ≤ {MAX_EXHAUSTIVE_ELECTRONS}, got {electrons}"
        )));
    }
    let m = PairSet::new(electrons).len();
    Ok((0..1u64 << m).map(move |mask| ClusterSelection::from_mask(electrons, mask).expect("mask in range")))
}

/// `(P, Q)` with `0 ∈ P`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterPartition {
    members: Vec<bool>,
}

impl ClusterPartition {
    pub fn from_members(electrons: usize, p: &[usize]) -> Result<Self> {
        let mut members = vec![false; electrons];
        for &j in p {
            if j >= electrons {
                return Err(Error::InvalidCluster(format!("electron {} out of range", j + 1)));
            }
            members[j] = true;
        }
        if electrons == 0 || !members[0] {
            return Err(Error::InvalidCluster("the cluster must contain electron 1".into()));
        }
        Ok(Self { members })
    }

    pub fn electron_count(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members[j]
    }

    pub fn p(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&j| self.members[j]).collect()
    }

    pub fn q(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&j| !self.members[j]).collect()
    }

    pub fn size(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the graph whose edges are the pairs of `I`,
/// each sorted ascending, ordered by smallest member.
pub fn components(selection: &ClusterSelection) -> Vec<Vec<usize>> {
    let n = selection.electron_count();
    let mut uf = UnionFind::new(n);
    for (j, k) in selection.included() {
        uf.union(j, k);
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for j in 0..n {
        let r = uf.find(j);
        if root_slot[r] == usize::MAX {
            root_slot[r] = out.len();
            out.push(Vec::new());
        }
        out[root_slot[r]].push(j);
    }
    out
}

/// The class `P` of electron 0 under the equivalence relation generated by `I`.
pub fn equivalence_class(selection: &ClusterSelection) -> ClusterPartition {
    let n = selection.electron_count();
    let mut members = vec![false; n];
    if n > 0 {
        for j in components(selection).swap_remove(0) {
            members[j] = true;
        }
    }
    ClusterPartition { members }
}

/// Shortest chain `0 = j₀, j₁, …, j_l, j` of pairs in `I` joining electron 0
/// to `target`, or `None` when `target ∉ P`.
pub fn connecting_path(selection: &ClusterSelection, target: usize) -> Option<Vec<usize>> {
    let n = selection.electron_count();
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    let edges = selection.included();
    while let Some(v) = queue.pop_front() {
        if v == target {
            let mut path = vec![v];
            let mut cur = v;
            while cur != 0 {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &(a, b) in &edges {
            let w = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                prev[w] = v;
                queue.push_back(w);
            }
        }
    }
    None
}

/// `σ(u) = exp(-1/u)` for `u > 0`, with its first two derivatives.
fn mollifier(u: f64) -> [f64; 3] {
    if u <= 0.0 {
        return [0.0; 3];
    }
    let s = (-1.0 / u).exp();
    let u2 = u * u;
    [s, s / u2, s * (1.0 - 2.0 * u) / (u2 * u2)]
}

/// `s(u) = σ(u)/(σ(u) + σ(1-u))`: 0 for `u ≤ 0`, 1 for `u ≥ 1`, C^∞, with its
/// first two derivatives.
pub fn smooth_step(u: f64) -> [f64; 3] {
    if u <= 0.0 {
        return [0.0; 3];
    }
    if u >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let [a, a1, a2] = mollifier(u);
    let [b, m1, m2] = mollifier(1.0 - u);
    let (b1, b2) = (-m1, m2);
    let s = a + b;
    let num = a1 * b - a * b1;
    let num1 = a2 * b - a * b2;
    let s1 = a1 + b1;
    [a / s, num / (s * s), num1 / (s * s) - 2.0 * num * s1 / (s * s * s)]
}

/// The cutoff pair `χ₁ + χ₂ = 1` on `[0, ∞)` with `χ₁ = 1` on `[0, R/(4N)]`
/// and `χ₁ = 0` on `[R/(2N), ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffFamily {
    radius: f64,
    electrons: usize,
}

impl CutoffFamily {
    pub fn new(radius: f64, electrons: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Precondition(format!("cutoff radius must be positive, got {radius}")));
        }
        if electrons == 0 {
            return Err(Error::Precondition("cutoff family needs N ≥ 1".into()));
        }
        Ok(Self { radius, electrons })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn electron_count(&self) -> usize {
        self.electrons
    }

    /// `R/(4N)`: end of the plateau `χ₁ = 1`.
    pub fn inner(&self) -> f64 {
        self.radius / (4.0 * self.electrons as f64)
    }

    /// `R/(2N)`: edge of `supp χ₁`.
    pub fn outer(&self) -> f64 {
        self.radius / (2.0 * self.electrons as f64)
    }

    fn step_argument(&self, t: f64) -> f64 {
        (self.outer() - t) / self.inner()
    }

    /// `(χ₁(t), χ₂(t))`.
    pub fn chi(&self, t: f64) -> (f64, f64) {
        let c1 = smooth_step(self.step_argument(t))[0];
        (c1, 1.0 - c1)
    }

    /// `[χ₁, χ₁', χ₁'']` at `t`.
    pub fn chi1_derivatives(&self, t: f64) -> [f64; 3] {
        let [s, s1, s2] = smooth_step(self.step_argument(t));
        let du = -1.0 / self.inner();
        [s, s1 * du, s2 * du * du]
    }
}

/// `φ_I(x) = Π_{(j,k)∈I} χ₁(|x_j - x_k|) · Π_{(j,k)∈J} χ₂(|x_j - x_k|)`.
pub fn phi(selection: &ClusterSelection, family: &CutoffFamily, config: &Configuration) -> f64 {
    let x = config.positions();
    let mut value = 1.0;
    for ((j, k), close) in selection.iter_pairs() {
        let (c1, c2) = family.chi(geom::dist(x[j], x[k]));
        value *= if close { c1 } else { c2 };
        if value == 0.0 {
            break;
        }
    }
    value
}

/// Value, gradient and Hessian of a scalar along a 3-dimensional translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub first: Vec3,
    pub second: [[f64; 3]; 3],
}

impl Jet {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            first: [0.0; 3],
            second: [[0.0; 3]; 3],
        }
    }

    /// Leibniz rule up to second order.
    pub fn product(&self, other: &Jet) -> Jet {
        let mut out = Jet::constant(self.value * other.value);
        for a in 0..3 {
            out.first[a] = self.value * other.first[a] + other.value * self.first[a];
            for b in 0..3 {
                out.second[a][b] = self.value * other.second[a][b]
                    + other.value * self.second[a][b]
                    + self.first[a] * other.first[b]
                    + other.first[a] * self.first[b];
            }
        }
        out
    }
}

/// `φ_I` and its derivatives along `D_a = Σ_j w_j ∂/∂x_{j,a}`.
///
/// A pair distance `d = |x_j - x_k|` moves with weight `w_j - w_k`; pairs
/// translated rigidly contribute constant factors.
pub fn phi_translation_jet(
    selection: &ClusterSelection,
    family: &CutoffFamily,
    config: &Configuration,
    weights: &[f64],
) -> Jet {
    let x = config.positions();
    let mut jet = Jet::constant(1.0);
    for ((j, k), close) in selection.iter_pairs() {
        let u = geom::sub(x[j], x[k]);
        let d = geom::norm(u);
        let [c, c1, c2] = family.chi1_derivatives(d);
        let (f, f1, f2) = if close { (c, c1, c2) } else { (1.0 - c, -c1, -c2) };
        let w = weights[j] - weights[k];
        let factor = if w == 0.0 || d == 0.0 || (f1 == 0.0 && f2 == 0.0) {
            Jet::constant(f)
        } else {
            let hat = geom::scale(u, 1.0 / d);
            let mut fj = Jet::constant(f);
            for a in 0..3 {
                let da = w * hat[a];
                fj.first[a] = f1 * da;
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let dab = w * w * (delta - hat[a] * hat[b]) / d;
                    fj.second[a][b] = f2 * da * w * hat[b] + f1 * dab;
                }
            }
            fj
        };
        if f == 0.0 && f1 == 0.0 && f2 == 0.0 {
            return Jet::constant(0.0);
        }
        jet = jet.product(&factor);
    }
    jet
}

/// Membership in `U_P`: every cluster electron is farther than `eps` from
/// every nucleus and from every electron outside the cluster.
pub fn in_u_p(partition: &ClusterPartition, system: &MolecularSystem, eps: f64, config: &Configuration) -> bool {
    let x = config.positions();
    let n = x.len();
    for j in (0..n).filter(|&j| partition.contains(j)) {
        if system.nearest_nucleus_distance(x[j]) <= eps {
            return false;
        }
        for k in (0..n).filter(|&k| !partition.contains(k)) {
            if geom::dist(x[j], x[k]) <= eps {
                return false;
            }
        }
    }
    true
}

/// Smallest margins observed over all accepted samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportMargins {
    /// `min_{j∈P} min_l |x_j - R_l| - R/4`.
    pub nucleus: f64,
    /// `min_{j∈P, k∈Q} |x_j - x_k| - R/(4N)`; `+∞` when `Q = ∅`.
    pub pair: f64,
    /// `min_{j∈P} min_l |x_j - R_l|`, reported for comparison with `R/2`.
    pub cluster_nucleus_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub selection: Vec<(usize, usize)>,
    pub cluster: Vec<usize>,
    pub samples_tested: u64,
    pub proposals: u64,
    pub violations: u64,
    pub min_margins: SupportMargins,
    pub first_violation: Option<Configuration>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples per independent sampling chain of [`support_certificate`].
const CHAIN_SAMPLES: u64 = 10_000;

struct ChainOutcome {
    tested: u64,
    proposals: u64,
    violations: u64,
    margins: SupportMargins,
    first_violation: Option<Configuration>,
}

struct SupportSampler<'a> {
    selection: &'a ClusterSelection,
    family: &'a CutoffFamily,
    system: &'a MolecularSystem,
    partition: &'a ClusterPartition,
    components: Vec<Vec<usize>>,
    anchor: Vec3,
    confinement: f64,
}

impl SupportSampler<'_> {
    fn feasible(&self, config: &Configuration) -> bool {
        let x = config.positions();
        if self.system.nearest_nucleus_distance(x[0]) <= self.family.radius() {
            return false;
        }
        if x.iter().any(|&p| geom::dist(p, self.anchor) > self.confinement) {
            return false;
        }
        phi(self.selection, self.family, config) > 0.0
    }

    fn gaussian(rng: &mut impl Rng, sigma: f64) -> Vec3 {
        [
            sigma * rng.sample::<f64, _>(StandardNormal),
            sigma * rng.sample::<f64, _>(StandardNormal),
            sigma * rng.sample::<f64, _>(StandardNormal),
        ]
    }

    /// A point of the support built from the components of `I`: each
    /// component is a tight blob, electron 0's blob sits just outside the
    /// radius `R` around the anchor nucleus, other blobs anywhere nearby.
    fn seed_candidate(&self, rng: &mut impl Rng) -> Configuration {
        let r = self.family.radius();
        let mut config = Configuration::zeros(self.partition.electron_count());
        for comp in &self.components {
            let center = if comp[0] == 0 {
                let dir = Self::gaussian(rng, 1.0);
                let len = geom::norm(dir).max(1e-300);
                let dist = r * (1.0 + 0.5 * rng.random::<f64>());
                geom::add(self.anchor, geom::scale(dir, dist / len))
            } else {
                geom::add(self.anchor, Self::gaussian(rng, r))
            };
            for &j in comp {
                config.positions_mut()[j] = geom::add(center, Self::gaussian(rng, 0.4 * self.family.inner()));
            }
        }
        config
    }

    fn check(&self, config: &Configuration, out: &mut ChainOutcome) {
        let r = self.family.radius();
        let x = config.positions();
        let n = x.len();
        let mut ok = true;
        for j in (0..n).filter(|&j| self.partition.contains(j)) {
            let dn = self.system.nearest_nucleus_distance(x[j]);
            out.margins.cluster_nucleus_distance = out.margins.cluster_nucleus_distance.min(dn);
            out.margins.nucleus = out.margins.nucleus.min(dn - 0.25 * r);
            ok &= dn > 0.25 * r;
            for k in (0..n).filter(|&k| !self.partition.contains(k)) {
                let d = geom::dist(x[j], x[k]);
                out.margins.pair = out.margins.pair.min(d - self.family.inner());
                ok &= d > self.family.inner();
            }
        }
        ok &= in_u_p(self.partition, self.system, self.family.inner(), config);
        out.tested += 1;
        if !ok {
            out.violations += 1;
            if out.first_violation.is_none() {
                out.first_violation = Some(config.clone());
            }
        }
    }

    fn run_chain(&self, target: u64, budget: u64, rng: &mut impl Rng) -> ChainOutcome {
        let mut out = ChainOutcome {
            tested: 0,
            proposals: 0,
            violations: 0,
            margins: SupportMargins {
                nucleus: f64::INFINITY,
                pair: f64::INFINITY,
                cluster_nucleus_distance: f64::INFINITY,
            },
            first_violation: None,
        };
        let mut state = None;
        while out.proposals < budget {
            out.proposals += 1;
            let c = self.seed_candidate(rng);
            if self.feasible(&c) {
                state = Some(c);
                break;
            }
        }
        let Some(mut state) = state else {
            return out;
        };
        self.check(&state, &mut out);

        let inner = self.family.inner();
        let scales = [0.25 * inner, inner, 4.0 * inner, self.family.radius()];
        let n = state.electron_count();
        let mut proposal = state.clone();
        while out.tested < target && out.proposals < budget {
            out.proposals += 1;
            let sigma = scales[rng.random_range(0..scales.len())];
            proposal.positions_mut().copy_from_slice(state.positions());
            if rng.random::<bool>() {
                let j = rng.random_range(0..n);
                proposal.positions_mut()[j] = geom::add(state.position(j), Self::gaussian(rng, sigma));
            } else {
                for j in 0..n {
                    proposal.positions_mut()[j] = geom::add(state.position(j), Self::gaussian(rng, sigma));
                }
            }
            if self.feasible(&proposal) {
                std::mem::swap(&mut state, &mut proposal);
                self.check(&state, &mut out);
            }
        }
        out
    }
}

/// Samples points of `supp φ_I ∩ {min_l |x_1 - R_l| > R}` and checks that each
/// lies in `U_P` for `ε = R/(4N)`, with the cluster electrons farther than
/// `R/4` from every nucleus.
///
/// Sampling runs independent random-walk chains restricted to the support
/// (a ball of radius `4R` around the first nucleus confines the walk). Chain
/// `c` uses stream `c` of `seed`; chains merge by counting, so the report is
/// independent of thread count.
pub fn support_certificate(
    selection: &ClusterSelection,
    family: &CutoffFamily,
    system: &MolecularSystem,
    sample_count: u64,
    seed: u64,
) -> Result<CertificateReport> {
    let n = system.electron_count();
    if selection.electron_count() != n || family.electron_count() != n {
        return Err(Error::ElectronCountMismatch {
            expected: n,
            got: selection.electron_count(),
        });
    }
    let partition = equivalence_class(selection);
    let sampler = SupportSampler {
        selection,
        family,
        system,
        partition: &partition,
        components: components(selection),
        anchor: system.nuclei()[0].position,
        confinement: 4.0 * family.radius() + system.max_nucleus_norm() * 2.0,
    };
    let chains = sample_count.div_ceil(CHAIN_SAMPLES).max(1);
    let budget = CERTIFICATE_PROPOSAL_BUDGET / chains;
    let outcomes = mc::par_map(chains as usize, |c| {
        let target = CHAIN_SAMPLES.min(sample_count - c as u64 * CHAIN_SAMPLES);
        let mut rng = mc::stream_rng(seed, c as u64);
        sampler.run_chain(target, budget, &mut rng)
    });

    let mut report = CertificateReport {
        selection: selection.included(),
        cluster: partition.p(),
        samples_tested: 0,
        proposals: 0,
        violations: 0,
        min_margins: SupportMargins {
            nucleus: f64::INFINITY,
            pair: f64::INFINITY,
            cluster_nucleus_distance: f64::INFINITY,
        },
        first_violation: None,
    };
    for o in outcomes {
        report.samples_tested += o.tested;
        report.proposals += o.proposals;
        report.violations += o.violations;
        report.min_margins.nucleus = report.min_margins.nucleus.min(o.margins.nucleus);
        report.min_margins.pair = report.min_margins.pair.min(o.margins.pair);
        report.min_margins.cluster_nucleus_distance = report
            .min_margins
            .cluster_nucleus_distance
            .min(o.margins.cluster_nucleus_distance);
        if report.first_violation.is_none() {
            report.first_violation = o.first_violation;
        }
    }
    if report.samples_tested == 0 {
        return Err(Error::SamplingExhausted {
            proposals: report.proposals,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel(n: usize, pairs: &[(usize, usize)]) -> ClusterSelection {
        ClusterSelection::from_pairs(n, pairs).unwrap()
    }

    #[test]
    fn pair_set_indexing() {
        let m = PairSet::new(5);
        assert_eq!(m.len(), 10);
        for (i, &(j, k)) in m.pairs().iter().enumerate() {
            assert_eq!(m.index_of(j, k), Some(i));
            assert_eq!(m.index_of(k, j), Some(i));
        }
        assert_eq!(m.index_of(2, 2), None);
        assert_eq!(m.index_of(1, 5), None);
        assert!(PairSet::new(1).is_empty());
    }

    #[test]
    fn selection_and_complement_partition_m() {
        let s = sel(4, &[(0, 1), (2, 3)]);
        let i = s.included();
        let j = s.excluded();
        assert_eq!(i.len() + j.len(), 6);
        assert!(i.iter().all(|p| !j.contains(p)));
        assert_eq!(ClusterSelection::from_mask(4, s.mask().unwrap()).unwrap(), s);
        assert!(ClusterSelection::from_mask(3, 1 << 3).is_err());
        assert!(ClusterSelection::from_pairs(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn worked_examples() {
        assert_eq!(equivalence_class(&sel(3, &[(0, 1), (1, 2)])).p(), vec![0, 1, 2]);
        let part = equivalence_class(&sel(3, &[(0, 1)]));
        assert_eq!(part.p(), vec![0, 1]);
        assert_eq!(part.q(), vec![2]);
        assert_eq!(equivalence_class(&ClusterSelection::empty(3)).p(), vec![0]);
    }

    #[test]
    fn connecting_paths() {
        let s = sel(5, &[(0, 3), (3, 4), (1, 4)]);
        assert_eq!(connecting_path(&s, 1), Some(vec![0, 3, 4, 1]));
        assert_eq!(connecting_path(&s, 2), None);
        assert_eq!(connecting_path(&s, 0), Some(vec![0]));
    }

    #[test]
    fn cutoff_plateaus_and_sum() {
        let f = CutoffFamily::new(1.0, 3).unwrap();
        assert_eq!(f.chi(0.0), (1.0, 0.0));
        assert_eq!(f.chi(1.0), (0.0, 1.0));
        assert_eq!(f.chi(f.inner()), (1.0, 0.0));
        assert_eq!(f.chi(f.outer()), (0.0, 1.0));
        for i in 0..=1000 {
            let t = i as f64 * 2e-4;
            let (a, b) = f.chi(t);
            assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            assert!((a + b - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn cutoff_is_monotone() {
        let f = CutoffFamily::new(2.0, 2).unwrap();
        let mut last = 1.0;
        for i in 0..=500 {
            let t = f.inner() + (f.outer() - f.inner()) * i as f64 / 500.0;
            let c = f.chi(t).0;
            assert!(c <= last);
            last = c;
        }
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        let f = CutoffFamily::new(1.0, 2).unwrap();
        for i in 1..40 {
            let t = f.inner() + (f.outer() - f.inner()) * i as f64 / 40.0;
            let [_, d1, d2] = f.chi1_derivatives(t);
            let h = 1e-6;
            let fd1 = (f.chi(t + h).0 - f.chi(t - h).0) / (2.0 * h);
            let h = 1e-4;
            let fd2 = (f.chi(t + h).0 - 2.0 * f.chi(t).0 + f.chi(t - h).0) / (h * h);
            assert!((d1 - fd1).abs() <= 1e-5 * (1.0 + d1.abs()), "{d1} vs {fd1}");
            assert!((d2 - fd2).abs() <= 1e-3 * (1.0 + d2.abs()), "{d2} vs {fd2}");
        }
    }

    #[test]
    fn cutoff_flat_at_junctions() {
        // All derivatives vanish at the plateau edges: FD stencils of order
        // 1..4 centred at the junctions are tiny compared with the interior.
        let f = CutoffFamily::new(1.0, 1).unwrap();
        let chi1 = |t: f64| f.chi(t).0;
        let h = 1e-3;
        for order in 1..=4 {
            for t in [f.inner(), f.outer()] {
                let d = crate::fd::central_derivative(chi1, t, order, h);
                assert!(d.abs() < 1e-30, "order {order} at {t}: {d}");
            }
        }
    }

    #[test]
    fn phi_extremes() {
        let f = CutoffFamily::new(1.0, 3).unwrap();
        let all = ClusterSelection::full(3);
        let z = Configuration::new(vec![[0.3, 0.1, 0.2]; 3]);
        assert_eq!(phi(&all, &f, &z), 1.0);
        let far = Configuration::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(phi(&all, &f, &far), 0.0);
    }

    #[test]
    fn phi_jet_matches_finite_differences() {
        let f = CutoffFamily::new(1.0, 3).unwrap();
        let s = sel(3, &[(0, 1)]);
        // Electron 2 sits at the χ₂ transition from the cluster {0, 1}.
        let x = Configuration::new(vec![[1.2, 0.0, 0.0], [1.25, 0.02, 0.0], [1.2, 0.12, 0.05]]);
        let w = [0.5f64.sqrt(), 0.5f64.sqrt(), 0.0];
        let jet = phi_translation_jet(&s, &f, &x, &w);
        assert!(jet.value > 0.0 && jet.value < 1.0);
        let shifted = |t: Vec3| {
            x.map_positions(|p| p)
                .positions()
                .iter()
                .enumerate()
                .map(|(j, &p)| geom::add(p, geom::scale(t, w[j])))
                .collect::<Vec<_>>()
        };
        let eval = |t: Vec3| phi(&s, &f, &Configuration::new(shifted(t)));
        let h = 1e-5;
        for a in 0..3 {
            let mut e = [0.0; 3];
            e[a] = h;
            let fd1 = (eval(e) - eval(geom::scale(e, -1.0))) / (2.0 * h);
            assert!((fd1 - jet.first[a]).abs() < 1e-6, "{fd1} vs {}", jet.first[a]);
            for b in 0..3 {
                let hh = 1e-4;
                let mut ea = [0.0; 3];
                let mut eb = [0.0; 3];
                ea[a] = hh;
                eb[b] = hh;
                let fd2 = (eval(geom::add(ea, eb)) - eval(geom::sub(ea, eb)) - eval(geom::sub(eb, ea))
                    + eval(geom::scale(geom::add(ea, eb), -1.0)))
                    / (4.0 * hh * hh);
                assert!((fd2 - jet.second[a][b]).abs() < 1e-3 * (1.0 + fd2.abs()), "{fd2} vs {}", jet.second[a][b]);
            }
        }
    }

    #[test]
    fn u_p_membership() {
        let sys1 = MolecularSystem::atom(1.0, 1).unwrap();
        let p1 = ClusterPartition::from_members(1, &[0]).unwrap();
        assert!(in_u_p(&p1, &sys1, 1.0, &Configuration::new(vec![[2.0, 0.0, 0.0]])));

        let sys = MolecularSystem::atom(1.0, 2).unwrap();
        let x = Configuration::new(vec![[2.0, 0.0, 0.0], [2.5, 0.0, 0.0]]);
        let split = ClusterPartition::from_members(2, &[0]).unwrap();
        assert!(!in_u_p(&split, &sys, 1.0, &x));
        let joint = ClusterPartition::from_members(2, &[0, 1]).unwrap();
        assert!(in_u_p(&joint, &sys, 1.0, &x));
        assert!(ClusterPartition::from_members(2, &[1]).is_err());
    }

    #[test]
    fn hand_checked_support_point() {
        let sys = MolecularSystem::atom(1.0, 2).unwrap();
        let fam = CutoffFamily::new(1.0, 2).unwrap();
        let s = sel(2, &[(0, 1)]);
        let x = Configuration::new(vec![[1.2, 0.0, 0.0], [1.21, 0.0, 0.0]]);
        assert!(phi(&s, &fam, &x) > 0.0);
        let part = equivalence_class(&s);
        assert!(in_u_p(&part, &sys, fam.inner(), &x));
        assert!(x.positions().iter().all(|&p| geom::norm(p) > 0.25));
    }

    #[test]
    fn small_certificate_run() {
        let sys = MolecularSystem::atom(2.0, 3).unwrap();
        let fam = CutoffFamily::new(1.0, 3).unwrap();
        let s = sel(3, &[(0, 1)]);
        let report = support_certificate(&s, &fam, &sys, 5_000, 1).unwrap();
        assert_eq!(report.samples_tested, 5_000);
        assert_eq!(report.violations, 0);
        assert_eq!(report.cluster, vec![0, 1]);
        assert!(report.min_margins.pair > 0.0);
        assert!(report.min_margins.nucleus > 0.0);
    }
}
