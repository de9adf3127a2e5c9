//! Affinity Propagation over a similarity matrix and the two-level
//! category hierarchy built from its exemplars.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Magnitude of the seeded noise used to break exact ties.
pub const TIE_NOISE: f64 = 1e-10;

/// Self-similarity assigned to every point before message passing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    #[default]
    Median,
    Value(f64),
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preference::Median => f.write_str("median"),
            Preference::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Preference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(Preference::Median);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Preference::Value)
            .ok_or_else(|| Error::Config(format!("preference must be `median` or a number, got `{s}`")))
    }
}

impl Serialize for Preference {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Preference::Median => s.serialize_str("median"),
            Preference::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Preference {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Preference::Value(v)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub preference: Preference,
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
    pub seed: u64,
    /// Add seeded noise of magnitude [`TIE_NOISE`] to the similarities so
    /// that exactly tied candidates do not oscillate.
    pub tie_noise: bool,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            preference: Preference::Median,
            damping: 0.5,
            max_iterations: 500,
            convergence_window: 50,
            seed: 0,
            tie_noise: true,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must be in [0.5, 1), got {}", self.damping)));
        }
        if self.max_iterations == 0 || self.convergence_window == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        if self.convergence_window >= self.max_iterations {
            return Err(Error::Config(format!(
                "convergence window {} must be smaller than max iterations {}",
                self.convergence_window, self.max_iterations
            )));
        }
        if let Preference::Value(v) = self.preference {
            if !v.is_finite() {
                return Err(Error::Config("preference must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Exemplar indices, ascending.
    pub exemplars: Vec<usize>,
    /// For each point, the index of its exemplar.
    pub membership: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Preference actually used (the median resolved to a number).
    pub preference: f64,
}

impl ClusterAssignment {
    /// Groups of point indices, one per exemplar, in exemplar order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let slot: BTreeMap<usize, usize> = self
            .exemplars
            .iter()
            .enumerate()
            .map(|(g, &e)| (e, g))
            .collect();
        let mut groups = vec![Vec::new(); self.exemplars.len()];
        for (i, e) in self.membership.iter().enumerate() {
            groups[slot[e]].push(i);
        }
        groups
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn affinity_propagation(sim: &SimilarityMatrix, config: &ApConfig) -> Result<ClusterAssignment> {
    sim.validate()?;
    affinity_propagation_values(&sim.values, config)
}

/// Message passing on a raw square similarity matrix. Only symmetry and
/// shape are checked; larger values mean more similar.
pub fn affinity_propagation_values(values: &[Vec<f64>], config: &ApConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "affinity propagation needs at least 2 points, got {n}"
        )));
    }
    if values.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("similarity matrix is not {n}x{n}")));
    }
    for i in 0..n {
        for k in 0..n {
            if !values[i][k].is_finite() || values[i][k] != values[k][i] {
                return Err(Error::Validation(format!(
                    "similarity ({i},{k}) is non-finite or asymmetric"
                )));
            }
        }
    }

    let off_diagonal: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .map(|(i, k)| values[i][k])
        .collect();
    let preference = match config.preference {
        Preference::Median => median(off_diagonal.clone()),
        Preference::Value(v) => v,
    };

    // With all similarities equal the messages never separate any candidate.
    if off_diagonal.iter().all(|&v| v == off_diagonal[0]) {
        let exemplars: Vec<usize> = if preference > off_diagonal[0] {
            (0..n).collect()
        } else {
            vec![0]
        };
        let membership = if exemplars.len() == n { (0..n).collect() } else { vec![0; n] };
        return Ok(ClusterAssignment {
            exemplars,
            membership,
            iterations_run: 0,
            converged: true,
            preference,
        });
    }

    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            s[i * n + k] = if i == k { preference } else { values[i][k] };
        }
    }
    if config.tie_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for v in s.iter_mut() {
            *v += TIE_NOISE * rng.random::<f64>();
        }
    }

    let lambda = config.damping;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut previous: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iterations {
        iterations = it + 1;

        // responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
        for i in 0..n {
            let row = i * n;
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let update = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + (1.0 - lambda) * update;
            }
        }

        // availabilities: a(i,k) = min(0, r(k,k) + Σ_{i' ∉ {i,k}} max(0, r(i',k)))
        //                 a(k,k) = Σ_{i' != k} max(0, r(i',k))
        for k in 0..n {
            let mut col_sum = r[k * n + k];
            for i in 0..n {
                if i != k {
                    col_sum += r[i * n + k].max(0.0);
                }
            }
            for i in 0..n {
                let update = if i == k {
                    col_sum - r[k * n + k]
                } else {
                    (col_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = lambda * a[i * n + k] + (1.0 - lambda) * update;
            }
        }

        let exemplars: Vec<usize> = (0..n)
            .filter(|&k| a[k * n + k] + r[k * n + k] > 0.0)
            .collect();
        if !exemplars.is_empty() && exemplars == previous {
            stable += 1;
        } else {
            stable = 1;
        }
        previous = exemplars;
        if !previous.is_empty() && stable >= config.convergence_window {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last_exemplars: previous,
        });
    }

    let exemplars = previous;
    let membership = (0..n)
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                return i;
            }
            let mut best = exemplars[0];
            for &e in &exemplars[1..] {
                if values[i][e] > values[i][best] {
                    best = e;
                }
            }
            best
        })
        .collect();

    Ok(ClusterAssignment {
        exemplars,
        membership,
        iterations_run: iterations,
        converged,
        preference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub exemplar: String,
    pub members: Vec<String>,
}

/// Settings that produced a hierarchy, kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Resolved preference value.
    pub preference: f64,
    pub preference_rule: Preference,
    pub damping: f64,
    pub seed: u64,
    pub tie_noise: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
}

impl HierarchyConfig {
    pub fn from_run(config: &ApConfig, assignment: &ClusterAssignment) -> Self {
        Self {
            preference: assignment.preference,
            preference_rule: config.preference,
            damping: config.damping,
            seed: config.seed,
            tie_noise: if config.tie_noise { TIE_NOISE } else { 0.0 },
            max_iterations: config.max_iterations,
            convergence_window: config.convergence_window,
        }
    }
}

/// Two levels: clusters on top, food categories as leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub clusters: Vec<Cluster>,
    pub config: Option<HierarchyConfig>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn build_hierarchy(assignment: &ClusterAssignment, labels: &[String]) -> Result<Hierarchy> {
    let n = labels.len();
    if assignment.membership.len() != n {
        return Err(Error::Corruption(format!(
            "assignment covers {} points but there are {n} labels",
            assignment.membership.len()
        )));
    }
    if assignment.exemplars.is_empty() {
        return Err(Error::Corruption("assignment has no exemplars".into()));
    }
    let exemplar_set: BTreeSet<usize> = assignment.exemplars.iter().copied().collect();
    for &e in &exemplar_set {
        if e >= n {
            return Err(Error::Corruption(format!("exemplar index {e} out of range")));
        }
        if assignment.membership[e] != e {
            return Err(Error::Corruption(format!("exemplar {e} is not its own member")));
        }
    }
    let mut members: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, &e) in assignment.membership.iter().enumerate() {
        if !exemplar_set.contains(&e) {
            return Err(Error::Corruption(format!("point {i} maps to non-exemplar {e}")));
        }
        members.entry(e).or_default().push(labels[i].clone());
    }
    let mut clusters: Vec<(String, Vec<String>)> = members
        .into_iter()
        .map(|(e, mut m)| {
            m.sort();
            (labels[e].clone(), m)
        })
        .collect();
    clusters.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(Hierarchy {
        clusters: clusters
            .into_iter()
            .enumerate()
            .map(|(id, (exemplar, members))| Cluster { id, exemplar, members })
            .collect(),
        config: None,
        converged: assignment.converged,
        iterations: assignment.iterations_run,
    })
}

impl Hierarchy {
    /// Builds a hierarchy from explicit groups; each group's exemplar is its
    /// lexicographically first member.
    pub fn from_groups(groups: Vec<Vec<String>>) -> Result<Self> {
        let mut clusters: Vec<Vec<String>> = groups
            .into_iter()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        if clusters.iter().any(|g| g.is_empty()) {
            return Err(Error::Consistency("empty cluster".into()));
        }
        clusters.sort();
        let h = Hierarchy {
            clusters: clusters
                .into_iter()
                .enumerate()
                .map(|(id, members)| Cluster {
                    id,
                    exemplar: members[0].clone(),
                    members,
                })
                .collect(),
            config: None,
            converged: true,
            iterations: 0,
        };
        h.check_disjoint()?;
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if !c.members.contains(&c.exemplar) {
                return Err(Error::Consistency(format!(
                    "exemplar `{}` of cluster {} is not a member",
                    c.exemplar, c.id
                )));
            }
            for m in &c.members {
                if !seen.insert(m.as_str()) {
                    return Err(Error::Consistency(format!("category `{m}` is in two clusters")));
                }
            }
        }
        Ok(())
    }

    /// Checks that the clusters partition exactly `labels`.
    pub fn validate_against(&self, labels: &[String]) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Consistency("hierarchy has no clusters".into()));
        }
        self.check_disjoint()?;
        let covered: BTreeSet<&str> = self
            .clusters
            .iter()
            .flat_map(|c| c.members.iter().map(String::as_str))
            .collect();
        let wanted: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        if let Some(missing) = wanted.difference(&covered).next() {
            return Err(Error::Consistency(format!("category `{missing}` is missing from the hierarchy")));
        }
        if let Some(extra) = covered.difference(&wanted).next() {
            return Err(Error::Consistency(format!("hierarchy names unknown category `{extra}`")));
        }
        Ok(())
    }

    /// Category → cluster position in `clusters`.
    pub fn cluster_of(&self) -> BTreeMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.members.iter().map(move |m| (m.as_str(), ci)))
            .collect()
    }

    /// The partition as a set of member sets, for order-free comparison.
    pub fn partition(&self) -> BTreeSet<BTreeSet<String>> {
        self.clusters
            .iter()
            .map(|c| c.members.iter().cloned().collect())
            .collect()
    }
}
