//! Pairwise test dissimilarities between populations and average-linkage
//! (UPGMA) clustering.

use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::boottest::{compare_fits, PopulationFit, TestOutcome};
use crate::error::{domain, Error, Result};
use crate::factorest::canonical_from_panel;
use crate::io::{float_value, Panel, ToResultJson};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMode {
    /// All populations must share K̂; factors are weighted by √λ.
    MatchedK,
    /// Compare only the leading factor.
    FirstFactor,
}

impl FromStr for ClusterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched_k" | "matched-k" => Ok(Self::MatchedK),
            "first_factor" | "first-factor" => Ok(Self::FirstFactor),
            other => Err(Error::Config(format!("unknown cluster mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub d: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl DissimilarityMatrix {
    /// Validates symmetry, zero diagonal and the [0, 1] range.
    pub fn new(d: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return domain(format!("dissimilarity matrix is {}x{}", n, d.ncols()));
        }
        if labels.len() != n {
            return domain(format!("{} labels for {n} populations", labels.len()));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return domain(format!("nonzero diagonal at {i}"));
            }
            for j in 0..n {
                let v = d[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return domain(format!("d({i},{j}) = {v} outside [0, 1]"));
                }
                if (v - d[(j, i)]).abs() > 1e-12 {
                    return domain(format!("d is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { d, labels })
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }
}

impl ToResultJson for DissimilarityMatrix {
    fn to_result_json(&self) -> Value {
        let rows: Vec<Vec<Value>> =
            (0..self.n()).map(|i| (0..self.n()).map(|j| float_value(self.d[(i, j)])).collect()).collect();
        json!({ "kind": "dissimilarity", "labels": self.labels, "d": rows })
    }
}

/// Settings shared by every population in a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub tau: usize,
    pub b_boot: usize,
    pub mode: ClusterMode,
    pub seed: u64,
    pub r_max: Option<usize>,
    pub k_override: Option<usize>,
}

impl ClusterConfig {
    pub fn new(tau: usize, b_boot: usize, mode: ClusterMode, seed: u64) -> Self {
        Self { tau, b_boot, mode, seed, r_max: None, k_override: None }
    }
}

/// Weights √λᵢ / Σⱼ √λⱼ of one population, averaged over the pair.
pub fn factor_weights(lambda_a: &[f64], lambda_b: &[f64]) -> Vec<f64> {
    let norm = |l: &[f64]| {
        let s: f64 = l.iter().map(|v| v.max(0.0).sqrt()).sum();
        l.iter().map(|v| if s > 0.0 { v.max(0.0).sqrt() / s } else { 1.0 / l.len() as f64 }).collect::<Vec<_>>()
    };
    let (wa, wb) = (norm(lambda_a), norm(lambda_b));
    wa.iter().zip(&wb).map(|(a, b)| (a + b) / 2.0).collect()
}

/// Dissimilarity implied by one test outcome.
pub fn outcome_dissimilarity(outcome: &TestOutcome, mode: ClusterMode) -> f64 {
    match mode {
        ClusterMode::FirstFactor => 1.0 - outcome.p_two_sided[0],
        ClusterMode::MatchedK => {
            let w = factor_weights(&outcome.lambda_a, &outcome.lambda_b);
            let d: f64 = w.iter().zip(&outcome.p_two_sided).map(|(w, p)| w * (1.0 - p)).sum();
            d.clamp(0.0, 1.0)
        }
    }
}

/// Fit every population once, then test every pair.
pub fn pairwise_dissimilarity(panels: &[Panel], labels: Option<&[String]>, cfg: &ClusterConfig) -> Result<DissimilarityMatrix> {
    let n = panels.len();
    if n < 2 {
        return domain(format!("need at least 2 populations, got {n}"));
    }
    let labels: Vec<String> = match labels {
        Some(l) if l.len() == n => l.to_vec(),
        Some(l) => return domain(format!("{} labels for {n} populations", l.len())),
        None => (1..=n).map(|i| format!("P{i}")).collect(),
    };

    let fits: Vec<PopulationFit> = panels
        .par_iter()
        .map(|p| {
            let canon = canonical_from_panel(p, cfg.tau, cfg.r_max, cfg.k_override)?;
            PopulationFit::new(&canon, cfg.b_boot, cfg.seed)
        })
        .collect::<Result<_>>()?;

    let k_common = match cfg.mode {
        ClusterMode::FirstFactor => Some(1),
        ClusterMode::MatchedK => {
            let k0 = fits[0].k_hat;
            if let Some(i) = fits.iter().position(|f| f.k_hat != k0) {
                return Err(Error::Config(format!(
                    "matched_k needs equal factor counts: {} has {} but {} has {}",
                    labels[0], k0, labels[i], fits[i].k_hat
                )));
            }
            None
        }
    };

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| compare_fits(&fits[i], &fits[j], k_common).map(|o| outcome_dissimilarity(&o, cfg.mode)))
        .collect::<Result<_>>()?;

    let mut d = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    DissimilarityMatrix::new(d, labels)
}

/// One agglomeration step. Leaves are `-(i + 1)`, earlier merges are their
/// 0-based position in the merge list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: i64,
    pub b: i64,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub labels: Vec<String>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    /// Leaf indices under a node.
    pub fn leaves(&self, node: i64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < 0 {
                out.push((-x - 1) as usize);
            } else {
                let m = &self.merges[x as usize];
                stack.push(m.a);
                stack.push(m.b);
            }
        }
        out.sort_unstable();
        out
    }

    /// The two leaf sets joined by the final merge.
    pub fn top_split(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        self.merges.last().map(|m| (self.leaves(m.a), self.leaves(m.b)))
    }

    fn height_of(&self, node: i64) -> f64 {
        if node < 0 {
            0.0
        } else {
            self.merges[node as usize].height
        }
    }

    fn newick_node(&self, node: i64, out: &mut String) {
        if node < 0 {
            out.push_str(&newick_label(&self.labels[(-node - 1) as usize]));
            return;
        }
        let m = &self.merges[node as usize];
        out.push('(');
        for (k, child) in [m.a, m.b].into_iter().enumerate() {
            if k == 1 {
                out.push(',');
            }
            self.newick_node(child, out);
            out.push_str(&format!(":{}", m.height - self.height_of(child)));
        }
        out.push(')');
    }

    /// Newick string with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let mut s = String::new();
        match self.merges.len() {
            0 => s.push_str(&newick_label(&self.labels[0])),
            m => self.newick_node(m as i64 - 1, &mut s),
        }
        s.push(';');
        s
    }
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

impl ToResultJson for Dendrogram {
    fn to_result_json(&self) -> Value {
        let merges: Vec<Value> =
            self.merges.iter().map(|m| json!([m.a, m.b, float_value(m.height), m.size])).collect();
        json!({ "kind": "dendrogram", "labels": self.labels, "merges": merges })
    }
}

/// UPGMA clustering.
///
/// Each step merges the closest pair of active clusters; the new cluster's
/// distance to any other is the size-weighted mean of its members'
/// distances. Ties go to the pair whose smallest leaf indices are
/// lexicographically smallest.
pub fn average_linkage(diss: &DissimilarityMatrix) -> Result<Dendrogram> {
    let n = diss.n();
    if n < 2 {
        return domain(format!("clustering needs at least 2 populations, got {n}"));
    }
    // active clusters: (node id, min leaf, size)
    let mut active: Vec<(i64, usize, usize)> = (0..n).map(|i| (-(i as i64) - 1, i, 1)).collect();
    let mut dist = diss.d.clone();
    let mut merges = Vec::with_capacity(n - 1);

    while active.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..active.len() {
            for y in (x + 1)..active.len() {
                let h = dist[(x, y)];
                let key = {
                    let (p, q) = (active[x].1, active[y].1);
                    (p.min(q), p.max(q))
                };
                let better = match best {
                    None => true,
                    Some((bh, bk, _, _)) => h < bh || (h == bh && key < bk),
                };
                if better {
                    best = Some((h, key, x, y));
                }
            }
        }
        let (height, _, x, y) = best.expect("at least two clusters");
        let (ca, cb) = (active[x], active[y]);
        let (first, second) = order_children(ca.0, cb.0);
        let size = ca.2 + cb.2;
        merges.push(Merge { a: first, b: second, height, size });

        // new row replaces x; y is removed
        let (wa, wb) = (ca.2 as f64, cb.2 as f64);
        for z in 0..active.len() {
            if z != x && z != y {
                let v = (wa * dist[(x, z)] + wb * dist[(y, z)]) / (wa + wb);
                dist[(x, z)] = v;
                dist[(z, x)] = v;
            }
        }
        active[x] = ((merges.len() - 1) as i64, ca.1.min(cb.1), size);
        active.remove(y);
        dist = dist.remove_row(y).remove_column(y);
    }
    Ok(Dendrogram { merges, labels: diss.labels.clone() })
}

/// Singletons first; otherwise the smaller id first.
fn order_children(a: i64, b: i64) -> (i64, i64) {
    match (a < 0, b < 0) {
        (true, false) => (a, b),
        (false, true) => (b, a),
        (true, true) => {
            if a > b {
                (a, b)
            } else {
                (b, a)
            }
        }
        (false, false) => (a.min(b), a.max(b)),
    }
}
