//! Regular vines: nested trees of pair copulas, structural validation,
//! truncation and the compiled evaluation plan.
//!
//! An edge `(i, k | D)` at level `j` carries the pair copula of
//! `(F(u_i | u_D), F(u_k | u_D))` with the `i` argument first, and `|D| = j - 1`.
//! Variable indices are 0-based. A vine with `L < d - 1` stored levels is
//! truncated: every pair copula above level `L` is the independence copula.

mod plan;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bicop::{Family, PairCopula};
use crate::error::{Error, Result};
use crate::sampler::SamplingPlan;

pub use plan::{EvalPlan, HDir, HNode, Term, VineGrad};

/// One pair copula of the vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineEdge {
    pub i: usize,
    pub k: usize,
    #[serde(default)]
    pub cond: Vec<usize>,
    pub pc: PairCopula,
    /// Frozen edges are excluded from η and never updated.
    #[serde(default)]
    pub frozen: bool,
}

impl VineEdge {
    pub fn new(i: usize, k: usize, mut cond: Vec<usize>, pc: PairCopula) -> Self {
        cond.sort_unstable();
        VineEdge {
            i,
            k,
            cond,
            pc,
            frozen: false,
        }
    }

    /// Conditioned pair in ascending order.
    pub fn conditioned(&self) -> (usize, usize) {
        (self.i.min(self.k), self.i.max(self.k))
    }

    /// `{i, k} ∪ D`, sorted.
    pub fn constraint_set(&self) -> Vec<usize> {
        let mut s = self.cond.clone();
        s.push(self.i);
        s.push(self.k);
        s.sort_unstable();
        s
    }

    pub fn label(&self) -> String {
        if self.cond.is_empty() {
            format!("{},{}", self.i, self.k)
        } else {
            let c: Vec<String> = self.cond.iter().map(|x| x.to_string()).collect();
            format!("{},{}|{}", self.i, self.k, c.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Dimension,
    Truncation,
    EdgeCount,
    Endpoint,
    Conditioning,
    Proximity,
    NotTree,
    Parameter,
}

/// A single failed structural check. `level` is 1-based; `edge` indexes the
/// edge within its level.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub level: usize,
    pub edge: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.edge {
            Some(e) => write!(f, "level {} edge {}: {:?}: {}", self.level, e, self.kind, self.detail),
            None => write!(f, "level {}: {:?}: {}", self.level, self.kind, self.detail),
        }
    }
}

/// Check the tree properties, conditioning sets and pair-copula parameters
/// of a candidate vine. An empty result means the structure is valid.
pub fn check_structure(d: usize, trees: &[Vec<VineEdge>]) -> Vec<Violation> {
    analyze(d, trees).0
}

fn violation(level: usize, edge: Option<usize>, kind: ViolationKind, detail: impl Into<String>) -> Violation {
    Violation {
        level,
        edge,
        kind,
        detail: detail.into(),
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Violations plus, for a valid structure, the flat parent pair of every
/// edge above level 1 (`[feeds i, feeds k]`).
fn analyze(d: usize, trees: &[Vec<VineEdge>]) -> (Vec<Violation>, Vec<Option<[usize; 2]>>) {
    use ViolationKind::*;
    let mut out = Vec::new();
    if d == 0 {
        out.push(violation(0, None, Dimension, "dimension must be at least 1"));
        return (out, Vec::new());
    }
    if trees.len() > d - 1 {
        out.push(violation(
            trees.len(),
            None,
            Truncation,
            format!("{} levels stored but a {d}-dimensional vine has at most {}", trees.len(), d - 1),
        ));
        return (out, Vec::new());
    }
    for (lj, edges) in trees.iter().enumerate() {
        let level = lj + 1;
        if edges.len() != d - level {
            out.push(violation(
                level,
                None,
                EdgeCount,
                format!("tree has {} edges, expected {}", edges.len(), d - level),
            ));
        }
        for (ei, e) in edges.iter().enumerate() {
            let at = Some(ei);
            if e.i >= d || e.k >= d || e.cond.iter().any(|&c| c >= d) {
                out.push(violation(level, at, Endpoint, format!("index out of range in {}", e.label())));
                continue;
            }
            if e.i == e.k {
                out.push(violation(level, at, Endpoint, format!("self loop {}", e.label())));
            }
            if e.cond.windows(2).any(|w| w[0] >= w[1]) {
                out.push(violation(level, at, Conditioning, "conditioning set must be sorted and distinct"));
            }
            if e.cond.contains(&e.i) || e.cond.contains(&e.k) {
                out.push(violation(
                    level,
                    at,
                    Conditioning,
                    format!("conditioned variable repeated in conditioning set of {}", e.label()),
                ));
            }
            if e.cond.len() != level - 1 {
                out.push(violation(
                    level,
                    at,
                    Conditioning,
                    format!("{} conditions on {} variables, expected {}", e.label(), e.cond.len(), level - 1),
                ));
            }
            if let Err(err) = e.pc.validate() {
                out.push(violation(level, at, Parameter, err.to_string()));
            }
        }
    }
    if !out.is_empty() {
        return (out, Vec::new());
    }

    let mut parents: Vec<Option<[usize; 2]>> = Vec::new();
    let mut offset = 0;
    let mut prev_offset = 0;
    for (lj, edges) in trees.iter().enumerate() {
        let level = lj + 1;
        if level == 1 {
            let mut uf = UnionFind::new(d);
            for (ei, e) in edges.iter().enumerate() {
                if !uf.union(e.i, e.k) {
                    out.push(violation(level, Some(ei), NotTree, format!("{} closes a cycle", e.label())));
                }
                parents.push(None);
            }
        } else {
            let prev = &trees[lj - 1];
            let by_constraint: HashMap<Vec<usize>, usize> =
                prev.iter().enumerate().map(|(pi, p)| (p.constraint_set(), pi)).collect();
            let mut uf = UnionFind::new(prev.len());
            for (ei, e) in edges.iter().enumerate() {
                let side = |x: usize| {
                    let mut s = e.cond.clone();
                    s.push(x);
                    s.sort_unstable();
                    by_constraint.get(&s).copied()
                };
                let (Some(pa), Some(pb)) = (side(e.i), side(e.k)) else {
                    out.push(violation(
                        level,
                        Some(ei),
                        Proximity,
                        format!("{} does not join two adjacent level-{} edges", e.label(), level - 1),
                    ));
                    parents.push(None);
                    continue;
                };
                if level > 2 {
                    let (ga, gb) = (parents[prev_offset + pa], parents[prev_offset + pb]);
                    let share = match (ga, gb) {
                        (Some(ga), Some(gb)) => ga.iter().any(|x| gb.contains(x)),
                        _ => false,
                    };
                    if !share {
                        out.push(violation(
                            level,
                            Some(ei),
                            Proximity,
                            format!("parents of {} do not share a node", e.label()),
                        ));
                    }
                }
                if !uf.union(pa, pb) {
                    out.push(violation(level, Some(ei), NotTree, format!("{} closes a cycle", e.label())));
                }
                parents.push(Some([prev_offset + pa, prev_offset + pb]));
            }
        }
        prev_offset = offset;
        offset += edges.len();
    }
    (out, parents)
}

/// A validated regular vine with its compiled evaluation and sampling plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VineFile", into = "VineFile")]
pub struct Vine {
    d: usize,
    trees: Vec<Vec<VineEdge>>,
    level_of: Vec<usize>,
    offsets: Vec<usize>,
    parents: Vec<Option<[usize; 2]>>,
    plan: Arc<EvalPlan>,
    sampling: Arc<SamplingPlan>,
}

impl PartialEq for Vine {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.trees == other.trees
    }
}

#[derive(Serialize, Deserialize)]
struct VineFile {
    d: usize,
    truncation: usize,
    trees: Vec<Vec<VineEdge>>,
}

impl TryFrom<VineFile> for Vine {
    type Error = Error;

    fn try_from(f: VineFile) -> Result<Self> {
        if f.truncation != f.trees.len() {
            return Err(Error::Structure(format!(
                "truncation {} does not match the {} stored trees",
                f.truncation,
                f.trees.len()
            )));
        }
        Vine::new(f.d, f.trees)
    }
}

impl From<Vine> for VineFile {
    fn from(v: Vine) -> Self {
        VineFile {
            d: v.d,
            truncation: v.truncation(),
            trees: v.trees,
        }
    }
}

impl Vine {
    /// Validate and compile. The number of stored trees is the truncation level.
    pub fn new(d: usize, trees: Vec<Vec<VineEdge>>) -> Result<Self> {
        let (violations, parents) = analyze(d, &trees);
        if !violations.is_empty() {
            let report: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Structure(report.join("; ")));
        }
        let mut level_of = Vec::new();
        let mut offsets = vec![0];
        for (lj, edges) in trees.iter().enumerate() {
            level_of.extend(std::iter::repeat_n(lj + 1, edges.len()));
            offsets.push(offsets[lj] + edges.len());
        }
        let mut vine = Vine {
            d,
            trees,
            level_of,
            offsets,
            parents,
            plan: Arc::new(EvalPlan::default()),
            sampling: Arc::new(SamplingPlan::default()),
        };
        vine.plan = Arc::new(EvalPlan::compile(&vine)?);
        vine.sampling = Arc::new(SamplingPlan::compile(&vine)?);
        Ok(vine)
    }

    /// D-vine on the path `0 - 1 - … - (d-1)` with `truncation` levels; `pc`
    /// supplies the copula of each `(level, i, k)`.
    pub fn dvine(d: usize, truncation: usize, mut pc: impl FnMut(usize, usize, usize) -> PairCopula) -> Result<Self> {
        let trees = (1..=truncation.min(d.saturating_sub(1)))
            .map(|j| {
                (0..d - j)
                    .map(|a| VineEdge::new(a, a + j, (a + 1..a + j).collect(), pc(j, a, a + j)))
                    .collect()
            })
            .collect();
        Vine::new(d, trees)
    }

    /// C-vine with roots `0, 1, …` in order.
    pub fn cvine(d: usize, truncation: usize, mut pc: impl FnMut(usize, usize, usize) -> PairCopula) -> Result<Self> {
        let trees = (1..=truncation.min(d.saturating_sub(1)))
            .map(|j| {
                (j..d)
                    .map(|k| VineEdge::new(j - 1, k, (0..j - 1).collect(), pc(j, j - 1, k)))
                    .collect()
            })
            .collect();
        Vine::new(d, trees)
    }

    /// Full D-vine of independence copulas.
    pub fn independence(d: usize) -> Self {
        Vine::dvine(d, d.saturating_sub(1), |_, _, _| PairCopula::independence()).expect("valid D-vine")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn truncation(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Vec<VineEdge>] {
        &self.trees
    }

    pub fn n_edges(&self) -> usize {
        self.level_of.len()
    }

    /// Edge by flat index (level-major order).
    pub fn edge(&self, id: usize) -> &VineEdge {
        let level = self.level_of[id];
        &self.trees[level - 1][id - self.offsets[level - 1]]
    }

    fn edge_mut(&mut self, id: usize) -> &mut VineEdge {
        let level = self.level_of[id];
        &mut self.trees[level - 1][id - self.offsets[level - 1]]
    }

    /// 1-based level of a flat edge index.
    pub fn level(&self, id: usize) -> usize {
        self.level_of[id]
    }

    /// Flat index range of the edges of `level` (1-based).
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.offsets[level - 1]..self.offsets[level]
    }

    /// Flat indices of the level-`j-1` edges feeding the `i` and `k`
    /// arguments of a level-`j ≥ 2` edge.
    pub fn parents(&self, id: usize) -> Option<[usize; 2]> {
        self.parents[id]
    }

    pub fn edges(&self) -> impl Iterator<Item = &VineEdge> {
        self.trees.iter().flatten()
    }

    pub fn plan(&self) -> &EvalPlan {
        &self.plan
    }

    pub fn sampling(&self) -> &SamplingPlan {
        &self.sampling
    }

    /// Flat index of the edge whose conditioned pair is `{a, b}`.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        (0..self.n_edges()).find(|&id| self.edge(id).conditioned() == key)
    }

    /// Re-run the structural checks (always empty for a constructed vine).
    pub fn validate(&self) -> Vec<Violation> {
        check_structure(self.d, &self.trees)
    }

    pub fn set_pair_copula(&mut self, id: usize, pc: PairCopula) -> Result<()> {
        pc.validate()?;
        self.edge_mut(id).pc = pc;
        Ok(())
    }

    pub fn set_frozen(&mut self, id: usize, frozen: bool) {
        self.edge_mut(id).frozen = frozen;
    }

    /// Replace the copulas of the given conditioned pairs by the independence
    /// copula and freeze them.
    pub fn pin_independence(&self, pairs: &[(usize, usize)]) -> Result<Vine> {
        let mut out = self.clone();
        for &(a, b) in pairs {
            let id = self
                .find_edge(a, b)
                .ok_or_else(|| Error::Lookup(format!("no edge with conditioned pair ({a}, {b})")))?;
            let e = out.edge_mut(id);
            e.pc = PairCopula::independence();
            e.frozen = true;
        }
        Ok(out)
    }

    /// Edges whose parameter belongs to η: not frozen and not independence.
    pub fn free_edges(&self) -> Vec<usize> {
        (0..self.n_edges())
            .filter(|&id| {
                let e = self.edge(id);
                !e.frozen && e.pc.n_free() > 0
            })
            .collect()
    }

    pub fn n_eta(&self) -> usize {
        self.free_edges().len()
    }

    /// Unconstrained copula parameters of the free edges.
    pub fn eta(&self) -> Vec<f64> {
        self.free_edges()
            .into_iter()
            .map(|id| self.edge(id).pc.to_unconstrained().expect("free edge has a parameter"))
            .collect()
    }

    pub fn set_eta(&mut self, eta: &[f64]) -> Result<()> {
        let free = self.free_edges();
        if eta.len() != free.len() {
            return Err(Error::Structure(format!(
                "eta has length {}, expected {}",
                eta.len(),
                free.len()
            )));
        }
        for (&id, &xi) in free.iter().zip(eta) {
            self.edge_mut(id).pc.set_unconstrained(xi)?;
        }
        Ok(())
    }

    /// `dθ/dη` for each free edge, in [`Vine::free_edges`] order.
    pub fn dparam_deta(&self) -> Vec<f64> {
        self.free_edges()
            .into_iter()
            .map(|id| self.edge(id).pc.dparam_dunconstrained())
            .collect()
    }

    /// True when every pair copula is the independence copula.
    pub fn is_independence(&self) -> bool {
        self.edges().all(|e| e.pc.family == Family::Independence)
    }

    /// `log c(u)`: sum of edge log densities at plan-produced arguments.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let mut slots = vec![0.0; self.plan.n_slots];
        self.log_density_with(u, &mut slots)
    }

    /// As [`Vine::log_density`] with a caller-provided scratch buffer of
    /// length `plan().n_slots`.
    pub fn log_density_with(&self, u: &[f64], slots: &mut [f64]) -> f64 {
        self.plan.log_density(self, u, slots)
    }

    /// `log c(u)` with its gradient in `u` and in each edge's parameter.
    pub fn grad_log_density(&self, u: &[f64]) -> VineGrad {
        self.plan.grad(self, u)
    }
}

impl fmt::Display for Vine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vine d={} truncation={}", self.d, self.truncation())?;
        for (lj, edges) in self.trees.iter().enumerate() {
            for e in edges {
                let frozen = if e.frozen { " (frozen)" } else { "" };
                writeln!(f, "  T{} {}: {}{}", lj + 1, e.label(), e.pc, frozen)?;
            }
        }
        Ok(())
    }
}
