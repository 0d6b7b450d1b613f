//! Structure learning: empirical Kendall's τ, sequential maximum spanning
//! trees and per-edge family selection by BIC.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::{
    all_family_rotations, student_t_ln_density_xy, theta_from_tau, Family, PairCopula, Rotation, STUDENT_T_DF_GRID,
};
use crate::special::{clamp_unit, t_ppf};
use crate::error::{Error, Result};
use crate::vine::{Vine, VineEdge};

/// Kendall's τ-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::UndefinedCorrelation(format!("length mismatch {} vs {}", n, y.len())));
    }
    if n < 2 {
        return Err(Error::UndefinedCorrelation("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::UndefinedCorrelation("NaN in input".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let n0 = pairs(n as u64);
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys);

    let mut tied_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tied_y += pairs(run_y);
            run_y = 1;
        }
    }
    tied_y += pairs(run_y);

    if tied_x == n0 || tied_y == n0 {
        return Err(Error::UndefinedCorrelation("a column has zero variance".into()));
    }
    let num = n0 as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    let den = ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

/// Sort ascending and return the number of inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Maximum spanning tree of the candidate edges `(a, b, weight)` on
/// `n_nodes` nodes. Ties go to the lexicographically smaller `(a, b)` with
/// `a < b`. Returns the chosen edges in selection order.
pub fn max_spanning_tree(n_nodes: usize, candidates: &[(usize, usize, f64)]) -> Result<Vec<(usize, usize)>> {
    let mut edges: Vec<(usize, usize, f64)> = candidates.iter().map(|&(a, b, w)| (a.min(b), a.max(b), w)).collect();
    edges.sort_by(|p, q| {
        q.2.partial_cmp(&p.2)
            .unwrap_or(Ordering::Equal)
            .then((p.0, p.1).cmp(&(q.0, q.1)))
    });
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(n_nodes.saturating_sub(1));
    for (a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            tree.push((a, b));
        }
    }
    if tree.len() + 1 != n_nodes.max(1) {
        return Err(Error::Structure(format!(
            "allowed graph on {n_nodes} nodes is disconnected"
        )));
    }
    Ok(tree)
}

/// Maximum spanning tree under `|τ̂|` weights among the allowed pairs of
/// columns. Returns the tree edges and their empirical τ.
pub fn select_tree(columns: &[Vec<f64>], allowed: &[(usize, usize)]) -> Result<Vec<(usize, usize, f64)>> {
    let taus: Vec<f64> = allowed
        .par_iter()
        .map(|&(a, b)| kendall_tau(&columns[a], &columns[b]))
        .collect::<Result<_>>()?;
    let weighted: Vec<(usize, usize, f64)> = allowed.iter().zip(&taus).map(|(&(a, b), &t)| (a, b, t.abs())).collect();
    let tree = max_spanning_tree(columns.len(), &weighted)?;
    Ok(tree
        .into_iter()
        .map(|(a, b)| {
            let t = allowed
                .iter()
                .zip(&taus)
                .find(|(&(x, y), _)| (x.min(y), x.max(y)) == (a, b))
                .map(|(_, &t)| t)
                .unwrap_or(0.0);
            (a, b, t)
        })
        .collect())
}

/// Tuning of family selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectOptions {
    /// Independence is chosen when `|τ̂| √(9n/4)` falls below this value.
    pub independence_threshold: f64,
    /// Refine the τ-inversion estimate by maximizing the likelihood.
    pub refine: bool,
    /// Half-width of the τ window searched during refinement.
    pub tau_window: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            independence_threshold: 1.645,
            refine: true,
            tau_window: 0.15,
        }
    }
}

/// Outcome of [`select_family`].
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyChoice {
    pub pc: PairCopula,
    pub tau_hat: f64,
    pub log_lik: f64,
    /// `log L - k ln(n) / 2` (higher is better).
    pub score: f64,
    /// No candidate could be fitted; independence was used instead.
    pub fallback: bool,
}

/// Parse a comma separated family list such as `gaussian,clayton90,t` or
/// `all16`. A numeric suffix selects the rotation.
pub fn parse_candidates(spec: &str) -> Result<Vec<(Family, Rotation)>> {
    if spec.trim().eq_ignore_ascii_case("all16") {
        return Ok(all_family_rotations());
    }
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let digits = item.trim_start_matches(|c: char| !c.is_ascii_digit());
        let name = &item[..item.len() - digits.len()];
        let family: Family = name.parse()?;
        let rotation = if digits.is_empty() {
            Rotation::R0
        } else {
            let deg: u32 = digits
                .parse()
                .map_err(|_| Error::Config(format!("bad rotation in '{item}'")))?;
            Rotation::try_from(deg).map_err(Error::Config)?
        };
        if rotation != Rotation::R0 && !family.supports_rotation() {
            return Err(Error::Config(format!("{family} has no rotated versions")));
        }
        out.push((family, rotation));
    }
    if out.is_empty() {
        return Err(Error::Config("empty family list".into()));
    }
    Ok(out)
}

fn log_lik(pc: &PairCopula, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| pc.log_density(a, b)).sum()
}

/// Maximize a unimodal `f` on `[a, b]` by golden-section search.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if (b - a).abs() <= 1e-5 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Upper limit on |τ| used when bracketing the likelihood refinement.
const TAU_SEARCH_MAX: f64 = 0.9;

/// Fit one candidate: τ inversion, then likelihood refinement over a τ window.
fn fit_candidate(
    family: Family,
    rotation: Rotation,
    nu: Option<f64>,
    tau_hat: f64,
    u: &[f64],
    v: &[f64],
    opts: &SelectOptions,
) -> Option<(PairCopula, f64)> {
    let build = |theta: f64| {
        let mut t = vec![theta];
        if let Some(nu) = nu {
            t.push(nu);
        }
        PairCopula::new(family, rotation, t).ok()
    };
    // t quantiles do not depend on the correlation, so compute them once per ν.
    let t_quantiles = nu.map(|nu| {
        let q = |x: &[f64]| x.iter().map(|&a| t_ppf(clamp_unit(a), nu)).collect::<Vec<_>>();
        (q(u), q(v))
    });
    let log_lik = |pc: &PairCopula| match (&t_quantiles, pc.family) {
        (Some((xs, ys)), Family::StudentT) => {
            let (rho, nu) = (pc.theta[0], pc.theta[1]);
            xs.iter().zip(ys).map(|(&x, &y)| student_t_ln_density_xy(rho, nu, x, y)).sum()
        }
        _ => log_lik(pc, u, v),
    };
    let base_tau = if rotation.negates_tau() { -tau_hat } else { tau_hat };
    let theta0 = theta_from_tau(family, base_tau).ok()?;
    let pc0 = build(theta0)?;
    let ll0 = log_lik(&pc0);
    if !opts.refine {
        return ll0.is_finite().then_some((pc0, ll0));
    }
    let (lo_tau, hi_tau) = match family {
        Family::Gaussian | Family::StudentT => (-TAU_SEARCH_MAX, TAU_SEARCH_MAX),
        _ => (1e-3, TAU_SEARCH_MAX),
    };
    let t_lo = (base_tau - opts.tau_window).clamp(lo_tau, hi_tau);
    let t_hi = (base_tau + opts.tau_window).clamp(lo_tau, hi_tau);
    let refined = (|| {
        let a = theta_from_tau(family, t_lo).ok()?;
        let b = theta_from_tau(family, t_hi).ok()?;
        let objective = |th: f64| build(th).map_or(f64::NEG_INFINITY, |pc| log_lik(&pc));
        let th = golden_max(a.min(b), a.max(b), objective);
        let pc = build(th)?;
        let ll = log_lik(&pc);
        ll.is_finite().then_some((pc, ll))
    })();
    match refined {
        Some((pc, ll)) if ll >= ll0 || !ll0.is_finite() => Some((pc, ll)),
        _ => ll0.is_finite().then_some((pc0, ll0)),
    }
}

/// Choose the pair copula of one edge from its pseudo-observations.
pub fn select_family(
    u: &[f64],
    v: &[f64],
    candidates: &[(Family, Rotation)],
    opts: &SelectOptions,
) -> Result<FamilyChoice> {
    let n = u.len();
    let tau_hat = kendall_tau(u, v)?;
    let independent = FamilyChoice {
        pc: PairCopula::independence(),
        tau_hat,
        log_lik: 0.0,
        score: 0.0,
        fallback: false,
    };
    if tau_hat.abs() * (9.0 * n as f64 / 4.0).sqrt() < opts.independence_threshold {
        return Ok(independent);
    }
    let penalty = (n as f64).ln() / 2.0;
    let mut best: Option<FamilyChoice> = None;
    let mut consider = |pc: PairCopula, ll: f64, k: usize| {
        let score = ll - k as f64 * penalty;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(FamilyChoice {
                pc,
                tau_hat,
                log_lik: ll,
                score,
                fallback: false,
            });
        }
    };
    for &(family, rotation) in candidates {
        match family {
            Family::Independence => consider(PairCopula::independence(), 0.0, 0),
            Family::StudentT => {
                for nu in STUDENT_T_DF_GRID {
                    if let Some((pc, ll)) = fit_candidate(family, rotation, Some(nu), tau_hat, u, v, opts) {
                        consider(pc, ll, 2);
                    }
                }
            }
            _ => {
                if let Some((pc, ll)) = fit_candidate(family, rotation, None, tau_hat, u, v, opts) {
                    consider(pc, ll, 1);
                }
            }
        }
    }
    Ok(best.unwrap_or_else(|| {
        log::warn!("no candidate family fits tau {tau_hat:.4}; using independence");
        FamilyChoice {
            fallback: true,
            ..independent
        }
    }))
}

/// One node of the tree being built: a previous-level edge together with its
/// conditional pseudo-observations.
struct Node {
    /// Variables this node conditions (`{i, k}` of the edge, or the variable itself at level 1).
    constraint: Vec<usize>,
    /// Parent node ids of the previous level (empty at level 1).
    parents: Vec<usize>,
    /// `(variable, F(variable | rest of constraint))` for each conditioned variable.
    columns: Vec<(usize, Vec<f64>)>,
}

impl Node {
    fn column(&self, var: usize) -> &[f64] {
        &self.columns.iter().find(|(v, _)| *v == var).expect("conditioned variable").1
    }
}

/// Sequential tree-by-tree vine selection on pseudo-observations given as
/// `d` columns of equal length.
pub fn build_vine(
    columns: &[Vec<f64>],
    candidates: &[(Family, Rotation)],
    truncation: usize,
    opts: &SelectOptions,
) -> Result<Vine> {
    let d = columns.len();
    if d == 0 {
        return Err(Error::Structure("no columns".into()));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Structure("columns differ in length".into()));
    }
    if d > 1 && n < 2 {
        return Err(Error::Structure("need at least two observations".into()));
    }
    let levels = truncation.min(d - 1);
    let mut nodes: Vec<Node> = (0..d)
        .map(|a| Node {
            constraint: vec![a],
            parents: Vec::new(),
            columns: vec![(a, columns[a].clone())],
        })
        .collect();
    let mut trees = Vec::with_capacity(levels);
    for level in 1..=levels {
        // Candidate pairs respecting proximity.
        let mut allowed = Vec::new();
        let mut specs = Vec::new();
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                let adjacent = if level <= 2 {
                    level == 1 || nodes[a].constraint.iter().any(|x| nodes[b].constraint.contains(x))
                } else {
                    nodes[a].parents.iter().any(|p| nodes[b].parents.contains(p))
                };
                if !adjacent {
                    continue;
                }
                let sa: BTreeSet<usize> = nodes[a].constraint.iter().copied().collect();
                let sb: BTreeSet<usize> = nodes[b].constraint.iter().copied().collect();
                let cond: Vec<usize> = sa.intersection(&sb).copied().collect();
                let diff: Vec<usize> = sa.symmetric_difference(&sb).copied().collect();
                if level > 1 && (diff.len() != 2 || cond.len() != level - 1) {
                    continue;
                }
                let (i, k) = if level == 1 {
                    (nodes[a].constraint[0], nodes[b].constraint[0])
                } else if sa.contains(&diff[0]) {
                    (diff[0], diff[1])
                } else {
                    (diff[1], diff[0])
                };
                allowed.push((a, b));
                specs.push((i, k, cond));
            }
        }
        let taus: Vec<f64> = allowed
            .par_iter()
            .zip(&specs)
            .map(|(&(a, b), (i, k, _))| kendall_tau(nodes[a].column(*i), nodes[b].column(*k)))
            .collect::<Result<_>>()?;
        let weighted: Vec<(usize, usize, f64)> =
            allowed.iter().zip(&taus).map(|(&(a, b), &t)| (a, b, t.abs())).collect();
        let tree = max_spanning_tree(nodes.len(), &weighted)?;

        let chosen: Vec<(usize, usize, usize, usize, Vec<usize>)> = tree
            .iter()
            .map(|&(a, b)| {
                let pos = allowed.iter().position(|&p| p == (a, b)).expect("tree edge is allowed");
                let (i, k, cond) = specs[pos].clone();
                // Orient with the smaller conditioned variable first.
                if i < k {
                    (a, b, i, k, cond)
                } else {
                    (b, a, k, i, cond)
                }
            })
            .collect();
        let fitted: Vec<(VineEdge, Node)> = chosen
            .par_iter()
            .map(|(a, b, i, k, cond)| {
                let (ui, uk) = (nodes[*a].column(*i), nodes[*b].column(*k));
                let choice = select_family(ui, uk, candidates, opts)?;
                let pc = choice.pc;
                let f_i: Vec<f64> = ui.iter().zip(uk).map(|(&x, &y)| pc.hfunc(x, y)).collect();
                let f_k: Vec<f64> = ui.iter().zip(uk).map(|(&x, &y)| pc.hfunc_rev(x, y)).collect();
                let mut constraint = cond.clone();
                constraint.extend([*i, *k]);
                constraint.sort_unstable();
                let node = Node {
                    constraint,
                    parents: vec![*a, *b],
                    columns: vec![(*i, f_i), (*k, f_k)],
                };
                Ok((VineEdge::new(*i, *k, cond.clone(), pc), node))
            })
            .collect::<Result<_>>()?;
        let (edges, next): (Vec<VineEdge>, Vec<Node>) = fitted.into_iter().unzip();
        trees.push(edges);
        nodes = next;
    }
    Vine::new(d, trees)
}

/// Every labeled regular vine on `d` variables (independence copulas).
/// Intended for small `d`; the count grows as `d!/2 · 2^C(d-2, 2)`.
pub fn enumerate_vines(d: usize) -> Vec<Vine> {
    let mut out = Vec::new();
    if d < 2 {
        return vec![Vine::independence(d)];
    }
    let level1: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    for t1 in spanning_trees(d, &level1) {
        let edges: Vec<VineEdge> = t1
            .iter()
            .map(|&(a, b)| VineEdge::new(a, b, vec![], PairCopula::independence()))
            .collect();
        extend_vines(d, vec![edges], &mut out);
    }
    out
}

fn extend_vines(d: usize, trees: Vec<Vec<VineEdge>>, out: &mut Vec<Vine>) {
    let level = trees.len() + 1;
    if level == d {
        out.push(Vine::new(d, trees).expect("enumerated vines are valid"));
        return;
    }
    let prev = trees.last().unwrap();
    let mut allowed = Vec::new();
    for a in 0..prev.len() {
        for b in a + 1..prev.len() {
            if let Some(e) = join(&prev[a], &prev[b], level) {
                allowed.push(((a, b), e));
            }
        }
    }
    let pairs: Vec<(usize, usize)> = allowed.iter().map(|(p, _)| *p).collect();
    for tree in spanning_trees(prev.len(), &pairs) {
        let edges: Vec<VineEdge> = tree
            .iter()
            .map(|p| allowed.iter().find(|(q, _)| q == p).unwrap().1.clone())
            .collect();
        let mut next = trees.clone();
        next.push(edges);
        if crate::vine::check_structure(d, &next).is_empty() {
            extend_vines(d, next, out);
        }
    }
}

/// The level-`level` edge joining two previous-level edges, if their
/// constraint sets differ in exactly one element each.
fn join(a: &VineEdge, b: &VineEdge, level: usize) -> Option<VineEdge> {
    let sa: BTreeSet<usize> = a.constraint_set().into_iter().collect();
    let sb: BTreeSet<usize> = b.constraint_set().into_iter().collect();
    let cond: Vec<usize> = sa.intersection(&sb).copied().collect();
    let diff: Vec<usize> = sa.symmetric_difference(&sb).copied().collect();
    (cond.len() == level - 1 && diff.len() == 2)
        .then(|| VineEdge::new(diff[0], diff[1], cond, PairCopula::independence()))
}

/// All spanning trees of the graph given by `edges` on `n` nodes.
pub fn spanning_trees(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        n: usize,
        edges: &[(usize, usize)],
        start: usize,
        chosen: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if chosen.len() + 1 == n {
            out.push(chosen.clone());
            return;
        }
        for idx in start..edges.len() {
            chosen.push(edges[idx]);
            if is_forest(n, chosen) {
                rec(n, edges, idx + 1, chosen, out);
            }
            chosen.pop();
        }
    }
    let mut out = Vec::new();
    if n <= 1 {
        return vec![Vec::new()];
    }
    rec(n, edges, 0, &mut Vec::new(), &mut out);
    out
}

fn is_forest(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}
