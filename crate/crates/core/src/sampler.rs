//! Inverse Rosenblatt sampling from `q(z; λ, η)` and the derivatives of the
//! sampling path with respect to λ and η.
//!
//! Variables are peeled off the vine one at a time: a variable can be removed
//! when it is a leaf of the first tree and the chain of edges containing it is
//! a leaf at every higher level. Sampling visits variables in the reverse of
//! that removal order; each one inverts its chain of h-functions from the top
//! level down, so the number of h-inverse calls equals the number of stored
//! edges. The instruction sequence is compiled once per structure.

use std::collections::{BTreeSet, HashMap};

use crate::dist::CopulaVariationalDist;
use crate::error::{Error, Result};
use crate::special::clamp_unit;
use crate::vine::{HDir, Vine};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Instr {
    /// `out = h_e^{-1}(w | y)` for the variable sitting on side `first`
    /// (`true`: the edge's `i`).
    Hinv {
        edge: usize,
        first: bool,
        w: usize,
        y: usize,
        out: usize,
    },
    /// `out = h_e` in direction `dir` at the edge's argument slots.
    H {
        edge: usize,
        dir: HDir,
        a: usize,
        b: usize,
        out: usize,
    },
}

/// Compiled inverse-transform program for one vine structure.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplingPlan {
    order: Vec<usize>,
    n_slots: usize,
    input_slot: Vec<usize>,
    v_slot: Vec<usize>,
    program: Vec<Instr>,
    ros_n_slots: usize,
    ros_out: Vec<usize>,
    ros_program: Vec<Instr>,
}

/// Conditional-CDF value `F(u_var | u_cond)` identified by `(var, cond)`.
type Key = (usize, Vec<usize>);

struct SlotBuilder<'a> {
    vine: &'a Vine,
    by_constraint: Vec<HashMap<Vec<usize>, usize>>,
    slots: HashMap<Key, usize>,
    n: usize,
    program: Vec<Instr>,
}

impl<'a> SlotBuilder<'a> {
    fn new(vine: &'a Vine) -> Self {
        let by_constraint = (1..=vine.truncation())
            .map(|level| {
                vine.level_range(level)
                    .map(|id| (vine.edge(id).constraint_set(), id))
                    .collect()
            })
            .collect();
        SlotBuilder {
            vine,
            by_constraint,
            slots: HashMap::new(),
            n: 0,
            program: Vec::new(),
        }
    }

    fn fresh(&mut self, key: Key) -> usize {
        let s = self.n;
        self.n += 1;
        self.slots.insert(key, s);
        s
    }

    /// Slot holding `F(u_x | u_cond)`, emitting forward h-calls as needed.
    fn ensure(&mut self, x: usize, cond: &[usize]) -> Result<usize> {
        let key = (x, cond.to_vec());
        if let Some(&s) = self.slots.get(&key) {
            return Ok(s);
        }
        if cond.is_empty() {
            return Err(Error::Structure(format!("variable {x} requested before it is sampled")));
        }
        let mut cset = cond.to_vec();
        cset.push(x);
        cset.sort_unstable();
        let id = *self
            .by_constraint
            .get(cond.len() - 1)
            .and_then(|m| m.get(&cset))
            .ok_or_else(|| Error::Structure(format!("no edge produces F({x} | {cond:?})")))?;
        let e = self.vine.edge(id);
        let (i, k, ec) = (e.i, e.k, e.cond.clone());
        let dir = if x == i {
            HDir::First
        } else if x == k {
            HDir::Second
        } else {
            return Err(Error::Structure(format!("variable {x} is not conditioned in edge {}", e.label())));
        };
        let a = self.ensure(i, &ec)?;
        let b = self.ensure(k, &ec)?;
        let out = self.fresh(key);
        self.program.push(Instr::H { edge: id, dir, a, b, out });
        Ok(out)
    }
}

/// Removal order and, per removed variable, its chain of edges (level 1 first).
fn removal_order(vine: &Vine) -> Result<Vec<(usize, Vec<usize>)>> {
    let d = vine.dim();
    let levels = vine.truncation();
    let mut alive_vars: BTreeSet<usize> = (0..d).collect();
    let mut alive_edges: Vec<bool> = vec![true; vine.n_edges()];
    let mut out = Vec::with_capacity(d);

    let chain_of = |a: usize, alive_edges: &[bool]| -> Option<Vec<usize>> {
        let mut chain = Vec::new();
        let at_level = |level: usize| vine.level_range(level).filter(|&id| alive_edges[id]);
        if levels == 0 || at_level(1).next().is_none() {
            return Some(chain);
        }
        let touching: Vec<usize> = at_level(1)
            .filter(|&id| {
                let e = vine.edge(id);
                e.i == a || e.k == a
            })
            .collect();
        if touching.len() != 1 {
            return None;
        }
        chain.push(touching[0]);
        for level in 2..=levels {
            if at_level(level).next().is_none() {
                break;
            }
            let node = *chain.last().unwrap();
            let incident: Vec<usize> = at_level(level)
                .filter(|&id| vine.parents(id).is_some_and(|p| p.contains(&node)))
                .collect();
            if incident.len() != 1 {
                return None;
            }
            chain.push(incident[0]);
        }
        Some(chain)
    };

    while !alive_vars.is_empty() {
        let pick = alive_vars
            .iter()
            .find_map(|&a| chain_of(a, &alive_edges).map(|c| (a, c)));
        let Some((a, chain)) = pick else {
            return Err(Error::Structure("vine admits no sampling order".into()));
        };
        alive_vars.remove(&a);
        for &id in &chain {
            alive_edges[id] = false;
        }
        out.push((a, chain));
    }
    Ok(out)
}

impl SamplingPlan {
    pub(crate) fn compile(vine: &Vine) -> Result<SamplingPlan> {
        let d = vine.dim();
        let mut removal = removal_order(vine)?;
        removal.reverse();
        let order: Vec<usize> = removal.iter().map(|(a, _)| *a).collect();

        let other = |id: usize, a: usize| {
            let e = vine.edge(id);
            if e.i == a {
                e.k
            } else {
                e.i
            }
        };
        let top_cond = |a: usize, chain: &[usize]| -> Vec<usize> {
            match chain.last() {
                None => Vec::new(),
                Some(&id) => {
                    let mut c = vine.edge(id).cond.clone();
                    c.push(other(id, a));
                    c.sort_unstable();
                    c
                }
            }
        };

        // Sampling program.
        let mut sb = SlotBuilder::new(vine);
        let mut input_slot = vec![0; d];
        let mut v_slot = vec![0; d];
        for (a, chain) in &removal {
            let a = *a;
            input_slot[a] = sb.fresh((a, top_cond(a, chain)));
            for &id in chain.iter().rev() {
                let e = vine.edge(id);
                let first = e.i == a;
                let b = other(id, a);
                let cond = e.cond.clone();
                let y = sb.ensure(b, &cond)?;
                let mut upper = cond.clone();
                upper.push(b);
                upper.sort_unstable();
                let w = sb.slots[&(a, upper)];
                let out = sb.fresh((a, cond));
                sb.program.push(Instr::Hinv {
                    edge: id,
                    first,
                    w,
                    y,
                    out,
                });
            }
            v_slot[a] = sb.slots[&(a, Vec::new())];
        }
        let (n_slots, program) = (sb.n, sb.program);

        // Forward (Rosenblatt) program.
        let mut rb = SlotBuilder::new(vine);
        for a in 0..d {
            rb.fresh((a, Vec::new()));
        }
        let mut ros_out = vec![0; d];
        for (a, chain) in &removal {
            ros_out[*a] = rb.ensure(*a, &top_cond(*a, chain))?;
        }

        Ok(SamplingPlan {
            order,
            n_slots,
            input_slot,
            v_slot,
            program,
            ros_n_slots: rb.n,
            ros_out,
            ros_program: rb.program,
        })
    }

    /// Order in which variables are generated.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// h-inverse evaluations per sample.
    pub fn hinv_calls(&self) -> usize {
        self.program.iter().filter(|i| matches!(i, Instr::Hinv { .. })).count()
    }

    /// Supporting forward h-function evaluations per sample.
    pub fn hfunc_calls(&self) -> usize {
        self.program.len() - self.hinv_calls()
    }
}

/// One draw with its intermediate conditional values.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    slots: Vec<f64>,
}

impl SamplePath {
    /// Every conditional-CDF value computed on the way, in program order.
    pub fn trace(&self) -> &[f64] {
        &self.slots
    }
}

fn edge_error(vine: &Vine, id: usize, err: Error) -> Error {
    match err {
        Error::Numerical { context, residual } => Error::Numerical {
            context: format!("{context} on edge {}", vine.edge(id).label()),
            residual,
        },
        other => other,
    }
}

/// Copula uniforms `v` from independent uniforms `u`.
pub fn copula_sample(vine: &Vine, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let plan = vine.sampling();
    let d = vine.dim();
    assert_eq!(u.len(), d, "uniform vector length must equal the dimension");
    let mut slots = vec![f64::NAN; plan.n_slots];
    for a in 0..d {
        slots[plan.input_slot[a]] = clamp_unit(u[a]);
    }
    for ins in &plan.program {
        match *ins {
            Instr::Hinv { edge, first, w, y, out } => {
                let pc = &vine.edge(edge).pc;
                let x = if first {
                    pc.hinv(slots[w], slots[y])
                } else {
                    pc.hinv_rev(slots[w], slots[y])
                };
                slots[out] = x.map_err(|e| edge_error(vine, edge, e))?;
            }
            Instr::H { edge, dir, a, b, out } => {
                slots[out] = h_apply(vine, edge, dir, slots[a], slots[b]);
            }
        }
    }
    let v = (0..d).map(|a| slots[plan.v_slot[a]]).collect();
    Ok((v, slots))
}

fn h_apply(vine: &Vine, edge: usize, dir: HDir, a: f64, b: f64) -> f64 {
    let pc = &vine.edge(edge).pc;
    match dir {
        HDir::First => pc.hfunc(a, b),
        HDir::Second => pc.hfunc_rev(a, b),
    }
}

/// Draw `z` from `dist` given independent uniforms `u`.
pub fn sample(dist: &CopulaVariationalDist, u: &[f64]) -> Result<SamplePath> {
    let (v, slots) = copula_sample(&dist.vine, u)?;
    let z = v
        .iter()
        .zip(dist.marginals.iter())
        .map(|(&vi, m)| m.quantile(vi))
        .collect();
    Ok(SamplePath {
        u: u.to_vec(),
        v,
        z,
        slots,
    })
}

/// Forward Rosenblatt transform: independent uniforms from copula uniforms.
pub fn rosenblatt(vine: &Vine, v: &[f64]) -> Vec<f64> {
    let plan = vine.sampling();
    let mut slots = vec![f64::NAN; plan.ros_n_slots];
    for (a, &x) in v.iter().enumerate() {
        slots[a] = clamp_unit(x);
    }
    for ins in &plan.ros_program {
        if let Instr::H { edge, dir, a, b, out } = *ins {
            slots[out] = h_apply(vine, edge, dir, slots[a], slots[b]);
        }
    }
    plan.ros_out.iter().map(|&s| slots[s]).collect()
}

/// Rows of the block-diagonal `∇_λ z`: row `i` is `∂z_i/∂(mu_i, log_sigma_i)`.
pub fn path_grad_lambda(path: &SamplePath, dist: &CopulaVariationalDist) -> Vec<[f64; 2]> {
    path.v
        .iter()
        .zip(dist.marginals.iter())
        .map(|(&v, m)| m.dquantile_dlambda(v))
        .collect()
}

/// Smallest admissible `∂h/∂u` when differentiating through an h-inverse.
const MIN_HINV_SLOPE: f64 = 1e-12;

/// `∂v/∂η` (rows: variables, columns: free edges in `Vine::free_edges` order)
/// by forward differentiation along the recorded path.
pub fn path_grad_eta_uniform(path: &SamplePath, vine: &Vine) -> Result<Vec<Vec<f64>>> {
    let plan = vine.sampling();
    let free = vine.free_edges();
    let n_eta = free.len();
    let dparam = vine.dparam_deta();
    let mut col = vec![None; vine.n_edges()];
    for (c, &id) in free.iter().enumerate() {
        col[id] = Some(c);
    }
    let s = &path.slots;
    let mut tan = vec![vec![0.0; n_eta]; plan.n_slots];
    if n_eta > 0 {
        for ins in &plan.program {
            match *ins {
                Instr::H { edge, dir, a, b, out } => {
                    let pc = &vine.edge(edge).pc;
                    let (da, db, dt) = match dir {
                        HDir::First => pc.hfunc_partials(s[a], s[b]),
                        HDir::Second => pc.hfunc_rev_partials(s[a], s[b]),
                    };
                    let mut t: Vec<f64> = (0..n_eta).map(|c| da * tan[a][c] + db * tan[b][c]).collect();
                    if let Some(c) = col[edge] {
                        t[c] += dt * dparam[c];
                    }
                    tan[out] = t;
                }
                Instr::Hinv { edge, first, w, y, out } => {
                    let pc = &vine.edge(edge).pc;
                    // h(x, y) = w (or ∂C/∂u at (y, x) = w), solved for x.
                    let (dx_coef, dy_coef, dt) = if first {
                        pc.hfunc_partials(s[out], s[y])
                    } else {
                        let (p_y, p_x, p_t) = pc.hfunc_rev_partials(s[y], s[out]);
                        (p_x, p_y, p_t)
                    };
                    if dx_coef.abs() < MIN_HINV_SLOPE {
                        return Err(Error::numerical(
                            format!("h-inverse derivative on edge {}", vine.edge(edge).label()),
                            dx_coef,
                        ));
                    }
                    let mut t: Vec<f64> = (0..n_eta).map(|c| tan[w][c] - dy_coef * tan[y][c]).collect();
                    if let Some(c) = col[edge] {
                        t[c] -= dt * dparam[c];
                    }
                    for x in &mut t {
                        *x /= dx_coef;
                    }
                    tan[out] = t;
                }
            }
        }
    }
    Ok((0..vine.dim()).map(|a| tan[plan.v_slot[a]].clone()).collect())
}

/// `∇_η z`: `∂z_i/∂η = (∂v_i/∂η) / q(z_i)`.
pub fn path_grad_eta(path: &SamplePath, dist: &CopulaVariationalDist) -> Result<Vec<Vec<f64>>> {
    let mut rows = path_grad_eta_uniform(path, &dist.vine)?;
    for (i, row) in rows.iter_mut().enumerate() {
        let scale = dist.marginals.get(i).dquantile_dv(path.v[i]);
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    Ok(rows)
}
