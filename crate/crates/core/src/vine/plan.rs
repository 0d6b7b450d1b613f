//! Compiled evaluation of the vine log density and its reverse-mode gradient.

use std::collections::{BTreeSet, HashMap};

use crate::bicop::{Family, Partials};
use crate::error::{Error, Result};
use crate::special::clamp_unit;

use super::Vine;

/// Which conditional an h-node produces from edge `(i, k | D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HDir {
    /// `F(u_i | u_D, u_k) = h(a | b)`.
    First,
    /// `F(u_k | u_D, u_i) = ∂C(a, b)/∂a`.
    Second,
}

/// One memoized h-function application. `a` and `b` are the slots of the
/// source edge's first and second copula arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HNode {
    pub edge: usize,
    pub level: usize,
    pub dir: HDir,
    pub a: usize,
    pub b: usize,
    pub out: usize,
}

/// One density factor `c_e(slot a, slot b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub edge: usize,
    pub a: usize,
    pub b: usize,
}

/// Slots `0..d` hold the raw arguments; h-node outputs follow in
/// topological order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalPlan {
    pub n_slots: usize,
    pub hnodes: Vec<HNode>,
    pub terms: Vec<Term>,
}

/// `log c(u)` together with `∂/∂u` and `∂/∂θ` per edge (flat order; the
/// derivative is taken with respect to the edge's optimized parameter).
#[derive(Debug, Clone, PartialEq)]
pub struct VineGrad {
    pub log_density: f64,
    pub du: Vec<f64>,
    pub dparam: Vec<f64>,
}

impl EvalPlan {
    pub(crate) fn compile(vine: &Vine) -> Result<EvalPlan> {
        let d = vine.dim();
        // The h-node feeding one side of an edge: (parent edge, direction).
        let source = |id: usize, var: usize| -> Result<(usize, HDir)> {
            let [pa, pb] = vine
                .parents(id)
                .ok_or_else(|| Error::Structure(format!("edge {} has no parents", vine.edge(id).label())))?;
            for p in [pa, pb] {
                let pe = vine.edge(p);
                let cset = pe.constraint_set();
                let mut want = vine.edge(id).cond.clone();
                want.push(var);
                want.sort_unstable();
                if cset != want {
                    continue;
                }
                if pe.i == var {
                    return Ok((p, HDir::First));
                }
                if pe.k == var {
                    return Ok((p, HDir::Second));
                }
            }
            Err(Error::Structure(format!(
                "argument {var} of edge {} cannot be produced by level {}",
                vine.edge(id).label(),
                vine.level(id) - 1
            )))
        };

        let mut needed: BTreeSet<(usize, usize, HDir)> = BTreeSet::new();
        let mut stack: Vec<(usize, HDir)> = Vec::new();
        for id in 0..vine.n_edges() {
            if vine.level(id) > 1 {
                let e = vine.edge(id);
                stack.push(source(id, e.i)?);
                stack.push(source(id, e.k)?);
            }
        }
        while let Some((p, dir)) = stack.pop() {
            if !needed.insert((vine.level(p), p, dir)) {
                continue;
            }
            if vine.level(p) > 1 {
                let pe = vine.edge(p);
                stack.push(source(p, pe.i)?);
                stack.push(source(p, pe.k)?);
            }
        }

        let mut slot_of: HashMap<(usize, HDir), usize> = HashMap::new();
        for (n, &(_, p, dir)) in needed.iter().enumerate() {
            slot_of.insert((p, dir), d + n);
        }
        let arg_slots = |id: usize| -> Result<(usize, usize)> {
            let e = vine.edge(id);
            if vine.level(id) == 1 {
                return Ok((e.i, e.k));
            }
            let a = slot_of[&source(id, e.i)?];
            let b = slot_of[&source(id, e.k)?];
            Ok((a, b))
        };

        let mut hnodes = Vec::with_capacity(needed.len());
        for &(level, p, dir) in &needed {
            let (a, b) = arg_slots(p)?;
            hnodes.push(HNode {
                edge: p,
                level,
                dir,
                a,
                b,
                out: slot_of[&(p, dir)],
            });
        }
        let terms = (0..vine.n_edges())
            .map(|id| arg_slots(id).map(|(a, b)| Term { edge: id, a, b }))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalPlan {
            n_slots: d + hnodes.len(),
            hnodes,
            terms,
        })
    }

    fn forward(&self, vine: &Vine, u: &[f64], slots: &mut [f64]) {
        assert_eq!(u.len(), vine.dim(), "argument length must equal the vine dimension");
        for (s, &x) in slots.iter_mut().zip(u) {
            *s = clamp_unit(x);
        }
        for n in &self.hnodes {
            let pc = &vine.edge(n.edge).pc;
            let (a, b) = (slots[n.a], slots[n.b]);
            slots[n.out] = match n.dir {
                HDir::First => pc.hfunc(a, b),
                HDir::Second => pc.hfunc_rev(a, b),
            };
        }
    }

    pub(crate) fn log_density(&self, vine: &Vine, u: &[f64], slots: &mut [f64]) -> f64 {
        self.forward(vine, u, slots);
        self.terms
            .iter()
            .map(|t| {
                let pc = &vine.edge(t.edge).pc;
                if pc.family == Family::Independence {
                    0.0
                } else {
                    pc.log_density(slots[t.a], slots[t.b])
                }
            })
            .sum()
    }

    pub(crate) fn grad(&self, vine: &Vine, u: &[f64]) -> VineGrad {
        let mut slots = vec![0.0; self.n_slots];
        self.forward(vine, u, &mut slots);
        let mut adj = vec![0.0; self.n_slots];
        let mut dparam = vec![0.0; vine.n_edges()];
        let mut partials: Vec<Option<Partials>> = vec![None; vine.n_edges()];
        let mut log_density = 0.0;
        for t in &self.terms {
            let pc = &vine.edge(t.edge).pc;
            if pc.family == Family::Independence {
                continue;
            }
            let (a, b) = (slots[t.a], slots[t.b]);
            log_density += pc.log_density(a, b);
            let p = pc.partials(a, b);
            adj[t.a] += p.d_logc_du;
            adj[t.b] += p.d_logc_dv;
            dparam[t.edge] += p.d_logc_dtheta;
            partials[t.edge] = Some(p);
        }
        for n in self.hnodes.iter().rev() {
            let g = adj[n.out];
            if g == 0.0 {
                continue;
            }
            let pc = &vine.edge(n.edge).pc;
            if pc.family == Family::Independence {
                match n.dir {
                    HDir::First => adj[n.a] += g,
                    HDir::Second => adj[n.b] += g,
                }
                continue;
            }
            let (a, b) = (slots[n.a], slots[n.b]);
            let (da, db, dt) = match n.dir {
                HDir::First => {
                    let p = partials[n.edge].unwrap_or_else(|| pc.partials(a, b));
                    (p.dh_du, p.dh_dv, p.dh_dtheta)
                }
                HDir::Second => pc.hfunc_rev_partials(a, b),
            };
            adj[n.a] += g * da;
            adj[n.b] += g * db;
            dparam[n.edge] += g * dt;
        }
        adj.truncate(vine.dim());
        VineGrad {
            log_density,
            du: adj,
            dparam,
        }
    }
}
