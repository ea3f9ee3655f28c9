//! Constrained minimization of the dressing phase field over integer
//! winding sectors, with external feed currents.
//!
//! The dressed determinant multiplies every converged orbital by a site
//! phase. Working variables are the bond increments `twist_b` of that
//! phase; a winding pattern fixes their circulation around every basis
//! loop. The single-valued requirement makes `(w_chi + w_xi)` even on every
//! loop, which is exactly the statement that the dressing-phase winding
//! `k = (w_chi + w_xi) / 2` is an integer. Constraints are eliminated
//! exactly: a particular solution carrying the prescribed circulations is
//! built from azimuth one-forms around the wound faces, and the remaining
//! freedom is a pure gradient of site potentials. Stationarity of the
//! energy over those potentials is current conservation at every site;
//! external feeds tilt the functional so that the divergence at each
//! terminal equals the prescribed current.

use std::f64::consts::TAU;

use faer::Mat;

use crate::error::{Error, Result};
use crate::lattice::{wrap_angle, BondGraph, LoopBasis};
use crate::linalg::{self, c64};
use crate::meanfield::{staggered_azimuth, texture_windings, MeanFieldSolution};

/// Target circulation of the chi field per basis loop, `2 pi * w` each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindingPattern {
    /// Chi winding target per basis loop, in loop-basis order.
    pub targets: Vec<i32>,
    /// Sign word over the vortex faces, such as "+-+-".
    pub label: String,
}

/// External current terminals. Magnitudes are in units of `2 e t / hbar`;
/// every listed terminal carries its full magnitude.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedSpec {
    pub sources: Vec<((i32, i32), f64)>,
    pub drains: Vec<((i32, i32), f64)>,
}

impl FeedSpec {
    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() && self.drains.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> FeedSpec {
        FeedSpec {
            sources: self.sources.iter().map(|&(s, j)| (s, j * factor)).collect(),
            drains: self.drains.iter().map(|&(s, j)| (s, j * factor)).collect(),
        }
    }

    /// Net injected current per site index; validates terminal sites and
    /// global balance.
    pub fn site_currents(&self, graph: &BondGraph) -> Result<Vec<f64>> {
        let mut q = vec![0.0; graph.site_count()];
        let mut total = 0.0;
        for (list, sign) in [(&self.sources, 1.0), (&self.drains, -1.0)] {
            for &((x, y), j) in list.iter() {
                if j < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "feed magnitude at ({x}, {y}) must be nonnegative, got {j}"
                    )));
                }
                let site = graph.site_at(x, y).ok_or_else(|| {
                    Error::InvalidSpec(format!("feed site ({x}, {y}) is not an active lattice site"))
                })?;
                q[site] += sign * j;
                total += sign * j;
            }
        }
        if total.abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "feed currents do not balance: net injection {total:.3e} (2et/hbar)"
            )));
        }
        Ok(q)
    }
}

/// Bond field of chi increments. `delta[b]` is the chi difference along
/// bond `b` (tail to head); its circulation around basis loop `l` equals
/// `2 pi * targets[l]` exactly. `twist[b]` is the dressing-phase increment
/// actually applied to the orbitals, `delta = 2 * twist + branch terms`.
#[derive(Debug, Clone)]
pub struct ChiField {
    pub delta: Vec<f64>,
    pub twist: Vec<f64>,
}

/// Everything the phase solver needs from the electronic structure,
/// precomputed once per mean-field solution.
pub struct ChiContext<'g> {
    pub graph: &'g BondGraph,
    pub basis: &'g LoopBasis,
    /// Transfer integral, meV.
    pub t: f64,
    /// Occupied bond coherence per bond.
    pub coherence: Vec<c64>,
    /// Chi-independent (on-site) part of the determinant energy, meV.
    pub onsite_energy: f64,
    /// Staggered texture winding per basis loop.
    pub xi_windings: Vec<i32>,
    /// Loops carrying odd texture winding (the vortex faces).
    pub vortex_faces: Vec<usize>,
    /// Per-bond branch correction `raw - wrap(raw)` of the staggered
    /// azimuth differences; integer multiples of 2 pi.
    pub branch_corr: Vec<f64>,
    /// Geometric centroid of every basis loop.
    pub face_centers: Vec<(f64, f64)>,
}

impl<'g> ChiContext<'g> {
    pub fn new(
        graph: &'g BondGraph,
        basis: &'g LoopBasis,
        meanfield: &MeanFieldSolution,
    ) -> Result<Self> {
        let coherence = meanfield.bond_coherence(graph);
        let onsite_energy = meanfield.onsite_energy(graph);
        let xi_windings = texture_windings(graph, basis, &meanfield.fields)?;
        let vortex_faces = xi_windings
            .iter()
            .enumerate()
            .filter(|&(_, w)| w.rem_euclid(2) != 0)
            .map(|(i, _)| i)
            .collect();
        // Per-site principal branch: the staggered azimuth values carry
        // arbitrary 2 pi offsets from the atan2 branch of xi.
        let stag: Vec<f64> = staggered_azimuth(graph, &meanfield.fields)
            .into_iter()
            .map(wrap_angle)
            .collect();
        let branch_corr = graph
            .bonds()
            .iter()
            .map(|b| {
                let raw = stag[b.head] - stag[b.tail];
                raw - wrap_angle(raw)
            })
            .collect();
        let face_centers = basis
            .loops
            .iter()
            .map(|l| {
                // Area-weighted polygon centroid.
                let pts: Vec<(f64, f64)> = l
                    .sites
                    .iter()
                    .map(|&s| {
                        let (x, y) = graph.coord(s);
                        (x as f64, y as f64)
                    })
                    .collect();
                let mut cx = 0.0;
                let mut cy = 0.0;
                let mut a = 0.0;
                for i in 0..pts.len() {
                    let (x0, y0) = pts[i];
                    let (x1, y1) = pts[(i + 1) % pts.len()];
                    let cross = x0 * y1 - x1 * y0;
                    a += cross;
                    cx += (x0 + x1) * cross;
                    cy += (y0 + y1) * cross;
                }
                a *= 0.5;
                (cx / (6.0 * a), cy / (6.0 * a))
            })
            .collect();
        Ok(ChiContext {
            graph,
            basis,
            t: meanfield.params.t,
            coherence,
            onsite_energy,
            xi_windings,
            vortex_faces,
            branch_corr,
            face_centers,
        })
    }

    /// Integer dressing-phase winding per basis loop for a pattern; errors
    /// when the pattern violates the evenness constraint against the
    /// texture.
    ///
    /// On a vortex face (odd texture winding) the chi winding `+-1` labels
    /// the two conjugate circulating states directly: `k = w_chi`, and an
    /// even `w_chi` there (in particular the currentless 0) is rejected by
    /// the parity check. On texture-free faces the half-angle relation
    /// `delta_chi = 2 * twist` applies, so `k = (w_chi + w_xi) / 2`.
    pub fn sector_of(&self, pattern: &WindingPattern) -> Result<Vec<i32>> {
        if pattern.targets.len() != self.basis.n_loops() {
            return Err(Error::InvalidSpec(format!(
                "pattern has {} targets for {} basis loops",
                pattern.targets.len(),
                self.basis.n_loops()
            )));
        }
        pattern
            .targets
            .iter()
            .zip(&self.xi_windings)
            .enumerate()
            .map(|(i, (&wb, &wx))| {
                if (wb + wx).rem_euclid(2) != 0 {
                    Err(Error::ParityViolation {
                        loop_index: i,
                        w_chi: wb as i64,
                        w_xi: wx as i64,
                    })
                } else if wx.rem_euclid(2) != 0 {
                    Ok(wb)
                } else {
                    Ok((wb + wx) / 2)
                }
            })
            .collect()
    }

    /// Wrapped azimuth one-form around a face center, added onto `out` with
    /// weight `k`. Its circulation is `2 pi k` around that face and zero
    /// around every other.
    fn add_azimuth_form(&self, face: usize, k: f64, out: &mut [f64]) {
        let (cx, cy) = self.face_centers[face];
        for (b, bond) in self.graph.bonds().iter().enumerate() {
            let (tx, ty) = self.graph.coord(bond.tail);
            let (hx, hy) = self.graph.coord(bond.head);
            let at = (ty as f64 - cy).atan2(tx as f64 - cx);
            let ah = (hy as f64 - cy).atan2(hx as f64 - cx);
            out[b] += k * wrap_angle(ah - at);
        }
    }

    /// Particular twist field whose circulation is `2 pi k` on every face:
    /// a sum of azimuth one-forms around the wound face centers.
    fn particular_twist(&self, sector: &[i32]) -> Vec<f64> {
        let mut twist = vec![0.0; self.graph.bond_count()];
        for (l, &k) in sector.iter().enumerate() {
            if k != 0 {
                self.add_azimuth_form(l, f64::from(k), &mut twist);
            }
        }
        twist
    }

    /// Determinant energy parts at a given twist field: (kinetic, on-site).
    pub fn energy_parts(&self, twist: &[f64]) -> (f64, f64) {
        let mut kin = 0.0;
        for (b, a) in self.coherence.iter().enumerate() {
            let ph = c64::new(twist[b].cos(), -twist[b].sin());
            kin += -2.0 * self.t * (ph * a).re;
        }
        (kin, self.onsite_energy)
    }

    /// Bond currents (tail to head, units 2et/hbar) at a twist field.
    pub fn bond_currents(&self, twist: &[f64]) -> Vec<f64> {
        self.coherence
            .iter()
            .enumerate()
            .map(|(b, a)| {
                let ph = c64::new(twist[b].cos(), -twist[b].sin());
                (ph * a).im
            })
            .collect()
    }

    /// Net current out of every site for a set of bond currents.
    pub fn divergence(&self, currents: &[f64]) -> Vec<f64> {
        let mut div = vec![0.0; self.graph.site_count()];
        for (b, bond) in self.graph.bonds().iter().enumerate() {
            div[bond.tail] += currents[b];
            div[bond.head] -= currents[b];
        }
        div
    }
}

/// All sign assignments of the chi winding over the vortex faces: each
/// vortex carries winding +1 or -1 (zero is not single-valued), every other
/// basis loop stays at zero. `2^n` patterns for `n` vortices.
pub fn enumerate_patterns(ctx: &ChiContext<'_>) -> Vec<WindingPattern> {
    let nv = ctx.vortex_faces.len();
    let n_loops = ctx.basis.n_loops();
    (0..(1usize << nv))
        .map(|mask| {
            let mut targets = vec![0; n_loops];
            let mut label = String::with_capacity(nv);
            for (i, &face) in ctx.vortex_faces.iter().enumerate() {
                let sign = if mask >> i & 1 == 0 { 1 } else { -1 };
                targets[face] = sign;
                label.push(if sign > 0 { '+' } else { '-' });
            }
            WindingPattern { targets, label }
        })
        .collect()
}

/// Options for the stationary-point search.
#[derive(Debug, Clone, Copy)]
pub struct ChiSolveOptions {
    /// Tolerance on the node current residual, units 2et/hbar.
    pub grad_tol: f64,
    pub max_newton: usize,
}

impl Default for ChiSolveOptions {
    fn default() -> Self {
        ChiSolveOptions {
            grad_tol: 1e-11,
            max_newton: 80,
        }
    }
}

/// One labeled many-body current pattern: the solved phase field, loop
/// multipliers, bond currents, and energies.
#[derive(Debug, Clone)]
pub struct CurrentState {
    pub pattern: WindingPattern,
    pub feed: FeedSpec,
    pub chi: ChiField,
    /// Lagrange multipliers of the basis-loop constraints, meV.
    pub multipliers: Vec<f64>,
    /// Multipliers of the feed closure loops, meV (one per independent
    /// terminal).
    pub feed_multipliers: Vec<f64>,
    /// Expectation currents per bond (tail to head), units 2et/hbar.
    pub bond_currents: Vec<f64>,
    /// Total determinant energy `kinetic + onsite`, meV.
    pub energy: f64,
    pub kinetic_energy: f64,
    /// Chi-independent part, meV.
    pub onsite_energy: f64,
    /// Site phases of the dressing in the tree gauge, one per site.
    pub site_phases: Vec<c64>,
    /// Gauge potentials of the solution relative to the particular twist
    /// (warm-start seed for nearby solves).
    pub site_potentials: Vec<f64>,
    /// Worst node-current residual at the solution, units 2et/hbar.
    pub residual: f64,
    /// Set when the Newton system needed diagonal regularization.
    pub regularized: bool,
}

/// Find the stationary point of the dressed-determinant energy in the
/// winding sector of `pattern`, subject to the feed's divergence
/// constraints. `warm_start` seeds the site potentials (sweeps pass the
/// previous grid point's solution).
pub fn solve_chi(
    ctx: &ChiContext<'_>,
    pattern: &WindingPattern,
    feed: &FeedSpec,
    opts: &ChiSolveOptions,
    warm_start: Option<&[f64]>,
) -> Result<CurrentState> {
    let sector = ctx.sector_of(pattern)?;
    let q = feed.site_currents(ctx.graph)?;
    let n_sites = ctx.graph.site_count();
    let n_bonds = ctx.graph.bond_count();

    let twist0 = ctx.particular_twist(&sector);
    let mut phi = match warm_start {
        Some(p) if p.len() == n_sites => p.to_vec(),
        _ => vec![0.0; n_sites],
    };

    let twist_of = |phi: &[f64]| -> Vec<f64> {
        let mut tw = twist0.clone();
        for (b, bond) in ctx.graph.bonds().iter().enumerate() {
            tw[b] += phi[bond.head] - phi[bond.tail];
        }
        tw
    };

    // Gradient of the tilted functional over site potentials, in current
    // units: out(s) - q_s.
    let grad = |twist: &[f64]| -> Vec<f64> {
        let currents = ctx.bond_currents(twist);
        let mut g = ctx.divergence(&currents);
        for s in 0..n_sites {
            g[s] -= q[s];
        }
        g
    };

    let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut twist = twist_of(&phi);
    let mut g = grad(&twist);
    let mut gnorm = norm_inf(&g);
    let mut regularized = false;
    let mut tau = 0.0f64;
    let mut converged = false;

    for _ in 0..opts.max_newton {
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        // Hessian of E/(2t) over potentials: weighted graph Laplacian with
        // stiffness Re[e^{-i twist} A] per bond. Site 0 is the gauge pin.
        let m = n_sites - 1;
        let mut h = Mat::<f64>::zeros(m, m);
        for (b, bond) in ctx.graph.bonds().iter().enumerate() {
            let w = (c64::new(twist[b].cos(), -twist[b].sin()) * ctx.coherence[b]).re;
            let (i, j) = (bond.tail, bond.head);
            if i > 0 {
                h[(i - 1, i - 1)] += w;
            }
            if j > 0 {
                h[(j - 1, j - 1)] += w;
            }
            if i > 0 && j > 0 {
                h[(i - 1, j - 1)] -= w;
                h[(j - 1, i - 1)] -= w;
            }
        }
        // Keep the system solvable when cos factors vanish or go negative.
        let shift = 1e-12 + tau;
        for i in 0..m {
            h[(i, i)] += shift;
        }
        if tau > 0.0 {
            regularized = true;
        }
        let rhs = Mat::<f64>::from_fn(m, 1, |i, _| -g[i + 1]);
        let step = linalg::solve_real(h.as_ref(), rhs.as_ref());

        // Backtracking on the residual norm.
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let mut phi_try = phi.clone();
            for i in 0..m {
                phi_try[i + 1] += alpha * step[(i, 0)];
            }
            let twist_try = twist_of(&phi_try);
            let g_try = grad(&twist_try);
            let gn_try = norm_inf(&g_try);
            if gn_try.is_finite() && gn_try < gnorm * (1.0 - 1e-4 * alpha) {
                phi = phi_try;
                twist = twist_try;
                g = g_try;
                gnorm = gn_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if accepted {
            tau = (tau * 0.25).max(0.0);
        } else {
            // Damp toward gradient descent; a persistent stall means the
            // feed exceeds what the lattice can carry in this sector.
            tau = if tau == 0.0 { 1e-6 } else { tau * 100.0 };
            if tau > 1e9 {
                return Err(Error::SolverFailure(format!(
                    "phase solver stalled at residual {gnorm:.3e} (2et/hbar) for pattern {} \
                     (feed likely beyond the convergent range)",
                    pattern.label
                )));
            }
        }
    }
    if !converged && gnorm > opts.grad_tol {
        return Err(Error::SolverFailure(format!(
            "phase solver did not reach {:.1e} in {} Newton steps (residual {gnorm:.3e}) \
             for pattern {}",
            opts.grad_tol, opts.max_newton, pattern.label
        )));
    }

    let currents = ctx.bond_currents(&twist);
    let (kin, onsite) = ctx.energy_parts(&twist);

    // Site phases in the tree gauge (BFS from site 0). The sector constraint
    // makes the closure exact on every cotree bond.
    let mut site_phases = vec![c64::new(0.0, 0.0); n_sites];
    let mut theta = vec![0.0f64; n_sites];
    let mut seen = vec![false; n_sites];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0usize);
    while let Some(u) = queue.pop_front() {
        for inc in ctx.graph.neighbors(u) {
            if !seen[inc.neighbor] {
                seen[inc.neighbor] = true;
                let d = if inc.outgoing {
                    twist[inc.bond]
                } else {
                    -twist[inc.bond]
                };
                theta[inc.neighbor] = theta[u] + d;
                queue.push_back(inc.neighbor);
            }
        }
    }
    for s in 0..n_sites {
        site_phases[s] = c64::new(theta[s].cos(), -theta[s].sin());
    }

    // Spec-facing chi increments: the branch convention in which the
    // circulation around every basis loop equals `2 pi w_chi` exactly. The
    // staggered branch one-form restores the texture winding on ordinary
    // faces; vortex faces additionally shift by the labeled chi winding.
    let mut corr: Vec<f64> = ctx.branch_corr.iter().map(|c| -c).collect();
    for (l, (&k, &wx)) in sector.iter().zip(&ctx.xi_windings).enumerate() {
        if wx.rem_euclid(2) != 0 && k != wx {
            ctx.add_azimuth_form(l, f64::from(k - wx), &mut corr);
        }
    }
    let delta: Vec<f64> = (0..n_bonds).map(|b| 2.0 * twist[b] - corr[b]).collect();

    let (multipliers, feed_multipliers) = recover_multipliers(ctx, &currents, &q)?;

    let div = ctx.divergence(&currents);
    let mut residual = 0.0f64;
    for s in 0..n_sites {
        residual = residual.max((div[s] - q[s]).abs());
    }

    Ok(CurrentState {
        pattern: pattern.clone(),
        feed: feed.clone(),
        chi: ChiField { delta, twist },
        multipliers,
        feed_multipliers,
        bond_currents: currents,
        energy: kin + onsite,
        kinetic_energy: kin,
        onsite_energy: onsite,
        site_phases,
        site_potentials: phi,
        residual,
        regularized,
    })
}

/// Express the stationarity condition in multiplier form: the bond current
/// field must be a combination of basis-loop circulations plus feed closure
/// flows. Solves the least-squares projection and returns the coefficients
/// (in meV, so that the reconstruction is `(Z lambda + F mu) / t`).
fn recover_multipliers(
    ctx: &ChiContext<'_>,
    currents: &[f64],
    q: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_loops = ctx.basis.n_loops();
    let n_bonds = ctx.graph.bond_count();

    // Feed closure columns: a tree path from the reference terminal to each
    // other terminal carries the external return flow.
    let terminals: Vec<usize> = q
        .iter()
        .enumerate()
        .filter(|&(_, v)| v.abs() > 0.0)
        .map(|(s, _)| s)
        .collect();
    let paths = if terminals.len() >= 2 {
        tree_paths(ctx.graph, terminals[0], &terminals[1..])
    } else {
        Vec::new()
    };
    let ncols = n_loops + paths.len();

    // Dense normal equations over sparse columns.
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(ncols);
    for l in &ctx.basis.loops {
        cols.push(l.bonds.iter().map(|&(b, s)| (b, f64::from(s))).collect());
    }
    for p in &paths {
        cols.push(p.clone());
    }

    let target: Vec<f64> = currents.iter().map(|&j| ctx.t * j).collect();
    let mut ata = Mat::<f64>::zeros(ncols, ncols);
    let mut atb = Mat::<f64>::zeros(ncols, 1);
    // Bond -> columns touching it, for the sparse product.
    let mut by_bond: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_bonds];
    for (c, col) in cols.iter().enumerate() {
        for &(b, s) in col {
            by_bond[b].push((c, s));
        }
    }
    for entries in &by_bond {
        for &(ci, si) in entries {
            for &(cj, sj) in entries {
                ata[(ci, cj)] += si * sj;
            }
        }
    }
    for (b, entries) in by_bond.iter().enumerate() {
        for &(c, s) in entries {
            atb[(c, 0)] += s * target[b];
        }
    }
    for i in 0..ncols {
        ata[(i, i)] += 1e-12;
    }
    let sol = linalg::solve_real(ata.as_ref(), atb.as_ref());
    let lambdas: Vec<f64> = (0..n_loops).map(|i| sol[(i, 0)]).collect();
    let mus: Vec<f64> = (n_loops..ncols).map(|i| sol[(i, 0)]).collect();
    Ok((lambdas, mus))
}

/// Signed bond paths from `from` to each target along the BFS tree.
fn tree_paths(graph: &BondGraph, from: usize, targets: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let n = graph.site_count();
    let mut parent: Vec<Option<(usize, usize, bool)>> = vec![None; n]; // (site, bond, outgoing from parent)
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[from] = true;
    queue.push_back(from);
    while let Some(u) = queue.pop_front() {
        for inc in graph.neighbors(u) {
            if !seen[inc.neighbor] {
                seen[inc.neighbor] = true;
                parent[inc.neighbor] = Some((u, inc.bond, inc.outgoing));
                queue.push_back(inc.neighbor);
            }
        }
    }
    targets
        .iter()
        .map(|&t| {
            let mut path = Vec::new();
            let mut cur = t;
            while let Some((p, bond, outgoing)) = parent[cur] {
                // `outgoing` means the bond points parent -> cur.
                path.push((bond, if outgoing { 1.0 } else { -1.0 }));
                cur = p;
                if cur == from {
                    break;
                }
            }
            path
        })
        .collect()
}

/// Reconstruct bond currents from the multiplier form, units 2et/hbar.
pub fn currents_from_multipliers(ctx: &ChiContext<'_>, state: &CurrentState) -> Result<Vec<f64>> {
    let q = state.feed.site_currents(ctx.graph)?;
    let terminals: Vec<usize> = q
        .iter()
        .enumerate()
        .filter(|&(_, v)| v.abs() > 0.0)
        .map(|(s, _)| s)
        .collect();
    let paths = if terminals.len() >= 2 {
        tree_paths(ctx.graph, terminals[0], &terminals[1..])
    } else {
        Vec::new()
    };
    let mut j = vec![0.0; ctx.graph.bond_count()];
    for (l, lam) in ctx.basis.loops.iter().zip(&state.multipliers) {
        for &(b, s) in &l.bonds {
            j[b] += f64::from(s) * lam / ctx.t;
        }
    }
    for (p, mu) in paths.iter().zip(&state.feed_multipliers) {
        for &(b, s) in p {
            j[b] += s * mu / ctx.t;
        }
    }
    Ok(j)
}

/// Per-bond expectation currents of a solved state (the current-operator
/// route). Also verifies node conservation against the feed.
pub fn current_distribution(ctx: &ChiContext<'_>, state: &CurrentState) -> Result<Vec<f64>> {
    let currents = ctx.bond_currents(&state.chi.twist);
    let q = state.feed.site_currents(ctx.graph)?;
    let div = ctx.divergence(&currents);
    for s in 0..ctx.graph.site_count() {
        let r = (div[s] - q[s]).abs();
        if r > 1e-8 {
            return Err(Error::SolverFailure(format!(
                "node current residual {r:.3e} at site {s} exceeds 1e-8"
            )));
        }
    }
    Ok(currents)
}

/// Circulation of the chi field around every basis loop, divided by 2 pi.
pub fn loop_circulations(ctx: &ChiContext<'_>, chi: &ChiField) -> Vec<f64> {
    ctx.basis
        .loops
        .iter()
        .map(|l| {
            l.bonds
                .iter()
                .map(|&(b, s)| f64::from(s) * chi.delta[b])
                .sum::<f64>()
                / TAU
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, plaquette_loop_basis, LatticeSpec};
    use crate::meanfield::{
        build_svq_texture, scf_solve, HubbardParams, ScfOptions, VortexSpec,
    };

    fn ring_context_2x2() -> (BondGraph, LoopBasis, MeanFieldSolution) {
        let g = build_lattice(&LatticeSpec::plain(2, 2)).unwrap();
        let params = HubbardParams::cuprate(3);
        let seed = build_svq_texture(&g, &[], &params, true).unwrap();
        let opts = ScfOptions {
            tol: 1e-13,
            max_iter: 20000,
            mixing: 0.5,
            adaptive_mixing: false,
            anderson: false,
            ..Default::default()
        };
        let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
        let basis = plaquette_loop_basis(&g).unwrap();
        (g, basis, sol)
    }

    fn small_context(
        nx: i32,
        ny: i32,
        n_electrons: usize,
        vortices: &[VortexSpec],
    ) -> (BondGraph, LoopBasis, MeanFieldSolution) {
        let g = build_lattice(&LatticeSpec::plain(nx, ny)).unwrap();
        let params = HubbardParams::cuprate(n_electrons);
        let seed = build_svq_texture(&g, vortices, &params, true).unwrap();
        let opts = ScfOptions {
            max_iter: 3000,
            ..Default::default()
        };
        let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
        assert!(sol.converged, "scf residual {}", sol.residual);
        let basis = plaquette_loop_basis(&g).unwrap();
        (g, basis, sol)
    }

    #[test]
    fn zero_pattern_is_trivial() {
        let (g, basis, sol) = small_context(3, 3, 9, &[]);
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let patterns = enumerate_patterns(&ctx);
        assert_eq!(patterns.len(), 1, "no vortices -> single zero pattern");
        let state = solve_chi(&ctx, &patterns[0], &FeedSpec::default(), &Default::default(), None).unwrap();
        for &c in &state.bond_currents {
            assert!(c.abs() < 1e-12);
        }
        for &l in &state.multipliers {
            assert!(l.abs() < 1e-9);
        }
        for &d in &state.chi.delta {
            assert!(d.abs() < 1e-12);
        }
        // Energy equals the undressed determinant energy.
        let (kin, onsite) = ctx.energy_parts(&vec![0.0; g.bond_count()]);
        assert!((state.energy - (kin + onsite)).abs() < 1e-9);
    }

    #[test]
    fn circulations_exact_for_wound_plaquette() {
        let (g, basis, sol) = ring_context_2x2();
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let pattern = WindingPattern {
            targets: vec![2],
            label: "w2".into(),
        };
        let state = solve_chi(&ctx, &pattern, &FeedSpec::default(), &Default::default(), None).unwrap();
        let circ = loop_circulations(&ctx, &state.chi);
        assert!((circ[0] - 2.0).abs() < 1e-10, "got {}", circ[0]);
        // Ring carries a uniform circulating current.
        let c0 = state.bond_currents[0].abs();
        assert!(c0 > 1e-4, "wound plaquette should carry current");
        let _ = g;
    }

    #[test]
    fn one_dimensional_current_scan_matches_solver_on_2x2() {
        let g = build_lattice(&LatticeSpec::plain(2, 2)).unwrap();
        let params = HubbardParams::cuprate(3);
        let seed = build_svq_texture(&g, &[], &params, true).unwrap();
        // Plain damped mixing keeps the ring coherences exactly symmetric;
        // see the acceptance suite for the rationale.
        let opts = ScfOptions {
            tol: 1e-13,
            max_iter: 20000,
            mixing: 0.5,
            adaptive_mixing: false,
            anderson: false,
            ..Default::default()
        };
        let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
        let basis = plaquette_loop_basis(&g).unwrap();
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let pattern = WindingPattern {
            targets: vec![2],
            label: "w2".into(),
        };
        let state =
            solve_chi(&ctx, &pattern, &FeedSpec::default(), &Default::default(), None).unwrap();

        // Kirchhoff on a single ring forces a uniform loop current, so the
        // gauge-reduced configuration space is one-dimensional: scan the
        // loop current J exhaustively, enumerating the arcsine branches,
        // and keep the circulation roots.
        let scan = crate::verify::ring_current_scan(&ctx, 2).unwrap();
        // The solver's loop current (sign fixed by loop orientation).
        let l0 = &basis.loops[0];
        let (b0, s0) = l0.bonds[0];
        let j_solver = f64::from(s0) * state.bond_currents[b0];
        // Currents must be uniform around the ring.
        for &(b, s) in &l0.bonds {
            assert!(
                (f64::from(s) * state.bond_currents[b] - j_solver).abs() < 1e-9,
                "nonuniform ring current"
            );
        }
        let mut best = f64::INFINITY;
        for r in &scan.roots {
            if (r.current - j_solver).abs() < 1e-6 {
                best = best.min((state.kinetic_energy - r.kinetic_energy).abs());
            }
        }
        for &w in &scan.flat_words {
            let e = crate::verify::ring_branch_energy(&ctx, w, j_solver);
            best = best.min((state.kinetic_energy - e).abs());
        }
        assert!(best < 1e-6, "no scan root within 1e-6: best energy gap {best:.3e}");
    }

    #[test]
    fn parity_violation_rejected() {
        let (g, basis, sol) = ring_context_2x2();
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let pattern = WindingPattern {
            targets: vec![1],
            label: "odd".into(),
        };
        assert!(matches!(
            ctx.sector_of(&pattern),
            Err(Error::ParityViolation { .. })
        ));
        let _ = g;
    }

    #[test]
    fn sixteen_patterns_for_one_quartet() {
        let vortices = [
            VortexSpec { plaquette: (3, 5), winding: 1 },
            VortexSpec { plaquette: (5, 5), winding: -1 },
            VortexSpec { plaquette: (3, 3), winding: -1 },
            VortexSpec { plaquette: (5, 3), winding: 1 },
        ];
        let (g, basis, sol) = small_context(8, 8, 60, &vortices);
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        assert_eq!(ctx.vortex_faces.len(), 4);
        let patterns = enumerate_patterns(&ctx);
        assert_eq!(patterns.len(), 16);
        // Every pattern satisfies the parity constraint by construction.
        for p in &patterns {
            ctx.sector_of(p).unwrap();
        }
        let _ = g;
    }

    #[test]
    fn feed_enters_and_leaves_at_terminals() {
        let (g, basis, sol) = small_context(4, 4, 14, &[]);
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let patterns = enumerate_patterns(&ctx);
        let feed = FeedSpec {
            sources: vec![((1, 1), 0.05)],
            drains: vec![((4, 4), 0.05)],
        };
        let state = solve_chi(&ctx, &patterns[0], &feed, &Default::default(), None).unwrap();
        let div = ctx.divergence(&state.bond_currents);
        let s = g.site_at(1, 1).unwrap();
        let d = g.site_at(4, 4).unwrap();
        for (site, &v) in div.iter().enumerate() {
            let expect = if site == s {
                0.05
            } else if site == d {
                -0.05
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-10, "site {site}: {v} vs {expect}");
        }
        // Multiplier reconstruction reproduces the expectation currents.
        let rec = currents_from_multipliers(&ctx, &state).unwrap();
        for (a, b) in rec.iter().zip(&state.bond_currents) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn unbalanced_feed_rejected() {
        let (g, _basis, _sol) = small_context(3, 3, 9, &[]);
        let feed = FeedSpec {
            sources: vec![((1, 1), 0.1)],
            drains: vec![],
        };
        assert!(feed.site_currents(&g).is_err());
        let feed = FeedSpec {
            sources: vec![((0, 0), 0.1)],
            drains: vec![((1, 1), 0.1)],
        };
        assert!(feed.site_currents(&g).is_err());
    }

    #[test]
    fn twist_energy_derivative_matches_current() {
        let (g, basis, sol) = small_context(4, 4, 14, &[]);
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        // Finite difference of the kinetic energy along one bond twist.
        let mut twist = vec![0.0; g.bond_count()];
        twist[3] = 0.17;
        twist[7] = -0.05;
        let eps = 1e-6;
        let b = 5usize;
        let mut tp = twist.clone();
        tp[b] += eps;
        let mut tm = twist.clone();
        tm[b] -= eps;
        let de = (ctx.energy_parts(&tp).0 - ctx.energy_parts(&tm).0) / (2.0 * eps);
        let j = ctx.bond_currents(&twist)[b];
        // dE/dtwist = -2 t J, i.e. dE/ddelta_chi = -t J.
        assert!(
            (de + 2.0 * ctx.t * j).abs() < 1e-5 * (1.0 + de.abs()),
            "dE {de} vs -2tJ {}",
            -2.0 * ctx.t * j
        );
    }

    #[test]
    fn winding_reversal_negates_currents() {
        let vortices = [
            VortexSpec { plaquette: (3, 5), winding: 1 },
            VortexSpec { plaquette: (5, 5), winding: -1 },
            VortexSpec { plaquette: (3, 3), winding: -1 },
            VortexSpec { plaquette: (5, 3), winding: 1 },
        ];
        let (g, basis, sol) = small_context(8, 8, 60, &vortices);
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
        let patterns = enumerate_patterns(&ctx);
        let a = &patterns[3];
        let flipped = WindingPattern {
            targets: a.targets.iter().map(|&w| -w).collect(),
            label: "flipped".into(),
        };
        let sa = solve_chi(&ctx, a, &FeedSpec::default(), &Default::default(), None).unwrap();
        let sb = solve_chi(&ctx, &flipped, &FeedSpec::default(), &Default::default(), None).unwrap();
        assert!(
            (sa.energy - sb.energy).abs() < 1e-7,
            "energies {} vs {}",
            sa.energy,
            sb.energy
        );
        for (ja, jb) in sa.bond_currents.iter().zip(&sb.bond_currents) {
            assert!((ja + jb).abs() < 1e-7, "{ja} vs {jb}");
        }
        let _ = g;
    }
}
