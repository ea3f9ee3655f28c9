//! Qubit-level assembly: the three-qubit layout, U/D state labeling by net
//! dipole current, feed-current spectrum sweeps, and crossing detection.

use std::collections::BTreeMap;

use crate::chi::{solve_chi, ChiContext, ChiSolveOptions, CurrentState, FeedSpec, WindingPattern};
use crate::error::{Error, Result};
use crate::lattice::{Axis, BondGraph, LatticeSpec};
use crate::meanfield::VortexSpec;
use crate::observables::{
    assemble_coupling, diagonalize_basis, dipole_operator, magnetic_operator, transition_dipoles,
    DipoleMatrix, FieldPolynomial, OneBodyOperator, SpectrumStates,
};

/// One dipole-current qubit: a spin-vortex quartet around a center, with
/// the central column range used to read off the U/D label.
#[derive(Debug, Clone, PartialEq)]
pub struct DcqSpec {
    /// Quartet center in lattice units (may be half-integer).
    pub center: (f64, f64),
    /// Vortices in TL, TR, BL, BR order.
    pub vortices: [VortexSpec; 4],
}

impl DcqSpec {
    /// Standard quartet: diagonal pair winds +1, the other -1, vortex
    /// centers offset by `off` from the quartet center along both axes.
    /// `off` must produce half-integer plaquette centers.
    pub fn quartet(center: (f64, f64), off: f64) -> Result<Self> {
        let plaq = |dx: f64, dy: f64| -> Result<(i32, i32)> {
            let cx = center.0 + dx;
            let cy = center.1 + dy;
            let px = cx - 0.5;
            let py = cy - 0.5;
            if (px - px.round()).abs() > 1e-9 || (py - py.round()).abs() > 1e-9 {
                return Err(Error::InvalidSpec(format!(
                    "vortex center ({cx}, {cy}) is not a plaquette center"
                )));
            }
            Ok((px.round() as i32, py.round() as i32))
        };
        Ok(DcqSpec {
            center,
            vortices: [
                VortexSpec { plaquette: plaq(-off, off)?, winding: 1 },
                VortexSpec { plaquette: plaq(off, off)?, winding: -1 },
                VortexSpec { plaquette: plaq(-off, -off)?, winding: -1 },
                VortexSpec { plaquette: plaq(off, -off)?, winding: 1 },
            ],
        })
    }

    /// Horizontal half-spacing of the vortex columns.
    fn x_offset(&self) -> f64 {
        let left = self.vortices[0].plaquette.0 as f64 + 0.5;
        (self.center.0 - left).abs()
    }
}

/// Full problem geometry: lattice, qubits, named feeds, applied field.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitLayout {
    pub lattice: LatticeSpec,
    pub dcqs: Vec<DcqSpec>,
    pub feeds: BTreeMap<String, FeedSpec>,
    pub field: FieldPolynomial,
    /// Electron count; defaults to one doped hole per vortex.
    pub n_electrons: usize,
}

impl QubitLayout {
    pub fn all_vortices(&self) -> Vec<VortexSpec> {
        self.dcqs.iter().flat_map(|d| d.vortices).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        for d in &self.dcqs {
            for v in &d.vortices {
                let (px, py) = v.plaquette;
                for corner in [(px, py), (px + 1, py), (px, py + 1), (px + 1, py + 1)] {
                    if self.lattice.barrier_sites.contains(&corner) {
                        return Err(Error::InvalidSpec(format!(
                            "vortex plaquette ({px}, {py}) overlaps barrier at {corner:?}"
                        )));
                    }
                }
            }
        }
        for (name, feed) in &self.feeds {
            for &((x, y), _) in feed.sources.iter().chain(&feed.drains) {
                if x < 1 || x > self.lattice.nx || y < 1 || y > self.lattice.ny {
                    return Err(Error::InvalidSpec(format!(
                        "feed {name} terminal ({x}, {y}) outside the lattice"
                    )));
                }
                if self.lattice.barrier_sites.contains(&(x, y)) {
                    return Err(Error::InvalidSpec(format!(
                        "feed {name} terminal ({x}, {y}) sits on a barrier site"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The three-qubit layout: a 112 x 15 plane with four barrier columns
/// and DCQs centered at (4,4), (57,8), (110,12). The barrier columns keep
/// one open row so the plane stays a single conducting region (the feed
/// terminals all sit on rows 1 and 15); full columns would disconnect it.
pub fn paper_3dcq() -> QubitLayout {
    let mut lattice = LatticeSpec::plain(112, 15);
    for x in [30, 32, 82, 84] {
        for y in 1..=14 {
            lattice.barrier_sites.insert((x, y));
        }
    }
    let dcqs = vec![
        DcqSpec::quartet((4.0, 4.0), 1.5).unwrap(),
        DcqSpec::quartet((57.0, 8.0), 1.5).unwrap(),
        DcqSpec::quartet((110.0, 12.0), 1.5).unwrap(),
    ];
    for d in &dcqs {
        for v in &d.vortices {
            lattice.hole_sites.insert(v.plaquette);
        }
    }
    let mut feeds = BTreeMap::new();
    feeds.insert(
        "Jex1".to_string(),
        FeedSpec {
            sources: vec![((2, 1), 1.0), ((6, 15), 1.0)],
            drains: vec![((6, 1), 1.0), ((2, 15), 1.0)],
        },
    );
    feeds.insert(
        "Jex2".to_string(),
        FeedSpec {
            sources: vec![((55, 1), 1.0), ((59, 15), 1.0)],
            drains: vec![((59, 1), 1.0), ((55, 15), 1.0)],
        },
    );
    feeds.insert(
        "Jex3".to_string(),
        FeedSpec {
            sources: vec![((108, 1), 1.0), ((112, 15), 1.0)],
            drains: vec![((112, 1), 1.0), ((108, 15), 1.0)],
        },
    );
    // Couplers; drain coordinates follow the current-distribution figure
    // caption, not the running text (the two disagree).
    feeds.insert(
        "Jex4".to_string(),
        FeedSpec {
            sources: vec![((7, 1), 1.0), ((31, 15), 1.0)],
            drains: vec![((31, 1), 1.0), ((37, 15), 1.0)],
        },
    );
    feeds.insert(
        "Jex5".to_string(),
        FeedSpec {
            sources: vec![((83, 1), 1.0), ((105, 15), 1.0)],
            drains: vec![((71, 1), 1.0), ((83, 15), 1.0)],
        },
    );
    let n_sites = 112 * 15 - 4 * 14;
    QubitLayout {
        lattice,
        dcqs,
        feeds,
        field: FieldPolynomial::paper_quadratic(),
        n_electrons: n_sites - 12,
    }
}

/// A single spin-vortex quartet on an 8 x 8 plane, no barriers, no field.
pub fn desk_1svq() -> QubitLayout {
    let mut lattice = LatticeSpec::plain(8, 8);
    let dcqs = vec![DcqSpec::quartet((4.5, 4.5), 1.0).unwrap()];
    for v in &dcqs[0].vortices {
        lattice.hole_sites.insert(v.plaquette);
    }
    let mut feeds = BTreeMap::new();
    feeds.insert(
        "Jex1".to_string(),
        FeedSpec {
            sources: vec![((2, 1), 1.0), ((6, 8), 1.0)],
            drains: vec![((6, 1), 1.0), ((2, 8), 1.0)],
        },
    );
    QubitLayout {
        lattice,
        dcqs,
        feeds,
        field: FieldPolynomial::zero(),
        n_electrons: 64 - 4,
    }
}

pub fn preset(name: &str) -> Result<QubitLayout> {
    match name {
        "paper-3dcq" => Ok(paper_3dcq()),
        "desk-1svq" => Ok(desk_1svq()),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (expected paper-3dcq or desk-1svq)"
        ))),
    }
}

/// The winding pattern of one joint assignment: per DCQ, `true` puts the
/// left vortex column counterclockwise (the upward-current candidate).
pub fn assignment_pattern(
    ctx: &ChiContext<'_>,
    dcqs: &[DcqSpec],
    up: &[bool],
) -> Result<WindingPattern> {
    let mut targets = vec![0i32; ctx.basis.n_loops()];
    let mut label = String::new();
    for (d, &u) in dcqs.iter().zip(up) {
        label.push(if u { 'u' } else { 'd' });
        for v in &d.vortices {
            let face = ctx
                .basis
                .plaquette_index(v.plaquette)
                .ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "vortex plaquette {:?} is not a basis face",
                        v.plaquette
                    ))
                })?;
            // The bond current runs opposite the twist gradient, so the
            // upward-current assignment winds the left column clockwise.
            let left = (v.plaquette.0 as f64 + 0.5) < d.center.0;
            let sign = if left == u { -1 } else { 1 };
            targets[face] = sign;
        }
    }
    Ok(WindingPattern { targets, label })
}

/// All `2^n` joint U/D assignments over the DCQs, in binary order with the
/// leftmost qubit as the most significant bit (index 0 = all-down).
pub fn basis_assignments(n_dcq: usize) -> Vec<Vec<bool>> {
    (0..(1usize << n_dcq))
        .map(|mask| {
            (0..n_dcq)
                .map(|q| mask >> (n_dcq - 1 - q) & 1 == 1)
                .collect()
        })
        .collect()
}

/// Net upward current through the central column of a DCQ: the sum of
/// vertical bond currents strictly between the vortex columns, within the
/// quartet's vertical extent.
pub fn dcq_net_vertical_current(
    graph: &BondGraph,
    dcq: &DcqSpec,
    bond_currents: &[f64],
) -> f64 {
    let xoff = dcq.x_offset();
    let mut net = 0.0;
    for (b, bond) in graph.bonds().iter().enumerate() {
        if bond.axis != Axis::Y {
            continue;
        }
        let (x, y) = graph.coord(bond.tail);
        let xm = x as f64;
        let ym = y as f64 + 0.5;
        if (xm - dcq.center.0).abs() < xoff && (ym - dcq.center.1).abs() <= xoff + 1.0 {
            net += bond_currents[b];
        }
    }
    net
}

/// U/D letters per DCQ for one solved state. Nets below 1e-8 yield '?'.
pub fn label_state(graph: &BondGraph, dcqs: &[DcqSpec], state: &CurrentState) -> String {
    dcqs.iter()
        .map(|d| {
            let net = dcq_net_vertical_current(graph, d, &state.bond_currents);
            if net > 1e-8 {
                'U'
            } else if net < -1e-8 {
                'D'
            } else {
                '?'
            }
        })
        .collect()
}

/// Scaled union of the named feeds: `magnitudes[name]` multiplies the unit
/// terminals of feed `name`.
pub fn compose_feeds(
    feeds: &BTreeMap<String, FeedSpec>,
    magnitudes: &BTreeMap<String, f64>,
) -> Result<FeedSpec> {
    let mut out = FeedSpec::default();
    for (name, mag) in magnitudes {
        if *mag == 0.0 {
            continue;
        }
        let unit = feeds
            .get(name)
            .ok_or_else(|| Error::Config(format!("feed '{name}' is not declared in the layout")))?;
        let scaled = unit.scaled(*mag);
        out.sources.extend(scaled.sources);
        out.drains.extend(scaled.drains);
    }
    Ok(out)
}

/// One spectrum evaluation: the eight (or `2^n`) basis states solved with
/// the given feed magnitudes, the magnetic coupling diagonalized, and the
/// per-state current labels.
pub struct SpectrumPoint {
    pub states: Vec<CurrentState>,
    pub spectrum: SpectrumStates,
    /// Current-derived U/D word per basis state (pattern order).
    pub basis_current_labels: Vec<String>,
    /// Transition dipoles in the orthogonalized basis, when requested.
    pub dipoles: Option<DipoleMatrix>,
}

pub struct SpectrumSolver<'a> {
    pub ctx: &'a ChiContext<'a>,
    pub mf: &'a crate::meanfield::MeanFieldSolution,
    pub layout: &'a QubitLayout,
    pub hb_op: OneBodyOperator,
    pub hf_ops: Vec<OneBodyOperator>,
    pub chi_opts: ChiSolveOptions,
}

impl<'a> SpectrumSolver<'a> {
    pub fn new(
        ctx: &'a ChiContext<'a>,
        mf: &'a crate::meanfield::MeanFieldSolution,
        layout: &'a QubitLayout,
    ) -> Self {
        let hb_op = magnetic_operator(&layout.field, ctx.graph, mf.params.t);
        let hf_ops = crate::observables::hf_operator(mf, ctx.graph);
        SpectrumSolver {
            ctx,
            mf,
            layout,
            hb_op,
            hf_ops,
            chi_opts: ChiSolveOptions::default(),
        }
    }

    /// Solve the full basis at the given feed magnitudes. `warm` carries
    /// per-pattern site potentials from a previous call.
    pub fn solve_point(
        &self,
        magnitudes: &BTreeMap<String, f64>,
        warm: Option<&[Vec<f64>]>,
    ) -> Result<SpectrumPoint> {
        self.solve_point_full(magnitudes, warm, false)
    }

    /// [`Self::solve_point`] with optional transition-dipole assembly (one
    /// extra pair of operators in the same pass).
    pub fn solve_point_full(
        &self,
        magnitudes: &BTreeMap<String, f64>,
        warm: Option<&[Vec<f64>]>,
        with_dipoles: bool,
    ) -> Result<SpectrumPoint> {
        let feed = compose_feeds(&self.layout.feeds, magnitudes)?;
        let assignments = basis_assignments(self.layout.dcqs.len());
        let patterns: Vec<WindingPattern> = assignments
            .iter()
            .map(|a| assignment_pattern(self.ctx, &self.layout.dcqs, a))
            .collect::<Result<_>>()?;

        let solve_one = |(i, p): (usize, &WindingPattern)| -> Result<CurrentState> {
            let start = warm.and_then(|w| w.get(i)).map(|v| v.as_slice());
            solve_chi(self.ctx, p, &feed, &self.chi_opts, start)
        };
        let states: Vec<CurrentState> = {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                patterns
                    .par_iter()
                    .enumerate()
                    .map(solve_one)
                    .collect::<Result<Vec<_>>>()?
            }
            #[cfg(not(feature = "parallel"))]
            {
                patterns
                    .iter()
                    .enumerate()
                    .map(solve_one)
                    .collect::<Result<Vec<_>>>()?
            }
        };

        let refs: Vec<&CurrentState> = states.iter().collect();
        let mut ops: Vec<&OneBodyOperator> = vec![&self.hb_op];
        ops.extend(self.hf_ops.iter());
        let mu_ops = if with_dipoles {
            Some((
                dipole_operator(self.ctx.graph, crate::lattice::Axis::X),
                dipole_operator(self.ctx.graph, crate::lattice::Axis::Y),
            ))
        } else {
            None
        };
        if let Some((mx, my)) = &mu_ops {
            ops.push(mx);
            ops.push(my);
        }
        let coupling = assemble_coupling(self.mf, self.ctx.graph, &refs, &ops)?;
        let hf_indices: Vec<usize> = (1..=self.hf_ops.len()).collect();
        let spectrum = diagonalize_basis(&coupling, 0, &hf_indices)?;
        let dipoles = mu_ops.map(|_| {
            let n_ops = coupling.operators.len();
            transition_dipoles(
                &spectrum,
                &coupling.operators[n_ops - 2],
                &coupling.operators[n_ops - 1],
            )
        });
        let basis_current_labels = states
            .iter()
            .map(|s| label_state(self.ctx.graph, &self.layout.dcqs, s))
            .collect();
        Ok(SpectrumPoint {
            states,
            spectrum,
            basis_current_labels,
            dipoles,
        })
    }
}

/// Sweep request: vary `parameter` over `grid`, hold `fixed` feeds
/// constant, and optionally lock other feeds to `ratios[name] * parameter`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub fixed: BTreeMap<String, f64>,
    pub ratios: BTreeMap<String, f64>,
    pub refine_levels: usize,
}

/// A detected level crossing between two tracked states.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub state_a: String,
    pub state_b: String,
    /// Parameter value by interpolation of the tracked curves.
    pub parameter: f64,
}

/// Label-tracked energy curves over a feed sweep.
pub struct SpectrumSweep {
    pub parameter: String,
    pub grid: Vec<f64>,
    /// Fixed feed magnitudes at every point.
    pub fixed: BTreeMap<String, f64>,
    /// Tracked state labels, fixed at the first solvable grid point.
    pub state_labels: Vec<String>,
    /// `energies[point][tracked]`, `None` where the point failed.
    pub energies: Vec<Option<Vec<f64>>>,
    pub crossings: Vec<Crossing>,
    /// Tracking overlaps that fell below 0.5 (point index, tracked index).
    pub weak_tracking: Vec<(usize, usize)>,
}

fn magnitudes_at(spec: &SweepSpec, value: f64) -> BTreeMap<String, f64> {
    let mut m = spec.fixed.clone();
    for (name, r) in &spec.ratios {
        m.insert(name.clone(), r * value);
    }
    m.insert(spec.parameter.clone(), value);
    m
}

/// Greedy column matching of coefficient overlaps between two spectra;
/// returns for each previous-state index the matching current-state index
/// and the overlap magnitude.
fn match_states(
    prev: &SpectrumStates,
    cur: &SpectrumStates,
) -> Vec<(usize, f64)> {
    let n = prev.total_energies.len();
    let mut overlap = vec![vec![0.0f64; n]; n];
    #[allow(clippy::needless_range_loop)]
    for a in 0..n {
        for b in 0..n {
            let mut dot = crate::linalg::c64::new(0.0, 0.0);
            for p in 0..n {
                dot += prev.coefficients[(p, a)].conj() * cur.coefficients[(p, b)];
            }
            overlap[a][b] = dot.norm();
        }
    }
    let mut taken = vec![false; n];
    let mut out = vec![(0usize, 0.0f64); n];
    // Assign strongest overlaps first.
    let mut order: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .collect();
    order.sort_by(|&(a1, b1), &(a2, b2)| overlap[a2][b2].partial_cmp(&overlap[a1][b1]).unwrap());
    let mut assigned = vec![false; n];
    for (a, b) in order {
        if !assigned[a] && !taken[b] {
            assigned[a] = true;
            taken[b] = true;
            out[a] = (b, overlap[a][b]);
        }
    }
    out
}

/// Run the sweep: one spectrum per grid point with warm-started phase
/// solves, eigenvector-overlap label tracking, crossing detection on the
/// tracked curves, and bisection refinement of each crossing.
pub fn sweep_feed(solver: &SpectrumSolver<'_>, spec: &SweepSpec) -> Result<SpectrumSweep> {
    let n_states = 1usize << solver.layout.dcqs.len();
    let mut energies: Vec<Option<Vec<f64>>> = Vec::with_capacity(spec.grid.len());
    let mut weak_tracking = Vec::new();
    let mut state_labels: Vec<String> = Vec::new();
    // tracked index -> current spectrum slot, for the latest solved point.
    let mut tracked_to_slot: Vec<usize> = (0..n_states).collect();
    let mut prev_spectrum: Option<SpectrumStates> = None;
    let mut warm: Option<Vec<Vec<f64>>> = None;

    let mut eval = |value: f64,
                    warm: &mut Option<Vec<Vec<f64>>>,
                    prev_spectrum: &mut Option<SpectrumStates>,
                    tracked_to_slot: &mut Vec<usize>,
                    state_labels: &mut Vec<String>,
                    weak: &mut Vec<(usize, usize)>,
                    point_index: Option<usize>|
     -> Result<Option<Vec<f64>>> {
        let mags = magnitudes_at(spec, value);
        match solver.solve_point(&mags, warm.as_deref()) {
            Ok(point) => {
                // Warm starts keyed by pattern order, which is stable.
                *warm = Some(point.states.iter().map(|s| s.site_potentials.clone()).collect());
                let spectrum = point.spectrum;
                if state_labels.is_empty() {
                    *state_labels = (0..n_states)
                        .map(|a| {
                            // Label by the current-derived word of the
                            // dominant basis pattern.
                            let dominant = &spectrum.state_labels[a];
                            let idx = point
                                .states
                                .iter()
                                .position(|s| &s.pattern.label == dominant)
                                .unwrap();
                            point.basis_current_labels[idx].clone()
                        })
                        .collect();
                    *tracked_to_slot = (0..n_states).collect();
                } else if let Some(prev) = prev_spectrum.as_ref() {
                    let matches = match_states(prev, &spectrum);
                    let mut new_map = vec![0usize; n_states];
                    for t in 0..n_states {
                        let (slot, ov) = matches[tracked_to_slot[t]];
                        new_map[t] = slot;
                        if ov < 0.5 {
                            if let Some(pi) = point_index {
                                weak.push((pi, t));
                            }
                        }
                    }
                    *tracked_to_slot = new_map;
                }
                let e: Vec<f64> = tracked_to_slot
                    .iter()
                    .map(|&slot| spectrum.total_energies[slot])
                    .collect();
                *prev_spectrum = Some(spectrum);
                Ok(Some(e))
            }
            Err(Error::SolverFailure(msg)) => {
                log::warn!("sweep point {value}: {msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    for (i, &value) in spec.grid.iter().enumerate() {
        let e = eval(
            value,
            &mut warm,
            &mut prev_spectrum,
            &mut tracked_to_slot,
            &mut state_labels,
            &mut weak_tracking,
            Some(i),
        )?;
        energies.push(e);
    }

    // Crossing detection on tracked curves, then bisection refinement.
    let mut crossings = Vec::new();
    for a in 0..n_states {
        for b in (a + 1)..n_states {
            for i in 1..spec.grid.len() {
                let (Some(e0), Some(e1)) = (&energies[i - 1], &energies[i]) else {
                    continue;
                };
                let d0 = e0[a] - e0[b];
                let d1 = e1[a] - e1[b];
                if d1 == 0.0 && d0 != 0.0 {
                    crossings.push(Crossing {
                        state_a: state_labels[a].clone(),
                        state_b: state_labels[b].clone(),
                        parameter: spec.grid[i],
                    });
                    continue;
                }
                if d0 == 0.0 || d0 * d1 >= 0.0 {
                    continue;
                }
                let (mut x0, mut x1) = (spec.grid[i - 1], spec.grid[i]);
                let (mut f0, mut f1) = (d0, d1);
                // Refinement keeps its own tracking state so the outer
                // sweep's maps are not disturbed.
                for _ in 0..spec.refine_levels {
                    let xm = 0.5 * (x0 + x1);
                    let mut warm_r = warm.clone();
                    let mut prev_r = prev_spectrum.clone();
                    let mut map_r = tracked_to_slot.clone();
                    let mut labels_r = state_labels.clone();
                    let mut weak_r = Vec::new();
                    match eval(
                        xm,
                        &mut warm_r,
                        &mut prev_r,
                        &mut map_r,
                        &mut labels_r,
                        &mut weak_r,
                        None,
                    )? {
                        Some(em) => {
                            let fm = em[a] - em[b];
                            if f0 * fm <= 0.0 {
                                x1 = xm;
                                f1 = fm;
                            } else {
                                x0 = xm;
                                f0 = fm;
                            }
                        }
                        None => break,
                    }
                }
                let t = f0 / (f0 - f1);
                crossings.push(Crossing {
                    state_a: state_labels[a].clone(),
                    state_b: state_labels[b].clone(),
                    parameter: x0 + t * (x1 - x0),
                });
            }
        }
    }

    Ok(SpectrumSweep {
        parameter: spec.parameter.clone(),
        grid: spec.grid.clone(),
        fixed: spec.fixed.clone(),
        state_labels,
        energies,
        crossings,
        weak_tracking,
    })
}

/// Sign changes of tracked energy differences on an existing sweep (the
/// crossing list is rebuilt without refinement; used on synthetic data).
pub fn detect_crossings(sweep: &SpectrumSweep) -> Vec<Crossing> {
    let n = sweep.state_labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            for i in 1..sweep.grid.len() {
                let (Some(e0), Some(e1)) = (&sweep.energies[i - 1], &sweep.energies[i]) else {
                    continue;
                };
                let d0 = e0[a] - e0[b];
                let d1 = e1[a] - e1[b];
                if d1 == 0.0 && d0 != 0.0 {
                    out.push(Crossing {
                        state_a: sweep.state_labels[a].clone(),
                        state_b: sweep.state_labels[b].clone(),
                        parameter: sweep.grid[i],
                    });
                } else if d0 != 0.0 && d0 * d1 < 0.0 {
                    let t = d0 / (d0 - d1);
                    out.push(Crossing {
                        state_a: sweep.state_labels[a].clone(),
                        state_b: sweep.state_labels[b].clone(),
                        parameter: sweep.grid[i - 1] + t * (sweep.grid[i] - sweep.grid[i - 1]),
                    });
                }
            }
        }
    }
    out
}
