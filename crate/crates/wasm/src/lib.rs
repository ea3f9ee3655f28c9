//! Browser demo bindings: a single spin-vortex quartet explored
//! interactively. The exported methods return JSON payloads that the static
//! page renders onto canvases; all numbers are computed by the same core
//! crate the command-line tool uses.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use svilc_core::chi::{solve_chi, ChiContext, ChiSolveOptions, FeedSpec, WindingPattern};
use svilc_core::lattice::{build_lattice, plaquette_loop_basis, BondGraph, LoopBasis};
use svilc_core::meanfield::{
    build_svq_texture, scf_solve_guarded, staggered_azimuth, HubbardParams, MeanFieldSolution,
    ScfOptions, TextureGuard, VortexSpec,
};
use svilc_core::observables::{
    assemble_coupling, diagonalize_basis, dipole_operator, hf_operator, magnetic_operator,
    transition_dipoles, FieldPolynomial, OneBodyOperator,
};

#[derive(Serialize)]
struct TexturePayload {
    nx: i32,
    ny: i32,
    /// Per site: x, y, spin azimuth, spin magnitude, occupation.
    sites: Vec<(i32, i32, f64, f64, f64)>,
    /// Vortex centers: x, y, staggered winding.
    vortices: Vec<(f64, f64, i8)>,
    scf_iterations: usize,
    scf_residual: f64,
}

#[derive(Serialize)]
struct CurrentsPayload {
    /// Per bond: x1, y1, x2, y2, current (2et/hbar, tail to head).
    bonds: Vec<(i32, i32, i32, i32, f64)>,
    energy_mev: f64,
    label: String,
    /// Net upward current through the central column.
    net_vertical: f64,
    max_current: f64,
}

#[derive(Serialize)]
struct SweepPayload {
    grid: Vec<f64>,
    labels: Vec<String>,
    /// energies[state][point], meV, shifted so the first point sits at 0.
    energies: Vec<Vec<f64>>,
    /// Transition dipole |mu_y| and |mu_x| between the two states.
    mu_y: f64,
    mu_x: f64,
}

/// One interactive quartet: the mean field is solved once at construction,
/// pattern states and sweeps are computed on demand.
#[wasm_bindgen]
pub struct QuartetDemo {
    graph: BondGraph,
    basis: LoopBasis,
    mf: MeanFieldSolution,
    vortices: Vec<VortexSpec>,
    feed: FeedSpec,
    with_field: bool,
}

fn demo_field() -> FieldPolynomial {
    FieldPolynomial::dcq_quadratic()
}

#[wasm_bindgen]
impl QuartetDemo {
    /// Build an `n x n` plane (6 or 8) hosting one quartet, and converge
    /// its mean field. `with_field` applies the quadratic splitting profile
    /// of the two-state demonstration.
    #[wasm_bindgen(constructor)]
    pub fn new(n: i32, with_field: bool) -> Result<QuartetDemo, JsValue> {
        Self::build(n, with_field).map_err(|e| JsValue::from_str(&e.to_string()))
    }

    fn build(n: i32, with_field: bool) -> svilc_core::Result<QuartetDemo> {
        let n = n.clamp(6, 10);
        let spec = svilc_core::lattice::LatticeSpec::plain(n, n);
        let graph = build_lattice(&spec)?;
        let basis = plaquette_loop_basis(&graph)?;
        let c = (n as f64 + 1.0) / 2.0; // geometric center, half-integer
        let off = 1.0;
        let plaq = |dx: f64, dy: f64| ((c + dx - 0.5) as i32, (c + dy - 0.5) as i32);
        let vortices = vec![
            VortexSpec { plaquette: plaq(-off, off), winding: 1 },
            VortexSpec { plaquette: plaq(off, off), winding: -1 },
            VortexSpec { plaquette: plaq(-off, -off), winding: -1 },
            VortexSpec { plaquette: plaq(off, -off), winding: 1 },
        ];
        let params = HubbardParams::cuprate(graph.site_count() - 4);
        let seed = build_svq_texture(&graph, &vortices, &params, false)?;
        let guard = TextureGuard::for_vortices(&graph, &vortices, &seed)?;
        let opts = ScfOptions {
            tol: 1e-7,
            max_iter: 1500,
            ..Default::default()
        };
        let mf = scf_solve_guarded(&params, &seed, &graph, &opts, Some(&guard))?;
        let lo = 2;
        let hi = n - 1;
        let feed = FeedSpec {
            sources: vec![((lo, 1), 1.0), ((hi, n), 1.0)],
            drains: vec![((hi, 1), 1.0), ((lo, n), 1.0)],
        };
        Ok(QuartetDemo {
            graph,
            basis,
            mf,
            vortices,
            feed,
            with_field,
        })
    }

    /// The converged spin texture.
    pub fn texture(&self) -> String {
        let stag = staggered_azimuth(&self.graph, &self.mf.fields);
        let payload = TexturePayload {
            nx: self.graph.nx,
            ny: self.graph.ny,
            sites: self
                .graph
                .sites()
                .iter()
                .enumerate()
                .map(|(j, &(x, y))| {
                    (
                        x,
                        y,
                        self.mf.fields.azimuth[j],
                        self.mf.fields.magnitude[j],
                        self.mf.fields.occupation[j],
                    )
                })
                .collect(),
            vortices: self
                .vortices
                .iter()
                .map(|v| {
                    let ring =
                        svilc_core::lattice::vortex_ring(&self.graph, v.plaquette.0, v.plaquette.1)
                            .unwrap();
                    let w = svilc_core::lattice::winding_number(&stag, &ring).unwrap_or(0);
                    (
                        v.plaquette.0 as f64 + 0.5,
                        v.plaquette.1 as f64 + 0.5,
                        w as i8,
                    )
                })
                .collect(),
            scf_iterations: self.mf.iterations,
            scf_residual: self.mf.residual,
        };
        serde_json::to_string(&payload).unwrap()
    }

    /// Solve one winding pattern. `signs` is a four-character word over
    /// `+`/`-`, one per vortex (TL, TR, BL, BR); `feed_j` scales the demo
    /// feed terminals.
    pub fn currents(&self, signs: &str, feed_j: f64) -> Result<String, JsValue> {
        self.currents_impl(signs, feed_j)
            .map_err(|e| JsValue::from_str(&e.to_string()))
    }

    fn currents_impl(&self, signs: &str, feed_j: f64) -> svilc_core::Result<String> {
        let ctx = ChiContext::new(&self.graph, &self.basis, &self.mf)?;
        let pattern = self.pattern_from_signs(&ctx, signs)?;
        let feed = self.feed.scaled(feed_j);
        let state = solve_chi(&ctx, &pattern, &feed, &ChiSolveOptions::default(), None)?;
        let mut net = 0.0;
        let cx = (self.graph.nx as f64 + 1.0) / 2.0;
        for (b, bond) in self.graph.bonds().iter().enumerate() {
            if let svilc_core::lattice::Axis::Y = bond.axis {
                let (x, _) = self.graph.coord(bond.tail);
                if (x as f64 - cx).abs() < 1.0 {
                    net += state.bond_currents[b];
                }
            }
        }
        let max_current = state
            .bond_currents
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let payload = CurrentsPayload {
            bonds: self
                .graph
                .bonds()
                .iter()
                .enumerate()
                .map(|(b, bond)| {
                    let (x1, y1) = self.graph.coord(bond.tail);
                    let (x2, y2) = self.graph.coord(bond.head);
                    (x1, y1, x2, y2, state.bond_currents[b])
                })
                .collect(),
            energy_mev: state.energy,
            label: pattern.label.clone(),
            net_vertical: net,
            max_current,
        };
        Ok(serde_json::to_string(&payload).unwrap())
    }

    fn pattern_from_signs(
        &self,
        ctx: &ChiContext<'_>,
        signs: &str,
    ) -> svilc_core::Result<WindingPattern> {
        let chars: Vec<char> = signs.chars().collect();
        if chars.len() != self.vortices.len() {
            return Err(svilc_core::Error::InvalidSpec(format!(
                "need {} signs, got '{signs}'",
                self.vortices.len()
            )));
        }
        let mut targets = vec![0i32; self.basis.n_loops()];
        for (v, &c) in self.vortices.iter().zip(&chars) {
            let face = self.basis.plaquette_index(v.plaquette).ok_or_else(|| {
                svilc_core::Error::InvalidSpec("vortex face missing from basis".into())
            })?;
            targets[face] = match c {
                '+' => 1,
                '-' => -1,
                other => {
                    return Err(svilc_core::Error::InvalidSpec(format!(
                        "sign '{other}' is not + or -"
                    )))
                }
            };
        }
        Ok(WindingPattern {
            targets,
            label: signs.to_string(),
        })
    }

    /// Energy of the two dipole-current states versus the feed current,
    /// with the transition dipole between them.
    pub fn sweep(&self, j_max: f64, steps: usize) -> Result<String, JsValue> {
        self.sweep_impl(j_max, steps)
            .map_err(|e| JsValue::from_str(&e.to_string()))
    }

    fn sweep_impl(&self, j_max: f64, steps: usize) -> svilc_core::Result<String> {
        let steps = steps.clamp(2, 48);
        let ctx = ChiContext::new(&self.graph, &self.basis, &self.mf)?;
        // Up / down assignments: left column minus for up (current runs
        // against the twist gradient).
        let cx = (self.graph.nx as f64 + 1.0) / 2.0;
        let words = ["U", "D"];
        let mut patterns = Vec::new();
        for up in [true, false] {
            let mut targets = vec![0i32; self.basis.n_loops()];
            for v in &self.vortices {
                let face = self.basis.plaquette_index(v.plaquette).unwrap();
                let left = (v.plaquette.0 as f64 + 0.5) < cx;
                targets[face] = if left == up { -1 } else { 1 };
            }
            patterns.push(WindingPattern {
                targets,
                label: if up { "u".into() } else { "d".into() },
            });
        }
        let field = if self.with_field {
            demo_field()
        } else {
            FieldPolynomial::zero()
        };
        let hb = magnetic_operator(&field, &self.graph, self.mf.params.t);
        let hf_ops = hf_operator(&self.mf, &self.graph);
        let mu_x = dipole_operator(&self.graph, svilc_core::lattice::Axis::X);
        let mu_y = dipole_operator(&self.graph, svilc_core::lattice::Axis::Y);

        let grid: Vec<f64> = (0..steps)
            .map(|i| j_max * i as f64 / (steps - 1) as f64)
            .collect();
        let mut energies = vec![Vec::with_capacity(grid.len()); 2];
        let mut mu_y_val = 0.0;
        let mut mu_x_val = 0.0;
        let mut warm: Vec<Option<Vec<f64>>> = vec![None, None];
        let mut base = [0.0f64; 2];
        for (pi, &j) in grid.iter().enumerate() {
            let feed = self.feed.scaled(j);
            let states: Vec<_> = patterns
                .iter()
                .zip(warm.iter())
                .map(|(p, w)| {
                    solve_chi(&ctx, p, &feed, &ChiSolveOptions::default(), w.as_deref())
                })
                .collect::<svilc_core::Result<_>>()?;
            warm = states.iter().map(|s| Some(s.site_potentials.clone())).collect();
            let refs: Vec<&_> = states.iter().collect();
            let mut ops: Vec<&OneBodyOperator> = vec![&hb];
            ops.extend(hf_ops.iter());
            ops.push(&mu_x);
            ops.push(&mu_y);
            let coupling = assemble_coupling(&self.mf, &self.graph, &refs, &ops)?;
            let hf_idx: Vec<usize> = (1..=hf_ops.len()).collect();
            let spectrum = diagonalize_basis(&coupling, 0, &hf_idx)?;
            if pi == 0 {
                let n_ops = coupling.operators.len();
                let dip = transition_dipoles(
                    &spectrum,
                    &coupling.operators[n_ops - 2],
                    &coupling.operators[n_ops - 1],
                );
                mu_x_val = dip.mu_x[(0, 1)].norm();
                mu_y_val = dip.mu_y[(0, 1)].norm();
                base = [spectrum.total_energies[0], spectrum.total_energies[1]];
            }
            for s in 0..2 {
                energies[s].push(spectrum.total_energies[s] - base[s]);
            }
        }
        let payload = SweepPayload {
            grid,
            labels: words.iter().map(|s| s.to_string()).collect(),
            energies,
            mu_y: mu_y_val,
            mu_x: mu_x_val,
        };
        Ok(serde_json::to_string(&payload).unwrap())
    }
}

/// Crate version, for the page footer.
#[wasm_bindgen]
pub fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}
