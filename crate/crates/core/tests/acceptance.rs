//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers (run with `--nocapture` to see them).
//!
//! The expensive three-qubit fixtures are cached as mean-field checkpoints
//! under the target tmp directory, so repeated runs only pay for the first.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use svilc_core::chi::{
    enumerate_patterns, loop_circulations, solve_chi, ChiContext, ChiSolveOptions, FeedSpec,
    WindingPattern,
};
use svilc_core::config::RunConfig;
use svilc_core::lattice::{build_lattice, plaquette_loop_basis, LatticeSpec};
use svilc_core::linalg::{self, c64};
use svilc_core::meanfield::{build_svq_texture, scf_solve, HubbardParams, ScfOptions};
use svilc_core::pipeline::{write_crossings, write_currents, write_spectrum, write_sweep, Workspace};
use svilc_core::qubit::{sweep_feed, SpectrumPoint, SpectrumSolver, SweepSpec};
use svilc_core::verify;

fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("svilc-acceptance-cache");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

struct Fixture {
    ws: Workspace,
    mf: svilc_core::meanfield::MeanFieldSolution,
}

fn build_fixture(preset: &str, cache_name: &str) -> Fixture {
    let cfg = RunConfig::preset(preset).unwrap();
    let ws = Workspace::new(cfg).unwrap();
    let ckpt = cache_dir().join(cache_name);
    let mf = ws.solve_meanfield(Some(&ckpt)).unwrap();
    Fixture { ws, mf }
}

fn desk() -> &'static Fixture {
    static DESK: OnceLock<Fixture> = OnceLock::new();
    DESK.get_or_init(|| build_fixture("desk-1svq", "desk_mf.bin"))
}

fn paper() -> &'static Fixture {
    static PAPER: OnceLock<Fixture> = OnceLock::new();
    PAPER.get_or_init(|| build_fixture("paper-3dcq", "paper_mf.bin"))
}

/// The three-qubit spectrum and dipoles with no feed currents.
fn paper_zero_point() -> &'static SpectrumPoint {
    static POINT: OnceLock<SpectrumPoint> = OnceLock::new();
    POINT.get_or_init(|| {
        let fix = paper();
        svilc_core::pipeline::run_spectrum(&fix.ws, &fix.mf, &BTreeMap::new(), true).unwrap()
    })
}

// ----------------------------------------------------------------------
// 1. SCF correctness against an independently coded dense HF reference.
// ----------------------------------------------------------------------
#[test]
fn acceptance_01_scf_matches_reference_hf() {
    let start = Instant::now();
    let g = build_lattice(&LatticeSpec::plain(4, 4)).unwrap();
    let params = HubbardParams::cuprate(16);
    let seed = build_svq_texture(&g, &[], &params, true).unwrap();
    let opts = ScfOptions {
        tol: 1e-10,
        max_iter: 4000,
        ..Default::default()
    };
    let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
    assert!(sol.converged, "production SCF did not converge");
    let reference =
        verify::reference_hf_energy(&g, params.t, params.u, 16, &seed, 1e-10, 20000).unwrap();
    let rel = ((sol.total_energy - reference) / reference).abs();
    let elapsed = start.elapsed();
    assert!(
        rel <= 1e-8,
        "total energy {} vs reference {} (relative {rel:.2e})",
        sol.total_energy,
        reference
    );
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 (scf vs reference HF): PASS - E = {:.9} meV vs {:.9} meV, relative {:.2e}, {:?}",
        sol.total_energy, reference, rel, elapsed
    );
}

// ----------------------------------------------------------------------
// 2. Winding exactness and parity for all 16 desk patterns.
// ----------------------------------------------------------------------
#[test]
fn acceptance_02_winding_exactness() {
    let fix = desk();
    let ctx = ChiContext::new(&fix.ws.graph, &fix.ws.basis, &fix.mf).unwrap();
    let patterns = enumerate_patterns(&ctx);
    assert_eq!(patterns.len(), 16, "one quartet must give 16 patterns");
    let mut worst = 0.0f64;
    for p in &patterns {
        // Parity against the texture on every basis loop.
        for (l, (&wb, &wx)) in p.targets.iter().zip(&ctx.xi_windings).enumerate() {
            assert_eq!(
                (wb + wx).rem_euclid(2),
                0,
                "pattern {} violates parity on loop {l}",
                p.label
            );
        }
        // Vortex rings carry |w| = 1.
        for &f in &ctx.vortex_faces {
            assert_eq!(p.targets[f].abs(), 1, "pattern {}", p.label);
        }
        let state = solve_chi(&ctx, p, &FeedSpec::default(), &Default::default(), None).unwrap();
        let circ = loop_circulations(&ctx, &state.chi);
        for (l, (&c, &t)) in circ.iter().zip(&p.targets).enumerate() {
            let err = (c - f64::from(t)).abs();
            worst = worst.max(err);
            assert!(
                err < 1e-10,
                "pattern {} loop {l}: circulation {c} vs target {t}",
                p.label
            );
        }
    }
    println!(
        "ACCEPTANCE 2 (winding exactness): PASS - 16 patterns, worst circulation error {worst:.2e} turns"
    );
}

// ----------------------------------------------------------------------
// 3. Current conservation and multiplier/expectation consistency over
//    randomized small instances, with a finite-difference multiplier
//    oracle.
// ----------------------------------------------------------------------
struct SplitMix(u64);
impl SplitMix {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    fn uniform(&mut self) -> f64 {
        self.next_u64() as f64 / u64::MAX as f64
    }
    fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Independent Eq.-(12)-style reconstruction: fit loop and feed-closure
/// multipliers to the finite-difference energy gradient, then rebuild the
/// bond currents from them.
fn fd_multiplier_currents(
    ctx: &ChiContext<'_>,
    state: &svilc_core::chi::CurrentState,
    q: &[f64],
) -> Vec<f64> {
    use faer::Mat;
    let graph = ctx.graph;
    let nb = graph.bond_count();
    // Finite-difference dE/dtwist.
    let h = 1e-6;
    let mut grad = vec![0.0; nb];
    let mut tw = state.chi.twist.clone();
    for b in 0..nb {
        let orig = tw[b];
        tw[b] = orig + h;
        let ep = ctx.energy_parts(&tw).0;
        tw[b] = orig - h;
        let em = ctx.energy_parts(&tw).0;
        tw[b] = orig;
        grad[b] = (ep - em) / (2.0 * h);
    }
    // Columns: basis loops plus BFS tree paths from the first terminal to
    // every other terminal (the feed closure loops).
    let mut cols: Vec<Vec<(usize, f64)>> = ctx
        .basis
        .loops
        .iter()
        .map(|l| l.bonds.iter().map(|&(b, s)| (b, f64::from(s))).collect())
        .collect();
    let terminals: Vec<usize> = (0..graph.site_count()).filter(|&s| q[s] != 0.0).collect();
    if terminals.len() >= 2 {
        // BFS parents.
        let mut parent: Vec<Option<(usize, usize, bool)>> = vec![None; graph.site_count()];
        let mut seen = vec![false; graph.site_count()];
        let mut queue = std::collections::VecDeque::new();
        seen[terminals[0]] = true;
        queue.push_back(terminals[0]);
        while let Some(u) = queue.pop_front() {
            for inc in graph.neighbors(u) {
                if !seen[inc.neighbor] {
                    seen[inc.neighbor] = true;
                    parent[inc.neighbor] = Some((u, inc.bond, inc.outgoing));
                    queue.push_back(inc.neighbor);
                }
            }
        }
        for &t in &terminals[1..] {
            let mut path = Vec::new();
            let mut cur = t;
            while let Some((p, bond, outgoing)) = parent[cur] {
                path.push((bond, if outgoing { 1.0 } else { -1.0 }));
                cur = p;
                if cur == terminals[0] {
                    break;
                }
            }
            cols.push(path);
        }
    }
    // Least squares: columns * lambda = -dE/ddelta_chi = -grad/2.
    let ncols = cols.len();
    let mut ata = Mat::<f64>::zeros(ncols, ncols);
    let mut atb = Mat::<f64>::zeros(ncols, 1);
    for (i, ci) in cols.iter().enumerate() {
        for (j, cj) in cols.iter().enumerate() {
            let mut dot = 0.0;
            for &(b1, s1) in ci {
                for &(b2, s2) in cj {
                    if b1 == b2 {
                        dot += s1 * s2;
                    }
                }
            }
            ata[(i, j)] = dot;
        }
        ata[(i, i)] += 1e-12;
        let mut rhs = 0.0;
        for &(b, s) in ci {
            rhs += s * (-grad[b] / 2.0);
        }
        atb[(i, 0)] = rhs;
    }
    let lam = linalg::solve_real(ata.as_ref(), atb.as_ref());
    let mut j12 = vec![0.0; nb];
    for (i, ci) in cols.iter().enumerate() {
        for &(b, s) in ci {
            j12[b] += s * lam[(i, 0)] / ctx.t;
        }
    }
    j12
}

#[test]
fn acceptance_03_conservation_and_multiplier_consistency() {
    let mut rng = SplitMix(0x5351_1e55);
    let mut instances = 0usize;
    let mut worst_div = 0.0f64;
    let mut worst_rel = 0.0f64;
    while instances < 100 {
        let nx = 3 + rng.below(3) as i32; // 3..=5
        let ny = 3 + rng.below(3) as i32;
        let mut spec = LatticeSpec::plain(nx, ny);
        if rng.below(3) == 0 {
            spec.barrier_sites.insert((
                1 + rng.below(nx as usize) as i32,
                1 + rng.below(ny as usize) as i32,
            ));
        }
        let Ok(g) = build_lattice(&spec) else { continue };
        let basis = match plaquette_loop_basis(&g) {
            Ok(b) if b.n_loops() > 0 => b,
            _ => continue,
        };
        let n_e = g.site_count(); // half filling: gapped and stable
        let params = HubbardParams::cuprate(n_e);
        let seed = build_svq_texture(&g, &[], &params, true).unwrap();
        let opts = ScfOptions {
            tol: 1e-10,
            max_iter: 3000,
            ..Default::default()
        };
        let Ok(sol) = scf_solve(&params, &seed, &g, &opts) else { continue };
        if !sol.converged {
            continue;
        }
        let ctx = ChiContext::new(&g, &basis, &sol).unwrap();

        // Random even winding targets on a random face, sometimes zero.
        let mut targets = vec![0i32; basis.n_loops()];
        if rng.below(2) == 0 {
            targets[rng.below(basis.n_loops())] = if rng.below(2) == 0 { 2 } else { -2 };
        }
        // Random balanced feed between two distinct sites.
        let feed = if rng.below(4) != 0 {
            let a = rng.below(g.site_count());
            let mut b = rng.below(g.site_count());
            while b == a {
                b = rng.below(g.site_count());
            }
            let j = 0.005 + 0.02 * rng.uniform();
            let (ax, ay) = g.coord(a);
            let (bx, by) = g.coord(b);
            FeedSpec {
                sources: vec![((ax, ay), j)],
                drains: vec![((bx, by), j)],
            }
        } else {
            FeedSpec::default()
        };

        let pattern = WindingPattern {
            targets,
            label: format!("rnd{instances}"),
        };
        let opts = ChiSolveOptions {
            grad_tol: 1e-12,
            ..Default::default()
        };
        let Ok(state) = solve_chi(&ctx, &pattern, &feed, &opts, None) else {
            continue;
        };

        // Conservation: divergence equals the injected currents.
        let q = feed.site_currents(&g).unwrap();
        let div = ctx.divergence(&state.bond_currents);
        for s in 0..g.site_count() {
            worst_div = worst_div.max((div[s] - q[s]).abs());
        }

        // Multiplier route from the finite-difference gradient.
        let j12 = fd_multiplier_currents(&ctx, &state, &q);
        let scale = state
            .bond_currents
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-3);
        for b in 0..g.bond_count() {
            let rel = (j12[b] - state.bond_currents[b]).abs() / scale;
            worst_rel = worst_rel.max(rel);
        }
        instances += 1;
    }
    assert!(worst_div <= 1e-10, "worst node residual {worst_div:.2e}");
    assert!(worst_rel <= 1e-6, "worst multiplier/expectation mismatch {worst_rel:.2e}");
    println!(
        "ACCEPTANCE 3 (conservation + Eq12/Eq15 consistency): PASS - {instances} instances, \
         worst divergence {worst_div:.2e} (2et/hbar), worst relative mismatch {worst_rel:.2e}"
    );
}

// ----------------------------------------------------------------------
// 4. Single-plaquette brute-force oracle.
// ----------------------------------------------------------------------
#[test]
fn acceptance_04_single_plaquette_scan_oracle() {
    let start = Instant::now();
    let g = build_lattice(&LatticeSpec::plain(2, 2)).unwrap();
    let basis = plaquette_loop_basis(&g).unwrap();
    let params = HubbardParams::cuprate(3);
    let seed = build_svq_texture(&g, &[], &params, true).unwrap();
    // The stationary state sits at the edge of the convergent current
    // range, where energy errors grow like the square root of any spread in
    // the bond coherences. Plain damped iteration keeps the coherences
    // symmetric to machine precision (the flagged residual is an open-shell
    // density oscillation that does not enter them).
    let opts = ScfOptions {
        tol: 1e-13,
        max_iter: 20000,
        mixing: 0.5,
        adaptive_mixing: false,
        anderson: false,
        ..Default::default()
    };
    let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
    let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
    let pattern = WindingPattern {
        targets: vec![2],
        label: "w2".into(),
    };
    let chi_opts = ChiSolveOptions {
        grad_tol: 1e-12,
        ..Default::default()
    };
    let state = solve_chi(&ctx, &pattern, &FeedSpec::default(), &chi_opts, None).unwrap();
    let l0 = &basis.loops[0];
    let (b0, s0) = l0.bonds[0];
    let j_solver = f64::from(s0) * state.bond_currents[b0];
    let scan = verify::ring_current_scan(&ctx, 2).unwrap();
    // Best match among isolated roots and stationary continua (a flat
    // family contains every current, so its mismatch is energy-only).
    let mut dj = f64::INFINITY;
    let mut de = f64::INFINITY;
    for r in &scan.roots {
        let (a, b) = (
            (r.current - j_solver).abs(),
            (r.kinetic_energy - state.kinetic_energy).abs(),
        );
        if a + b < dj + de {
            dj = a;
            de = b;
        }
    }
    for &w in &scan.flat_words {
        if j_solver.abs() <= scan.max_current {
            let e = verify::ring_branch_energy(&ctx, w, j_solver);
            let b = (e - state.kinetic_energy).abs();
            if b < dj + de {
                dj = 0.0;
                de = b;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(de <= 1e-6, "energy mismatch {de:.2e} meV");
    assert!(dj <= 1e-6, "current mismatch {dj:.2e}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 (2x2 scan oracle): PASS - dE {de:.2e} meV, dJ {dj:.2e} (2et/hbar), {elapsed:?}"
    );
}

// ----------------------------------------------------------------------
// 5. Degeneracy structure: desk U/D degenerate at B = 0, three-qubit
//    levels all split under the quadratic field.
// ----------------------------------------------------------------------
#[test]
fn acceptance_05_degeneracy_structure() {
    let fix = desk();
    let point = svilc_core::pipeline::run_spectrum(&fix.ws, &fix.mf, &BTreeMap::new(), false).unwrap();
    let split = (point.spectrum.total_energies[0] - point.spectrum.total_energies[1]).abs();
    assert!(split <= 1e-9, "desk U/D split {split:.3e} meV at B = 0");

    let point3 = paper_zero_point();
    let es = &point3.spectrum.total_energies;
    assert_eq!(es.len(), 8);
    let mut min_gap = f64::INFINITY;
    for w in es.windows(2) {
        min_gap = min_gap.min(w[1] - w[0]);
    }
    assert!(
        min_gap > 0.0,
        "three-qubit levels degenerate under the field: {es:?}"
    );
    println!(
        "ACCEPTANCE 5 (degeneracy structure): PASS - desk split {split:.2e} meV at B=0; \
         8 field-split levels, min gap {min_gap:.4e} meV"
    );
}

// ----------------------------------------------------------------------
// 6. Transition-dipole structure of the three-qubit system.
// ----------------------------------------------------------------------
fn flips(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).filter(|(x, y)| x != y).count()
}

#[test]
fn acceptance_06_dipole_structure() {
    let point = paper_zero_point();
    let dip = point.dipoles.as_ref().unwrap();
    // Current-derived U/D words per spectrum state.
    let words: Vec<String> = point
        .spectrum
        .state_labels
        .iter()
        .map(|pat| {
            let idx = point
                .states
                .iter()
                .position(|s| &s.pattern.label == pat)
                .unwrap();
            point.basis_current_labels[idx].clone()
        })
        .collect();
    for w in &words {
        assert!(!w.contains('?'), "ambiguous U/D label in {words:?}");
    }

    let n = words.len();
    let mut max_single = 0.0f64;
    let mut min_single = f64::INFINITY;
    let mut max_multi = 0.0f64;
    let mut max_x_single = 0.0f64;
    let mut center_min = f64::INFINITY;
    let mut side_max = 0.0f64;
    for a in 0..n {
        for b in (a + 1)..n {
            let muy = dip.mu_y[(a, b)].norm();
            let mux = dip.mu_x[(a, b)].norm();
            match flips(&words[a], &words[b]) {
                1 => {
                    max_single = max_single.max(muy);
                    min_single = min_single.min(muy);
                    max_x_single = max_x_single.max(mux);
                    let which = words[a]
                        .chars()
                        .zip(words[b].chars())
                        .position(|(x, y)| x != y)
                        .unwrap();
                    if which == 1 {
                        center_min = center_min.min(muy);
                    } else {
                        side_max = side_max.max(muy);
                    }
                }
                _ => max_multi = max_multi.max(muy),
            }
        }
    }
    // Selection rule: single-flip transitions bright, multi-flip dark.
    assert!(
        max_multi <= 1e-3 * max_single,
        "multi-flip |mu_y| {max_multi:.3e} vs single-flip max {max_single:.3e}"
    );
    // Magnitudes within a factor of 3 of the reference 9.594 / 10.868.
    assert!(
        min_single >= 9.594 / 3.0 && max_single <= 10.868 * 3.0,
        "single-flip |mu_y| range [{min_single:.3}, {max_single:.3}] vs reference [9.594, 10.868]"
    );
    // Center transitions strictly exceed side transitions.
    assert!(
        center_min > side_max,
        "center flip min {center_min:.4} vs side flip max {side_max:.4}"
    );
    // mu_x much smaller than mu_y.
    let ratio = max_x_single / min_single;
    assert!(ratio < 0.05, "mu_x/mu_y ratio {ratio:.4}");
    println!(
        "ACCEPTANCE 6 (dipole structure): PASS - single-flip |mu_y| in [{min_single:.3}, {max_single:.3}] \
         x 1e-30 C m (reference 9.594/10.868), multi-flip max {max_multi:.2e}, center>side \
         ({center_min:.3} > {side_max:.3}), mu_x/mu_y {ratio:.4}"
    );
}

// ----------------------------------------------------------------------
// 7. Parabolic splitting in a single small feed current.
// ----------------------------------------------------------------------
#[test]
fn acceptance_07_parabolic_splitting() {
    // The two-state demonstration field keeps the spectrum nondegenerate so
    // the tracked curves are smooth.
    let mut cfg = RunConfig::preset("desk-1svq").unwrap();
    cfg.field.c_xx = 0.178;
    cfg.field.c_x = 6.0;
    cfg.field.c_yy = 0.07;
    cfg.field.c_y = 6.0;
    let ws = Workspace::new(cfg).unwrap();
    let ckpt = cache_dir().join("desk_field_mf.bin");
    let mf = ws.solve_meanfield(Some(&ckpt)).unwrap();
    let ctx = ChiContext::new(&ws.graph, &ws.basis, &mf).unwrap();
    let solver = SpectrumSolver::new(&ctx, &mf, &ws.layout);
    let grid: Vec<f64> = (0..=8).map(|i| 0.005 * i as f64).collect();
    let sweep = sweep_feed(
        &solver,
        &SweepSpec {
            parameter: "Jex1".into(),
            grid: grid.clone(),
            fixed: BTreeMap::new(),
            ratios: BTreeMap::new(),
            refine_levels: 0,
        },
    )
    .unwrap();
    let mut min_r2 = f64::INFINITY;
    for s in 0..sweep.state_labels.len() {
        let ys: Vec<f64> = sweep
            .energies
            .iter()
            .map(|e| e.as_ref().expect("all points solvable")[s])
            .collect();
        let r2 = quadratic_fit_r2(&grid, &ys);
        min_r2 = min_r2.min(r2);
    }
    assert!(min_r2 > 0.99, "worst quadratic fit R^2 = {min_r2}");
    println!(
        "ACCEPTANCE 7 (parabolic splitting): PASS - worst R^2 = {:.6} over {} states",
        min_r2,
        sweep.state_labels.len()
    );
}

/// Least-squares quadratic fit and its coefficient of determination.
fn quadratic_fit_r2(xs: &[f64], ys: &[f64]) -> f64 {
    use faer::Mat;
    let n = xs.len();
    let a = Mat::<f64>::from_fn(n, 3, |i, j| xs[i].powi(j as i32));
    let at_a = a.transpose() * &a;
    let mut at_y = Mat::<f64>::zeros(3, 1);
    for i in 0..n {
        for j in 0..3 {
            at_y[(j, 0)] += a[(i, j)] * ys[i];
        }
    }
    let coef = linalg::solve_real(at_a.as_ref(), at_y.as_ref());
    let mean = ys.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let fit = coef[(0, 0)] + coef[(1, 0)] * xs[i] + coef[(2, 0)] * xs[i] * xs[i];
        ss_res += (ys[i] - fit) * (ys[i] - fit);
        ss_tot += (ys[i] - mean) * (ys[i] - mean);
    }
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Ising decomposition of per-state quadratic coefficients: the pair
/// coupling between qubits `i` and `j`.
fn pair_coupling(labels: &[String], coeffs: &[f64], qi: usize, qj: usize) -> f64 {
    let mut acc = 0.0;
    for (label, &a) in labels.iter().zip(coeffs) {
        let s: Vec<f64> = label
            .chars()
            .map(|c| if c == 'U' { 1.0 } else { -1.0 })
            .collect();
        acc += s[qi] * s[qj] * a;
    }
    (acc / labels.len() as f64).abs()
}

// ----------------------------------------------------------------------
// 8. Level crossings under the left-center coupler current.
// ----------------------------------------------------------------------
fn coupler_sweep() -> &'static svilc_core::qubit::SpectrumSweep {
    static SWEEP: OnceLock<svilc_core::qubit::SpectrumSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let fix = paper();
        let ctx = ChiContext::new(&fix.ws.graph, &fix.ws.basis, &fix.mf).unwrap();
        let solver = SpectrumSolver::new(&ctx, &fix.mf, &fix.ws.layout);
        let grid: Vec<f64> = (0..=8).map(|i| 0.2 * i as f64).collect();
        sweep_feed(
            &solver,
            &SweepSpec {
                parameter: "Jex4".into(),
                grid,
                fixed: BTreeMap::new(),
                ratios: BTreeMap::new(),
                refine_levels: 2,
            },
        )
        .unwrap()
    })
}

#[test]
fn acceptance_08_crossing_existence() {
    let sweep = coupler_sweep();
    let find = |a: &str, b: &str| {
        sweep.crossings.iter().find(|c| {
            (c.state_a == a && c.state_b == b) || (c.state_a == b && c.state_b == a)
        })
    };
    let c1 = find("UDU", "DUU");
    let c2 = find("UDD", "DUD");
    assert!(
        c1.is_some(),
        "no (UDU, DUU) crossing; crossings: {:?}",
        sweep.crossings
    );
    assert!(
        c2.is_some(),
        "no (UDD, DUD) crossing; crossings: {:?}",
        sweep.crossings
    );
    let j1 = c1.unwrap().parameter;
    let j2 = c2.unwrap().parameter;
    for (name, j) in [("UDU/DUU", j1), ("UDD/DUD", j2)] {
        assert!(
            (0.35..=1.4).contains(&j),
            "{name} crossing at {j:.3} (2et/hbar) outside a factor 2 of the reference 0.7"
        );
    }
    let solved = sweep.energies.iter().filter(|e| e.is_some()).count();
    println!(
        "ACCEPTANCE 8 (crossing existence): PASS - UDU/DUU at {j1:.3}, UDD/DUD at {j2:.3} \
         (2et/hbar; reference 0.7, deviation factors {:.2} and {:.2}); {solved}/{} grid points solvable",
        (j1 / 0.7f64).max(0.7 / j1),
        (j2 / 0.7f64).max(0.7 / j2),
        sweep.grid.len()
    );
}

// ----------------------------------------------------------------------
// 9. Coupling asymmetry: left-center coupler dominates center-right at
//    J4 : J5 = 1 : 2.
// ----------------------------------------------------------------------
#[test]
fn acceptance_09_coupling_asymmetry() {
    let fix = paper();
    let ctx = ChiContext::new(&fix.ws.graph, &fix.ws.basis, &fix.mf).unwrap();
    let solver = SpectrumSolver::new(&ctx, &fix.mf, &fix.ws.layout);
    let grid: Vec<f64> = (0..=4).map(|i| 0.05 * i as f64).collect();
    let mut fixed = BTreeMap::new();
    fixed.insert("Jex1".to_string(), 0.002);
    fixed.insert("Jex2".to_string(), 0.004);
    fixed.insert("Jex3".to_string(), 0.008);
    let mut ratios = BTreeMap::new();
    ratios.insert("Jex5".to_string(), 2.0);
    let sweep = sweep_feed(
        &solver,
        &SweepSpec {
            parameter: "Jex4".into(),
            grid: grid.clone(),
            fixed,
            ratios,
            refine_levels: 0,
        },
    )
    .unwrap();
    // Quadratic coefficient per tracked state.
    let mut coeffs = Vec::new();
    for s in 0..sweep.state_labels.len() {
        let ys: Vec<f64> = sweep
            .energies
            .iter()
            .map(|e| e.as_ref().expect("points solvable")[s])
            .collect();
        coeffs.push(quadratic_coefficient(&grid, &ys));
    }
    let c12 = pair_coupling(&sweep.state_labels, &coeffs, 0, 1);
    let c23 = pair_coupling(&sweep.state_labels, &coeffs, 1, 2);
    assert!(
        c12 > c23,
        "left-center coupling {c12:.4e} does not exceed center-right {c23:.4e}"
    );
    println!(
        "ACCEPTANCE 9 (coupling asymmetry): PASS - fitted couplings left-center {c12:.4e} \
         > center-right {c23:.4e} meV/(2et/hbar)^2 at J4:J5 = 1:2"
    );
}

fn quadratic_coefficient(xs: &[f64], ys: &[f64]) -> f64 {
    use faer::Mat;
    let n = xs.len();
    let a = Mat::<f64>::from_fn(n, 3, |i, j| xs[i].powi(j as i32));
    let at_a = a.transpose() * &a;
    let mut at_y = Mat::<f64>::zeros(3, 1);
    for i in 0..n {
        for j in 0..3 {
            at_y[(j, 0)] += a[(i, j)] * ys[i];
        }
    }
    let coef = linalg::solve_real(at_a.as_ref(), at_y.as_ref());
    coef[(2, 0)]
}

// ----------------------------------------------------------------------
// 10. Determinism and performance of the full desk pipeline.
// ----------------------------------------------------------------------
#[test]
fn acceptance_10_determinism_and_performance() {
    let start = Instant::now();
    let mut artifacts: Vec<Vec<u8>> = Vec::new();
    for run in 0..2 {
        let dir = cache_dir().join(format!("det-run-{run}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = RunConfig::preset("desk-1svq").unwrap();
        let ws = Workspace::new(cfg).unwrap();
        let mf = ws.solve_meanfield(None).unwrap(); // fresh SCF both times
        let ctx = ChiContext::new(&ws.graph, &ws.basis, &mf).unwrap();
        // All 16 enumerated patterns solved.
        let patterns = enumerate_patterns(&ctx);
        assert_eq!(patterns.len(), 16);
        let mut states = Vec::new();
        for p in &patterns {
            states.push(solve_chi(&ctx, p, &FeedSpec::default(), &Default::default(), None).unwrap());
        }
        write_currents(&ws, &dir.join("currents_first.dat"), &states[0]).unwrap();
        // Qubit spectrum and a small sweep.
        let point = svilc_core::pipeline::run_spectrum(&ws, &mf, &BTreeMap::new(), false).unwrap();
        write_spectrum(&ws, &dir.join("spectrum.csv"), &point, &BTreeMap::new()).unwrap();
        let solver = SpectrumSolver::new(&ctx, &mf, &ws.layout);
        let sweep = sweep_feed(
            &solver,
            &SweepSpec {
                parameter: "Jex1".into(),
                grid: vec![0.0, 0.01, 0.02, 0.03],
                fixed: BTreeMap::new(),
                ratios: BTreeMap::new(),
                refine_levels: 0,
            },
        )
        .unwrap();
        write_sweep(&ws, &dir.join("sweep.csv"), &sweep).unwrap();
        write_crossings(&ws, &dir.join("crossings.txt"), &sweep).unwrap();

        let mut blob = Vec::new();
        for name in ["currents_first.dat", "spectrum.csv", "sweep.csv", "crossings.txt"] {
            blob.extend(std::fs::read(dir.join(name)).unwrap());
        }
        artifacts.push(blob);
    }
    let elapsed = start.elapsed();
    assert_eq!(artifacts[0], artifacts[1], "outputs differ between identical runs");
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "two full desk pipelines took {elapsed:?} (budget 5 min for one)"
    );
    println!(
        "ACCEPTANCE 10 (determinism + performance): PASS - two byte-identical desk pipelines \
         (SCF + 16 chi solves + spectrum + sweep) in {elapsed:?}"
    );
}

// ----------------------------------------------------------------------
// Supporting invariants referenced by the criteria.
// ----------------------------------------------------------------------

/// Gauge invariance of the field coupling: shifting A_y by a constant moves
/// no physical energy at zero feed.
#[test]
fn gauge_shift_leaves_spectrum_invariant() {
    let fix = desk();
    let mut cfg = fix.ws.config.clone();
    cfg.field.c_xx = 0.178;
    cfg.field.c_x = 6.0;
    cfg.field.c_yy = 0.07;
    cfg.field.c_y = 6.0;
    let ws_a = Workspace::new(cfg.clone()).unwrap();
    cfg.field.gauge_shift = 11.0;
    let ws_b = Workspace::new(cfg).unwrap();
    let ckpt = cache_dir().join("desk_field_mf.bin");
    let mf_a = ws_a.solve_meanfield(Some(&ckpt)).unwrap();
    let mf_b = ws_b.solve_meanfield(Some(&ckpt)).unwrap();
    let pa = svilc_core::pipeline::run_spectrum(&ws_a, &mf_a, &BTreeMap::new(), false).unwrap();
    let pb = svilc_core::pipeline::run_spectrum(&ws_b, &mf_b, &BTreeMap::new(), false).unwrap();
    for (a, b) in pa
        .spectrum
        .total_energies
        .iter()
        .zip(&pb.spectrum.total_energies)
    {
        let rel = (a - b).abs() / (1.0 + a.abs());
        assert!(rel <= 1e-8, "gauge-dependent energy: {a} vs {b}");
    }
    println!("gauge invariance: PASS");
}

/// The feed-sensitivity question on the dipole table: magnitudes at the
/// reference feed setting stay close to the bare-field values.
#[test]
fn dipoles_feed_insensitive() {
    let point0 = paper_zero_point();
    let fix = paper();
    let mut mags = BTreeMap::new();
    mags.insert("Jex1".to_string(), 0.002);
    mags.insert("Jex2".to_string(), 0.004);
    mags.insert("Jex3".to_string(), 0.008);
    let point1 = svilc_core::pipeline::run_spectrum(&fix.ws, &fix.mf, &mags, true).unwrap();
    let d0 = point0.dipoles.as_ref().unwrap();
    let d1 = point1.dipoles.as_ref().unwrap();
    let n = d0.labels.len();
    let mut worst = 0.0f64;
    let mut max0 = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            max0 = max0.max(d0.mu_y[(a, b)].norm());
        }
    }
    for a in 0..n {
        for b in 0..n {
            let v0 = d0.mu_y[(a, b)].norm();
            let v1 = d1.mu_y[(a, b)].norm();
            if v0 > 0.1 * max0 {
                worst = worst.max((v1 - v0).abs() / v0);
            }
        }
    }
    assert!(
        worst < 0.2,
        "dipoles shifted by {worst:.3} under the differentiation feeds"
    );
    println!("dipole feed insensitivity: PASS - worst relative shift {worst:.4}");
}

/// Feed-shift classes: with only the left-center coupler on, states sharing
/// the same (q1, q2) sub-word shift together.
#[test]
fn coupled_pair_shift_classes() {
    let sweep = coupler_sweep();
    let Some(e0) = &sweep.energies[0] else { panic!("first point missing") };
    // Use the largest solvable grid point for contrast.
    let (ei, value) = sweep
        .energies
        .iter()
        .zip(&sweep.grid)
        .rev()
        .find_map(|(e, v)| e.as_ref().map(|e| (e, *v)))
        .unwrap();
    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, label) in sweep.state_labels.iter().enumerate() {
        let class: String = label.chars().take(2).collect();
        by_class.entry(class).or_default().push(ei[s] - e0[s]);
    }
    let mut worst = 0.0f64;
    for (class, shifts) in &by_class {
        let mean = shifts.iter().sum::<f64>() / shifts.len() as f64;
        for s in shifts {
            let rel = ((s - mean) / mean.abs().max(1e-12)).abs();
            worst = worst.max(rel);
            assert!(
                rel <= 0.05,
                "class {class}: shift {s:.4} vs mean {mean:.4} at J4 = {value}"
            );
        }
    }
    println!(
        "coupled-pair shift classes: PASS - same-(q1,q2) shifts equal within {:.2}% at J4 = {value}",
        worst * 100.0
    );
}
