use svilc_core::chi::*;
use svilc_core::lattice::*;
use svilc_core::meanfield::*;
use svilc_core::verify;

fn main() {
    let g = build_lattice(&LatticeSpec::plain(2, 2)).unwrap();
    let basis = plaquette_loop_basis(&g).unwrap();
    let params = HubbardParams::cuprate(3);
    let seed = build_svq_texture(&g, &[], &params, true).unwrap();
    let opts = ScfOptions { tol: 1e-13, max_iter: 20000, mixing: 0.5, adaptive_mixing: false, anderson: false, ..Default::default() };
    let sol = scf_solve(&params, &seed, &g, &opts).unwrap();
    let ctx = ChiContext::new(&g, &basis, &sol).unwrap();
    let pattern = WindingPattern { targets: vec![2], label: "w2".into() };
    let chi_opts = ChiSolveOptions { grad_tol: 1e-12, ..Default::default() };
    let state = solve_chi(&ctx, &pattern, &FeedSpec::default(), &chi_opts, None).unwrap();
    let l0 = &basis.loops[0];
    let (b0, s0) = l0.bonds[0];
    let j_solver = f64::from(s0) * state.bond_currents[b0];
    println!("solver J = {:.15} E = {:.3e}", j_solver, state.kinetic_energy);
    println!("twists: {:?}", state.chi.twist);
    let scan = verify::ring_current_scan(&ctx, 2).unwrap();
    println!("{} roots, flat words: {:?} (jmax {:.12})", scan.roots.len(), scan.flat_words, scan.max_current);
    for &w in &scan.flat_words {
        println!("  flat word {w:04b}: E(j_solver) = {:.3e}", verify::ring_branch_energy(&ctx, w, j_solver));
    }
}
