use svilc_core::lattice::*;
use svilc_core::meanfield::*;
use std::time::Instant;

fn main() {
    env_logger::init();
    let g = build_lattice(&LatticeSpec::plain(8, 8)).unwrap();
    let params = HubbardParams::cuprate(60);
    let vortices = [
        VortexSpec { plaquette: (3, 5), winding: 1 },
        VortexSpec { plaquette: (5, 5), winding: -1 },
        VortexSpec { plaquette: (3, 3), winding: -1 },
        VortexSpec { plaquette: (5, 3), winding: 1 },
    ];
    let seed = build_svq_texture(&g, &vortices, &params, false).unwrap();
    let guard = TextureGuard::for_vortices(&g, &vortices, &seed).unwrap();
    for depth in [5usize, 8] {
        for start in [1e-2f64, 1e-3] {
            let opts = ScfOptions { max_iter: 1200, anderson_depth: depth, anderson_start: start, tol: 1e-8, ..Default::default() };
            let t0 = Instant::now();
            let sol = scf_solve_guarded(&params, &seed, &g, &opts, Some(&guard)).unwrap();
            let stag = staggered_azimuth(&g, &sol.fields);
            let ws: Vec<i32> = vortices.iter().map(|v| {
                let ring = vortex_ring(&g, v.plaquette.0, v.plaquette.1).unwrap();
                winding_number(&stag, &ring).unwrap()
            }).collect();
            println!("depth={depth} start={start:.0e}: converged={} iters={} res={:.2e} w={:?} dt={:.1?}",
                sol.converged, sol.iterations, sol.residual, ws, t0.elapsed());
        }
    }
}
