//! End-to-end orchestration: build the problem from a configuration, run
//! (or reload) the mean-field stage, solve current patterns, and emit the
//! result files.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;

use crate::chi::{ChiContext, ChiSolveOptions, CurrentState, FeedSpec};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, plaquette_loop_basis, BondGraph, LoopBasis};
use crate::linalg::c64;
use crate::meanfield::{
    build_svq_texture, scf_solve_guarded, HubbardParams, MeanFieldSolution, OrbitalSet, ScfOptions,
    SpinField, TextureGuard,
};
use crate::observables::DipoleMatrix;
use crate::qubit::{QubitLayout, SpectrumPoint, SpectrumSolver, SpectrumSweep};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A built problem: configuration materialized into geometry and options.
pub struct Workspace {
    pub config: RunConfig,
    pub layout: QubitLayout,
    pub params: HubbardParams,
    pub scf_opts: ScfOptions,
    pub chi_opts: ChiSolveOptions,
    pub graph: BondGraph,
    pub basis: LoopBasis,
}

impl Workspace {
    pub fn new(config: RunConfig) -> Result<Self> {
        let (layout, params, scf_opts, chi_opts) = config.build()?;
        let graph = build_lattice(&layout.lattice)?;
        let basis = plaquette_loop_basis(&graph)?;
        Ok(Workspace {
            config,
            layout,
            params,
            scf_opts,
            chi_opts,
            graph,
            basis,
        })
    }

    /// Initial texture: the quartet seed plus the optional seeded jitter.
    pub fn seed_texture(&self) -> Result<SpinField> {
        let vortices = self.layout.all_vortices();
        let mut seed = build_svq_texture(&self.graph, &vortices, &self.params, false)?;
        let amp = self.config.run.seed_noise;
        if amp > 0.0 {
            let mut state = self.config.run.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut next = move || {
                // splitmix64
                state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
                z ^= z >> 31;
                (z as f64 / u64::MAX as f64) - 0.5
            };
            for xi in seed.azimuth.iter_mut() {
                *xi += amp * next();
            }
        }
        Ok(seed)
    }

    /// Run the self-consistent stage, or reload it from a checkpoint when
    /// one exists and matches the physics hash.
    pub fn solve_meanfield(&self, checkpoint: Option<&Path>) -> Result<MeanFieldSolution> {
        let hash = self.physics_hash();
        if let Some(path) = checkpoint {
            if path.exists() {
                match read_checkpoint(path, &hash, &self.params) {
                    Ok(mf) => {
                        log::info!("loaded mean-field checkpoint {}", path.display());
                        return Ok(mf);
                    }
                    Err(e) => log::warn!(
                        "ignoring checkpoint {}: {e} (re-running the self-consistent stage)",
                        path.display()
                    ),
                }
            }
        }
        let mut seed = self.seed_texture()?;
        if self.config.solver.region_seeding && self.layout.dcqs.len() > 1 {
            match self.region_seeded_texture(&seed) {
                Ok(s) => seed = s,
                Err(e) => log::warn!("region seeding failed ({e}); using the plain seed"),
            }
        }
        let guard = TextureGuard::for_vortices(&self.graph, &self.layout.all_vortices(), &seed)?;
        let mf = scf_solve_guarded(&self.params, &seed, &self.graph, &self.scf_opts, Some(&guard))?;
        if !mf.converged {
            log::warn!(
                "mean-field stage stopped at residual {:.3e} after {} iterations",
                mf.residual,
                mf.iterations
            );
        }
        if let Some(path) = checkpoint {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_checkpoint(path, &hash, &mf)?;
        }
        Ok(mf)
    }

    /// Converge each quartet's texture on a window sub-lattice around its
    /// center and paste the fields into the seed. The self-consistent modes
    /// that relax slowly are local to each texture, so pre-relaxing them on
    /// the (much cheaper) windows leaves the global stage with only the
    /// weak inter-region coupling.
    fn region_seeded_texture(&self, base: &SpinField) -> Result<SpinField> {
        let mut seed = base.clone();
        for (qi, dcq) in self.layout.dcqs.iter().enumerate() {
            let r = self.config.solver.region_window;
            let cx = dcq.center.0.round() as i32;
            let cy = dcq.center.1.round() as i32;
            let x_lo = (cx - r).max(1);
            let x_hi = (cx + r).min(self.layout.lattice.nx);
            let y_lo = (cy - r).max(1);
            let y_hi = (cy + r).min(self.layout.lattice.ny);
            let mut sub = crate::lattice::LatticeSpec {
                nx: self.layout.lattice.nx,
                ny: self.layout.lattice.ny,
                lattice_constant: self.layout.lattice.lattice_constant,
                barrier_sites: self.layout.lattice.barrier_sites.clone(),
                hole_sites: Default::default(),
            };
            // Mask away everything outside the window.
            for x in 1..=self.layout.lattice.nx {
                for y in 1..=self.layout.lattice.ny {
                    if x < x_lo || x > x_hi || y < y_lo || y > y_hi {
                        sub.barrier_sites.insert((x, y));
                    }
                }
            }
            for v in &dcq.vortices {
                sub.hole_sites.insert(v.plaquette);
            }
            let sub_graph = build_lattice(&sub)?;
            let sub_params = HubbardParams {
                n_electrons: sub_graph.site_count() - dcq.vortices.len(),
                ..self.params
            };
            let sub_seed = build_svq_texture(&sub_graph, &dcq.vortices, &sub_params, false)?;
            let guard = TextureGuard::for_vortices(&sub_graph, &dcq.vortices, &sub_seed)?;
            let opts = ScfOptions {
                max_iter: self.scf_opts.max_iter.max(1500),
                ..self.scf_opts
            };
            let sub_mf = scf_solve_guarded(&sub_params, &sub_seed, &sub_graph, &opts, Some(&guard))?;
            log::info!(
                "region {qi}: {} sites, residual {:.2e} in {} iterations",
                sub_graph.site_count(),
                sub_mf.residual,
                sub_mf.iterations
            );
            for (sj, &(x, y)) in sub_graph.sites().iter().enumerate() {
                if let Some(gj) = self.graph.site_at(x, y) {
                    seed.occupation[gj] = sub_mf.fields.occupation[sj];
                    seed.magnitude[gj] = sub_mf.fields.magnitude[sj];
                    seed.azimuth[gj] = sub_mf.fields.azimuth[sj];
                    seed.polar[gj] = sub_mf.fields.polar[sj];
                }
            }
        }
        Ok(seed)
    }

    /// Hash over the physics-determining configuration subset (geometry,
    /// physics, qubits, solver, seed), so output settings do not invalidate
    /// checkpoints.
    pub fn physics_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut reduced = self.config.clone();
        reduced.output = Default::default();
        reduced.sweep = None;
        reduced.run.feed_magnitudes = BTreeMap::new();
        let mut h = Sha256::new();
        h.update(reduced.to_toml().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Standard file header lines.
    pub fn header(&self, units: &str) -> String {
        format!(
            "# svilc {TOOL_VERSION}\n# config-hash: {}\n# units: {units}\n",
            self.config.hash()
        )
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SVILCMF1";

fn write_checkpoint(path: &Path, hash: &str, mf: &MeanFieldSolution) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let hash_bytes = hash.as_bytes();
    w.write_all(&(hash_bytes.len() as u64).to_le_bytes())?;
    w.write_all(hash_bytes)?;
    let n_sites = mf.fields.len() as u64;
    let n_orb = mf.orbitals.energies.len() as u64;
    let n_occ = mf.orbitals.occupied.ncols() as u64;
    w.write_all(&n_sites.to_le_bytes())?;
    w.write_all(&n_orb.to_le_bytes())?;
    w.write_all(&n_occ.to_le_bytes())?;
    for v in [
        mf.total_energy,
        mf.band_energy,
        mf.residual,
        mf.iterations as f64,
        u8::from(mf.converged) as f64,
        u8::from(mf.fermi_degenerate) as f64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for list in [
        &mf.fields.occupation,
        &mf.fields.magnitude,
        &mf.fields.azimuth,
        &mf.fields.polar,
        &mf.orbitals.energies,
    ] {
        for v in list {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let occ = &mf.orbitals.occupied;
    for g in 0..occ.ncols() {
        for r in 0..occ.nrows() {
            w.write_all(&occ[(r, g)].re.to_le_bytes())?;
            w.write_all(&occ[(r, g)].im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_checkpoint(path: &Path, expect_hash: &str, params: &HubbardParams) -> Result<MeanFieldSolution> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic (not a svilc checkpoint)".into()));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut BufReader<std::fs::File>| -> Result<u64> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let hash_len = read_u64(&mut r)? as usize;
    if hash_len > 1024 {
        return Err(Error::Checkpoint("hash field too long".into()));
    }
    let mut hash = vec![0u8; hash_len];
    r.read_exact(&mut hash)?;
    if hash != expect_hash.as_bytes() {
        return Err(Error::Checkpoint(
            "physics configuration changed since this checkpoint was written".into(),
        ));
    }
    let n_sites = read_u64(&mut r)? as usize;
    let n_orb = read_u64(&mut r)? as usize;
    let n_occ = read_u64(&mut r)? as usize;
    if n_sites == 0 || n_orb != 2 * n_sites || n_occ == 0 || n_occ > n_orb {
        return Err(Error::Checkpoint(format!(
            "inconsistent checkpoint dimensions ({n_sites} sites, {n_orb} orbitals, {n_occ} occupied)"
        )));
    }
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
        r.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let total_energy = read_f64(&mut r)?;
    let band_energy = read_f64(&mut r)?;
    let residual = read_f64(&mut r)?;
    let iterations = read_f64(&mut r)? as usize;
    let converged = read_f64(&mut r)? != 0.0;
    let fermi_degenerate = read_f64(&mut r)? != 0.0;
    let mut read_list = |r: &mut BufReader<std::fs::File>, n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let occupation = read_list(&mut r, n_sites)?;
    let magnitude = read_list(&mut r, n_sites)?;
    let azimuth = read_list(&mut r, n_sites)?;
    let polar = read_list(&mut r, n_sites)?;
    let energies = read_list(&mut r, n_orb)?;
    let mut occupied = Mat::<c64>::zeros(2 * n_sites, n_occ);
    let mut b = [0u8; 8];
    for g in 0..n_occ {
        for row in 0..2 * n_sites {
            r.read_exact(&mut b)?;
            let re = f64::from_le_bytes(b);
            r.read_exact(&mut b)?;
            let im = f64::from_le_bytes(b);
            occupied[(row, g)] = c64::new(re, im);
        }
    }
    Ok(MeanFieldSolution {
        params: *params,
        fields: SpinField {
            occupation,
            magnitude,
            azimuth,
            polar,
        },
        orbitals: OrbitalSet { energies, occupied },
        total_energy,
        band_energy,
        residual,
        converged,
        iterations,
        fermi_degenerate,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Bond-current table: `x1 y1 x2 y2 current` per line, units 2et/hbar.
/// The arrow-scale note mirrors the plotting convention of one lattice
/// distance per 1/3 (2et/hbar).
pub fn write_currents(ws: &Workspace, path: &Path, state: &CurrentState) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ws.header("current in 2et/hbar; columns: x1 y1 x2 y2 current"));
    out.push_str("# arrow-scale: one lattice distance per 1/3 (2et/hbar)\n");
    out.push_str(&format!("# pattern: {}\n", state.pattern.label));
    for (b, bond) in ws.graph.bonds().iter().enumerate() {
        let (x1, y1) = ws.graph.coord(bond.tail);
        let (x2, y2) = ws.graph.coord(bond.head);
        out.push_str(&format!("{x1} {y1} {x2} {y2} {}\n", fmt(state.bond_currents[b])));
    }
    write_atomic(path, &out)
}

/// Spectrum table for a single evaluation point.
pub fn write_spectrum(
    ws: &Workspace,
    path: &Path,
    point: &SpectrumPoint,
    magnitudes: &BTreeMap<String, f64>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ws.header("energies in meV"));
    let mags: Vec<String> = magnitudes.iter().map(|(k, v)| format!("{k}={}", fmt(*v))).collect();
    out.push_str(&format!("# feeds: {}\n", if mags.is_empty() { "none".into() } else { mags.join(" ") }));
    out.push_str("state,E_hf_mev,E_field_mev,E_total_mev\n");
    let sp = &point.spectrum;
    for a in 0..sp.total_energies.len() {
        // Current-derived U/D word of the dominant pattern.
        let dominant = &sp.state_labels[a];
        let idx = point
            .states
            .iter()
            .position(|s| &s.pattern.label == dominant)
            .unwrap_or(0);
        out.push_str(&format!(
            "{},{},{},{}\n",
            point.basis_current_labels[idx],
            fmt(sp.hf_energies[a]),
            fmt(sp.field_energies[a]),
            fmt(sp.total_energies[a]),
        ));
    }
    write_atomic(path, &out)
}

/// Sweep table: one row per grid point, one energy column per tracked
/// state; failed points leave empty cells.
pub fn write_sweep(ws: &Workspace, path: &Path, sweep: &SpectrumSweep) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ws.header("energies in meV; parameter in 2et/hbar"));
    let fixed: Vec<String> = sweep.fixed.iter().map(|(k, v)| format!("{k}={}", fmt(*v))).collect();
    out.push_str(&format!(
        "# fixed-feeds: {}\n",
        if fixed.is_empty() { "none".into() } else { fixed.join(" ") }
    ));
    out.push_str(&sweep.parameter.to_string());
    for label in &sweep.state_labels {
        out.push_str(&format!(",E_{label}"));
    }
    out.push('\n');
    for (i, value) in sweep.grid.iter().enumerate() {
        out.push_str(&fmt(*value));
        match &sweep.energies[i] {
            Some(es) => {
                for e in es {
                    out.push_str(&format!(",{}", fmt(*e)));
                }
            }
            None => {
                for _ in &sweep.state_labels {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn write_crossings(ws: &Workspace, path: &Path, sweep: &SpectrumSweep) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ws.header("crossing parameter in 2et/hbar"));
    out.push_str(&format!("# sweep parameter: {}\n", sweep.parameter));
    out.push_str("state_a state_b parameter\n");
    for c in &sweep.crossings {
        out.push_str(&format!("{} {} {}\n", c.state_a, c.state_b, fmt(c.parameter)));
    }
    write_atomic(path, &out)
}

/// Dipole table in the row/column convention of the reference table:
/// upper triangle mu^y, lower triangle mu^x, zero diagonal.
pub fn write_dipoles(ws: &Workspace, path: &Path, dipoles: &DipoleMatrix) -> Result<()> {
    let n = dipoles.labels.len();
    let mut out = String::new();
    out.push_str(&ws.header(
        "upper triangle |mu^y|, lower triangle |mu^x|, units 1e-30 C m",
    ));
    out.push_str("state");
    for l in &dipoles.labels {
        out.push_str(&format!(",{l}"));
    }
    out.push('\n');
    for a in 0..n {
        out.push_str(&dipoles.labels[a]);
        for b in 0..n {
            let v = match a.cmp(&b) {
                std::cmp::Ordering::Less => dipoles.mu_y[(a, b)].norm(),
                std::cmp::Ordering::Greater => dipoles.mu_x[(a, b)].norm(),
                std::cmp::Ordering::Equal => 0.0,
            };
            out.push_str(&format!(",{}", fmt(v)));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Winding-pattern table with the parity data.
pub fn write_patterns(ws: &Workspace, path: &Path, ctx: &ChiContext<'_>) -> Result<()> {
    let patterns = crate::chi::enumerate_patterns(ctx);
    let mut out = String::new();
    out.push_str(&ws.header("winding pattern enumeration"));
    out.push_str(&format!(
        "# vortex faces (basis-loop indices): {:?}\n",
        ctx.vortex_faces
    ));
    out.push_str("label");
    for &f in &ctx.vortex_faces {
        out.push_str(&format!(",w_chi[{f}],w_xi[{f}],parity_ok"));
    }
    out.push('\n');
    for p in &patterns {
        out.push_str(&p.label);
        for &f in &ctx.vortex_faces {
            let wb = p.targets[f];
            let wx = ctx.xi_windings[f];
            out.push_str(&format!(",{wb},{wx},{}", (wb + wx).rem_euclid(2) == 0));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Write via a temporary file so partial results never masquerade as
/// complete; callers keep `.partial` files on solver failure instead.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Mark a failed artifact: move `path` to `path.partial` when it exists.
pub fn mark_partial(path: &Path) -> PathBuf {
    let partial = path.with_extension("partial");
    if path.exists() {
        let _ = std::fs::rename(path, &partial);
    }
    partial
}

/// Convenience: one spectrum evaluation with dipoles from a workspace.
pub fn run_spectrum(
    ws: &Workspace,
    mf: &MeanFieldSolution,
    magnitudes: &BTreeMap<String, f64>,
    with_dipoles: bool,
) -> Result<SpectrumPoint> {
    let ctx = ChiContext::new(&ws.graph, &ws.basis, mf)?;
    let mut solver = SpectrumSolver::new(&ctx, mf, &ws.layout);
    solver.chi_opts = ws.chi_opts;
    solver.solve_point_full(magnitudes, None, with_dipoles)
}

/// All basis states at fixed feed magnitudes (for current exports).
pub fn solve_basis_states(
    ws: &Workspace,
    mf: &MeanFieldSolution,
    magnitudes: &BTreeMap<String, f64>,
) -> Result<(Vec<CurrentState>, Vec<String>)> {
    let point = run_spectrum(ws, mf, magnitudes, false)?;
    Ok((point.states, point.basis_current_labels))
}

/// Feed magnitudes from `name=value` command-line pairs.
pub fn parse_magnitudes(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for p in pairs {
        let (name, value) = p.split_once('=').ok_or_else(|| {
            Error::Config(format!("feed magnitude '{p}' is not of the form name=value"))
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("feed magnitude '{p}': {e}")))?;
        out.insert(name.trim().to_string(), v);
    }
    Ok(out)
}

/// Composite feed for a magnitude map (validation helper for the CLI).
pub fn composite_feed(ws: &Workspace, magnitudes: &BTreeMap<String, f64>) -> Result<FeedSpec> {
    crate::qubit::compose_feeds(&ws.layout.feeds, magnitudes)
}
