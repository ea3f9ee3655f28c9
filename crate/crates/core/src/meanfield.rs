//! Self-consistent Hartree-Fock solution of the mean-field Hubbard model
//! for a prescribed spin-vortex texture.
//!
//! The one-body Hamiltonian couples spins only through the in-plane
//! exchange field `-U (S^x -+ i S^y)`. With the polar angle pinned to
//! `pi/2` the matrix is invariant under the antiunitary map
//! `(spin flip) x (conjugation)`, so a site-local unitary takes it to a
//! real symmetric matrix; the self-consistency loop diagonalizes that real
//! form (about 4x cheaper than the complex path) and reconstructs complex
//! spinor orbitals afterwards. The complex assembly is kept as the public
//! contract and as the reference path in tests.

use faer::{Mat, MatRef};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{af_background, azimuth_from_center, winding_number, BondGraph, LoopBasis};
use crate::linalg::{self, c64};

/// Hubbard model parameters. Energies in meV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HubbardParams {
    /// Transfer integral, meV.
    pub t: f64,
    /// On-site repulsion, meV.
    pub u: f64,
    pub n_electrons: usize,
    /// Pinned polar angle; pi/2 in every scenario here.
    pub zeta_fixed: f64,
}

impl HubbardParams {
    pub fn cuprate(n_electrons: usize) -> Self {
        let t = 130.0;
        HubbardParams {
            t,
            u: 8.0 * t,
            n_electrons,
            zeta_fixed: PI / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) {
            return Err(Error::InvalidSpec(format!("t must be positive, got {}", self.t)));
        }
        if self.u < 0.0 {
            return Err(Error::InvalidSpec(format!("U must be nonnegative, got {}", self.u)));
        }
        Ok(())
    }
}

/// Per-site charge and spin fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinField {
    /// Occupation n_j.
    pub occupation: Vec<f64>,
    /// Spin magnitude S_j.
    pub magnitude: Vec<f64>,
    /// Azimuth xi_j, radians.
    pub azimuth: Vec<f64>,
    /// Polar angle zeta_j, radians.
    pub polar: Vec<f64>,
}

impl SpinField {
    pub fn len(&self) -> usize {
        self.occupation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupation.is_empty()
    }

    pub fn sx(&self, j: usize) -> f64 {
        self.magnitude[j] * self.azimuth[j].cos() * self.polar[j].sin()
    }

    pub fn sy(&self, j: usize) -> f64 {
        self.magnitude[j] * self.azimuth[j].sin() * self.polar[j].sin()
    }

    pub fn sz(&self, j: usize) -> f64 {
        self.magnitude[j] * self.polar[j].cos()
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..self.len() {
            let n = self.occupation[j];
            let s = self.magnitude[j];
            if !(0.0..=2.0).contains(&n) {
                return Err(Error::InvalidSpec(format!("occupation n_{j} = {n} outside [0, 2]")));
            }
            if !(0.0..=0.5 + 1e-9).contains(&s) {
                return Err(Error::InvalidSpec(format!("spin magnitude S_{j} = {s} outside [0, 1/2]")));
            }
        }
        Ok(())
    }
}

/// One prescribed spin vortex: the plaquette hosting it (lower-left corner
/// site) and its staggered winding sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VortexSpec {
    pub plaquette: (i32, i32),
    pub winding: i8,
}

/// Spin-texture seed: antiferromagnetic background plus one azimuthal turn
/// per vortex. The winding label of a vortex is carried by the staggered
/// part of the field (the background steps by exactly pi between neighbors
/// and holds no topological content).
///
/// Rejects textures whose windings do not cancel unless
/// `allow_unbalanced` is set.
pub fn build_svq_texture(
    graph: &BondGraph,
    vortices: &[VortexSpec],
    params: &HubbardParams,
    allow_unbalanced: bool,
) -> Result<SpinField> {
    let total: i64 = vortices.iter().map(|v| v.winding as i64).sum();
    if total != 0 && !allow_unbalanced {
        return Err(Error::InvalidSpec(format!(
            "vortex windings sum to {total}, expected 0 (set allow_unbalanced to override)"
        )));
    }
    for v in vortices {
        let (px, py) = v.plaquette;
        if v.winding.abs() != 1 {
            return Err(Error::InvalidSpec(format!(
                "vortex winding at ({px}, {py}) must be +-1, got {}",
                v.winding
            )));
        }
        for corner in [(px, py), (px + 1, py), (px, py + 1), (px + 1, py + 1)] {
            if graph.site_at(corner.0, corner.1).is_none() {
                return Err(Error::InvalidSpec(format!(
                    "vortex plaquette ({px}, {py}) corner {corner:?} is not an active site"
                )));
            }
        }
    }

    let n_sites = graph.site_count();
    let n0 = params.n_electrons as f64 / n_sites as f64;
    let azimuth = graph
        .sites()
        .iter()
        .map(|&(x, y)| {
            let mut xi = af_background(x, y);
            for v in vortices {
                xi += f64::from(v.winding) * azimuth_from_center(x, y, v.plaquette.0, v.plaquette.1);
            }
            xi
        })
        .collect();

    Ok(SpinField {
        occupation: vec![n0; n_sites],
        magnitude: vec![0.4; n_sites],
        azimuth,
        polar: vec![params.zeta_fixed; n_sites],
    })
}

/// Staggered azimuth: xi with the antiferromagnetic background removed.
/// Winding labels of textures are read off this field; the raw field steps
/// by ~pi between neighbors, which makes its discrete winding numerically
/// knife-edged.
pub fn staggered_azimuth(graph: &BondGraph, fields: &SpinField) -> Vec<f64> {
    graph
        .sites()
        .iter()
        .zip(&fields.azimuth)
        .map(|(&(x, y), &xi)| xi - af_background(x, y))
        .collect()
}

/// Staggered winding of the texture around every basis loop.
pub fn texture_windings(
    graph: &BondGraph,
    basis: &LoopBasis,
    fields: &SpinField,
) -> Result<Vec<i32>> {
    let stag = staggered_azimuth(graph, fields);
    basis
        .loops
        .iter()
        .map(|l| winding_number(&stag, &l.sites))
        .collect()
}

/// Matrix index of site `j` with spin `s` (0 = up, 1 = down).
#[inline]
pub fn spin_index(j: usize, s: usize) -> usize {
    2 * j + s
}

/// Assemble the complex Hermitian one-body mean-field matrix:
/// hopping `-t` between like spins on every bond, and on each site the
/// 2x2 block
/// `U * [[n/2 - S^z, -(S^x - i S^y)], [-(S^x + i S^y), n/2 + S^z]]`.
pub fn hf_hamiltonian(params: &HubbardParams, fields: &SpinField, graph: &BondGraph) -> Mat<c64> {
    let n = graph.site_count();
    let mut h = Mat::<c64>::zeros(2 * n, 2 * n);
    for b in graph.bonds() {
        for s in 0..2 {
            h[(spin_index(b.tail, s), spin_index(b.head, s))] += c64::new(-params.t, 0.0);
            h[(spin_index(b.head, s), spin_index(b.tail, s))] += c64::new(-params.t, 0.0);
        }
    }
    for j in 0..n {
        let (nj, sx, sy, sz) = (fields.occupation[j], fields.sx(j), fields.sy(j), fields.sz(j));
        h[(spin_index(j, 0), spin_index(j, 0))] += c64::new(params.u * (nj / 2.0 - sz), 0.0);
        h[(spin_index(j, 1), spin_index(j, 1))] += c64::new(params.u * (nj / 2.0 + sz), 0.0);
        h[(spin_index(j, 0), spin_index(j, 1))] += c64::new(-params.u * sx, params.u * sy);
        h[(spin_index(j, 1), spin_index(j, 0))] += c64::new(-params.u * sx, -params.u * sy);
    }
    h
}

/// Real symmetric form of the mean-field matrix in the rotated basis
/// `u = (up + down)/sqrt(2)`, `v = i (up - down)/sqrt(2)`. Valid when
/// `S^z = 0` on every site (enforced by the zeta projection).
fn hf_real_rotated(params: &HubbardParams, fields: &SpinField, graph: &BondGraph, h: &mut Mat<f64>) {
    let n = graph.site_count();
    debug_assert_eq!(h.nrows(), 2 * n);
    h.fill(0.0);
    for b in graph.bonds() {
        for s in 0..2 {
            h[(spin_index(b.tail, s), spin_index(b.head, s))] = -params.t;
            h[(spin_index(b.head, s), spin_index(b.tail, s))] = -params.t;
        }
    }
    for j in 0..n {
        let (nj, sx, sy) = (fields.occupation[j], fields.sx(j), fields.sy(j));
        h[(spin_index(j, 0), spin_index(j, 0))] = params.u * (nj / 2.0 - sx);
        h[(spin_index(j, 1), spin_index(j, 1))] = params.u * (nj / 2.0 + sx);
        h[(spin_index(j, 0), spin_index(j, 1))] = params.u * sy;
        h[(spin_index(j, 1), spin_index(j, 0))] = params.u * sy;
    }
}

/// Single-particle orbitals of the converged solution.
#[derive(Debug, Clone)]
pub struct OrbitalSet {
    /// All eigenvalues, ascending (meV).
    pub energies: Vec<f64>,
    /// Occupied spinor coefficients, one column per filled orbital, rows
    /// indexed by [`spin_index`]. The spin-texture phases of the
    /// single-particle ansatz are absorbed into the coefficients.
    pub occupied: Mat<c64>,
}

impl OrbitalSet {
    pub fn n_occupied(&self) -> usize {
        self.occupied.ncols()
    }

    /// Max deviation of the occupied block from orthonormality.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.occupied.adjoint() * &self.occupied;
        let n = gram.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                let d = (gram[(i, j)] - c64::new(want, 0.0)).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Converged (or best-effort) mean-field solution.
#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub params: HubbardParams,
    pub fields: SpinField,
    pub orbitals: OrbitalSet,
    /// Double-counting-corrected total energy, meV.
    pub total_energy: f64,
    /// Sum of occupied single-particle eigenvalues, meV.
    pub band_energy: f64,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the gap at the Fermi level fell below 1e-9 meV; filling then
    /// resolves by eigenvalue order.
    pub fermi_degenerate: bool,
}

impl MeanFieldSolution {
    /// Spin-summed occupied bond coherence `A_b = sum_sigma,gamma
    /// psi(head) conj(psi(tail))` for every bond. This is the only input the
    /// phase-field energy needs from the electronic structure.
    pub fn bond_coherence(&self, graph: &BondGraph) -> Vec<c64> {
        let occ = &self.orbitals.occupied;
        graph
            .bonds()
            .iter()
            .map(|b| {
                let mut a = c64::new(0.0, 0.0);
                for g in 0..occ.ncols() {
                    for s in 0..2 {
                        a += occ[(spin_index(b.head, s), g)] * occ[(spin_index(b.tail, s), g)].conj();
                    }
                }
                a
            })
            .collect()
    }

    /// Expectation of the on-site mean-field potential in the determinant.
    /// Independent of the dressing phase field.
    pub fn onsite_energy(&self, graph: &BondGraph) -> f64 {
        let occ = &self.orbitals.occupied;
        let u = self.params.u;
        let mut e = 0.0;
        for j in 0..graph.site_count() {
            let mut nup = 0.0;
            let mut ndn = 0.0;
            let mut cross = c64::new(0.0, 0.0);
            for g in 0..occ.ncols() {
                let pu = occ[(spin_index(j, 0), g)];
                let pd = occ[(spin_index(j, 1), g)];
                nup += pu.norm_sqr();
                ndn += pd.norm_sqr();
                cross += pd * pu.conj(); // <c^+_up c_down>
            }
            let (nj, sx, sy, sz) = (
                self.fields.occupation[j],
                self.fields.sx(j),
                self.fields.sy(j),
                self.fields.sz(j),
            );
            e += u * (nj / 2.0 - sz) * nup + u * (nj / 2.0 + sz) * ndn;
            e -= 2.0 * (c64::new(u * sx, -u * sy) * cross).re;
        }
        e
    }
}

/// Knobs for the self-consistency loop.
#[derive(Debug, Clone, Copy)]
pub struct ScfOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Linear mixing weight on the output fields.
    pub mixing: f64,
    /// Anderson (DIIS) acceleration over the field history.
    pub anderson: bool,
    pub anderson_depth: usize,
    /// Anderson only engages once the residual drops below this, so the
    /// extrapolation cannot hop between degenerate texture wells (a global
    /// spin flip is an exact symmetry and an unguarded step can land in the
    /// flipped basin).
    pub anderson_start: f64,
    /// Grow the linear mixing weight while the residual decreases
    /// monotonically, halve it on an increase. Does not change fixed points.
    pub adaptive_mixing: bool,
    /// Gauge-fix the exact zero mode of global in-plane spin rotation by
    /// re-aligning each iterate with the seed texture. Fixed points map to
    /// fixed points; the residual stops drifting along the symmetry orbit.
    pub pin_rotation: bool,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            tol: 1e-8,
            max_iter: 600,
            mixing: 0.3,
            anderson: true,
            anderson_depth: 5,
            anderson_start: 1e-2,
            adaptive_mixing: true,
            pin_rotation: true,
        }
    }
}

/// Topological lock for the self-consistency loop: staggered ring windings
/// the iterate must keep. Accelerated mixing steps that leave the sector
/// (degenerate wells differ only by a global conjugation or local phase
/// slips) are rejected in favor of plain damped steps.
#[derive(Debug, Clone, Default)]
pub struct TextureGuard {
    /// Ring site cycles together with the expected staggered winding.
    pub rings: Vec<(Vec<usize>, i32)>,
    /// Staggered background offsets `pi (x + y)` per site, precomputed.
    pub background: Vec<f64>,
    /// Seed in-plane S^y pattern. Its overlap with the iterate is the order
    /// parameter of the global-conjugation symmetry (xi -> -xi): positive in
    /// the seed's well, negative in the mirror well.
    pub seed_sy: Vec<f64>,
    /// Sine of the seed's staggered azimuth. Its overlap with the iterate's
    /// staggered sine flips under conjugation of the vortex part alone
    /// (which keeps the antiferromagnetic background and so evades the raw
    /// S^y overlap).
    pub seed_stag_sin: Vec<f64>,
}

impl TextureGuard {
    pub fn for_vortices(
        graph: &BondGraph,
        vortices: &[VortexSpec],
        seed: &SpinField,
    ) -> Result<Self> {
        let rings = vortices
            .iter()
            .map(|v| {
                crate::lattice::vortex_ring(graph, v.plaquette.0, v.plaquette.1)
                    .map(|ring| (ring, i32::from(v.winding)))
            })
            .collect::<Result<Vec<_>>>()?;
        let background = graph
            .sites()
            .iter()
            .map(|&(x, y)| af_background(x, y))
            .collect();
        let seed_sy: Vec<f64> = (0..seed.len()).map(|j| seed.sy(j)).collect();
        let seed_stag_sin = seed
            .azimuth
            .iter()
            .zip::<&Vec<f64>>(&background)
            .map(|(xi, bg)| (xi - bg).sin())
            .collect();
        Ok(TextureGuard {
            rings,
            background,
            seed_sy,
            seed_stag_sin,
        })
    }

    /// Check a candidate (sx, sy) field against the expected windings and
    /// the conjugation order parameters.
    fn holds(&self, sx: &[f64], sy: &[f64]) -> bool {
        let overlap: f64 = sy.iter().zip(&self.seed_sy).map(|(a, b)| a * b).sum();
        if !self.seed_sy.iter().all(|&v| v == 0.0) && overlap <= 0.0 {
            return false;
        }
        let stag_overlap: f64 = (0..sx.len())
            .map(|j| {
                let stag = sy[j].atan2(sx[j]) - self.background[j];
                stag.sin() * self.seed_stag_sin[j]
            })
            .sum();
        let seed_norm: f64 = self.seed_stag_sin.iter().map(|v| v * v).sum();
        if seed_norm > 1e-9 && stag_overlap <= 0.0 {
            return false;
        }
        for (ring, expected) in &self.rings {
            let mut total = 0.0;
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                let xa = sy[a].atan2(sx[a]) - self.background[a];
                let xb = sy[b].atan2(sx[b]) - self.background[b];
                total += crate::lattice::wrap_angle(xb - xa);
            }
            let w = (total / std::f64::consts::TAU).round() as i32;
            if w != *expected {
                return false;
            }
        }
        true
    }
}

struct FieldVec {
    n: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

impl FieldVec {
    fn from_fields(f: &SpinField) -> Self {
        FieldVec {
            n: f.occupation.clone(),
            sx: (0..f.len()).map(|j| f.sx(j)).collect(),
            sy: (0..f.len()).map(|j| f.sy(j)).collect(),
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.n.clone();
        v.extend_from_slice(&self.sx);
        v.extend_from_slice(&self.sy);
        v
    }

    fn from_flat(v: &[f64], n_sites: usize) -> Self {
        FieldVec {
            n: v[0..n_sites].to_vec(),
            sx: v[n_sites..2 * n_sites].to_vec(),
            sy: v[2 * n_sites..3 * n_sites].to_vec(),
        }
    }

    fn to_fields(&self, zeta: f64) -> SpinField {
        let n_sites = self.n.len();
        let mut f = SpinField {
            occupation: self.n.clone(),
            magnitude: vec![0.0; n_sites],
            azimuth: vec![0.0; n_sites],
            polar: vec![zeta; n_sites],
        };
        for j in 0..n_sites {
            f.magnitude[j] = (self.sx[j] * self.sx[j] + self.sy[j] * self.sy[j]).sqrt();
            f.azimuth[j] = self.sy[j].atan2(self.sx[j]);
        }
        f
    }

    fn distance(&self, other: &FieldVec) -> f64 {
        let mut d = 0.0f64;
        for j in 0..self.n.len() {
            d = d.max((self.n[j] - other.n[j]).abs());
            d = d.max((self.sx[j] - other.sx[j]).abs());
            d = d.max((self.sy[j] - other.sy[j]).abs());
        }
        d
    }
}

/// Fields computed from the lowest `n_electrons` orbitals of the rotated
/// real matrix. Returns (fields, band energy, fermi-degenerate flag).
fn fields_from_real_orbitals(
    vals: &[f64],
    vecs: MatRef<'_, f64>,
    n_sites: usize,
    n_occ: usize,
) -> (FieldVec, f64, bool) {
    let mut out = FieldVec {
        n: vec![0.0; n_sites],
        sx: vec![0.0; n_sites],
        sy: vec![0.0; n_sites],
    };
    let mut band = 0.0;
    for g in 0..n_occ {
        band += vals[g];
        for j in 0..n_sites {
            let wu = vecs[(2 * j, g)];
            let wv = vecs[(2 * j + 1, g)];
            out.n[j] += wu * wu + wv * wv;
            out.sx[j] += 0.5 * (wu * wu - wv * wv);
            out.sy[j] -= wu * wv;
        }
    }
    let degenerate = n_occ < vals.len() && (vals[n_occ] - vals[n_occ - 1]).abs() < 1e-9;
    (out, band, degenerate)
}

/// Reconstruct complex spinor orbitals from rotated real eigenvectors.
fn complex_orbitals(vecs: MatRef<'_, f64>, n_sites: usize, n_occ: usize) -> Mat<c64> {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    Mat::<c64>::from_fn(2 * n_sites, n_occ, |row, g| {
        let j = row / 2;
        let wu = vecs[(2 * j, g)];
        let wv = vecs[(2 * j + 1, g)];
        if row % 2 == 0 {
            c64::new(wu * inv_sqrt2, wv * inv_sqrt2)
        } else {
            c64::new(wu * inv_sqrt2, -wv * inv_sqrt2)
        }
    })
}

/// Self-consistent field loop: diagonalize, fill the lowest orbitals,
/// recompute fields, project the polar angle back to its pinned value, mix,
/// repeat. Non-convergence returns the best iterate flagged, not an error.
pub fn scf_solve(
    params: &HubbardParams,
    initial: &SpinField,
    graph: &BondGraph,
    opts: &ScfOptions,
) -> Result<MeanFieldSolution> {
    scf_solve_guarded(params, initial, graph, opts, None)
}

/// [`scf_solve`] with a topological sector lock. Accelerated mixing steps
/// that leave the seed's winding sector are rejected during the loop, and a
/// converged solution that nonetheless drifted into a degenerate mirror
/// well triggers one deterministic rerun with acceleration disabled (the
/// plain damped flow stays in the seed's basin).
pub fn scf_solve_guarded(
    params: &HubbardParams,
    initial: &SpinField,
    graph: &BondGraph,
    opts: &ScfOptions,
    guard: Option<&TextureGuard>,
) -> Result<MeanFieldSolution> {
    let sol = scf_solve_inner(params, initial, graph, opts, guard)?;
    if let Some(g) = guard {
        let sy: Vec<f64> = (0..sol.fields.len()).map(|j| sol.fields.sy(j)).collect();
        let sx: Vec<f64> = (0..sol.fields.len()).map(|j| sol.fields.sx(j)).collect();
        if !g.holds(&sx, &sy) {
            if opts.anderson {
                log::warn!("scf solution left the seed winding sector; retrying without acceleration");
                let safe = ScfOptions {
                    anderson: false,
                    max_iter: opts.max_iter * 2,
                    ..*opts
                };
                let sol2 = scf_solve_inner(params, initial, graph, &safe, Some(g))?;
                let sy2: Vec<f64> = (0..sol2.fields.len()).map(|j| sol2.fields.sy(j)).collect();
                let sx2: Vec<f64> = (0..sol2.fields.len()).map(|j| sol2.fields.sx(j)).collect();
                if !g.holds(&sx2, &sy2) {
                    return Err(Error::SolverFailure(
                        "self-consistent solution does not retain the seed winding sector".into(),
                    ));
                }
                return Ok(sol2);
            }
            return Err(Error::SolverFailure(
                "self-consistent solution does not retain the seed winding sector".into(),
            ));
        }
    }
    Ok(sol)
}

fn scf_solve_inner(
    params: &HubbardParams,
    initial: &SpinField,
    graph: &BondGraph,
    opts: &ScfOptions,
    guard: Option<&TextureGuard>,
) -> Result<MeanFieldSolution> {
    params.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidSpec(format!("scf tol must be positive, got {}", opts.tol)));
    }
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "scf mixing must lie in (0, 1], got {}",
            opts.mixing
        )));
    }
    let n_sites = graph.site_count();
    if initial.len() != n_sites {
        return Err(Error::InvalidSpec(format!(
            "initial field has {} sites, graph has {n_sites}",
            initial.len()
        )));
    }
    let n_occ = params.n_electrons;
    if n_occ == 0 || n_occ > 2 * n_sites {
        return Err(Error::InvalidSpec(format!(
            "electron count {n_occ} outside 1..={}",
            2 * n_sites
        )));
    }

    let mut h = Mat::<f64>::zeros(2 * n_sites, 2 * n_sites);
    let mut x_in = FieldVec::from_fields(initial);
    let seed_sx = x_in.sx.clone();
    let seed_sy = x_in.sy.clone();
    // The zeta projection: S^z never enters the rotated matrix, so any
    // initial polar tilt is dropped here once.
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut fermi_degenerate = false;
    let mut last_energy = f64::INFINITY;
    let mut last_residual = f64::INFINITY;
    let mut beta = opts.mixing;
    let mut anderson_cooldown = 0usize;
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new(); // (x_in, residual vector)

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let fields_in = x_in.to_fields(params.zeta_fixed);
        hf_real_rotated(params, &fields_in, graph, &mut h);
        let (vals, vecs) = linalg::eigh_real(h.as_ref())?;
        let (mut x_out, band, degen) =
            fields_from_real_orbitals(&vals, vecs.as_ref(), n_sites, n_occ);
        fermi_degenerate = degen;
        if opts.pin_rotation {
            align_rotation(&mut x_out, &seed_sx, &seed_sy);
        }

        let charge: f64 = x_out.n.iter().sum();
        let drift = (charge - n_occ as f64).abs();
        if drift > 1e-8 {
            return Err(Error::ChargeDrift { drift });
        }

        // Double-counting-corrected energy of the iterate, for monitoring.
        let mut dc = 0.0;
        for j in 0..n_sites {
            let s2 = x_in.sx[j] * x_in.sx[j] + x_in.sy[j] * x_in.sy[j];
            dc += params.u * ((x_in.n[j] / 2.0) * (x_in.n[j] / 2.0) - s2);
        }
        let energy = band - dc;
        if energy > last_energy + 1e-6 {
            log::debug!(
                "scf iteration {it}: energy rose by {:.3e} meV (mixing {beta})",
                energy - last_energy
            );
        }
        last_energy = energy;

        residual = x_out.distance(&x_in);
        if it % 100 == 99 {
            log::info!("scf iteration {}: residual {residual:.3e}", it + 1);
        }
        if residual <= opts.tol {
            converged = true;
            break;
        }
        if opts.adaptive_mixing {
            if residual < last_residual {
                beta = (beta * 1.15).min(0.8);
            } else {
                beta = (beta * 0.5).max(opts.mixing.min(0.05));
            }
        }
        last_residual = residual;

        // Mixing step.
        let flat_in = x_in.flat();
        let flat_out = x_out.flat();
        let res_vec: Vec<f64> = flat_out.iter().zip(&flat_in).map(|(o, i)| o - i).collect();
        let mut next: Option<Vec<f64>> = None;
        if opts.anderson && residual < opts.anderson_start && anderson_cooldown == 0 {
            history.push((flat_in.clone(), res_vec.clone()));
            if history.len() > opts.anderson_depth {
                history.remove(0);
            }
            if history.len() >= 2 {
                next = anderson_step(&history, opts.mixing);
                // Trust region while the iterate could still hop between
                // degenerate texture wells: pull an oversized extrapolation
                // back toward the plain damped step. Deep in the basin the
                // steps are tiny and no clamp is needed.
                if let Some(cand) = next.take() {
                    let res_norm = res_vec.iter().fold(0.0f64, |m, r| m.max(r.abs()));
                    let step = cand
                        .iter()
                        .zip(&flat_in)
                        .fold(0.0f64, |m, (c, i)| m.max((c - i).abs()));
                    let limit = 6.0 * res_norm;
                    if res_norm < 1e-4 || step <= limit {
                        next = Some(cand);
                    } else {
                        let blend = limit / step;
                        next = Some(
                            cand.iter()
                                .zip(flat_in.iter().zip(&res_vec))
                                .map(|(c, (i, r))| {
                                    let lin = i + beta * r;
                                    blend * c + (1.0 - blend) * lin
                                })
                                .collect(),
                        );
                    }
                }
            }
        }
        // Topological lock: an accelerated step must stay in the seed's
        // winding sector.
        if let Some(g) = guard {
            if let Some(cand) = next.take() {
                let c = FieldVec::from_flat(&cand, n_sites);
                if g.holds(&c.sx, &c.sy) {
                    next = Some(cand);
                } else {
                    log::debug!(
                        "scf iteration {it}: accelerated step left the winding sector, rejected"
                    );
                    history.clear();
                    anderson_cooldown = 50;
                }
            }
        }
        if anderson_cooldown > 0 {
            anderson_cooldown -= 1;
        }
        let next = next.unwrap_or_else(|| {
            flat_in
                .iter()
                .zip(&res_vec)
                .map(|(i, r)| i + beta * r)
                .collect()
        });
        x_in = FieldVec::from_flat(&next, n_sites);
    }

    // Final diagonalization from the converged fields to make the stored
    // orbitals exactly consistent with the stored fields.
    let fields_in = x_in.to_fields(params.zeta_fixed);
    hf_real_rotated(params, &fields_in, graph, &mut h);
    let (vals, vecs) = linalg::eigh_real(h.as_ref())?;
    let (x_out, band, degen) = fields_from_real_orbitals(&vals, vecs.as_ref(), n_sites, n_occ);
    // No rotation pin here: the stored fields must be exactly the ones the
    // stored orbitals generate.
    let occupied = complex_orbitals(vecs.as_ref(), n_sites, n_occ);
    let mut dc = 0.0;
    for j in 0..n_sites {
        let s2 = x_out.sx[j] * x_out.sx[j] + x_out.sy[j] * x_out.sy[j];
        dc += params.u * ((x_out.n[j] / 2.0) * (x_out.n[j] / 2.0) - s2);
    }

    if !converged {
        log::warn!(
            "scf did not converge in {} iterations (residual {:.3e})",
            opts.max_iter,
            residual
        );
    }

    Ok(MeanFieldSolution {
        params: *params,
        fields: x_out.to_fields(params.zeta_fixed),
        orbitals: OrbitalSet {
            energies: vals,
            occupied,
        },
        total_energy: band - dc,
        band_energy: band,
        residual,
        converged,
        iterations,
        fermi_degenerate: fermi_degenerate || degen,
    })
}

/// Rotate the in-plane spin field by the global angle that best aligns it
/// with the seed texture (Procrustes on the planar spins). Energies and all
/// observables built from the determinant are invariant under this gauge.
fn align_rotation(x: &mut FieldVec, seed_sx: &[f64], seed_sy: &[f64]) {
    let mut re = 0.0;
    let mut im = 0.0;
    for j in 0..x.sx.len() {
        // sum over (sx + i sy) * conj(seed)
        re += x.sx[j] * seed_sx[j] + x.sy[j] * seed_sy[j];
        im += x.sy[j] * seed_sx[j] - x.sx[j] * seed_sy[j];
    }
    let norm = (re * re + im * im).sqrt();
    if norm < 1e-12 {
        return;
    }
    let (c, s) = (re / norm, -im / norm);
    for j in 0..x.sx.len() {
        let (sx, sy) = (x.sx[j], x.sy[j]);
        x.sx[j] = c * sx - s * sy;
        x.sy[j] = s * sx + c * sy;
    }
}

/// Anderson/DIIS mixing: pick the residual-minimizing affine combination of
/// the stored iterates, then take a damped step along its residual.
fn anderson_step(history: &[(Vec<f64>, Vec<f64>)], beta: f64) -> Option<Vec<f64>> {
    let m = history.len();
    let dim = history[0].0.len();
    // Gram matrix of residuals with a Lagrange row for sum(c) = 1.
    let mut a = Mat::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            let dot: f64 = history[i].1.iter().zip(&history[j].1).map(|(x, y)| x * y).sum();
            a[(i, j)] = dot;
        }
        a[(i, i)] += 1e-12 * (1.0 + a[(i, i)].abs());
        a[(i, m)] = 1.0;
        a[(m, i)] = 1.0;
    }
    let mut rhs = Mat::<f64>::zeros(m + 1, 1);
    rhs[(m, 0)] = 1.0;
    let sol = linalg::solve_real(a.as_ref(), rhs.as_ref());
    let coeffs: Vec<f64> = (0..m).map(|i| sol[(i, 0)]).collect();
    if coeffs.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let mut next = vec![0.0; dim];
    for (c, (x, r)) in coeffs.iter().zip(history) {
        for k in 0..dim {
            next[k] += c * (x[k] + beta * r[k]);
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        None
    } else {
        Some(next)
    }
}
