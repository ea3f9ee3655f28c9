//! Magnetic coupling between current-pattern states, basis
//! orthogonalization, and transition dipole moments.
//!
//! All current-pattern states share one set of occupied orbitals and differ
//! only in their site dressing phases, so matrix elements between the
//! (nonorthogonal) determinants reduce to the standard one-body rule
//! `<a|O|b> = det(M) tr(M^-1 P_a^H O P_b)` with `M = P_a^H P_b` the
//! occupied-orbital overlap.

use faer::Mat;

use crate::chi::CurrentState;
use crate::error::{Error, Result};
use crate::lattice::{Axis, BondGraph};
use crate::linalg::{self, c64, LuFactors};
use crate::meanfield::{spin_index, MeanFieldSolution};

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Quadratic out-of-plane field profile `B(x, y)` in Tesla with `x`, `y` in
/// lattice units. The constant term covers uniform fields; the gauge shift
/// adds a constant to `A_y` and must drop out of physical answers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldPolynomial {
    pub c_xx: f64,
    pub c_x: f64,
    pub c_yy: f64,
    pub c_y: f64,
    pub c_0: f64,
    pub gauge_shift: f64,
    /// Dimensionless prefactor on the field-coupling energy. The reference
    /// profile's Tesla values are phenomenological (tens of kilotesla when
    /// read literally); its nanosecond gate-time estimates place the level
    /// splittings in the meV range, which a scale well below one restores.
    pub energy_scale: f64,
}

impl FieldPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The level-splitting profile applied to the three-qubit layout.
    pub fn paper_quadratic() -> Self {
        FieldPolynomial {
            c_xx: 4.005,
            c_x: 540.0,
            c_yy: 1.575,
            c_y: 135.0,
            c_0: 0.0,
            gauge_shift: 0.0,
            energy_scale: 1e-4,
        }
    }

    /// The two-state demonstration profile of the single-quartet figure.
    pub fn dcq_quadratic() -> Self {
        FieldPolynomial {
            c_xx: 0.178,
            c_x: 6.0,
            c_yy: 0.07,
            c_y: 6.0,
            c_0: 0.0,
            gauge_shift: 0.0,
            energy_scale: 1.0,
        }
    }

    pub fn b(&self, x: f64, y: f64) -> f64 {
        self.c_xx * x * x + self.c_x * x + self.c_yy * y * y + self.c_y * y + self.c_0
    }

    pub fn is_zero(&self) -> bool {
        self.c_xx == 0.0 && self.c_x == 0.0 && self.c_yy == 0.0 && self.c_y == 0.0 && self.c_0 == 0.0
    }

    /// `A_y(x, y) = int_0^x B(x', y) dx'` (Landau-like gauge, A_x = 0).
    fn a_y(&self, x: f64, y: f64) -> f64 {
        self.c_xx * x * x * x / 3.0
            + self.c_x * x * x / 2.0
            + (self.c_yy * y * y + self.c_y * y + self.c_0) * x
            + self.gauge_shift
    }

    /// Exact line integral of `A` along the bond, in Tesla times squared
    /// lattice units. Horizontal bonds carry zero in this gauge.
    pub fn bond_integral(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        if y0 == y1 {
            return 0.0;
        }
        debug_assert_eq!(x0, x1);
        let x = x0;
        // int_{y0}^{y1} A_y(x, y) dy, closed form for the quadratic profile.
        let prim = |y: f64| {
            (self.c_xx * x * x * x / 3.0 + self.c_x * x * x / 2.0 + self.gauge_shift) * y
                + x * (self.c_yy * y * y * y / 3.0 + self.c_y * y * y / 2.0 + self.c_0 * y)
        };
        prim(y1) - prim(y0)
    }
}

/// Per-bond line integrals `int A . dr` (tail to head) in T (lattice unit)^2.
pub fn vector_potential(field: &FieldPolynomial, graph: &BondGraph) -> Vec<f64> {
    graph
        .bonds()
        .iter()
        .map(|b| {
            let (x0, y0) = graph.coord(b.tail);
            let (x1, y1) = graph.coord(b.head);
            field.bond_integral(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
        })
        .collect()
}

/// Flux through the unit plaquette with lower-left corner `(px, py)` from
/// the circulation of the bond integrals (Stokes; exact for polynomials).
pub fn plaquette_flux(field: &FieldPolynomial, px: i32, py: i32) -> f64 {
    let (x, y) = (px as f64, py as f64);
    field.bond_integral(x + 1.0, y, x + 1.0, y + 1.0) - field.bond_integral(x, y, x, y + 1.0)
}

/// One-body operators in the site (x) spin basis, kept in structured form so
/// matrix elements only touch their sparse support.
#[derive(Debug, Clone)]
pub enum OneBodyOperator {
    /// `sum_j d_j n_j` (spin-independent site diagonal).
    SiteDiagonal(Vec<f64>),
    /// `sum_b i c_b sum_sigma (c^+_head c_tail - c^+_tail c_head)`.
    BondImaginary(Vec<f64>),
    /// `sum_b c_b sum_sigma (c^+_head c_tail + c^+_tail c_head)`.
    BondReal(Vec<f64>),
    /// Per-site 2x2 spin block `[uu, ud, du, dd]`.
    SpinBlock(Vec<[c64; 4]>),
}

/// The magnetic interaction operator `H_B = -sum_bonds (int A . dr)
/// j_{head<-tail}` expressed in meV: bond coefficients
/// `c_b = -t * (e a^2 / hbar) * integral_b`.
pub fn magnetic_operator(
    field: &FieldPolynomial,
    graph: &BondGraph,
    t: f64,
) -> OneBodyOperator {
    let a_m = graph.lattice_constant * 1e-9;
    let scale = field.energy_scale * ELEMENTARY_CHARGE * a_m * a_m / HBAR;
    let coeffs = vector_potential(field, graph)
        .into_iter()
        .map(|int_a| -t * scale * int_a)
        .collect();
    OneBodyOperator::BondImaginary(coeffs)
}

/// Dipole operator component (`-e r n`), diagonal per site, reported in
/// units of 1e-30 C m. Origin at the geometric center of the active sites
/// so that mirror symmetries are exact.
pub fn dipole_operator(graph: &BondGraph, axis: Axis) -> OneBodyOperator {
    let (cx, cy) = graph.center();
    let a_m = graph.lattice_constant * 1e-9;
    let unit = ELEMENTARY_CHARGE * a_m * 1e30;
    OneBodyOperator::SiteDiagonal(
        graph
            .sites()
            .iter()
            .map(|&(x, y)| {
                let d = match axis {
                    Axis::X => x as f64 - cx,
                    Axis::Y => y as f64 - cy,
                };
                -unit * d
            })
            .collect(),
    )
}

/// The converged mean-field one-body matrix as structured operators
/// (hopping plus on-site spin blocks), for energy matrix elements.
pub fn hf_operator(mf: &MeanFieldSolution, graph: &BondGraph) -> Vec<OneBodyOperator> {
    let hopping = OneBodyOperator::BondReal(vec![-mf.params.t; graph.bond_count()]);
    let u = mf.params.u;
    let blocks = (0..graph.site_count())
        .map(|j| {
            let (nj, sx, sy, sz) = (mf.fields.occupation[j], mf.fields.sx(j), mf.fields.sy(j), mf.fields.sz(j));
            [
                c64::new(u * (nj / 2.0 - sz), 0.0),
                c64::new(-u * sx, u * sy),
                c64::new(-u * sx, -u * sy),
                c64::new(u * (nj / 2.0 + sz), 0.0),
            ]
        })
        .collect();
    vec![hopping, OneBodyOperator::SpinBlock(blocks)]
}

/// Overlap and one-body matrix elements between two dressed determinants.
#[derive(Debug, Clone)]
pub struct PairElements {
    pub overlap: c64,
    pub values: Vec<c64>,
    /// Set when `|det M|` fell below the singular-overlap threshold; the
    /// element values are then defined as zero.
    pub singular: bool,
}

/// Threshold under which the occupied-orbital overlap is treated as
/// singular and elements are defined as zero.
pub const SINGULAR_OVERLAP: f64 = 1e-14;

fn dressed(occ: &Mat<c64>, phases: &[c64]) -> Mat<c64> {
    let mut p = occ.clone();
    for j in 0..phases.len() {
        for s in 0..2 {
            let row = spin_index(j, s);
            for g in 0..p.ncols() {
                p[(row, g)] *= phases[j];
            }
        }
    }
    p
}

/// Generalized one-body matrix elements between the determinants dressed by
/// `phases_a` and `phases_b` over a common occupied set.
pub fn pair_elements(
    occ: &Mat<c64>,
    phases_a: &[c64],
    phases_b: &[c64],
    ops: &[&OneBodyOperator],
    graph: &BondGraph,
) -> Result<PairElements> {
    let n_occ = occ.ncols();
    let pa = dressed(occ, phases_a);
    let pb = dressed(occ, phases_b);
    let m = pa.adjoint() * &pb;
    let lu = LuFactors::new(m.as_ref());
    let det = lu.det();
    if lu.log_abs_det < SINGULAR_OVERLAP.ln() {
        return Ok(PairElements {
            overlap: det,
            values: vec![c64::new(0.0, 0.0); ops.len()],
            singular: true,
        });
    }
    // Y = M^-1 P_a^H, so every element is det(M) tr(Y O P_b); only entries
    // of (P_b Y) on the operator's support are needed.
    let y = lu.solve(pa.adjoint().to_owned().as_ref());
    let pby_entry = |rp: usize, c: usize| -> c64 {
        let mut acc = c64::new(0.0, 0.0);
        for g in 0..n_occ {
            acc += pb[(rp, g)] * y[(g, c)];
        }
        acc
    };

    let values = ops
        .iter()
        .map(|op| {
            let mut tr = c64::new(0.0, 0.0);
            match op {
                OneBodyOperator::SiteDiagonal(d) => {
                    for (j, &dj) in d.iter().enumerate() {
                        for s in 0..2 {
                            let r = spin_index(j, s);
                            tr += dj * pby_entry(r, r);
                        }
                    }
                }
                OneBodyOperator::BondImaginary(c) => {
                    for (b, bond) in graph.bonds().iter().enumerate() {
                        if c[b] == 0.0 {
                            continue;
                        }
                        let ic = c64::new(0.0, c[b]);
                        for s in 0..2 {
                            let h = spin_index(bond.head, s);
                            let t = spin_index(bond.tail, s);
                            tr += ic * pby_entry(t, h);
                            tr -= ic * pby_entry(h, t);
                        }
                    }
                }
                OneBodyOperator::BondReal(c) => {
                    for (b, bond) in graph.bonds().iter().enumerate() {
                        if c[b] == 0.0 {
                            continue;
                        }
                        for s in 0..2 {
                            let h = spin_index(bond.head, s);
                            let t = spin_index(bond.tail, s);
                            tr += c[b] * (pby_entry(t, h) + pby_entry(h, t));
                        }
                    }
                }
                OneBodyOperator::SpinBlock(blocks) => {
                    for (j, blk) in blocks.iter().enumerate() {
                        let (up, dn) = (spin_index(j, 0), spin_index(j, 1));
                        tr += blk[0] * pby_entry(up, up);
                        tr += blk[1] * pby_entry(dn, up);
                        tr += blk[2] * pby_entry(up, dn);
                        tr += blk[3] * pby_entry(dn, dn);
                    }
                }
            }
            det * tr
        })
        .collect();

    Ok(PairElements {
        overlap: det,
        values,
        singular: false,
    })
}

/// Pattern-basis matrices over a set of current states: overlaps and the
/// requested operators, assembled pairwise with Hermitian symmetry.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub labels: Vec<String>,
    pub overlap: Mat<c64>,
    /// One matrix per requested operator, same order.
    pub operators: Vec<Mat<c64>>,
    pub any_singular: bool,
}

pub fn assemble_coupling(
    mf: &MeanFieldSolution,
    graph: &BondGraph,
    states: &[&CurrentState],
    ops: &[&OneBodyOperator],
) -> Result<CouplingMatrix> {
    let n = states.len();
    let occ = &mf.orbitals.occupied;
    let mut overlap = Mat::<c64>::zeros(n, n);
    let mut mats = vec![Mat::<c64>::zeros(n, n); ops.len()];
    let mut any_singular = false;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a..n).map(move |b| (a, b)))
        .collect();
    let results: Vec<PairElements> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            pairs
                .par_iter()
                .map(|&(a, b)| {
                    pair_elements(occ, &states[a].site_phases, &states[b].site_phases, ops, graph)
                })
                .collect::<Result<Vec<_>>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            pairs
                .iter()
                .map(|&(a, b)| {
                    pair_elements(occ, &states[a].site_phases, &states[b].site_phases, ops, graph)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    for (&(a, b), pe) in pairs.iter().zip(&results) {
        any_singular |= pe.singular;
        overlap[(a, b)] = pe.overlap;
        overlap[(b, a)] = pe.overlap.conj();
        for (k, v) in pe.values.iter().enumerate() {
            mats[k][(a, b)] = *v;
            mats[k][(b, a)] = v.conj();
        }
    }

    Ok(CouplingMatrix {
        labels: states.iter().map(|s| s.pattern.label.clone()).collect(),
        overlap,
        operators: mats,
        any_singular,
    })
}

/// Orthogonalized eigenstates of the magnetic coupling within the pattern
/// subspace, ordered by ascending total energy.
#[derive(Debug, Clone)]
pub struct SpectrumStates {
    /// Basis labels (pattern labels), defining the rows of `coefficients`.
    pub basis_labels: Vec<String>,
    /// Per-state label inherited from the dominant basis component.
    pub state_labels: Vec<String>,
    /// Coefficients of each orthonormal state in the pattern basis
    /// (columns are states).
    pub coefficients: Mat<c64>,
    /// Total energy per state, meV.
    pub total_energies: Vec<f64>,
    /// Mean-field part per state, meV.
    pub hf_energies: Vec<f64>,
    /// Field part per state, meV.
    pub field_energies: Vec<f64>,
}

/// Diagonalize the magnetic coupling in the nonorthogonal pattern basis
/// (Loewdin orthogonalization, then a dense Hermitian eigensolve) and
/// evaluate per-state energies as expectations of `H_HF + H_B`.
pub fn diagonalize_basis(
    coupling: &CouplingMatrix,
    hb_index: usize,
    hf_indices: &[usize],
) -> Result<SpectrumStates> {
    let n = coupling.labels.len();
    let hb = &coupling.operators[hb_index];
    if linalg::hermiticity_defect(hb.as_ref()) > 1e-10 * (1.0 + hb[(0, 0)].norm()) {
        return Err(Error::SolverFailure("magnetic coupling matrix is not Hermitian".into()));
    }
    let x = linalg::inv_sqrt_hermitian(coupling.overlap.as_ref(), SINGULAR_OVERLAP)?;
    let hb_orth = &x * hb * &x;
    let (_vals, u) = linalg::eigh_complex(hb_orth.as_ref())?;
    let c = &x * &u;

    let mut hf_total = Mat::<c64>::zeros(n, n);
    for &k in hf_indices {
        hf_total += &coupling.operators[k];
    }
    let hf_diag = c.adjoint() * &hf_total * &c;
    let hb_diag = c.adjoint() * hb * &c;

    let mut order: Vec<usize> = (0..n).collect();
    let totals: Vec<f64> = (0..n).map(|a| (hf_diag[(a, a)] + hb_diag[(a, a)]).re).collect();
    order.sort_by(|&a, &b| totals[a].partial_cmp(&totals[b]).unwrap());

    let mut coefficients = Mat::<c64>::zeros(n, n);
    let mut total_energies = Vec::with_capacity(n);
    let mut hf_energies = Vec::with_capacity(n);
    let mut field_energies = Vec::with_capacity(n);
    let mut state_labels = Vec::with_capacity(n);
    // Dominant component in the covariant (overlap-weighted) sense.
    let s_c = &coupling.overlap * &c;
    for (slot, &a) in order.iter().enumerate() {
        for p in 0..n {
            coefficients[(p, slot)] = c[(p, a)];
        }
        total_energies.push(totals[a]);
        hf_energies.push(hf_diag[(a, a)].re);
        field_energies.push(hb_diag[(a, a)].re);
        let dominant = (0..n)
            .max_by(|&p, &q| {
                s_c[(p, a)]
                    .norm()
                    .partial_cmp(&s_c[(q, a)].norm())
                    .unwrap()
            })
            .unwrap();
        state_labels.push(coupling.labels[dominant].clone());
    }

    Ok(SpectrumStates {
        basis_labels: coupling.labels.clone(),
        state_labels,
        coefficients,
        total_energies,
        hf_energies,
        field_energies,
    })
}

/// Transition dipole matrices between orthogonalized states, units
/// 1e-30 C m.
#[derive(Debug, Clone)]
pub struct DipoleMatrix {
    pub labels: Vec<String>,
    pub mu_x: Mat<c64>,
    pub mu_y: Mat<c64>,
}

/// Rotate pattern-basis dipole matrices into the orthogonalized eigenbasis.
pub fn transition_dipoles(
    states: &SpectrumStates,
    mu_x_basis: &Mat<c64>,
    mu_y_basis: &Mat<c64>,
) -> DipoleMatrix {
    let c = &states.coefficients;
    DipoleMatrix {
        labels: states.state_labels.clone(),
        mu_x: c.adjoint() * mu_x_basis * c,
        mu_y: c.adjoint() * mu_y_basis * c,
    }
}
