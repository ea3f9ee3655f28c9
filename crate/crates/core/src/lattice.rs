//! Finite square-lattice geometry: active sites, nearest-neighbor bonds,
//! and an independent loop (plaquette) basis for winding-number
//! constraints.
//!
//! Coordinates are 1-based `(x, y)` with `x in 1..=nx`, `y in 1..=ny`.
//! Barrier atoms are modeled as deleted sites: all bonds touching them are
//! removed. Vortex centers sit at plaquette centers, identified by the
//! lower-left corner site of the plaquette, so the true center is at
//! `(px + 0.5, py + 0.5)`.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Geometry input for [`build_lattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub nx: i32,
    pub ny: i32,
    /// Lattice constant in nm.
    pub lattice_constant: f64,
    /// Sites substituted by barrier atoms (removed from the graph).
    pub barrier_sites: BTreeSet<(i32, i32)>,
    /// Lower-left corner sites of plaquettes hosting vortex centers.
    pub hole_sites: BTreeSet<(i32, i32)>,
}

impl LatticeSpec {
    pub fn plain(nx: i32, ny: i32) -> Self {
        LatticeSpec {
            nx,
            ny,
            lattice_constant: 0.4,
            barrier_sites: BTreeSet::new(),
            hole_sites: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 {
            return Err(Error::InvalidSpec(format!(
                "lattice dimensions must be positive, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.lattice_constant > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "lattice constant must be positive, got {}",
                self.lattice_constant
            )));
        }
        for &(x, y) in &self.barrier_sites {
            if x < 1 || x > self.nx || y < 1 || y > self.ny {
                return Err(Error::InvalidSpec(format!(
                    "barrier site ({x}, {y}) outside [1, {}] x [1, {}]",
                    self.nx, self.ny
                )));
            }
        }
        for &(px, py) in &self.hole_sites {
            // The plaquette needs all four corner sites inside the grid.
            if px < 1 || px >= self.nx || py < 1 || py >= self.ny {
                return Err(Error::InvalidSpec(format!(
                    "vortex plaquette ({px}, {py}) outside the grid interior"
                )));
            }
            if self.barrier_sites.contains(&(px, py)) {
                return Err(Error::InvalidSpec(format!(
                    "vortex plaquette ({px}, {py}) overlaps a barrier site"
                )));
            }
            for corner in [(px, py), (px + 1, py), (px, py + 1), (px + 1, py + 1)] {
                if self.barrier_sites.contains(&corner) {
                    return Err(Error::InvalidSpec(format!(
                        "corner {corner:?} of vortex plaquette ({px}, {py}) is a barrier site"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bond direction along the grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Nearest-neighbor bond. `tail < head` in site-index order, which for the
/// row-major indexing means tail is the site with smaller `(y, x)`.
#[derive(Debug, Clone, Copy)]
pub struct Bond {
    pub tail: usize,
    pub head: usize,
    pub axis: Axis,
}

/// One incidence entry in a site's adjacency list.
#[derive(Debug, Clone, Copy)]
pub struct Incidence {
    pub neighbor: usize,
    pub bond: usize,
    /// True when this site is the bond tail (bond points away from it).
    pub outgoing: bool,
}

/// Active-site graph over the masked grid.
#[derive(Debug, Clone)]
pub struct BondGraph {
    pub nx: i32,
    pub ny: i32,
    /// Lattice constant in nm.
    pub lattice_constant: f64,
    sites: Vec<(i32, i32)>,
    index: Vec<Option<usize>>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<Incidence>>,
}

impl BondGraph {
    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn sites(&self) -> &[(i32, i32)] {
        &self.sites
    }

    pub fn coord(&self, site: usize) -> (i32, i32) {
        self.sites[site]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn neighbors(&self, site: usize) -> &[Incidence] {
        &self.adjacency[site]
    }

    /// Site index for a coordinate, if active.
    pub fn site_at(&self, x: i32, y: i32) -> Option<usize> {
        if x < 1 || x > self.nx || y < 1 || y > self.ny {
            return None;
        }
        self.index[((y - 1) * self.nx + (x - 1)) as usize]
    }

    /// Geometric center of the active sites, in lattice units.
    pub fn center(&self) -> (f64, f64) {
        let n = self.sites.len() as f64;
        let (sx, sy) = self
            .sites
            .iter()
            .fold((0.0, 0.0), |acc, &(x, y)| (acc.0 + x as f64, acc.1 + y as f64));
        (sx / n, sy / n)
    }

    fn neighbor_in_dir(&self, site: usize, dir: usize) -> Option<Incidence> {
        let (x, y) = self.sites[site];
        let (tx, ty) = match dir {
            0 => (x + 1, y),
            1 => (x, y + 1),
            2 => (x - 1, y),
            3 => (x, y - 1),
            _ => unreachable!(),
        };
        let t = self.site_at(tx, ty)?;
        self.adjacency[site]
            .iter()
            .copied()
            .find(|inc| inc.neighbor == t)
    }
}

/// Build the bond graph over active sites. Sites are indexed row-major
/// (y outer, x inner) over the active subset, so indexing is deterministic
/// for a given mask.
pub fn build_lattice(spec: &LatticeSpec) -> Result<BondGraph> {
    spec.validate()?;

    let mut sites = Vec::new();
    let mut index = vec![None; (spec.nx * spec.ny) as usize];
    for y in 1..=spec.ny {
        for x in 1..=spec.nx {
            if !spec.barrier_sites.contains(&(x, y)) {
                index[((y - 1) * spec.nx + (x - 1)) as usize] = Some(sites.len());
                sites.push((x, y));
            }
        }
    }
    if sites.is_empty() {
        return Err(Error::AllBarriers);
    }

    let site_at = |x: i32, y: i32| -> Option<usize> {
        if x < 1 || x > spec.nx || y < 1 || y > spec.ny {
            None
        } else {
            index[((y - 1) * spec.nx + (x - 1)) as usize]
        }
    };

    let mut bonds = Vec::new();
    let mut adjacency = vec![Vec::new(); sites.len()];
    for (i, &(x, y)) in sites.iter().enumerate() {
        for (tx, ty, axis) in [(x + 1, y, Axis::X), (x, y + 1, Axis::Y)] {
            if let Some(j) = site_at(tx, ty) {
                let b = bonds.len();
                bonds.push(Bond {
                    tail: i,
                    head: j,
                    axis,
                });
                adjacency[i].push(Incidence {
                    neighbor: j,
                    bond: b,
                    outgoing: true,
                });
                adjacency[j].push(Incidence {
                    neighbor: i,
                    bond: b,
                    outgoing: false,
                });
            }
        }
    }

    // Connectivity by flood fill.
    let mut seen = vec![false; sites.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 1usize;
    while let Some(s) = stack.pop() {
        for inc in &adjacency[s] {
            if !seen[inc.neighbor] {
                seen[inc.neighbor] = true;
                reached += 1;
                stack.push(inc.neighbor);
            }
        }
    }
    if reached != sites.len() {
        // Count components for the error message.
        let mut comp = 1usize;
        for s in 0..sites.len() {
            if !seen[s] {
                comp += 1;
                let mut stack = vec![s];
                seen[s] = true;
                while let Some(u) = stack.pop() {
                    for inc in &adjacency[u] {
                        if !seen[inc.neighbor] {
                            seen[inc.neighbor] = true;
                            stack.push(inc.neighbor);
                        }
                    }
                }
            }
        }
        return Err(Error::Disconnected { n_components: comp });
    }

    Ok(BondGraph {
        nx: spec.nx,
        ny: spec.ny,
        lattice_constant: spec.lattice_constant,
        sites,
        index,
        bonds,
        adjacency,
    })
}

/// One basis loop: a closed walk through sites plus its signed bond
/// incidence vector (bridge edges traversed both ways cancel out).
#[derive(Debug, Clone)]
pub struct Loop {
    /// Cyclic site sequence; the walk closes back onto `sites[0]`.
    pub sites: Vec<usize>,
    /// Sparse cycle vector: `(bond index, +1/-1)` with +1 when the walk
    /// follows the bond tail -> head.
    pub bonds: Vec<(usize, i8)>,
    /// Enclosed signed area in lattice units (positive: counterclockwise).
    pub area: f64,
    /// Lower-left corner when the loop is a unit plaquette.
    pub plaquette: Option<(i32, i32)>,
}

/// Independent cycle basis from the bounded faces of the planar embedding.
#[derive(Debug, Clone)]
pub struct LoopBasis {
    pub loops: Vec<Loop>,
    /// The outer boundary walk (clockwise as traced), kept for whole-system
    /// winding checks.
    pub outer_boundary: Loop,
}

impl LoopBasis {
    pub fn n_loops(&self) -> usize {
        self.loops.len()
    }

    /// Face index of the unit plaquette with the given lower-left corner.
    pub fn plaquette_index(&self, corner: (i32, i32)) -> Option<usize> {
        self.loops.iter().position(|l| l.plaquette == Some(corner))
    }
}

/// Trace the bounded faces of the masked grid. Interior faces come out
/// counterclockwise (positive area); the single negative-area walk is the
/// outer boundary. The bounded faces of a connected planar graph form a
/// cycle basis with `|bonds| - |sites| + 1` elements.
pub fn plaquette_loop_basis(graph: &BondGraph) -> Result<LoopBasis> {
    let nb = graph.bond_count();
    let expected = nb + 1 - graph.site_count();

    // Directed edge id: bond * 2 + (0 forward, 1 backward).
    let mut visited = vec![false; nb * 2];
    let mut faces = Vec::new();
    let mut outer: Option<Loop> = None;

    let dir_of = |from: usize, to: usize| -> usize {
        let (x0, y0) = graph.coord(from);
        let (x1, y1) = graph.coord(to);
        match (x1 - x0, y1 - y0) {
            (1, 0) => 0,
            (0, 1) => 1,
            (-1, 0) => 2,
            (0, -1) => 3,
            _ => unreachable!("bond between non-adjacent sites"),
        }
    };

    for start_edge in 0..nb * 2 {
        if visited[start_edge] {
            continue;
        }
        let mut walk_sites = Vec::new();
        let mut walk_bonds: Vec<(usize, i8)> = Vec::new();
        let mut edge = start_edge;
        loop {
            visited[edge] = true;
            let bond = graph.bonds()[edge / 2];
            let (from, to) = if edge % 2 == 0 {
                (bond.tail, bond.head)
            } else {
                (bond.head, bond.tail)
            };
            walk_sites.push(from);
            walk_bonds.push((edge / 2, if edge % 2 == 0 { 1 } else { -1 }));

            // Leftmost-turn rule: try left of the incoming heading first,
            // then straight, right, and finally back.
            let din = dir_of(from, to);
            let mut next = None;
            for turn in [1usize, 0, 3, 2] {
                let d = (din + turn) % 4;
                if let Some(inc) = graph.neighbor_in_dir(to, d) {
                    let e = inc.bond * 2 + if inc.outgoing { 0 } else { 1 };
                    next = Some(e);
                    break;
                }
            }
            let e = next.expect("active site with no incident bond");
            edge = e;
            if edge == start_edge {
                break;
            }
        }

        // Net cycle vector: cancel bonds traversed in both directions.
        let mut net = std::collections::BTreeMap::new();
        for &(b, s) in &walk_bonds {
            *net.entry(b).or_insert(0i32) += s as i32;
        }
        let bonds_vec: Vec<(usize, i8)> = net
            .into_iter()
            .filter(|&(_, s)| s != 0)
            .map(|(b, s)| {
                debug_assert!(s.abs() == 1);
                (b, s as i8)
            })
            .collect();

        // Shoelace area of the walk polygon.
        let mut area = 0.0;
        for i in 0..walk_sites.len() {
            let (x0, y0) = graph.coord(walk_sites[i]);
            let (x1, y1) = graph.coord(walk_sites[(i + 1) % walk_sites.len()]);
            area += (x0 as f64) * (y1 as f64) - (x1 as f64) * (y0 as f64);
        }
        area *= 0.5;

        let plaquette = if walk_sites.len() == 4 && (area - 1.0).abs() < 1e-12 {
            let corner = walk_sites
                .iter()
                .map(|&s| graph.coord(s))
                .min_by_key(|&(x, y)| (y, x))
                .unwrap();
            Some(corner)
        } else {
            None
        };

        let l = Loop {
            sites: walk_sites,
            bonds: bonds_vec,
            area,
            plaquette,
        };
        if area > 1e-12 {
            faces.push(l);
        } else if area < -1e-12 {
            if outer.is_some() {
                return Err(Error::SolverFailure(
                    "face tracing produced more than one outer boundary".into(),
                ));
            }
            outer = Some(l);
        }
        // Zero-area walks (pure tree appendages) carry no cycle content and
        // are dropped; their bond vector is empty.
    }

    if faces.len() != expected {
        return Err(Error::SolverFailure(format!(
            "face count {} does not match cycle rank {}",
            faces.len(),
            expected
        )));
    }

    // Deterministic order: by minimal (y, x) corner of the walk.
    faces.sort_by_key(|l| {
        l.sites
            .iter()
            .map(|&s| {
                let (x, y) = graph.coord(s);
                (y, x)
            })
            .min()
            .unwrap()
    });

    let outer_boundary = outer.unwrap_or(Loop {
        sites: Vec::new(),
        bonds: Vec::new(),
        area: 0.0,
        plaquette: None,
    });

    Ok(LoopBasis {
        loops: faces,
        outer_boundary,
    })
}

/// Principal-branch wrap of an angle difference onto `[-pi, pi]`.
///
/// Values at exactly +-pi keep their sign instead of collapsing onto one
/// endpoint. Antiferromagnetic textures step by exactly pi between
/// neighbors, and collapsing the sign there would report spurious windings
/// on vortex-free fields.
pub fn wrap_angle(d: f64) -> f64 {
    d - TAU * (d / TAU).round_ties_even()
}

/// Winding number of an angle field around a cyclic site sequence:
/// `(1/2pi) * sum of wrapped consecutive differences`. The sequence is
/// treated as closed (last site connects back to the first).
pub fn winding_number(angles: &[f64], cycle: &[usize]) -> Result<i32> {
    if cycle.len() < 3 {
        return Err(Error::LoopNotClosed(format!(
            "cycle has only {} sites",
            cycle.len()
        )));
    }
    for &s in cycle {
        if s >= angles.len() {
            return Err(Error::LoopNotClosed(format!(
                "site index {s} out of range ({} angles)",
                angles.len()
            )));
        }
    }
    let mut total = 0.0;
    for i in 0..cycle.len() {
        let a = angles[cycle[i]];
        let b = angles[cycle[(i + 1) % cycle.len()]];
        total += wrap_angle(b - a);
    }
    let w = total / TAU;
    let rounded = w.round();
    if (w - rounded).abs() > 0.25 {
        return Err(Error::NonIntegerWinding { value: w });
    }
    Ok(rounded as i32)
}

/// Winding computed from a per-bond wrapped-difference field, evaluated on
/// a sparse cycle vector. Equals [`winding_number`] on bond walks and makes
/// the linearity of winding under cycle combination explicit.
pub fn winding_from_bond_field(bond_diffs: &[f64], cycle: &[(usize, i8)]) -> f64 {
    cycle
        .iter()
        .map(|&(b, s)| f64::from(s) * bond_diffs[b])
        .sum::<f64>()
        / TAU
}

/// The 8-site ring used to read off a vortex winding, centered on the
/// plaquette with lower-left corner `(px, py)`: the octagon through the
/// eight sites at distance ~1.5 from the plaquette center. Near a boundary
/// the octagon may stick out of the grid; the four plaquette corners are
/// used instead (any cycle enclosing exactly this plaquette reads the same
/// winding).
pub fn vortex_ring(graph: &BondGraph, px: i32, py: i32) -> Result<Vec<usize>> {
    let octagon = [
        (px + 2, py),
        (px + 2, py + 1),
        (px + 1, py + 2),
        (px, py + 2),
        (px - 1, py + 1),
        (px - 1, py),
        (px, py - 1),
        (px + 1, py - 1),
    ];
    let ring: Option<Vec<usize>> = octagon.iter().map(|&(x, y)| graph.site_at(x, y)).collect();
    if let Some(r) = ring {
        return Ok(r);
    }
    let corners = [(px, py), (px + 1, py), (px + 1, py + 1), (px, py + 1)];
    corners
        .iter()
        .map(|&(x, y)| {
            graph.site_at(x, y).ok_or_else(|| {
                Error::LoopNotClosed(format!(
                    "vortex plaquette corner ({x}, {y}) is not an active site"
                ))
            })
        })
        .collect()
}

/// Azimuth of site `j` as seen from the plaquette center `(px+0.5, py+0.5)`.
pub fn azimuth_from_center(x: i32, y: i32, px: i32, py: i32) -> f64 {
    let cy = py as f64 + 0.5;
    let cx = px as f64 + 0.5;
    (y as f64 - cy).atan2(x as f64 - cx)
}

/// Antiferromagnetic background angle `pi * (x + y)`.
pub fn af_background(x: i32, y: i32) -> f64 {
    PI * ((x + y) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: i32, ny: i32) -> BondGraph {
        build_lattice(&LatticeSpec::plain(nx, ny)).unwrap()
    }

    #[test]
    fn bond_counts_match_grid_formula() {
        let g = grid(8, 8);
        assert_eq!(g.site_count(), 64);
        assert_eq!(g.bond_count(), 112);
        let g = grid(2, 2);
        assert_eq!(g.site_count(), 4);
        assert_eq!(g.bond_count(), 4);
    }

    #[test]
    fn plaquette_count_full_grid() {
        let g = grid(8, 8);
        let basis = plaquette_loop_basis(&g).unwrap();
        assert_eq!(basis.n_loops(), 49);
        assert!(basis.loops.iter().all(|l| l.plaquette.is_some()));
        let g = grid(2, 2);
        let basis = plaquette_loop_basis(&g).unwrap();
        assert_eq!(basis.n_loops(), 1);
        assert_eq!(basis.loops[0].sites.len(), 4);
    }

    #[test]
    fn interior_barrier_makes_eight_site_ring() {
        let mut spec = LatticeSpec::plain(5, 5);
        spec.barrier_sites.insert((3, 3));
        let g = build_lattice(&spec).unwrap();
        assert_eq!(g.site_count(), 24);
        assert_eq!(g.bond_count(), 36);
        let basis = plaquette_loop_basis(&g).unwrap();
        assert_eq!(basis.n_loops(), 13);
        let rings: Vec<&Loop> = basis.loops.iter().filter(|l| l.plaquette.is_none()).collect();
        assert_eq!(rings.len(), 1);
        assert_eq!(rings[0].sites.len(), 8);
        assert!((rings[0].area - 4.0).abs() < 1e-12);
    }

    #[test]
    fn full_barrier_columns_disconnect() {
        let mut spec = LatticeSpec::plain(112, 15);
        for x in [30, 32, 82, 84] {
            for y in 1..=15 {
                spec.barrier_sites.insert((x, y));
            }
        }
        match build_lattice(&spec) {
            Err(Error::Disconnected { n_components }) => assert_eq!(n_components, 5),
            other => panic!("expected disconnection, got {other:?}"),
        }
        // A remaining Cu row bridges the regions.
        let mut spec2 = spec.clone();
        for x in [30, 32, 82, 84] {
            spec2.barrier_sites.remove(&(x, 15));
        }
        let g = build_lattice(&spec2).unwrap();
        assert_eq!(g.site_count(), 112 * 15 - 4 * 14);
    }

    #[test]
    fn barrier_everything_rejected() {
        let mut spec = LatticeSpec::plain(2, 2);
        for x in 1..=2 {
            for y in 1..=2 {
                spec.barrier_sites.insert((x, y));
            }
        }
        assert!(matches!(build_lattice(&spec), Err(Error::AllBarriers)));
    }

    #[test]
    fn winding_constant_field_is_zero() {
        let g = grid(4, 4);
        let basis = plaquette_loop_basis(&g).unwrap();
        let angles = vec![0.7; g.site_count()];
        for l in &basis.loops {
            assert_eq!(winding_number(&angles, &l.sites).unwrap(), 0);
        }
    }

    #[test]
    fn winding_azimuth_ring_is_one() {
        let g = grid(6, 6);
        let angles: Vec<f64> = g
            .sites()
            .iter()
            .map(|&(x, y)| azimuth_from_center(x, y, 3, 3))
            .collect();
        let ring = vortex_ring(&g, 3, 3).unwrap();
        assert_eq!(ring.len(), 8);
        assert_eq!(winding_number(&angles, &ring).unwrap(), 1);
        // Orientation reversal flips the sign.
        let rev: Vec<usize> = ring.iter().rev().copied().collect();
        assert_eq!(winding_number(&angles, &rev).unwrap(), -1);
    }

    #[test]
    fn af_field_with_sign_preserving_wrap_has_zero_windings() {
        let g = grid(6, 6);
        let basis = plaquette_loop_basis(&g).unwrap();
        let angles: Vec<f64> = g.sites().iter().map(|&(x, y)| af_background(x, y)).collect();
        for l in &basis.loops {
            assert_eq!(winding_number(&angles, &l.sites).unwrap(), 0);
        }
    }

    #[test]
    fn face_windings_sum_to_boundary_winding() {
        let mut spec = LatticeSpec::plain(7, 5);
        spec.barrier_sites.insert((4, 3));
        let g = build_lattice(&spec).unwrap();
        let basis = plaquette_loop_basis(&g).unwrap();
        // A deliberately rough angle field.
        let angles: Vec<f64> = g
            .sites()
            .iter()
            .map(|&(x, y)| {
                azimuth_from_center(x, y, 2, 2) + 0.9 * azimuth_from_center(x, y, 5, 3).sin()
            })
            .collect();
        let total: i32 = basis
            .loops
            .iter()
            .map(|l| winding_number(&angles, &l.sites).unwrap())
            .sum();
        let boundary_rev: Vec<usize> = basis.outer_boundary.sites.iter().rev().copied().collect();
        let w_outer = winding_number(&angles, &boundary_rev).unwrap();
        assert_eq!(total, w_outer);
    }

    #[test]
    fn loop_not_closed_errors() {
        let angles = vec![0.0; 4];
        assert!(matches!(
            winding_number(&angles, &[0, 1]),
            Err(Error::LoopNotClosed(_))
        ));
        assert!(matches!(
            winding_number(&angles, &[0, 1, 9]),
            Err(Error::LoopNotClosed(_))
        ));
    }

    #[test]
    fn wrap_angle_keeps_tie_signs() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }
}
