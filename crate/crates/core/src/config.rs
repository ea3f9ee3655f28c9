//! Run configuration: a single TOML file describing lattice, physics,
//! qubits, field, feeds, solver tolerances, and outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chi::{ChiSolveOptions, FeedSpec};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::meanfield::{HubbardParams, ScfOptions};
use crate::observables::FieldPolynomial;
use crate::qubit::{DcqSpec, QubitLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub nx: i32,
    pub ny: i32,
    #[serde(default = "default_lattice_constant")]
    pub lattice_constant_nm: f64,
    /// Individual barrier sites as `[x, y]`.
    #[serde(default)]
    pub barrier_sites: Vec<(i32, i32)>,
    /// Whole barrier columns with an inclusive row range.
    #[serde(default)]
    pub barrier_columns: Vec<BarrierColumn>,
}

fn default_lattice_constant() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierColumn {
    pub x: i32,
    pub y_from: i32,
    pub y_to: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "default_t")]
    pub t_mev: f64,
    #[serde(default = "default_u_over_t")]
    pub u_over_t: f64,
    /// Electron count; omitted means one doped hole per vortex.
    #[serde(default)]
    pub n_electrons: Option<usize>,
}

fn default_t() -> f64 {
    130.0
}
fn default_u_over_t() -> f64 {
    8.0
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection {
            t_mev: default_t(),
            u_over_t: default_u_over_t(),
            n_electrons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcqSection {
    /// Quartet center, lattice units.
    pub center: (f64, f64),
    /// Vortex offset from the center along both axes.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default)]
    pub c_xx: f64,
    #[serde(default)]
    pub c_x: f64,
    #[serde(default)]
    pub c_yy: f64,
    #[serde(default)]
    pub c_y: f64,
    #[serde(default)]
    pub c_0: f64,
    #[serde(default)]
    pub gauge_shift: f64,
    #[serde(default = "default_energy_scale")]
    pub energy_scale: f64,
}

fn default_energy_scale() -> f64 {
    1.0
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            c_xx: 0.0,
            c_x: 0.0,
            c_yy: 0.0,
            c_y: 0.0,
            c_0: 0.0,
            gauge_shift: 0.0,
            energy_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSection {
    pub sources: Vec<(i32, i32)>,
    pub drains: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scf_tol: f64,
    pub scf_max_iter: usize,
    pub scf_mixing: f64,
    pub anderson: bool,
    pub chi_grad_tol: f64,
    pub chi_max_newton: usize,
    /// Pre-converge each qubit's texture on a sub-lattice window and paste
    /// the results into the global seed (multi-qubit layouts only).
    pub region_seeding: bool,
    /// Half-width of the sub-lattice window around each quartet center.
    pub region_window: i32,
}

impl Default for SolverSection {
    fn default() -> Self {
        let scf = ScfOptions::default();
        let chi = ChiSolveOptions::default();
        SolverSection {
            scf_tol: scf.tol,
            scf_max_iter: scf.max_iter,
            scf_mixing: scf.mixing,
            anderson: scf.anderson,
            chi_grad_tol: chi.grad_tol,
            chi_max_newton: chi.max_newton,
            region_seeding: true,
            region_window: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Feed magnitudes for single-shot subcommands, units 2et/hbar.
    pub feed_magnitudes: BTreeMap<String, f64>,
    /// Seed for randomized initializations (texture jitter); the pipeline
    /// is fully deterministic for a fixed seed.
    pub seed: u64,
    /// Amplitude of the seeded azimuth jitter applied to the initial
    /// texture; zero (the default) disables it.
    pub seed_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    /// Either an explicit list...
    #[serde(default)]
    pub values: Vec<f64>,
    /// ...or an inclusive linear range.
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    /// Feeds locked to `ratio * parameter`.
    #[serde(default)]
    pub ratios: BTreeMap<String, f64>,
    #[serde(default = "default_refine")]
    pub refine_levels: usize,
}

fn default_refine() -> usize {
    3
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !self.values.is_empty() {
            return Ok(self.values.clone());
        }
        match (self.from, self.to, self.steps) {
            (Some(a), Some(b), Some(n)) if n >= 2 => {
                Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
            }
            _ => Err(Error::Config(
                "sweep needs either `values` or `from`/`to`/`steps >= 2`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub dcq: Vec<DcqSection>,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub feeds: BTreeMap<String, FeedSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// SHA-256 of the canonical serialized form with the output location
    /// normalized away, hex-encoded. Two runs of the same physics into
    /// different directories carry the same hash.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canonical = self.clone();
        canonical.output = Default::default();
        let mut h = Sha256::new();
        h.update(canonical.to_toml().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Built-in configurations.
    pub fn preset(name: &str) -> Result<Self> {
        let layout = crate::qubit::preset(name)?;
        let mut cfg = Self::from_layout(&layout);
        match name {
            "paper-3dcq" => {
                cfg.solver.scf_tol = 1e-6;
                cfg.solver.scf_max_iter = 1500;
            }
            "desk-1svq" => {
                cfg.solver.scf_max_iter = 2500;
            }
            _ => {}
        }
        Ok(cfg)
    }

    fn from_layout(layout: &QubitLayout) -> Self {
        // Compress full columns for readability.
        let mut by_col: BTreeMap<i32, Vec<i32>> = BTreeMap::new();
        for &(x, y) in &layout.lattice.barrier_sites {
            by_col.entry(x).or_default().push(y);
        }
        let mut barrier_columns = Vec::new();
        let mut barrier_sites = Vec::new();
        for (x, mut ys) in by_col {
            ys.sort_unstable();
            let contiguous = ys.windows(2).all(|w| w[1] == w[0] + 1);
            if ys.len() >= 3 && contiguous {
                barrier_columns.push(BarrierColumn {
                    x,
                    y_from: ys[0],
                    y_to: *ys.last().unwrap(),
                });
            } else {
                barrier_sites.extend(ys.into_iter().map(|y| (x, y)));
            }
        }
        RunConfig {
            lattice: LatticeSection {
                nx: layout.lattice.nx,
                ny: layout.lattice.ny,
                lattice_constant_nm: layout.lattice.lattice_constant,
                barrier_sites,
                barrier_columns,
            },
            physics: PhysicsSection {
                n_electrons: Some(layout.n_electrons),
                ..Default::default()
            },
            dcq: layout
                .dcqs
                .iter()
                .map(|d| DcqSection {
                    center: d.center,
                    offset: (d.center.0 - (d.vortices[0].plaquette.0 as f64 + 0.5)).abs(),
                })
                .collect(),
            field: FieldSection {
                c_xx: layout.field.c_xx,
                c_x: layout.field.c_x,
                c_yy: layout.field.c_yy,
                c_y: layout.field.c_y,
                c_0: layout.field.c_0,
                gauge_shift: layout.field.gauge_shift,
                energy_scale: layout.field.energy_scale,
            },
            feeds: layout
                .feeds
                .iter()
                .map(|(name, f)| {
                    (
                        name.clone(),
                        FeedSection {
                            sources: f.sources.iter().map(|&(s, _)| s).collect(),
                            drains: f.drains.iter().map(|&(s, _)| s).collect(),
                        },
                    )
                })
                .collect(),
            solver: SolverSection::default(),
            run: RunSection::default(),
            sweep: None,
            output: OutputSection::default(),
        }
    }

    /// Cross-field validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let in_bounds = |x: i32, y: i32| x >= 1 && x <= self.lattice.nx && y >= 1 && y <= self.lattice.ny;
        for &(x, y) in &self.lattice.barrier_sites {
            if !in_bounds(x, y) {
                return Err(Error::Config(format!(
                    "lattice.barrier_sites: ({x}, {y}) outside [1, {}] x [1, {}]",
                    self.lattice.nx, self.lattice.ny
                )));
            }
        }
        for c in &self.lattice.barrier_columns {
            if !in_bounds(c.x, c.y_from) || !in_bounds(c.x, c.y_to) || c.y_from > c.y_to {
                return Err(Error::Config(format!(
                    "lattice.barrier_columns: column x={} rows {}..{} invalid",
                    c.x, c.y_from, c.y_to
                )));
            }
        }
        for (name, f) in &self.feeds {
            for &(x, y) in f.sources.iter().chain(&f.drains) {
                if !in_bounds(x, y) {
                    return Err(Error::Config(format!(
                        "feeds.{name}: terminal ({x}, {y}) outside the lattice"
                    )));
                }
            }
            if f.sources.len() != f.drains.len() {
                return Err(Error::Config(format!(
                    "feeds.{name}: {} sources vs {} drains (each terminal carries the full \
                     magnitude, so the counts must balance)",
                    f.sources.len(),
                    f.drains.len()
                )));
            }
        }
        for name in self.run.feed_magnitudes.keys() {
            if !self.feeds.contains_key(name) {
                return Err(Error::Config(format!(
                    "run.feed_magnitudes references undeclared feed '{name}'"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            sweep.grid()?;
            for name in std::iter::once(&sweep.parameter)
                .chain(sweep.fixed.keys())
                .chain(sweep.ratios.keys())
            {
                if !self.feeds.contains_key(name) {
                    return Err(Error::Config(format!(
                        "sweep references undeclared feed '{name}'"
                    )));
                }
            }
        }
        if !(self.physics.t_mev > 0.0) {
            return Err(Error::Config("physics.t_mev must be positive".into()));
        }
        Ok(())
    }

    /// Materialize the layout and solver options.
    pub fn build(&self) -> Result<(QubitLayout, HubbardParams, ScfOptions, ChiSolveOptions)> {
        let mut barrier_sites: BTreeSet<(i32, i32)> =
            self.lattice.barrier_sites.iter().copied().collect();
        for c in &self.lattice.barrier_columns {
            for y in c.y_from..=c.y_to {
                barrier_sites.insert((c.x, y));
            }
        }
        let mut lattice = LatticeSpec {
            nx: self.lattice.nx,
            ny: self.lattice.ny,
            lattice_constant: self.lattice.lattice_constant_nm,
            barrier_sites,
            hole_sites: BTreeSet::new(),
        };
        let dcqs: Vec<DcqSpec> = self
            .dcq
            .iter()
            .map(|d| DcqSpec::quartet(d.center, d.offset))
            .collect::<Result<_>>()?;
        for d in &dcqs {
            for v in &d.vortices {
                lattice.hole_sites.insert(v.plaquette);
            }
        }
        let feeds: BTreeMap<String, FeedSpec> = self
            .feeds
            .iter()
            .map(|(name, f)| {
                (
                    name.clone(),
                    FeedSpec {
                        sources: f.sources.iter().map(|&s| (s, 1.0)).collect(),
                        drains: f.drains.iter().map(|&s| (s, 1.0)).collect(),
                    },
                )
            })
            .collect();
        let n_active = {
            let total = (self.lattice.nx * self.lattice.ny) as usize;
            total - lattice.barrier_sites.len()
        };
        let n_vortices = dcqs.len() * 4;
        let n_electrons = self
            .physics
            .n_electrons
            .unwrap_or_else(|| n_active.saturating_sub(n_vortices));
        let layout = QubitLayout {
            lattice,
            dcqs,
            feeds,
            field: FieldPolynomial {
                c_xx: self.field.c_xx,
                c_x: self.field.c_x,
                c_yy: self.field.c_yy,
                c_y: self.field.c_y,
                c_0: self.field.c_0,
                gauge_shift: self.field.gauge_shift,
                energy_scale: self.field.energy_scale,
            },
            n_electrons,
        };
        layout.validate()?;
        let params = HubbardParams {
            t: self.physics.t_mev,
            u: self.physics.u_over_t * self.physics.t_mev,
            n_electrons,
            zeta_fixed: std::f64::consts::FRAC_PI_2,
        };
        let scf = ScfOptions {
            tol: self.solver.scf_tol,
            max_iter: self.solver.scf_max_iter,
            mixing: self.solver.scf_mixing,
            anderson: self.solver.anderson,
            ..Default::default()
        };
        let chi = ChiSolveOptions {
            grad_tol: self.solver.chi_grad_tol,
            max_newton: self.solver.chi_max_newton,
        };
        Ok((layout, params, scf, chi))
    }
}

/// Annotated example configuration (the desk preset with a sweep block).
pub fn annotated_example() -> String {
    let mut cfg = RunConfig::preset("desk-1svq").unwrap();
    cfg.sweep = Some(SweepSection {
        parameter: "Jex1".into(),
        values: vec![],
        from: Some(0.0),
        to: Some(0.05),
        steps: Some(6),
        fixed: BTreeMap::new(),
        ratios: BTreeMap::new(),
        refine_levels: default_refine(),
    });
    let body = cfg.to_toml();
    format!(
        "# svilc run configuration\n\
         #\n\
         # [lattice]   grid size, lattice constant (nm), barrier atoms\n\
         #             (deleted sites), given singly or as column ranges.\n\
         # [physics]   transfer integral t (meV), U/t, electron count\n\
         #             (default: one doped hole per vortex).\n\
         # [[dcq]]     one block per dipole-current qubit: quartet center\n\
         #             and vortex offset; vortex plaquette centers must be\n\
         #             half-integer coordinates.\n\
         # [field]     out-of-plane field B = c_xx x^2 + c_x x + c_yy y^2\n\
         #             + c_y y + c_0 (Tesla, x/y in lattice units);\n\
         #             gauge_shift adds a constant to A_y and must not\n\
         #             change physical results.\n\
         # [feeds.*]   named external current terminals; every listed site\n\
         #             carries the feed's full magnitude (2et/hbar).\n\
         # [solver]    SCF and phase-solver tolerances.\n\
         # [run]       feed magnitudes for single-shot commands; `seed`\n\
         #             drives the optional texture jitter `seed_noise`.\n\
         # [sweep]     swept feed, grid, held feeds, ratio-locked feeds.\n\
         # [output]    output directory for CSV/text artifacts.\n\n{body}"
    )
}
