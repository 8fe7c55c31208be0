//! Run configuration, scenario presets, reproducible runs and their export,
//! and the certificate checks driven from an exported run.
//!
//! A config is a TOML file with the sections `[scenario]`, `[flow]`,
//! `[kernel]`, `[constants]` and `[check]` plus a top-level `seed`. Values
//! not given in the file come from the selected preset.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barriers::{self, BarrierFunction, CertificateParams, Orientation};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fields::Bump;
use crate::flow::{self, FlowConfig, FlowTrace, Interpolation, Schedule, Snapshot, StepDiagnostics, StepRecord};
use crate::geometry::{self, MonteCarlo, OpenPartition, SurfaceMesh};
use crate::io;
use crate::metrics::{self, DiscreteMeasure};
use crate::mollifier::{unit_ball_volume, KernelParams};
use crate::scenarios;
use crate::tolerances;
use crate::varifold::DiscreteVarifold;
use crate::verdict::Verdict;

pub const MANIFEST_NAME: &str = "trace.json";
pub const FRAME_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Circle,
    Sphere,
    TwoConcentricCircles,
    SquarePartition,
    TwoRegion,
    #[serde(alias = "enlaced")]
    EnlacedCircles,
    /// Boundary mesh read from `scenario.path` (OFF, OBJ or segment CSV).
    MeshFile,
    /// Varifold CSV read from `scenario.path`.
    VarifoldFile,
}

impl Preset {
    pub const BUILT_IN: [Preset; 6] = [
        Preset::Circle,
        Preset::Sphere,
        Preset::TwoConcentricCircles,
        Preset::SquarePartition,
        Preset::TwoRegion,
        Preset::EnlacedCircles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Circle => "circle",
            Preset::Sphere => "sphere",
            Preset::TwoConcentricCircles => "two-concentric-circles",
            Preset::SquarePartition => "square-partition",
            Preset::TwoRegion => "two-region",
            Preset::EnlacedCircles => "enlaced-circles",
            Preset::MeshFile => "mesh-file",
            Preset::VarifoldFile => "varifold-file",
        }
    }

    pub fn parse(name: &str) -> Result<Preset> {
        if name == "enlaced" {
            return Ok(Preset::EnlacedCircles);
        }
        [Preset::MeshFile, Preset::VarifoldFile]
            .into_iter()
            .chain(Preset::BUILT_IN)
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config { location: "scenario.preset".into(), message: format!("unknown preset '{name}'") })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Preset,
    /// Samples per curve or loop (ignored by the sphere).
    pub count: usize,
    /// Circle or sphere radius, outer radius of the concentric pair, disk radius of two-region.
    pub radius: f64,
    pub inner_radius: f64,
    /// Side length of the square.
    pub side: f64,
    /// Center distance from the origin of each disk in two-region.
    pub offset: f64,
    /// Icosphere refinement levels.
    pub levels: usize,
    /// Atoms per mesh simplex for mesh-based scenarios.
    pub samples_per_simplex: usize,
    pub path: Option<PathBuf>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            preset: Preset::Circle,
            count: 200,
            radius: 1.0,
            inner_radius: 0.5,
            side: 2.0,
            offset: 0.7,
            levels: 2,
            samples_per_simplex: 1,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub eps: f64,
    pub end: f64,
    /// Uniform step; the largest gate-admissible step dividing `end` when absent.
    pub dt: Option<f64>,
    /// Explicit subdivision, overriding `end` and `dt`.
    pub times: Option<Vec<f64>>,
    /// M; the initial mass rounded up when absent.
    pub mass_bound: Option<f64>,
    pub mode: Interpolation,
    pub enforce_gate: bool,
    pub record_dissipation: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            eps: 0.1,
            end: 0.3,
            dt: None,
            times: None,
            mass_bound: None,
            mode: Interpolation::Piecewise,
            enforce_gate: true,
            record_dissipation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    /// c₃ in c₃ δ ≤ (M+1)⁻³ ε⁸.
    pub c3: f64,
    /// c₅ in c₅ δ ε⁻⁸ ≤ ε.
    pub c5: f64,
    pub eps0: f64,
    /// c₆ of the stability bound, if known.
    pub c6: Option<f64>,
    /// c_n; the sharp Euclidean constant when absent.
    pub isoperimetric: Option<f64>,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self { c3: 1.0, c5: 1.0, eps0: 1.0, c6: None, isoperimetric: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    MassDecay,
    DissipationBudget,
    TechnicalLemma,
    BarrierDefect,
    EpsSphereBarrier,
    VolumeChange,
    Nontriviality,
    ConvexHull,
    Lsc,
    Avoidance,
}

impl Certificate {
    pub const ALL: [Certificate; 10] = [
        Certificate::MassDecay,
        Certificate::DissipationBudget,
        Certificate::TechnicalLemma,
        Certificate::BarrierDefect,
        Certificate::EpsSphereBarrier,
        Certificate::VolumeChange,
        Certificate::Nontriviality,
        Certificate::ConvexHull,
        Certificate::Lsc,
        Certificate::Avoidance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Certificate::MassDecay => "mass-decay",
            Certificate::DissipationBudget => "dissipation-budget",
            Certificate::TechnicalLemma => "technical-lemma",
            Certificate::BarrierDefect => "barrier-defect",
            Certificate::EpsSphereBarrier => "eps-sphere-barrier",
            Certificate::VolumeChange => "volume-change",
            Certificate::Nontriviality => "nontriviality",
            Certificate::ConvexHull => "convex-hull",
            Certificate::Lsc => "lsc",
            Certificate::Avoidance => "avoidance",
        }
    }

    pub fn parse(name: &str) -> Result<Certificate> {
        Certificate::ALL.into_iter().find(|c| c.name() == name).ok_or_else(|| Error::Config {
            location: "certificate".into(),
            message: format!("unknown certificate '{name}' (known: {})", Certificate::ALL.map(Certificate::name).join(", ")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Certificates run by `check` when none are named on the command line.
    pub certificates: Vec<Certificate>,
    pub mc_samples: usize,
    pub mc_chunk: usize,
    pub bl_support_cap: usize,
    pub technical_samples: usize,
    pub technical_tolerance: f64,
    /// Points per axis of the barrier-defect sweep (space and time).
    pub defect_grid: usize,
    pub defect_planes: usize,
    pub defect_tolerance: f64,
    pub barrier_beta: f64,
    pub barrier_center: Option<Vec<f64>>,
    pub barrier_radius: f64,
    /// Ball and region of the volume-change certificate.
    pub volume_center: Option<Vec<f64>>,
    pub volume_radius: f64,
    pub region: usize,
    /// Ball of the nontriviality certificate and the lsc test function.
    pub interior_center: Option<Vec<f64>>,
    pub interior_radius: f64,
    /// Per-step slack of the lsc monitor in units of δ.
    pub lsc_tolerance: f64,
    /// Convex-hull excursion allowed, in units of ε.
    pub hull_slack: f64,
    /// Allowed decrease of the support gap, in units of ε.
    pub avoidance_slack: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            certificates: vec![Certificate::MassDecay, Certificate::DissipationBudget, Certificate::TechnicalLemma],
            mc_samples: tolerances::MC_SAMPLES,
            mc_chunk: 4096,
            bl_support_cap: tolerances::BL_SUPPORT_CAP,
            technical_samples: 100_000,
            technical_tolerance: 1e-12,
            defect_grid: 24,
            defect_planes: 8,
            defect_tolerance: 1e-10,
            barrier_beta: 4.0,
            barrier_center: None,
            barrier_radius: 0.3,
            volume_center: None,
            volume_radius: 0.5,
            region: 1,
            interior_center: None,
            interior_radius: 0.8,
            lsc_tolerance: 1e-9,
            hull_slack: 2.0,
            avoidance_slack: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub flow: FlowSection,
    pub kernel: KernelParams,
    pub constants: ConstantsSection,
    pub check: CheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Circle)
    }
}

/// c₃ for which the largest gate-admissible step is `fraction`·ε².
pub fn gate_constant_for(mass_bound: f64, eps: f64, fraction: f64) -> f64 {
    (mass_bound + 1.0).powi(-3) * eps.powi(6) / fraction
}

fn point(c: &[f64]) -> Option<Vec<f64>> {
    Some(c.to_vec())
}

impl RunConfig {
    /// Built-in scenario with constants tuned so that Δt ≈ 0.2 ε².
    pub fn preset(preset: Preset) -> RunConfig {
        use Certificate::*;
        let mut c = RunConfig {
            seed: 0,
            scenario: ScenarioSection { preset, ..ScenarioSection::default() },
            flow: FlowSection::default(),
            kernel: KernelParams::default(),
            constants: ConstantsSection { c5: 1e-9, ..ConstantsSection::default() },
            check: CheckSection::default(),
        };
        let (mass_bound, certs): (f64, Vec<Certificate>) = match preset {
            Preset::Circle => {
                c.check.barrier_center = point(&[0.0, 0.0]);
                c.check.volume_center = point(&[1.0, 0.0]);
                c.check.interior_center = point(&[0.0, 0.0]);
                (
                    7.0,
                    vec![
                        MassDecay,
                        DissipationBudget,
                        TechnicalLemma,
                        BarrierDefect,
                        EpsSphereBarrier,
                        VolumeChange,
                        Nontriviality,
                        ConvexHull,
                        Lsc,
                    ],
                )
            }
            Preset::Sphere => {
                c.flow.eps = 0.2;
                c.flow.end = 0.06;
                c.kernel.refinement = 2;
                c.check.barrier_center = point(&[0.0, 0.0, 0.0]);
                c.check.volume_center = point(&[0.0, 0.0, 1.0]);
                c.check.interior_center = point(&[0.0, 0.0, 0.0]);
                (
                    13.0,
                    vec![MassDecay, DissipationBudget, TechnicalLemma, EpsSphereBarrier, VolumeChange, Nontriviality, ConvexHull],
                )
            }
            Preset::TwoConcentricCircles => {
                c.scenario.count = 150;
                c.flow.eps = 0.05;
                c.flow.end = 0.125;
                c.check.volume_center = point(&[0.5, 0.0]);
                c.check.volume_radius = 0.25;
                c.check.interior_center = point(&[0.0, 0.0]);
                c.check.interior_radius = 0.4;
                (10.0, vec![MassDecay, DissipationBudget, Avoidance, VolumeChange, Nontriviality, ConvexHull])
            }
            Preset::SquarePartition => {
                c.scenario.count = 50;
                c.flow.end = 0.2;
                c.check.barrier_center = point(&[0.0, 0.0]);
                c.check.volume_center = point(&[1.0, 0.0]);
                c.check.interior_center = point(&[0.0, 0.0]);
                (9.0, vec![MassDecay, DissipationBudget, EpsSphereBarrier, VolumeChange, Nontriviality, ConvexHull, Lsc])
            }
            Preset::TwoRegion => {
                c.scenario.count = 100;
                c.scenario.radius = 0.5;
                c.flow.end = 0.1;
                c.check.volume_center = point(&[-0.2, 0.0]);
                c.check.volume_radius = 0.3;
                c.check.interior_center = point(&[-0.7, 0.0]);
                c.check.interior_radius = 0.4;
                (7.0, vec![MassDecay, DissipationBudget, Avoidance, VolumeChange, Nontriviality, ConvexHull])
            }
            Preset::EnlacedCircles => {
                c.scenario.count = 48;
                c.scenario.radius = 0.5;
                c.flow.eps = 0.08;
                c.flow.end = 0.12;
                c.kernel.refinement = 2;
                (7.0, vec![MassDecay, DissipationBudget, ConvexHull])
            }
            Preset::MeshFile | Preset::VarifoldFile => (7.0, vec![MassDecay, DissipationBudget]),
        };
        c.flow.mass_bound = Some(mass_bound);
        c.constants.c3 = gate_constant_for(mass_bound, c.flow.eps, 0.2);
        c.check.certificates = certs;
        c
    }

    /// Parses a config; `source` names the file in error locations.
    pub fn parse(text: &str, source: &str) -> Result<RunConfig> {
        // First pass: key and type errors with line numbers.
        toml::from_str::<RunConfig>(text).map_err(|e| toml_error(text, source, &e))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, source, &e))?;
        let preset = match table.get("scenario").and_then(|s| s.get("preset")) {
            Some(v) => Preset::parse(v.as_str().unwrap_or_default())?,
            None => Preset::Circle,
        };
        let base = toml::Table::try_from(RunConfig::preset(preset))
            .map_err(|e| Error::Config { location: source.into(), message: e.to_string() })?;
        let mut merged = base;
        merge_tables(&mut merged, table);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config { location: source.into(), message: e.message().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative scenario paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
        if let Some(p) = &cfg.scenario.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scenario.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |location: &str, message: String| Err(Error::Config { location: location.into(), message });
        let f = &self.flow;
        if !(f.eps > 0.0 && f.eps < 1.0) {
            return err("flow.eps", format!("must lie in (0, 1), got {}", f.eps));
        }
        if !(f.end >= 0.0 && f.end <= 1.0) {
            return err("flow.end", format!("must lie in [0, 1], got {}", f.end));
        }
        if let Some(dt) = f.dt {
            if !(dt > 0.0) {
                return err("flow.dt", format!("must be positive, got {dt}"));
            }
        }
        if let Some(m) = f.mass_bound {
            if !(m >= 1.0) {
                return err("flow.mass_bound", format!("must be >= 1, got {m}"));
            }
        }
        if let Some(times) = &f.times {
            Schedule::Nodes { times: times.clone() }
                .times()
                .map_err(|e| Error::Config { location: "flow.times".into(), message: e.to_string() })?;
        }
        if self.kernel.refinement < 2 {
            return err("kernel.refinement", format!("must be >= 2, got {}", self.kernel.refinement));
        }
        if !(self.kernel.cutoff > 0.0) {
            return err("kernel.cutoff", format!("must be positive, got {}", self.kernel.cutoff));
        }
        for (key, v) in
            [("constants.c3", self.constants.c3), ("constants.c5", self.constants.c5), ("constants.eps0", self.constants.eps0)]
        {
            if !(v > 0.0) {
                return err(key, format!("must be positive, got {v}"));
            }
        }
        let s = &self.scenario;
        if s.count < 3 {
            return err("scenario.count", format!("must be >= 3, got {}", s.count));
        }
        for (key, v) in [("scenario.radius", s.radius), ("scenario.side", s.side)] {
            if !(v > 0.0) {
                return err(key, format!("must be positive, got {v}"));
            }
        }
        if s.samples_per_simplex == 0 {
            return err("scenario.samples_per_simplex", "must be >= 1".into());
        }
        if matches!(s.preset, Preset::MeshFile | Preset::VarifoldFile) && s.path.is_none() {
            return err("scenario.path", format!("preset '{}' needs a path", s.preset.name()));
        }
        let c = &self.check;
        if c.mc_samples < 2 || c.mc_chunk == 0 {
            return err("check.mc_samples", "need at least 2 samples and a positive chunk".into());
        }
        for (key, v) in [
            ("check.barrier_radius", c.barrier_radius),
            ("check.volume_radius", c.volume_radius),
            ("check.interior_radius", c.interior_radius),
            ("check.barrier_beta", c.barrier_beta),
        ] {
            if !(v > 0.0) {
                return err(key, format!("must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let s = &self.scenario;
        let origin2 = DVector::zeros(2);
        let from_mesh = |mesh: SurfaceMesh, components: Vec<usize>| -> Result<Scenario> {
            let varifold = geometry::mesh_to_varifold(&mesh, s.samples_per_simplex)?;
            Ok(Scenario { varifold, mesh: Some(mesh), components })
        };
        match s.preset {
            Preset::Circle => Ok(Scenario {
                varifold: scenarios::circle(s.radius, s.count, origin2.clone())?,
                mesh: Some(geometry::regular_polygon(s.count, s.radius, &origin2)?),
                components: vec![s.count],
            }),
            Preset::Sphere => {
                let mesh = geometry::icosphere(s.levels, s.radius, &DVector::zeros(3))?;
                let atoms = mesh.simplices().len() * s.samples_per_simplex;
                from_mesh(mesh, vec![atoms])
            }
            Preset::TwoConcentricCircles => Ok(Scenario {
                varifold: scenarios::concentric_circles(s.inner_radius, s.radius, s.count)?,
                mesh: Some(geometry::concentric_partition(s.inner_radius, s.radius, s.count)?),
                components: vec![s.count, s.count],
            }),
            Preset::SquarePartition => {
                let mesh = geometry::square(s.side, s.count, &origin2)?;
                let atoms = mesh.simplices().len() * s.samples_per_simplex;
                from_mesh(mesh, vec![atoms])
            }
            Preset::TwoRegion => {
                let mesh = geometry::two_disk_partition(s.radius, s.offset, s.count)?;
                let per = s.count * s.samples_per_simplex;
                from_mesh(mesh, vec![per, per])
            }
            Preset::EnlacedCircles => Ok(Scenario {
                varifold: scenarios::enlaced_circles(s.radius, s.count)?,
                mesh: None,
                components: vec![s.count, s.count],
            }),
            Preset::MeshFile => {
                let mesh = io::read_mesh(s.path.as_deref().unwrap())?;
                let atoms = mesh.simplices().len() * s.samples_per_simplex;
                from_mesh(mesh, vec![atoms])
            }
            Preset::VarifoldFile => {
                let varifold = io::read_varifold(s.path.as_deref().unwrap())?;
                let count = varifold.len();
                Ok(Scenario { varifold, mesh: None, components: vec![count] })
            }
        }
    }

    /// Resolves the schedule and mass bound for an initial mass.
    pub fn flow_config(&self, initial_mass: f64) -> Result<FlowConfig> {
        let f = &self.flow;
        let mass_bound = f.mass_bound.unwrap_or_else(|| initial_mass.ceil().max(1.0));
        let rhs = (mass_bound + 1.0).powi(-3) * f.eps.powi(8);
        let schedule = match (&f.times, f.dt) {
            (Some(times), _) => Schedule::Nodes { times: times.clone() },
            (None, _) if f.end == 0.0 => Schedule::uniform(1.0, 0.0),
            (None, Some(dt)) => Schedule::uniform(dt, f.end),
            (None, None) => {
                let admissible = rhs / self.constants.c3;
                let mut steps = (f.end / admissible - 1e-9).ceil().max(1.0);
                // Node times are i·dt, so the realized gap can exceed dt by rounding.
                while self.constants.c3 * Schedule::uniform(f.end / steps, f.end).max_gap()? > rhs {
                    steps += 1.0;
                }
                Schedule::uniform(f.end / steps, f.end)
            }
        };
        let mut cfg = FlowConfig::new(f.eps, mass_bound, schedule);
        cfg.gate_constant = self.constants.c3;
        cfg.enforce_gate = f.enforce_gate;
        cfg.kernel = self.kernel;
        cfg.mode = f.mode;
        cfg.record_dissipation = f.record_dissipation;
        cfg.validate().map_err(|e| Error::Config { location: "flow".into(), message: e.to_string() })?;
        Ok(cfg)
    }

    fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo { samples: self.check.mc_samples, seed: self.seed, chunk: self.check.mc_chunk }
    }
}

fn toml_error(text: &str, source: &str, e: &toml::de::Error) -> Error {
    let location = match e.span() {
        Some(span) => {
            let line_no = text[..span.start.min(text.len())].matches('\n').count() + 1;
            let line = text.lines().nth(line_no - 1).unwrap_or("");
            match line.split_once('=') {
                Some((key, _)) => format!("{source}:{line_no} (key '{}')", key.trim()),
                None => format!("{source}:{line_no}"),
            }
        }
        None => source.to_string(),
    };
    Error::Config { location, message: e.message().trim().to_string() }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Initial data of a run: the varifold, an optional boundary mesh whose
/// vertices ride along as tracers, and atom counts per connected component.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub varifold: DiscreteVarifold,
    pub mesh: Option<SurfaceMesh>,
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshTopology {
    pub simplices: Vec<Vec<usize>>,
    pub labels: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// The flow configuration as resolved for this run.
    pub flow: FlowConfig,
    pub ambient_dim: usize,
    pub dim: usize,
    pub components: Vec<usize>,
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    pub dissipation: Vec<Option<f64>>,
    pub steps: Vec<StepDiagnostics>,
    /// Snapshot CSVs relative to the manifest directory.
    pub frames: Vec<String>,
    pub tracer_frames: Vec<String>,
    pub mesh: Option<MeshTopology>,
    pub wall_clock_seconds: f64,
    pub verdicts: Vec<Verdict>,
}

/// Builds the scenario and runs the flow.
pub fn run_config(cfg: &RunConfig, exec: Execution) -> Result<(Scenario, FlowTrace)> {
    cfg.validate()?;
    let scenario = cfg.build_scenario()?;
    let flow_cfg = cfg.flow_config(scenario.varifold.total_mass())?;
    let tracers = scenario.mesh.as_ref().map(|m| m.vertices().to_vec()).unwrap_or_default();
    let trace = flow::run_with_tracers(&scenario.varifold, &tracers, &flow_cfg, exec)?;
    Ok((scenario, trace))
}

/// Runs `cfg` and writes frames plus the manifest into `out_dir`.
pub fn simulate(cfg: &RunConfig, out_dir: &Path, exec: Execution) -> Result<RunManifest> {
    let start = Instant::now();
    let (scenario, trace) = run_config(cfg, exec)?;
    let mut manifest = write_run(cfg, &scenario, &trace, out_dir)?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

/// Writes one CSV (with sidecar) per snapshot, tracer CSVs when present,
/// and the manifest.
pub fn write_run(cfg: &RunConfig, scenario: &Scenario, trace: &FlowTrace, out_dir: &Path) -> Result<RunManifest> {
    let frame_dir = out_dir.join(FRAME_DIR);
    fs::create_dir_all(&frame_dir)?;
    let n = scenario.varifold.ambient_dim();
    let mut frames = Vec::new();
    let mut tracer_frames = Vec::new();
    for (i, snap) in trace.snapshots.iter().enumerate() {
        let name = format!("{FRAME_DIR}/frame_{i:05}.csv");
        io::write_varifold(&snap.varifold, &out_dir.join(&name))?;
        frames.push(name);
        if scenario.mesh.is_some() {
            let name = format!("{FRAME_DIR}/tracers_{i:05}.csv");
            fs::write(out_dir.join(&name), io::points_to_csv(&snap.tracers, n))?;
            tracer_frames.push(name);
        }
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.clone(),
        flow: trace.config.clone(),
        ambient_dim: n,
        dim: scenario.varifold.dim(),
        components: scenario.components.clone(),
        times: trace.times(),
        masses: trace.masses(),
        dissipation: trace.steps.iter().map(|s| s.diagnostics.dissipation).collect(),
        steps: trace.steps.iter().map(|s| s.diagnostics.clone()).collect(),
        frames,
        tracer_frames,
        mesh: scenario.mesh.as_ref().map(|m| MeshTopology { simplices: m.simplices().to_vec(), labels: m.labels().to_vec() }),
        wall_clock_seconds: 0.0,
        verdicts: Vec::new(),
    };
    write_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<()> {
    fs::write(out_dir.join(MANIFEST_NAME), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Accepts the manifest file or the run directory holding it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::MissingFrames(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { source_name: path.display().to_string(), message: e.to_string() })
}

/// Reloads the snapshots of a run. Steps carry the recorded diagnostics but
/// no per-atom fields.
pub fn load_trace(manifest: &RunManifest, dir: &Path) -> Result<(FlowTrace, Option<SurfaceMesh>)> {
    if manifest.frames.len() != manifest.times.len() {
        return Err(Error::MissingFrames(format!("{} frames listed for {} times", manifest.frames.len(), manifest.times.len())));
    }
    let missing: Vec<&String> =
        manifest.frames.iter().chain(&manifest.tracer_frames).filter(|f| !dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        let list: Vec<&str> = missing.iter().take(5).map(|s| s.as_str()).collect();
        return Err(Error::MissingFrames(format!("{} file(s) absent, e.g. {}", missing.len(), list.join(", "))));
    }
    let mut snapshots = Vec::with_capacity(manifest.frames.len());
    for (i, (frame, &time)) in manifest.frames.iter().zip(&manifest.times).enumerate() {
        let varifold = io::read_varifold(&dir.join(frame)).or_else(|e| match e {
            // A frame emptied by hand still belongs to the run's dimensions.
            Error::Parse { .. } if fs::read_to_string(dir.join(frame)).map(|t| t.lines().count() <= 1).unwrap_or(false) => {
                Ok(DiscreteVarifold::empty(manifest.ambient_dim, manifest.dim))
            }
            e => Err(e),
        })?;
        let tracers = match manifest.tracer_frames.get(i) {
            Some(name) => {
                let path = dir.join(name);
                io::points_from_csv(&fs::read_to_string(&path)?, &path.display().to_string())?
            }
            None => Vec::new(),
        };
        snapshots.push(Snapshot { time, varifold, tracers });
    }
    let steps = manifest
        .steps
        .iter()
        .map(|d| StepRecord { velocity: Vec::new(), velocity_jacobian: Vec::new(), diagnostics: d.clone() })
        .collect();
    let mesh = match &manifest.mesh {
        Some(topo) => {
            let vertices = snapshots.first().map(|s| s.tracers.clone()).unwrap_or_default();
            Some(SurfaceMesh::new(vertices, topo.simplices.clone(), topo.labels.clone())?)
        }
        None => None,
    };
    Ok((FlowTrace { config: manifest.flow.clone(), snapshots, steps }, mesh))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionVolume {
    pub time: f64,
    pub label: usize,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    /// Enclosed volume of every region at every snapshot.
    pub region_volumes: Vec<RegionVolume>,
    /// Largest atom distance to the initial convex hull per snapshot.
    pub convex_hull: Vec<f64>,
    /// Support gap between the first two components per snapshot.
    pub avoidance_gap: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub manifest: String,
    pub verdicts: Vec<Verdict>,
    pub monitors: Monitors,
    pub all_pass: bool,
}

/// Runs the certificates on a stored run. The verdicts are also written
/// back into the manifest.
pub fn check(path: &Path, certificates: &[Certificate], exec: Execution) -> Result<CheckReport> {
    let mpath = manifest_path(path);
    let mut manifest = read_manifest(&mpath)?;
    let dir = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let (trace, mesh) = load_trace(&manifest, &dir)?;
    let list = if certificates.is_empty() { manifest.config.check.certificates.clone() } else { certificates.to_vec() };
    let verdicts = list.iter().map(|&c| certify(c, &manifest, &trace, mesh.as_ref(), exec)).collect::<Result<Vec<_>>>()?;
    let monitors = monitors(&manifest, &trace, mesh.as_ref())?;
    let all_pass = verdicts.iter().all(|v| v.pass);
    manifest.verdicts = verdicts.clone();
    write_manifest(&manifest, &dir)?;
    Ok(CheckReport { manifest: mpath.display().to_string(), verdicts, monitors, all_pass })
}

fn split_components(trace: &FlowTrace, components: &[usize]) -> Option<(FlowTrace, FlowTrace)> {
    if components.len() < 2 {
        return None;
    }
    let first = components[0];
    let total: usize = components.iter().sum();
    if trace.snapshots.iter().any(|s| s.varifold.len() != total) {
        return None;
    }
    Some((trace.restrict(0..first), trace.restrict(first..first + components[1])))
}

fn monitors(manifest: &RunManifest, trace: &FlowTrace, mesh: Option<&SurfaceMesh>) -> Result<Monitors> {
    let mut region_volumes = Vec::new();
    if let Some(mesh) = mesh {
        for s in &trace.snapshots {
            let m = mesh.with_vertices(s.tracers.clone())?;
            for label in m.regions() {
                region_volumes.push(RegionVolume { time: s.time, label, volume: m.region_volume(label)? });
            }
        }
    }
    let avoidance_gap = match split_components(trace, &manifest.components) {
        Some((a, b)) => Some(barriers::avoidance_distance(&a, &b)?),
        None => None,
    };
    Ok(Monitors { region_volumes, convex_hull: barriers::convex_hull_monitor(trace), avoidance_gap })
}

fn center_or_origin(c: &Option<Vec<f64>>, n: usize, key: &str) -> Result<DVector<f64>> {
    match c {
        Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::Config { location: key.into(), message: format!("expected {n} coordinates, got {}", v.len()) }),
        None => Ok(DVector::zeros(n)),
    }
}

fn not_applicable(name: &str, anchor: &str, why: impl std::fmt::Display) -> Verdict {
    Verdict::new(name, anchor, f64::NAN, f64::NAN, false).with_note(format!("not evaluated: {why}"))
}

/// Evaluates one certificate on a reloaded trace.
pub fn certify(
    cert: Certificate,
    manifest: &RunManifest,
    trace: &FlowTrace,
    mesh: Option<&SurfaceMesh>,
    exec: Execution,
) -> Result<Verdict> {
    let cfg = &manifest.config;
    let chk = &cfg.check;
    let n = manifest.ambient_dim;
    let d = manifest.dim;
    let eps = trace.config.eps;
    let name = cert.name();
    Ok(match cert {
        Certificate::MassDecay => {
            let anchor = "per-step mass bound ||V(t+dt)|| <= ||V(t)|| + dt";
            let excess = trace
                .snapshots
                .windows(2)
                .map(|w| w[1].varifold.total_mass() - w[0].varifold.total_mass() - (w[1].time - w[0].time))
                .fold(f64::NEG_INFINITY, f64::max);
            let measured = if trace.steps.is_empty() { 0.0 } else { excess };
            Verdict::new(name, anchor, 0.0, measured, measured <= 0.0)
        }
        Certificate::DissipationBudget => {
            let anchor = "integrated dissipation <= mass(0) - mass(T) + T";
            let budget = flow::dissipation_budget(trace)?;
            let masses = trace.masses();
            let bound = masses[0] - masses[masses.len() - 1] + (trace.end() - trace.start());
            Verdict::new(name, anchor, bound, budget, budget <= bound)
                .with_note(format!("also <= 2M = {}", 2.0 * trace.config.mass_bound))
        }
        Certificate::TechnicalLemma => {
            let anchor = "technical lemma: -|h|^2 phi + S_perp grad phi . h <= |S grad phi|^2/(4 phi) + grad phi . h";
            let gap = barriers::technical_gap_sweep(n, d, chk.technical_samples, cfg.seed, exec)?;
            Verdict::new(name, anchor, -chk.technical_tolerance, gap, gap >= -chk.technical_tolerance)
                .with_note(format!("minimum gap over {} samples", chk.technical_samples))
        }
        Certificate::BarrierDefect => {
            let anchor = "sphere barrier: |S grad psi|^2/(4 psi) - S:D^2 psi + d_t psi <= 0 where psi > 0";
            let center = center_or_origin(&chk.barrier_center, n, "check.barrier_center")?;
            let psi = BarrierFunction::new(center, chk.barrier_radius, chk.barrier_beta, d, Orientation::External)?;
            let worst = barriers::barrier_defect_sweep(&psi, chk.defect_grid, chk.defect_planes, cfg.seed, exec)?;
            Verdict::new(name, anchor, chk.defect_tolerance, worst, worst <= chk.defect_tolerance)
        }
        Certificate::EpsSphereBarrier => {
            let anchor = "epsilon sphere barrier: psi-mass increase <= c7 eps^(1/6)";
            let center = center_or_origin(&chk.barrier_center, n, "check.barrier_center")?;
            let psi = BarrierFunction::external(center, chk.barrier_radius, d)?;
            let params = CertificateParams { c5: cfg.constants.c5, eps0: cfg.constants.eps0 };
            match barriers::epsilon_barrier_certificate(trace, &psi, &params) {
                Ok(cert) => cert.verdict(),
                Err(e @ Error::PreconditionViolated(_)) => not_applicable(name, anchor, e),
                Err(e) => return Err(e),
            }
        }
        Certificate::VolumeChange => {
            let anchor = "volume change inside a ball <= c8 delta (+ 3 MC standard errors)";
            let Some(mesh) = mesh else {
                return Ok(not_applicable(name, anchor, "the run has no boundary mesh"));
            };
            let center = center_or_origin(&chk.volume_center, n, "check.volume_center")?;
            let series =
                geometry::volume_change_series(trace, mesh, chk.region, &center, chk.volume_radius, &cfg.monte_carlo(), exec)?;
            match series.iter().enumerate().max_by(|a, b| {
                let key = |v: &geometry::VolumeChange| v.measured - v.bound - 3.0 * v.standard_error;
                key(a.1).total_cmp(&key(b.1))
            }) {
                None => Verdict::new(name, anchor, 0.0, 0.0, true).with_note("no steps"),
                Some((k, worst)) => {
                    let failed = series.iter().filter(|v| !v.pass).count();
                    Verdict::new(name, anchor, worst.bound + 3.0 * worst.standard_error, worst.measured, failed == 0).with_note(
                        format!(
                            "tightest of {} steps is step {k} (c8 = {}, delta = {:e}); {failed} step(s) fail",
                            series.len(),
                            worst.c8,
                            worst.delta
                        ),
                    )
                }
            }
        }
        Certificate::Nontriviality => {
            let anchor = "nontriviality: total mass >= omega-tilde on [0, R^2/8d]";
            let Some(mesh) = mesh else {
                return Ok(not_applicable(name, anchor, "the run has no boundary mesh"));
            };
            let partition = OpenPartition::new(mesh.clone())?;
            let center = center_or_origin(&chk.interior_center, n, "check.interior_center")?;
            let c_n = cfg.constants.isoperimetric.unwrap_or_else(|| geometry::sharp_isoperimetric_constant(n));
            match geometry::nontriviality_certificate(trace, &partition, &center, chk.interior_radius, c_n) {
                Ok(r) => r.verdict().with_note(format!(
                    "relative to the configured c_n = {c_n}; t0 = {}, {} snapshot(s) in window",
                    r.t0, r.checked_snapshots
                )),
                Err(e @ Error::BallNotInterior(_)) => not_applicable(name, anchor, e),
                Err(e) => return Err(e),
            }
        }
        Certificate::ConvexHull => {
            let anchor = "convex hull barrier: atoms stay near the initial convex hull";
            let worst = barriers::convex_hull_monitor(trace).into_iter().fold(0.0, f64::max);
            let bound = chk.hull_slack * eps;
            Verdict::new(name, anchor, bound, worst, worst <= bound)
        }
        Certificate::Lsc => {
            let anchor = "lower semicontinuity: t -> ||V(t)||(psi) - C t nonincreasing";
            let center = center_or_origin(&chk.interior_center, n, "check.interior_center")?;
            let psi = Bump::new(center, chk.interior_radius, 1.0);
            let r = barriers::lsc_monitor(trace, &psi, None, chk.lsc_tolerance)?;
            let measured = if r.values.len() < 2 { 0.0 } else { r.max_increase };
            Verdict::new(name, anchor, r.slack, measured, r.pass).with_note(format!("C = {}", r.constant))
        }
        Certificate::Avoidance => {
            let anchor = "avoidance: support gap of two components nondecreasing up to slack";
            let Some((a, b)) = split_components(trace, &manifest.components) else {
                return Ok(not_applicable(name, anchor, "the run has fewer than two components"));
            };
            let gaps = barriers::avoidance_distance(&a, &b)?;
            let mut running = f64::NEG_INFINITY;
            let mut drop = 0.0f64;
            for g in &gaps {
                running = running.max(*g);
                drop = drop.max(running - g);
            }
            let bound = chk.avoidance_slack * eps;
            Verdict::new(name, anchor, bound, drop, drop <= bound).with_note(format!(
                "gap {} -> {}",
                gaps.first().copied().unwrap_or(f64::NAN),
                gaps.last().copied().unwrap_or(f64::NAN)
            ))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub distance: f64,
    pub mass_a: f64,
    pub mass_b: f64,
    pub support_size: usize,
    pub augmentations: usize,
    pub dual_cost: f64,
}

/// Bounded-Lipschitz distance between two measure files.
pub fn distance(a: &Path, b: &Path, cap: usize) -> Result<DistanceReport> {
    let mu = io::read_measure(a)?;
    let nu = io::read_measure(b)?;
    distance_between(&mu, &nu, cap)
}

pub fn distance_between(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cap: usize) -> Result<DistanceReport> {
    let r = metrics::bounded_lipschitz_capped(mu, nu, cap)?;
    Ok(DistanceReport {
        distance: r.distance,
        mass_a: mu.total(),
        mass_b: nu.total(),
        support_size: r.status.support_size,
        augmentations: r.status.augmentations,
        dual_cost: r.dual_cost,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVolume {
    pub label: usize,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallVolume {
    pub center: Vec<f64>,
    pub radius: f64,
    pub label: usize,
    pub volume: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub dim: usize,
    pub simplices: usize,
    /// Perimeter (n = 2) or area (n = 3) of the boundary.
    pub boundary_measure: f64,
    pub regions: Vec<LabelVolume>,
    pub ball: Option<BallVolume>,
}

/// Region volumes of a closed mesh and, optionally, the Monte Carlo volume
/// of region `label` inside the ball (center, radius).
pub fn volume(
    mesh: &SurfaceMesh,
    ball: Option<(Vec<f64>, f64, usize)>,
    mc: &MonteCarlo,
    exec: Execution,
) -> Result<VolumeReport> {
    mesh.check_closed()?;
    let regions = mesh
        .regions()
        .into_iter()
        .map(|label| Ok(LabelVolume { label, volume: mesh.region_volume(label)? }))
        .collect::<Result<Vec<_>>>()?;
    let ball = match ball {
        Some((center, radius, label)) => {
            if center.len() != mesh.dim() {
                return Err(Error::DimensionMismatch { expected: mesh.dim(), found: center.len() });
            }
            if !(radius > 0.0) {
                return Err(Error::InvalidConfig(format!("ball radius must be positive, got {radius}")));
            }
            let (mean, se) = geometry::ball_average(&center, radius, mc, exec, &|x| mesh.contains(label, x) as i32 as f64);
            let full = unit_ball_volume(center.len()) * radius.powi(center.len() as i32);
            Some(BallVolume {
                center,
                radius,
                label,
                volume: mean * full,
                standard_error: se * full,
                samples: mc.samples,
                seed: mc.seed,
            })
        }
        None => None,
    };
    Ok(VolumeReport { dim: mesh.dim(), simplices: mesh.simplices().len(), boundary_measure: mesh.total_measure(), regions, ball })
}

/// 0 for success, 2 for usage, configuration and input errors, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::InvalidConfig(_)
        | Error::GateViolated { .. }
        | Error::MissingFrames(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}
