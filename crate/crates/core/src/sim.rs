//! Configuration-driven simulations: the TOML schema, problem construction, result
//! rows and the strategy/scheme benchmark.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BarMesh, BoxGrid, HexMesh, Support};
use crate::local::LocalScheme;
use crate::material::{Material, MaterialParams};
use crate::solver::{
    max_step_search, FieldState, LoadPath, Problem, SolveReport, Solver, SolverConfig, StepSearch, Strategy,
};
use crate::voigt::{Sp, Space, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub material: MaterialParams,
    pub geometry: Geometry,
    pub loading: Loading,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub axis: Axis,
    pub side: Side,
    pub kind: Support,
}

/// Uniform traction (Pa) at unit load factor on one face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionSpec {
    pub axis: Axis,
    pub side: Side,
    pub value: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// Two-node bars along x, fixed at x = 0; `load` (N) acts on the far end at unit
    /// load factor. Lengths in m, area in m².
    Bar { length: f64, elements: usize, area: f64, load: f64 },
    /// Box [0, dx]×[0, dy]×[0, dz] (m) of 8-node hexahedra.
    Box { dimensions: [f64; 3], divisions: [usize; 3], support: SupportSpec, traction: TractionSpec },
}

impl Geometry {
    /// Magnitude of the reference load: N for bars, Pa for boxes.
    pub fn reference_load(&self) -> f64 {
        match self {
            Geometry::Bar { load, .. } => *load,
            Geometry::Box { traction, .. } => traction.value.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Far-end point used as the default probe.
    pub fn tip(&self) -> [f64; 3] {
        match self {
            Geometry::Bar { length, .. } => [*length, 0.0, 0.0],
            Geometry::Box { dimensions, .. } => *dimensions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// Target temperature (K).
    pub temperature: f64,
    /// Target load factor.
    pub load: f64,
    /// Largest temperature increment (K); unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dt: Option<f64>,
    /// Largest load-factor increment; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dload: Option<f64>,
}

/// Piecewise-linear schedule of temperature and load factor, repeated `cycles` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Loading {
    pub temperature: f64,
    pub load: f64,
    pub segments: Vec<Segment>,
    #[serde(default = "one")]
    pub cycles: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepVariable {
    Temperature,
    Load,
}

impl Loading {
    pub fn path(&self) -> LoadPath {
        self.path_with(None)
    }

    /// The load path, with every segment that moves `variable` re-stepped at the given
    /// increment when an override is passed.
    pub fn path_with(&self, step: Option<(StepVariable, f64)>) -> LoadPath {
        let mut path = LoadPath::new(self.temperature, self.load);
        for _ in 0..self.cycles {
            for s in &self.segments {
                let (mut dt, mut df) = (s.max_dt.unwrap_or(f64::INFINITY), s.max_dload.unwrap_or(f64::INFINITY));
                match step {
                    Some((StepVariable::Temperature, v)) => dt = v,
                    Some((StepVariable::Load, v)) => df = v,
                    None => {}
                }
                path = path.to(s.temperature, s.load, dt, df);
            }
        }
        path
    }

    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() || self.cycles == 0 {
            return Err(Error::Config("loading needs at least one segment and one cycle".into()));
        }
        let positive = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        for s in &self.segments {
            if !positive(s.max_dt) || !positive(s.max_dload) {
                return Err(Error::Config("segment step limits must be positive and finite".into()));
            }
            if !(s.temperature > 0.0 && s.temperature.is_finite() && s.load.is_finite()) {
                return Err(Error::Config("segment targets must be finite with positive temperature".into()));
            }
        }
        self.path().validate()
    }
}

/// Result-table columns in output order.
pub const COLUMNS: [&str; 25] = [
    "step",
    "pseudo_time",
    "temperature",
    "load",
    "u_x",
    "u_y",
    "u_z",
    "sigma_xx",
    "sigma_yy",
    "sigma_zz",
    "sigma_yz",
    "sigma_xz",
    "sigma_xy",
    "xi",
    "et_xx",
    "et_yy",
    "et_zz",
    "et_yz",
    "et_xz",
    "et_xy",
    "outer_iterations",
    "local_updates",
    "wall_time",
    "effective_et",
    "substeps",
];

const DEFAULT_FIELDS: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub results: PathBuf,
    pub summary: PathBuf,
    /// Bench comparison table; the CLI prints it to stdout when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<PathBuf>,
    /// Probe point (m); defaults to the far tip. Reports the nearest node and Gauss point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<[f64; 3]>,
    /// Adds the per-step wall time column (makes the table run-dependent).
    pub record_wall_time: bool,
    /// Column subset; `step` is always written first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<String>>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            results: "results.csv".into(),
            summary: "summary.json".into(),
            bench: None,
            probe: None,
            record_wall_time: false,
            fields: None,
        }
    }
}

impl OutputConfig {
    /// Selected columns in table order.
    pub fn columns(&self) -> Result<Vec<&'static str>> {
        let mut cols: Vec<&'static str> = match &self.fields {
            None => COLUMNS[..DEFAULT_FIELDS].to_vec(),
            Some(list) => {
                if let Some(bad) = list.iter().find(|f| !COLUMNS.contains(&f.as_str())) {
                    return Err(Error::Config(format!("unknown output field `{bad}`")));
                }
                COLUMNS.iter().copied().filter(|c| *c == "step" || list.iter().any(|f| f == c)).collect()
            }
        };
        if self.record_wall_time && !cols.contains(&"wall_time") {
            cols.push("wall_time");
        } else if !self.record_wall_time && cols.contains(&"wall_time") {
            return Err(Error::Config("the wall_time field needs record_wall_time = true".into()));
        }
        cols.sort_by_key(|c| COLUMNS.iter().position(|k| k == c));
        Ok(cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSearchSpec {
    pub variable: StepVariable,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Local schemes to compare; defaults to the solver block's scheme.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<LocalScheme>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_search: Option<StepSearchSpec>,
    /// Box divisions for the wall-time sweep (box geometry only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub meshes: Vec<[usize; 3]>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.solver.validate()?;
        self.loading.validate()?;
        self.output.columns()?;
        match &self.geometry {
            Geometry::Bar { length, elements, area, load } => {
                if !(*length > 0.0 && *area > 0.0 && *elements > 0 && load.is_finite()) {
                    return Err(Error::Config("bar needs positive length, area and element count".into()));
                }
            }
            Geometry::Box { dimensions, divisions, support, traction } => {
                if dimensions.iter().any(|d| !(*d > 0.0 && d.is_finite())) || divisions.contains(&0) {
                    return Err(Error::Config("box needs positive dimensions and divisions".into()));
                }
                if traction.value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("traction must be finite".into()));
                }
                if support.axis == traction.axis && support.side == traction.side {
                    return Err(Error::Config("support and traction act on the same face".into()));
                }
            }
        }
        if !self.bench.meshes.is_empty() && matches!(self.geometry, Geometry::Bar { .. }) {
            return Err(Error::Config("a mesh sweep needs box geometry".into()));
        }
        if self.bench.meshes.iter().any(|d| d.contains(&0)) {
            return Err(Error::Config("mesh sweep divisions must be positive".into()));
        }
        if let Some(s) = &self.bench.step_search {
            if s.grid.is_empty() || s.grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(Error::Config("step-search grid needs positive finite values".into()));
            }
        }
        if let Some(p) = self.output.probe {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("probe must be finite".into()));
            }
        }
        Ok(())
    }

    /// Box geometry with different divisions.
    pub fn with_divisions(&self, divs: [usize; 3]) -> Result<SimConfig> {
        let mut cfg = self.clone();
        match &mut cfg.geometry {
            Geometry::Box { divisions, .. } => *divisions = divs,
            Geometry::Bar { .. } => return Err(Error::Config("divisions apply to box geometry only".into())),
        }
        Ok(cfg)
    }
}

/// A problem built from a configuration.
pub enum Model {
    Bar(Problem<1, 2>),
    Box(Problem<6, 24>),
}

impl Model {
    pub fn build(cfg: &SimConfig) -> Result<Model> {
        match &cfg.geometry {
            Geometry::Bar { length, elements, area, load } => Ok(Model::Bar(Problem::new(
                BarMesh::bar(*length, *elements, *area, *load)?,
                Material::new(cfg.material.clone())?,
            )?)),
            Geometry::Box { dimensions, divisions, support, traction } => {
                let grid = BoxGrid::new(*dimensions, *divisions)?;
                let mut mesh = HexMesh::hex_box(&grid)?;
                mesh.support(&grid, support.axis.index(), support.side == Side::Max, support.kind);
                mesh.traction(&grid, traction.axis.index(), traction.side == Side::Max, traction.value);
                Ok(Model::Box(Problem::new(mesh, Material::new(cfg.material.clone())?)?))
            }
        }
    }

    /// Whether every step of `path` converges (no step halving).
    pub fn converges(&self, solver: SolverConfig, path: &LoadPath) -> Result<bool> {
        let solver = SolverConfig { max_halvings: 0, ..solver };
        Ok(match self {
            Model::Bar(p) => Solver::new(p, solver)?.converges(path),
            Model::Box(p) => Solver::new(p, solver)?.converges(path),
        })
    }
}

/// One converged step at the probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub step: usize,
    pub pseudo_time: f64,
    pub temperature: f64,
    /// Load factor times the reference load (N for bars, Pa for boxes).
    pub load: f64,
    pub u: [f64; 3],
    pub sigma: [f64; 6],
    pub xi: f64,
    pub eps_t: [f64; 6],
    pub effective_et: f64,
    pub outer_iterations: usize,
    pub local_updates: usize,
    pub substeps: usize,
    pub wall_time: f64,
}

fn num(v: f64) -> String {
    format!("{v:.8e}")
}

impl ResultRow {
    /// Formatted value of one column: 9 significant digits for reals.
    pub fn value(&self, column: &str) -> Option<String> {
        let comp = |prefix: &str, v: &[f64]| -> Option<String> {
            let k = ["xx", "yy", "zz", "yz", "xz", "xy"].iter().position(|s| column == format!("{prefix}{s}"))?;
            Some(num(v[k]))
        };
        Some(match column {
            "step" => self.step.to_string(),
            "pseudo_time" => num(self.pseudo_time),
            "temperature" => num(self.temperature),
            "load" => num(self.load),
            "u_x" => num(self.u[0]),
            "u_y" => num(self.u[1]),
            "u_z" => num(self.u[2]),
            "xi" => num(self.xi),
            "effective_et" => num(self.effective_et),
            "outer_iterations" => self.outer_iterations.to_string(),
            "local_updates" => self.local_updates.to_string(),
            "substeps" => self.substeps.to_string(),
            "wall_time" => num(self.wall_time),
            c if c.starts_with("sigma_") => return comp("sigma_", &self.sigma),
            c if c.starts_with("et_") => return comp("et_", &self.eps_t),
            _ => return None,
        })
    }
}

/// Rendered comma-separated table with a header row.
pub fn results_table(rows: &[ResultRow], columns: &[&str]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = columns.iter().map(|c| r.value(c).unwrap_or_default()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub node: usize,
    pub node_coord: [f64; 3],
    pub gauss_point: usize,
    pub gauss_coord: [f64; 3],
    pub displacement: [f64; 3],
    pub sigma: [f64; 6],
    pub xi: f64,
    pub eps_t: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub scheme: LocalScheme,
    pub dofs: usize,
    pub gauss_points: usize,
    pub steps: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    pub local_updates: usize,
    pub wall_time: f64,
    pub final_temperature: f64,
    pub final_load: f64,
    pub probe: ProbeSummary,
    /// Largest ξ and effective εᵗ over all Gauss points and steps.
    pub max_xi: f64,
    pub max_effective_et: f64,
    /// Final-state maxima over Gauss points.
    pub final_max_xi: f64,
    pub final_max_effective_et: f64,
    /// Smallest Π·Δξ/Y over transforming points and steps (none if nothing transformed).
    pub min_dissipation: Option<f64>,
    /// Largest reaction imbalance relative to the applied load over all steps.
    pub max_reaction_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: RunSummary,
}

fn lift<const N: usize>(v: &Vector<N>) -> [f64; 6] {
    std::array::from_fn(|i| if i < N { v[i] } else { 0.0 })
}

fn simulate<const N: usize, const E: usize>(
    problem: &Problem<N, E>,
    cfg: &SimConfig,
    path: &LoadPath,
) -> Result<RunOutput>
where
    Sp<N>: Space<N>,
{
    let mesh = &problem.mesh;
    let mat = &problem.material;
    let probe = cfg.output.probe.unwrap_or_else(|| cfg.geometry.tip());
    let node = mesh.nearest_node(probe);
    let gp = mesh.nearest_gauss(probe);
    let dpn = mesh.dofs_per_node;
    let reference = cfg.geometry.reference_load();
    let total = path.steps.len().max(1) as f64;

    let mut rows = Vec::with_capacity(path.steps.len() + 1);
    let mut max_xi: f64 = 0.0;
    let mut max_et: f64 = 0.0;
    let mut min_diss: Option<f64> = None;
    let mut imbalance: f64 = 0.0;
    let mut prev: Option<FieldState<N>> = None;
    let mut failure = None;
    let mut solver = Solver::new(problem, cfg.solver)?;
    let (last, report): (FieldState<N>, SolveReport) = solver.run_load_path(path, |i, st, rep| {
        let g = &st.gauss[gp];
        for q in &st.gauss {
            max_xi = max_xi.max(q.xi);
            max_et = max_et.max(mat.effective_strain(&q.eps_t));
        }
        imbalance = imbalance.max(problem.reaction_imbalance(st));
        if let Some(p) = &prev {
            match problem.min_dissipation(p, st) {
                Ok(d) if d.is_finite() => min_diss = Some(min_diss.map_or(d, |m: f64| m.min(d))),
                Ok(_) => {}
                Err(e) => failure = Some(e),
            }
        }
        rows.push(ResultRow {
            step: i,
            pseudo_time: i as f64 / total,
            temperature: st.t,
            load: st.load * reference,
            u: std::array::from_fn(|c| if c < dpn { st.u[node * dpn + c] } else { 0.0 }),
            sigma: lift(&g.sigma),
            xi: g.xi,
            eps_t: lift(&g.eps_t),
            effective_et: mat.effective_strain(&g.eps_t),
            outer_iterations: rep.outer_iterations,
            local_updates: rep.local_updates,
            substeps: rep.substeps,
            wall_time: rep.wall_time,
        });
        prev = Some(st.clone());
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let g = &last.gauss[gp];
    let summary = RunSummary {
        strategy: cfg.solver.strategy,
        scheme: cfg.solver.scheme,
        dofs: mesh.n_dofs(),
        gauss_points: mesh.n_gauss(),
        steps: path.steps.len(),
        converged: report.converged(),
        outer_iterations: report.outer_iterations(),
        local_updates: report.local_updates(),
        wall_time: report.wall_time,
        final_temperature: last.t,
        final_load: last.load * reference,
        probe: ProbeSummary {
            node,
            node_coord: mesh.nodes[node],
            gauss_point: gp,
            gauss_coord: mesh.gauss[gp].coord,
            displacement: rows.last().map(|r| r.u).unwrap_or_default(),
            sigma: lift(&g.sigma),
            xi: g.xi,
            eps_t: lift(&g.eps_t),
        },
        max_xi,
        max_effective_et: max_et,
        final_max_xi: last.gauss.iter().map(|q| q.xi).fold(0.0, f64::max),
        final_max_effective_et: last.gauss.iter().map(|q| mat.effective_strain(&q.eps_t)).fold(0.0, f64::max),
        min_dissipation: min_diss,
        max_reaction_imbalance: imbalance,
    };
    Ok(RunOutput { rows, summary })
}

/// Runs the configured load path.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let path = cfg.loading.path();
    match Model::build(cfg)? {
        Model::Bar(p) => simulate(&p, cfg, &path),
        Model::Box(p) => simulate(&p, cfg, &path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub scheme: LocalScheme,
    pub converged: bool,
    pub steps: usize,
    pub outer_iterations: usize,
    pub local_updates: usize,
    pub wall_time: f64,
    /// Local updates of the final load step.
    pub last_step_local_updates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_search: Option<StepSearch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshRow {
    pub divisions: [usize; 3],
    pub dofs: usize,
    pub strategy: Strategy,
    pub scheme: LocalScheme,
    pub wall_time: f64,
    pub local_updates: usize,
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub meshes: Vec<MeshRow>,
}

impl BenchReport {
    pub fn row(&self, strategy: Strategy, scheme: LocalScheme) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.scheme == scheme)
    }

    /// Parallel-projection over return-mapping ratio of `f` for one scheme.
    pub fn ratio(&self, scheme: LocalScheme, f: impl Fn(&BenchRow) -> f64) -> Option<f64> {
        let rm = self.row(Strategy::ReturnMapping, scheme)?;
        let pp = self.row(Strategy::ParallelProjection, scheme)?;
        Some(f(pp) / f(rm))
    }

    /// Comma-separated comparison table.
    pub fn table(&self) -> String {
        let mut out = String::from(
            "strategy,scheme,converged,steps,outer_iterations,local_updates,last_step_local_updates,wall_time,max_step,step_search_monotone\n",
        );
        for r in &self.rows {
            let (max_step, monotone) = match &r.step_search {
                Some(s) if s.failed => ("none".to_string(), s.monotone.to_string()),
                Some(s) => (num(s.largest), s.monotone.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.strategy.name(),
                r.scheme.name(),
                r.converged,
                r.steps,
                r.outer_iterations,
                r.local_updates,
                r.last_step_local_updates,
                num(r.wall_time),
                max_step,
                monotone
            ));
        }
        if !self.meshes.is_empty() {
            out.push_str("\nmesh,dofs,strategy,scheme,converged,outer_iterations,local_updates,wall_time\n");
            for m in &self.meshes {
                out.push_str(&format!(
                    "{}x{}x{},{},{},{},{},{},{},{}\n",
                    m.divisions[0],
                    m.divisions[1],
                    m.divisions[2],
                    m.dofs,
                    m.strategy.name(),
                    m.scheme.name(),
                    m.converged,
                    m.outer_iterations,
                    m.local_updates,
                    num(m.wall_time)
                ));
            }
        }
        out
    }
}

/// Runs the configured path for each strategy × scheme, then the step-size search
/// and the mesh sweep if configured. Without `compare` only the configured strategy
/// runs. Divergence is recorded per row rather than returned.
pub fn bench(cfg: &SimConfig, schemes: Option<&[LocalScheme]>, compare: bool) -> Result<BenchReport> {
    cfg.validate()?;
    let schemes: Vec<LocalScheme> = match schemes {
        Some(s) => s.to_vec(),
        None => cfg.bench.schemes.clone().unwrap_or_else(|| vec![cfg.solver.scheme]),
    };
    let strategies: Vec<Strategy> = if compare { Strategy::ALL.to_vec() } else { vec![cfg.solver.strategy] };
    let model = Model::build(cfg)?;
    let path = cfg.loading.path();
    let mut report = BenchReport::default();
    for scheme in &schemes {
        for strategy in &strategies {
            let solver = cfg.solver.with_strategy(*strategy).with_scheme(*scheme);
            let mut row = BenchRow {
                strategy: *strategy,
                scheme: *scheme,
                converged: false,
                steps: path.steps.len(),
                outer_iterations: 0,
                local_updates: 0,
                wall_time: 0.0,
                last_step_local_updates: 0,
                step_search: None,
                error: None,
            };
            let result = match &model {
                Model::Bar(p) => Solver::new(p, solver)?.run_load_path(&path, |_, _, _| {}).map(|r| r.1),
                Model::Box(p) => Solver::new(p, solver)?.run_load_path(&path, |_, _, _| {}).map(|r| r.1),
            };
            match result {
                Ok(rep) => {
                    row.converged = rep.converged();
                    row.outer_iterations = rep.outer_iterations();
                    row.local_updates = rep.local_updates();
                    row.wall_time = rep.wall_time;
                    row.last_step_local_updates = rep.steps.last().map_or(0, |s| s.local_updates);
                }
                Err(e) if e.is_solver_failure() => row.error = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            if let Some(spec) = &cfg.bench.step_search {
                let mut err = None;
                let search = max_step_search(&spec.grid, |v| {
                    model.converges(solver, &cfg.loading.path_with(Some((spec.variable, v)))).unwrap_or_else(|e| {
                        err = Some(e);
                        false
                    })
                });
                if let Some(e) = err {
                    return Err(e);
                }
                row.step_search = Some(search);
            }
            report.rows.push(row);
        }
    }
    for divs in &cfg.bench.meshes {
        let sized = cfg.with_divisions(*divs)?;
        let Model::Box(p) = Model::build(&sized)? else {
            return Err(Error::Config("a mesh sweep needs box geometry".into()));
        };
        for strategy in &strategies {
            let solver = cfg.solver.with_strategy(*strategy);
            let start = Instant::now();
            let result = Solver::new(&p, solver)?.run_load_path(&path, |_, _, _| {});
            let wall_time = start.elapsed().as_secs_f64();
            let (converged, outer, local) = match result {
                Ok((_, rep)) => (rep.converged(), rep.outer_iterations(), rep.local_updates()),
                Err(e) if e.is_solver_failure() => (false, 0, 0),
                Err(e) => return Err(e),
            };
            report.meshes.push(MeshRow {
                divisions: *divs,
                dofs: p.mesh.n_dofs(),
                strategy: *strategy,
                scheme: solver.scheme,
                wall_time,
                local_updates: local,
                outer_iterations: outer,
                converged,
            });
        }
    }
    Ok(report)
}
