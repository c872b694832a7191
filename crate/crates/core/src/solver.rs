//! Global solution strategies and the pseudo-time load-stepping driver.
//!
//! `ReturnMapping` resolves every Gauss point completely inside each global Newton
//! iteration. `ParallelProjection` advances the local unknowns by a single Newton
//! increment per global iteration and carries the local residual into the global
//! right-hand side through the coupling correction.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Mesh, SparseSystem};
use crate::local::{
    consistent_tangent, coupling_stress, delta_nu, delta_nu_star, frozen_state,
    local_residual, resolve_local_with, saturate, state_tangent, trial_direction, trial_elastic, InternalState,
    LocalOptions, LocalScheme, Safeguard,
};
use crate::material::{Material, TransformDirection};
use crate::voigt::{Matrix, Sp, Space, Vector};

const STAGNATION: f64 = 0.25;
const TIGHTEST_INNER: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ReturnMapping,
    ParallelProjection,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::ReturnMapping, Strategy::ParallelProjection];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ReturnMapping => "return_mapping",
            Strategy::ParallelProjection => "parallel_projection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub strategy: Strategy,
    pub scheme: LocalScheme,
    /// Global tolerance on ‖R_free‖ / max(‖F_ext‖, 1 N).
    pub e_r: f64,
    /// Local tolerance on the scaled local residual.
    pub e_h: f64,
    pub max_outer: usize,
    /// Local iteration cap per Gauss point (return mapping only).
    pub max_inner: usize,
    pub safeguard: Safeguard,
    /// Automatic step halvings allowed per load step; 0 reports the first failure.
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: Strategy::ReturnMapping,
            scheme: LocalScheme::NewtonRaphson,
            e_r: 1e-6,
            e_h: 1e-6,
            max_outer: 50,
            max_inner: 50,
            safeguard: Safeguard::LineSearch,
            max_halvings: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_r > 0.0 && self.e_h > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }

    pub fn with_strategy(self, strategy: Strategy) -> Self {
        SolverConfig { strategy, ..self }
    }

    pub fn with_scheme(self, scheme: LocalScheme) -> Self {
        SolverConfig { scheme, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    /// Temperature increment (K).
    pub dt: f64,
    /// Load-factor increment.
    pub df: f64,
}

/// Initial temperature and load factor followed by the ordered increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPath {
    pub t0: f64,
    pub f0: f64,
    pub steps: Vec<LoadStep>,
}

impl LoadPath {
    pub fn new(t0: f64, f0: f64) -> Self {
        LoadPath { t0, f0, steps: Vec::new() }
    }

    /// Temperature and load factor after all steps.
    pub fn end(&self) -> (f64, f64) {
        self.steps.iter().fold((self.t0, self.f0), |(t, f), s| (t + s.dt, f + s.df))
    }

    /// Appends equal steps that move linearly to (t, f), with each increment no larger
    /// than `max_dt` in temperature and `max_df` in load factor.
    pub fn to(mut self, t: f64, f: f64, max_dt: f64, max_df: f64) -> Self {
        let (t_start, f_start) = self.end();
        let (dt, df) = (t - t_start, f - f_start);
        let count = |d: f64, m: f64| if d == 0.0 { 0.0 } else { (d.abs() / m - 1e-9).ceil() };
        let n = count(dt, max_dt).max(count(df, max_df)).max(1.0) as usize;
        let ts: Vec<f64> = (0..=n).map(|i| t_start + dt * i as f64 / n as f64).collect();
        let fs: Vec<f64> = (0..=n).map(|i| f_start + df * i as f64 / n as f64).collect();
        for i in 0..n {
            self.steps.push(LoadStep { dt: ts[i + 1] - ts[i], df: fs[i + 1] - fs[i] });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        if !finite(self.t0) || !finite(self.f0) || self.steps.iter().any(|s| !finite(s.dt) || !finite(s.df)) {
            return Err(Error::Config("load path contains non-finite values".into()));
        }
        if self.t0 <= 0.0 {
            return Err(Error::Config("temperature must be positive (K)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub outer_iterations: usize,
    /// Local updates summed over Gauss points.
    pub local_updates: usize,
    /// Scaled global residual per outer iteration.
    pub residuals: Vec<f64>,
    /// Largest scaled local residual per outer iteration (zero for return mapping,
    /// whose inner loops always finish).
    pub local_residuals: Vec<f64>,
    pub converged: bool,
    pub substeps: usize,
    pub wall_time: f64,
}

impl StepReport {
    fn absorb(&mut self, o: StepReport) {
        self.outer_iterations += o.outer_iterations;
        self.local_updates += o.local_updates;
        self.residuals.extend(o.residuals);
        self.local_residuals.extend(o.local_residuals);
        self.converged = o.converged;
        self.substeps += o.substeps;
        self.wall_time += o.wall_time;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub steps: Vec<StepReport>,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn outer_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.outer_iterations).sum()
    }

    pub fn local_updates(&self) -> usize {
        self.steps.iter().map(|s| s.local_updates).sum()
    }

    pub fn converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }
}

/// Displacements and Gauss-point states at one pseudo-time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState<const N: usize> {
    pub u: DVector<f64>,
    pub gauss: Vec<InternalState<N>>,
    pub t: f64,
    pub load: f64,
}

impl<const N: usize> FieldState<N> {
    pub fn stresses(&self) -> Vec<Vector<N>> {
        self.gauss.iter().map(|g| g.sigma).collect()
    }
}

pub struct Problem<const N: usize, const E: usize> {
    pub mesh: Mesh<N, E>,
    pub material: Material<N>,
}

impl<const N: usize, const E: usize> Problem<N, E>
where
    Sp<N>: Space<N>,
{
    pub fn new(mesh: Mesh<N, E>, material: Material<N>) -> Result<Self> {
        mesh.validate()?;
        Ok(Problem { mesh, material })
    }

    /// Undeformed austenite with zero stress; not in equilibrium when thermal strain is
    /// constrained, so the driver equilibrates it first.
    pub fn reference_state(&self, t: f64, load: f64) -> FieldState<N> {
        FieldState {
            u: self.mesh.initial_displacement(),
            gauss: vec![InternalState::austenite(&self.material); self.mesh.n_gauss()],
            t,
            load,
        }
    }

    fn load_scale(&self, load: f64) -> f64 {
        (self.mesh.f_ref.norm() * load.abs()).max(1.0)
    }

    /// Full-dof residual of a state.
    pub fn residual(&self, state: &FieldState<N>) -> DVector<f64> {
        self.mesh.assemble_residual(&state.stresses(), state.load)
    }

    /// |Σ reactions + Σ external loads| per component, relative to max(‖F_ext‖, 1 N).
    pub fn reaction_imbalance(&self, state: &FieldState<N>) -> f64 {
        let r = self.residual(state);
        let dpn = self.mesh.dofs_per_node;
        let mut worst: f64 = 0.0;
        for c in 0..dpn {
            let mut reactions = 0.0;
            let mut applied = 0.0;
            for (d, _) in &self.mesh.dirichlet {
                if d % dpn == c {
                    reactions += r[*d];
                }
            }
            for n in 0..self.mesh.nodes.len() {
                applied += self.mesh.f_ref[n * dpn + c] * state.load;
            }
            worst = worst.max((reactions + applied).abs());
        }
        worst / self.load_scale(state.load)
    }

    /// Smallest Π·Δξ / Y over the Gauss points that transformed between two states.
    pub fn min_dissipation(&self, prev: &FieldState<N>, next: &FieldState<N>) -> Result<f64> {
        let mat = &self.material;
        let mut worst = f64::INFINITY;
        for (a, b) in prev.gauss.iter().zip(&next.gauss) {
            let dxi = b.xi - a.xi;
            if dxi == 0.0 {
                continue;
            }
            let dir = if dxi > 0.0 { TransformDirection::Forward } else { TransformDirection::Reverse };
            let rev = match dir {
                TransformDirection::Reverse => crate::local::reversal_for(a),
                _ => b.reversal,
            };
            let pi = mat.driving_force(b.xi, &b.sigma, next.t, dir, &rev)?;
            worst = worst.min(pi * dxi / mat.y());
        }
        Ok(worst)
    }
}

pub struct StepResult<const N: usize> {
    pub state: FieldState<N>,
    pub report: StepReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Elastic,
    Active(TransformDirection),
    Saturated(TransformDirection),
}

/// Largest-step scan over an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSearch {
    pub largest: f64,
    pub outcomes: Vec<(f64, bool)>,
    /// False if some step failed while a larger one converged.
    pub monotone: bool,
    /// True if no grid step converged; `largest` is then the smallest grid value.
    pub failed: bool,
}

/// Runs `converges` on every grid value and reports the largest converging step.
pub fn max_step_search(grid: &[f64], mut converges: impl FnMut(f64) -> bool) -> StepSearch {
    let mut steps = grid.to_vec();
    steps.sort_by(f64::total_cmp);
    let outcomes: Vec<(f64, bool)> = steps.iter().map(|s| (*s, converges(*s))).collect();
    let largest = outcomes.iter().rev().find(|o| o.1).map(|o| o.0);
    let monotone = match largest {
        Some(l) => outcomes.iter().all(|(s, ok)| *ok || *s > l),
        None => true,
    };
    StepSearch {
        largest: largest.unwrap_or_else(|| steps.first().copied().unwrap_or(0.0)),
        outcomes,
        monotone,
        failed: largest.is_none(),
    }
}

pub struct Solver<'a, const N: usize, const E: usize> {
    pub problem: &'a Problem<N, E>,
    pub config: SolverConfig,
    system: SparseSystem<E>,
}

impl<'a, const N: usize, const E: usize> Solver<'a, N, E>
where
    Sp<N>: Space<N>,
{
    pub fn new(problem: &'a Problem<N, E>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let system = SparseSystem::new(&problem.mesh)?;
        Ok(Solver { problem, config, system })
    }

    /// One load step from a converged state with the configured strategy.
    pub fn step(&mut self, prev: &FieldState<N>, t: f64, load: f64) -> Result<StepResult<N>> {
        let start = Instant::now();
        let mut out = match self.config.strategy {
            Strategy::ReturnMapping => self.step_return_mapping(prev, t, load),
            Strategy::ParallelProjection => self.step_parallel_projection(prev, t, load),
        }?;
        out.report.substeps = 1;
        out.report.wall_time = start.elapsed().as_secs_f64();
        Ok(out)
    }

    fn solve_update(&mut self, tangents: &[Matrix<N>], rhs: &DVector<f64>, u: &mut DVector<f64>) -> Result<DVector<f64>> {
        self.system.assemble(&self.problem.mesh, tangents);
        let du = self.system.solve(rhs)?;
        let mut full = DVector::zeros(u.len());
        self.system.expand_add(&mut full, &du);
        *u += &full;
        Ok(full)
    }

    pub fn step_return_mapping(&mut self, prev: &FieldState<N>, t: f64, load: f64) -> Result<StepResult<N>> {
        let (mesh, mat) = (&self.problem.mesh, &self.problem.material);
        let cfg = self.config;
        let mut opts = LocalOptions { tolerance: cfg.e_h, max_iterations: cfg.max_inner, safeguard: cfg.safeguard };
        let scale = self.problem.load_scale(load);
        let mut u = prev.u.clone();
        let mut report = StepReport::default();
        let mut gauss = prev.gauss.clone();
        let mut last = f64::INFINITY;
        let unloaded = self.problem.mesh.f_ref.norm() * load.abs() < 1.0;
        for k in 0..=cfg.max_outer {
            let eps = mesh.strains(&u);
            for (g, e) in eps.iter().enumerate() {
                let out = resolve_local_with(mat, &prev.gauss[g], e, t, cfg.scheme, &opts)?;
                report.local_updates += out.iterations;
                gauss[g] = out.state;
            }
            let stresses: Vec<Vector<N>> = gauss.iter().map(|s| s.sigma).collect();
            let r = self.system.restrict(&mesh.assemble_residual(&stresses, load));
            let norm = r.norm() / scale;
            report.residuals.push(norm);
            report.local_residuals.push(0.0);
            report.outer_iterations = k;
            if norm < cfg.e_r {
                report.converged = true;
                break;
            }
            if k == cfg.max_outer || !norm.is_finite() {
                break;
            }
            // Without external load only the 1 N floor scales the residual, and local
            // noise at e_H can exceed it; tighten the inner tolerance on stagnation.
            if unloaded && norm > STAGNATION * last && opts.tolerance > TIGHTEST_INNER {
                opts.tolerance = (opts.tolerance * 1e-3).max(TIGHTEST_INNER);
            }
            last = norm;
            let tangents = gauss
                .iter()
                .zip(&prev.gauss)
                .map(|(s, sn)| state_tangent(mat, s, sn))
                .collect::<Result<Vec<_>>>()?;
            self.solve_update(&tangents, &(-r), &mut u)?;
        }
        Ok(StepResult { state: FieldState { u, gauss, t, load }, report })
    }

    pub fn step_parallel_projection(&mut self, prev: &FieldState<N>, t: f64, load: f64) -> Result<StepResult<N>> {
        let (mesh, mat) = (&self.problem.mesh, &self.problem.material);
        let cfg = self.config;
        let scale = self.problem.load_scale(load);
        let ng = mesh.n_gauss();
        let mut u = prev.u.clone();
        let mut report = StepReport::default();
        let mut nu = prev.gauss.clone();
        let mut mode = vec![Mode::Elastic; ng];
        for k in 0..=cfg.max_outer {
            let eps = mesh.strains(&u);
            // re-detect the active set and evaluate H at the current iterate
            let mut residuals = Vec::with_capacity(ng);
            let mut h_max: f64 = 0.0;
            for g in 0..ng {
                let sn = &prev.gauss[g];
                let trial = trial_elastic(mat, sn, &eps[g], t)?;
                let dir = trial_direction(&trial, sn);
                if dir == TransformDirection::None {
                    nu[g] = frozen_state(sn, trial.sigma, dir);
                    mode[g] = Mode::Elastic;
                    residuals.push(None);
                    continue;
                }
                match mode[g] {
                    Mode::Active(d) if d == dir => {}
                    Mode::Saturated(d) if d == dir => {
                        let sat = saturate(mat, sn, &eps[g], t, dir)?;
                        let phi = mat.phi_and_partials(sat.xi, &sat.sigma, t, dir, &sat.reversal)?.phi;
                        if phi >= 0.0 {
                            nu[g] = sat;
                            residuals.push(None);
                            continue;
                        }
                        nu[g] = InternalState { direction: dir, ..sat };
                        mode[g] = Mode::Active(dir);
                    }
                    _ => {
                        nu[g] = frozen_state(sn, trial.sigma, dir);
                        mode[g] = Mode::Active(dir);
                    }
                }
                let h = local_residual(mat, &nu[g], sn, &eps[g], t, dir)?;
                h_max = h_max.max(h.norm(mat));
                residuals.push(Some((dir, h)));
            }
            let stresses: Vec<Vector<N>> = nu.iter().map(|s| s.sigma).collect();
            let r = self.system.restrict(&mesh.assemble_residual(&stresses, load));
            let norm = r.norm() / scale;
            report.residuals.push(norm);
            report.local_residuals.push(h_max);
            report.outer_iterations = k;
            if norm < cfg.e_r && h_max < cfg.e_h {
                report.converged = true;
                break;
            }
            if k == cfg.max_outer || !norm.is_finite() || !h_max.is_finite() {
                break;
            }
            // one local increment per inelastic point, linearized at the current iterate
            let mut tangents = Vec::with_capacity(ng);
            let mut coupling = vec![Vector::<N>::zeros(); ng];
            let mut linearized = Vec::with_capacity(ng);
            for g in 0..ng {
                let sn = &prev.gauss[g];
                match residuals[g] {
                    Some((dir, h)) => {
                        tangents.push(consistent_tangent(mat, &nu[g], sn, dir)?);
                        coupling[g] = if cfg.scheme == LocalScheme::NewtonRaphson {
                            coupling_stress(mat, &nu[g], sn, &h, dir)?
                        } else {
                            Vector::<N>::zeros()
                        };
                        let inc = delta_nu(mat, &nu[g], sn, &h, dir, cfg.scheme)?;
                        if cfg.scheme != LocalScheme::NewtonRaphson {
                            coupling[g] = -inc.sigma;
                        }
                        report.local_updates += 1;
                        linearized.push(Some((dir, nu[g])));
                        nu[g] = inc.apply(&nu[g]);
                    }
                    None => {
                        tangents.push(state_tangent(mat, &nu[g], sn)?);
                        linearized.push(None);
                    }
                }
            }
            let correction = self.system.restrict(&mesh.assemble_coupling_correction(&coupling));
            let du = self.solve_update(&tangents, &(correction - r), &mut u)?;
            let d_eps = mesh.strains(&du);
            for g in 0..ng {
                let Some((dir, lin)) = linearized[g] else { continue };
                let sn = &prev.gauss[g];
                let star = delta_nu_star(mat, &lin, sn, &d_eps[g], dir)?;
                let mut st = star.apply(&nu[g]);
                let (lo, hi) = match dir {
                    TransformDirection::Forward => (sn.xi, 1.0),
                    _ => (0.0, sn.xi),
                };
                let bound = if dir == TransformDirection::Forward { hi } else { lo };
                if (dir == TransformDirection::Forward && st.xi >= hi) || (dir == TransformDirection::Reverse && st.xi <= lo) {
                    if bound != sn.xi {
                        mode[g] = Mode::Saturated(dir);
                    }
                    st.xi = bound;
                } else {
                    st.xi = st.xi.clamp(lo, hi);
                }
                st.s = sn.s + mat.delta_s * (st.xi - sn.xi);
                nu[g] = st;
            }
        }
        Ok(StepResult { state: FieldState { u, gauss: nu, t, load }, report })
    }

    /// Step with optional recursive halving on failure.
    fn advance(&mut self, prev: &FieldState<N>, t: f64, load: f64, halvings: usize) -> Result<StepResult<N>> {
        let attempt = self.step(prev, t, load);
        let failed_report = match attempt {
            Ok(out) if out.report.converged => return Ok(out),
            Ok(out) => Some(out.report),
            Err(e) if halvings == 0 => return Err(e),
            Err(_) => None,
        };
        if halvings == 0 {
            let report = failed_report.expect("non-converged attempt has a report");
            return Ok(StepResult { state: prev.clone(), report });
        }
        let (tm, lm) = (0.5 * (prev.t + t), 0.5 * (prev.load + load));
        let first = self.advance(prev, tm, lm, halvings - 1)?;
        if !first.report.converged {
            return Ok(first);
        }
        let second = self.advance(&first.state, t, load, halvings - 1)?;
        let mut report = StepReport { substeps: 0, ..failed_report.unwrap_or_default() };
        report.absorb(first.report);
        report.absorb(second.report);
        Ok(StepResult { state: second.state, report })
    }

    /// Equilibrates the reference state at the path start (reported as step 0), then
    /// applies every increment. `on_step` sees each converged state.
    pub fn run_load_path(
        &mut self,
        path: &LoadPath,
        mut on_step: impl FnMut(usize, &FieldState<N>, &StepReport),
    ) -> Result<(FieldState<N>, SolveReport)> {
        path.validate()?;
        let start = Instant::now();
        let mut report = SolveReport::default();
        let reference = self.problem.reference_state(path.t0, path.f0);
        let mut state = self.checked(0, &reference, path.t0, path.f0, &mut report)?;
        on_step(0, &state, &report.steps[0]);
        let (mut t, mut f) = (path.t0, path.f0);
        for (i, s) in path.steps.iter().enumerate() {
            t += s.dt;
            f += s.df;
            state = self.checked(i + 1, &state, t, f, &mut report)?;
            on_step(i + 1, &state, report.steps.last().expect("step recorded"));
        }
        report.wall_time = start.elapsed().as_secs_f64();
        Ok((state, report))
    }

    fn checked(
        &mut self,
        index: usize,
        prev: &FieldState<N>,
        t: f64,
        load: f64,
        report: &mut SolveReport,
    ) -> Result<FieldState<N>> {
        let out = self
            .advance(prev, t, load, self.config.max_halvings)
            .map_err(|e| Error::Step { step: index, source: Box::new(e) })?;
        let converged = out.report.converged;
        let iterations = out.report.outer_iterations;
        let residual = out.report.residuals.last().copied().unwrap_or(f64::NAN);
        report.steps.push(out.report);
        if !converged {
            return Err(Error::GlobalDivergence { step: index, iterations, residual });
        }
        Ok(out.state)
    }

    /// Runs a path and reports whether every step converged.
    pub fn converges(&mut self, path: &LoadPath) -> bool {
        self.run_load_path(path, |_, _, _| {}).is_ok()
    }
}
