//! Seeded check batteries shared by `smafem verify` and the acceptance tests.
//! Each battery returns measured errors; callers apply their own limits.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{analytic_1d, dense_local_oracle, fd_check, log_log_slope, pack_increment, unknown_scales};
use crate::error::{Error, Result};
use crate::fem::{BarMesh, BoxGrid, HexMesh, SparseSystem, Support};
use crate::local::{
    delta_nu, delta_nu_star, frozen_state, local_residual, resolve_local_with, state_tangent,
    InternalState, LocalOptions, LocalScheme, Safeguard,
};
use crate::material::{Material, MaterialParams, Reversal, TransformDirection};
use crate::solver::{FieldState, LoadPath, Problem, SolverConfig, Solver, Strategy};
use crate::voigt::{Mat6, Matrix, Voigt6};

use TransformDirection::{Forward, Reverse};

const SEED: u64 = 0x5eed_2024;

fn material() -> Result<Material<6>> {
    Material::new(MaterialParams::default())
}

fn random_voigt(rng: &mut ChaCha8Rng, amp: f64) -> Voigt6 {
    Voigt6::from_fn(|_, _| rng.random_range(-amp..amp))
}

fn tight() -> LocalOptions {
    LocalOptions { tolerance: 1e-12, max_iterations: 200, safeguard: Safeguard::LineSearch }
}

/// One Gauss-point problem: previous state, total strain and temperature.
#[derive(Debug, Clone, Copy)]
pub struct PointProblem {
    pub state_n: InternalState<6>,
    pub eps: Voigt6,
    pub t: f64,
}

/// Deterministic transforming Gauss-point problems. Forward problems start from
/// austenite; reverse problems unload and heat a state produced by a forward solve.
pub fn point_problems(mat: &Material<6>, dir: TransformDirection, count: usize, seed: u64) -> Result<Vec<PointProblem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 50 * count.max(1) {
            return Err(Error::Config(format!("could not generate {count} {dir:?} point problems")));
        }
        // mostly deviatoric: nearly hydrostatic strain leaves σ_vM inside the smoothing band
        let mag = rng.random_range(0.006..0.02);
        let mut eps = Voigt6::new(mag, -0.5 * mag, -0.5 * mag, 0.0, 0.0, 0.0) + random_voigt(&mut rng, 0.002);
        eps[3] += rng.random_range(-0.004..0.004);
        let cand = match dir {
            Forward => {
                let t = rng.random_range(230.0..280.0);
                PointProblem { state_n: InternalState::austenite(mat), eps, t }
            }
            _ => {
                let t1 = rng.random_range(230.0..250.0);
                let load = resolve_local_with(mat, &InternalState::austenite(mat), &eps, t1, LocalScheme::NewtonRaphson, &tight())?;
                let t = rng.random_range(285.0..315.0);
                let factor = rng.random_range(0.2..0.7);
                PointProblem { state_n: load.state, eps: eps * factor, t }
            }
        };
        let res = resolve_local_with(mat, &cand.state_n, &cand.eps, cand.t, LocalScheme::NewtonRaphson, &tight())?;
        let s = &res.state;
        if s.direction == dir && s.xi > 0.02 && s.xi < 0.98 && mat.von_mises(&s.sigma) > 1e7 {
            out.push(cand);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeBattery {
    pub forward: usize,
    pub reverse: usize,
    /// Largest difference from the Newton–Raphson solution over schemes and cases, as
    /// max(|Δξ|, ‖Δεᵗ‖/H, ‖Δσ‖/‖σ‖, |ΔS|/|S_M − S_A|).
    pub max_difference: f64,
}

/// Resolves every problem with all four local schemes.
pub fn scheme_battery(count: usize) -> Result<SchemeBattery> {
    let mat = material()?;
    let mut worst: f64 = 0.0;
    for dir in [Forward, Reverse] {
        for p in point_problems(&mat, dir, count, SEED)? {
            let reference = resolve_local_with(&mat, &p.state_n, &p.eps, p.t, LocalScheme::NewtonRaphson, &tight())?.state;
            for scheme in &LocalScheme::ALL[1..] {
                let s = resolve_local_with(&mat, &p.state_n, &p.eps, p.t, *scheme, &tight())?.state;
                let d = [
                    (s.xi - reference.xi).abs(),
                    (s.eps_t - reference.eps_t).norm() / mat.params.h,
                    (s.sigma - reference.sigma).norm() / reference.sigma.norm().max(1.0),
                    (s.s - reference.s).abs() / mat.delta_s.abs(),
                ];
                worst = d.iter().fold(worst, |a, b| a.max(*b));
            }
        }
    }
    Ok(SchemeBattery { forward: count, reverse: count, max_difference: worst })
}

/// A mid-step local iterate with H_σ = 0 (ε chosen to match) and nonzero residuals
/// in the other rows.
pub fn random_iterate(
    rng: &mut ChaCha8Rng,
    mat: &Material<6>,
    dir: TransformDirection,
) -> (InternalState<6>, InternalState<6>, Voigt6, f64) {
    let xi_n = rng.random_range(0.1..0.8);
    let t = rng.random_range(220.0..300.0);
    let mut sigma = random_voigt(rng, 2e8);
    sigma[0] += 2e8;
    let lam_n = mat.forward_flow(&random_voigt(rng, 1e8)).lambda;
    let mut st_n = InternalState {
        xi: xi_n,
        eps_t: lam_n * xi_n,
        s: mat.s_a + xi_n * mat.delta_s,
        sigma: Voigt6::zeros(),
        reversal: Reversal::default(),
        direction: TransformDirection::None,
    };
    if dir == Reverse {
        st_n.direction = Reverse;
        st_n.reversal = Reversal { eps_t: lam_n * 0.95, xi: 0.95 };
    }
    let dxi = match dir {
        Forward => rng.random_range(0.0..0.15),
        _ => -rng.random_range(0.0..xi_n * 0.9),
    };
    let mut st = frozen_state(&st_n, sigma, dir);
    st.xi = xi_n + dxi;
    st.s = mat.s_a + st.xi * mat.delta_s + rng.random_range(-0.05..0.05) * mat.delta_s;
    st.eps_t += random_voigt(rng, 0.003);
    let eps = mat.thermal_strain(t) + st.eps_t + mat.compliance(st.s) * st.sigma;
    (st, st_n, eps, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleBattery {
    pub states: usize,
    /// Largest scaled relative difference of Δν against the dense solve.
    pub delta: f64,
    /// Same for Δν* with a random strain increment.
    pub delta_star: f64,
    /// Smallest raw condition number seen.
    pub min_raw_condition: f64,
}

/// Closed-form increments against the dense oracle on `count` random iterates.
pub fn oracle_battery(count: usize) -> Result<OracleBattery> {
    let mat = material()?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let sc = unknown_scales(&mat);
    let rel = |a: &DVector<f64>, b: &DVector<f64>| {
        (a - b).component_div(&sc).norm() / b.component_div(&sc).norm().max(1e-300)
    };
    let mut out = OracleBattery { states: count, delta: 0.0, delta_star: 0.0, min_raw_condition: f64::INFINITY };
    for k in 0..count {
        let dir = if k % 2 == 0 { Forward } else { Reverse };
        let (st, st_n, eps, t) = random_iterate(&mut rng, &mat, dir);
        let d_eps = random_voigt(&mut rng, 1e-4);
        let oracle = dense_local_oracle(&mat, &st, &st_n, &eps, t, dir, &d_eps)?;
        let res = local_residual(&mat, &st, &st_n, &eps, t, dir)?;
        let inc = delta_nu(&mat, &st, &st_n, &res, dir, LocalScheme::NewtonRaphson)?;
        let star = delta_nu_star(&mat, &st, &st_n, &d_eps, dir)?;
        out.delta = out.delta.max(rel(&pack_increment(&inc), &oracle.delta));
        out.delta_star = out.delta_star.max(rel(&pack_increment(&star), &oracle.delta_star));
        out.min_raw_condition = out.min_raw_condition.min(oracle.condition_raw);
    }
    Ok(out)
}

/// Consistent tangent of converged local solutions against central differences of
/// σ(ε) through the full local solve. Returns the largest relative Frobenius error.
pub fn tangent_battery(count: usize) -> Result<f64> {
    let mat = material()?;
    let mut worst: f64 = 0.0;
    let forward = point_problems(&mat, Forward, count.div_ceil(2), SEED + 2)?;
    let reverse = point_problems(&mat, Reverse, count / 2, SEED + 3)?;
    for p in forward.iter().chain(&reverse) {
        let solve = |e: &Voigt6| resolve_local_with(&mat, &p.state_n, e, p.t, LocalScheme::NewtonRaphson, &tight());
        let base = solve(&p.eps)?.state;
        let l = state_tangent(&mat, &base, &p.state_n)?;
        let h = 1e-8;
        let mut fd = Mat6::zeros();
        for j in 0..6 {
            let mut ep = p.eps;
            let mut em = p.eps;
            ep[j] += h;
            em[j] -= h;
            fd.set_column(j, &((solve(&ep)?.state.sigma - solve(&em)?.state.sigma) / (2.0 * h)));
        }
        worst = worst.max((fd - l).norm() / l.norm());
    }
    Ok(worst)
}

/// ∂Φ/∂ξ and ∂Φ/∂σ against central differences at random states of both directions.
pub fn phi_partials_battery(count: usize) -> Result<f64> {
    let mat = material()?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let dir = if k % 2 == 0 { Forward } else { Reverse };
        let (st, _, _, t) = random_iterate(&mut rng, &mat, dir);
        let d = mat.phi_and_partials(st.xi, &st.sigma, t, dir, &st.reversal)?;
        let mut jac = nalgebra::DMatrix::zeros(1, 7);
        jac[(0, 0)] = d.d_xi;
        for i in 0..6 {
            jac[(0, 1 + i)] = d.d_sigma[i];
        }
        let x = DVector::from_iterator(7, std::iter::once(st.xi).chain(st.sigma.iter().copied()));
        let mut scale = DVector::from_element(7, mat.params.e_a * mat.params.h);
        scale[0] = 1.0;
        let f = |v: &DVector<f64>| {
            let sigma = Voigt6::from_fn(|i, _| v[1 + i]);
            let phi = mat.phi_and_partials(v[0], &sigma, t, dir, &st.reversal).map(|p| p.phi).unwrap_or(f64::NAN);
            DVector::from_element(1, phi)
        };
        worst = worst.max(fd_check(f, &x, &jac, &scale, &super::FD_LADDER));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoolingCheck {
    pub dt: f64,
    /// |ξ_analytic − ξ| at 220 K.
    pub error_220: f64,
    /// ξ at M_f.
    pub xi_mf: f64,
    pub wall_time: f64,
}

/// Stress-free cooling of a 10-element bar from 300 K to 190 K with step `dt`.
pub fn stress_free_cooling(dt: f64) -> Result<CoolingCheck> {
    let params = MaterialParams::default();
    let problem = Problem::new(BarMesh::bar(1.0, 10, 0.1, 0.0)?, Material::<1>::new(params.clone())?)?;
    let path = LoadPath::new(300.0, 0.0).to(190.0, 0.0, dt, 1.0);
    let start = Instant::now();
    let mut solver = Solver::new(&problem, SolverConfig::default())?;
    let mut out = CoolingCheck { dt, error_220: f64::NAN, xi_mf: f64::NAN, wall_time: 0.0 };
    let mut failure = None;
    solver.run_load_path(&path, |_, st, _| {
        let g = &st.gauss[0];
        if (st.t - 220.0).abs() < 0.25 * dt {
            match analytic_1d(g.sigma[0], st.t, &params, Forward) {
                Ok((xi, _)) => out.error_220 = (xi - g.xi).abs(),
                Err(e) => failure = Some(e),
            }
        }
        if (st.t - params.m_f).abs() < 0.25 * dt {
            out.xi_mf = g.xi;
        }
    })?;
    out.wall_time = start.elapsed().as_secs_f64();
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Convergence-order fit over step sizes; errors are floored at 1e-16 before the fit.
pub fn convergence_order(dts: &[f64]) -> Result<(Vec<CoolingCheck>, f64)> {
    let runs = dts.iter().map(|dt| stress_free_cooling(*dt)).collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = runs.iter().map(|r| r.error_220.max(1e-16)).collect();
    Ok((runs, log_log_slope(dts, &errors)))
}

fn patch_stiffness() -> Mat6 {
    let mut d = Mat6::zeros();
    let (e, nu) = (70e9, 0.33);
    let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = lam;
        }
        d[(i, i)] += 2.0 * mu;
        d[(3 + i, 3 + i)] = mu;
    }
    d
}

/// Patch test on a 2×2×2 block with a displaced interior node: linear displacement
/// prescribed on the boundary. Returns the largest of the interior-node displacement
/// error (relative to the field) and the stress deviation at all Gauss points.
pub fn patch_test() -> Result<f64> {
    let g = BoxGrid::new([1.0, 1.0, 1.0], [2, 2, 2])?;
    let base = HexMesh::hex_box(&g)?;
    let centre = g.node_index([1, 1, 1]);
    let mut nodes = base.nodes.clone();
    nodes[centre] = [0.56, 0.43, 0.52];
    let mut mesh = HexMesh::from_cells(nodes, base.connectivity.clone())?;
    let grad = [[1e-3, 2e-4, -1e-4], [-3e-4, 5e-4, 2e-4], [1e-4, -2e-4, 4e-4]];
    let lin = |x: [f64; 3]| -> [f64; 3] { std::array::from_fn(|r| (0..3).map(|c| grad[r][c] * x[c]).sum()) };
    mesh.dirichlet = mesh
        .nodes
        .iter()
        .enumerate()
        .filter(|(n, _)| *n != centre)
        .flat_map(|(n, x)| {
            let v = lin(*x);
            (0..3).map(move |c| (3 * n + c, v[c]))
        })
        .collect();
    let d = patch_stiffness();
    let tangents = vec![d; mesh.n_gauss()];
    let mut sys = SparseSystem::new(&mesh)?;
    sys.assemble(&mesh, &tangents);
    let mut u = mesh.initial_displacement();
    let stresses: Vec<Voigt6> = mesh.strains(&u).iter().map(|e| d * e).collect();
    let r = sys.restrict(&mesh.assemble_residual(&stresses, 0.0));
    let du = sys.solve(&(-r))?;
    sys.expand_add(&mut u, &du);
    let exact = lin(mesh.nodes[centre]);
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        worst = worst.max((u[3 * centre + c] - exact[c]).abs() / 1e-3);
    }
    let eps0 = Voigt6::new(
        grad[0][0],
        grad[1][1],
        grad[2][2],
        grad[1][2] + grad[2][1],
        grad[0][2] + grad[2][0],
        grad[0][1] + grad[1][0],
    );
    let s0 = d * eps0;
    for e in mesh.strains(&u) {
        worst = worst.max((d * e - s0).norm() / s0.norm());
    }
    Ok(worst)
}

/// Assembled bar stiffness against the tridiagonal EA/L·[1 −1; −1 1] pattern,
/// largest entry error relative to EA/L.
pub fn bar_stiffness() -> Result<f64> {
    let (length, n, area, e) = (1.3, 7, 0.02, 55e9);
    let bar = BarMesh::bar(length, n, area, 1.0)?;
    let k = bar.assemble_tangent_dense(&vec![Matrix::<1>::new(e); bar.n_gauss()]);
    let ke = e * area / (length / n as f64);
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let exact = if i == j {
                if i == 0 || i == n { ke } else { 2.0 * ke }
            } else if i.abs_diff(j) == 1 {
                -ke
            } else {
                0.0
            };
            worst = worst.max((k[(i, j)] - exact).abs() / ke);
        }
    }
    Ok(worst)
}

/// Runs a small 3D load-then-cool path twice per strategy and compares the results
/// bit for bit.
pub fn reruns_identical() -> Result<bool> {
    let g = BoxGrid::new([1.0, 5.0, 1.0], [1, 5, 1])?;
    let mut mesh = HexMesh::hex_box(&g)?;
    mesh.support(&g, 1, false, Support::Rollers);
    mesh.traction(&g, 1, true, [0.0, 1.2e8, 0.0]);
    let problem = Problem::new(mesh, material()?)?;
    let path = LoadPath::new(310.0, 0.0).to(310.0, 1.0, 1.0, 0.25).to(260.0, 1.0, 5.0, 1.0);
    for strategy in Strategy::ALL {
        let cfg = SolverConfig::default().with_strategy(strategy);
        let run = || -> Result<FieldState<6>> { Ok(Solver::new(&problem, cfg)?.run_load_path(&path, |_, _, _| {})?.0) };
        let (a, b) = (run()?, run()?);
        let bits = |s: &FieldState<6>| -> Vec<u64> {
            s.u.iter()
                .chain(s.gauss.iter().flat_map(|g| g.sigma.iter().chain(g.eps_t.iter())))
                .map(|v| v.to_bits())
                .collect()
        };
        if bits(&a) != bits(&b) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub limit: String,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, measured: f64, limit: f64) -> Check {
        Check { name: name.into(), measured, limit: format!("< {limit:e}"), passed: measured < limit }
    }

    fn within(name: &str, measured: f64, lo: f64, hi: f64) -> Check {
        Check { name: name.into(), measured, limit: format!("in [{lo}, {hi}]"), passed: (lo..=hi).contains(&measured) }
    }

    fn failed(name: &str, err: &Error) -> Check {
        Check { name: name.into(), measured: f64::NAN, limit: format!("error: {err}"), passed: false }
    }
}

/// The full verification suite.
pub fn suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |r: Result<Vec<Check>>, name: &str| match r {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(Check::failed(name, &e)),
    };
    push(
        stress_free_cooling(0.1).map(|c| {
            vec![
                Check::below("analytic_xi_error_220K", c.error_220, 1e-3),
                Check::below("analytic_xi_at_mf", (c.xi_mf - 1.0).abs(), 1e-6),
                Check::below("analytic_runtime_s", c.wall_time, 5.0),
            ]
        }),
        "analytic_cooling",
    );
    push(
        convergence_order(&[0.05, 0.1, 0.2, 0.4]).map(|(_, slope)| vec![Check::within("convergence_order_slope", slope, 0.8, 1.2)]),
        "convergence_order_slope",
    );
    push(
        scheme_battery(20).map(|b| vec![Check::below("scheme_equivalence", b.max_difference, 1e-8)]),
        "scheme_equivalence",
    );
    push(
        oracle_battery(20).map(|o| {
            vec![
                Check::below("dense_oracle_delta_nu", o.delta, 1e-8),
                Check::below("dense_oracle_delta_nu_star", o.delta_star, 1e-8),
                Check { name: "dense_oracle_raw_condition".into(), measured: o.min_raw_condition, limit: "> 1e9".into(), passed: o.min_raw_condition > 1e9 },
            ]
        }),
        "dense_oracle",
    );
    push(phi_partials_battery(20).map(|e| vec![Check::below("phi_partials_fd", e, 1e-6)]), "phi_partials_fd");
    push(tangent_battery(20).map(|e| vec![Check::below("consistent_tangent_fd", e, 1e-5)]), "consistent_tangent_fd");
    push(patch_test().map(|e| vec![Check::below("hex8_patch_test", e, 1e-8)]), "hex8_patch_test");
    push(bar_stiffness().map(|e| vec![Check::below("bar_stiffness", e, 1e-12)]), "bar_stiffness");
    push(
        reruns_identical().map(|same| {
            vec![Check { name: "deterministic_rerun".into(), measured: f64::from(u8::from(same)), limit: "= 1".into(), passed: same }]
        }),
        "deterministic_rerun",
    );
    checks
}
