//! Fixtures shared by the benchmarks.

use smafem::fem::{BoxGrid, HexMesh, Support};
use smafem::local::InternalState;
use smafem::material::{Material, MaterialParams};
use smafem::solver::{FieldState, LoadPath, Problem, Solver, SolverConfig};
use smafem::voigt::Voigt6;

/// The 3D benchmark bar (1 x 5 x 1 m, rollers at y = 0, 1.2e8 Pa on y = 5).
pub fn benchmark_problem(divs: [usize; 3]) -> Problem<6, 24> {
    let g = BoxGrid::new([1.0, 5.0, 1.0], divs).expect("valid grid");
    let mut mesh = HexMesh::hex_box(&g).expect("valid mesh");
    mesh.support(&g, 1, false, Support::Rollers);
    mesh.traction(&g, 1, true, [0.0, 1.2e8, 0.0]);
    Problem::new(mesh, Material::new(MaterialParams::default()).expect("NiTi50")).expect("valid problem")
}

/// Fully loaded state at 310 K, ready for cooling steps.
pub fn loaded_state(problem: &Problem<6, 24>) -> FieldState<6> {
    let path = LoadPath::new(310.0, 0.0).to(310.0, 1.0, 1.0, 0.25);
    Solver::new(problem, SolverConfig::default())
        .and_then(|mut s| s.run_load_path(&path, |_, _, _| {}))
        .expect("elastic loading converges")
        .0
}

/// Austenite at 250 K under a uniaxial strain large enough to transform.
pub fn forward_point() -> (Material<6>, InternalState<6>, Voigt6, f64) {
    let mat = Material::new(MaterialParams::default()).expect("NiTi50");
    let state = InternalState::austenite(&mat);
    let eps = Voigt6::from([0.012, -0.006, -0.006, 0.0, 0.0, 0.001]);
    (mat, state, eps, 250.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use smafem::local::{resolve_local, LocalScheme};

    #[test]
    fn fixtures_exercise_transformation() {
        let (mat, state, eps, t) = forward_point();
        let (st, _) = resolve_local(&mat, &state, &eps, t, LocalScheme::NewtonRaphson).unwrap();
        assert!(st.xi > 0.05 && st.xi < 1.0);
        let p = benchmark_problem([1, 5, 1]);
        let loaded = loaded_state(&p);
        assert!(loaded.gauss.iter().all(|g| g.xi == 0.0));
        let next = Solver::new(&p, SolverConfig::default()).unwrap().step(&loaded, 240.0, 1.0).unwrap();
        assert!(next.state.gauss.iter().all(|g| g.xi > 0.1));
    }
}
