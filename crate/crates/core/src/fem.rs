//! Meshes, Gauss quadrature, strain-displacement maps and global assembly.
//!
//! A mesh is parameterized by the stress-space dimension `N` and the number of
//! element DOFs `E`: `Mesh<1, 2>` holds two-node bars in uniaxial stress and
//! `Mesh<6, 24>` holds eight-node hexahedra.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SMatrix};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voigt::{Matrix, Vector};

pub type BarMesh = Mesh<1, 2>;
pub type HexMesh = Mesh<6, 24>;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    fn gauss_1d(order: usize) -> (Vec<f64>, Vec<f64>) {
        match order {
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (0.6f64).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            _ => panic!("unsupported Gauss order {order}"),
        }
    }

    /// Two-point rule on [−1, 1].
    pub fn line() -> Self {
        let (p, w) = Self::gauss_1d(2);
        QuadratureRule { points: p.iter().map(|x| [*x, 0.0, 0.0]).collect(), weights: w }
    }

    /// Tensor Gauss rule on [−1, 1]³ with `order` points per direction.
    pub fn hex(order: usize) -> Self {
        let (p, w) = Self::gauss_1d(order);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for k in 0..order {
            for j in 0..order {
                for i in 0..order {
                    points.push([p[i], p[j], p[k]]);
                    weights.push(w[i] * w[j] * w[k]);
                }
            }
        }
        QuadratureRule { points, weights }
    }
}

/// Natural coordinates of the hexahedron corners in connectivity order.
pub const HEX_CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

pub fn hex_shape(nat: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, c) in HEX_CORNERS.iter().enumerate() {
        n[a] = 0.125 * (1.0 + c[0] * nat[0]) * (1.0 + c[1] * nat[1]) * (1.0 + c[2] * nat[2]);
    }
    n
}

fn hex_shape_derivatives(nat: [f64; 3]) -> [[f64; 3]; 8] {
    let mut d = [[0.0; 3]; 8];
    for (a, c) in HEX_CORNERS.iter().enumerate() {
        let f = [1.0 + c[0] * nat[0], 1.0 + c[1] * nat[1], 1.0 + c[2] * nat[2]];
        d[a] = [
            0.125 * c[0] * f[1] * f[2],
            0.125 * c[1] * f[0] * f[2],
            0.125 * c[2] * f[0] * f[1],
        ];
    }
    d
}

/// Strain-displacement map of a trilinear hexahedron at a natural point.
pub fn hex_b_matrix(coords: &[[f64; 3]; 8], nat: [f64; 3]) -> Result<(SMatrix<f64, 6, 24>, f64)> {
    let dn = hex_shape_derivatives(nat);
    let mut jac = nalgebra::Matrix3::<f64>::zeros();
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                jac[(i, j)] += dn[a][i] * coords[a][j];
            }
        }
    }
    let det = jac.determinant();
    if !(det > 0.0) {
        return Err(Error::Mesh(format!("non-positive Jacobian determinant {det:.3e}")));
    }
    let jinv = jac.try_inverse().ok_or_else(|| Error::Mesh("singular element Jacobian".into()))?;
    let mut b = SMatrix::<f64, 6, 24>::zeros();
    for a in 0..8 {
        let g = jinv * nalgebra::Vector3::new(dn[a][0], dn[a][1], dn[a][2]);
        let (bx, by, bz) = (g[0], g[1], g[2]);
        let c = 3 * a;
        b[(0, c)] = bx;
        b[(1, c + 1)] = by;
        b[(2, c + 2)] = bz;
        b[(3, c + 1)] = bz;
        b[(3, c + 2)] = by;
        b[(4, c)] = bz;
        b[(4, c + 2)] = bx;
        b[(5, c)] = by;
        b[(5, c + 1)] = bx;
    }
    Ok((b, det))
}

/// Strain-displacement map of a two-node bar; constant along the element.
pub fn bar_b_matrix(x0: f64, x1: f64) -> Result<(SMatrix<f64, 1, 2>, f64)> {
    let l = x1 - x0;
    if !(l > 0.0) {
        return Err(Error::Mesh(format!("bar element of length {l}")));
    }
    Ok((SMatrix::<f64, 1, 2>::new(-1.0 / l, 1.0 / l), 0.5 * l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPoint<const N: usize, const E: usize> {
    pub b: SMatrix<f64, N, E>,
    /// Quadrature weight × det J (× cross-section area for bars).
    pub wdet: f64,
    pub coord: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementKind {
    Bar { area: f64 },
    Hex8,
}

#[derive(Debug, Clone)]
pub struct Mesh<const N: usize, const E: usize> {
    pub kind: ElementKind,
    pub nodes: Vec<[f64; 3]>,
    pub dofs_per_node: usize,
    pub connectivity: Vec<Vec<usize>>,
    pub element_dofs: Vec<[usize; E]>,
    pub gp_per_element: usize,
    /// Element-major Gauss data.
    pub gauss: Vec<GaussPoint<N, E>>,
    /// Prescribed (dof, value).
    pub dirichlet: Vec<(usize, f64)>,
    /// External load vector at unit load factor.
    pub f_ref: DVector<f64>,
}

impl<const N: usize, const E: usize> Mesh<N, E> {
    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * self.dofs_per_node
    }

    pub fn n_gauss(&self) -> usize {
        self.gauss.len()
    }

    pub fn n_elements(&self) -> usize {
        self.element_dofs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_dofs();
        if self.element_dofs.iter().flatten().any(|d| *d >= n) {
            return Err(Error::Mesh("connectivity index out of range".into()));
        }
        if self.dirichlet.is_empty() {
            return Err(Error::Mesh("no Dirichlet constraint".into()));
        }
        if self.dirichlet.iter().any(|(d, v)| *d >= n || !v.is_finite()) {
            return Err(Error::Mesh("invalid Dirichlet constraint".into()));
        }
        if self.gauss.iter().any(|g| !(g.wdet > 0.0)) {
            return Err(Error::Mesh("degenerate element".into()));
        }
        if self.f_ref.len() != n {
            return Err(Error::Mesh("load vector size mismatch".into()));
        }
        Ok(())
    }

    /// Map dof → free index (None for constrained dofs) and the free count.
    pub fn free_map(&self) -> (Vec<Option<usize>>, usize) {
        let fixed: BTreeSet<usize> = self.dirichlet.iter().map(|(d, _)| *d).collect();
        let mut map = vec![None; self.n_dofs()];
        let mut k = 0;
        for (d, slot) in map.iter_mut().enumerate() {
            if !fixed.contains(&d) {
                *slot = Some(k);
                k += 1;
            }
        }
        (map, k)
    }

    /// Displacement vector with the prescribed values applied and zeros elsewhere.
    pub fn initial_displacement(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.n_dofs());
        for (d, v) in &self.dirichlet {
            u[*d] = *v;
        }
        u
    }

    fn gather(&self, e: usize, u: &DVector<f64>) -> SMatrix<f64, E, 1> {
        SMatrix::<f64, E, 1>::from_fn(|i, _| u[self.element_dofs[e][i]])
    }

    /// Strain at every Gauss point.
    pub fn strains(&self, u: &DVector<f64>) -> Vec<Vector<N>> {
        let mut out = Vec::with_capacity(self.n_gauss());
        for e in 0..self.n_elements() {
            let ue = self.gather(e, u);
            for g in 0..self.gp_per_element {
                out.push(self.gauss[e * self.gp_per_element + g].b * ue);
            }
        }
        out
    }

    /// ∫Bᵀv over the mesh for one stress-like vector per Gauss point.
    pub fn integrate(&self, v: &[Vector<N>]) -> DVector<f64> {
        let mut f = DVector::zeros(self.n_dofs());
        for e in 0..self.n_elements() {
            let mut fe = SMatrix::<f64, E, 1>::zeros();
            for g in 0..self.gp_per_element {
                let gp = &self.gauss[e * self.gp_per_element + g];
                fe += gp.b.transpose() * v[e * self.gp_per_element + g] * gp.wdet;
            }
            for (i, d) in self.element_dofs[e].iter().enumerate() {
                f[*d] += fe[i];
            }
        }
        f
    }

    /// R = f_int(σ) − λ·F_ref over all dofs; constrained rows hold reactions.
    pub fn assemble_residual(&self, stresses: &[Vector<N>], load_factor: f64) -> DVector<f64> {
        self.integrate(stresses) - &self.f_ref * load_factor
    }

    /// Coupling correction ∫Bᵀc with one stress-like vector per Gauss point.
    pub fn assemble_coupling_correction(&self, c: &[Vector<N>]) -> DVector<f64> {
        self.integrate(c)
    }

    pub fn element_stiffness(&self, e: usize, tangents: &[Matrix<N>]) -> SMatrix<f64, E, E> {
        let mut k = SMatrix::<f64, E, E>::zeros();
        for g in 0..self.gp_per_element {
            let idx = e * self.gp_per_element + g;
            let gp = &self.gauss[idx];
            k += gp.b.transpose() * tangents[idx] * gp.b * gp.wdet;
        }
        k
    }

    /// Full dense K over all dofs.
    pub fn assemble_tangent_dense(&self, tangents: &[Matrix<N>]) -> DMatrix<f64> {
        let n = self.n_dofs();
        let mut k = DMatrix::zeros(n, n);
        for e in 0..self.n_elements() {
            let ke = self.element_stiffness(e, tangents);
            for (i, di) in self.element_dofs[e].iter().enumerate() {
                for (j, dj) in self.element_dofs[e].iter().enumerate() {
                    k[(*di, *dj)] += ke[(i, j)];
                }
            }
        }
        k
    }

    /// Node closest to a point.
    pub fn nearest_node(&self, p: [f64; 3]) -> usize {
        nearest(self.nodes.iter().copied(), p)
    }

    /// Gauss point closest to a point.
    pub fn nearest_gauss(&self, p: [f64; 3]) -> usize {
        nearest(self.gauss.iter().map(|g| g.coord), p)
    }
}

fn nearest(points: impl Iterator<Item = [f64; 3]>, p: [f64; 3]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in points.enumerate() {
        let d = (0..3).map(|k| (q[k] - p[k]).powi(2)).sum::<f64>();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

impl Mesh<1, 2> {
    /// Uniform bar on [0, length] fixed at x = 0 with a point load `load` (N at unit
    /// load factor) on the far end.
    pub fn bar(length: f64, elements: usize, area: f64, load: f64) -> Result<Self> {
        if elements == 0 || !(length > 0.0) || !(area > 0.0) {
            return Err(Error::Mesh("bar needs positive length, area and element count".into()));
        }
        let nodes: Vec<[f64; 3]> =
            (0..=elements).map(|i| [length * i as f64 / elements as f64, 0.0, 0.0]).collect();
        let rule = QuadratureRule::line();
        let mut gauss = Vec::new();
        let mut connectivity = Vec::new();
        let mut element_dofs = Vec::new();
        for e in 0..elements {
            let (x0, x1) = (nodes[e][0], nodes[e + 1][0]);
            let (b, det) = bar_b_matrix(x0, x1)?;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * p[0];
                gauss.push(GaussPoint { b, wdet: w * det * area, coord: [x, 0.0, 0.0] });
            }
            connectivity.push(vec![e, e + 1]);
            element_dofs.push([e, e + 1]);
        }
        let mut f_ref = DVector::zeros(elements + 1);
        f_ref[elements] = load;
        let mesh = Mesh {
            kind: ElementKind::Bar { area },
            nodes,
            dofs_per_node: 1,
            connectivity,
            element_dofs,
            gp_per_element: rule.weights.len(),
            gauss,
            dirichlet: vec![(0, 0.0)],
            f_ref,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Support condition for a box face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// All three displacement components fixed.
    Clamped,
    /// Only the normal component fixed, plus the minimum extra constraints that
    /// remove rigid-body motion.
    Rollers,
}

/// Structured box [0,lx]×[0,ly]×[0,lz] of hexahedra.
#[derive(Debug, Clone)]
pub struct BoxGrid {
    pub dims: [f64; 3],
    pub divs: [usize; 3],
    /// Axes ordered from fastest- to slowest-varying node index.
    order: [usize; 3],
}

impl BoxGrid {
    pub fn new(dims: [f64; 3], divs: [usize; 3]) -> Result<Self> {
        if divs.iter().any(|d| *d == 0) || dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Mesh("box needs positive dimensions and divisions".into()));
        }
        let mut order = [0, 1, 2];
        // the axis with most divisions is numbered slowest to keep the bandwidth small
        order.sort_by_key(|a| (divs[*a], *a));
        Ok(BoxGrid { dims, divs, order })
    }

    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        let n = |a: usize| self.divs[a] + 1;
        let [f, m, s] = self.order;
        ijk[f] + n(f) * (ijk[m] + n(m) * ijk[s])
    }

    pub fn n_nodes(&self) -> usize {
        self.divs.iter().map(|d| d + 1).product()
    }

    fn coord(&self, ijk: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] * ijk[a] as f64 / self.divs[a] as f64)
    }

    /// Nodes on the face `axis = 0` (side false) or `axis = max` (side true).
    pub fn face_nodes(&self, axis: usize, far: bool) -> Vec<usize> {
        let mut out = Vec::new();
        let fixed = if far { self.divs[axis] } else { 0 };
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for i in 0..=self.divs[a1] {
            for j in 0..=self.divs[a2] {
                let mut ijk = [0; 3];
                ijk[axis] = fixed;
                ijk[a1] = i;
                ijk[a2] = j;
                out.push(self.node_index(ijk));
            }
        }
        out.sort_unstable();
        out
    }
}

impl Mesh<6, 24> {
    /// Hexahedral box without boundary conditions (add them with `support` and
    /// `traction`).
    pub fn hex_box(grid: &BoxGrid) -> Result<Self> {
        let mut nodes = vec![[0.0; 3]; grid.n_nodes()];
        for k in 0..=grid.divs[2] {
            for j in 0..=grid.divs[1] {
                for i in 0..=grid.divs[0] {
                    nodes[grid.node_index([i, j, k])] = grid.coord([i, j, k]);
                }
            }
        }
        let mut cells = Vec::new();
        let [f, m, s] = grid.order;
        for cs in 0..grid.divs[s] {
            for cm in 0..grid.divs[m] {
                for cf in 0..grid.divs[f] {
                    let mut base = [0; 3];
                    base[f] = cf;
                    base[m] = cm;
                    base[s] = cs;
                    let conn: Vec<usize> = HEX_CORNERS
                        .iter()
                        .map(|c| {
                            let off = c.map(|x| if x > 0.0 { 1 } else { 0 });
                            grid.node_index([base[0] + off[0], base[1] + off[1], base[2] + off[2]])
                        })
                        .collect();
                    cells.push(conn);
                }
            }
        }
        Self::from_cells(nodes, cells)
    }

    /// Hexahedral mesh from node coordinates and 8-node connectivity (corner order of
    /// `HEX_CORNERS`).
    pub fn from_cells(nodes: Vec<[f64; 3]>, cells: Vec<Vec<usize>>) -> Result<Self> {
        let rule = QuadratureRule::hex(2);
        let mut gauss = Vec::with_capacity(cells.len() * 8);
        let mut element_dofs = Vec::with_capacity(cells.len());
        for conn in &cells {
            if conn.len() != 8 || conn.iter().any(|n| *n >= nodes.len()) {
                return Err(Error::Mesh("hexahedron connectivity must list 8 valid nodes".into()));
            }
            let coords: [[f64; 3]; 8] = std::array::from_fn(|a| nodes[conn[a]]);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let (b, det) = hex_b_matrix(&coords, *p)?;
                let sh = hex_shape(*p);
                let coord = [0, 1, 2].map(|k| (0..8).map(|a| sh[a] * coords[a][k]).sum());
                gauss.push(GaussPoint { b, wdet: w * det, coord });
            }
            element_dofs.push(std::array::from_fn(|i| 3 * conn[i / 3] + i % 3));
        }
        let n = nodes.len() * 3;
        Ok(Mesh {
            kind: ElementKind::Hex8,
            nodes,
            dofs_per_node: 3,
            connectivity: cells,
            element_dofs,
            gp_per_element: 8,
            gauss,
            dirichlet: Vec::new(),
            f_ref: DVector::zeros(n),
        })
    }

    /// Constrains a face of a structured box.
    pub fn support(&mut self, grid: &BoxGrid, axis: usize, far: bool, kind: Support) {
        let face = grid.face_nodes(axis, far);
        let mut fixed: BTreeSet<usize> = self.dirichlet.iter().map(|(d, _)| *d).collect();
        match kind {
            Support::Clamped => {
                for n in &face {
                    for c in 0..3 {
                        fixed.insert(3 * n + c);
                    }
                }
            }
            Support::Rollers => {
                for n in &face {
                    fixed.insert(3 * n + axis);
                }
                // pin one corner fully and stop the in-plane rotation at another
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut ijk = [0; 3];
                ijk[axis] = if far { grid.divs[axis] } else { 0 };
                let c0 = grid.node_index(ijk);
                fixed.insert(3 * c0 + a1);
                fixed.insert(3 * c0 + a2);
                ijk[a1] = grid.divs[a1];
                fixed.insert(3 * grid.node_index(ijk) + a2);
            }
        }
        self.dirichlet = fixed.into_iter().map(|d| (d, 0.0)).collect();
    }

    /// Adds consistent nodal forces of a uniform traction (Pa) on a box face.
    pub fn traction(&mut self, grid: &BoxGrid, axis: usize, far: bool, t: [f64; 3]) {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        let fixed = if far { grid.divs[axis] } else { 0 };
        let (p, w) = QuadratureRule::gauss_1d(2);
        let h1 = grid.dims[a1] / grid.divs[a1] as f64;
        let h2 = grid.dims[a2] / grid.divs[a2] as f64;
        for i in 0..grid.divs[a1] {
            for j in 0..grid.divs[a2] {
                let corner = |di: usize, dj: usize| {
                    let mut ijk = [0; 3];
                    ijk[axis] = fixed;
                    ijk[a1] = i + di;
                    ijk[a2] = j + dj;
                    grid.node_index(ijk)
                };
                let quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                let nat = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
                for (gi, wi) in p.iter().zip(&w) {
                    for (gj, wj) in p.iter().zip(&w) {
                        let da = wi * wj * 0.25 * h1 * h2;
                        for (a, node) in quad.iter().enumerate() {
                            let n = 0.25 * (1.0 + nat[a][0] * gi) * (1.0 + nat[a][1] * gj);
                            for c in 0..3 {
                                self.f_ref[3 * node + c] += n * t[c] * da;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Free-dof stiffness with a fixed sparsity pattern, refilled every iteration and
/// solved by sparse Cholesky (dense LU if the matrix is not positive definite).
pub struct SparseSystem<const E: usize> {
    free: Vec<Option<usize>>,
    n_free: usize,
    pattern: SparsityPattern,
    /// Per element, E×E positions into the value array (usize::MAX when constrained).
    scatter: Vec<Vec<usize>>,
    values: Vec<f64>,
    cholesky: Option<CscCholesky<f64>>,
}

impl<const E: usize> SparseSystem<E> {
    pub fn new<const N: usize>(mesh: &Mesh<N, E>) -> Result<Self> {
        let (free, n_free) = mesh.free_map();
        if n_free == 0 {
            return Err(Error::Mesh("no free degrees of freedom".into()));
        }
        let mut cols: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_free];
        for dofs in &mesh.element_dofs {
            for i in dofs {
                if let Some(fi) = free[*i] {
                    for j in dofs {
                        if let Some(fj) = free[*j] {
                            cols[fj].insert(fi);
                        }
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(n_free + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for c in &cols {
            indices.extend(c.iter().copied());
            offsets.push(indices.len());
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(n_free, n_free, offsets.clone(), indices.clone())
            .map_err(|e| Error::LinearSolve(format!("pattern: {e}")))?;
        let scatter = mesh
            .element_dofs
            .iter()
            .map(|dofs| {
                let mut s = Vec::with_capacity(E * E);
                for i in dofs {
                    for j in dofs {
                        s.push(match (free[*i], free[*j]) {
                            (Some(r), Some(c)) => {
                                let col = &indices[offsets[c]..offsets[c + 1]];
                                offsets[c] + col.binary_search(&r).expect("pattern holds every pair")
                            }
                            _ => usize::MAX,
                        });
                    }
                }
                s
            })
            .collect();
        let nnz = indices.len();
        Ok(SparseSystem { free, n_free, pattern, scatter, values: vec![0.0; nnz], cholesky: None })
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn free_map(&self) -> &[Option<usize>] {
        &self.free
    }

    /// K_ff = Σ ∫BᵀLB over free dofs.
    pub fn assemble<const N: usize>(&mut self, mesh: &Mesh<N, E>, tangents: &[Matrix<N>]) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        for e in 0..mesh.n_elements() {
            let ke = mesh.element_stiffness(e, tangents);
            let sc = &self.scatter[e];
            for i in 0..E {
                for j in 0..E {
                    let pos = sc[i * E + j];
                    if pos != usize::MAX {
                        self.values[pos] += ke[(i, j)];
                    }
                }
            }
        }
    }

    pub fn matrix(&self) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values(self.pattern.clone(), self.values.clone())
            .expect("values match pattern")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from(&self.matrix())
    }

    /// Restricts a full-dof vector to the free dofs.
    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_free);
        for (d, f) in self.free.iter().enumerate() {
            if let Some(i) = f {
                r[*i] = full[d];
            }
        }
        r
    }

    /// Adds a free-dof vector into a full-dof vector.
    pub fn expand_add(&self, full: &mut DVector<f64>, free: &DVector<f64>) {
        for (d, f) in self.free.iter().enumerate() {
            if let Some(i) = f {
                full[d] += free[*i];
            }
        }
    }

    /// Solves K_ff x = rhs with the values last assembled.
    pub fn solve(&mut self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let chol = match self.cholesky.take() {
            Some(mut c) => c.refactor(&self.values).ok().map(|_| c),
            None => CscCholesky::factor(&self.matrix()).ok(),
        };
        if let Some(c) = chol {
            let x = c.solve(rhs);
            self.cholesky = Some(c);
            let x = DVector::from_column_slice(x.as_slice());
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        self.to_dense()
            .lu()
            .solve(rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::LinearSolve("singular stiffness".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{Material, MaterialParams};
    use crate::voigt::{Mat6, Voigt6};

    fn unit_cube() -> (BoxGrid, HexMesh) {
        let g = BoxGrid::new([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        let m = HexMesh::hex_box(&g).unwrap();
        (g, m)
    }

    fn elastic6() -> Mat6 {
        let mat: Material<6> = Material::new(MaterialParams::default()).unwrap();
        mat.stiffness(mat.s_a)
    }

    #[test]
    fn quadrature_weights_sum_to_reference_volume() {
        assert!((QuadratureRule::line().weights.iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert!((QuadratureRule::hex(2).weights.iter().sum::<f64>() - 8.0).abs() < 1e-14);
        assert!((QuadratureRule::hex(3).weights.iter().sum::<f64>() - 8.0).abs() < 1e-14);
    }

    #[test]
    fn b_matrix_examples() {
        let (_, m) = unit_cube();
        let mut u = DVector::zeros(m.n_dofs());
        for n in 0..m.nodes.len() {
            u[3 * n] = 0.3;
            u[3 * n + 1] = -0.2;
            u[3 * n + 2] = 0.7;
        }
        for e in m.strains(&u) {
            assert!(e.norm() < 1e-14);
        }
        let mut u = DVector::zeros(m.n_dofs());
        for (n, x) in m.nodes.iter().enumerate() {
            u[3 * n] = 1e-3 * x[0];
        }
        for e in m.strains(&u) {
            assert!((e - Voigt6::new(1e-3, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
        }
        let (b, det) = bar_b_matrix(0.2, 0.3).unwrap();
        assert!((b[0] + 10.0).abs() < 1e-12 && (b[1] - 10.0).abs() < 1e-12);
        assert!((det - 0.05).abs() < 1e-15);
        assert!(bar_b_matrix(0.3, 0.2).is_err());
        let mut flipped = HEX_CORNERS;
        flipped.swap(0, 4);
        flipped.swap(1, 5);
        flipped.swap(2, 6);
        flipped.swap(3, 7);
        assert!(hex_b_matrix(&flipped, [0.0; 3]).is_err());
    }

    #[test]
    fn shear_rows_use_engineering_strain() {
        let (_, m) = unit_cube();
        let mut u = DVector::zeros(m.n_dofs());
        // u_x = γ y gives γ_xy = γ
        for (n, x) in m.nodes.iter().enumerate() {
            u[3 * n] = 2e-3 * x[1];
        }
        for e in m.strains(&u) {
            assert!((e - Voigt6::new(0.0, 0.0, 0.0, 0.0, 0.0, 2e-3)).norm() < 1e-15);
        }
    }

    #[test]
    fn residual_examples() {
        let bar = BarMesh::bar(1.0, 10, 0.1, 5e6).unwrap();
        let r = bar.assemble_residual(&vec![Vector::<1>::zeros(); bar.n_gauss()], 0.0);
        assert_eq!(r.norm(), 0.0);
        let sigma = vec![Vector::<1>::new(5e6 / 0.1); bar.n_gauss()];
        let r = bar.assemble_residual(&sigma, 1.0);
        for d in 1..bar.n_dofs() {
            assert!(r[d].abs() < 1e-6);
        }
        assert!((r[0] + 5e6).abs() < 1e-6);
    }

    #[test]
    fn uniform_stress_balances_face_tractions() {
        // f_int of a uniform σ equals the surface integral of σ·n on every face
        let g = BoxGrid::new([1.0, 2.0, 1.5], [2, 3, 2]).unwrap();
        let m = HexMesh::hex_box(&g).unwrap();
        let s = Voigt6::new(3e6, -1e6, 2e6, 5e5, -7e5, 4e5);
        let f_int = m.integrate(&vec![s; m.n_gauss()]);
        let mut ext = HexMesh::hex_box(&g).unwrap();
        let t = |n: [f64; 3]| {
            [
                s[0] * n[0] + s[5] * n[1] + s[4] * n[2],
                s[5] * n[0] + s[1] * n[1] + s[3] * n[2],
                s[4] * n[0] + s[3] * n[1] + s[2] * n[2],
            ]
        };
        for axis in 0..3 {
            for far in [false, true] {
                let mut n = [0.0; 3];
                n[axis] = if far { 1.0 } else { -1.0 };
                ext.traction(&g, axis, far, t(n));
            }
        }
        assert!((f_int - &ext.f_ref).norm() < 1e-8 * ext.f_ref.norm());
    }

    #[test]
    fn bar_stiffness_matches_hand_formula() {
        let bar = BarMesh::bar(1.0, 10, 0.1, 1.0).unwrap();
        let l = vec![Matrix::<1>::new(32.5e9); bar.n_gauss()];
        let k = bar.assemble_tangent_dense(&l);
        assert!((k[(10, 10)] - 3.25e10).abs() < 1e-3);
        assert!((k[(5, 5)] - 6.5e10).abs() < 1e-3);
        assert!((k[(5, 6)] + 3.25e10).abs() < 1e-3);
    }

    #[test]
    fn elastic_cube_has_six_rigid_modes() {
        let (_, m) = unit_cube();
        let d = elastic6();
        let k = m.assemble_tangent_dense(&vec![d; m.n_gauss()]);
        assert!((&k - k.transpose()).norm() < 1e-10 * k.norm());
        let eig = k.symmetric_eigenvalues();
        let max = eig.max();
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10 * max).count();
        assert_eq!(zeros, 6);
    }

    #[test]
    fn two_point_rule_integrates_the_cube_stiffness_exactly() {
        let (_, m) = unit_cube();
        let d = elastic6();
        let k2 = m.assemble_tangent_dense(&vec![d; m.n_gauss()]);
        let coords: [[f64; 3]; 8] = std::array::from_fn(|a| m.nodes[m.connectivity[0][a]]);
        let rule = QuadratureRule::hex(3);
        let mut k3 = DMatrix::zeros(24, 24);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let (b, det) = hex_b_matrix(&coords, *p).unwrap();
            let ke = b.transpose() * d * b * (w * det);
            for i in 0..24 {
                for j in 0..24 {
                    k3[(m.element_dofs[0][i], m.element_dofs[0][j])] += ke[(i, j)];
                }
            }
        }
        assert!((&k2 - &k3).norm() < 1e-10 * k3.norm());
    }

    #[test]
    fn distorted_patch_reproduces_constant_stress() {
        // 2×2×2 box with interior node moved; linear field prescribed on the boundary
        let g = BoxGrid::new([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let mut m0 = HexMesh::hex_box(&g).unwrap();
        let centre = g.node_index([1, 1, 1]);
        m0.nodes[centre] = [0.56, 0.43, 0.52];
        let mut m = HexMesh::from_cells(m0.nodes.clone(), m0.connectivity.clone()).unwrap();
        let lin = |x: [f64; 3]| {
            [
                1e-3 * x[0] + 2e-4 * x[1] - 1e-4 * x[2],
                -3e-4 * x[0] + 5e-4 * x[1] + 2e-4 * x[2],
                1e-4 * x[0] - 2e-4 * x[1] + 4e-4 * x[2],
            ]
        };
        let mut dir = Vec::new();
        for (n, x) in m.nodes.iter().enumerate() {
            if n != centre {
                let v = lin(*x);
                for c in 0..3 {
                    dir.push((3 * n + c, v[c]));
                }
            }
        }
        m.dirichlet = dir;
        let d = elastic6();
        let tangents = vec![d; m.n_gauss()];
        let mut sys = SparseSystem::new(&m).unwrap();
        sys.assemble(&m, &tangents);
        let mut u = m.initial_displacement();
        let stresses: Vec<Voigt6> = m.strains(&u).iter().map(|e| d * e).collect();
        let r = sys.restrict(&m.assemble_residual(&stresses, 0.0));
        let du = sys.solve(&(-r)).unwrap();
        sys.expand_add(&mut u, &du);
        let exact = lin(m.nodes[centre]);
        for c in 0..3 {
            assert!((u[3 * centre + c] - exact[c]).abs() < 1e-12);
        }
        let s0 = d * m.strains(&u)[0];
        for e in m.strains(&u) {
            assert!((d * e - s0).norm() < 1e-8 * s0.norm());
        }
    }

    #[test]
    fn residual_is_additive_over_elements() {
        let g = BoxGrid::new([1.0, 1.0, 2.0], [1, 1, 2]).unwrap();
        let m = HexMesh::hex_box(&g).unwrap();
        let s: Vec<Voigt6> = (0..m.n_gauss()).map(|i| Voigt6::repeat(i as f64 * 1e5)).collect();
        let total = m.integrate(&s);
        let mut a = s.clone();
        let mut b = s.clone();
        for i in 0..m.n_gauss() {
            if i < 8 {
                b[i] = Voigt6::zeros();
            } else {
                a[i] = Voigt6::zeros();
            }
        }
        assert!((m.integrate(&a) + m.integrate(&b) - total).norm() < 1e-6);
    }

    #[test]
    fn sparse_solve_matches_dense() {
        let g = BoxGrid::new([1.0, 5.0, 1.0], [2, 10, 2]).unwrap();
        let mut m = HexMesh::hex_box(&g).unwrap();
        m.support(&g, 1, false, Support::Clamped);
        m.traction(&g, 1, true, [0.0, 1.2e8, 0.0]);
        m.validate().unwrap();
        let d = elastic6();
        let tangents = vec![d; m.n_gauss()];
        let mut sys = SparseSystem::new(&m).unwrap();
        sys.assemble(&m, &tangents);
        let rhs = sys.restrict(&m.f_ref);
        let x = sys.solve(&rhs).unwrap();
        let dense = sys.to_dense().lu().solve(&rhs).unwrap();
        assert!((&x - &dense).norm() < 1e-10 * dense.norm());
        let kd = m.assemble_tangent_dense(&tangents);
        let (free, _) = m.free_map();
        let idx: Vec<usize> = (0..m.n_dofs()).filter(|d| free[*d].is_some()).collect();
        let sub = kd.select_rows(&idx).select_columns(&idx);
        assert!((sub - sys.to_dense()).norm() < 1e-10 * sys.to_dense().norm());
        // total applied load is traction × face area
        let fy: f64 = (0..m.nodes.len()).map(|n| m.f_ref[3 * n + 1]).sum();
        assert!((fy - 1.2e8).abs() < 1e-3);
    }

    #[test]
    fn rollers_remove_rigid_modes() {
        let g = BoxGrid::new([1.0, 2.0, 1.0], [1, 2, 1]).unwrap();
        let mut m = HexMesh::hex_box(&g).unwrap();
        m.support(&g, 1, false, Support::Rollers);
        let d = elastic6();
        let mut sys = SparseSystem::new(&m).unwrap();
        sys.assemble(&m, &vec![d; m.n_gauss()]);
        let eig = sys.to_dense().symmetric_eigenvalues();
        assert!(eig.min() > 1e-8 * eig.max());
    }
}
