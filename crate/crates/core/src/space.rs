//! Discontinuous piecewise-polynomial spaces P_N on a mesh: nodal Lagrange
//! bases, projection/interpolation, traces, broken L2 and energy norms, and
//! the restriction of discrete functions to axis-parallel rays that the
//! nonlocal assembly consumes.

use crate::error::{Error, Result};
use crate::mesh::{Axis, Face, Mesh, RaySegmentation};
use crate::quadrature::{gauss_legendre, triangle_rule, TanhSinh};
use crate::tempered::{PiecewisePoly1D, Side, TemperedDeriv, TemperedParams};
use nalgebra::DMatrix;
use statrs::function::gamma::{gamma, gamma_li};
use std::collections::HashMap;
use std::rc::Rc;

/// fraction of a segment next to its endpoints excluded from singular
/// outer quadrature; the analytic kernel split keeps the remainder small
const EDGE_CUTOFF: f64 = 1e-13;

#[derive(Debug, Clone, Copy)]
struct AffineMap {
    origin: [f64; 2],
    inv: [[f64; 2]; 2],
    det: f64,
}

/// Uniform-degree DG space on a mesh; one disjoint block of nodal degrees
/// of freedom per element.
#[derive(Debug)]
pub struct DgSpace {
    mesh: Mesh,
    degree: usize,
    elems: Vec<usize>,
    index: HashMap<usize, usize>,
    exps: Vec<(usize, usize)>,
    /// coeff[(m, j)] = coefficient of reference monomial m in basis l_j
    coeff: DMatrix<f64>,
    ref_nodes: Vec<[f64; 2]>,
    maps: Vec<AffineMap>,
}

impl DgSpace {
    pub fn new(mesh: Mesh, degree: usize) -> Result<Self> {
        if !(1..=4).contains(&degree) {
            return Err(Error::InvalidInput(
                "polynomial degree must lie in [1, 4]".into(),
            ));
        }
        let dim = mesh.dim();
        let n = degree;
        let mut exps = Vec::new();
        let mut ref_nodes = Vec::new();
        if dim == 1 {
            for p in 0..=n {
                exps.push((p, 0));
                ref_nodes.push([p as f64 / n as f64, 0.0]);
            }
        } else {
            for q in 0..=n {
                for p in 0..=(n - q) {
                    exps.push((p, q));
                    ref_nodes.push([p as f64 / n as f64, q as f64 / n as f64]);
                }
            }
        }
        let np = exps.len();
        let mut v = DMatrix::zeros(np, np);
        for (i, node) in ref_nodes.iter().enumerate() {
            for (m, &(p, q)) in exps.iter().enumerate() {
                v[(i, m)] = node[0].powi(p as i32) * node[1].powi(q as i32);
            }
        }
        let coeff = v
            .try_inverse()
            .ok_or_else(|| Error::Internal("singular nodal Vandermonde".into()))?;
        let elems = mesh.alive_elements();
        let index = elems.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let maps = elems
            .iter()
            .map(|&e| {
                let c = mesh.elem_coords(e);
                if dim == 1 {
                    let h = c[1][0] - c[0][0];
                    AffineMap {
                        origin: c[0],
                        inv: [[1.0 / h, 0.0], [0.0, 1.0]],
                        det: h,
                    }
                } else {
                    let j = [
                        [c[1][0] - c[0][0], c[2][0] - c[0][0]],
                        [c[1][1] - c[0][1], c[2][1] - c[0][1]],
                    ];
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    let inv = [
                        [j[1][1] / det, -j[0][1] / det],
                        [-j[1][0] / det, j[0][0] / det],
                    ];
                    AffineMap {
                        origin: c[0],
                        inv,
                        det,
                    }
                }
            })
            .collect();
        Ok(Self {
            mesh,
            degree,
            elems,
            index,
            exps,
            coeff,
            ref_nodes,
            maps,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// local basis size per element
    pub fn np(&self) -> usize {
        self.exps.len()
    }

    pub fn num_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.elems.len() * self.np()
    }

    /// mesh element ids in local order
    pub fn elem_ids(&self) -> &[usize] {
        &self.elems
    }

    pub fn local_of(&self, mesh_elem: usize) -> Option<usize> {
        self.index.get(&mesh_elem).copied()
    }

    pub fn dof(&self, local_elem: usize, j: usize) -> usize {
        local_elem * self.np() + j
    }

    fn to_ref(&self, k: usize, x: [f64; 2]) -> [f64; 2] {
        let m = &self.maps[k];
        let d = [x[0] - m.origin[0], x[1] - m.origin[1]];
        [
            m.inv[0][0] * d[0] + m.inv[0][1] * d[1],
            m.inv[1][0] * d[0] + m.inv[1][1] * d[1],
        ]
    }

    /// physical coordinates of the element's nodal points
    pub fn node_coords(&self, k: usize) -> Vec<[f64; 2]> {
        let m = &self.maps[k];
        let c = self.mesh.elem_coords(self.elems[k]);
        self.ref_nodes
            .iter()
            .map(|r| {
                if self.mesh.dim() == 1 {
                    [m.origin[0] + m.det * r[0], 0.0]
                } else {
                    [
                        c[0][0] + (c[1][0] - c[0][0]) * r[0] + (c[2][0] - c[0][0]) * r[1],
                        c[0][1] + (c[1][1] - c[0][1]) * r[0] + (c[2][1] - c[0][1]) * r[1],
                    ]
                }
            })
            .collect()
    }

    /// all np basis values at a physical point of element k
    pub fn basis_at(&self, k: usize, x: [f64; 2]) -> Vec<f64> {
        let r = self.to_ref(k, x);
        let np = self.np();
        let mono: Vec<f64> = self
            .exps
            .iter()
            .map(|&(p, q)| r[0].powi(p as i32) * r[1].powi(q as i32))
            .collect();
        (0..np)
            .map(|j| (0..np).map(|m| self.coeff[(m, j)] * mono[m]).sum())
            .collect()
    }

    /// physical gradients of all basis functions at a point of element k
    pub fn basis_grad_at(&self, k: usize, x: [f64; 2]) -> Vec<[f64; 2]> {
        let r = self.to_ref(k, x);
        let np = self.np();
        let inv = &self.maps[k].inv;
        let dmono: Vec<[f64; 2]> = self
            .exps
            .iter()
            .map(|&(p, q)| {
                let dr = if p == 0 {
                    0.0
                } else {
                    p as f64 * r[0].powi(p as i32 - 1) * r[1].powi(q as i32)
                };
                let ds = if q == 0 {
                    0.0
                } else {
                    q as f64 * r[0].powi(p as i32) * r[1].powi(q as i32 - 1)
                };
                // chain rule: grad_x = J^{-T} grad_ref
                [
                    inv[0][0] * dr + inv[1][0] * ds,
                    inv[0][1] * dr + inv[1][1] * ds,
                ]
            })
            .collect();
        (0..np)
            .map(|j| {
                let mut g = [0.0, 0.0];
                for m in 0..np {
                    g[0] += self.coeff[(m, j)] * dmono[m][0];
                    g[1] += self.coeff[(m, j)] * dmono[m][1];
                }
                g
            })
            .collect()
    }

    /// volume quadrature (physical points, weights) of degree 2N+4
    pub fn volume_quad(&self, k: usize) -> Vec<([f64; 2], f64)> {
        let m = &self.maps[k];
        if self.mesh.dim() == 1 {
            let rule = gauss_legendre(self.degree + 3);
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| ([m.origin[0] + m.det * t, 0.0], w * m.det))
                .collect()
        } else {
            let c = self.mesh.elem_coords(self.elems[k]);
            triangle_rule(2 * self.degree + 4)
                .points
                .iter()
                .map(|&(r, s, w)| {
                    (
                        [
                            c[0][0] + (c[1][0] - c[0][0]) * r + (c[2][0] - c[0][0]) * s,
                            c[0][1] + (c[1][1] - c[0][1]) * r + (c[2][1] - c[0][1]) * s,
                        ],
                        w * m.det.abs(),
                    )
                })
                .collect()
        }
    }

    /// face quadrature (physical points, weights): GL of degree 2N+3 along
    /// an edge; a unit-weight point in 1D
    pub fn face_quad(&self, face: &Face) -> Vec<([f64; 2], f64)> {
        if self.mesh.dim() == 1 {
            vec![(self.mesh.vertex(face.vertices[0]), 1.0)]
        } else {
            let a = self.mesh.vertex(face.vertices[0]);
            let b = self.mesh.vertex(face.vertices[1]);
            let rule = gauss_legendre(self.degree + 2);
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| {
                    (
                        [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t],
                        w * face.length,
                    )
                })
                .collect()
        }
    }

    /// Restriction of all basis functions of element k to the axis-parallel
    /// line through `ordinate`, as coefficient vectors in powers of
    /// (t - t0) where t is the running coordinate.
    pub fn line_poly(&self, k: usize, axis: Axis, ordinate: f64, t0: f64) -> Vec<Vec<f64>> {
        let m = &self.maps[k];
        let n = self.degree;
        // reference coordinates along the line: r(u) = r0 + ru*u etc.
        let (r0, ru, s0, su) = if self.mesh.dim() == 1 {
            ((t0 - m.origin[0]) * m.inv[0][0], m.inv[0][0], 0.0, 0.0)
        } else {
            let d = match axis {
                Axis::X => [t0 - m.origin[0], ordinate - m.origin[1]],
                Axis::Y => [ordinate - m.origin[0], t0 - m.origin[1]],
            };
            let r0 = m.inv[0][0] * d[0] + m.inv[0][1] * d[1];
            let s0 = m.inv[1][0] * d[0] + m.inv[1][1] * d[1];
            match axis {
                Axis::X => (r0, m.inv[0][0], s0, m.inv[1][0]),
                Axis::Y => (r0, m.inv[0][1], s0, m.inv[1][1]),
            }
        };
        // powers of the two linear forms, as coefficient vectors
        let powers = |c0: f64, c1: f64| -> Vec<Vec<f64>> {
            let mut out = vec![vec![1.0]];
            for p in 1..=n {
                let prev = &out[p - 1];
                let mut next = vec![0.0; p + 1];
                for (i, &a) in prev.iter().enumerate() {
                    next[i] += a * c0;
                    next[i + 1] += a * c1;
                }
                out.push(next);
            }
            out
        };
        let rp = powers(r0, ru);
        let sp = powers(s0, su);
        let np = self.np();
        let mono_polys: Vec<Vec<f64>> = self
            .exps
            .iter()
            .map(|&(p, q)| {
                let mut c = vec![0.0; p + q + 1];
                for (i, &a) in rp[p].iter().enumerate() {
                    for (j, &b) in sp[q].iter().enumerate() {
                        c[i + j] += a * b;
                    }
                }
                c
            })
            .collect();
        (0..np)
            .map(|j| {
                let mut c = vec![0.0; n + 1];
                for m in 0..np {
                    let w = self.coeff[(m, j)];
                    if w != 0.0 {
                        for (i, &a) in mono_polys[m].iter().enumerate() {
                            c[i] += w * a;
                        }
                    }
                }
                c
            })
            .collect()
    }

    /// Element-wise L2 projection of a scalar field.
    pub fn l2_project<F: Fn([f64; 2]) -> f64>(self: &Rc<Self>, f: F) -> Result<DgFunction> {
        let np = self.np();
        // reference mass matrix is shared by all elements (affine maps)
        let quad = self.ref_quad();
        let mut mass = DMatrix::zeros(np, np);
        for &(r, w) in &quad {
            let b = self.ref_basis_at(r);
            for i in 0..np {
                for j in 0..np {
                    mass[(i, j)] += w * b[i] * b[j];
                }
            }
        }
        let lu = mass.lu();
        let mut coeffs = vec![0.0; self.num_dofs()];
        for k in 0..self.num_elems() {
            let mut rhs = nalgebra::DVector::zeros(np);
            for &(r, w) in &quad {
                let x = self.from_ref(k, r);
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite field sample at ({}, {})",
                        x[0], x[1]
                    )));
                }
                let b = self.ref_basis_at(r);
                for i in 0..np {
                    rhs[i] += w * b[i] * v;
                }
            }
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::SolverFailure("projection mass solve".into()))?;
            coeffs[k * np..(k + 1) * np].copy_from_slice(sol.as_slice());
        }
        Ok(DgFunction {
            space: Rc::clone(self),
            coeffs,
        })
    }

    /// Nodal interpolant of a scalar field.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(self: &Rc<Self>, f: F) -> Result<DgFunction> {
        let np = self.np();
        let mut coeffs = vec![0.0; self.num_dofs()];
        for k in 0..self.num_elems() {
            for (j, x) in self.node_coords(k).into_iter().enumerate() {
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite field sample at ({}, {})",
                        x[0], x[1]
                    )));
                }
                coeffs[k * np + j] = v;
            }
        }
        Ok(DgFunction {
            space: Rc::clone(self),
            coeffs,
        })
    }

    fn ref_quad(&self) -> Vec<([f64; 2], f64)> {
        if self.mesh.dim() == 1 {
            let rule = gauss_legendre(self.degree + 3);
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| ([t, 0.0], w))
                .collect()
        } else {
            triangle_rule(2 * self.degree + 4)
                .points
                .iter()
                .map(|&(r, s, w)| ([r, s], w))
                .collect()
        }
    }

    fn ref_basis_at(&self, r: [f64; 2]) -> Vec<f64> {
        let np = self.np();
        let mono: Vec<f64> = self
            .exps
            .iter()
            .map(|&(p, q)| r[0].powi(p as i32) * r[1].powi(q as i32))
            .collect();
        (0..np)
            .map(|j| (0..np).map(|m| self.coeff[(m, j)] * mono[m]).sum())
            .collect()
    }

    fn from_ref(&self, k: usize, r: [f64; 2]) -> [f64; 2] {
        let m = &self.maps[k];
        if self.mesh.dim() == 1 {
            [m.origin[0] + m.det * r[0], 0.0]
        } else {
            let c = self.mesh.elem_coords(self.elems[k]);
            [
                c[0][0] + (c[1][0] - c[0][0]) * r[0] + (c[2][0] - c[0][0]) * r[1],
                c[0][1] + (c[1][1] - c[0][1]) * r[0] + (c[2][1] - c[0][1]) * r[1],
            ]
        }
    }
}

/// A function in a DG space: nodal coefficients, one block per element.
#[derive(Debug, Clone)]
pub struct DgFunction {
    pub space: Rc<DgSpace>,
    pub coeffs: Vec<f64>,
}

impl DgFunction {
    pub fn zero(space: &Rc<DgSpace>) -> Self {
        Self {
            space: Rc::clone(space),
            coeffs: vec![0.0; space.num_dofs()],
        }
    }

    /// value inside local element k (exact polynomial evaluation)
    pub fn eval_in(&self, k: usize, x: [f64; 2]) -> f64 {
        let np = self.space.np();
        self.space
            .basis_at(k, x)
            .iter()
            .zip(&self.coeffs[k * np..(k + 1) * np])
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn grad_in(&self, k: usize, x: [f64; 2]) -> [f64; 2] {
        let np = self.space.np();
        let mut g = [0.0, 0.0];
        for (gb, &c) in self
            .space
            .basis_grad_at(k, x)
            .iter()
            .zip(&self.coeffs[k * np..(k + 1) * np])
        {
            g[0] += gb[0] * c;
            g[1] += gb[1] * c;
        }
        g
    }

    pub fn axpy(&mut self, a: f64, other: &DgFunction) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    /// trace of the function along a ray, as one piecewise polynomial
    pub fn ray_poly(&self, seg: &RaySegmentation) -> PiecewisePoly1D {
        let np = self.space.np();
        let mut breaks = Vec::with_capacity(seg.segments.len() + 1);
        let mut coeffs = Vec::with_capacity(seg.segments.len());
        for s in &seg.segments {
            let k = self.space.local_of(s.element).expect("segment element in space");
            let polys = self.space.line_poly(k, seg.axis, seg.ordinate, s.start);
            let mut c = vec![0.0; self.space.degree() + 1];
            for (j, p) in polys.iter().enumerate() {
                let w = self.coeffs[k * np + j];
                for (i, &a) in p.iter().enumerate() {
                    c[i] += w * a;
                }
            }
            breaks.push(s.start);
            coeffs.push(c);
        }
        breaks.push(seg.segments.last().expect("nonempty ray").end);
        PiecewisePoly1D::new(breaks, coeffs).expect("ray segments are ordered")
    }

    /// sqrt of sum over all faces (boundary included) of the squared jump
    pub fn jump_norm_sq(&self) -> f64 {
        let mesh = self.space.mesh();
        let mut total = 0.0;
        for face in mesh.faces() {
            let k1 = self.space.local_of(face.elems.0).unwrap();
            let k2 = face.elems.1.map(|e| self.space.local_of(e).unwrap());
            for (x, w) in self.space.face_quad(&face) {
                let t1 = self.eval_in(k1, x);
                let jump = match k2 {
                    Some(k2) => t1 - self.eval_in(k2, x),
                    None => t1,
                };
                total += w * jump * jump;
            }
        }
        total
    }

    /// Broken energy norm: left-sided tempered seminorm of order alpha/2
    /// in x (Riemann-Liouville), order beta/2 in y (Caputo), plus the jump
    /// term over all faces.
    pub fn energy_norm(&self, params: &TemperedParams) -> Result<f64> {
        let mut total = self.jump_norm_sq();
        if self.space.mesh().dim() == 1 {
            let ray = self.space.mesh().ray_segments(Axis::X, 0.0)?;
            let poly = self.ray_poly(&ray);
            total +=
                line_fractional_seminorm_sq(&poly, 0.5 * params.alpha, params.lambda, true)?;
        } else {
            total += self.transverse_seminorm_sq(Axis::X, 0.5 * params.alpha, params.lambda, true)?;
            total +=
                self.transverse_seminorm_sq(Axis::Y, 0.5 * params.beta, params.lambda, false)?;
        }
        Ok(total.sqrt())
    }

    /// integral over the domain of |D u|^2 where D is the left tempered
    /// derivative along `axis`, via strip-wise transverse quadrature
    fn transverse_seminorm_sq(
        &self,
        axis: Axis,
        mu: f64,
        lambda: f64,
        riemann_liouville: bool,
    ) -> Result<f64> {
        let mesh = self.space.mesh();
        let strips = transverse_strips(mesh, axis);
        let rule = gauss_legendre(6);
        let mut total = 0.0;
        for w in strips.windows(2) {
            let (y0, y1) = (w[0], w[1]);
            if y1 - y0 < 1e-14 * mesh.max_diameter() {
                continue;
            }
            for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
                let ray = ray_with_jitter(mesh, axis, y0 + (y1 - y0) * t)?;
                let poly = self.ray_poly(&ray);
                total += wt
                    * (y1 - y0)
                    * line_fractional_seminorm_sq(&poly, mu, lambda, riemann_liouville)?;
            }
        }
        Ok(total)
    }

    /// jump and average of the function at a point of a face, following
    /// the face orientation; both equal the interior trace on the boundary
    pub fn trace_jump_average(&self, face: &Face, x: [f64; 2]) -> Result<(f64, f64)> {
        let mesh = self.space.mesh();
        let a = mesh.vertex(face.vertices[0]);
        let b = mesh.vertex(face.vertices[1]);
        let on_face = if mesh.dim() == 1 {
            (x[0] - a[0]).abs() <= 1e-12 * mesh.max_diameter()
        } else {
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let (dx, dy) = (x[0] - a[0], x[1] - a[1]);
            let t = (dx * ex + dy * ey) / (ex * ex + ey * ey);
            let cross = (dx * ey - dy * ex).abs() / face.length;
            (-1e-12..=1.0 + 1e-12).contains(&t) && cross <= 1e-10 * face.length
        };
        if !on_face {
            return Err(Error::InvalidInput(format!(
                "point ({}, {}) is not on the face",
                x[0], x[1]
            )));
        }
        let t1 = self.eval_in(self.space.local_of(face.elems.0).unwrap(), x);
        Ok(match face.elems.1 {
            Some(e2) => {
                let t2 = self.eval_in(self.space.local_of(e2).unwrap(), x);
                (t1 - t2, 0.5 * (t1 + t2))
            }
            None => (t1, t1),
        })
    }

    /// broken L2 distance to a scalar field, quadrature degree 2N+4
    pub fn l2_error<F: Fn([f64; 2]) -> f64>(&self, exact: F) -> f64 {
        let mut total = 0.0;
        for k in 0..self.space.num_elems() {
            for (x, w) in self.space.volume_quad(k) {
                let d = self.eval_in(k, x) - exact(x);
                total += w * d * d;
            }
        }
        total.sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_error(|_| 0.0)
    }

    /// ASCII dump: one line per element, element id then nodal values
    pub fn write_solution(&self) -> String {
        use std::fmt::Write as _;
        let np = self.space.np();
        let mut s = String::new();
        for (k, &e) in self.space.elem_ids().iter().enumerate() {
            write!(s, "{e}").unwrap();
            for j in 0..np {
                write!(s, " {:.17e}", self.coeffs[k * np + j]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Retry a ray query with tiny transverse jitter when it hits a vertex.
pub fn ray_with_jitter(mesh: &Mesh, axis: Axis, ordinate: f64) -> Result<RaySegmentation> {
    let eps = 1e-12 * mesh.max_diameter();
    let mut delta = eps;
    let mut last = mesh.ray_segments(axis, ordinate);
    for _ in 0..6 {
        match last {
            Err(Error::DegenerateRay { .. }) => {
                last = mesh.ray_segments(axis, ordinate + delta);
                delta *= -2.0;
            }
            other => return other,
        }
    }
    last
}

/// sorted, deduplicated transverse vertex ordinates bounding the strips a
/// transverse quadrature integrates over
pub(crate) fn transverse_strips(mesh: &Mesh, axis: Axis) -> Vec<f64> {
    let tc = match axis {
        Axis::X => 1,
        Axis::Y => 0,
    };
    let mut ords: Vec<f64> = Vec::new();
    for e in mesh.alive_elements() {
        for c in mesh.elem_coords(e) {
            ords.push(c[tc]);
        }
    }
    ords.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-12 * mesh.max_diameter().max(1e-300);
    ords.dedup_by(|a, b| (*a - *b).abs() <= tol);
    ords
}

/// Squared L2 norm along a line of the left tempered fractional derivative
/// of a piecewise polynomial. The singular kernel each breakpoint jump
/// contributes is integrated in closed form (its square is too singular
/// for quadrature near the breakpoint); the bounded remainder and the
/// cross term go through tanh-sinh quadrature.
pub fn line_fractional_seminorm_sq(
    u: &PiecewisePoly1D,
    mu: f64,
    lambda: f64,
    riemann_liouville: bool,
) -> Result<f64> {
    let deriv = if riemann_liouville {
        TemperedDeriv::riemann_liouville(u, mu, lambda, Side::Left)?
    } else {
        TemperedDeriv::caputo(u, mu, lambda, Side::Left)?
    };
    let has_jumps = !deriv.jumps().is_empty();
    if has_jumps && mu >= 0.5 {
        return Err(Error::InvalidOrder {
            order: 2.0 * mu,
            reason: "jump kernels are not square-integrable for orders >= 1",
        });
    }
    let rule = TanhSinh::new(0.15);
    let inv_gamma = 1.0 / gamma(1.0 - mu);
    let breaks = u.breakpoints().to_vec();
    let mut total = 0.0;
    let mut err: Option<Error> = None;
    for w in breaks.windows(2) {
        let (p, q) = (w[0], w[1]);
        let jump = deriv
            .jumps()
            .iter()
            .find(|&&(pos, _)| (pos - p).abs() <= 1e-13 * (q - p))
            .map_or(0.0, |&(_, j)| j);
        if jump != 0.0 {
            // closed form for the squared kernel: int_0^L d^{-2mu} e^{-2 lambda d}
            let l = q - p;
            let base = if lambda > 0.0 {
                (2.0 * lambda).powf(2.0 * mu - 1.0) * gamma_li(1.0 - 2.0 * mu, 2.0 * lambda * l)
            } else {
                l.powf(1.0 - 2.0 * mu) / (1.0 - 2.0 * mu)
            };
            total += jump * jump * inv_gamma * inv_gamma * base;
        }
        // keep clear of both the segment-relative cutoff and the rounding
        // tolerance of eval (relative to the whole domain)
        let (da, db) = u.domain();
        let cut = (EDGE_CUTOFF * (q - p)).max(1.5e-14 * (db - da));
        total += rule.integrate(p, q, |x, dl, dr| {
            if dl < cut || dr < cut || x <= da || x >= db {
                return 0.0;
            }
            match deriv.eval(x) {
                Ok(d) => {
                    let k = if jump != 0.0 {
                        deriv.jump_kernel(jump, dl)
                    } else {
                        0.0
                    };
                    let r = d - k;
                    r * r + 2.0 * k * r
                }
                // points hugging a breakpoint are skipped like the edge
                // cutoff above; their tanh-sinh weights are negligible
                Err(Error::SingularPoint { .. }) => 0.0,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        });
    }
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
