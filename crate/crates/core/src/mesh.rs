//! Conforming simplicial meshes: 1D interval partitions and 2D
//! triangulations of a rectangle. Refinement is longest-edge bisection
//! with conforming closure; marked 2D elements get a two-level split that
//! places a vertex in their interior. Coarsening inverts the genealogy.
//! Horizontal/vertical ray segmentation serves the nonlocal assembly.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;

const UNUSED: usize = usize::MAX;

/// Direction along which a segmentation ray runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone)]
struct SplitInfo {
    mid: usize,
    children: [usize; 2],
    /// true for the second-level cut across the interior edge of a marked
    /// element; coarsening collapses these together with their parent cut
    interior_cut: bool,
}

#[derive(Debug, Clone)]
struct Element {
    /// triangle vertices in CCW order with the refinement edge first
    /// (verts[0], verts[1]); intervals use verts[2] = UNUSED
    verts: [usize; 3],
    split: Option<SplitInfo>,
}

impl Element {
    fn alive(&self) -> bool {
        self.split.is_none()
    }
}

/// Mesh face: a shared point (1D) or edge (2D) with its adjacent elements
/// and a unit normal oriented from `elems.0` outward.
#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 2],
    pub elems: (usize, Option<usize>),
    pub normal: [f64; 2],
    /// edge length in 2D; 1 in 1D (point faces carry counting measure)
    pub length: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elems.1.is_none()
    }

    pub fn midpoint(&self, mesh: &Mesh) -> [f64; 2] {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

/// Intersection of an axis-parallel line with one element, parameterized
/// by the running coordinate.
#[derive(Debug, Clone, Copy)]
pub struct RaySegment {
    pub element: usize,
    pub start: f64,
    pub end: f64,
}

/// Ordered, disjoint segments tiling a ray's passage through the domain.
#[derive(Debug, Clone)]
pub struct RaySegmentation {
    pub axis: Axis,
    pub ordinate: f64,
    pub segments: Vec<RaySegment>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<[f64; 2]>,
    elems: Vec<Element>,
    /// sorted vertex pair -> midpoint vertex created by a split of that edge
    edge_mid: HashMap<(usize, usize), usize>,
    bounds: ([f64; 2], [f64; 2]),
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl Mesh {
    /// K uniform intervals on [a, b].
    pub fn interval(a: f64, b: f64, k: usize) -> Result<Self> {
        if k == 0 || a >= b {
            return Err(Error::InvalidInput(
                "interval mesh needs a < b and K >= 1".into(),
            ));
        }
        let h = (b - a) / k as f64;
        let vertices: Vec<[f64; 2]> = (0..=k).map(|i| [a + i as f64 * h, 0.0]).collect();
        let elems = (0..k)
            .map(|i| Element {
                verts: [i, i + 1, UNUSED],
                split: None,
            })
            .collect();
        Ok(Self {
            dim: 1,
            vertices,
            elems,
            edge_mid: HashMap::new(),
            bounds: ([a, 0.0], [b, 0.0]),
        })
    }

    /// nx-by-ny grid of rectangle cells, each split along the diagonal into
    /// two triangles whose refinement edge is the hypotenuse.
    pub fn structured_rect(xr: [f64; 2], yr: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || xr[0] >= xr[1] || yr[0] >= yr[1] {
            return Err(Error::InvalidInput(
                "rectangle mesh needs a non-degenerate rectangle and nx, ny >= 1".into(),
            ));
        }
        let hx = (xr[1] - xr[0]) / nx as f64;
        let hy = (yr[1] - yr[0]) / ny as f64;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([xr[0] + i as f64 * hx, yr[0] + j as f64 * hy]);
            }
        }
        let mut elems = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (ll, lr) = (vid(i, j), vid(i + 1, j));
                let (ul, ur) = (vid(i, j + 1), vid(i + 1, j + 1));
                // diagonal ll-ur; both triangles CCW with the hypotenuse
                // as refinement edge
                elems.push(Element {
                    verts: [ur, ll, lr],
                    split: None,
                });
                elems.push(Element {
                    verts: [ll, ur, ul],
                    split: None,
                });
            }
        }
        Ok(Self {
            dim: 2,
            vertices,
            elems,
            edge_mid: HashMap::new(),
            bounds: ([xr[0], yr[0]], [xr[1], yr[1]]),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        self.bounds
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn is_alive(&self, e: usize) -> bool {
        e < self.elems.len() && self.elems[e].alive()
    }

    /// Ids of current (leaf) elements, ascending.
    pub fn alive_elements(&self) -> Vec<usize> {
        (0..self.elems.len()).filter(|&e| self.elems[e].alive()).collect()
    }

    pub fn num_alive(&self) -> usize {
        self.elems.iter().filter(|e| e.alive()).count()
    }

    pub fn elem_vertex_ids(&self, e: usize) -> Vec<usize> {
        let v = &self.elems[e].verts;
        if self.dim == 1 {
            vec![v[0], v[1]]
        } else {
            vec![v[0], v[1], v[2]]
        }
    }

    pub fn elem_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.elem_vertex_ids(e)
            .into_iter()
            .map(|v| self.vertices[v])
            .collect()
    }

    /// Interval length (1D) or triangle area (2D); positive by the CCW
    /// orientation invariant.
    pub fn area(&self, e: usize) -> f64 {
        let c = self.elem_coords(e);
        if self.dim == 1 {
            c[1][0] - c[0][0]
        } else {
            0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1])
                - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]))
        }
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let c = self.elem_coords(e);
        if self.dim == 1 {
            c[1][0] - c[0][0]
        } else {
            (0..3)
                .map(|i| dist(c[i], c[(i + 1) % 3]))
                .fold(0.0, f64::max)
        }
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let c = self.elem_coords(e);
        let n = c.len() as f64;
        [
            c.iter().map(|p| p[0]).sum::<f64>() / n,
            c.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    }

    pub fn max_diameter(&self) -> f64 {
        self.alive_elements()
            .into_iter()
            .map(|e| self.diameter(e))
            .fold(0.0, f64::max)
    }

    /// max over elements of h_T / rho_T (rho = inradius; 1 in 1D).
    pub fn max_shape_ratio(&self) -> f64 {
        if self.dim == 1 {
            return 1.0;
        }
        self.alive_elements()
            .into_iter()
            .map(|e| {
                let c = self.elem_coords(e);
                let per: f64 = (0..3).map(|i| dist(c[i], c[(i + 1) % 3])).sum();
                let rho = 2.0 * self.area(e) / per;
                self.diameter(e) / rho
            })
            .fold(0.0, f64::max)
    }

    fn mid_vertex(&mut self, u: usize, v: usize) -> usize {
        let key = edge_key(u, v);
        if let Some(&m) = self.edge_mid.get(&key) {
            return m;
        }
        let a = self.vertices[u];
        let b = self.vertices[v];
        let m = self.vertices.len();
        self.vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        self.edge_mid.insert(key, m);
        m
    }

    fn push_elem(&mut self, verts: [usize; 3]) -> usize {
        self.elems.push(Element { verts, split: None });
        self.elems.len() - 1
    }

    /// Total order on edges: squared length first, midpoint coordinates as
    /// a deterministic tie-break. Bisections always split the maximum edge,
    /// which makes closure propagation follow strictly increasing edges and
    /// therefore terminate (longest-edge bisection).
    fn edge_order(&self, u: usize, v: usize) -> [f64; 3] {
        let a = self.vertices[u];
        let b = self.vertices[v];
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        [dx * dx + dy * dy, 0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// split edge (u, v) of element e in CCW order, with w opposite
    fn split_edge_of(&self, e: usize) -> (usize, usize, usize) {
        let vt = self.elems[e].verts;
        let i = (0..3)
            .max_by(|&i, &j| {
                let a = self.edge_order(vt[i], vt[(i + 1) % 3]);
                let b = self.edge_order(vt[j], vt[(j + 1) % 3]);
                a.partial_cmp(&b).unwrap()
            })
            .unwrap();
        (vt[i], vt[(i + 1) % 3], vt[(i + 2) % 3])
    }

    /// Single bisection across the element's maximum edge.
    fn bisect(&mut self, e: usize) -> [usize; 2] {
        let (children, m) = if self.dim == 1 {
            let [p, q, _] = self.elems[e].verts;
            let m = self.mid_vertex(p, q);
            (
                [self.push_elem([p, m, UNUSED]), self.push_elem([m, q, UNUSED])],
                m,
            )
        } else {
            let (u, v, w) = self.split_edge_of(e);
            let m = self.mid_vertex(u, v);
            ([self.push_elem([w, u, m]), self.push_elem([v, w, m])], m)
        };
        self.elems[e].split = Some(SplitInfo {
            mid: m,
            children,
            interior_cut: false,
        });
        children
    }

    /// whether e is a right isosceles triangle (leg/hypotenuse = 1/sqrt 2),
    /// the family the structured mesh starts from and that longest-edge
    /// bisection preserves
    fn is_right_isosceles(&self, e: usize) -> bool {
        let c = self.elem_coords(e);
        let mut d = [dist(c[0], c[1]), dist(c[1], c[2]), dist(c[2], c[0])];
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = 0.5f64.sqrt();
        (d[0] / d[2] - r).abs() <= 1e-9 && (d[1] / d[2] - r).abs() <= 1e-9
    }

    /// Interior vertex position along the median of a quartered triangle,
    /// as a fraction of the way from the right-angle vertex to the
    /// hypotenuse midpoint. Chosen so that the similarity classes generated
    /// by quartering plus subsequent longest-edge bisections (a finite set)
    /// keep max h_T/rho_T below twice the structured-mesh value.
    const INTERIOR_SPLIT_FRACTION: f64 = 0.55;

    /// Two-level split of a marked triangle: bisect the longest edge, then
    /// cut both children across their shared interior edge (the median) at
    /// an interior point. Yields four grandchildren and one vertex strictly
    /// inside the marked element; only the longest edge needs closure.
    fn quarter(&mut self, e: usize) {
        let (p, q, r) = self.split_edge_of(e);
        let [c1, c2] = self.bisect(e);
        let m = self.elems[e].split.as_ref().unwrap().mid;
        let a = self.vertices[r];
        let b = self.vertices[m];
        let t = Self::INTERIOR_SPLIT_FRACTION;
        let pp = self.vertices.len();
        self.vertices
            .push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        self.edge_mid.insert(edge_key(r, m), pp);
        let g11 = self.push_elem([r, p, pp]);
        let g12 = self.push_elem([p, m, pp]);
        let g21 = self.push_elem([q, r, pp]);
        let g22 = self.push_elem([q, pp, m]);
        self.elems[c1].split = Some(SplitInfo {
            mid: pp,
            children: [g11, g12],
            interior_cut: true,
        });
        self.elems[c2].split = Some(SplitInfo {
            mid: pp,
            children: [g21, g22],
            interior_cut: true,
        });
    }

    /// Marked split for triangles outside the right-isosceles family
    /// (quartering offspring): bisect the longest edge, then force a
    /// vertex into the interior by longest-edge bisections of the
    /// descendants holding the median edge, and finally bisect any
    /// descendant still exceeding the child-diameter bound h / sqrt 2.
    /// Every cut is a longest-edge bisection, so the similarity classes
    /// stay within the finite quartering-generated set.
    fn split_with_interior_vertex(&mut self, e: usize) -> Result<()> {
        let h = self.diameter(e);
        let (_, _, w) = self.split_edge_of(e);
        self.bisect(e);
        let m = self.elems[e].split.as_ref().unwrap().mid;
        let key = edge_key(w, m);
        let mut guard = 0;
        while !self.edge_mid.contains_key(&key) {
            let holder = self
                .alive_descendants(e)
                .into_iter()
                .find(|&d| {
                    let vt = &self.elems[d].verts;
                    vt.contains(&w) && vt.contains(&m)
                })
                .ok_or_else(|| Error::Internal("median edge lost during split".into()))?;
            self.bisect(holder);
            guard += 1;
            if guard > 64 {
                return Err(Error::Internal("interior-vertex split did not terminate".into()));
            }
        }
        let bound = h / 2f64.sqrt() * (1.0 + 1e-12);
        for _ in 0..64 {
            let big: Vec<usize> = self
                .alive_descendants(e)
                .into_iter()
                .filter(|&d| self.diameter(d) > bound)
                .collect();
            if big.is_empty() {
                return Ok(());
            }
            for d in big {
                self.bisect(d);
            }
        }
        Err(Error::Internal("child-diameter reduction did not terminate".into()))
    }

    fn split_marked_2d(&mut self, e: usize) -> Result<()> {
        if self.is_right_isosceles(e) {
            self.quarter(e);
            Ok(())
        } else {
            self.split_with_interior_vertex(e)
        }
    }

    /// An alive element is nonconforming when a neighbor has split one of
    /// its edges (the edge's midpoint vertex is registered and in use).
    fn find_nonconforming(&self) -> Option<usize> {
        for (e, el) in self.elems.iter().enumerate() {
            if !el.alive() {
                continue;
            }
            let n = if self.dim == 1 { continue } else { 3 };
            for i in 0..n {
                let key = edge_key(el.verts[i], el.verts[(i + 1) % 3]);
                if self.edge_mid.contains_key(&key) {
                    return Some(e);
                }
            }
        }
        None
    }

    /// Refine every marked element (two-level split in 2D, midpoint split
    /// in 1D), then restore conformity by closure bisections.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh> {
        let mut m = self.clone();
        for &e in marked {
            if !m.is_alive(e) {
                return Err(Error::InvalidInput(format!(
                    "refine: unknown or retired element id {e}"
                )));
            }
        }
        let mut marked = marked.to_vec();
        marked.sort_unstable();
        marked.dedup();
        for &e in &marked {
            if m.dim == 1 {
                m.bisect(e);
            } else {
                m.split_marked_2d(e)?;
            }
        }
        let cap = 10_000 + 16 * m.elems.len();
        let mut steps = 0;
        while let Some(e) = m.find_nonconforming() {
            m.bisect(e);
            steps += 1;
            if steps > cap {
                return Err(Error::Internal(
                    "conforming closure did not terminate".into(),
                ));
            }
        }
        Ok(m)
    }

    /// Merge sibling pairs whose members are all marked, one genealogy
    /// level at most (the two interior cuts of a marked split collapse
    /// together with their parent cut). Pairs whose midpoint vertex is
    /// still used by an unmarked neighbor are skipped, which keeps the
    /// mesh conforming; partial sibling groups are skipped silently.
    pub fn coarsen(&self, marked: &[usize]) -> Result<Mesh> {
        for &e in marked {
            if !self.is_alive(e) {
                return Err(Error::InvalidInput(format!(
                    "coarsen: unknown or retired element id {e}"
                )));
            }
        }
        let mut m = self.clone();
        let mut marked: Vec<bool> = {
            let mut v = vec![false; m.elems.len()];
            for &e in marked {
                v[e] = true;
            }
            v
        };
        // interior cuts first; their merged parents join the marked set so
        // the enclosing cuts of the same marked split can collapse too.
        // Iterate to fixpoint so fully-marked multi-level genealogies
        // (interior-vertex splits) collapse completely.
        loop {
            let mut changed = m.merge_pass(&mut marked, true);
            changed |= m.merge_pass(&mut marked, false);
            if !changed {
                break;
            }
        }
        Ok(m)
    }

    fn merge_pass(&mut self, marked: &mut Vec<bool>, interior: bool) -> bool {
        // leaf splits of the requested kind with both children marked
        let candidates: Vec<usize> = (0..self.elems.len())
            .filter(|&e| {
                self.elems[e].split.as_ref().is_some_and(|s| {
                    s.interior_cut == interior
                        && s.children
                            .iter()
                            .all(|&c| self.elems[c].alive() && marked[c])
                })
            })
            .collect();
        // a candidate may merge only if every alive user of its midpoint
        // vertex is a child of some candidate (so the vertex disappears)
        let mut users: HashMap<usize, Vec<usize>> = HashMap::new();
        for (e, el) in self.elems.iter().enumerate() {
            if el.alive() {
                for &v in &el.verts {
                    if v != UNUSED {
                        users.entry(v).or_default().push(e);
                    }
                }
            }
        }
        let mut candidate_child = vec![false; self.elems.len()];
        for &s in &candidates {
            for &c in &self.elems[s].split.as_ref().unwrap().children {
                candidate_child[c] = true;
            }
        }
        let mergeable: Vec<usize> = candidates
            .into_iter()
            .filter(|&s| {
                let mid = self.elems[s].split.as_ref().unwrap().mid;
                users
                    .get(&mid)
                    .is_none_or(|u| u.iter().all(|&e| candidate_child[e]))
            })
            .collect();
        let changed = !mergeable.is_empty();
        for &s in &mergeable {
            let info = self.elems[s].split.take().unwrap();
            // retire children: point them at an empty split so they are
            // neither alive nor mergeable
            for &c in &info.children {
                self.elems[c].split = Some(SplitInfo {
                    mid: UNUSED,
                    children: [c, c],
                    interior_cut: false,
                });
            }
            marked[s] = true;
            // drop the midpoint registration once no merge partner needs it
            let keys: Vec<(usize, usize)> = self
                .edge_mid
                .iter()
                .filter(|&(_, &v)| v == info.mid)
                .map(|(&k, _)| k)
                .collect();
            for k in keys {
                self.edge_mid.remove(&k);
            }
        }
        changed
    }

    /// Faces of the current mesh: interior faces carry both neighbors with
    /// the normal oriented from the first to the second; boundary faces
    /// carry an outward normal.
    pub fn faces(&self) -> Vec<Face> {
        let mut out = Vec::new();
        if self.dim == 1 {
            let mut at: HashMap<usize, Vec<(usize, bool)>> = HashMap::new();
            for e in self.alive_elements() {
                let v = self.elems[e].verts;
                at.entry(v[0]).or_default().push((e, false));
                at.entry(v[1]).or_default().push((e, true));
            }
            let mut keys: Vec<usize> = at.keys().copied().collect();
            keys.sort_by(|&a, &b| {
                self.vertices[a][0].partial_cmp(&self.vertices[b][0]).unwrap()
            });
            for v in keys {
                let adj = &at[&v];
                // left element (vertex is its right end) first: normal +1
                let left = adj.iter().find(|a| a.1).map(|a| a.0);
                let right = adj.iter().find(|a| !a.1).map(|a| a.0);
                match (left, right) {
                    (Some(l), r) => out.push(Face {
                        vertices: [v, v],
                        elems: (l, r),
                        normal: [1.0, 0.0],
                        length: 1.0,
                    }),
                    (None, Some(r)) => out.push(Face {
                        vertices: [v, v],
                        elems: (r, None),
                        normal: [-1.0, 0.0],
                        length: 1.0,
                    }),
                    (None, None) => {}
                }
            }
            return out;
        }
        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for e in self.alive_elements() {
            let v = self.elems[e].verts;
            for i in 0..3 {
                edges
                    .entry(edge_key(v[i], v[(i + 1) % 3]))
                    .or_default()
                    .push((e, i));
            }
        }
        let mut keys: Vec<(usize, usize)> = edges.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let adj = &edges[&key];
            let (e1, loc) = adj[0];
            let v = self.elems[e1].verts;
            let (a, b) = (v[loc], v[(loc + 1) % 3]);
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            let len = dist(pa, pb);
            // CCW orientation: outward normal of edge a->b is (dy, -dx)
            let normal = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
            out.push(Face {
                vertices: [a, b],
                elems: (e1, adj.get(1).map(|&(e2, _)| e2)),
                normal,
                length: len,
            });
        }
        out
    }

    /// Segments of the axis-parallel line through `ordinate` (the fixed
    /// transverse coordinate), ordered along the ray. 1D meshes return
    /// their element list.
    pub fn ray_segments(&self, axis: Axis, ordinate: f64) -> Result<RaySegmentation> {
        if self.dim == 1 {
            let mut segs: Vec<RaySegment> = self
                .alive_elements()
                .into_iter()
                .map(|e| {
                    let c = self.elem_coords(e);
                    RaySegment {
                        element: e,
                        start: c[0][0],
                        end: c[1][0],
                    }
                })
                .collect();
            segs.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
            return Ok(RaySegmentation {
                axis,
                ordinate,
                segments: segs,
            });
        }
        // transverse coordinate index: a ray along x varies x, fixes y
        let tc = match axis {
            Axis::X => 1,
            Axis::Y => 0,
        };
        let (lo, hi) = (self.bounds.0[tc], self.bounds.1[tc]);
        if ordinate <= lo || ordinate >= hi {
            return Err(Error::OutOfDomain {
                x: ordinate,
                a: lo,
                b: hi,
            });
        }
        let tol = 1e-14 * (hi - lo);
        let mut segs = Vec::new();
        for e in self.alive_elements() {
            let c = self.elem_coords(e);
            if c.iter().any(|p| (p[tc] - ordinate).abs() <= tol) {
                return Err(Error::DegenerateRay { ordinate });
            }
            let mut ts = Vec::with_capacity(2);
            for i in 0..3 {
                let (a, b) = (c[i], c[(i + 1) % 3]);
                if (a[tc] - ordinate) * (b[tc] - ordinate) < 0.0 {
                    let f = (ordinate - a[tc]) / (b[tc] - a[tc]);
                    ts.push(a[1 - tc] + f * (b[1 - tc] - a[1 - tc]));
                }
            }
            if ts.len() == 2 {
                let (t0, t1) = (ts[0].min(ts[1]), ts[0].max(ts[1]));
                if t1 - t0 > tol {
                    segs.push(RaySegment {
                        element: e,
                        start: t0,
                        end: t1,
                    });
                }
            }
        }
        segs.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        Ok(RaySegmentation {
            axis,
            ordinate,
            segments: segs,
        })
    }

    /// conformity check used by tests: every interior face shared by
    /// exactly two elements, boundary faces by one, no hanging vertices
    pub fn is_conforming(&self) -> bool {
        if self.dim == 1 {
            let f = self.faces();
            return f.iter().filter(|f| f.is_boundary()).count() == 2;
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for e in self.alive_elements() {
            let v = self.elems[e].verts;
            for i in 0..3 {
                *edges.entry(edge_key(v[i], v[(i + 1) % 3])).or_insert(0) += 1;
            }
        }
        if edges.values().any(|&c| c > 2) {
            return false;
        }
        // a hanging node shows as a registered midpoint of a live edge
        self.find_nonconforming().is_none()
    }

    pub fn total_area(&self) -> f64 {
        self.alive_elements().into_iter().map(|e| self.area(e)).sum()
    }

    /// children of e from the last split, if any
    pub fn children(&self, e: usize) -> Option<[usize; 2]> {
        self.elems[e]
            .split
            .as_ref()
            .filter(|s| s.mid != UNUSED)
            .map(|s| s.children)
    }

    /// All alive descendants of e (e itself when alive).
    pub fn alive_descendants(&self, e: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![e];
        while let Some(t) = stack.pop() {
            match self.children(t) {
                Some(ch) if !self.elems[t].alive() => stack.extend(ch),
                _ => {
                    if self.elems[t].alive() {
                        out.push(t);
                    }
                }
            }
        }
        out
    }

    /// Plain-text serialization: "dim K V", V coordinate lines, K element
    /// lines of 0-based vertex indices, then face records (write only).
    pub fn write_text(&self) -> String {
        let alive = self.alive_elements();
        let mut vmap: HashMap<usize, usize> = HashMap::new();
        let mut vlist: Vec<usize> = Vec::new();
        for &e in &alive {
            for v in self.elem_vertex_ids(e) {
                vmap.entry(v).or_insert_with(|| {
                    vlist.push(v);
                    vlist.len() - 1
                });
            }
        }
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.dim, alive.len(), vlist.len()).unwrap();
        for &v in &vlist {
            let p = self.vertices[v];
            if self.dim == 1 {
                writeln!(s, "{:.17e}", p[0]).unwrap();
            } else {
                writeln!(s, "{:.17e} {:.17e}", p[0], p[1]).unwrap();
            }
        }
        for &e in &alive {
            let ids: Vec<String> = self
                .elem_vertex_ids(e)
                .into_iter()
                .map(|v| vmap[&v].to_string())
                .collect();
            writeln!(s, "{}", ids.join(" ")).unwrap();
        }
        let eid: HashMap<usize, usize> =
            alive.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        for f in self.faces() {
            let e2 = f.elems.1.map_or(-1, |e| eid[&e] as i64);
            writeln!(
                s,
                "face {} {} {} {} {:.17e} {:.17e}",
                vmap[&f.vertices[0]], vmap[&f.vertices[1]], eid[&f.elems.0], e2,
                f.normal[0], f.normal[1]
            )
            .unwrap();
        }
        s
    }

    pub fn read_text(text: &str) -> Result<Mesh> {
        let bad = |m: &str| Error::InvalidInput(format!("mesh text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        if h.len() != 3 || (h[0] != 1 && h[0] != 2) {
            return Err(bad("header must be 'dim K V' with dim 1 or 2"));
        }
        let (dim, k, nv) = (h[0], h[1], h[2]);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let l = lines.next().ok_or_else(|| bad("missing vertex line"))?;
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad coordinate")))
                .collect::<Result<_>>()?;
            if c.len() != dim {
                return Err(bad("coordinate arity mismatch"));
            }
            vertices.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
        }
        let mut elems = Vec::with_capacity(k);
        for _ in 0..k {
            let l = lines.next().ok_or_else(|| bad("missing element line"))?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad vertex index")))
                .collect::<Result<_>>()?;
            if v.len() != dim + 1 || v.iter().any(|&i| i >= nv) {
                return Err(bad("bad element record"));
            }
            elems.push(Element {
                verts: [v[0], v[1], if dim == 2 { v[2] } else { UNUSED }],
                split: None,
            });
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let mesh = Mesh {
            dim,
            vertices,
            elems,
            edge_mid: HashMap::new(),
            bounds: (lo, hi),
        };
        for e in 0..k {
            if mesh.area(e) <= 0.0 {
                return Err(bad("element with non-positive measure (check orientation)"));
            }
        }
        Ok(mesh)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_interval() {
        let m = Mesh::interval(0.0, 2.0, 8).unwrap();
        assert_eq!(m.num_alive(), 8);
        for e in m.alive_elements() {
            assert_relative_eq!(m.diameter(e), 0.25);
        }
        assert!(m.is_conforming());
    }

    #[test]
    fn single_interval_no_interior_faces() {
        let m = Mesh::interval(0.0, 1.0, 1).unwrap();
        assert_eq!(m.num_alive(), 1);
        assert!(m.faces().iter().all(|f| f.is_boundary()));
    }

    #[test]
    fn interval_face_orientation() {
        let m = Mesh::interval(0.0, 2.0, 2).unwrap();
        let faces = m.faces();
        assert_eq!(faces.len(), 3);
        let interior: Vec<&Face> = faces.iter().filter(|f| !f.is_boundary()).collect();
        assert_eq!(interior.len(), 1);
        let f = interior[0];
        assert_relative_eq!(m.vertex(f.vertices[0])[0], 1.0);
        assert_eq!(f.normal, [1.0, 0.0]);
        // oriented from the left element toward the right one
        assert!(m.centroid(f.elems.0)[0] < m.centroid(f.elems.1.unwrap())[0]);
    }

    #[test]
    fn structured_counts() {
        assert_eq!(
            Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 4, 4).unwrap().num_alive(),
            32
        );
        assert_eq!(
            Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 6, 6).unwrap().num_alive(),
            72
        );
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 1, 1).unwrap();
        assert_eq!(m.num_alive(), 2);
        assert_eq!(m.faces().iter().filter(|f| !f.is_boundary()).count(), 1);
        assert!(m.is_conforming());
    }

    #[test]
    fn refine_1d_single() {
        let m = Mesh::interval(0.0, 1.0, 2).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!(r.num_alive(), 3);
        assert_relative_eq!(r.total_area(), 1.0);
    }

    #[test]
    fn refine_2d_marked_gets_interior_vertex() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 2, 2).unwrap();
        let nv0 = m.num_vertices();
        let r = m.refine(&[0]).unwrap();
        assert!(r.is_conforming());
        assert_relative_eq!(r.total_area(), 4.0, max_relative = 1e-13);
        let desc = r.alive_descendants(0);
        assert!(desc.len() >= 4);
        // one of the new vertices lies strictly inside element 0
        let tri = m.elem_coords(0);
        let inside = (nv0..r.num_vertices()).any(|v| {
            let p = r.vertex(v);
            bary_inside(&tri, p)
        });
        assert!(inside);
        // child diameter bound h' <= h / sqrt(2)
        let h = m.diameter(0);
        for d in desc {
            assert!(r.diameter(d) <= h / 2f64.sqrt() + 1e-13);
        }
    }

    fn bary_inside(tri: &[[f64; 2]], p: [f64; 2]) -> bool {
        let det = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
            - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1]);
        let l1 = ((tri[1][0] - p[0]) * (tri[2][1] - p[1])
            - (tri[2][0] - p[0]) * (tri[1][1] - p[1]))
            / det;
        let l2 = ((tri[2][0] - p[0]) * (tri[0][1] - p[1])
            - (tri[0][0] - p[0]) * (tri[2][1] - p[1]))
            / det;
        let l3 = 1.0 - l1 - l2;
        l1 > 1e-10 && l2 > 1e-10 && l3 > 1e-10
    }

    #[test]
    fn refine_all_quadruples() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 4, 4).unwrap();
        let r = m.refine(&m.alive_elements()).unwrap();
        assert_eq!(r.num_alive(), 128);
        assert!(r.is_conforming());
        assert_relative_eq!(r.total_area(), 4.0, max_relative = 1e-13);
    }

    #[test]
    fn refine_coarsen_roundtrip_2d() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 2, 2).unwrap();
        let r = m.refine(&[3]).unwrap();
        assert!(r.num_alive() > m.num_alive());
        // mark every element created by the refinement
        let marked: Vec<usize> = r
            .alive_elements()
            .into_iter()
            .filter(|&e| !m.is_alive(e))
            .collect();
        let c = r.coarsen(&marked).unwrap();
        assert_eq!(c.num_alive(), m.num_alive());
        assert!(c.is_conforming());
        assert_relative_eq!(c.total_area(), 4.0, max_relative = 1e-13);
    }

    #[test]
    fn coarsen_noops() {
        let m = Mesh::interval(0.0, 1.0, 4).unwrap();
        let c = m.coarsen(&[]).unwrap();
        assert_eq!(c.num_alive(), 4);
        // root elements have no parent: unchanged
        let c2 = m.coarsen(&m.alive_elements()).unwrap();
        assert_eq!(c2.num_alive(), 4);
    }

    #[test]
    fn coarsen_partial_sibling_group_skipped() {
        let m = Mesh::interval(0.0, 1.0, 2).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!(r.num_alive(), 3);
        let kids: Vec<usize> = r
            .alive_elements()
            .into_iter()
            .filter(|&e| !m.is_alive(e))
            .collect();
        let c = r.coarsen(&kids[..1]).unwrap();
        assert_eq!(c.num_alive(), 3);
    }

    #[test]
    fn coarsen_preserves_conformity_against_unmarked_neighbor() {
        // refine two adjacent triangles, then try to coarsen only one
        // family: the shared-edge midpoint is still used, so the merge
        // that would create a hanging node must be skipped
        let m = Mesh::structured_rect([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        let r = m.refine(&m.alive_elements()).unwrap();
        let fam: Vec<usize> = r.alive_descendants(0);
        let c = r.coarsen(&fam).unwrap();
        assert!(c.is_conforming());
        assert_relative_eq!(c.total_area(), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn ray_through_two_triangles() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 1, 1).unwrap();
        let seg = m.ray_segments(Axis::X, 0.5).unwrap();
        assert_eq!(seg.segments.len(), 2);
        assert_relative_eq!(seg.segments[0].start, 0.0);
        assert_relative_eq!(seg.segments[0].end, 0.5);
        assert_relative_eq!(seg.segments[1].start, 0.5);
        assert_relative_eq!(seg.segments[1].end, 2.0);
    }

    #[test]
    fn ray_1d_is_element_list() {
        let m = Mesh::interval(0.0, 2.0, 4).unwrap();
        let seg = m.ray_segments(Axis::X, 0.0).unwrap();
        assert_eq!(seg.segments.len(), 4);
        assert_relative_eq!(seg.segments[0].start, 0.0);
        assert_relative_eq!(seg.segments[3].end, 2.0);
    }

    #[test]
    fn ray_errors() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 2, 2).unwrap();
        assert!(matches!(
            m.ray_segments(Axis::X, -0.5),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            m.ray_segments(Axis::X, 1.0),
            Err(Error::DegenerateRay { .. })
        ));
    }

    #[test]
    fn text_roundtrip() {
        let m = Mesh::structured_rect([0.0, 2.0], [0.0, 1.0], 3, 2).unwrap();
        let r = m.refine(&[0, 5]).unwrap();
        let text = r.write_text();
        let back = Mesh::read_text(&text).unwrap();
        assert_eq!(back.num_alive(), r.num_alive());
        assert!(back.is_conforming());
        assert_relative_eq!(back.total_area(), r.total_area(), max_relative = 1e-14);
        let m1 = Mesh::read_text(&Mesh::interval(0.0, 1.0, 3).unwrap().write_text()).unwrap();
        assert_eq!(m1.dim(), 1);
        assert_eq!(m1.num_alive(), 3);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(Mesh::interval(0.0, 1.0, 0).is_err());
        assert!(Mesh::interval(1.0, 0.0, 2).is_err());
        assert!(Mesh::structured_rect([0.0, 0.0], [0.0, 1.0], 1, 1).is_err());
        let m = Mesh::interval(0.0, 1.0, 2).unwrap();
        assert!(m.refine(&[7]).is_err());
        assert!(Mesh::read_text("nonsense").is_err());
    }
}
