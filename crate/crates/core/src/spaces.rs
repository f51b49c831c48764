//! The discrete product space `S1_0 x RT0`: degrees of freedom, local
//! bases, nodal and Raviart-Thomas interpolation, and prolongation between
//! nested meshes.
//!
//! Coefficient vectors list the H1 block (interior vertices in ascending
//! vertex order) first, then one normal-flux dof per global edge (edges in
//! ascending vertex-pair order).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{edge_key, local_edge, locate_in_coarse, EdgeKey, Mesh, Point};
use crate::quadrature::edge_rule;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    order: usize,
    h1_dof: Vec<Option<usize>>,
    n_h1: usize,
    edges: Vec<EdgeKey>,
    edge_index: HashMap<EdgeKey, usize>,
    elem_edges: Vec<[usize; 3]>,
    signs: Vec<[i8; 3]>,
    boundary_edge: Vec<bool>,
}

impl DofMap {
    /// Lowest-order dof map of `mesh`.
    pub fn new<T: Scalar>(mesh: &Mesh<T>) -> Self {
        Self::with_order(mesh, 0).expect("order 0 is supported")
    }

    /// Dof map for Raviart-Thomas order `order` (paired with continuous
    /// elements of order `order + 1`). Only `order == 0` is implemented.
    pub fn with_order<T: Scalar>(mesh: &Mesh<T>, order: usize) -> Result<Self> {
        if order != 0 {
            return Err(Error::Argument(format!(
                "polynomial order {order} not implemented (only 0)"
            )));
        }
        let edges = mesh.edges();
        let edge_index: HashMap<EdgeKey, usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut owners: Vec<Vec<usize>> = vec![Vec::with_capacity(2); edges.len()];
        let mut elem_edges = Vec::with_capacity(mesh.n_elements());
        for (e, t) in mesh.elements().iter().enumerate() {
            let mut ids = [0; 3];
            for (i, id) in ids.iter_mut().enumerate() {
                let (a, b) = local_edge(t, i);
                *id = edge_index[&edge_key(a, b)];
                owners[*id].push(e);
            }
            elem_edges.push(ids);
        }
        let boundary_edge: Vec<bool> = owners.iter().map(|o| o.len() == 1).collect();
        let signs = mesh
            .elements()
            .iter()
            .enumerate()
            .map(|(e, _)| {
                let mut s = [1i8; 3];
                for (i, si) in s.iter_mut().enumerate() {
                    let o = &owners[elem_edges[e][i]];
                    if o.len() == 2 && o.iter().copied().min() != Some(e) {
                        *si = -1;
                    }
                }
                s
            })
            .collect();

        let mut on_boundary = vec![false; mesh.n_vertices()];
        for (j, &(a, b)) in edges.iter().enumerate() {
            if boundary_edge[j] {
                on_boundary[a] = true;
                on_boundary[b] = true;
            }
        }
        let mut used = vec![false; mesh.n_vertices()];
        for t in mesh.elements() {
            for &v in t {
                used[v] = true;
            }
        }
        let mut n_h1 = 0;
        let h1_dof = (0..mesh.n_vertices())
            .map(|v| {
                if used[v] && !on_boundary[v] {
                    n_h1 += 1;
                    Some(n_h1 - 1)
                } else {
                    None
                }
            })
            .collect();
        Ok(DofMap {
            order,
            h1_dof,
            n_h1,
            edges,
            edge_index,
            elem_edges,
            signs,
            boundary_edge,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_h1(&self) -> usize {
        self.n_h1
    }

    pub fn n_rt(&self) -> usize {
        self.edges.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_h1 + self.edges.len()
    }

    /// H1 dof of a vertex; `None` on the Dirichlet boundary.
    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.h1_dof[v]
    }

    /// Global dof of the Raviart-Thomas function on edge `(a, b)`.
    pub fn edge_dof(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&edge_key(a, b)).map(|i| self.n_h1 + i)
    }

    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        self.boundary_edge[edge]
    }

    /// Global edge indices of the local edges of `elem`.
    pub fn element_edges(&self, elem: usize) -> [usize; 3] {
        self.elem_edges[elem]
    }

    /// Orientation sign of local edge `i` of `elem`.
    pub fn sign(&self, elem: usize, i: usize) -> i8 {
        self.signs[elem][i]
    }

    /// The six local dofs of `elem`: three vertex hats then three edge
    /// functions. Boundary vertices carry no dof.
    pub fn element_dofs<T: Scalar>(&self, mesh: &Mesh<T>, elem: usize) -> [Option<usize>; 6] {
        let t = &mesh.elements()[elem];
        let e = &self.elem_edges[elem];
        [
            self.h1_dof[t[0]],
            self.h1_dof[t[1]],
            self.h1_dof[t[2]],
            Some(self.n_h1 + e[0]),
            Some(self.n_h1 + e[1]),
            Some(self.n_h1 + e[2]),
        ]
    }
}

/// Coefficients of a discrete pair `(u, sigma)` in dof-map order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefVec<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> CoefVec<T> {
    pub fn zeros(n: usize) -> Self {
        CoefVec {
            values: vec![T::zero(); n],
        }
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        CoefVec { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, dofmap: &DofMap) -> Result<()> {
        if self.values.len() != dofmap.n_total() {
            return Err(Error::Argument(format!(
                "coefficient vector has length {}, dof map expects {}",
                self.values.len(),
                dofmap.n_total()
            )));
        }
        Ok(())
    }
}

/// Where to evaluate a local basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalPoint<T> {
    Barycentric([T; 3]),
    Physical(Point<T>),
}

/// Values of the six local basis functions at one point.
///
/// Hat gradients and Raviart-Thomas divergences are constant per element.
/// Edge functions include the orientation sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalBasis<T> {
    pub x: Point<T>,
    pub hat: [T; 3],
    pub hat_grad: [[T; 2]; 3],
    pub rt: [[T; 2]; 3],
    pub rt_div: [T; 3],
}

/// Constant-per-element data needed to evaluate local bases repeatedly.
#[derive(Clone, Copy, Debug)]
pub struct ElementFrame<T> {
    pub corners: [Point<T>; 3],
    pub area: T,
    pub hat_grad: [[T; 2]; 3],
    /// `s |E| / (2 |T|)` per local edge.
    rt_scale: [T; 3],
}

impl<T: Scalar> ElementFrame<T> {
    pub fn new(mesh: &Mesh<T>, dofmap: &DofMap, elem: usize) -> Self {
        let c = mesh.corners(elem);
        let area = mesh.area(elem);
        let two_area = area * T::lit(2.0);
        let mut hat_grad = [[T::zero(); 2]; 3];
        let mut rt_scale = [T::zero(); 3];
        for i in 0..3 {
            let p = c[(i + 1) % 3];
            let q = c[(i + 2) % 3];
            // gradient of the barycentric coordinate of vertex i
            hat_grad[i] = [(p[1] - q[1]) / two_area, (q[0] - p[0]) / two_area];
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            let s = T::lit(f64::from(dofmap.sign(elem, i)));
            rt_scale[i] = s * len / two_area;
        }
        ElementFrame {
            corners: c,
            area,
            hat_grad,
            rt_scale,
        }
    }

    pub fn to_physical(&self, lambda: [T; 3]) -> Point<T> {
        let c = &self.corners;
        [
            lambda[0] * c[0][0] + lambda[1] * c[1][0] + lambda[2] * c[2][0],
            lambda[0] * c[0][1] + lambda[1] * c[1][1] + lambda[2] * c[2][1],
        ]
    }

    pub fn eval(&self, lambda: [T; 3]) -> LocalBasis<T> {
        let x = self.to_physical(lambda);
        let mut rt = [[T::zero(); 2]; 3];
        let mut rt_div = [T::zero(); 3];
        for i in 0..3 {
            let p = self.corners[i];
            rt[i] = [
                self.rt_scale[i] * (x[0] - p[0]),
                self.rt_scale[i] * (x[1] - p[1]),
            ];
            rt_div[i] = self.rt_scale[i] * T::lit(2.0);
        }
        LocalBasis {
            x,
            hat: lambda,
            hat_grad: self.hat_grad,
            rt,
            rt_div,
        }
    }
}

pub fn eval_local_basis<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    elem: usize,
    point: LocalPoint<T>,
) -> Result<LocalBasis<T>> {
    mesh.check_element(elem)?;
    let lambda = match point {
        LocalPoint::Barycentric(l) => l,
        LocalPoint::Physical(x) => mesh.barycentric(elem, x),
    };
    let tol = T::lit(T::BARY_TOL);
    if lambda.iter().any(|&l| l < -tol) {
        return Err(Error::Argument(format!(
            "point with barycentric coordinates {lambda:?} lies outside element {elem}"
        )));
    }
    Ok(ElementFrame::new(mesh, dofmap, elem).eval(lambda))
}

/// Outward unit normal of local edge `i` of a counter-clockwise element.
pub fn outward_normal<T: Scalar>(corners: &[Point<T>; 3], i: usize) -> [T; 2] {
    let p = corners[(i + 1) % 3];
    let q = corners[(i + 2) % 3];
    let d = [q[0] - p[0], q[1] - p[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    [d[1] / len, -d[0] / len]
}

/// For each global edge, an adjacent element and local index whose
/// orientation sign is positive.
pub fn positive_edge_owners(dofmap: &DofMap, n_elements: usize) -> Vec<(usize, usize)> {
    let mut owner = vec![(usize::MAX, 0); dofmap.n_rt()];
    for e in 0..n_elements {
        for i in 0..3 {
            if dofmap.sign(e, i) > 0 {
                owner[dofmap.element_edges(e)[i]] = (e, i);
            }
        }
    }
    owner
}

/// Evaluates `u` and `sigma` of a coefficient vector at barycentric
/// coordinates of an element.
pub(crate) fn eval_pair<T: Scalar>(
    frame: &ElementFrame<T>,
    dofs: &[Option<usize>; 6],
    coef: &[T],
    lambda: [T; 3],
) -> (T, [T; 2], [T; 2], T) {
    let basis = frame.eval(lambda);
    let mut u = T::zero();
    let mut grad = [T::zero(); 2];
    let mut sigma = [T::zero(); 2];
    let mut div = T::zero();
    for i in 0..3 {
        if let Some(d) = dofs[i] {
            let c = coef[d];
            u += c * basis.hat[i];
            grad[0] += c * basis.hat_grad[i][0];
            grad[1] += c * basis.hat_grad[i][1];
        }
        if let Some(d) = dofs[3 + i] {
            let c = coef[d];
            sigma[0] += c * basis.rt[i][0];
            sigma[1] += c * basis.rt[i][1];
            div += c * basis.rt_div[i];
        }
    }
    (u, grad, sigma, div)
}

/// Transfers a coarse coefficient vector to a nested fine mesh so that the
/// represented pair `(u, sigma)` is unchanged.
///
/// H1 dofs are point values of the coarse `u` at fine vertices; edge dofs
/// are normal components of the coarse `sigma` on fine edges, which are
/// constant along each fine edge.
pub fn prolongate<T: Scalar>(
    coarse: (&Mesh<T>, &DofMap),
    fine: (&Mesh<T>, &DofMap),
    coef: &CoefVec<T>,
) -> Result<CoefVec<T>> {
    let (cmesh, cdm) = coarse;
    let (fmesh, fdm) = fine;
    coef.check_len(cdm)?;
    let ancestor = locate_in_coarse(cmesh, fmesh)?;
    let mut out = vec![T::zero(); fdm.n_total()];

    let frames: HashMap<usize, (ElementFrame<T>, [Option<usize>; 6])> = {
        let mut m = HashMap::new();
        for &ce in &ancestor {
            m.entry(ce)
                .or_insert_with(|| (ElementFrame::new(cmesh, cdm, ce), cdm.element_dofs(cmesh, ce)));
        }
        m
    };

    for (fe, t) in fmesh.elements().iter().enumerate() {
        let ce = ancestor[fe];
        let (frame, dofs) = &frames[&ce];
        for &v in t {
            if let Some(d) = fdm.vertex_dof(v) {
                let lambda = cmesh.barycentric(ce, fmesh.vertices()[v]);
                let (u, _, _, _) = eval_pair(frame, dofs, &coef.values, lambda);
                out[d] = u;
            }
        }
    }

    let owners = positive_edge_owners(fdm, fmesh.n_elements());
    let half = T::lit(0.5);
    for (j, &(fe, i)) in owners.iter().enumerate() {
        let ce = ancestor[fe];
        let (frame, dofs) = &frames[&ce];
        let (a, b) = local_edge(&fmesh.elements()[fe], i);
        let (p, q) = (fmesh.vertices()[a], fmesh.vertices()[b]);
        let mid = [(p[0] + q[0]) * half, (p[1] + q[1]) * half];
        let lambda = cmesh.barycentric(ce, mid);
        let (_, _, sigma, _) = eval_pair(frame, dofs, &coef.values, lambda);
        let n = outward_normal(&fmesh.corners(fe), i);
        out[fdm.n_h1() + j] = sigma[0] * n[0] + sigma[1] * n[1];
    }
    Ok(CoefVec::from_vec(out))
}

/// Nodal interpolant of `u` in the H1 block; the edge block is zero.
pub fn nodal_interpolant<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    u: impl Fn(Point<T>) -> T,
) -> CoefVec<T> {
    let mut out = CoefVec::zeros(dofmap.n_total());
    for (v, p) in mesh.vertices().iter().enumerate() {
        if let Some(d) = dofmap.vertex_dof(v) {
            out.values[d] = u(*p);
        }
    }
    out
}

/// Raviart-Thomas interpolant of `tau` in the edge block (edge means of the
/// normal component, by Gauss quadrature); the H1 block is zero.
pub fn rt_interpolant<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    tau: impl Fn(Point<T>) -> [T; 2],
    edge_points: usize,
) -> CoefVec<T> {
    let (ts, ws) = edge_rule(edge_points);
    let mut out = CoefVec::zeros(dofmap.n_total());
    for (j, &(fe, i)) in positive_edge_owners(dofmap, mesh.n_elements()).iter().enumerate() {
        let corners = mesh.corners(fe);
        let n = outward_normal(&corners, i);
        let p = corners[(i + 1) % 3];
        let q = corners[(i + 2) % 3];
        let mut mean = T::zero();
        for (t, w) in ts.iter().zip(&ws) {
            let t = T::lit(*t);
            let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let v = tau(x);
            mean += T::lit(*w) * (v[0] * n[0] + v[1] * n[1]);
        }
        out.values[dofmap.n_h1() + j] = mean;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{builtin_domain, refine_nvb, refine_uniform, BuiltinDomain};

    fn reference() -> Mesh<f64> {
        Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn dof_counts() {
        let sq = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        assert_eq!(DofMap::new(&sq).n_total(), 5);
        let sq1 = refine_uniform(&sq);
        let dm = DofMap::new(&sq1);
        assert_eq!((dm.n_h1(), dm.n_rt(), dm.n_total()), (1, 8, 9));
        let l = builtin_domain::<f64>(BuiltinDomain::LShape);
        assert_eq!(DofMap::new(&l).n_total(), 13);
        assert!(DofMap::with_order(&l, 1).is_err());
    }

    #[test]
    fn shared_edges_have_opposite_signs() {
        let m = refine_nvb(&builtin_domain::<f64>(BuiltinDomain::LShape), &[0, 4]).unwrap();
        let dm = DofMap::new(&m);
        let mut seen: HashMap<usize, Vec<i8>> = HashMap::new();
        for e in 0..m.n_elements() {
            for i in 0..3 {
                seen.entry(dm.element_edges(e)[i]).or_default().push(dm.sign(e, i));
            }
        }
        for (edge, s) in seen {
            match s.len() {
                1 => assert_eq!(s[0], 1, "boundary edge {edge}"),
                2 => assert_eq!(s[0] + s[1], 0, "interior edge {edge}"),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn reference_hat_and_rt() {
        let m = reference();
        let dm = DofMap::new(&m);
        let b = eval_local_basis(&m, &dm, 0, LocalPoint::Physical([0.0, 0.0])).unwrap();
        assert!((b.hat[0] - 1.0).abs() < 1e-15);
        assert_eq!(b.hat_grad[0], [-1.0, -1.0]);
        // local edge 0 is the hypotenuse, opposite vertex (0, 0)
        assert_eq!(dm.sign(0, 0), 1);
        let s2 = 2f64.sqrt();
        assert!((b.rt_div[0] - 2.0 * s2).abs() < 1e-14);
        let c = eval_local_basis(&m, &dm, 0, LocalPoint::Physical([1.0 / 3.0, 1.0 / 3.0])).unwrap();
        assert!((c.rt[0][0] - s2 / 3.0).abs() < 1e-15);
        assert!((c.rt[0][1] - s2 / 3.0).abs() < 1e-15);
        assert!(eval_local_basis(&m, &dm, 0, LocalPoint::Physical([1.0, 1.0])).is_err());
    }

    #[test]
    fn rt_normal_component_is_unit_on_own_edge() {
        let m = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape));
        let dm = DofMap::new(&m);
        for e in 0..m.n_elements() {
            let frame = ElementFrame::new(&m, &dm, e);
            for i in 0..3 {
                let n = outward_normal(&frame.corners, i);
                let mut lambda = [0.25; 3];
                lambda[i] = 0.0;
                lambda[(i + 1) % 3] = 0.3;
                lambda[(i + 2) % 3] = 0.7;
                let b = frame.eval(lambda);
                let flux = b.rt[i][0] * n[0] + b.rt[i][1] * n[1];
                assert!((flux - f64::from(dm.sign(e, i))).abs() < 1e-13);
                // tangential to the other two edges
                for k in 1..3 {
                    let j = (i + k) % 3;
                    let nj = outward_normal(&frame.corners, j);
                    let mut l = [0.0; 3];
                    l[(j + 1) % 3] = 0.4;
                    l[(j + 2) % 3] = 0.6;
                    let bj = frame.eval(l);
                    assert!((bj.rt[i][0] * nj[0] + bj.rt[i][1] * nj[1]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn prolongation_identity_and_zero() {
        let m = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        let dm = DofMap::new(&m);
        let c = CoefVec::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.25]);
        let same = prolongate((&m, &dm), (&m, &dm), &c).unwrap();
        for (a, b) in same.values.iter().zip(&c.values) {
            assert!((a - b).abs() < 1e-14);
        }
        let f = refine_uniform(&m);
        let fdm = DofMap::new(&f);
        let z = prolongate((&m, &dm), (&f, &fdm), &CoefVec::zeros(5)).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(prolongate((&f, &fdm), (&m, &dm), &z).is_err());
    }
}
