//! Galerkin assembly of `b(w, v) = <L w, L v>` and `F(v) = <F, L v>`.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::problems::{eval_data, eval_operator, OperatorValue, Problem, State};
use crate::quadrature::{quadrature_rule, QuadRule};
use crate::scalar::Scalar;
use crate::spaces::{eval_pair, CoefVec, DofMap, ElementFrame, LocalBasis, LocalPoint};
use crate::sparse::{Cholesky, SparseSpd};

pub const DEFAULT_QUAD_ORDER: usize = 4;

/// Assembled least-squares system together with its Cholesky factor, whose
/// existence certifies positive definiteness.
#[derive(Clone, Debug)]
pub struct AssembledSystem<T> {
    pub matrix: SparseSpd<T>,
    pub rhs: Vec<T>,
    pub factor: Cholesky<T>,
}

/// The states of the six local basis functions at one point.
pub(crate) fn basis_states<T: Scalar>(b: &LocalBasis<T>) -> [State<T>; 6] {
    let mut s = [State::zero(); 6];
    for i in 0..3 {
        s[i].u = b.hat[i];
        s[i].grad_u = b.hat_grad[i];
        s[3 + i].sigma = b.rt[i];
        s[3 + i].div_sigma = b.rt_div[i];
    }
    s
}

/// Local matrix and load vector of one element (dense 6 x 6, in local dof
/// order, including dofs that are absent on the boundary).
pub fn element_contributions<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    rule: &QuadRule<T>,
    elem: usize,
) -> ([[T; 6]; 6], [T; 6]) {
    let frame = ElementFrame::new(mesh, dofmap, elem);
    let mut k = [[T::zero(); 6]; 6];
    let mut f = [T::zero(); 6];
    for (lambda, &w) in rule.points.iter().zip(&rule.weights) {
        let basis = frame.eval(*lambda);
        let wq = w * frame.area;
        let states = basis_states(&basis);
        let l: [OperatorValue<T>; 6] =
            std::array::from_fn(|a| eval_operator(problem, basis.x, &states[a]));
        let data = eval_data(problem, basis.x);
        for a in 0..6 {
            f[a] += wq * data.dot(&l[a]);
            for b in a..6 {
                k[a][b] += wq * l[a].dot(&l[b]);
            }
        }
    }
    for a in 0..6 {
        for b in 0..a {
            k[a][b] = k[b][a];
        }
    }
    (k, f)
}

/// Sparsity pattern: dof pairs sharing an element.
pub fn system_pattern<T: Scalar>(mesh: &Mesh<T>, dofmap: &DofMap) -> SparseSpd<T> {
    let mut rows = vec![Vec::new(); dofmap.n_total()];
    for e in 0..mesh.n_elements() {
        let dofs: Vec<usize> = dofmap.element_dofs(mesh, e).iter().flatten().copied().collect();
        for &i in &dofs {
            rows[i].extend_from_slice(&dofs);
        }
    }
    SparseSpd::with_pattern(dofmap.n_total(), rows)
}

/// Assembles and factors the system. Accumulation runs over elements in
/// index order, then local dofs in order, so the result is reproducible
/// bit for bit.
pub fn assemble_system<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    quad_order: usize,
) -> Result<AssembledSystem<T>> {
    if quad_order < 2 {
        return Err(Error::Argument(format!(
            "assembly needs quadrature order >= 2, got {quad_order}"
        )));
    }
    let rule = quadrature_rule::<T>(quad_order)?;
    let mut matrix = system_pattern(mesh, dofmap);
    let mut rhs = vec![T::zero(); dofmap.n_total()];
    for e in 0..mesh.n_elements() {
        let dofs = dofmap.element_dofs(mesh, e);
        let (k, f) = element_contributions(mesh, dofmap, problem, &rule, e);
        for a in 0..6 {
            let Some(i) = dofs[a] else { continue };
            rhs[i] += f[a];
            for b in 0..6 {
                if let Some(j) = dofs[b] {
                    matrix.add(i, j, k[a][b]);
                }
            }
        }
    }
    let factor = Cholesky::factor(&matrix)
        .map_err(|e| Error::Assembly(format!("least-squares matrix is not positive definite: {e}")))?;
    Ok(AssembledSystem {
        matrix,
        rhs,
        factor,
    })
}

/// Pointwise reconstruction of `(u, grad u, sigma, div sigma)`.
pub fn eval_discrete<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    coef: &CoefVec<T>,
    elem: usize,
    point: LocalPoint<T>,
) -> Result<State<T>> {
    coef.check_len(dofmap)?;
    // validates the element index and the point
    let basis = crate::spaces::eval_local_basis(mesh, dofmap, elem, point)?;
    let frame = ElementFrame::new(mesh, dofmap, elem);
    let dofs = dofmap.element_dofs(mesh, elem);
    let (u, grad_u, sigma, div_sigma) = eval_pair(&frame, &dofs, &coef.values, basis.hat);
    Ok(State {
        u,
        grad_u,
        sigma,
        div_sigma,
    })
}
