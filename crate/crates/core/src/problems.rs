//! First-order least-squares operators for second-order elliptic problems.
//!
//! A problem `-div(A grad u) + b . grad u + c u = f` with homogeneous
//! Dirichlet data is rewritten for the pair `(u, sigma)` as
//!
//! ```text
//! L(u, sigma) = ( -div sigma + b . grad u + c u ,  A grad u - sigma )
//! F           = ( f , 0 )
//! ```
//!
//! Poisson is the special case `A = I, b = 0, c = 0`; Helmholtz uses
//! `c = -omega^2`.

use std::fmt;
use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::scalar::Scalar;

pub type ScalarField<T> = Arc<dyn Fn(Point<T>) -> T + Send + Sync>;
pub type VectorField<T> = Arc<dyn Fn(Point<T>) -> [T; 2] + Send + Sync>;
pub type MatrixField<T> = Arc<dyn Fn(Point<T>) -> [[T; 2]; 2] + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Poisson,
    General,
}

/// Pointwise state of a pair `(u, sigma)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct State<T> {
    pub u: T,
    pub grad_u: [T; 2],
    pub sigma: [T; 2],
    pub div_sigma: T,
}

impl<T: Scalar> State<T> {
    pub fn zero() -> Self {
        State {
            u: T::zero(),
            grad_u: [T::zero(); 2],
            sigma: [T::zero(); 2],
            div_sigma: T::zero(),
        }
    }

    pub fn scale_add(self, alpha: T, other: Self, beta: T) -> Self {
        State {
            u: alpha * self.u + beta * other.u,
            grad_u: [
                alpha * self.grad_u[0] + beta * other.grad_u[0],
                alpha * self.grad_u[1] + beta * other.grad_u[1],
            ],
            sigma: [
                alpha * self.sigma[0] + beta * other.sigma[0],
                alpha * self.sigma[1] + beta * other.sigma[1],
            ],
            div_sigma: alpha * self.div_sigma + beta * other.div_sigma,
        }
    }
}

/// Value of `L v` or `F` at a point: scalar equation entry, then the two
/// vector entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OperatorValue<T> {
    pub components: [T; 3],
}

impl<T: Scalar> OperatorValue<T> {
    pub fn norm_sqr(&self) -> T {
        self.components.iter().map(|&c| c * c).sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        (0..3).map(|i| self.components[i] * other.components[i]).sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        OperatorValue {
            components: [
                self.components[0] - other.components[0],
                self.components[1] - other.components[1],
                self.components[2] - other.components[2],
            ],
        }
    }
}

#[derive(Clone)]
pub struct ExactSolution<T> {
    pub u: ScalarField<T>,
    pub grad_u: VectorField<T>,
    /// `A grad u`.
    pub sigma: VectorField<T>,
    pub div_sigma: ScalarField<T>,
}

impl<T: Scalar> ExactSolution<T> {
    pub fn state(&self, x: Point<T>) -> State<T> {
        State {
            u: (self.u)(x),
            grad_u: (self.grad_u)(x),
            sigma: (self.sigma)(x),
            div_sigma: (self.div_sigma)(x),
        }
    }
}

#[derive(Clone)]
pub struct Problem<T> {
    pub kind: ProblemKind,
    pub name: String,
    pub a: MatrixField<T>,
    pub b: VectorField<T>,
    pub c: ScalarField<T>,
    pub f: ScalarField<T>,
    pub exact: Option<ExactSolution<T>>,
}

impl<T> fmt::Debug for Problem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

/// `L(state)` at `x`.
pub fn eval_operator<T: Scalar>(problem: &Problem<T>, x: Point<T>, state: &State<T>) -> OperatorValue<T> {
    match problem.kind {
        ProblemKind::Poisson => OperatorValue {
            components: [
                -state.div_sigma,
                state.grad_u[0] - state.sigma[0],
                state.grad_u[1] - state.sigma[1],
            ],
        },
        ProblemKind::General => {
            let a = (problem.a)(x);
            let b = (problem.b)(x);
            let c = (problem.c)(x);
            let g = state.grad_u;
            OperatorValue {
                components: [
                    -state.div_sigma + b[0] * g[0] + b[1] * g[1] + c * state.u,
                    a[0][0] * g[0] + a[0][1] * g[1] - state.sigma[0],
                    a[1][0] * g[0] + a[1][1] * g[1] - state.sigma[1],
                ],
            }
        }
    }
}

/// `F` at `x`, i.e. `(f(x), 0, 0)`.
pub fn eval_data<T: Scalar>(problem: &Problem<T>, x: Point<T>) -> OperatorValue<T> {
    OperatorValue {
        components: [(problem.f)(x), T::zero(), T::zero()],
    }
}

/// Built-in closed-form solutions used to manufacture data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manufactured {
    /// `x (1 - x) y (1 - y)`, zero on the boundary of the unit square.
    Bubble,
    /// `sin(pi x) sin(pi y)`, zero on the boundary of the unit square and
    /// of the L-shaped domain.
    Sine,
    /// `u = 0`.
    Zero,
}

struct Closed<T> {
    u: T,
    grad: [T; 2],
    hess: [[T; 2]; 2],
}

fn closed_form<T: Scalar>(m: Manufactured, p: Point<T>) -> Closed<T> {
    let (x, y) = (p[0], p[1]);
    let one = T::one();
    let two = T::lit(2.0);
    match m {
        Manufactured::Bubble => {
            let gx = x * (one - x);
            let gy = y * (one - y);
            let dx = one - two * x;
            let dy = one - two * y;
            Closed {
                u: gx * gy,
                grad: [dx * gy, gx * dy],
                hess: [[-two * gy, dx * dy], [dx * dy, -two * gx]],
            }
        }
        Manufactured::Sine => {
            let pi = T::lit(std::f64::consts::PI);
            let (sx, cx) = (pi * x).sin_cos();
            let (sy, cy) = (pi * y).sin_cos();
            let pi2 = pi * pi;
            Closed {
                u: sx * sy,
                grad: [pi * cx * sy, pi * sx * cy],
                hess: [[-pi2 * sx * sy, pi2 * cx * cy], [pi2 * cx * cy, -pi2 * sx * sy]],
            }
        }
        Manufactured::Zero => Closed {
            u: T::zero(),
            grad: [T::zero(); 2],
            hess: [[T::zero(); 2]; 2],
        },
    }
}

/// A coefficient given either as a number or as an expression in `x`, `y`
/// (and the constant `pi`), e.g. `"2 + math::sin(pi * x)"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSpec {
    Number(f64),
    Expr(String),
}

impl CoefSpec {
    fn constant(&self) -> Option<f64> {
        match self {
            CoefSpec::Number(v) => Some(*v),
            CoefSpec::Expr(s) => s.trim().parse::<f64>().ok(),
        }
    }

    fn compile<T: Scalar>(&self, key: &str) -> Result<ScalarField<T>> {
        if let Some(v) = self.constant() {
            let v = T::lit(v);
            return Ok(Arc::new(move |_| v));
        }
        let CoefSpec::Expr(src) = self else { unreachable!() };
        let tree: Node<DefaultNumericTypes> = evalexpr::build_operator_tree(src)
            .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{src}`: {e}")))?;
        let field = ExprField { tree: Arc::new(tree) };
        // evaluate once so unknown identifiers surface at parse time
        field
            .eval(0.25, 0.25)
            .map_err(|e| Error::Config(format!("`{key}`: cannot evaluate `{src}`: {e}")))?;
        Ok(Arc::new(move |p: Point<T>| {
            T::lit(field.eval(p[0].as_f64(), p[1].as_f64()).unwrap_or(f64::NAN))
        }))
    }
}

struct ExprField {
    tree: Arc<Node<DefaultNumericTypes>>,
}

impl ExprField {
    fn eval(&self, x: f64, y: f64) -> std::result::Result<f64, String> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (k, v) in [("x", x), ("y", y), ("pi", std::f64::consts::PI)] {
            ctx.set_value(k.into(), Value::Float(v)).map_err(|e| e.to_string())?;
        }
        self.tree.eval_number_with_context(&ctx).map_err(|e| e.to_string())
    }
}

/// Declarative problem description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Load; mutually exclusive with `manufactured`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<CoefSpec>,
    /// Derive `f` and the exact solution from a closed-form `u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<Manufactured>,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<[[CoefSpec; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[CoefSpec; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<CoefSpec>,
    /// Helmholtz shorthand for `c = -omega^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

impl ProblemSpec {
    pub fn poisson_load(f: CoefSpec) -> Self {
        ProblemSpec {
            kind: ProblemKind::Poisson,
            f: Some(f),
            manufactured: None,
            a: None,
            b: None,
            c: None,
            omega: None,
        }
    }

    pub fn poisson_manufactured(m: Manufactured) -> Self {
        ProblemSpec {
            f: None,
            manufactured: Some(m),
            ..Self::poisson_load(CoefSpec::Number(0.0))
        }
    }

    pub fn helmholtz(omega: f64, load: Option<CoefSpec>, manufactured: Option<Manufactured>) -> Self {
        ProblemSpec {
            kind: ProblemKind::General,
            f: load,
            manufactured,
            a: None,
            b: None,
            c: None,
            omega: Some(omega),
        }
    }
}

/// Sample points on which coefficient definiteness is checked; they cover
/// both built-in domains.
fn sample_points<T: Scalar>() -> Vec<Point<T>> {
    let n = 11;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let y = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
            pts.push([T::lit(x), T::lit(y)]);
        }
    }
    pts
}

/// Builds evaluators from a specification, deriving `f` and the exact
/// solution for manufactured cases.
pub fn make_problem<T: Scalar>(spec: &ProblemSpec) -> Result<Problem<T>> {
    let zero = CoefSpec::Number(0.0);
    let one = CoefSpec::Number(1.0);
    if spec.kind == ProblemKind::Poisson
        && (spec.a.is_some() || spec.b.is_some() || spec.c.is_some() || spec.omega.is_some())
    {
        return Err(Error::Config(
            "poisson problems take no `A`, `b`, `c` or `omega`; use kind = \"general\"".into(),
        ));
    }
    if spec.c.is_some() && spec.omega.is_some() {
        return Err(Error::Config("`c` and `omega` are mutually exclusive".into()));
    }
    let a_spec = spec
        .a
        .clone()
        .unwrap_or([[one.clone(), zero.clone()], [zero.clone(), one.clone()]]);
    let b_spec = spec.b.clone().unwrap_or([zero.clone(), zero.clone()]);
    let c_spec = match (spec.omega, &spec.c) {
        (Some(w), _) => CoefSpec::Number(-w * w),
        (None, Some(c)) => c.clone(),
        (None, None) => zero.clone(),
    };

    let a_fields = [
        [a_spec[0][0].compile::<T>("A[0][0]")?, a_spec[0][1].compile::<T>("A[0][1]")?],
        [a_spec[1][0].compile::<T>("A[1][0]")?, a_spec[1][1].compile::<T>("A[1][1]")?],
    ];
    for p in sample_points::<T>() {
        let m = [
            [(a_fields[0][0])(p), (a_fields[0][1])(p)],
            [(a_fields[1][0])(p), (a_fields[1][1])(p)],
        ];
        let scale = T::one().max(m[0][1].abs());
        if (m[0][1] - m[1][0]).abs() > T::lit(1e-12) * scale {
            return Err(Error::Config(format!("coefficient `A` is not symmetric at {p:?}")));
        }
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = ((tr * tr) * T::lit(0.25) - det).max(T::zero()).sqrt();
        let lmin = tr * T::lit(0.5) - disc;
        if !(lmin > T::lit(1e-12)) {
            return Err(Error::Config(format!(
                "coefficient `A` is not positive definite at {p:?} (smallest eigenvalue {lmin})"
            )));
        }
    }
    let a: MatrixField<T> = {
        let [[a00, a01], [a10, a11]] = a_fields;
        Arc::new(move |p| [[a00(p), a01(p)], [a10(p), a11(p)]])
    };
    let b: VectorField<T> = {
        let b0 = b_spec[0].compile::<T>("b[0]")?;
        let b1 = b_spec[1].compile::<T>("b[1]")?;
        Arc::new(move |p| [b0(p), b1(p)])
    };
    let c = c_spec.compile::<T>("c")?;

    let (f, exact, name) = match (&spec.f, spec.manufactured) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("`f` and `manufactured` are mutually exclusive".into()))
        }
        (None, None) => return Err(Error::Config("one of `f` or `manufactured` is required".into())),
        (Some(f), None) => (f.compile::<T>("f")?, None, "load".to_string()),
        (None, Some(m)) => {
            let constant = |s: &CoefSpec, key: &str| {
                s.constant().map(T::lit).ok_or_else(|| {
                    Error::Config(format!("manufactured solutions need a constant `{key}`"))
                })
            };
            let ac = [
                [constant(&a_spec[0][0], "A")?, constant(&a_spec[0][1], "A")?],
                [constant(&a_spec[1][0], "A")?, constant(&a_spec[1][1], "A")?],
            ];
            let bc = [constant(&b_spec[0], "b")?, constant(&b_spec[1], "b")?];
            let cc = constant(&c_spec, "c")?;
            let exact = manufactured_solution(m, ac);
            let ex = exact.clone();
            let f: ScalarField<T> = Arc::new(move |p| {
                let g = (ex.grad_u)(p);
                -(ex.div_sigma)(p) + bc[0] * g[0] + bc[1] * g[1] + cc * (ex.u)(p)
            });
            (f, Some(exact), format!("{m:?}").to_lowercase())
        }
    };
    Ok(Problem {
        kind: spec.kind,
        name,
        a,
        b,
        c,
        f,
        exact,
    })
}

/// Exact pair `(u, A grad u)` for a closed-form `u` and constant `A`.
pub fn manufactured_solution<T: Scalar>(m: Manufactured, a: [[T; 2]; 2]) -> ExactSolution<T> {
    ExactSolution {
        u: Arc::new(move |p| closed_form(m, p).u),
        grad_u: Arc::new(move |p| closed_form(m, p).grad),
        sigma: Arc::new(move |p| {
            let g = closed_form(m, p).grad;
            [a[0][0] * g[0] + a[0][1] * g[1], a[1][0] * g[0] + a[1][1] * g[1]]
        }),
        div_sigma: Arc::new(move |p| {
            let h = closed_form(m, p).hess;
            a[0][0] * h[0][0] + a[0][1] * h[1][0] + a[1][0] * h[0][1] + a[1][1] * h[1][1]
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(u: f64, g: [f64; 2], s: [f64; 2], d: f64) -> State<f64> {
        State {
            u,
            grad_u: g,
            sigma: s,
            div_sigma: d,
        }
    }

    #[test]
    fn bubble_load() {
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
        assert!(((p.f)([0.5, 0.5]) - 1.0).abs() < 1e-15);
        let x = [0.3, 0.7];
        let expected = 2.0 * (0.7 * 0.3 + 0.3 * 0.7);
        assert!(((p.f)(x) - expected).abs() < 1e-15);
        assert_eq!(eval_data(&p, [0.5, 0.5]).components, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn helmholtz_below_first_eigenvalue_is_valid() {
        let spec = ProblemSpec::helmholtz(3.0, Some(CoefSpec::Expr("1".into())), None);
        let p = make_problem::<f64>(&spec).unwrap();
        assert_eq!((p.c)([0.1, 0.2]), -9.0);
        assert!(9.0 < 2.0 * std::f64::consts::PI.powi(2));
    }

    #[test]
    fn indefinite_a_rejected() {
        let mut spec = ProblemSpec::poisson_load(CoefSpec::Number(1.0));
        spec.kind = ProblemKind::General;
        spec.a = Some([
            [CoefSpec::Number(1.0), CoefSpec::Number(0.0)],
            [CoefSpec::Number(0.0), CoefSpec::Number(-1.0)],
        ]);
        assert!(matches!(make_problem::<f64>(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_specs_rejected() {
        let mut spec = ProblemSpec::poisson_load(CoefSpec::Expr("x +* 2".into()));
        assert!(make_problem::<f64>(&spec).is_err());
        spec.f = Some(CoefSpec::Expr("z".into()));
        assert!(make_problem::<f64>(&spec).is_err());
        spec.f = None;
        assert!(make_problem::<f64>(&spec).is_err());
        let mut poisson_with_c = ProblemSpec::poisson_load(CoefSpec::Number(1.0));
        poisson_with_c.c = Some(CoefSpec::Number(1.0));
        assert!(make_problem::<f64>(&poisson_with_c).is_err());
    }

    #[test]
    fn expression_load() {
        let p = make_problem::<f64>(&ProblemSpec::poisson_load(CoefSpec::Expr(
            "x * y + math::sin(pi * x)".into(),
        )))
        .unwrap();
        let v = (p.f)([0.5, 2.0]);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn operator_examples() {
        let p = make_problem::<f64>(&ProblemSpec::poisson_load(CoefSpec::Number(1.0))).unwrap();
        assert_eq!(eval_operator(&p, [0.1, 0.1], &State::zero()).components, [0.0; 3]);
        let v = eval_operator(&p, [0.1, 0.1], &state(1.0, [2.0, 0.0], [2.0, 0.0], 5.0));
        assert_eq!(v.components, [-5.0, 0.0, 0.0]);

        let mut spec = ProblemSpec::poisson_load(CoefSpec::Number(1.0));
        spec.kind = ProblemKind::General;
        spec.b = Some([CoefSpec::Number(1.0), CoefSpec::Number(0.0)]);
        spec.c = Some(CoefSpec::Number(2.0));
        let g = make_problem::<f64>(&spec).unwrap();
        let v = eval_operator(&g, [0.1, 0.1], &state(3.0, [1.0, 1.0], [0.0, 0.0], 0.0));
        assert_eq!(v.components, [7.0, 1.0, 1.0]);
    }

    #[test]
    fn manufactured_general_is_consistent() {
        let mut spec = ProblemSpec::poisson_manufactured(Manufactured::Sine);
        spec.kind = ProblemKind::General;
        spec.a = Some([
            [CoefSpec::Number(2.0), CoefSpec::Number(0.5)],
            [CoefSpec::Number(0.5), CoefSpec::Number(1.0)],
        ]);
        spec.b = Some([CoefSpec::Number(1.0), CoefSpec::Number(-0.5)]);
        spec.c = Some(CoefSpec::Number(0.3));
        let p = make_problem::<f64>(&spec).unwrap();
        let exact = p.exact.clone().unwrap();
        // finite-difference oracle for div sigma = div(A grad u)
        let h = 1e-5;
        for &x in &[[0.2, 0.3], [0.7, 0.45], [0.5, 0.9]] {
            let s = |q: [f64; 2]| (exact.sigma)(q);
            let div = (s([x[0] + h, x[1]])[0] - s([x[0] - h, x[1]])[0]) / (2.0 * h)
                + (s([x[0], x[1] + h])[1] - s([x[0], x[1] - h])[1]) / (2.0 * h);
            assert!((div - (exact.div_sigma)(x)).abs() < 1e-6);
            let st = exact.state(x);
            let r = eval_data(&p, x).sub(&eval_operator(&p, x, &st));
            assert!(r.norm_sqr().sqrt() < 1e-12);
        }
    }
}
