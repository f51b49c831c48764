//! Conforming triangulations and newest vertex bisection.
//!
//! Elements are stored as counter-clockwise vertex triples. The refinement
//! edge of an element is the edge between its first two vertices, so the
//! third vertex is the "newest" one. Bisecting `[a, b, c]` through the
//! midpoint `m` of `a-b` yields the children `[c, a, m]` and `[b, c, m]`,
//! whose refinement edges are the two remaining edges of the parent.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Point<T> = [T; 2];

/// Unordered edge key `(min, max)`.
pub type EdgeKey = (usize, usize);

#[inline]
pub fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local edge `i` of an element is the edge opposite local vertex `i`.
#[inline]
pub fn local_edge(tri: &[usize; 3], i: usize) -> (usize, usize) {
    (tri[(i + 1) % 3], tri[(i + 2) % 3])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh<T> {
    vertices: Vec<Point<T>>,
    elements: Vec<[usize; 3]>,
    parent: Vec<Option<usize>>,
    generation: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry<T> {
    pub area: T,
    /// Local mesh size `area^(1/2)`.
    pub h: T,
    pub diam: T,
    /// Smallest interior angle in radians.
    pub min_angle: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDomain {
    UnitSquare,
    LShape,
}

impl FromStr for BuiltinDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_square" => Ok(BuiltinDomain::UnitSquare),
            "l_shape" => Ok(BuiltinDomain::LShape),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

impl BuiltinDomain {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinDomain::UnitSquare => "unit_square",
            BuiltinDomain::LShape => "l_shape",
        }
    }
}

/// Initial mesh of a built-in domain.
///
/// Every initial refinement edge is the longest edge of its element; in both
/// fixtures the diagonals are shared refinement edges of neighbouring pairs.
pub fn builtin_domain<T: Scalar>(domain: BuiltinDomain) -> Mesh<T> {
    let (coords, tris): (&[[f64; 2]], &[[usize; 3]]) = match domain {
        BuiltinDomain::UnitSquare => (
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            &[[0, 1, 2], [0, 2, 3]],
        ),
        BuiltinDomain::LShape => (
            &[
                [-1.0, -1.0],
                [0.0, -1.0],
                [-1.0, 0.0],
                [0.0, 0.0],
                [1.0, 0.0],
                [-1.0, 1.0],
                [0.0, 1.0],
                [1.0, 1.0],
            ],
            &[
                [0, 1, 3],
                [0, 3, 2],
                [2, 3, 5],
                [3, 6, 5],
                [3, 4, 7],
                [3, 7, 6],
            ],
        ),
    };
    let vertices: Vec<Point<T>> = coords.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect();
    let elements = tris
        .iter()
        .map(|t| rotate_to_longest_edge(&vertices, *t))
        .collect();
    Mesh::new(vertices, elements).expect("built-in fixture is valid")
}

/// Cyclically rotates `tri` so that its longest edge comes first.
/// Ties are broken by the lexicographically smallest sorted vertex pair.
pub fn rotate_to_longest_edge<T: Scalar>(vertices: &[Point<T>], tri: [usize; 3]) -> [usize; 3] {
    let mut best = 0;
    let mut best_len = T::neg_infinity();
    let mut best_key = (usize::MAX, usize::MAX);
    for r in 0..3 {
        let (a, b) = (tri[r], tri[(r + 1) % 3]);
        let len = dist2(&vertices[a], &vertices[b]);
        let key = edge_key(a, b);
        if len > best_len || (len == best_len && key < best_key) {
            best = r;
            best_len = len;
            best_key = key;
        }
    }
    [tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]
}

#[inline]
fn dist2<T: Scalar>(p: &Point<T>, q: &Point<T>) -> T {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    dx * dx + dy * dy
}

#[inline]
fn signed_area<T: Scalar>(p: &Point<T>, q: &Point<T>, r: &Point<T>) -> T {
    ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])) * T::lit(0.5)
}

impl<T: Scalar> Mesh<T> {
    /// Builds an initial (generation 0) mesh. Rejects out-of-range indices
    /// and elements without strictly positive signed area.
    pub fn new(vertices: Vec<Point<T>>, elements: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::MeshValidity(format!(
                    "element {e} references a vertex outside 0..{nv}"
                )));
            }
            let area = signed_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(area > T::zero()) {
                return Err(Error::MeshValidity(format!(
                    "element {e} has non-positive signed area {area}"
                )));
            }
        }
        let parent = vec![None; elements.len()];
        Ok(Mesh {
            vertices,
            elements,
            parent,
            generation: 0,
        })
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    /// Index of the element of the previous mesh this element came from.
    pub fn parent(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    #[inline]
    pub fn corners(&self, elem: usize) -> [Point<T>; 3] {
        let t = &self.elements[elem];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    #[inline]
    pub fn area(&self, elem: usize) -> T {
        let [p, q, r] = self.corners(elem);
        signed_area(&p, &q, &r)
    }

    pub fn check_element(&self, elem: usize) -> Result<()> {
        if elem >= self.elements.len() {
            return Err(Error::Argument(format!(
                "element index {elem} out of range 0..{}",
                self.elements.len()
            )));
        }
        Ok(())
    }

    /// Maps a point to barycentric coordinates of `elem`.
    pub fn barycentric(&self, elem: usize, x: Point<T>) -> [T; 3] {
        let [p0, p1, p2] = self.corners(elem);
        let twice = signed_area(&p0, &p1, &p2) * T::lit(2.0);
        let l1 = ((x[0] - p0[0]) * (p2[1] - p0[1]) - (x[1] - p0[1]) * (p2[0] - p0[0])) / twice;
        let l2 = ((p1[0] - p0[0]) * (x[1] - p0[1]) - (p1[1] - p0[1]) * (x[0] - p0[0])) / twice;
        [T::one() - l1 - l2, l1, l2]
    }

    pub fn from_barycentric(&self, elem: usize, lambda: [T; 3]) -> Point<T> {
        let c = self.corners(elem);
        [
            lambda[0] * c[0][0] + lambda[1] * c[1][0] + lambda[2] * c[2][0],
            lambda[0] * c[0][1] + lambda[1] * c[1][1] + lambda[2] * c[2][1],
        ]
    }

    pub fn centroid(&self, elem: usize) -> Point<T> {
        let third = T::one() / T::lit(3.0);
        self.from_barycentric(elem, [third; 3])
    }

    /// All unique edges, sorted by vertex pair.
    pub fn edges(&self) -> Vec<EdgeKey> {
        let set: BTreeSet<EdgeKey> = self
            .elements
            .iter()
            .flat_map(|t| (0..3).map(move |i| {
                let (a, b) = local_edge(t, i);
                edge_key(a, b)
            }))
            .collect();
        set.into_iter().collect()
    }

    /// Elements adjacent to each edge (one entry for boundary edges).
    pub fn edge_elements(&self) -> HashMap<EdgeKey, Vec<usize>> {
        let mut map: HashMap<EdgeKey, Vec<usize>> = HashMap::with_capacity(self.elements.len() * 2);
        for (e, t) in self.elements.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = local_edge(t, i);
                map.entry(edge_key(a, b)).or_default().push(e);
            }
        }
        map
    }

    /// Elements incident to each vertex, in ascending order.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (e, t) in self.elements.iter().enumerate() {
            for &v in t {
                adj[v].push(e);
            }
        }
        adj
    }

    /// Serializes to the plain text mesh format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.vertices.len(), self.elements.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{} {}", p[0].as_f64(), p[1].as_f64());
        }
        for t in &self.elements {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    /// Parses the plain text mesh format. The result is a generation-0 mesh.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::MeshValidity(format!("mesh text: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let counts: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("header `{header}`: {e}")))?;
        let [nv, nt] = counts[..] else {
            return Err(bad(format!("header `{header}` must be `nv nt`")));
        };
        let mut vertices = Vec::with_capacity(nv);
        for k in 0..nv {
            let line = lines.next().ok_or_else(|| bad(format!("missing vertex line {k}")))?;
            let xs: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("vertex line {k}: {e}")))?;
            let [x, y] = xs[..] else {
                return Err(bad(format!("vertex line {k} must hold two numbers")));
            };
            vertices.push([T::lit(x), T::lit(y)]);
        }
        let mut elements = Vec::with_capacity(nt);
        for k in 0..nt {
            let line = lines.next().ok_or_else(|| bad(format!("missing element line {k}")))?;
            let ix: Vec<usize> = line
                .split_whitespace()
                .map(str::parse::<usize>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("element line {k}: {e}")))?;
            let [a, b, c] = ix[..] else {
                return Err(bad(format!("element line {k} must hold three indices")));
            };
            elements.push([a, b, c]);
        }
        if let Some(extra) = lines.next() {
            return Err(bad(format!("trailing data `{extra}`")));
        }
        Mesh::new(vertices, elements)
    }
}

/// Newest vertex bisection with closure.
///
/// Marks the refinement edge of every marked element, closes the edge set
/// under "an element with a marked edge has its refinement edge marked", then
/// bisects each element recursively along marked edges. New vertices are
/// numbered after the existing ones in sorted edge order; elements appear in
/// the order of their parents.
pub fn refine_nvb<T: Scalar>(mesh: &Mesh<T>, marked: &[usize]) -> Result<Mesh<T>> {
    for &m in marked {
        mesh.check_element(m)?;
    }
    let edge_elems = mesh.edge_elements();
    let mut marked_edges: HashSet<EdgeKey> = HashSet::new();
    let mut queue: VecDeque<EdgeKey> = VecDeque::new();
    for &m in marked {
        let t = &mesh.elements[m];
        let key = edge_key(t[0], t[1]);
        if marked_edges.insert(key) {
            queue.push_back(key);
        }
    }
    while let Some(edge) = queue.pop_front() {
        for &e in &edge_elems[&edge] {
            let t = &mesh.elements[e];
            let key = edge_key(t[0], t[1]);
            if marked_edges.insert(key) {
                queue.push_back(key);
            }
        }
    }

    let sorted: BTreeSet<EdgeKey> = marked_edges.into_iter().collect();
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<EdgeKey, usize> = HashMap::with_capacity(sorted.len());
    let half = T::lit(0.5);
    for &(a, b) in &sorted {
        midpoint.insert((a, b), vertices.len());
        let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
        vertices.push([(p[0] + q[0]) * half, (p[1] + q[1]) * half]);
    }

    let mut elements = Vec::with_capacity(mesh.elements.len() + 2 * sorted.len());
    let mut parent = Vec::with_capacity(elements.capacity());
    for (e, t) in mesh.elements.iter().enumerate() {
        let before = elements.len();
        bisect_into(*t, &midpoint, &mut elements);
        parent.extend(std::iter::repeat_n(Some(e), elements.len() - before));
    }
    Ok(Mesh {
        vertices,
        elements,
        parent,
        generation: mesh.generation + 1,
    })
}

fn bisect_into(tri: [usize; 3], midpoint: &HashMap<EdgeKey, usize>, out: &mut Vec<[usize; 3]>) {
    let [a, b, c] = tri;
    match midpoint.get(&edge_key(a, b)) {
        None => out.push(tri),
        Some(&m) => {
            bisect_into([c, a, m], midpoint, out);
            bisect_into([b, c, m], midpoint, out);
        }
    }
}

/// Mesh with every element marked once.
pub fn refine_uniform<T: Scalar>(mesh: &Mesh<T>) -> Mesh<T> {
    let all: Vec<usize> = (0..mesh.n_elements()).collect();
    refine_nvb(mesh, &all).expect("all indices valid")
}

/// Elements sharing at least one vertex with `elem`, including itself.
pub fn patch<T: Scalar>(mesh: &Mesh<T>, elem: usize) -> Result<Vec<usize>> {
    mesh.check_element(elem)?;
    Ok(patch_with(&mesh.vertex_elements(), &mesh.elements[elem]))
}

/// Patch lookup against a precomputed vertex-to-element table.
pub fn patch_with(vertex_elements: &[Vec<usize>], tri: &[usize; 3]) -> Vec<usize> {
    let set: BTreeSet<usize> = tri
        .iter()
        .flat_map(|&v| vertex_elements[v].iter().copied())
        .collect();
    set.into_iter().collect()
}

pub fn element_geometry<T: Scalar>(mesh: &Mesh<T>, elem: usize) -> Result<ElementGeometry<T>> {
    mesh.check_element(elem)?;
    let c = mesh.corners(elem);
    let area = signed_area(&c[0], &c[1], &c[2]);
    if !(area > T::zero()) {
        return Err(Error::MeshValidity(format!(
            "element {elem} is degenerate (area {area})"
        )));
    }
    let mut diam = T::zero();
    let mut min_angle = T::infinity();
    for i in 0..3 {
        let p = c[i];
        let u = [c[(i + 1) % 3][0] - p[0], c[(i + 1) % 3][1] - p[1]];
        let v = [c[(i + 2) % 3][0] - p[0], c[(i + 2) % 3][1] - p[1]];
        let lu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let lv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        diam = diam.max(lu);
        let cos = ((u[0] * v[0] + u[1] * v[1]) / (lu * lv)).max(-T::one()).min(T::one());
        min_angle = min_angle.min(cos.acos());
    }
    Ok(ElementGeometry {
        area,
        h: area.sqrt(),
        diam,
        min_angle,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub conformity_violations: Vec<String>,
    pub inverted_elements: Vec<usize>,
    pub orphan_vertices: Vec<usize>,
    /// Largest `diam^2 / area` over all non-inverted elements.
    pub max_shape_ratio: f64,
    pub min_angle: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.conformity_violations.is_empty()
            && self.inverted_elements.is_empty()
            && self.orphan_vertices.is_empty()
    }
}

/// Report-only structural check of a mesh.
///
/// Conformity is checked edge-wise: no edge may carry more than two
/// elements, two elements sharing an edge must traverse it in opposite
/// directions, and no vertex may sit at the midpoint of a single-element
/// edge (a hanging node in bisection meshes).
pub fn validate<T: Scalar>(mesh: &Mesh<T>) -> ValidationReport {
    let mut report = ValidationReport {
        min_angle: f64::INFINITY,
        ..Default::default()
    };

    let mut seen = HashSet::new();
    for (e, t) in mesh.elements.iter().enumerate() {
        let mut s = *t;
        s.sort_unstable();
        if !seen.insert(s) {
            report
                .conformity_violations
                .push(format!("element {e} duplicates vertices {s:?}"));
        }
    }

    let mut directed: HashMap<EdgeKey, Vec<(usize, bool)>> = HashMap::new();
    for (e, t) in mesh.elements.iter().enumerate() {
        for i in 0..3 {
            let (a, b) = local_edge(t, i);
            directed.entry(edge_key(a, b)).or_default().push((e, a < b));
        }
    }
    let vertex_lookup: HashMap<(u64, u64), usize> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0].as_f64().to_bits(), p[1].as_f64().to_bits()), i))
        .collect();
    let mut keys: Vec<&EdgeKey> = directed.keys().collect();
    keys.sort_unstable();
    let half = T::lit(0.5);
    for key in keys {
        let users = &directed[key];
        match users.len() {
            1 => {
                let (p, q) = (mesh.vertices[key.0], mesh.vertices[key.1]);
                let mid = [(p[0] + q[0]) * half, (p[1] + q[1]) * half];
                let bits = (mid[0].as_f64().to_bits(), mid[1].as_f64().to_bits());
                if let Some(v) = vertex_lookup.get(&bits) {
                    report.conformity_violations.push(format!(
                        "hanging vertex {v} on edge {key:?} of element {}",
                        users[0].0
                    ));
                }
            }
            2 => {
                if users[0].1 == users[1].1 {
                    report.conformity_violations.push(format!(
                        "elements {} and {} traverse edge {key:?} in the same direction",
                        users[0].0, users[1].0
                    ));
                }
            }
            n => report
                .conformity_violations
                .push(format!("edge {key:?} is shared by {n} elements")),
        }
    }

    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.elements {
        for &v in t {
            used[v] = true;
        }
    }
    report.orphan_vertices = used
        .iter()
        .enumerate()
        .filter(|(_, &u)| !u)
        .map(|(i, _)| i)
        .collect();

    for e in 0..mesh.n_elements() {
        match element_geometry(mesh, e) {
            Ok(g) => {
                let ratio = (g.diam * g.diam / g.area).as_f64();
                report.max_shape_ratio = report.max_shape_ratio.max(ratio);
                report.min_angle = report.min_angle.min(g.min_angle.as_f64());
            }
            Err(_) => report.inverted_elements.push(e),
        }
    }
    report
}

/// For every element of `fine`, the element of `coarse` containing it.
///
/// Uses parent links when `fine` is exactly one generation below `coarse`,
/// otherwise a bucketed geometric search. Either way the containment is
/// checked and a mesh that is not a refinement is rejected.
pub fn locate_in_coarse<T: Scalar>(coarse: &Mesh<T>, fine: &Mesh<T>) -> Result<Vec<usize>> {
    let not_refinement = |why: String| Error::Argument(format!("fine mesh is not a refinement of coarse mesh: {why}"));
    if fine.n_vertices() < coarse.n_vertices()
        || fine.vertices[..coarse.n_vertices()] != coarse.vertices[..]
    {
        return Err(not_refinement("coarse vertices are not a prefix of fine vertices".into()));
    }
    let contains = |ce: usize, fe: usize| -> bool {
        let tol = T::lit(T::BARY_TOL) * T::lit(8.0);
        fine.corners(fe)
            .iter()
            .all(|p| coarse.barycentric(ce, *p).iter().all(|&l| l >= -tol))
    };

    if fine.generation == coarse.generation && fine.elements == coarse.elements {
        return Ok((0..fine.n_elements()).collect());
    }

    if fine.generation == coarse.generation + 1
        && fine.parent.iter().all(|p| matches!(p, Some(i) if *i < coarse.n_elements()))
    {
        let map: Vec<usize> = fine.parent.iter().map(|p| p.unwrap()).collect();
        if map.iter().enumerate().all(|(fe, &ce)| contains(ce, fe)) {
            return Ok(map);
        }
        return Err(not_refinement("parent links disagree with geometry".into()));
    }

    let grid = BucketGrid::new(coarse);
    let mut map = Vec::with_capacity(fine.n_elements());
    for fe in 0..fine.n_elements() {
        let c = fine.centroid(fe);
        let found = grid
            .candidates(c)
            .iter()
            .copied()
            .find(|&ce| contains(ce, fe));
        match found {
            Some(ce) => map.push(ce),
            None => return Err(not_refinement(format!("fine element {fe} lies in no coarse element"))),
        }
    }
    Ok(map)
}

/// Coarse elements whose vertex triple survives unchanged in `fine`.
pub fn surviving_elements<T: Scalar>(coarse: &Mesh<T>, fine: &Mesh<T>) -> Vec<bool> {
    let sorted = |t: &[usize; 3]| {
        let mut s = *t;
        s.sort_unstable();
        s
    };
    let fine_set: HashSet<[usize; 3]> = fine.elements.iter().map(sorted).collect();
    coarse
        .elements
        .iter()
        .map(|t| fine_set.contains(&sorted(t)))
        .collect()
}

struct BucketGrid {
    origin: [f64; 2],
    cell: [f64; 2],
    n: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn new<T: Scalar>(mesh: &Mesh<T>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d].as_f64());
                hi[d] = hi[d].max(p[d].as_f64());
            }
        }
        let n = ((mesh.n_elements() as f64).sqrt().ceil() as usize).max(1);
        let cell = [
            ((hi[0] - lo[0]) / n as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / n as f64).max(f64::MIN_POSITIVE),
        ];
        let mut grid = BucketGrid {
            origin: lo,
            cell,
            n,
            buckets: vec![Vec::new(); n * n],
        };
        for e in 0..mesh.n_elements() {
            let c = mesh.corners(e);
            let mut blo = [f64::INFINITY; 2];
            let mut bhi = [f64::NEG_INFINITY; 2];
            for p in &c {
                for d in 0..2 {
                    blo[d] = blo[d].min(p[d].as_f64());
                    bhi[d] = bhi[d].max(p[d].as_f64());
                }
            }
            let (i0, j0) = grid.cell_of(blo);
            let (i1, j1) = grid.cell_of(bhi);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    grid.buckets[i * n + j].push(e);
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let idx = |d: usize| {
            let k = ((p[d] - self.origin[d]) / self.cell[d]).floor();
            (k.max(0.0) as usize).min(self.n - 1)
        };
        (idx(0), idx(1))
    }

    fn candidates<T: Scalar>(&self, p: Point<T>) -> &[usize] {
        let (i, j) = self.cell_of([p[0].as_f64(), p[1].as_f64()]);
        &self.buckets[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Mesh<f64> {
        builtin_domain(BuiltinDomain::UnitSquare)
    }

    #[test]
    fn builtin_counts() {
        let m = square();
        assert_eq!((m.n_vertices(), m.n_elements(), m.edges().len()), (4, 2, 5));
        let l: Mesh<f64> = builtin_domain(BuiltinDomain::LShape);
        assert_eq!((l.n_vertices(), l.n_elements(), l.edges().len()), (8, 6, 13));
        assert!(validate(&m).is_valid());
        assert!(validate(&l).is_valid());
        // refinement edge of both square elements is the shared diagonal
        for t in m.elements() {
            assert_eq!(edge_key(t[0], t[1]), (0, 2));
        }
    }

    #[test]
    fn unknown_domain_is_config_error() {
        assert!(matches!("cube".parse::<BuiltinDomain>(), Err(Error::Config(_))));
    }

    #[test]
    fn bisect_both_square_elements() {
        let fine = refine_nvb(&square(), &[0, 1]).unwrap();
        assert_eq!(fine.n_elements(), 4);
        assert_eq!(fine.vertices()[4], [0.5, 0.5]);
        assert!(validate(&fine).is_valid());
    }

    #[test]
    fn closure_bisects_neighbour() {
        let fine = refine_nvb(&square(), &[0]).unwrap();
        assert_eq!(fine.n_elements(), 4);
        assert!(validate(&fine).is_valid());
    }

    #[test]
    fn empty_marking_keeps_mesh() {
        let m = square();
        let fine = refine_nvb(&m, &[]).unwrap();
        assert_eq!(fine.elements(), m.elements());
        assert_eq!(fine.generation(), 1);
    }

    #[test]
    fn out_of_range_mark_rejected() {
        assert!(matches!(refine_nvb(&square(), &[2]), Err(Error::Argument(_))));
    }

    #[test]
    fn patches() {
        let m = square();
        assert_eq!(patch(&m, 0).unwrap(), vec![0, 1]);
        let fine = refine_uniform(&m);
        for e in 0..4 {
            assert_eq!(patch(&fine, e).unwrap(), vec![0, 1, 2, 3]);
        }
        let single = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        assert_eq!(patch(&single, 0).unwrap(), vec![0]);
        assert!(patch(&single, 1).is_err());
    }

    #[test]
    fn reference_geometry() {
        let reference = Mesh::<f64>::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[1, 2, 0]]).unwrap();
        let g = element_geometry(&reference, 0).unwrap();
        assert!((g.area - 0.5).abs() < 1e-15);
        assert!((g.h - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((g.diam - 2f64.sqrt()).abs() < 1e-15);
        assert!((g.min_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);

        let child = refine_nvb(&reference, &[0]).unwrap();
        let gc = element_geometry(&child, 0).unwrap();
        assert!((gc.area - 0.25).abs() < 1e-15);
        assert!((gc.h - 0.5f64.sqrt() * g.h).abs() < 1e-15);

        let s3 = 3f64.sqrt();
        let eq = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, s3 / 2.0]], vec![[0, 1, 2]]).unwrap();
        let ge = element_geometry(&eq, 0).unwrap();
        assert!((ge.area - s3 / 4.0).abs() < 1e-15);
        assert!((ge.min_angle - std::f64::consts::FRAC_PI_3).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]);
        assert!(matches!(err, Err(Error::MeshValidity(_))));
        let cw = Mesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]);
        assert!(cw.is_err());
    }

    #[test]
    fn duplicate_element_reported() {
        let m = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[2, 0, 1], [0, 2, 3], [2, 0, 1]],
        )
        .unwrap();
        let r = validate(&m);
        assert!(!r.is_valid());
        assert!(!r.conformity_violations.is_empty());
    }

    #[test]
    fn hanging_node_reported() {
        // left square split into two, right square whole: vertex 5 hangs
        let m = Mesh::new(
            vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [2.0, 0.0],
                [2.0, 1.0],
                [1.0, 1.0],
                [1.0, 0.5],
                [0.0, 1.0],
            ],
            vec![[0, 1, 5], [0, 5, 4], [0, 4, 6], [1, 2, 3], [1, 3, 4]],
        )
        .unwrap();
        let r = validate(&m);
        assert!(r.conformity_violations.iter().any(|v| v.contains("hanging")));
    }

    #[test]
    fn uniform_refinement_keeps_shape_classes() {
        let mut m = square();
        let mut ratios = Vec::new();
        for _ in 0..10 {
            m = refine_uniform(&m);
            let r = validate(&m);
            assert!(r.is_valid());
            ratios.push(r.max_shape_ratio);
        }
        for r in &ratios[1..] {
            assert!((r - ratios[1]).abs() <= 1e-9 * ratios[1]);
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = refine_nvb(&square(), &[0]).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("5 4\n"));
        let back = Mesh::<f64>::from_text(&text).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.elements(), m.elements());
        assert!(Mesh::<f64>::from_text("3 1\n0 0\n1 0\n0 1\n0 1 2\n9\n").is_err());
    }

    #[test]
    fn locate_two_generations() {
        let m0 = builtin_domain::<f64>(BuiltinDomain::LShape);
        let m1 = refine_nvb(&m0, &[1, 3]).unwrap();
        let m2 = refine_nvb(&m1, &[0, 4]).unwrap();
        let map = locate_in_coarse(&m0, &m2).unwrap();
        for (fe, &ce) in map.iter().enumerate() {
            let c = m2.centroid(fe);
            assert!(m0.barycentric(ce, c).iter().all(|&l| l > -1e-12));
        }
        assert!(locate_in_coarse(&m2, &m0).is_err());
    }
}
