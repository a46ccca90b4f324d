//! Structured square meshes of the unit square, the bilinear reference
//! element, Gauss–Legendre rules, and the DOF-vector/image reshaping that
//! the convolutional networks consume.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Local face of a square element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Outward unit normal of the face.
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    /// Reference coordinates of the face point with edge parameter `t` in [-1, 1].
    ///
    /// Vertical faces are parametrized bottom to top and horizontal faces
    /// left to right, so both neighbours of an edge see the same `t`.
    pub fn reference_point(self, t: f64) -> (f64, f64) {
        match self {
            Side::Left => (-1.0, t),
            Side::Right => (1.0, t),
            Side::Bottom => (t, -1.0),
            Side::Top => (t, 1.0),
        }
    }
}

/// An edge of the mesh.
///
/// For interior edges `normal` points from `first` into `second`; for
/// boundary edges `second` is `None` and `normal` is the outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub first: usize,
    pub first_side: Side,
    pub second: Option<usize>,
    pub normal: [f64; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }
}

/// Uniform `n x n` mesh of `(0,1)^2`. Element `(i, j)` covers
/// `(i h, (i+1) h) x (j h, (j+1) h)` and has id `j * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    n: usize,
    h: f64,
    interior_edges: Vec<Edge>,
    boundary_edges: Vec<Edge>,
}

/// Build the `n x n` mesh; edges are enumerated in row-major element order.
pub fn build_mesh(n: usize) -> Result<StructuredMesh, MeshError> {
    if n < 2 {
        return Err(MeshError::InvalidArgument(format!(
            "mesh needs at least 2 elements per side, got {n}"
        )));
    }
    let mut interior_edges = Vec::with_capacity(2 * n * (n - 1));
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for j in 0..n {
        for i in 0..n {
            let e = j * n + i;
            if i + 1 < n {
                interior_edges.push(Edge {
                    first: e,
                    first_side: Side::Right,
                    second: Some(e + 1),
                    normal: [1.0, 0.0],
                });
            }
            if j + 1 < n {
                interior_edges.push(Edge {
                    first: e,
                    first_side: Side::Top,
                    second: Some(e + n),
                    normal: [0.0, 1.0],
                });
            }
            for side in Side::ALL {
                let on_boundary = match side {
                    Side::Left => i == 0,
                    Side::Right => i + 1 == n,
                    Side::Bottom => j == 0,
                    Side::Top => j + 1 == n,
                };
                if on_boundary {
                    boundary_edges.push(Edge {
                        first: e,
                        first_side: side,
                        second: None,
                        normal: side.outward_normal(),
                    });
                }
            }
        }
    }
    Ok(StructuredMesh {
        n,
        h: 1.0 / n as f64,
        interior_edges,
        boundary_edges,
    })
}

impl StructuredMesh {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Element side length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_elements(&self) -> usize {
        self.n * self.n
    }

    pub fn num_dofs(&self) -> usize {
        4 * self.n * self.n
    }

    pub fn element_id(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Grid coordinates `(i, j)` of an element.
    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    /// Lower-left corner of an element.
    pub fn element_origin(&self, e: usize) -> (f64, f64) {
        let (i, j) = self.element_coords(e);
        (i as f64 * self.h, j as f64 * self.h)
    }

    /// Physical point of reference coordinates `(xr, yr)` in element `e`.
    pub fn map_to_physical(&self, e: usize, xr: f64, yr: f64) -> (f64, f64) {
        let (x0, y0) = self.element_origin(e);
        (
            x0 + 0.5 * (xr + 1.0) * self.h,
            y0 + 0.5 * (yr + 1.0) * self.h,
        )
    }

    /// Neighbour across `side`, if any.
    pub fn neighbor(&self, e: usize, side: Side) -> Option<usize> {
        let (i, j) = self.element_coords(e);
        match side {
            Side::Left => (i > 0).then(|| e - 1),
            Side::Right => (i + 1 < self.n).then(|| e + 1),
            Side::Bottom => (j > 0).then(|| e - self.n),
            Side::Top => (j + 1 < self.n).then(|| e + self.n),
        }
    }

    pub fn interior_edges(&self) -> &[Edge] {
        &self.interior_edges
    }

    pub fn boundary_edges(&self) -> &[Edge] {
        &self.boundary_edges
    }

    pub fn layout(&self) -> DofLayout {
        DofLayout { n: self.n }
    }
}

/// Reference corner of each local basis function: psi_0 bottom-left, then
/// counter-clockwise.
pub const REFERENCE_NODES: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Values of the four bilinear basis functions at a reference point.
pub fn basis_values(xr: f64, yr: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (l, &(xn, yn)) in REFERENCE_NODES.iter().enumerate() {
        out[l] = 0.25 * (1.0 + xn * xr) * (1.0 + yn * yr);
    }
    out
}

/// Reference-coordinate gradients of the four basis functions.
pub fn basis_gradients(xr: f64, yr: f64) -> [[f64; 2]; 4] {
    let mut out = [[0.0; 2]; 4];
    for (l, &(xn, yn)) in REFERENCE_NODES.iter().enumerate() {
        out[l] = [0.25 * xn * (1.0 + yn * yr), 0.25 * yn * (1.0 + xn * xr)];
    }
    out
}

/// One-dimensional Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

pub fn gauss_rule(q: usize) -> Result<QuadratureRule, MeshError> {
    let (points, weights): (Vec<f64>, Vec<f64>) = match q {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let p = 1.0 / 3.0_f64.sqrt();
            (vec![-p, p], vec![1.0, 1.0])
        }
        3 => {
            let p = (3.0_f64 / 5.0).sqrt();
            (vec![-p, 0.0, p], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0_f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0_f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30.0_f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0_f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let s = (10.0_f64 / 7.0).sqrt();
            let a = (5.0 - 2.0 * s).sqrt() / 3.0;
            let b = (5.0 + 2.0 * s).sqrt() / 3.0;
            let r = 70.0_f64.sqrt();
            let wa = (322.0 + 13.0 * r) / 900.0;
            let wb = (322.0 - 13.0 * r) / 900.0;
            (
                vec![-b, -a, 0.0, a, b],
                vec![wb, wa, 128.0 / 225.0, wa, wb],
            )
        }
        _ => {
            return Err(MeshError::InvalidArgument(format!(
                "unsupported Gauss rule with {q} points (supported: 1..=5)"
            )))
        }
    };
    Ok(QuadratureRule { points, weights })
}

/// Tensor-product rule on the reference square: `(xr, yr, weight)` triples.
pub fn tensor_rule(rule: &QuadratureRule) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(rule.order() * rule.order());
    for (yr, wy) in rule.iter() {
        for (xr, wx) in rule.iter() {
            out.push((xr, yr, wx * wy));
        }
    }
    out
}

/// Placement of the `4 n^2` DOFs on a `2n x 2n` image.
///
/// The DOF of element `(i, j)` attached to local corner `(c, r)` (column and
/// row offset in {0, 1}) sits at image row `2j + r`, column `2i + c`; rows are
/// counted bottom-up in `y` and the image is stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofLayout {
    pub n: usize,
}

const CORNER_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];

impl DofLayout {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn side(&self) -> usize {
        2 * self.n
    }

    pub fn len(&self) -> usize {
        4 * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Row-major pixel index holding DOF `dof`.
    pub fn pixel_of(&self, dof: usize) -> usize {
        let e = dof / 4;
        let (r, c) = CORNER_OFFSETS[dof % 4];
        let (i, j) = (e % self.n, e / self.n);
        (2 * j + r) * self.side() + 2 * i + c
    }
}

pub fn vector_to_image(v: &[f64], layout: DofLayout) -> Result<Vec<f64>, MeshError> {
    if v.len() != layout.len() {
        return Err(MeshError::InvalidArgument(format!(
            "DOF vector has length {}, layout expects {}",
            v.len(),
            layout.len()
        )));
    }
    let mut img = vec![0.0; v.len()];
    for (dof, &value) in v.iter().enumerate() {
        img[layout.pixel_of(dof)] = value;
    }
    Ok(img)
}

pub fn image_to_vector(img: &[f64], layout: DofLayout) -> Result<Vec<f64>, MeshError> {
    if img.len() != layout.len() {
        return Err(MeshError::InvalidArgument(format!(
            "image has {} pixels, layout expects {}x{}",
            img.len(),
            layout.side(),
            layout.side()
        )));
    }
    Ok((0..layout.len()).map(|dof| img[layout.pixel_of(dof)]).collect())
}
