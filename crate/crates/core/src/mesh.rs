//! Uniform triangulation of the square (-R,R)^2 and the P1 dof map with
//! homogeneous Dirichlet boundary.
//!
//! Every square cell is split along the same lower-left to upper-right
//! diagonal into two counterclockwise triangles, which yields the classic
//! five-point stiffness stencil and keeps assembled operators banded under
//! the row-major interior numbering (half-bandwidth N_h).

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Half-width of the square domain.
    pub r: f64,
    /// Subdivisions per side.
    pub n_h: usize,
    /// Mesh size 2R / N_h.
    pub h: f64,
    /// (N_h+1)^2 vertex coordinates, row-major: id = j*(N_h+1) + i maps to
    /// (-R + i h, -R + j h).
    pub vertices: Vec<(f64, f64)>,
    /// 2 N_h^2 triangles as counterclockwise vertex-id triples.
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn vertex_id(&self, i: usize, j: usize) -> usize {
        j * (self.n_h + 1) + i
    }

    /// Twice the signed area of triangle t (positive for the orientation
    /// this builder produces; equals h^2).
    pub fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (xa, ya) = self.vertices[a];
        let (xb, yb) = self.vertices[b];
        let (xc, yc) = self.vertices[c];
        (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)
    }
}

pub fn build_mesh(r: f64, n_h: usize) -> Result<Mesh> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Config(format!(
            "domain half-width R must be positive, got {r}"
        )));
    }
    if n_h < 2 {
        return Err(Error::Config(format!("N_h must be at least 2, got {n_h}")));
    }
    let h = 2.0 * r / n_h as f64;
    let np = n_h + 1;
    let mut vertices = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertices.push((-r + i as f64 * h, -r + j as f64 * h));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n_h * n_h);
    for j in 0..n_h {
        for i in 0..n_h {
            let a = j * np + i;
            let b = j * np + i + 1;
            let c = (j + 1) * np + i + 1;
            let d = (j + 1) * np + i;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Ok(Mesh {
        r,
        n_h,
        h,
        vertices,
        triangles,
    })
}

/// Interior-vertex enumeration; boundary vertices carry no unknown.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_dofs: usize,
    /// Per vertex id: Some(dof) for interior vertices.
    pub interior_index: Vec<Option<usize>>,
    /// Inverse map: vertex id of each dof.
    pub vertex_of_dof: Vec<usize>,
    pub is_boundary: Vec<bool>,
}

pub fn build_dofmap(mesh: &Mesh) -> DofMap {
    let np = mesh.n_h + 1;
    let mut interior_index = vec![None; np * np];
    let mut is_boundary = vec![true; np * np];
    let mut vertex_of_dof = Vec::with_capacity((mesh.n_h - 1) * (mesh.n_h - 1));
    let mut next = 0usize;
    for j in 1..mesh.n_h {
        for i in 1..mesh.n_h {
            let v = j * np + i;
            interior_index[v] = Some(next);
            is_boundary[v] = false;
            vertex_of_dof.push(v);
            next += 1;
        }
    }
    DofMap {
        n_dofs: next,
        interior_index,
        vertex_of_dof,
        is_boundary,
    }
}

/// Nodal coefficient vector of a P1 field on the interior vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Vec<C64>,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        ComplexField {
            values: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn new(values: Vec<C64>) -> Result<Self> {
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Data(
                "field contains a non-finite coefficient".into(),
            ));
        }
        Ok(ComplexField { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sample a function at the interior vertices.
pub fn interpolate<F>(f: F, mesh: &Mesh, dofs: &DofMap) -> Result<ComplexField>
where
    F: Fn(f64, f64) -> C64,
{
    let mut values = vec![C64::new(0.0, 0.0); dofs.n_dofs];
    for (dof, &v) in dofs.vertex_of_dof.iter().enumerate() {
        let (x, y) = mesh.vertices[v];
        let z = f(x, y);
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Data(format!(
                "non-finite sample {z} at vertex ({x}, {y})"
            )));
        }
        values[dof] = z;
    }
    Ok(ComplexField { values })
}
