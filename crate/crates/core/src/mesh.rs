//! Uniform tensor-product rectangle meshes.
//!
//! Cells are numbered row-major, `cell = j * nx + i`. Faces are numbered with
//! all horizontal faces first (row-major over `(j, i)`, `j = 0..=ny`), then
//! all vertical faces column-major over `(i, j)`, `i = 0..=nx`.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Domain {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(invalid(format!(
                "degenerate domain [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    /// The square `[a, b]^2`.
    pub fn square(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, a, b)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Affine map of a physical point onto `[-1, 1]^2`.
    pub fn to_unit_square(&self, x: f64, y: f64) -> (f64, f64) {
        (
            2.0 * (x - self.xmin) / self.width() - 1.0,
            2.0 * (y - self.ymin) / self.height() - 1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceOrientation {
    /// Parallel to the x axis, normal `±y`.
    Horizontal,
    /// Parallel to the y axis, normal `±x`.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub orientation: FaceOrientation,
    /// First adjacent cell. For interior faces this is the cell whose outward
    /// normal on the face is `+x` or `+y`.
    pub first: usize,
    pub second: Option<usize>,
    /// Endpoints of the face.
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]) + (self.end[1] - self.start[1])
    }

    /// Outward unit normal of `first` on this face.
    pub fn normal(&self, mesh: &Mesh) -> [f64; 2] {
        let (ci, cj) = mesh.cell_coords(self.first);
        match self.orientation {
            FaceOrientation::Horizontal => {
                let top = mesh.domain.ymin + (cj + 1) as f64 * mesh.hy;
                if (self.start[1] - top).abs() <= 0.5 * mesh.hy {
                    [0.0, 1.0]
                } else {
                    [0.0, -1.0]
                }
            }
            FaceOrientation::Vertical => {
                let right = mesh.domain.xmin + (ci + 1) as f64 * mesh.hx;
                if (self.start[0] - right).abs() <= 0.5 * mesh.hx {
                    [1.0, 0.0]
                } else {
                    [-1.0, 0.0]
                }
            }
        }
    }
}

/// Local face slots of a cell, in the order used by the element bases.
pub const BOTTOM: usize = 0;
pub const RIGHT: usize = 1;
pub const TOP: usize = 2;
pub const LEFT: usize = 3;

#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    faces: Vec<Face>,
}

impl Mesh {
    pub fn build(domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(invalid(format!(
                "cell counts must be positive, got {nx} x {ny}"
            )));
        }
        let hx = domain.width() / nx as f64;
        let hy = domain.height() / ny as f64;
        let x = |i: usize| domain.xmin + i as f64 * hx;
        let y = |j: usize| domain.ymin + j as f64 * hy;

        let mut faces = Vec::with_capacity(nx * (ny + 1) + ny * (nx + 1));
        for j in 0..=ny {
            for i in 0..nx {
                let below = (j > 0).then(|| (j - 1) * nx + i);
                let above = (j < ny).then(|| j * nx + i);
                let (first, second) = match (below, above) {
                    (Some(b), a) => (b, a),
                    (None, Some(a)) => (a, None),
                    (None, None) => unreachable!(),
                };
                faces.push(Face {
                    orientation: FaceOrientation::Horizontal,
                    first,
                    second,
                    start: [x(i), y(j)],
                    end: [x(i + 1), y(j)],
                });
            }
        }
        for i in 0..=nx {
            for j in 0..ny {
                let left = (i > 0).then(|| j * nx + i - 1);
                let right = (i < nx).then(|| j * nx + i);
                let (first, second) = match (left, right) {
                    (Some(l), r) => (l, r),
                    (None, Some(r)) => (r, None),
                    (None, None) => unreachable!(),
                };
                faces.push(Face {
                    orientation: FaceOrientation::Vertical,
                    first,
                    second,
                    start: [x(i), y(j)],
                    end: [x(i), y(j + 1)],
                });
            }
        }
        Ok(Self {
            domain,
            nx,
            ny,
            hx,
            hy,
            faces,
        })
    }

    /// Square mesh with `n` cells per axis.
    pub fn uniform(domain: Domain, n: usize) -> Result<Self> {
        Self::build(domain, n, n)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    /// Mesh size reported in convergence studies.
    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.cell_coords(cell);
        [
            self.domain.xmin + i as f64 * self.hx,
            self.domain.ymin + j as f64 * self.hy,
        ]
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [o[0] + 0.5 * self.hx, o[1] + 0.5 * self.hy]
    }

    /// Reference coordinates in `[-1, 1]^2` to physical coordinates.
    #[inline]
    pub fn map_to_physical(&self, cell: usize, xi: f64, eta: f64) -> [f64; 2] {
        let c = self.cell_center(cell);
        [c[0] + 0.5 * self.hx * xi, c[1] + 0.5 * self.hy * eta]
    }

    #[inline]
    pub fn map_to_reference(&self, cell: usize, x: f64, y: f64) -> [f64; 2] {
        let c = self.cell_center(cell);
        [2.0 * (x - c[0]) / self.hx, 2.0 * (y - c[1]) / self.hy]
    }

    /// Face ids of a cell in local order bottom, right, top, left.
    pub fn cell_faces(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_coords(cell);
        let n_horizontal = self.nx * (self.ny + 1);
        [
            j * self.nx + i,
            n_horizontal + (i + 1) * self.ny + j,
            (j + 1) * self.nx + i,
            n_horizontal + i * self.ny + j,
        ]
    }

    /// Cell containing a point; points on shared edges go to the cell above
    /// or to the right, points outside are clamped.
    pub fn locate(&self, x: f64, y: f64) -> usize {
        let fi = ((x - self.domain.xmin) / self.hx).floor();
        let fj = ((y - self.domain.ymin) / self.hy).floor();
        let i = (fi.max(0.0) as usize).min(self.nx - 1);
        let j = (fj.max(0.0) as usize).min(self.ny - 1);
        self.cell_index(i, j)
    }
}

/// Fine-to-coarse cell mapping between two nested meshes.
#[derive(Debug, Clone)]
pub struct RefineMap {
    pub ratio_x: usize,
    pub ratio_y: usize,
    parent: Vec<usize>,
}

impl RefineMap {
    pub fn parent(&self, fine_cell: usize) -> usize {
        self.parent[fine_cell]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    /// Fine cells inside one coarse cell.
    pub fn children(&self, coarse: &Mesh, fine: &Mesh, coarse_cell: usize) -> Vec<usize> {
        let (ci, cj) = coarse.cell_coords(coarse_cell);
        let mut out = Vec::with_capacity(self.ratio_x * self.ratio_y);
        for b in 0..self.ratio_y {
            for a in 0..self.ratio_x {
                out.push(fine.cell_index(ci * self.ratio_x + a, cj * self.ratio_y + b));
            }
        }
        out
    }
}

pub fn refine_map(coarse: &Mesh, fine: &Mesh) -> Result<RefineMap> {
    if coarse.domain != fine.domain {
        return Err(invalid("meshes cover different domains"));
    }
    if !fine.nx.is_multiple_of(coarse.nx) || !fine.ny.is_multiple_of(coarse.ny) {
        return Err(invalid(format!(
            "{}x{} mesh is not nested in {}x{} mesh",
            coarse.nx, coarse.ny, fine.nx, fine.ny
        )));
    }
    let ratio_x = fine.nx / coarse.nx;
    let ratio_y = fine.ny / coarse.ny;
    let parent = (0..fine.n_cells())
        .map(|c| {
            let (i, j) = fine.cell_coords(c);
            coarse.cell_index(i / ratio_x, j / ratio_y)
        })
        .collect();
    Ok(RefineMap {
        ratio_x,
        ratio_y,
        parent,
    })
}
