//! Element stiffness (B-bar quadrilaterals) and sparse assembly.

use thiserror::Error;

use super::{FemMesh, Material};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("element {0} is degenerate (det J = {1:.3e})")]
    Degenerate(usize, f64),
}

pub const GAUSS_2X2: [[f64; 2]; 4] = {
    const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)
    [[-G, -G], [G, -G], [G, G], [-G, G]]
};

/// Plane-strain constitutive matrix (3x3, Voigt order xx, yy, xy).
pub fn plane_strain_d(m: Material) -> [[f64; 3]; 3] {
    let c = m.e / ((1.0 + m.nu) * (1.0 - 2.0 * m.nu));
    [
        [c * (1.0 - m.nu), c * m.nu, 0.0],
        [c * m.nu, c * (1.0 - m.nu), 0.0],
        [0.0, 0.0, c * (1.0 - 2.0 * m.nu) / 2.0],
    ]
}

fn shape_gradients_natural(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

pub fn jacobian_det(xy: &[[f64; 2]], xi: f64, eta: f64) -> f64 {
    let dn = shape_gradients_natural(xi, eta);
    let mut j = [[0.0f64; 2]; 2];
    for i in 0..4 {
        j[0][0] += dn[i][0] * xy[i][0];
        j[0][1] += dn[i][0] * xy[i][1];
        j[1][0] += dn[i][1] * xy[i][0];
        j[1][1] += dn[i][1] * xy[i][1];
    }
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// Physical shape-function gradients and det J at one Gauss point.
fn gradients_at(xy: &[[f64; 2]], xi: f64, eta: f64) -> ([[f64; 2]; 4], f64) {
    let dn = shape_gradients_natural(xi, eta);
    let mut j = [[0.0f64; 2]; 2];
    for i in 0..4 {
        j[0][0] += dn[i][0] * xy[i][0];
        j[0][1] += dn[i][0] * xy[i][1];
        j[1][0] += dn[i][1] * xy[i][0];
        j[1][1] += dn[i][1] * xy[i][1];
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    let mut grads = [[0.0f64; 2]; 4];
    for i in 0..4 {
        grads[i][0] = inv[0][0] * dn[i][0] + inv[0][1] * dn[i][1];
        grads[i][1] = inv[1][0] * dn[i][0] + inv[1][1] * dn[i][1];
    }
    (grads, det)
}

/// 8x8 stiffness of one B-bar quadrilateral (unit depth).
///
/// The dilatational part of the strain-displacement operator is replaced by
/// its element average, every integral evaluated with 2x2 Gauss quadrature.
pub fn element_stiffness(
    xy: &[[f64; 2]],
    material: Material,
    elem_id: usize,
) -> Result<[[f64; 8]; 8], AssemblyError> {
    let d = plane_strain_d(material);
    // element-mean gradients (mean dilatation)
    let mut mean = [[0.0f64; 2]; 4];
    let mut volume = 0.0;
    let mut gauss: Vec<([[f64; 2]; 4], f64)> = Vec::with_capacity(4);
    for gp in GAUSS_2X2 {
        let (grads, det) = gradients_at(xy, gp[0], gp[1]);
        if det <= 0.0 || !det.is_finite() {
            return Err(AssemblyError::Degenerate(elem_id, det));
        }
        for i in 0..4 {
            mean[i][0] += grads[i][0] * det;
            mean[i][1] += grads[i][1] * det;
        }
        volume += det;
        gauss.push((grads, det));
    }
    for g in mean.iter_mut() {
        g[0] /= volume;
        g[1] /= volume;
    }

    let mut k = [[0.0f64; 8]; 8];
    for (grads, det) in &gauss {
        // B-bar rows (xx, yy, xy) per node
        let mut b = [[0.0f64; 8]; 3];
        for i in 0..4 {
            let (gx, gy) = (grads[i][0], grads[i][1]);
            let (mx, my) = (mean[i][0], mean[i][1]);
            // deviatoric part of the standard B plus mean dilatational part
            let dx = 0.5 * (mx - gx);
            let dy = 0.5 * (my - gy);
            b[0][2 * i] = gx + dx;
            b[0][2 * i + 1] = dy;
            b[1][2 * i] = dx;
            b[1][2 * i + 1] = gy + dy;
            b[2][2 * i] = gy;
            b[2][2 * i + 1] = gx;
        }
        // K += det * B^T D B (Gauss weights are 1)
        let mut db = [[0.0f64; 8]; 3];
        for r in 0..3 {
            for cidx in 0..8 {
                db[r][cidx] = d[r][0] * b[0][cidx] + d[r][1] * b[1][cidx] + d[r][2] * b[2][cidx];
            }
        }
        for r in 0..8 {
            for cidx in 0..8 {
                k[r][cidx] +=
                    det * (b[0][r] * db[0][cidx] + b[1][r] * db[1][cidx] + b[2][r] * db[2][cidx]);
            }
        }
    }
    Ok(k)
}

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build the sparsity pattern from pairwise couplings, values zeroed.
    pub fn from_pattern(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> CsrMatrix {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, b) in pairs {
            adj[a].push(b);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        let pos = self.col_idx[lo..hi]
            .binary_search(&c)
            .expect("entry outside the assembled pattern");
        self.values[lo + pos] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// max |A - A^T| over all entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// How one node-dof maps into the reduced solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofMap {
    Free(usize),
    Fixed,
}

/// Reduced-system layout.
#[derive(Debug, Clone)]
pub struct DofLayout {
    pub map: Vec<[DofMap; 2]>,
    pub n_free: usize,
}

impl DofLayout {
    pub fn unknowns(&self) -> usize {
        self.n_free
    }

    pub fn index(&self, node: usize, dir: usize) -> Option<usize> {
        match self.map[node][dir] {
            DofMap::Free(i) => Some(i),
            DofMap::Fixed => None,
        }
    }
}

/// Layout with explicit fixed dofs (node, dir).
pub fn fixed_dof_layout(mesh: &FemMesh, fixed: &[(usize, usize)]) -> DofLayout {
    let fixed_set: std::collections::HashSet<(usize, usize)> = fixed.iter().copied().collect();
    let mut map = vec![[DofMap::Free(0); 2]; mesh.node_count()];
    let mut next = 0;
    for (n, entry) in map.iter_mut().enumerate() {
        for dir in 0..2 {
            if fixed_set.contains(&(n, dir)) {
                entry[dir] = DofMap::Fixed;
            } else {
                entry[dir] = DofMap::Free(next);
                next += 1;
            }
        }
    }
    DofLayout { map, n_free: next }
}

/// Assemble the reduced stiffness matrix for a layout.
pub fn assemble_reduced(
    mesh: &FemMesh,
    materials: &[Material],
    layout: &DofLayout,
) -> Result<CsrMatrix, AssemblyError> {
    let n = layout.unknowns();
    // sparsity pattern from element couplings
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for quad in &mesh.quads {
        let mut dofs = Vec::with_capacity(8);
        for &node in quad {
            for dir in 0..2 {
                if let Some(i) = layout.index(node, dir) {
                    dofs.push(i);
                }
            }
        }
        for &a in &dofs {
            for &b in &dofs {
                pairs.push((a, b));
            }
        }
    }
    let mut k = CsrMatrix::from_pattern(n, pairs.into_iter());
    for (e, quad) in mesh.quads.iter().enumerate() {
        let xy: Vec<[f64; 2]> = quad.iter().map(|&n| mesh.nodes[n]).collect();
        let ke = element_stiffness(&xy, materials[mesh.elem_mat[e]], e)?;
        for (a, &node_a) in quad.iter().enumerate() {
            for dir_a in 0..2 {
                let Some(ga) = layout.index(node_a, dir_a) else { continue };
                for (b, &node_b) in quad.iter().enumerate() {
                    for dir_b in 0..2 {
                        let Some(gb) = layout.index(node_b, dir_b) else { continue };
                        k.add(ga, gb, ke[2 * a + dir_a][2 * b + dir_b]);
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Strain energy 0.5 u^T K u evaluated element-wise from full nodal
/// displacements (2 per node).
pub fn strain_energy(mesh: &FemMesh, materials: &[Material], u: &[f64]) -> f64 {
    let mut energy = 0.0;
    for (e, quad) in mesh.quads.iter().enumerate() {
        let xy: Vec<[f64; 2]> = quad.iter().map(|&n| mesh.nodes[n]).collect();
        let ke = element_stiffness(&xy, materials[mesh.elem_mat[e]], e).expect("valid element");
        let mut ue = [0.0f64; 8];
        for (a, &node) in quad.iter().enumerate() {
            ue[2 * a] = u[2 * node];
            ue[2 * a + 1] = u[2 * node + 1];
        }
        let mut acc = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                acc += ue[r] * ke[r][c] * ue[c];
            }
        }
        energy += 0.5 * acc;
    }
    energy
}
