//! 2D plane-strain finite elements for the two-layer tire annulus.
//!
//! Four-node quadrilaterals with 2x2 Gauss quadrature and a mean-dilatation
//! (B-bar) strain-displacement operator, which keeps the nearly
//! incompressible elastomer layers from volumetric locking. The rigid axle
//! is modeled by tying all inner-ring nodes to one vertical master degree of
//! freedom; ground contact uses frictionless normal penalty springs with an
//! active-set loop.

pub mod assemble;
pub mod solve;
pub mod vtk;

pub use assemble::{element_stiffness, plane_strain_d, CsrMatrix};
pub use solve::{solve_contact, solve_linear, sweep_curve, ContactSolution, FemError};

use serde::{Deserialize, Serialize};

/// Isotropic linear-elastic material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus in MPa.
    pub e: f64,
    /// Poisson ratio, in (0, 0.5).
    pub nu: f64,
}

impl Material {
    pub fn new(e: f64, nu: f64) -> Self {
        assert!(e > 0.0, "E must be positive");
        assert!(nu > 0.0 && nu < 0.5, "nu must be in (0, 0.5)");
        Material { e, nu }
    }
}

/// Measured moduli of the two tire layers. The softer value belongs to the
/// transparent hub, the stiffer one to the thin sensing skin; a swapped
/// preset exists in case the assignment order was meant the other way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMaterials {
    pub hub: Material,
    pub sensor: Material,
}

impl LayerMaterials {
    pub fn as_measured() -> Self {
        LayerMaterials {
            hub: Material::new(0.1973, 0.48),
            sensor: Material::new(24.06, 0.49),
        }
    }

    pub fn swapped() -> Self {
        LayerMaterials {
            hub: Material::new(24.06, 0.49),
            sensor: Material::new(0.1973, 0.48),
        }
    }
}

/// Annulus cross-section dimensions (mm) and the effective tire width used
/// to scale applied forces to the per-unit-depth 2D model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TireGeometry {
    pub r_inner: f64,
    pub r_layer: f64,
    pub r_outer: f64,
    pub depth_mm: f64,
}

impl Default for TireGeometry {
    fn default() -> Self {
        TireGeometry {
            r_inner: 30.0,
            r_layer: 80.0,
            r_outer: 85.0,
            depth_mm: 50.0,
        }
    }
}

/// A quadrilateral mesh with per-element material indices.
#[derive(Debug, Clone)]
pub struct FemMesh {
    /// Node coordinates (mm).
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise node quadruples.
    pub quads: Vec<[usize; 4]>,
    /// Material index per element.
    pub elem_mat: Vec<usize>,
    /// Nodes on the hub (inner) boundary.
    pub inner_nodes: Vec<usize>,
    /// Nodes on the outer surface (contact candidates).
    pub outer_nodes: Vec<usize>,
}

impl FemMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Minimum Jacobian determinant over all elements and Gauss points.
    pub fn min_jacobian(&self) -> f64 {
        let mut min = f64::INFINITY;
        for quad in &self.quads {
            let xy: Vec<[f64; 2]> = quad.iter().map(|&n| self.nodes[n]).collect();
            for gp in assemble::GAUSS_2X2 {
                let det = assemble::jacobian_det(&xy, gp[0], gp[1]);
                min = min.min(det);
            }
        }
        min
    }
}

/// Complete model: mesh + materials + contact configuration.
#[derive(Debug, Clone)]
pub struct FemModel {
    pub mesh: FemMesh,
    pub materials: Vec<Material>,
    pub geometry: TireGeometry,
    /// Rigid ground plane height (mm); default tangent to the outer circle.
    pub ground_y: f64,
    /// Penalty stiffness multiplier on the max stiffness diagonal.
    pub penalty_scale: f64,
}

/// Structured annular mesh: `n_r` radial elements split across the two
/// layers (the layer boundary always lands on a ring), `n_c` elements
/// around. Inner-ring nodes are hub-boundary, outer-ring nodes are contact
/// candidates.
pub fn build_mesh(geometry: TireGeometry, n_r: usize, n_c: usize) -> FemModel {
    assert!(n_r >= 2, "need at least one element per layer");
    assert!(n_c >= 16, "need at least 16 circumferential elements");
    assert!(n_c % 4 == 0, "n_c must be divisible by 4 so a node sits at the bottom");
    let span = geometry.r_outer - geometry.r_inner;
    let hub_span = geometry.r_layer - geometry.r_inner;
    let mut n_hub = ((n_r as f64) * hub_span / span).round() as usize;
    n_hub = n_hub.clamp(1, n_r - 1);
    let n_sensor = n_r - n_hub;

    let mut radii = Vec::with_capacity(n_r + 1);
    for i in 0..=n_hub {
        radii.push(geometry.r_inner + hub_span * i as f64 / n_hub as f64);
    }
    for i in 1..=n_sensor {
        radii.push(geometry.r_layer + (geometry.r_outer - geometry.r_layer) * i as f64 / n_sensor as f64);
    }

    let mut nodes = Vec::with_capacity(radii.len() * n_c);
    for &r in &radii {
        for j in 0..n_c {
            let theta = std::f64::consts::TAU * j as f64 / n_c as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let node_at = |ring: usize, j: usize| ring * n_c + (j % n_c);
    let mut quads = Vec::with_capacity(n_r * n_c);
    let mut elem_mat = Vec::with_capacity(n_r * n_c);
    for ring in 0..n_r {
        for j in 0..n_c {
            quads.push([
                node_at(ring, j),
                node_at(ring + 1, j),
                node_at(ring + 1, j + 1),
                node_at(ring, j + 1),
            ]);
            elem_mat.push(usize::from(ring >= n_hub));
        }
    }
    let inner_nodes = (0..n_c).collect();
    let outer_nodes = ((radii.len() - 1) * n_c..radii.len() * n_c).collect();
    FemModel {
        mesh: FemMesh {
            nodes,
            quads,
            elem_mat,
            inner_nodes,
            outer_nodes,
        },
        materials: vec![LayerMaterials::as_measured().hub, LayerMaterials::as_measured().sensor],
        geometry,
        ground_y: -geometry.r_outer,
        penalty_scale: 1e3,
    }
}

impl FemModel {
    pub fn with_materials(mut self, layers: LayerMaterials) -> Self {
        self.materials = vec![layers.hub, layers.sensor];
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_matches_rings_times_columns() {
        let m = build_mesh(TireGeometry::default(), 4, 32);
        assert_eq!(m.mesh.node_count(), 5 * 32);
        assert_eq!(m.mesh.quads.len(), 4 * 32);
        assert_eq!(m.mesh.inner_nodes.len(), 32);
        assert_eq!(m.mesh.outer_nodes.len(), 32);
    }

    #[test]
    fn doubling_columns_doubles_contact_candidates() {
        let a = build_mesh(TireGeometry::default(), 4, 64);
        let b = build_mesh(TireGeometry::default(), 4, 128);
        assert_eq!(b.mesh.outer_nodes.len(), 2 * a.mesh.outer_nodes.len());
    }

    #[test]
    fn jacobians_are_positive() {
        for (n_r, n_c) in [(2, 16), (4, 64), (8, 128)] {
            let m = build_mesh(TireGeometry::default(), n_r, n_c);
            assert!(m.mesh.min_jacobian() > 0.0, "mesh {n_r}x{n_c}");
        }
    }

    #[test]
    fn layer_boundary_conforms_to_a_ring() {
        let m = build_mesh(TireGeometry::default(), 6, 32);
        // some ring of nodes must sit exactly at the layer radius
        let on_layer = m
            .mesh
            .nodes
            .iter()
            .filter(|n| ((n[0] * n[0] + n[1] * n[1]).sqrt() - 80.0).abs() < 1e-9)
            .count();
        assert_eq!(on_layer, 32);
        // both materials appear
        assert!(m.mesh.elem_mat.iter().any(|&m| m == 0));
        assert!(m.mesh.elem_mat.iter().any(|&m| m == 1));
    }

    #[test]
    fn material_validation() {
        let m = Material::new(1.0, 0.3);
        assert_eq!(m.e, 1.0);
    }

    #[test]
    #[should_panic(expected = "nu must be in")]
    fn poisson_half_is_rejected() {
        let _ = Material::new(1.0, 0.5);
    }
}
