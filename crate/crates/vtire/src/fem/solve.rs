//! Linear solves, penalty contact with an active set, and force sweeps.

use thiserror::Error;

use super::assemble::{
    assemble_reduced, fixed_dof_layout, strain_energy, AssemblyError, CsrMatrix, DofLayout,
};
use super::{FemMesh, FemModel, Material};

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("conjugate gradients stalled: relative residual {residual:.3e} after {iters} iterations")]
    CgStalled { residual: f64, iters: usize },
    #[error("contact active set did not settle in {0} iterations (history: {1:?})")]
    ActiveSetLoop(usize, Vec<usize>),
}

/// Jacobi-preconditioned conjugate gradients to a relative residual.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol_rel: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize), FemError> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let diag = a.diagonal();
    let minv: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for iter in 0..max_iters {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(FemError::CgStalled {
                residual: norm(&r) / bnorm,
                iters: iter,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol_rel * bnorm {
            return Ok((x, iter + 1));
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::CgStalled {
        residual: norm(&r) / bnorm,
        iters: max_iters,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Expand a reduced solution into full nodal displacements (2 per node).
fn expand(layout: &DofLayout, reduced: &[f64], node_count: usize) -> Vec<f64> {
    let mut u = vec![0.0; 2 * node_count];
    for node in 0..node_count {
        for dir in 0..2 {
            if let Some(ix) = layout.index(node, dir) {
                u[2 * node + dir] = reduced[ix];
            }
        }
    }
    u
}

/// General linear solve with explicit point loads and fixed dofs; no
/// contact, no rigid hub. Used by verification oracles.
pub fn solve_linear(
    mesh: &FemMesh,
    materials: &[Material],
    loads: &[(usize, usize, f64)],
    fixed: &[(usize, usize)],
) -> Result<Vec<f64>, FemError> {
    let layout = fixed_dof_layout(mesh, fixed);
    let k = assemble_reduced(mesh, materials, &layout)?;
    let mut rhs = vec![0.0; layout.unknowns()];
    for &(node, dir, value) in loads {
        if let Some(ix) = layout.index(node, dir) {
            rhs[ix] += value;
        }
    }
    let (x, _) = conjugate_gradient(&k, &rhs, 1e-10, 40 * k.n)?;
    Ok(expand(&layout, &x, mesh.node_count()))
}

/// Converged contact state.
#[derive(Debug, Clone)]
pub struct ContactSolution {
    /// Full nodal displacement field (mm), 2 per node.
    pub u: Vec<f64>,
    /// Downward hub translation (mm, positive down).
    pub hub_drop: f64,
    /// Maximum contact-side indentation seen from the hub frame (mm);
    /// the quantity the internal depth camera measures.
    pub offset: f64,
    /// Active contact nodes at convergence.
    pub active: Vec<usize>,
    /// Strain energy, per unit depth (N mm / mm).
    pub strain_energy: f64,
    /// Work done against the contact springs, per unit depth.
    pub contact_work: f64,
    /// External work 0.5 F u of the hub load, per unit depth.
    pub external_work: f64,
    pub cg_iterations: usize,
    pub penalty: f64,
}

/// Frictionless penalty contact against the rigid ground plane, the load
/// spread over the hub-boundary nodes as consistent nodal forces (equal
/// nodal shares on the uniformly spaced inner ring). The per-depth load is
/// `force_n / geometry.depth_mm`. Two symmetry pins (u_x at the inner nodes
/// on the vertical axis) remove the free horizontal/rotational modes the
/// frictionless contact cannot resist.
pub fn solve_contact(model: &FemModel, force_n: f64) -> Result<ContactSolution, FemError> {
    assert!(force_n >= 0.0, "force must be nonnegative");
    let mesh = &model.mesh;
    let n_inner = mesh.inner_nodes.len();
    // inner nodes at theta = 90 and 270 degrees sit at slots n/4 and 3n/4
    let pin_a = mesh.inner_nodes[n_inner / 4];
    let pin_b = mesh.inner_nodes[3 * n_inner / 4];
    let layout = fixed_dof_layout(mesh, &[(pin_a, 0), (pin_b, 0)]);
    let n = layout.unknowns();
    let k = assemble_reduced(mesh, &model.materials, &layout)?;
    let f_depth = force_n / model.geometry.depth_mm;
    let per_node = f_depth / n_inner as f64;

    if force_n == 0.0 {
        return Ok(ContactSolution {
            u: vec![0.0; 2 * mesh.node_count()],
            hub_drop: 0.0,
            offset: 0.0,
            active: Vec::new(),
            strain_energy: 0.0,
            contact_work: 0.0,
            external_work: 0.0,
            cg_iterations: 0,
            penalty: 0.0,
        });
    }

    // initial gaps of contact candidates
    let gap0: Vec<(usize, f64)> = mesh
        .outer_nodes
        .iter()
        .map(|&node| (node, mesh.nodes[node][1] - model.ground_y))
        .collect();
    let kdiag_max = k
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut penalty = model.penalty_scale * kdiag_max;

    let mut history = Vec::new();
    for _attempt in 0..4 {
        let mut active: Vec<usize> = gap0
            .iter()
            .filter(|(_, g)| *g <= 1e-12)
            .map(|(node, _)| *node)
            .collect();
        let mut total_cg = 0usize;
        let mut result: Option<(Vec<f64>, Vec<usize>)> = None;
        history.clear();
        for _pass in 0..60 {
            history.push(active.len());
            // springs on active y-dofs
            let mut k_c = k.clone();
            let mut rhs = vec![0.0; n];
            for &node in &mesh.inner_nodes {
                if let Some(ix) = layout.index(node, 1) {
                    rhs[ix] -= per_node;
                }
            }
            for &node in &active {
                let g0 = mesh.nodes[node][1] - model.ground_y;
                if let Some(ix) = layout.index(node, 1) {
                    k_c.add(ix, ix, penalty);
                    rhs[ix] -= penalty * g0;
                }
            }
            // solve well below the 1e-8 acceptance floor so that derived
            // fields (symmetry, energy balance) are limited by physics,
            // not by solver error
            let sol = match conjugate_gradient(&k_c, &rhs, 1e-12, 80 * n) {
                Ok((x, iters)) => {
                    total_cg += iters;
                    x
                }
                Err(_) => {
                    result = None;
                    break;
                }
            };
            // reassess the active set from the gaps
            let mut next_active = Vec::new();
            for &(node, g0) in &gap0 {
                let uy = layout.index(node, 1).map(|ix| sol[ix]).unwrap_or(0.0);
                if g0 + uy < -1e-12 {
                    next_active.push(node);
                }
            }
            if next_active == active {
                result = Some((sol, active.clone()));
                break;
            }
            active = next_active;
        }
        match result {
            None => {
                // ill-conditioned: soften the springs and retry
                penalty *= 0.5;
                continue;
            }
            Some((sol, active)) => {
                let u = expand(&layout, &sol, mesh.node_count());
                // the hub frame moves with the mean inner-ring displacement
                let hub_ux = mesh.inner_nodes.iter().map(|&nd| u[2 * nd]).sum::<f64>()
                    / n_inner as f64;
                let hub_uy = mesh.inner_nodes.iter().map(|&nd| u[2 * nd + 1]).sum::<f64>()
                    / n_inner as f64;
                let hub_drop = -hub_uy;
                // indentation relative to the descending hub frame
                let mut offset = 0.0f64;
                for &node in &mesh.outer_nodes {
                    let p = mesh.nodes[node];
                    if p[1] >= 0.0 {
                        continue; // top half is not the contact side
                    }
                    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    let rel = [u[2 * node] - hub_ux, u[2 * node + 1] - hub_uy];
                    let inward = -(rel[0] * p[0] + rel[1] * p[1]) / r;
                    offset = offset.max(inward);
                }
                let strain = strain_energy(mesh, &model.materials, &u);
                let mut contact_work = 0.0;
                for &node in &active {
                    let g0 = mesh.nodes[node][1] - model.ground_y;
                    let uy = u[2 * node + 1];
                    contact_work += 0.5 * penalty * (g0 + uy) * uy;
                }
                let external_work = 0.5 * f_depth * hub_drop;
                return Ok(ContactSolution {
                    u,
                    hub_drop,
                    offset,
                    active,
                    strain_energy: strain,
                    contact_work,
                    external_work,
                    cg_iterations: total_cg,
                    penalty,
                });
            }
        }
    }
    Err(FemError::ActiveSetLoop(60, history))
}

/// One solve per force; forces must be ascending and offsets come out
/// monotone for an elastic model.
pub fn sweep_curve(model: &FemModel, forces_n: &[f64]) -> Result<Vec<(f64, f64)>, FemError> {
    assert!(
        forces_n.windows(2).all(|w| w[0] <= w[1]),
        "forces must be sorted ascending"
    );
    let mut curve = Vec::with_capacity(forces_n.len());
    for &f in forces_n {
        let sol = solve_contact(model, f)?;
        curve.push((f, sol.offset));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, LayerMaterials, TireGeometry};

    #[test]
    fn zero_force_means_zero_displacement() {
        let model = build_mesh(TireGeometry::default(), 3, 32);
        let sol = solve_contact(&model, 0.0).unwrap();
        assert_eq!(sol.hub_drop, 0.0);
        assert_eq!(sol.offset, 0.0);
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_force_with_fixed_active_set_doubles_displacement() {
        // linear check: solve at F and 2F, then verify the second solution
        // against a direct re-solve at doubled rhs with the same active set;
        // with matching active sets the whole map is linear
        let model = build_mesh(TireGeometry::default(), 3, 64);
        let a = solve_contact(&model, 30.0).unwrap();
        let b = solve_contact(&model, 60.0).unwrap();
        if a.active == b.active {
            for (ua, ub) in a.u.iter().zip(&b.u) {
                assert!((2.0 * ua - ub).abs() < 1e-6 * (ub.abs() + 1e-9).max(1e-6));
            }
            assert!((2.0 * a.offset - b.offset).abs() / b.offset < 1e-6);
        } else {
            // active sets grew: offsets must still be monotone
            assert!(b.offset > a.offset);
        }
    }

    #[test]
    fn left_right_symmetry() {
        let model = build_mesh(TireGeometry::default(), 4, 64);
        let sol = solve_contact(&model, 100.0).unwrap();
        let n_c = 64;
        // reflection x -> -x maps theta to pi - theta: j -> n_c/2 - j
        let rings = model.mesh.node_count() / n_c;
        let unorm = sol
            .u
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for ring in 0..rings {
            for j in 0..n_c {
                let a = ring * n_c + j;
                let b = ring * n_c + (n_c / 2 + n_c - j) % n_c;
                let (uxa, uya) = (sol.u[2 * a], sol.u[2 * a + 1]);
                let (uxb, uyb) = (sol.u[2 * b], sol.u[2 * b + 1]);
                assert!(
                    (uxa + uxb).abs() < 1e-8 * unorm.max(1e-12),
                    "ux not antisymmetric at ring {ring} j {j}"
                );
                assert!(
                    (uya - uyb).abs() < 1e-8 * unorm.max(1e-12),
                    "uy not symmetric at ring {ring} j {j}"
                );
            }
        }
    }

    #[test]
    fn energy_balance_holds_at_convergence() {
        let model = build_mesh(TireGeometry::default(), 4, 64);
        let sol = solve_contact(&model, 200.0).unwrap();
        let lhs = sol.external_work;
        let rhs = sol.strain_energy + sol.contact_work;
        let rel = (lhs - rhs).abs() / lhs;
        assert!(rel < 0.01, "external {lhs} vs internal {rhs} (rel {rel})");
    }

    #[test]
    fn offsets_monotone_in_force() {
        let model = build_mesh(TireGeometry::default(), 3, 64);
        let forces: Vec<f64> = (0..6).map(|i| 40.0 * (i + 1) as f64).collect();
        let curve = sweep_curve(&model, &forces).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].1 > pair[0].1, "{:?}", curve);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let model = build_mesh(TireGeometry::default(), 3, 32);
        let forces = [50.0, 100.0];
        let a = sweep_curve(&model, &forces).unwrap();
        let b = sweep_curve(&model, &forces).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sweep_is_empty() {
        let model = build_mesh(TireGeometry::default(), 2, 16);
        assert!(sweep_curve(&model, &[]).unwrap().is_empty());
    }

    #[test]
    fn thin_ring_matches_classical_deflection() {
        // slender single-material ring pinched by opposing point loads:
        // the load-line approach is 0.1488 F R^3 / (E I)
        let geometry = TireGeometry {
            r_inner: 77.0,
            r_layer: 81.0, // conforming ring inside the single material
            r_outer: 85.0,
            depth_mm: 1.0,
        };
        let n_c = 256;
        let model = build_mesh(geometry, 4, n_c)
            .with_materials(LayerMaterials {
                hub: Material::new(10.0, 1e-6),
                sensor: Material::new(10.0, 1e-6),
            });
        let mesh = &model.mesh;
        let rings = mesh.node_count() / n_c;
        let outer_ring = rings - 1;
        let top = outer_ring * n_c + n_c / 4;
        let bottom = outer_ring * n_c + 3 * n_c / 4;
        // mid-thickness radius nodes for the load keeps it a ring problem;
        // apply at the outer ring (thin ring: choice shifts result O(t/R))
        let f = 0.5; // N per unit depth
        let loads = vec![(top, 1, -f), (bottom, 1, f)];
        let side_a = outer_ring * n_c; // theta = 0
        let side_b = outer_ring * n_c + n_c / 2; // theta = pi
        let fixed = vec![(side_a, 1), (side_b, 1), (top, 0), (bottom, 0)];
        let u = solve_linear(mesh, &model.materials, &loads, &fixed).unwrap();
        let approach = u[2 * bottom + 1] - u[2 * top + 1];
        let r_mean: f64 = 81.0;
        let t: f64 = 8.0;
        let inertia = t.powi(3) / 12.0;
        let expect = 0.1488 * f * r_mean.powi(3) / (10.0 * inertia);
        let rel = (approach - expect).abs() / expect;
        assert!(
            rel < 0.05,
            "approach {approach:.5} vs thin-ring {expect:.5} (rel {rel:.3})"
        );
    }
}
