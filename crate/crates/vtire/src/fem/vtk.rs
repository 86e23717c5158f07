//! Legacy-VTK ASCII dump of a mesh and displacement field, for inspection
//! in ParaView or similar.

use std::io::Write;
use std::path::Path;

use super::FemMesh;

pub fn write_vtk<P: AsRef<Path>>(
    path: P,
    mesh: &FemMesh,
    displacements: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "tire annulus")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {} double", mesh.node_count())?;
    for n in &mesh.nodes {
        writeln!(f, "{} {} 0", n[0], n[1])?;
    }
    writeln!(f, "CELLS {} {}", mesh.quads.len(), mesh.quads.len() * 5)?;
    for q in &mesh.quads {
        writeln!(f, "4 {} {} {} {}", q[0], q[1], q[2], q[3])?;
    }
    writeln!(f, "CELL_TYPES {}", mesh.quads.len())?;
    for _ in &mesh.quads {
        writeln!(f, "9")?; // VTK_QUAD
    }
    writeln!(f, "CELL_DATA {}", mesh.quads.len())?;
    writeln!(f, "SCALARS material int 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for &m in &mesh.elem_mat {
        writeln!(f, "{m}")?;
    }
    if let Some(u) = displacements {
        writeln!(f, "POINT_DATA {}", mesh.node_count())?;
        writeln!(f, "VECTORS displacement double")?;
        for node in 0..mesh.node_count() {
            writeln!(f, "{} {} 0", u[2 * node], u[2 * node + 1])?;
        }
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, TireGeometry};

    #[test]
    fn vtk_dump_is_parsable_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.vtk");
        let model = build_mesh(TireGeometry::default(), 2, 16);
        let u = vec![0.0; 2 * model.mesh.node_count()];
        write_vtk(&path, &model.mesh, Some(&u)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile"));
        assert!(text.contains("POINTS 48 double"));
        assert!(text.contains("VECTORS displacement"));
    }
}
