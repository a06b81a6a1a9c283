//! Build a template, write it as OBJ and PLY, read it back and inspect its topology.

use transformesh::mesh::shapes::ellipsoid;
use transformesh::mesh::{derive_adjacency, load_mesh, one_ring_ccw, save_mesh, MeshFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = ellipsoid(3, [1.0, 0.5, 0.5]);
    let dir = std::env::temp_dir().join("transformesh_mesh_io");
    std::fs::create_dir_all(&dir)?;

    for (name, format) in [("template.obj", MeshFormat::Obj), ("template.ply", MeshFormat::Ply)] {
        let path = dir.join(name);
        save_mesh(&mesh, &path, format, None)?;
        let back = load_mesh(&path, format)?;
        assert_eq!(back.vertices(), mesh.vertices());
        println!("{}: {} vertices, {} faces", path.display(), back.n_vertices(), back.n_faces());
    }

    let adjacency = derive_adjacency(&mesh);
    println!(
        "edges={} euler={} closed_manifold={} mean_edge={:.4} bbox_diagonal={:.4}",
        adjacency.edges().len(),
        mesh.euler_characteristic(),
        mesh.is_closed_manifold(),
        mesh.mean_edge_length(),
        mesh.bbox_diagonal()
    );
    println!("one-ring of vertex 0 (counter-clockwise): {:?}", one_ring_ccw(&mesh, &adjacency, 0)?);
    Ok(())
}
