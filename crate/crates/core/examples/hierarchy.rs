//! QEM pooling and barycentric un-pooling on the desk-scale template.

use transformesh::hierarchy::{build_hierarchy, HierarchyConfig};
use transformesh::mesh::shapes::ellipsoid;

fn main() -> transformesh::Result<()> {
    let template = ellipsoid(3, [1.0, 0.5, 0.5]);
    let h = build_hierarchy(&template, &HierarchyConfig::default())?;
    for k in 0..h.n_levels() {
        let m = h.mesh(k);
        println!(
            "level {k}: {} vertices, {} faces, euler {}, closed {}",
            m.n_vertices(),
            m.n_faces(),
            m.euler_characteristic(),
            m.is_closed_manifold()
        );
    }
    for k in 0..h.n_levels() - 1 {
        let fine = h.mesh(k).flat_vertices();
        let round_trip = h.up(k).apply(&h.down(k).apply(&fine, 1, 3), 1, 3);
        let n = h.n_vertices(k);
        let mean: f64 = (0..n)
            .map(|i| (0..3).map(|c| (round_trip[3 * i + c] - fine[3 * i + c]).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        println!(
            "up(down(level {k})): mean displacement {mean:.4} vs mean edge {:.4}",
            h.mesh(k).mean_edge_length()
        );
    }
    println!("cache key {}", h.key());
    Ok(())
}
