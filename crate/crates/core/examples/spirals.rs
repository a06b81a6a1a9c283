//! Spiral sequences on a small sphere, and one spiral convolution over them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transformesh::autodiff::{ParamStore, Tensor};
use transformesh::mesh::shapes::icosphere;
use transformesh::nn::SpiralConv;
use transformesh::spiral::{build_spiral_table, FILLER};

fn main() -> transformesh::Result<()> {
    let mesh = icosphere(1);
    let table = build_spiral_table(&mesh, 9, 0)?;
    for v in [0, 12, 41] {
        println!("S({v}, 9) = {:?}", table.row(v));
    }

    // Spirals longer than the mesh pad with FILLER.
    let long = build_spiral_table(&icosphere(0), 16, 0)?;
    let padded = long.row(0).iter().filter(|&&i| i == FILLER).count();
    println!("icosphere(0), l=16: {padded} filler slots per row");

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = SpiralConv::new(&mut store, "conv", &table, 3, 8, true, false, &mut rng)?;
    let x = Tensor::from_vec(&[1, mesh.n_vertices(), 3], mesh.flat_vertices())?;
    let y = conv.forward(&x)?;
    println!("spiral conv {:?} -> {:?} with {} parameters", x.shape(), y.shape(), store.n_scalars());
    Ok(())
}
