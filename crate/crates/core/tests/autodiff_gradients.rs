//! Every differentiable op against central finite differences (h = 1e-5).

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transformesh::autodiff::gradcheck::check_gradients;
use transformesh::autodiff::Tensor;
use transformesh::hierarchy::SparseMatrix;
use transformesh::spiral::FILLER;
use transformesh::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_leaf(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep away from the kinks of abs and elu.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::leaf(shape, data).unwrap()
}

/// Contract the op's output with fixed random weights so every output element matters.
fn weighted(out: Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::from_vec(out.shape(), w)?;
    Ok(out.mul(&w)?.sum())
}

fn check(name: &str, params: &[Tensor], f: impl Fn() -> Result<Tensor>) {
    let report = check_gradients(params, f, H, None).unwrap();
    assert!(
        report.max_relative_error < TOL,
        "{name}: max relative error {} at {:?}",
        report.max_relative_error,
        report.worst
    );
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_leaf(&mut rng, &[3, 4]);
    let b = random_leaf(&mut rng, &[3, 4]);
    let bias = random_leaf(&mut rng, &[4]);
    let ps = [a.clone(), b.clone(), bias.clone()];
    check("add", &ps, || weighted(a.add(&b)?.add(&bias)?, 1));
    check("sub", &ps, || weighted(a.sub(&b)?.sub(&bias)?, 2));
    check("mul", &ps, || weighted(a.mul(&b)?.mul(&bias)?, 3));
    check("scale", &ps, || weighted(a.scale(-2.5), 4));
    check("abs", &ps, || weighted(a.abs(), 5));
    check("gelu", &ps, || weighted(a.gelu(), 6));
    check("elu", &ps, || weighted(a.elu(), 7));
}

#[test]
fn linear_algebra_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_leaf(&mut rng, &[2, 3, 4]);
    let w = random_leaf(&mut rng, &[4, 5]);
    check("matmul", &[x.clone(), w.clone()], || weighted(x.matmul(&w)?, 8));
    let a = random_leaf(&mut rng, &[2, 3, 4]);
    let b = random_leaf(&mut rng, &[2, 4, 2]);
    check("bmm", &[a.clone(), b.clone()], || weighted(a.bmm(&b)?, 9));
    let m = Rc::new(SparseMatrix::from_rows(
        3,
        vec![vec![(0, 0.25), (2, 0.75)], vec![(1, 1.0)]],
    ));
    let f = random_leaf(&mut rng, &[2, 3, 4]);
    check("spmm", &[f.clone()], || weighted(f.spmm(m.clone())?, 10));
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_leaf(&mut rng, &[2, 3, 4]);
    let y = random_leaf(&mut rng, &[2, 1, 4]);
    let ps = [x.clone(), y.clone()];
    check("concat", &ps, || weighted(Tensor::concat(&[x.clone(), y.clone()], 1)?, 11));
    check("slice", &ps, || weighted(x.slice(2, 1, 3)?, 12));
    check("reshape", &ps, || weighted(x.reshape(&[6, 4])?, 13));
    check("permute", &ps, || weighted(x.permute(&[2, 0, 1])?, 14));
    check("transpose", &ps, || weighted(x.transpose()?, 15));
    check("sum_axis", &ps, || weighted(x.sum_axis(1)?, 16));
    check("mean_axis", &ps, || weighted(x.mean_axis(2)?, 17));
    check("sum/mean", &ps, || Ok(x.sum().add(&x.mean().scale(3.0))?));
    let table = Rc::new(vec![2, 0, FILLER, 1, 1, 2]);
    check("gather_rows", &ps, || weighted(x.gather_rows(table.clone(), 3)?, 18));
}

#[test]
fn normalization_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_leaf(&mut rng, &[3, 5]);
    check("softmax", &[x.clone()], || weighted(x.softmax()?, 19));
    check("masked softmax", &[x.clone()], || {
        weighted(x.mask_last_axis(&[false, true, false, false, true])?.softmax()?, 20)
    });
    check("layer_norm", &[x.clone()], || weighted(x.layer_norm(1e-5)?, 21));
}
