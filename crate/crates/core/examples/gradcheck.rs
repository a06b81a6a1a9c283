//! Reverse-mode gradients against central finite differences.

use transformesh::autodiff::gradcheck::check_gradients;
use transformesh::autodiff::Tensor;
use transformesh::training::toy_gradcheck;

fn main() -> transformesh::Result<()> {
    let x = Tensor::leaf(&[2, 3], vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1])?;
    let w = Tensor::leaf(&[3, 4], vec![0.5, -0.7, 0.2, 0.9, -1.1, 0.4, 0.3, -0.2, 0.8, -0.6, 1.2, 0.1])?;
    let report = check_gradients(
        &[x.clone(), w.clone()],
        || Ok(x.matmul(&w)?.layer_norm(1e-5)?.gelu().sum()),
        1e-5,
        None,
    )?;
    println!("matmul -> layer_norm -> gelu: max relative error {:.2e}", report.max_relative_error);

    let report = toy_gradcheck(0, 1e-6)?;
    println!(
        "TransforMesh loss, {} parameter entries: max relative error {:.2e}",
        report.checked, report.max_relative_error
    );
    Ok(())
}
