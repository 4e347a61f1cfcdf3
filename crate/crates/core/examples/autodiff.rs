//! Reverse-mode gradients on a tape, checked against finite differences.

use densecap::diffcore::{grad_check, Tape, Tensor};

fn main() -> densecap::Result<()> {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25])?);
    let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 3.0])?);
    let h = tape.matmul(x, w)?;
    let h = tape.tanh(h);
    let loss = tape.sum(h);
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item());
    println!("dloss/dw = {:?}", grads.get(w).expect("leaf gradient").data());

    // the same function, checked numerically
    let report = grad_check(
        |t: &mut Tape, p| {
            let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 3.0])?);
            let h = t.matmul(x, p[0])?;
            let h = t.tanh(h);
            Ok(t.sum(h))
        },
        &[Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25])?],
        1e-6,
    )?;
    println!("max relative error vs central differences: {:.2e}", report.max_rel_error);
    Ok(())
}
