//! Reverse-mode differentiation on the tape, checked against central
//! differences: first a small hand-built expression, then the complete
//! training objective.
//!
//! cargo run --release --example gradcheck

use grbe::num::{grad_check, GradCheckConfig, Matrix, ParamStore, Tape};
use grbe::trainer::{full_loss_gradcheck, FullLossCheck};

fn main() -> grbe::Result<()> {
    // loss = sum(sigmoid(x · w)) with x fixed
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?);
    let w = tape.leaf(Matrix::from_rows(&[vec![0.1], vec![-0.4]])?);
    let xw = tape.matmul(x, w)?;
    let s = tape.sigmoid(xw);
    let loss = tape.sum(s);
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("dloss/dw {:?}", grads.get(w).unwrap().data());

    let mut params = ParamStore::new();
    let id = params.add("w", Matrix::from_rows(&[vec![0.1], vec![-0.4]])?);
    let report = grad_check(&params, &GradCheckConfig::default(), |t, b| {
        let x = t.constant(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?);
        let xw = t.matmul(x, b.var(id))?;
        let s = t.sigmoid(xw);
        Ok(t.sum(s))
    })?;
    println!("toy expression: max relative error {:.2e}", report.max_relative_error);

    let start = std::time::Instant::now();
    let report = full_loss_gradcheck(&FullLossCheck::default())?;
    for p in &report.params {
        println!("  {:<24} {:>5} coords  {:.2e}", p.name, p.coordinates, p.max_relative_error);
    }
    println!(
        "full objective: max relative error {:.2e} ({}) in {:.1}s",
        report.max_relative_error,
        if report.passes(1e-4) { "pass" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
