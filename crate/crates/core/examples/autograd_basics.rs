//! Fit a two-feature logistic regression with the tape and Adam, then
//! confirm its gradients against central differences.

use astnlab::autograd::{finite_difference_check, AdamConfig, AdamState, Tape, Tensor};

fn main() -> astnlab::Result<()> {
    // points above the line x0 + x1 = 1 are positive
    let xs: Vec<f64> = (0..40).flat_map(|i| [(i % 7) as f64 / 6.0, (i % 5) as f64 / 4.0]).collect();
    let ys: Vec<f64> = xs.chunks(2).map(|p| f64::from(p[0] + p[1] > 1.0)).collect();
    let x = Tensor::from_f64(&[40, 2], &xs)?;

    let mut w = Tensor::from_f64(&[1, 2], &[0.0, 0.0])?;
    let mut b = Tensor::from_f64(&[1], &[0.0])?;
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    let mut adam = AdamState::for_tensors(AdamConfig { lr: 0.1, ..Default::default() }, [&w, &b]);

    let loss_of = |tape: &mut Tape<f64>, w, b| -> astnlab::Result<_> {
        let xv = tape.constant(x.clone());
        let z = tape.matmul_bt(xv, w)?;
        let z = tape.add_row_bias(z, b)?;
        let p = tape.sigmoid(z);
        tape.bce(p, &ys)
    };

    for step in 0..=300 {
        let mut tape = Tape::new();
        let (wv, bv) = (tape.variable(w.clone()), tape.variable(b.clone()));
        let loss = loss_of(&mut tape, wv, bv)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.4}", tape.value(loss).data()[0]);
        }
        tape.backward(loss)?;
        w.set_grad(&tape.grad(wv).unwrap())?;
        b.set_grad(&tape.grad(bv).unwrap())?;
        adam.update(&mut [&mut w, &mut b])?;
    }
    println!("weights {:?} bias {:?}", w.data(), b.data());

    w.set_requires_grad(false);
    b.set_requires_grad(false);
    let report = finite_difference_check(&[w, b], 1e-5, |tape, v| loss_of(tape, v[0], v[1]))?;
    println!("max relative gradient error {:.2e}", report.max_relative_error);
    Ok(())
}
