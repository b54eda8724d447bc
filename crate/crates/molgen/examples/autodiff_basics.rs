//! The differentiation engine everything else is built on: record tensor
//! operations on a tape, run one backward pass, check the analytic
//! gradients against finite differences, and fit a tiny least-squares
//! model with the Adam optimizer.

use molgen::tensor::gradcheck::{central_diff_grad, max_rel_err};
use molgen::tensor::{clip_grad_norm, AdamState, GradMap, ParamStore, Tape, Tensor};

fn main() {
    // -- record a computation and differentiate it ---------------------
    //
    // f(W) = sum(relu(x W)) for a fixed input row x.
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(&[1.0, -2.0, 0.5]));
    let w = tape.param(
        Tensor::matrix(&[
            vec![0.4, -0.3],
            vec![-0.1, 0.8],
            vec![-0.6, 0.2],
        ])
        .unwrap(),
    );
    let h = tape.matmul(x, w).unwrap();
    let a = tape.relu(h);
    let f = tape.sum_all(a);
    println!("f(W)            = {:.6}", tape.value(f).item());

    let grads = tape.backward(f).unwrap();
    println!("df/dW           = {:?}", grads.get(w).unwrap());

    // -- verify against central finite differences ---------------------
    //
    // Rebuild the same function from raw parameter data so the checker
    // can nudge each coordinate.
    // One hidden unit is active, the other sits in relu's dead zone, so
    // half the gradient entries are exactly zero.
    let eval = |data: &[f64]| {
        let mut t = Tape::new();
        let xx = t.constant(Tensor::row(&[1.0, -2.0, 0.5]));
        let ww = t.param(Tensor::new(vec![3, 2], data.to_vec()).unwrap());
        let hh = t.matmul(xx, ww).unwrap();
        let aa = t.relu(hh);
        let ff = t.sum_all(aa);
        t.value(ff).item()
    };
    let w_data = tape.value(w).data().to_vec();
    let numeric = central_diff_grad(eval, &w_data, 1e-5);
    let analytic = grads.get(w).unwrap();
    println!("max rel error   = {:.2e}", max_rel_err(analytic, &numeric));

    // -- fit a least-squares line with Adam -----------------------------
    //
    // Learn w, b so that y = 3x - 1 from four points.
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [-1.0, 2.0, 5.0, 8.0];
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(0.0));
    store.insert("b", Tensor::scalar(0.0));
    let mut adam = AdamState::new(0.1);

    for step in 0..200 {
        let mut t = Tape::new();
        let w = t.param(store.get("w").unwrap().clone());
        let b = t.param(store.get("b").unwrap().clone());
        let mut loss = None;
        for (&xv, &yv) in xs.iter().zip(&ys) {
            let pred_x = t.scale(w, xv);
            let pred = t.add(pred_x, b).unwrap();
            let err = t.add_scalar(pred, -yv);
            let sq = t.pow_const(err, 2.0);
            loss = Some(match loss {
                None => sq,
                Some(acc) => t.add(acc, sq).unwrap(),
            });
        }
        let loss = t.scale(loss.unwrap(), 1.0 / xs.len() as f64);
        if step % 50 == 0 {
            println!("step {step:3}  loss = {:.6}", t.value(loss).item());
        }
        let grads = t.backward(loss).unwrap();
        let mut by_name: GradMap = GradMap::new();
        by_name.insert("w".into(), grads.get(w).unwrap().to_vec());
        by_name.insert("b".into(), grads.get(b).unwrap().to_vec());
        clip_grad_norm(&mut by_name, 10.0);
        adam.step(&mut store, &by_name).unwrap();
    }
    println!(
        "fitted          w = {:.4}, b = {:.4} (target 3, -1)",
        store.get("w").unwrap().item(),
        store.get("b").unwrap().item()
    );
}
