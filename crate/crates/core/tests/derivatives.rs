mod common;

use scalepinn::autodiff::{fd_check, Activation, Jet, JetOp, Operand};

#[test]
fn network_jets_match_finite_differences() {
    let (low, high) = common::jet_fd_sweep(100, 11, 1e-3);
    println!("orders 1-2: {low:e}, orders 3-4: {high:e}");
    assert!(low <= 1e-6, "orders 1-2 worst {low:e}");
    assert!(high <= 1e-4, "orders 3-4 worst {high:e}");
}

#[test]
fn taped_gradient_matches_directional_differences() {
    let worst = common::gradient_sweep(50, 5);
    println!("worst gradient discrepancy {worst:e}");
    assert!(worst <= 1e-5, "{worst:e}");
}

#[test]
fn activation_jets_match_finite_differences() {
    for act in [Activation::Sin, Activation::Silu, Activation::Softplus] {
        for &x in &[-2.3, -0.4, 0.0, 0.7, 1.9] {
            let f = move |j: Jet| {
                // z = x²/2 + 0.3x, then the activation
                let sq = Jet::combine(JetOp::Mul, j, Operand::Jet(j)).unwrap().scale(0.5);
                let z = Jet::combine(JetOp::Add, sq, Operand::Jet(j.scale(0.3))).unwrap();
                z.activate(act)
            };
            let e = fd_check(&f, x, 4, 0.0);
            assert!(e <= 1e-4, "{act:?} at {x}: {e:e}");
        }
    }
}
