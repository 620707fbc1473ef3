use retifluid_core::gradcheck::*;
use retifluid_core::{Shape, Tensor};

#[test]
fn relative_error_is_symmetric_and_scaled() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert_eq!(relative_error(2.0, 1.0), relative_error(1.0, 2.0));
    assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-12);
}

#[test]
fn quadratic_passes() {
    let x = Tensor::from_vec(Shape::vector(3), vec![0.3, -1.2, 2.0]).unwrap();
    let good = grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        },
        &x,
        H_SCALE,
        DEFAULT_TOL,
    )
    .unwrap();
    assert!(good.passed());
    assert_eq!(good.checked, 3);
}

#[test]
fn small_suite_passes() {
    let results = run_suite(3, 2).unwrap();
    assert!(results.len() >= 20);
    let bad = failures(&results);
    assert!(
        bad.is_empty(),
        "{:?}",
        bad.iter().map(|c| &c.name).collect::<Vec<_>>()
    );
}
