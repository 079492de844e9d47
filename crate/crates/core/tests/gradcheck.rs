mod common;

use common::grad;
use hxnet::tensor::Prng;

#[test]
fn conv_backward() {
    let e = grad::conv(&mut Prng::new(1));
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn batchnorm_backward() {
    let e = grad::batchnorm(&mut Prng::new(2));
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn relu_backward() {
    let e = grad::relu(&mut Prng::new(3));
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn sedenion_conv_backward() {
    let e = grad::sedenion_conv(&mut Prng::new(4));
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn learn_vector_backward() {
    let e = grad::learn_vector(&mut Prng::new(5));
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn unet_backward() {
    let (e, checked, total) = grad::unet(&mut Prng::new(6), 0.01);
    assert!(checked * 100 >= total);
    assert!(e <= 3e-2, "{e} over {checked}/{total} parameters");
}
