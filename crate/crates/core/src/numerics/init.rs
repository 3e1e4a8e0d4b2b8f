use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Conv1dLayer, Conv2dLayer, Scalar, Tensor};

/// Samples `N(0, 2 / fan_in)` for every element of `shape`.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

/// Kaiming-normal weights (fan-in mode), zero bias.
pub fn kaiming_init<T: Scalar, R: Rng + ?Sized>(layer: &mut Conv2dLayer<T>, rng: &mut R) {
    let fan_in = layer.fan_in();
    layer.weight = kaiming_normal(layer.weight.shape(), fan_in, rng);
    layer.bias = Tensor::zeros(layer.bias.shape());
}

pub fn kaiming_init_1d<T: Scalar, R: Rng + ?Sized>(layer: &mut Conv1dLayer<T>, rng: &mut R) {
    let k = layer.kernel_size();
    layer.weight = kaiming_normal(layer.weight.shape(), k, rng);
    if let Some(b) = &mut layer.bias {
        *b = Tensor::zeros(b.shape());
    }
}
