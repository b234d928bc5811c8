//! RMSprop with a per-parameter squared-gradient accumulator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::{Scalar, Tensor};

/// Named parameter set. BTreeMap keeps iteration order deterministic, which
/// the checkpoint format and single-worker reproducibility rely on.
pub type ParamRegistry<T> = BTreeMap<String, Tensor<T>>;

/// Squared-gradient accumulators, lazily created per parameter.
#[derive(Clone, Debug)]
pub struct RmspropState<T> {
    acc: BTreeMap<String, Tensor<T>>,
    pub decay: T,
    pub epsilon: T,
}

impl<T: Scalar> RmspropState<T> {
    /// Defaults: decay 0.99, epsilon 1e-8.
    pub fn new() -> Self {
        Self::with_hyperparams(T::from_f64(0.99), T::from_f64(1e-8))
    }

    pub fn with_hyperparams(decay: T, epsilon: T) -> Self {
        RmspropState { acc: BTreeMap::new(), decay, epsilon }
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor<T>> {
        self.acc.get(name)
    }
}

impl<T: Scalar> Default for RmspropState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One RMSprop update:
///   acc   <- decay * acc + (1 - decay) * g^2
///   param <- param - lr * g / (sqrt(acc) + eps)
///
/// Every gradient entry must match a registered parameter's shape.
pub fn rmsprop_step<T: Scalar>(
    params: &mut ParamRegistry<T>,
    grads: &Gradients<T>,
    state: &mut RmspropState<T>,
    lr: T,
) -> Result<()> {
    let one = T::one();
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Input(format!("gradient for unknown parameter {name:?}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} vs parameter {:?} for {name:?}",
                g.shape(),
                p.shape()
            )));
        }
        let acc = state
            .acc
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for ((pv, av), &gv) in p
            .data_mut()
            .iter_mut()
            .zip(acc.data_mut())
            .zip(g.data())
        {
            *av = state.decay * *av + (one - state.decay) * gv * gv;
            *pv = *pv - lr * gv / (av.sqrt() + state.epsilon);
        }
        p.check_finite("rmsprop_step parameter")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use alloc::vec;

    fn grads_of(value: f64, gradient: f64) -> (ParamRegistry<f64>, Gradients<f64>) {
        let mut params = ParamRegistry::new();
        params.insert(String::from("p"), Tensor::scalar(value));
        // build a gradient via a tape so Gradients stays opaque
        let mut tape = Tape::<f64>::new();
        let p = tape.parameter("p", Tensor::scalar(value)).unwrap();
        let scaled = tape.scale(p, gradient);
        let loss = tape.sum(scaled);
        let grads = tape.backward(loss).unwrap();
        (params, grads)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut params, grads) = grads_of(1.5, 0.0);
        let mut state = RmspropState::new();
        rmsprop_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params["p"].data(), &[1.5]);
    }

    #[test]
    fn zero_lr_updates_accumulator_only() {
        let (mut params, grads) = grads_of(1.5, 2.0);
        let mut state = RmspropState::new();
        rmsprop_step(&mut params, &grads, &mut state, 0.0).unwrap();
        assert_eq!(params["p"].data(), &[1.5]);
        let acc = state.accumulator("p").unwrap().data()[0];
        assert!((acc - 0.01 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_single_step() {
        // rho=0.99, eps=1e-8, g=1, acc=0, lr=0.1:
        // acc = 0.01, delta = -0.1 / (0.1 + 1e-8)
        let (mut params, grads) = grads_of(0.0, 1.0);
        let mut state = RmspropState::new();
        rmsprop_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!((state.accumulator("p").unwrap().data()[0] - 0.01).abs() < 1e-15);
        let expect = -0.1 / (0.1f64 + 1e-8);
        assert!((params["p"].data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn accumulator_stays_nonnegative() {
        let (mut params, grads) = grads_of(0.3, -2.5);
        let mut state = RmspropState::new();
        for _ in 0..50 {
            rmsprop_step(&mut params, &grads, &mut state, 0.01).unwrap();
        }
        assert!(state.accumulator("p").unwrap().data()[0] >= 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = ParamRegistry::new();
        params.insert(String::from("p"), Tensor::<f64>::zeros(vec![2, 2]));
        let mut tape = Tape::<f64>::new();
        let p = tape.parameter("p", Tensor::scalar(1.0)).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        let mut state = RmspropState::new();
        assert!(rmsprop_step(&mut params, &grads, &mut state, 0.1).is_err());
    }
}
