//! Small reverse-mode kernel: tensors, dense and conv layers, Adam, gradient
//! checking and a weight container. Enough for the fixed actor/critic shapes;
//! there is no general autodiff graph.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Container;
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use layers::{Activation, Conv1d, ConvGrads, Dense, DenseGrads};
pub use tensor::Tensor;

/// Anything with an ordered list of trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Parameter names aligned with [`Parameterized::params`].
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.filters, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filters, &mut self.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["filters".into(), "bias".into()]
    }
}

/// `τ·source + (1-τ)·target`, elementwise over aligned parameter lists.
pub fn soft_update<M: Parameterized>(target: &mut M, source: &M, tau: f64) {
    for (t, s) in target.params_mut().into_iter().zip(source.params()) {
        debug_assert!(t.same_shape(s));
        if tau == 1.0 {
            t.data_mut().copy_from_slice(s.data());
            continue;
        }
        for (x, y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two-layer tanh net with a squared-sum readout, for gradient checks.
    struct TwoLayer {
        a: Dense,
        b: Dense,
        corrupt: bool,
    }

    impl Parameterized for TwoLayer {
        fn params(&self) -> Vec<&Tensor> {
            let mut v = self.a.params();
            v.extend(self.b.params());
            v
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            let mut v = self.a.params_mut();
            v.extend(self.b.params_mut());
            v
        }
        fn param_names(&self) -> Vec<String> {
            vec!["a.w".into(), "a.b".into(), "b.w".into(), "b.b".into()]
        }
    }

    impl TwoLayer {
        fn loss(&self, x: &Tensor) -> f64 {
            let mut h = self.a.forward(x).unwrap();
            Activation::Tanh.forward_inplace(&mut h);
            let y = self.b.forward(&h).unwrap();
            0.5 * y.data().iter().map(|v| v * v).sum::<f64>()
        }

        fn grads(&self, x: &Tensor) -> Vec<Tensor> {
            let mut h = self.a.forward(x).unwrap();
            Activation::Tanh.forward_inplace(&mut h);
            let y = self.b.forward(&h).unwrap();
            let mut gb = self.b.zero_grads();
            let mut dh = self.b.backward(&h, &y, &mut gb, true).unwrap().unwrap();
            if !self.corrupt {
                Activation::Tanh.backward_inplace(&h, &mut dh);
            }
            let mut ga = self.a.zero_grads();
            self.a.backward(x, &dh, &mut ga, false).unwrap();
            vec![ga.weight, ga.bias, gb.weight, gb.bias]
        }
    }

    #[test]
    fn linear_layer_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Dense::new(6, 3, &mut rng);
        let x = Tensor::uniform(&[4, 6], 1.0, &mut rng);
        let y = layer.forward(&x).unwrap();
        let mut g = layer.zero_grads();
        layer.backward(&x, &y, &mut g, false).unwrap();
        let report = grad_check(
            &mut layer,
            |l: &Dense| 0.5 * l.forward(&x).unwrap().data().iter().map(|v| v * v).sum::<f64>(),
            &[g.weight, g.bias],
            &GradCheckConfig {
                max_coords: None,
                tolerance: 1e-8,
                ..Default::default()
            },
            &mut rng,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn two_layer_tanh_passes_and_corruption_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(&[3, 8], 1.0, &mut rng);
        let mut net = TwoLayer {
            a: Dense::new(8, 16, &mut rng),
            b: Dense::new(16, 4, &mut rng),
            corrupt: false,
        };
        let g = net.grads(&x);
        let cfg = GradCheckConfig::default();
        let rep = grad_check(&mut net, |n: &TwoLayer| n.loss(&x), &g, &cfg, &mut rng);
        assert_eq!(rep.checked, 100);
        assert!(rep.passed(), "{rep:?}");

        net.corrupt = true;
        let g = net.grads(&x);
        let rep = grad_check(&mut net, |n: &TwoLayer| n.loss(&x), &g, &cfg, &mut rng);
        assert!(!rep.passed(), "corrupted backward slipped through: {rep:?}");
    }

    #[test]
    fn soft_update_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = Dense::new(3, 2, &mut rng);
        let mut tgt = Dense::new(3, 2, &mut rng);
        let before = tgt.clone();
        soft_update(&mut tgt, &src, 0.0);
        assert_eq!(tgt, before);
        soft_update(&mut tgt, &src, 1.0);
        assert_eq!(tgt, src);

        let mut t = Dense::from_parts(Tensor::zeros(&[1, 1]), Tensor::zeros(&[1])).unwrap();
        let s = Dense::from_parts(
            Tensor::from_vec(&[1, 1], vec![1.0]).unwrap(),
            Tensor::scalar_vec(&[1.0]),
        )
        .unwrap();
        soft_update(&mut t, &s, 0.01);
        assert_eq!(t.weight.data(), &[0.01]);
    }
}
