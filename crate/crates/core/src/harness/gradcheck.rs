use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::networks::{GOAL_DIM, MEAS_DIM, STATE_FEATURES};
use crate::agent::{ActorNet, CriticNet, NetConfig};
use crate::error::Result;
use crate::nn::{grad_check, Activation, Conv1d, Dense, GradCheckConfig, Parameterized, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub module: &'static str,
    pub instance: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradcheckRow {
    pub const HEADER: &'static str = "module,instance,checked,max_rel_error,passed";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6e},{}",
            self.module, self.instance, self.checked, self.max_rel_error, self.passed
        )
    }
}

pub fn gradcheck_csv(rows: &[GradcheckRow]) -> String {
    let mut s = String::from(GradcheckRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Dense followed by softsign, scored by a fixed random projection.
struct DenseProbe {
    layer: Dense,
}

impl Parameterized for DenseProbe {
    fn params(&self) -> Vec<&Tensor> {
        self.layer.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layer.params_mut()
    }
    fn param_names(&self) -> Vec<String> {
        self.layer.param_names()
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_net<R: Rng + ?Sized>(rng: &mut R) -> NetConfig {
    let history_len = rng.random_range(3..=8);
    NetConfig {
        history_len,
        conv_filters: rng.random_range(2..=6),
        conv_width: rng.random_range(1..=3.min(history_len)),
        hidden: [rng.random_range(3..=8), rng.random_range(3..=8), rng.random_range(2..=6)],
        merge_width: rng.random_range(3..=8),
        final_init: 0.5,
    }
}

fn check_dense<R: Rng + ?Sized>(rng: &mut R, cfg: &GradCheckConfig) -> (usize, f64) {
    let (b, i, o) = (rng.random_range(1..=4), rng.random_range(2..=10), rng.random_range(1..=6));
    let mut probe = DenseProbe {
        layer: Dense::new(i, o, rng),
    };
    let x = Tensor::uniform(&[b, i], 1.0, rng);
    let w = Tensor::uniform(&[b, o], 1.0, rng);
    let act = Activation::Softsign;
    let obj = |p: &DenseProbe| {
        let mut y = p.layer.forward(&x).unwrap();
        act.forward_inplace(&mut y);
        dot(&y, &w)
    };
    let mut y = probe.layer.forward(&x).unwrap();
    act.forward_inplace(&mut y);
    let mut dy = w.clone();
    act.backward_inplace(&y, &mut dy);
    let mut g = probe.layer.zero_grads();
    probe.layer.backward(&x, &dy, &mut g, false).unwrap();
    let rep = grad_check(&mut probe, obj, &[g.weight, g.bias], cfg, rng);
    (rep.checked, rep.max_rel_error)
}

fn check_conv<R: Rng + ?Sized>(rng: &mut R, cfg: &GradCheckConfig) -> (usize, f64) {
    let (b, l, c) = (rng.random_range(1..=3), rng.random_range(3..=9), rng.random_range(1..=5));
    let (f, width) = (rng.random_range(1..=5), rng.random_range(1..=3));
    let mut conv = Conv1d::new(c, f, width, rng);
    let lout = conv.output_len(l).unwrap();
    let x = Tensor::uniform(&[b, l, c], 1.0, rng);
    let w = Tensor::from_vec(&[b, lout, f], Tensor::uniform(&[b * lout * f], 1.0, rng).into_data()).unwrap();
    let obj = |m: &Conv1d| dot(&m.forward(&x).unwrap(), &w);
    let mut g = conv.zero_grads();
    conv.backward(&x, &w, &mut g, false).unwrap();
    let rep = grad_check(&mut conv, obj, &[g.filters, g.bias], cfg, rng);
    (rep.checked, rep.max_rel_error)
}

fn net_inputs<R: Rng + ?Sized>(rng: &mut R, net: &NetConfig, b: usize) -> [Tensor; 5] {
    [
        Tensor::uniform(&[b, net.history_len, STATE_FEATURES], 1.0, rng),
        Tensor::uniform(&[b, MEAS_DIM], 1.0, rng),
        Tensor::uniform(&[b, GOAL_DIM], 1.0, rng),
        Tensor::uniform(&[b, 1], 1.0, rng),
        Tensor::uniform(&[b, 1], 1.0, rng),
    ]
}

fn check_actor<R: Rng + ?Sized>(rng: &mut R, cfg: &GradCheckConfig) -> Result<(usize, f64)> {
    let net = random_net(rng);
    let mut actor = ActorNet::new(&net, rng);
    let b = rng.random_range(1..=4);
    let [s, m, g, _, w] = net_inputs(rng, &net, b);
    let (_, cache) = actor.forward(&s, &m, &g)?;
    let grads = actor.backward(&cache, &w)?;
    let obj = |a: &ActorNet| dot(&a.forward(&s, &m, &g).unwrap().0, &w);
    let rep = grad_check(&mut actor, obj, &grads, cfg, rng);
    Ok((rep.checked, rep.max_rel_error))
}

fn check_critic<R: Rng + ?Sized>(rng: &mut R, cfg: &GradCheckConfig) -> Result<(usize, f64)> {
    let net = random_net(rng);
    let mut critic = CriticNet::new(&net, rng);
    let b = rng.random_range(1..=4);
    let [s, _, g, a, w] = net_inputs(rng, &net, b);
    let (_, cache) = critic.forward(&s, &g, &a)?;
    let (grads, _) = critic.backward(&cache, &w, true)?;
    let obj = |c: &CriticNet| dot(&c.forward(&s, &g, &a).unwrap().0, &w);
    let rep = grad_check(&mut critic, obj, &grads.expect("requested"), cfg, rng);
    Ok((rep.checked, rep.max_rel_error))
}

/// Central-difference checks of every differentiable module on `instances`
/// random shapes and inputs each.
pub fn run_gradchecks(instances: usize, seed: u64) -> Result<Vec<GradcheckRow>> {
    let cfg = GradCheckConfig {
        max_coords: None,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(4 * instances);
    for instance in 0..instances {
        let results = [
            ("dense", check_dense(&mut rng, &cfg)),
            ("conv1d", check_conv(&mut rng, &cfg)),
            ("actor", check_actor(&mut rng, &cfg)?),
            ("critic", check_critic(&mut rng, &cfg)?),
        ];
        for (module, (checked, err)) in results {
            rows.push(GradcheckRow {
                module,
                instance,
                checked,
                max_rel_error: err,
                passed: err < cfg.tolerance,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_modules_pass_on_a_few_instances() {
        let rows = run_gradchecks(3, 4).unwrap();
        assert_eq!(rows.len(), 12);
        for r in &rows {
            assert!(r.passed, "{r:?}");
            assert!(r.checked > 0);
        }
        let csv = gradcheck_csv(&rows);
        assert_eq!(csv.lines().count(), 13);
    }
}
