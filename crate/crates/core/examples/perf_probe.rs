use goalcc_core::agent::networks::*;
use goalcc_core::nn::Tensor;
use rand::SeedableRng;
fn main() {
    let cfg = NetConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let actor = ActorNet::new(&cfg, &mut rng);
    let critic = CriticNet::new(&cfg, &mut rng);
    let b = 64;
    let s = Tensor::uniform(&[b, 16, 4], 1.0, &mut rng);
    let m = Tensor::uniform(&[b, 3], 1.0, &mut rng);
    let g = Tensor::uniform(&[b, 3], 1.0, &mut rng);
    let a = Tensor::uniform(&[b, 1], 1.0, &mut rng);
    let t = std::time::Instant::now();
    let n = 200;
    for _ in 0..n {
        let (_u, _) = actor.forward(&s, &m, &g).unwrap();
        let (_q, _) = critic.forward(&s, &g, &a).unwrap();
        let (q, cc) = critic.forward(&s, &g, &a).unwrap();
        let _ = critic.backward(&cc, &q, true).unwrap();
        let (u, ac) = actor.forward(&s, &m, &g).unwrap();
        let (q2, cc2) = critic.forward(&s, &g, &u).unwrap();
        let (_, da) = critic.backward(&cc2, &q2, false).unwrap();
        let _ = actor.backward(&ac, &da).unwrap();
    }
    println!("per step {:?}", t.elapsed() / n);
    let s1 = Tensor::uniform(&[1, 16, 4], 1.0, &mut rng);
    let m1 = Tensor::uniform(&[1, 3], 1.0, &mut rng);
    let g1 = Tensor::uniform(&[1, 3], 1.0, &mut rng);
    let t = std::time::Instant::now();
    for _ in 0..2000 { let _ = actor.forward(&s1, &m1, &g1).unwrap(); }
    println!("per inference {:?}", t.elapsed() / 2000);
}
