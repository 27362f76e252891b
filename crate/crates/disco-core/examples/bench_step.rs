use std::time::Instant;

use disco_core::graph::Graph;
use disco_core::model::{forward, harvest_grads, init_params, MoEConfig, Routing};
use disco_core::optim::{AdamW, AdamWConfig};
use disco_core::scalar::Scalar;
use rand_chacha::rand_core::SeedableRng;

fn bench<T: Scalar>(label: &str, routing: Routing, e: usize, k: usize, steps: usize) {
    let cfg = MoEConfig {
        vocab_size: 256,
        d_model: 64,
        n_layers: 2,
        n_heads: 4,
        d_ff: 128,
        num_experts: e,
        top_k: k,
        max_seq_len: 64,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut store = init_params::<T>(&cfg, &mut rng).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
    let (b, s) = (8usize, 64usize);
    let toks: Vec<u32> = (0..b * s).map(|i| (i % 200) as u32).collect();
    let tgts: Vec<u32> = (0..b * s).map(|i| ((i + 1) % 200) as u32).collect();
    let start = Instant::now();
    let mut last = 0.0;
    for _ in 0..steps {
        let mut g = Graph::<T>::new();
        let out = forward(&mut g, &store, &cfg, &toks, b, s, routing, true).unwrap();
        let loss = g.cross_entropy(out.logits, &tgts).unwrap();
        last = g.data(loss)[0].to_f64();
        g.backward(loss).unwrap();
        harvest_grads(&g, &out.bindings, &mut store).unwrap();
        opt.step(&mut store, 1e-3).unwrap();
        store.zero_grads();
    }
    let dt = start.elapsed().as_secs_f64();
    println!(
        "{label}: {:.1} ms/step (loss {last:.3})",
        dt / steps as f64 * 1000.0
    );
}

fn main() {
    bench::<f32>("f32 learned E=2 K=2", Routing::Learned, 2, 2, 20);
    bench::<f32>("f32 forced (dense)  ", Routing::Forced(0), 2, 1, 20);
    bench::<f64>("f64 learned E=2 K=2", Routing::Learned, 2, 2, 10);
    bench::<f32>("f32 learned E=4 K=2", Routing::Learned, 4, 2, 10);
}
