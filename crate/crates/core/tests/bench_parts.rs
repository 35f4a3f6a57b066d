use std::time::Instant;
use gbe_core::backbone::{forward_pyramid, BackboneParams};
use gbe_core::config::RunConfig;
use gbe_core::model::{self, Model};
use gbe_core::synth::{gen_dataset, BenchmarkSpec};
use gbe_core::{PoolMode, PoolWindow, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn backbone_only_timing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = BackboneParams::init(&mut rng, [32, 64, 128]);
    let img = Tensor::filled(vec![3, 32, 32], 0.4);
    let reps = 20;
    // forward only
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.bind(&mut tape);
        let i = tape.leaf(img.clone());
        let p = forward_pyramid(&mut tape, &ids, i, 0.01).unwrap();
        std::hint::black_box(tape.data(p.f_lo)[0]);
    }
    println!("backbone fwd: {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
    // + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.bind(&mut tape);
        let i = tape.leaf(img.clone());
        let p = forward_pyramid(&mut tape, &ids, i, 0.01).unwrap();
        let s1 = tape.spatial_pool(p.f_lo, PoolMode::Avg, PoolWindow::Global).unwrap();
        let l = tape.sum(s1);
        tape.backward(l).unwrap();
        std::hint::black_box(tape.grad(ids.stages[0][0].0));
    }
    println!("backbone fwd+bwd: {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

#[test]
#[ignore]
fn full_model_bwd_breakdown() {
    let cfg = RunConfig { decay_epochs: vec![], ..RunConfig::default() };
    let ds = gen_dataset(&BenchmarkSpec { train_images: 4, test_images: 2, ..BenchmarkSpec::default() }).unwrap();
    let mdl = Model::init(&cfg).unwrap();
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape: Tape<f32> = Tape::new();
        let ids = mdl.bind(&mut tape, &cfg).unwrap();
        let img = tape.leaf(ds.image(0));
        let s = model::forward(&mut tape, &ids, &cfg, img).unwrap();
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        std::hint::black_box(tape.grad(model::ordered_param_ids(&ids, false)[0]));
    }
    println!("full fwd+bwd(sum loss): {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
