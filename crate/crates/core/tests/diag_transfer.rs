use gbe_core::config::RunConfig;
use gbe_core::harness;
use gbe_core::synth::{gen_dataset, BenchmarkSpec};

#[test]
#[ignore]
fn transfer_over_epochs() {
    let ds = gen_dataset(&BenchmarkSpec::default()).unwrap();
    // run in 2-epoch chunks by refitting with more epochs is wasteful;
    // instead train once per horizon of interest
    for (tag, epochs, decay, b2) in [
        ("full20-b2.99", 20usize, vec![7usize, 14], 0.99f32),
        ("full20-b2.999", 20, vec![7, 14], 0.999),
    ] {
        let cfg = RunConfig {
            epochs,
            decay_epochs: decay,
            threads: 2,
            lr: 2e-3,
            beta2: b2,
            ..RunConfig::default()
        };
        let fit = harness::fit(&cfg, &ds).unwrap();
        let unseen = harness::unseen_map(&fit.model, &cfg, &ds).unwrap();
        println!(
            "{tag}: val@7 {:.3} val@14 {:.3} val@20 {:.3}  unseen {unseen:.4}",
            fit.val_maps[6], fit.val_maps[13], fit.val_maps[19]
        );
    }
}
