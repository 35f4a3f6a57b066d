use gbe_core::harness::{shuffle_baseline_map, Protocol};
use gbe_core::synth::{gen_dataset, BenchmarkSpec};

#[test]
#[ignore]
fn report_default_baseline() {
    let ds = gen_dataset(&BenchmarkSpec::default()).unwrap();
    let (mean, std) = shuffle_baseline_map(&ds, Protocol::Zsl, 40, 1).unwrap();
    println!("ZSL shuffle baseline: mean {mean:.4} std {std:.4}  3x = {:.4}", 3.0 * mean);
    let (gmean, gstd) = shuffle_baseline_map(&ds, Protocol::Gzsl, 40, 1).unwrap();
    println!("GZSL shuffle baseline: mean {gmean:.4} std {gstd:.4}");
}
