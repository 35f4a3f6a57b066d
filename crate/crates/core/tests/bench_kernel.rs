use std::time::Instant;

#[test]
#[ignore]
fn kernel_throughput() {
    // conv2-like shape: 32x288 * 288x1024
    let (m, k, n) = (32usize, 288usize, 1024usize);
    let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.3).sin()).collect();
    let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.7).cos()).collect();
    let mut c = vec![0.0f32; m * n];
    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        c.iter_mut().for_each(|v| *v = 0.0);
        gbe_core::bench_matmul(&a, &b, &mut c, m, k, n);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gmac = (m * k * n * reps) as f64 / dt / 1e9;
    println!("matmul {m}x{k}x{n}: {gmac:.2} GMAC/s  (avx2={})", gbe_core::have_avx2());
    assert!(c[0].is_finite());
}
