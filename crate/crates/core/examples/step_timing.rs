//! Times one forward and one forward+backward pass on a full 64×64 window.

use std::time::Instant;

use thermotwin_core::dataset::WindowSample;
use thermotwin_core::stvit::{forward, init_params, loss_and_grad, Precision, StVitConfig};

fn main() {
    let (h, w, t) = (64, 64, 24);
    let n = h * w;
    let wave = |i: usize| ((i * 7919) % 1000) as f64 / 500.0 - 1.0;
    let sample = WindowSample {
        h,
        w,
        t_in: t,
        t_out: t,
        spatial: (0..4 * n).map(wave).collect(),
        meteo_in: (0..t * 7).map(wave).collect(),
        utci_in: (0..t * n).map(|i| wave(i + 3)).collect(),
        target: (0..t * n).map(|i| wave(i + 11)).collect(),
        mask: (0..n).map(|i| i % 17 != 0).collect(),
        origin: (0, 0, 0),
    };
    for precision in [Precision::F32, Precision::F64] {
        let config = StVitConfig {
            attention_precision: precision,
            ..Default::default()
        };
        let params = init_params(&config, 1).unwrap();
        let t0 = Instant::now();
        let y = forward(&params, &config, &sample).unwrap();
        let fwd = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let (loss, _) = loss_and_grad(&params, &config, std::slice::from_ref(&sample)).unwrap();
        let step = t0.elapsed().as_secs_f64();
        println!("{precision:?}: forward {fwd:.2}s, forward+backward {step:.2}s, loss {loss:.6}, y0 {:.6}", y[0]);
    }
}
