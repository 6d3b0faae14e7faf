//! Trains on a single 16×16 window and prints the loss per epoch.

use thermotwin_core::dataset::{fit_normalizer, make_windows, Dataset};
use thermotwin_core::meteo::{generate_synthetic_meteo, MeteoGenSpec};
use thermotwin_core::microclimate::{simulate_stack, MicroclimateParams};
use thermotwin_core::scene::{generate_synthetic_scene, SceneSpec};
use thermotwin_core::stvit::{train_with, StVitConfig, TrainOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let row: usize = args.get(1).map_or(24, |s| s.parse().unwrap());
    let start_idx: usize = args.get(2).map_or(0, |s| s.parse().unwrap());
    let scene = generate_synthetic_scene(7, &SceneSpec::default()).unwrap();
    let series = generate_synthetic_meteo(7, &MeteoGenSpec::default()).unwrap();
    let stack = simulate_stack(&scene, &MicroclimateParams::default(), &series).unwrap();
    let starts = make_windows(&stack, &series, 24, 24, 4).unwrap();
    let s = starts[start_idx];
    let stats = fit_normalizer(&scene, &stack, &series, &[s], 24, 24).unwrap();
    let ds = Dataset::new(&scene, &stack, &series, &stats).unwrap();
    let sample = ds.sample(s, (row, row, 16, 16), 24, 24).unwrap();
    let config = StVitConfig::default();
    let set = vec![sample];
    let t0 = std::time::Instant::now();
    let (_, rep) = train_with(&config, &set, &set, &TrainOptions::default(), |e| {
        if e.epoch % 10 == 0 {
            println!("epoch {} train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
        }
    })
    .unwrap();
    println!(
        "stop {:?} at {} best {:.5} (epoch {}) in {:.1}s",
        rep.stop_reason,
        rep.stopped_epoch,
        rep.best_val_loss,
        rep.best_epoch,
        t0.elapsed().as_secs_f64()
    );
}
