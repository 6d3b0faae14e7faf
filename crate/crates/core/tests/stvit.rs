use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermotwin_core::dataset::{
    fit_normalizer, merge_tiles, plan_tiles, Dataset, WindowSample, N_SPATIAL, TILE_SIZE,
};
use thermotwin_core::grid::{Grid, Raster};
use thermotwin_core::meteo::{generate_synthetic_meteo, MeteoGenSpec, N_VARIABLES};
use thermotwin_core::microclimate::{simulate_stack, MicroclimateParams};
use thermotwin_core::scene::{generate_synthetic_scene, SceneSpec};
use thermotwin_core::stack::UtciStack;
use thermotwin_core::stvit::*;

fn toy_config() -> StVitConfig {
    StVitConfig {
        hidden_dim: 4,
        num_heads: 2,
        ff_dim: 16,
        t_in: 2,
        t_out: 2,
        batch_size: 2,
        ..Default::default()
    }
}

fn random_sample(h: usize, w: usize, t_in: usize, t_out: usize, seed: u64) -> WindowSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let mut u = |k: usize| (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect::<Vec<f64>>();
    let spatial = u(N_SPATIAL * n);
    let meteo_in = u(t_in * N_VARIABLES);
    let mut utci_in = u(t_in * n);
    let mut target = u(t_out * n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
    for (i, v) in utci_in.iter_mut().enumerate() {
        if !mask[i % n] {
            *v = 0.0;
        }
    }
    for (i, v) in target.iter_mut().enumerate() {
        if !mask[i % n] {
            *v = 0.0;
        }
    }
    WindowSample {
        h,
        w,
        t_in,
        t_out,
        spatial,
        meteo_in,
        utci_in,
        target,
        mask,
        origin: (0, 0, 0),
    }
}

fn assert_same_params(a: &StVitParams, b: &StVitParams) {
    let (fa, fb) = (a.flat(), b.flat());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn init_is_seeded_and_bounded() {
    let config = StVitConfig::default();
    let a = init_params(&config, 3).unwrap();
    let b = init_params(&config, 3).unwrap();
    let c = init_params(&config, 4).unwrap();
    assert_same_params(&a, &b);
    assert_ne!(a.flat(), c.flat());
    assert!(a.is_finite());
    let mut fan_in = 0;
    for (name, t) in a.named() {
        if name.ends_with(".weight") {
            fan_in = t.shape[1];
        }
        if name.ends_with(".gain") {
            assert!(t.data.iter().all(|&x| x == 1.0), "{name}");
        } else if name.ends_with(".offset") {
            assert!(t.data.iter().all(|&x| x == 0.0), "{name}");
        } else {
            let bound = 1.0 / (fan_in as f64).sqrt();
            assert!(t.data.iter().all(|x| x.abs() <= bound), "{name}");
        }
    }
}

#[test]
fn parameter_names_are_unique_and_stable() {
    let p = StVitParams::zeros(&StVitConfig::default());
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    let unique: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    assert_eq!(names.first().unwrap(), "cell_embed.weight");
    assert_eq!(names.last().unwrap(), "head.bias");
    assert!(names.contains(&"temporal.0.attn.query.weight".to_string()));
    assert_eq!(p.n_params(), p.flat().len());
}

#[test]
fn invalid_configs_are_rejected() {
    let odd = StVitConfig {
        hidden_dim: 5,
        ..Default::default()
    };
    assert!(matches!(init_params(&odd, 0), Err(StVitError::Config(_))));
    let zero = StVitConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(zero.validate().is_err());
    let lr = StVitConfig {
        lr: 0.0,
        ..Default::default()
    };
    assert!(lr.validate().is_err());
}

#[test]
fn forward_shape_and_finiteness() {
    let config = StVitConfig {
        t_in: 3,
        t_out: 5,
        ..Default::default()
    };
    let params = init_params(&config, 1).unwrap();
    let s = random_sample(6, 7, 3, 5, 2);
    let y = forward(&params, &config, &s).unwrap();
    assert_eq!(y.len(), 5 * 42);
    assert!(y.iter().all(|v| v.is_finite()));
}

#[test]
fn head_bias_alone_sets_every_cell() {
    let config = toy_config();
    let mut params = init_params(&config, 1).unwrap();
    params.head.weight.data.fill(0.0);
    params.head.bias.data = vec![0.25, -1.5];
    let s = random_sample(4, 4, 2, 2, 3);
    let y = forward(&params, &config, &s).unwrap();
    for (i, v) in y.iter().enumerate() {
        assert_eq!(*v, if i < 16 { 0.25 } else { -1.5 });
    }
}

#[test]
fn wrong_sample_shapes_are_rejected() {
    let config = toy_config();
    let params = init_params(&config, 1).unwrap();
    let mut s = random_sample(4, 4, 2, 2, 3);
    s.meteo_in.pop();
    assert!(matches!(forward(&params, &config, &s), Err(StVitError::Shape(_))));
    let s = random_sample(4, 4, 3, 2, 3);
    assert!(matches!(forward(&params, &config, &s), Err(StVitError::Shape(_))));
}

/// Cells carry no positional information, so permuting cells permutes the
/// forecast identically.
#[test]
fn forecast_is_equivariant_to_cell_permutation() {
    let config = toy_config();
    let params = init_params(&config, 5).unwrap();
    let s = random_sample(3, 3, 2, 2, 6);
    let n = 9;
    let perm = [4, 8, 0, 3, 7, 1, 6, 2, 5];
    let mut p = s.clone();
    for (dst, &src) in perm.iter().enumerate() {
        for ch in 0..N_SPATIAL {
            p.spatial[ch * n + dst] = s.spatial[ch * n + src];
        }
        for t in 0..2 {
            p.utci_in[t * n + dst] = s.utci_in[t * n + src];
            p.target[t * n + dst] = s.target[t * n + src];
        }
        p.mask[dst] = s.mask[src];
    }
    let y = forward(&params, &config, &s).unwrap();
    let yp = forward(&params, &config, &p).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        for t in 0..2 {
            assert!((yp[t * n + dst] - y[t * n + src]).abs() < 1e-12);
        }
    }
}

fn loss_only(params: &StVitParams, config: &StVitConfig, batch: &[WindowSample]) -> f64 {
    let (sse, m) = batch_sse(params, config, batch).unwrap();
    sse / m as f64
}

#[test]
fn loss_matches_batch_sse() {
    let config = toy_config();
    let params = init_params(&config, 2).unwrap();
    let batch = vec![random_sample(4, 4, 2, 2, 10), random_sample(4, 4, 2, 2, 11)];
    let (loss, _) = loss_and_grad(&params, &config, &batch).unwrap();
    // independent masked mean over both items
    let (mut total, mut m) = (0.0, 0usize);
    for s in &batch {
        let y = forward(&params, &config, s).unwrap();
        for (i, (p, t)) in y.iter().zip(&s.target).enumerate() {
            if s.mask[i % 16] {
                total += (p - t).powi(2);
                m += 1;
            }
        }
    }
    assert!((loss - total / m as f64).abs() < 1e-12);
    assert!((loss - loss_only(&params, &config, &batch)).abs() < 1e-12);
}

#[test]
fn gradients_match_central_differences() {
    let config = toy_config();
    let params = init_params(&config, 7).unwrap();
    let batch = vec![random_sample(4, 4, 2, 2, 20), random_sample(4, 4, 2, 2, 21)];
    let (_, grad) = loss_and_grad(&params, &config, &batch).unwrap();
    let analytic = grad.flat();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let n = params.n_params();
    for idx in 0..n {
        let bump = |delta: f64| {
            let mut p = params.clone();
            let mut k = idx;
            for t in p.tensors_mut() {
                if k < t.data.len() {
                    t.data[k] += delta;
                    break;
                }
                k -= t.data.len();
            }
            loss_only(&p, &config, &batch)
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let rel = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn masked_values_do_not_affect_loss_or_gradients() {
    let config = toy_config();
    let params = init_params(&config, 8).unwrap();
    let batch = vec![random_sample(4, 4, 2, 2, 30), random_sample(4, 4, 2, 2, 31)];
    let mut tampered = batch.clone();
    for s in &mut tampered {
        let n = s.n_cells();
        for i in 0..s.utci_in.len() {
            if !s.mask[i % n] {
                s.utci_in[i] = 1e3;
            }
        }
        for i in 0..s.target.len() {
            if !s.mask[i % n] {
                s.target[i] = -7e2;
            }
        }
    }
    assert!(batch.iter().any(|s| s.mask.iter().any(|m| !m)));
    let (la, ga) = loss_and_grad(&params, &config, &batch).unwrap();
    let (lb, gb) = loss_and_grad(&params, &config, &tampered).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_same_params(&ga, &gb);
}

#[test]
fn perfect_prediction_has_zero_loss_and_gradient() {
    let config = toy_config();
    let params = init_params(&config, 9).unwrap();
    let mut s = random_sample(4, 4, 2, 2, 40);
    let y = forward(&params, &config, &s).unwrap();
    for (i, t) in s.target.iter_mut().enumerate() {
        *t = if s.mask[i % 16] { y[i] } else { 0.0 };
    }
    let (loss, grad) = loss_and_grad(&params, &config, &[s]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.flat().iter().all(|&g| g == 0.0));
}

#[test]
fn batch_errors_are_explicit() {
    let config = toy_config();
    let params = init_params(&config, 1).unwrap();
    assert!(matches!(loss_and_grad(&params, &config, &[]), Err(StVitError::EmptyBatch)));
    let mut masked = random_sample(4, 4, 2, 2, 1);
    masked.mask.fill(false);
    assert!(matches!(loss_and_grad(&params, &config, &[masked]), Err(StVitError::EmptyBatch)));
    let good = random_sample(4, 4, 2, 2, 2);
    let mut bad = random_sample(4, 4, 2, 2, 3);
    let first_valid = bad.mask.iter().position(|&m| m).unwrap();
    bad.target[first_valid] = f64::NAN;
    match loss_and_grad(&params, &config, &[good, bad]) {
        Err(StVitError::NonFiniteLoss { item }) => assert_eq!(item, 1),
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn single_precision_attention_tracks_double() {
    let base = StVitConfig::default();
    let fast = StVitConfig {
        attention_precision: Precision::F32,
        ..base.clone()
    };
    let params = init_params(&base, 11).unwrap();
    let batch = vec![random_sample(16, 16, 24, 24, 50)];
    let (a, ga) = loss_and_grad(&params, &base, &batch).unwrap();
    let (b, gb) = loss_and_grad(&params, &fast, &batch).unwrap();
    assert!((a - b).abs() <= 1e-3 * a.abs(), "{a} vs {b}");
    let (fa, fb) = (ga.flat(), gb.flat());
    let norm: f64 = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff <= 1e-3 * norm, "{diff} vs {norm}");
}

#[test]
fn gradient_is_independent_of_batch_order() {
    let config = toy_config();
    let params = init_params(&config, 12).unwrap();
    let a = random_sample(4, 4, 2, 2, 60);
    let b = random_sample(4, 4, 2, 2, 61);
    let (la, ga) = loss_and_grad(&params, &config, &[a.clone(), b.clone()]).unwrap();
    let (lb, gb) = loss_and_grad(&params, &config, &[b, a]).unwrap();
    assert!((la - lb).abs() < 1e-14);
    for (x, y) in ga.flat().iter().zip(gb.flat()) {
        assert!((x - y).abs() < 1e-14);
    }
}

fn small_sets() -> (Vec<WindowSample>, Vec<WindowSample>) {
    let train: Vec<_> = (0..5).map(|i| random_sample(4, 4, 2, 2, 100 + i)).collect();
    let val: Vec<_> = (0..2).map(|i| random_sample(4, 4, 2, 2, 200 + i)).collect();
    (train, val)
}

#[test]
fn training_is_deterministic() {
    let config = StVitConfig {
        max_epochs: 4,
        lr: 1e-2,
        ..toy_config()
    };
    let (train_set, val_set) = small_sets();
    let (pa, ra) = train(&config, &train_set, &val_set).unwrap();
    let (pb, rb) = train(&config, &train_set, &val_set).unwrap();
    assert_eq!(ra.trajectory(), rb.trajectory());
    assert_same_params(&pa, &pb);
    assert_eq!(ra.epochs.len(), 4);
    assert_eq!(ra.stop_reason, StopReason::MaxEpochs);
}

#[test]
fn training_reduces_loss() {
    let config = StVitConfig {
        max_epochs: 30,
        lr: 1e-2,
        patience: 30,
        ..toy_config()
    };
    let (train_set, _) = small_sets();
    let (_, rep) = train(&config, &train_set, &train_set).unwrap();
    let first = rep.epochs.first().unwrap().train_loss;
    assert!(rep.best_val_loss < 0.5 * first, "{} vs {first}", rep.best_val_loss);
}

#[test]
fn returned_parameters_are_the_best_validation_epoch() {
    let config = StVitConfig {
        max_epochs: 6,
        lr: 3e-2,
        ..toy_config()
    };
    let (train_set, val_set) = small_sets();
    let (params, rep) = train(&config, &train_set, &val_set).unwrap();
    let reloss = evaluate_loss(&params, &config, &val_set).unwrap();
    assert!((reloss - rep.best_val_loss).abs() < 1e-12);
    let best = &rep.epochs[rep.best_epoch];
    assert_eq!(best.val_loss, rep.best_val_loss);
    for e in &rep.epochs[rep.best_epoch..] {
        assert!(rep.best_val_loss <= e.val_loss + config.min_delta);
    }
}

#[test]
fn patience_counts_non_improving_epochs() {
    let (train_set, val_set) = small_sets();
    // nothing after the first epoch can beat the best by this margin
    for (patience, expected_stop) in [(0, 1), (3, 3)] {
        let config = StVitConfig {
            patience,
            min_delta: 1e9,
            max_epochs: 20,
            ..toy_config()
        };
        let (_, rep) = train(&config, &train_set, &val_set).unwrap();
        assert_eq!(rep.stop_reason, StopReason::EarlyStopping);
        assert_eq!(rep.stopped_epoch, expected_stop, "patience {patience}");
        assert_eq!(rep.best_epoch, 0);
    }
}

#[test]
fn time_budget_stops_training() {
    let (train_set, val_set) = small_sets();
    let config = StVitConfig {
        max_epochs: 1000,
        patience: 1000,
        ..toy_config()
    };
    let options = TrainOptions {
        time_budget: Some(std::time::Duration::from_millis(1)),
    };
    let (_, rep) = train_with(&config, &train_set, &val_set, &options, |_| {}).unwrap();
    assert_eq!(rep.stop_reason, StopReason::TimeBudget);
    assert!(rep.epochs.len() < 1000);
}

#[test]
fn empty_splits_are_rejected() {
    let (train_set, _) = small_sets();
    assert!(matches!(train(&toy_config(), &train_set, &[]), Err(StVitError::EmptySplit)));
}

#[test]
fn divergence_is_reported() {
    let (mut train_set, val_set) = small_sets();
    train_set[3].target[0] = f64::INFINITY;
    train_set[3].mask[0] = true;
    let config = StVitConfig {
        batch_size: 1,
        ..toy_config()
    };
    match train(&config, &train_set, &val_set) {
        Err(StVitError::Diverged { epoch, report, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(report.stop_reason, StopReason::Diverged);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}

fn checkpoint() -> Checkpoint {
    let config = toy_config();
    Checkpoint {
        header: CheckpointHeader {
            config: config.clone(),
            norm_stats: None,
            meta: serde_json::json!({"note": "unit"}),
        },
        params: init_params(&config, 13).unwrap(),
    }
}

#[test]
fn checkpoint_round_trips() {
    let ck = checkpoint();
    let bytes = encode_checkpoint(&ck);
    assert_eq!(&bytes[..5], CHECKPOINT_MAGIC);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ck);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.stvt");
    save_checkpoint(&ck, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&checkpoint());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad_magic), Err(StVitError::Checkpoint(_))));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode_checkpoint(&trailing).is_err());
    // rename the first tensor
    let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let mut renamed = bytes.clone();
    renamed[9 + json_len + 4] = b'X';
    assert!(decode_checkpoint(&renamed).is_err());
    assert!(load_checkpoint("/nonexistent/model.stvt").is_err());
}

struct World {
    scene: thermotwin_core::scene::GridScene,
    stack: UtciStack,
    series: thermotwin_core::meteo::MeteoSeries,
}

fn world(size: usize) -> World {
    let spec = SceneSpec {
        nrows: size,
        ncols: size,
        ..Default::default()
    };
    let scene = generate_synthetic_scene(3, &spec).unwrap();
    let series = generate_synthetic_meteo(
        3,
        &MeteoGenSpec {
            n_days: 2,
            heatwave: None,
            ..Default::default()
        },
    )
    .unwrap()
    .slice(0, 30);
    let stack = simulate_stack(&scene, &MicroclimateParams::default(), &series).unwrap();
    World { scene, stack, series }
}

fn predict_config() -> StVitConfig {
    StVitConfig {
        hidden_dim: 4,
        num_heads: 2,
        ff_dim: 8,
        t_in: 3,
        t_out: 2,
        attention_precision: Precision::F32,
        ..Default::default()
    }
}

#[test]
fn single_tile_region_equals_direct_forward() {
    let w = world(64);
    let config = predict_config();
    let params = init_params(&config, 1).unwrap();
    let stats = fit_normalizer(&w.scene, &w.stack, &w.series, &[0], 3, 2).unwrap();
    let f = predict_region(&params, &config, &stats, &w.scene, &w.stack, &w.series, Bbox::full(64, 64)).unwrap();
    assert_eq!(f.layout.origins, vec![(0, 0)]);
    assert_eq!(f.stack.len(), 2);
    let last = *w.stack.times().last().unwrap();
    assert_eq!(f.stack.times()[0], last + chrono::Duration::hours(1));

    let tail = w.stack.slice(w.stack.len() - 3, 3);
    let meteo = w.series.slice(w.series.len() - 3, 3);
    let ds = Dataset::new(&w.scene, &tail, &meteo, &stats).unwrap();
    let sample = ds.sample(0, (0, 0, 64, 64), 3, 0).unwrap();
    let y = forward(&params, &config, &sample).unwrap();
    let mask = w.stack.mask();
    for tau in 0..2 {
        let frame = &f.stack.frames()[tau];
        for i in 0..64 * 64 {
            let got = frame.as_slice()[i];
            if mask.as_slice()[i] {
                let want = stats.utci.denormalize(y[tau * 4096 + i]) as f32;
                assert_eq!(got, want);
            } else {
                assert!(got.is_nan());
            }
        }
    }
}

#[test]
fn overlapping_tiles_are_averaged() {
    let w = world(118);
    let config = predict_config();
    let params = init_params(&config, 2).unwrap();
    let stats = fit_normalizer(&w.scene, &w.stack, &w.series, &[0], 3, 2).unwrap();
    let bbox = Bbox::full(118, 118);
    let f = predict_region(&params, &config, &stats, &w.scene, &w.stack, &w.series, bbox).unwrap();
    assert_eq!(f.layout, plan_tiles(118, 118).unwrap());
    assert_eq!(f.layout.origins.len(), 4);
    let mask = w.stack.mask();
    for tau in 0..2 {
        let tiles: Vec<Grid<f64>> = f.tiles.iter().map(|t| t[tau].clone()).collect();
        let merged = merge_tiles(&f.layout, &tiles).unwrap();
        // corner cell covered by one tile, centre cell by all four
        let (r, c) = (59, 59);
        let covering: Vec<f64> = f
            .layout
            .origins
            .iter()
            .zip(&tiles)
            .filter(|((tr, tc), _)| r >= *tr && r < tr + TILE_SIZE && c >= *tc && c < tc + TILE_SIZE)
            .map(|((tr, tc), t)| t.at(r - tr, c - tc))
            .collect();
        assert_eq!(covering.len(), 4);
        let mean = covering.iter().sum::<f64>() / 4.0;
        assert!((merged.at(r, c) - mean).abs() < 1e-12);
        assert_eq!(merged.at(0, 0), tiles[0].at(0, 0));
        for i in 0..118 * 118 {
            let got = f.stack.frames()[tau].as_slice()[i];
            if mask.as_slice()[i] {
                assert_eq!(got, stats.utci.denormalize(merged.as_slice()[i]) as f32);
            }
        }
    }
}

#[test]
fn region_errors() {
    let w = world(64);
    let config = predict_config();
    let params = init_params(&config, 1).unwrap();
    let stats = fit_normalizer(&w.scene, &w.stack, &w.series, &[0], 3, 2).unwrap();
    let run = |bbox: Bbox, stack: &UtciStack| {
        predict_region(&params, &config, &stats, &w.scene, stack, &w.series, bbox)
    };
    let small = Bbox { r0: 0, c0: 0, r1: 30, c1: 30 };
    assert!(matches!(run(small, &w.stack), Err(StVitError::Region(_))));
    let outside = Bbox { r0: 10, c0: 0, r1: 74, c1: 64 };
    assert!(matches!(run(outside, &w.stack), Err(StVitError::Region(_))));
    let short = w.stack.slice(0, 2);
    assert!(matches!(run(Bbox::full(64, 64), &short), Err(StVitError::Region(_))));
}

#[test]
fn bbox_parses_and_prints() {
    let b: Bbox = "1, 2,65,66".parse().unwrap();
    assert_eq!(b, Bbox { r0: 1, c0: 2, r1: 65, c1: 66 });
    assert_eq!(b.to_string(), "1,2,65,66");
    assert_eq!((b.nrows(), b.ncols()), (64, 64));
    assert!("1,2,3".parse::<Bbox>().is_err());
    assert!("a,b,c,d".parse::<Bbox>().is_err());
}

fn synthetic_stack(hours: usize, value: impl Fn(usize, usize) -> f32) -> UtciStack {
    let start = chrono::DateTime::parse_from_rfc3339("2022-07-03T00:00:00Z").unwrap().with_timezone(&chrono::Utc);
    let times = (0..hours).map(|h| start + chrono::Duration::hours(h as i64)).collect();
    let frames = (0..hours).map(|h| Raster::from_fn(2, 3, |r, c| value(h, r * 3 + c))).collect();
    UtciStack::new(times, frames, Grid::filled(2, 3, true))
}

#[test]
fn persistence_repeats_the_last_day() {
    let periodic = |h: usize, cell: usize| 30.0 + 5.0 * ((h % 24) as f32 / 24.0) + cell as f32;
    let obs = synthetic_stack(72, periodic);
    let f = persistence_baseline(&obs.slice(0, 48), 24).unwrap();
    let truth = obs.slice(48, 24);
    assert_eq!(f.times(), truth.times());
    assert_eq!(f.frames(), truth.frames());

    let constant = synthetic_stack(30, |_, _| 31.5);
    let f = persistence_baseline(&constant, 30).unwrap();
    assert!(f.frames().iter().all(|fr| fr.iter().all(|&v| v == 31.5)));

    let warming = synthetic_stack(48, |h, _| 30.0 + 0.1 * h as f32);
    let f = persistence_baseline(&warming.slice(0, 24), 24).unwrap();
    let err: f32 = f
        .frames()
        .iter()
        .zip(warming.slice(24, 24).frames())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f32>())
        .sum();
    assert!(err > 0.0);
    assert!(persistence_baseline(&warming.slice(0, 10), 24).is_err());
}
