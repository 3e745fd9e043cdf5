//! End-to-end training behaviour on the small two-domain synthetic set.

use mdseg::data::{generate, generate_background, Dataset, DatasetConfig, DatasetPreset};
use mdseg::metrics::{dice, evaluate_dataset};
use mdseg::model::checkpoint::encode;
use mdseg::model::{build_model, train, ArchPreset, ModelParams, TrainConfig, Trainer, Variant};
use mdseg::refine::{refine_iterate, segment_once, ModelSegmenter, RefineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy() -> Dataset {
    generate(&DatasetConfig::preset(DatasetPreset::Toy), 1).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        rng_seed: 1,
        ..TrainConfig::default()
    }
}

fn fresh(seed: u64) -> ModelParams {
    build_model(Variant::Md, 2, ArchPreset::Default, 64, seed).unwrap()
}

#[test]
fn fidelity_falls_over_the_first_three_epochs() {
    let ds = toy();
    let (_, history) = train(fresh(1), &ds.train, &config(3)).unwrap();
    let means: Vec<f64> = history.iter().map(|e| e.mean_fidelity()).collect();
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    for e in &history {
        assert_eq!(e.per_domain.len(), 2);
        assert!(e.per_domain.iter().all(|d| d.images == 50));
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let ds = toy();
    let (a, ha) = train(fresh(4), &ds.train, &config(2)).unwrap();
    let (b, hb) = train(fresh(4), &ds.train, &config(2)).unwrap();
    assert_eq!(encode(&a).unwrap(), encode(&b).unwrap());
    assert_eq!(ha, hb);
    let other = TrainConfig {
        rng_seed: 2,
        ..config(2)
    };
    let (c, _) = train(fresh(4), &ds.train, &other).unwrap();
    assert_ne!(encode(&a).unwrap(), encode(&c).unwrap());
}

#[test]
fn epoch_stepping_matches_one_long_run() {
    let ds = toy();
    let cfg = config(2);
    let (whole, _) = train(fresh(5), &ds.train, &cfg).unwrap();
    let mut t = Trainer::new(fresh(5), &ds.train, &cfg).unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    assert_eq!(t.epochs_done(), 2);
    assert_eq!(t.into_params(), whole);
}

#[test]
fn heavy_weight_decay_shrinks_the_weights() {
    let ds = toy();
    let norm = |lambda: f64| {
        let cfg = TrainConfig { lambda, ..config(2) };
        train(fresh(6), &ds.train, &cfg).unwrap().0.sq_norm()
    };
    let (free, decayed) = (norm(0.0), norm(10.0));
    assert!(decayed < free, "{decayed} !< {free}");
}

#[test]
fn empty_domain_is_a_configuration_error() {
    let ds = toy();
    let only_first: Vec<_> = ds.train.iter().filter(|s| s.domain == 0).cloned().collect();
    let err = train(fresh(0), &only_first, &config(1)).unwrap_err();
    assert!(matches!(err, mdseg::Error::Config(_)), "{err}");
}

/// One longer run, shared by the checks that need a usable model.
#[test]
fn trained_model_segments_and_refines() {
    let ds = toy();
    let (params, _) = train(fresh(1), &ds.train, &config(30)).unwrap();
    let rc = RefineConfig::default();

    let seg = ModelSegmenter {
        params: &params,
        refiner: None,
        config: &rc,
        refine: false,
    };
    let (report, _) = evaluate_dataset(&seg, &ds.test, &ds.domain_names, false).unwrap();
    for row in &report.rows {
        assert!(row.dice_mean >= 0.85, "{report}");
    }

    // segmentations stay binary and refinement always terminates
    for s in ds.test.iter().step_by(5) {
        let once = segment_once(&params, s.domain, &s.image, &rc).unwrap();
        assert!(once.final_mask.is_binary());
        assert!(dice(&once.final_mask, &s.mask).unwrap() > 0.5);
        let r = refine_iterate(&params, None, s.domain, &s.image, &rc).unwrap();
        assert!((1..=rc.max_iterations).contains(&r.iterations));
        assert_eq!(r.dice_trace.len(), r.iterations - 1);
    }

    // structure-free phantoms rarely produce a detection
    let specs = DatasetConfig::preset(DatasetPreset::Toy);
    let mut hits = 0;
    let mut total = 0;
    for (d, dc) in specs.domains.iter().enumerate() {
        for i in 0..20 {
            let bg = generate_background(&dc.spec, 64, d, &mut ChaCha8Rng::seed_from_u64(1000 + i));
            let r = segment_once(&params, d, &bg.image, &rc).unwrap();
            hits += !r.objects.is_empty() as usize;
            total += 1;
        }
    }
    assert!(hits * 10 <= total, "{hits} of {total} background images had detections");
}
