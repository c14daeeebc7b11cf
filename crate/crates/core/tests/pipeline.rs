use std::path::Path;

use softlif::convert::{convert, load_snn, save_snn, validate_equivalence};
use softlif::data::{load_mnist_idx, mnist_paths, Dataset, Split};
use softlif::model_io::{load_model, save_model};
use softlif::network::{Architecture, LayerConfig, NetworkSpec};
use softlif::rng::stream;
use softlif::sim::{accuracy_curve, evaluate_snn, SimConfig};
use softlif::trainer::{evaluate_ann, train, Optimizer, TrainConfig};

fn fixture(split: Split) -> Dataset {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist");
    let (i, l) = mnist_paths(dir, split);
    load_mnist_idx(i, l).unwrap()
}

/// Both fixture splits concatenated.
fn fixture_200() -> Dataset {
    let (a, b) = (fixture(Split::Train), fixture(Split::Test));
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for ds in [&a, &b] {
        for i in 0..ds.len() {
            pixels.extend_from_slice(ds.pixels(i));
            labels.push(ds.label(i) as u8);
        }
    }
    Dataset::new([1, 28, 28], pixels, labels, 10, Split::Train).unwrap()
}

fn small_arch() -> Architecture {
    Architecture {
        name: "fixture-net".into(),
        input_shape: vec![1, 28, 28],
        layers: vec![
            LayerConfig::Conv2d {
                filters: 4,
                kernel: 5,
                stride: 2,
                padding: 0,
            },
            LayerConfig::SoftLif { params: None },
            LayerConfig::AvgPool {
                window: 2,
                stride: None,
            },
            LayerConfig::Dense { units: 10 },
        ],
    }
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.003,
        optimizer: Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        batch_size: 10,
        epochs: 3,
        noise_sigma: 10.0,
        seed,
        ..TrainConfig::default()
    }
}

fn build(seed: u64) -> NetworkSpec {
    small_arch().build(&mut stream(seed, &[])).unwrap()
}

#[test]
fn untrained_network_is_near_chance() {
    let test = fixture(Split::Test);
    let errors: Vec<f64> = (0..5).map(|s| evaluate_ann(&build(s), &test).unwrap()).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean > 0.6, "untrained mean error {mean}");
}

#[test]
fn loss_decreases_on_small_subset() {
    let data = fixture_200();
    let seeds = 0..5u64;
    let decreased = seeds
        .clone()
        .filter(|&s| {
            let cfg = TrainConfig { epochs: 1, ..config(s) };
            let out = train(&build(s), &data, None, &cfg).unwrap();
            let q = out.batch_losses.len() / 4;
            let head: f64 = out.batch_losses[..q].iter().sum::<f64>() / q as f64;
            let tail: f64 = out.batch_losses[out.batch_losses.len() - q..].iter().sum::<f64>() / q as f64;
            tail < head
        })
        .count();
    assert!(
        decreased * 5 >= seeds.count() * 4,
        "loss decreased for {decreased} of 5 seeds"
    );
}

#[test]
fn final_epoch_metric_matches_evaluation() {
    let (train_set, test) = (fixture(Split::Train), fixture(Split::Test));
    let out = train(&build(1), &train_set, Some(&test), &config(1)).unwrap();
    assert_eq!(out.epochs.len(), 3);
    let last = out.epochs.last().unwrap().test_error.unwrap();
    assert_eq!(last, evaluate_ann(&out.net, &test).unwrap());
    assert!(out.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn training_is_independent_of_thread_count() {
    let data = fixture(Split::Train);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&build(2), &data, None, &config(2)).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.net, b.net);
    assert_eq!(a.batch_losses, b.batch_losses);
}

#[test]
fn train_convert_save_load_simulate() {
    let (train_set, test) = (fixture(Split::Train), fixture(Split::Test));
    let out = train(&build(3), &train_set, None, &config(3)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let ann_path = tmp.path().join("ann.json");
    save_model(&out.net, &ann_path).unwrap();
    let ann = load_model(&ann_path).unwrap();
    assert_eq!(ann, out.net);

    let snn = convert(&ann, 0.005).unwrap();
    let snn_path = tmp.path().join("snn.json");
    save_snn(&snn, &snn_path).unwrap();
    let snn = load_snn(&snn_path).unwrap();
    assert_eq!(snn.tau_s(), 0.005);
    assert!(load_snn(&ann_path).is_err());

    let sim = SimConfig::default();
    let eval = evaluate_snn(&snn, &test, &sim).unwrap();
    assert_eq!(eval.images.len(), test.len());
    assert!(eval.synops_per_s > 0.0);
    let again = evaluate_snn(&snn, &test, &sim).unwrap();
    assert_eq!(eval.images, again.images);

    let probes: Vec<_> = (0..10).map(|i| test.image(i)).collect();
    let report = validate_equivalence(&ann, &snn, &probes, &sim).unwrap();
    assert!(report.argmax_agreement >= 0.6, "{report:?}");
}

#[test]
fn curve_grid_has_one_point_per_pair() {
    let test = fixture(Split::Test).take(20);
    let snn = convert(&build(4), 0.002).unwrap();
    let c0 = [0.0, 0.02];
    let c1 = [0.04, 0.06, 0.08];
    let points = accuracy_curve(&snn, &test, &c0, &c1, &SimConfig::default()).unwrap();
    assert_eq!(points.len(), c0.len() * c1.len());
    for &a in &c0 {
        for &b in &c1 {
            assert!(points.iter().any(|p| p.c0 == a && p.c1 == b));
        }
    }
    // A shorter run is a prefix of the longer one, so each point equals a direct evaluation.
    for p in &points {
        let direct = evaluate_snn(
            &snn,
            &test,
            &SimConfig {
                c0: p.c0,
                c1: p.c1,
                ..SimConfig::default()
            },
        )
        .unwrap();
        assert_eq!(p.error, direct.error, "({}, {})", p.c0, p.c1);
    }
    assert!(accuracy_curve(&snn, &test, &[0.05], &[0.04], &SimConfig::default()).is_err());
}
