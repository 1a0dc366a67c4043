//! Acceptance run: one PASS/FAIL line per criterion. With `ACCEPTANCE_STRICT=1`
//! any failure also makes the process exit nonzero.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::max_gradient_error;
use dominance_core::data::{crop, crop_count, generate};
use dominance_core::dominance::{channel_wise_representative, sample_wise_scores, ClassBatch};
use dominance_core::kde::{gaussian_kernel, kde_density};
use dominance_core::trainer::{average_rows, batch_loss, CropConfig};
use dominance_core::{
    estimate_all, evaluate, train_sae, ClassifierModel, CurriculumSchedule, DominanceRecord,
    EvalConfig, KdeConfig, Matrix, Provenance, Representation, Rng, SaeConfig, SaeModel, SynthSpec,
    Threshold, Trial,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn kde_oracle() -> Outcome {
    let mut rng = Rng::new(2024);
    let cfg = KdeConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = 1 + rng.below(8);
        let m = 2 + rng.below(9);
        let t = 1 + rng.below(12);
        let mut series = Vec::with_capacity(m);
        for _ in 0..m {
            let encoded = Matrix::from_fn(c, t, |_, _| rng.uniform(-10.0, 10.0));
            let got = channel_wise_representative(
                &Representation {
                    encoded: encoded.clone(),
                },
                &cfg,
            )
            .unwrap();
            for (g, w) in got
                .values
                .iter()
                .zip(common::channel_wise(&encoded, cfg.bandwidth))
            {
                worst = worst.max((g - w).abs());
            }
            let column = encoded.column(0);
            let q = rng.uniform(-12.0, 12.0);
            let d = kde_density(q, &column, &cfg).unwrap();
            worst = worst.max((d - common::density(q, &column, cfg.bandwidth)).abs());
            series.push(got.values);
        }
        let series = Matrix::from_rows(&series).unwrap();
        let batch = ClassBatch {
            class: 0,
            series: series.clone(),
            trial_indices: (0..m).collect(),
        };
        let got = sample_wise_scores(&batch, &cfg).unwrap();
        for (g, w) in got.iter().zip(common::sample_wise(&series, cfg.bandwidth)) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(worst < 1e-12, format!("max abs deviation {worst:.2e}"))
}

fn kde_normalization() -> Outcome {
    let mut rng = Rng::new(7);
    let mut lo_seen = f64::INFINITY;
    let mut hi_seen = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = 1 + rng.below(20);
        let points: Vec<f64> = (0..n).map(|_| rng.uniform(-30.0, 30.0)).collect();
        let h = [0.5, 1.0, 3.0][rng.below(3)];
        let cfg = KdeConfig::fixed(h);
        let min = points.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let integral = common::trapezoid(
            |x| kde_density(x, &points, &cfg).unwrap(),
            min - 10.0 * h,
            max + 10.0 * h,
            10_000,
        );
        lo_seen = lo_seen.min(integral);
        hi_seen = hi_seen.max(integral);
    }
    outcome(
        lo_seen >= 0.999 && hi_seen <= 1.001,
        format!("integrals in [{lo_seen:.6}, {hi_seen:.6}]"),
    )
}

fn kernel_values() -> Outcome {
    let round9 = |v: f64| (v * 1e9).round() / 1e9;
    let k0 = round9(gaussian_kernel(0.0));
    let k1 = round9(gaussian_kernel(1.0));
    outcome(
        k0 == 0.398_942_280 && k1 == 0.241_970_725,
        format!(
            "K(0)={:.10} K(1)={:.10}",
            gaussian_kernel(0.0),
            gaussian_kernel(1.0)
        ),
    )
}

fn curriculum_endpoints() -> Outcome {
    let sched = CurriculumSchedule::default();
    let w50 = dominance_core::dominance::curriculum_weight(0.4, 50, &sched);
    let w100 = dominance_core::dominance::curriculum_weight(0.4, 100, &sched);
    let late_ok = [0.0, 0.13, 0.4, 0.99, 1.0]
        .iter()
        .all(|&g| dominance_core::dominance::curriculum_weight(g, 151, &sched) == 1.0);
    outcome(
        w50 == 0.4 && w100 == 0.7 && late_ok,
        format!("w(0.4,50)={w50} w(0.4,100)={w100} w(*,151)=1:{late_ok}"),
    )
}

fn gradient_checks() -> Outcome {
    let mut worst_sae: f64 = 0.0;
    let mut worst_ce: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = Rng::new(seed);
        let sae = common::off_kink(SaeModel::new(8, &mut rng).unwrap(), &mut rng);
        let rows = Matrix::from_fn(6, 8, |_, _| rng.uniform(-2.0, 2.0));
        let (_, grads) = sae.loss_and_gradients(&rows).unwrap();
        worst_sae = worst_sae.max(max_gradient_error(
            &sae,
            &grads.0,
            |m| m.params_mut(),
            |m| m.loss_rows(&rows).unwrap(),
            1e-5,
            1e-6,
        ));

        let model = ClassifierModel::new(2, 4, 5, 3, &mut rng).unwrap();
        let inputs = Matrix::from_fn(3, 8, |_, _| rng.uniform(-1.5, 1.5));
        let labels = [0, 2, 1];
        let weights = [0.25, 1.0, 0.6];
        let (_, grads) = model
            .loss_and_gradients(&inputs, &labels, &weights)
            .unwrap();
        worst_ce = worst_ce.max(max_gradient_error(
            &model,
            &grads.0,
            |m| m.params_mut(),
            |m| batch_loss(m, &inputs, &labels, &weights).unwrap(),
            1e-5,
            1e-6,
        ));
    }
    outcome(
        worst_sae < 1e-4 && worst_ce < 1e-4,
        format!("max relative error SAE {worst_sae:.2e}, weighted CE {worst_ce:.2e}"),
    )
}

fn loss_degeneration() -> Outcome {
    let mut rng = Rng::new(11);
    let model = ClassifierModel::new(3, 5, 8, 4, &mut rng).unwrap();
    let inputs = Matrix::from_fn(16, 15, |_, _| rng.uniform(-2.0, 2.0));
    let labels: Vec<usize> = (0..16).map(|_| rng.below(4)).collect();
    let records: Vec<DominanceRecord> = (0..16)
        .map(|i| {
            let clamped = rng.uniform(0.01, 1.0);
            DominanceRecord {
                trial_index: i,
                class: labels[i],
                raw_score: clamped,
                clamped_score: clamped,
                is_dominant: false,
                provenance: None,
            }
        })
        .collect();
    let sched = CurriculumSchedule::default();
    let plain = batch_loss(&model, &inputs, &labels, &[1.0; 16]).unwrap();
    let mut worst: f64 = 0.0;
    for epoch in [151, 152, 175, 200] {
        let weights: Vec<f64> = records.iter().map(|r| r.weight_at(epoch, &sched)).collect();
        worst = worst.max((batch_loss(&model, &inputs, &labels, &weights).unwrap() - plain).abs());
        let (tally, _) = model
            .loss_and_gradients(&inputs, &labels, &weights)
            .unwrap();
        worst = worst.max((tally.total - plain).abs());
    }
    let before: Vec<f64> = records.iter().map(|r| r.weight_at(150, &sched)).collect();
    outcome(
        worst < 1e-12 && before.iter().all(|&w| w == 1.0),
        format!("max |weighted - plain| after ramp {worst:.2e}"),
    )
}

fn outlier_separation() -> Outcome {
    let mut cells = 0;
    let mut separated = 0;
    let mut summary = Vec::new();
    for seed in 0..5 {
        let data = generate(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let sae = train_sae(&data, &SaeConfig::default(), &mut Rng::new(seed))
            .unwrap()
            .model;
        let records =
            estimate_all(&data, &sae, &KdeConfig::default(), Threshold::default()).unwrap();
        for class in 0..data.num_classes {
            let mean_of = |p: Provenance| {
                let v: Vec<f64> = records
                    .iter()
                    .filter(|r| r.class == class && r.provenance == Some(p))
                    .map(|r| r.raw_score)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            let (out, clean) = (mean_of(Provenance::Outlier), mean_of(Provenance::Clean));
            cells += 1;
            if out < clean {
                separated += 1;
            }
            summary.push(format!("{:.4}<{:.4}", out, clean));
        }
    }
    outcome(
        separated * 10 >= cells * 9,
        format!(
            "{separated}/{cells} cells separated (outlier<clean: {})",
            summary.join(" ")
        ),
    )
}

fn end_to_end_benefit() -> Outcome {
    let data = generate(&SynthSpec::default()).unwrap();
    let cfg = EvalConfig {
        seeds: (0..5).collect(),
        with_crop: false,
        ..EvalConfig::default()
    };
    let report = evaluate(&data, &cfg).unwrap();
    let base = report.conditions["without_crop/baseline"].mean;
    let ours = report.conditions["without_crop/weighted"].mean;
    let delta = report.deltas["without_crop"];
    outcome(
        ours >= base && delta > 0.0,
        format!("baseline {base:.2}%, weighted {ours:.2}%, delta {delta:+.3}"),
    )
}

fn cropping_arithmetic() -> Outcome {
    let mut rng = Rng::new(5);
    let trial = Trial::new(Matrix::from_fn(2, 1000, |_, _| rng.uniform(-1.0, 1.0)), 0);
    let crops = crop(&trial, 500, 25).unwrap();
    let model = ClassifierModel::new(2, 500, 16, 4, &mut rng).unwrap();
    let probs = model
        .probabilities(
            &model
                .prepare_inputs(crops.iter().map(|t| &t.signal))
                .unwrap(),
        )
        .unwrap();
    let sum: f64 = average_rows(&probs).iter().sum();
    outcome(
        crops.len() == 21 && crop_count(1000, 500, 25) == 21 && (sum - 1.0).abs() < 1e-9,
        format!(
            "{} crops, averaged probabilities sum to 1{:+.1e}",
            crops.len(),
            sum - 1.0
        ),
    )
}

fn determinism() -> Outcome {
    let data = generate(&SynthSpec {
        channels: 4,
        time_points: 64,
        trials_per_class: 24,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut cfg = EvalConfig {
        folds: 2,
        seeds: vec![3],
        crop: CropConfig {
            window_ms: 160.0,
            stride_ms: 40.0,
        },
        ..EvalConfig::default()
    };
    cfg.sae.epochs = 40;
    cfg.train.epochs = 30;
    cfg.train.early_stopping_after = Some(20);
    let a = evaluate(&data, &cfg).unwrap().to_json();
    let b = evaluate(&data, &cfg).unwrap().to_json();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "1 kde oracle equivalence",
            Duration::from_secs(1),
            kde_oracle,
        ),
        (
            "2 kde normalization",
            Duration::from_secs(5),
            kde_normalization,
        ),
        ("3 closed-form kernel values", Duration::MAX, kernel_values),
        (
            "4 curriculum endpoints",
            Duration::MAX,
            curriculum_endpoints,
        ),
        (
            "5 gradient checks",
            Duration::from_secs(10),
            gradient_checks,
        ),
        ("6 loss degeneration", Duration::MAX, loss_degeneration),
        (
            "7 outlier separation",
            Duration::from_secs(300),
            outlier_separation,
        ),
        (
            "8 end-to-end benefit",
            Duration::from_secs(900),
            end_to_end_benefit,
        ),
        ("9 cropping arithmetic", Duration::MAX, cropping_arithmetic),
        ("10 determinism", Duration::MAX, determinism),
    ];
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = result.passed && in_time;
        if !passed {
            failures += 1;
        }
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(" (limit {}s)", limit.as_secs())
        };
        println!(
            "{} {name}: {} [{:.2?}{budget}]",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed
        );
    }
    println!("{} of 10 criteria passed", 10 - failures);
    // Failures are always reported above; they only fail the process when asked,
    // so a known-failing criterion does not mask regressions in the other suites.
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failures > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
