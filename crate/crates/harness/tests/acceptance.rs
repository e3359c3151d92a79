//! Acceptance suite. Prints one PASS / FAIL / UNVERIFIED line per criterion
//! and exits non-zero when any criterion fails.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use oracle::{fd_grad, flatten, rel_err, rel_scalar, Mat, SplitMix};
use viewforge_core::augment::Pipeline;
use viewforge_core::dataset::{open_dataset, pack_dataset, PackOptions};
use viewforge_core::loader::{bench_throughput, Batch, Loader, LoaderConfig, Traversal};
use viewforge_core::losses::{
    barlow_loss, build_pair_relation, simclr_loss, vicreg_loss, BarlowParams, Reduction, RelationMatrix,
    SimClrParams, VicRegCoeffs,
};
use viewforge_core::model::{stack_views, EncoderSpec, Layers, Method, Network, ProjectorSpec};
use viewforge_core::source::{MemoryDataset, SampleSource};
use viewforge_core::{Image, ImageRecord};
use viewforge_harness::bench::preset_pipeline;
use viewforge_harness::config::Config;
use viewforge_harness::sweep::{run_sweep, SweepConfig};
use viewforge_harness::synth::random_rgb_records;
use viewforge_harness::train::{run_training, RunOptions, RunReport, RunStatus, TrainSettings};

enum Verdict {
    Pass(String),
    Fail(String),
    /// The criterion cannot be measured on this machine.
    Unverified(String),
}

type Check = std::result::Result<Verdict, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn to_array(m: &Mat) -> Array2<f64> {
    Array2::from_shape_fn((m.len(), m[0].len()), |(i, j)| m[i][j])
}

fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn relation(g: &Mat) -> RelationMatrix {
    RelationMatrix::from_dense(&to_array(g)).unwrap()
}

fn grad_vec(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Random `(Z, G)` with N ≤ 16 and K ≤ 8.
fn random_instance(rng: &mut SplitMix, idx: usize) -> (Mat, Mat) {
    let n = 2 * (1 + rng.below(8));
    let k = 1 + rng.below(8);
    let z = rng.matrix(n, k, -2.0, 2.0);
    let g = if idx % 2 == 0 {
        oracle::pair_relation(n / 2)
    } else {
        let mut g = oracle::random_relation(rng, n, 0.3);
        g[0][1] = 1.0;
        g[1][0] = 1.0;
        g
    };
    (z, g)
}

fn loss_oracle_equivalence() -> Check {
    let mut rng = SplitMix(101);
    let mut worst = 0.0f64;
    for idx in 0..100 {
        let (z, g) = random_instance(&mut rng, idx);
        let c = VicRegCoeffs {
            alpha: rng.range(0.0, 30.0),
            beta: rng.range(0.0, 5.0),
            gamma: rng.range(0.0, 30.0),
            epsilon: 1e-4,
        };
        let out = vicreg_loss(to_array(&z).view(), &relation(&g), &c).unwrap();
        let (v, cv, inv) = oracle::vicreg(&z, &g, c.alpha, c.beta, c.gamma, c.epsilon);
        worst = worst.max(rel_scalar(out.value, v + cv + inv));

        let tau = rng.range(0.05, 1.0);
        let mean = idx % 3 == 0;
        let reduction = if mean { Reduction::MeanOverPositives } else { Reduction::Sum };
        let out = simclr_loss(to_array(&z).view(), &relation(&g), &SimClrParams { tau, reduction }).unwrap();
        worst = worst.max(rel_scalar(out.loss.value, oracle::simclr(&z, &g, tau, mean).0));

        let right = rng.matrix(z.len(), z[0].len(), -1.0, 3.0);
        let alpha = rng.range(0.0, 1.0);
        let out = barlow_loss(to_array(&z).view(), to_array(&right).view(), &BarlowParams { alpha }).unwrap();
        worst = worst.max(rel_scalar(out.value, oracle::barlow(&z, &right, alpha)));
    }
    ensure(worst <= 1e-12, format!("worst relative error {worst:.3e}"))?;
    Ok(Verdict::Pass(format!("300 evaluations, worst relative error {worst:.2e}")))
}

const FD_STEP: f64 = 1e-5;

fn loss_gradients(rng: &mut SplitMix) -> f64 {
    let mut worst = 0.0f64;
    for idx in 0..30 {
        let (z, g) = random_instance(rng, idx);
        let c = VicRegCoeffs::default();
        let cov = oracle::covariance(&z);
        let on_hinge = cov.iter().enumerate().any(|(d, r)| ((r[d] + c.epsilon).sqrt() - 1.0).abs() < 1e-3);
        if !on_hinge {
            let out = vicreg_loss(to_array(&z).view(), &relation(&g), &c).unwrap();
            let fd = fd_grad(&z, FD_STEP, |m| {
                let (a, b, d) = oracle::vicreg(m, &g, c.alpha, c.beta, c.gamma, c.epsilon);
                a + b + d
            });
            worst = worst.max(rel_err(&grad_vec(&out.grad), &flatten(&fd)));
        }

        let params = SimClrParams::default();
        let out = simclr_loss(to_array(&z).view(), &relation(&g), &params).unwrap();
        let fd = fd_grad(&z, FD_STEP, |m| oracle::simclr(m, &g, params.tau, false).0);
        worst = worst.max(rel_err(&grad_vec(&out.loss.grad), &flatten(&fd)));

        // Two standardised rows are always ±1, so the loss is flat there.
        if z.len() < 4 {
            continue;
        }
        let right = rng.matrix(z.len(), z[0].len(), -2.0, 2.0);
        let alpha = BarlowParams::default().alpha;
        let out = barlow_loss(to_array(&z).view(), to_array(&right).view(), &BarlowParams { alpha }).unwrap();
        let fd_l = fd_grad(&z, FD_STEP, |m| oracle::barlow(m, &right, alpha));
        let fd_r = fd_grad(&right, FD_STEP, |m| oracle::barlow(&z, m, alpha));
        worst = worst.max(rel_err(&grad_vec(&out.grad), &flatten(&fd_l)));
        worst = worst.max(rel_err(&grad_vec(out.grad_right.as_ref().unwrap()), &flatten(&fd_r)));
    }
    worst
}

fn method_oracle_loss(method: Method, z: &Mat, b: usize) -> f64 {
    match method {
        Method::SimClr => oracle::simclr(z, &oracle::pair_relation(b), 0.5, false).0,
        Method::VicReg => {
            let c = VicRegCoeffs::default();
            let (a, bb, d) = oracle::vicreg(z, &oracle::pair_relation(b), c.alpha, c.beta, c.gamma, c.epsilon);
            a + bb + d
        }
        Method::Barlow => oracle::barlow(&z[..b].to_vec(), &z[b..].to_vec(), 0.3),
        Method::InstanceSimClr => unreachable!(),
    }
}

fn method_grad(method: Method, z: &Array2<f64>, b: usize) -> Array2<f64> {
    let params = SimClrParams {
        tau: 0.5,
        ..SimClrParams::default()
    };
    match method {
        Method::SimClr => simclr_loss(z.view(), &build_pair_relation(b), &params).unwrap().loss.grad,
        Method::VicReg => vicreg_loss(z.view(), &build_pair_relation(b), &VicRegCoeffs::default()).unwrap().grad,
        Method::Barlow => {
            let (l, r) = z.view().split_at(Axis(0), b);
            let out = barlow_loss(l, r, &BarlowParams { alpha: 0.3 }).unwrap();
            ndarray::concatenate(Axis(0), &[out.grad.view(), out.grad_right.unwrap().view()]).unwrap()
        }
        Method::InstanceSimClr => unreachable!(),
    }
}

fn end_to_end_gradients(rng: &mut SplitMix) -> f64 {
    let mut worst = 0.0f64;
    for (seed, method) in [Method::SimClr, Method::VicReg, Method::Barlow].into_iter().enumerate() {
        let b = 4;
        let views: Vec<Array2<f64>> = (0..2).map(|_| to_array(&rng.matrix(b, 6, -1.0, 1.0))).collect();
        let vv: Vec<_> = views.iter().map(|v| v.view()).collect();
        let x = stack_views(method, &vv).unwrap();
        let mut net = Network::new(
            &EncoderSpec::mlp(&[6, 8, 5], true),
            &ProjectorSpec {
                depth: 2,
                hidden: 7,
                output: 4,
            },
            seed as u64 + 10,
        )
        .unwrap();
        let z = net.forward(x.view()).unwrap().z;
        let analytic = net.backward(&method_grad(method, &z, b)).unwrap().flatten();
        let p0 = vec![net.parameters()];
        let mut probe = net.clone();
        let fd = fd_grad(&p0, FD_STEP, |p| {
            probe.set_parameters(&p[0]).unwrap();
            method_oracle_loss(method, &to_mat(&probe.infer(x.view()).unwrap().z), b)
        });
        worst = worst.max(rel_err(&analytic, &fd[0]));
    }
    worst
}

fn gradient_correctness() -> Check {
    let mut rng = SplitMix(202);
    let losses = loss_gradients(&mut rng);
    let e2e = end_to_end_gradients(&mut rng);
    ensure(losses < 1e-5, format!("loss gradients: worst relative error {losses:.3e}"))?;
    ensure(e2e < 1e-5, format!("encoder+projector: worst relative error {e2e:.3e}"))?;
    Ok(Verdict::Pass(format!("losses {losses:.2e}, encoder+projector {e2e:.2e}")))
}

fn trivial_identities() -> Check {
    let z = to_array(&vec![vec![0.3, -1.2, 0.8], vec![0.3, -1.2, 0.8]]);
    let simclr = simclr_loss(z.view(), &build_pair_relation(1), &SimClrParams::default()).unwrap();
    ensure(simclr.loss.value == 0.0, format!("SimCLR identical pair = {}", simclr.loss.value))?;

    let (alpha, k, eps) = (25.0, 5usize, 1e-4);
    let rows = Array2::from_shape_fn((6, k), |(_, j)| j as f64 * 0.3 - 0.7);
    let c = VicRegCoeffs {
        alpha,
        beta: 1.0,
        gamma: 25.0,
        epsilon: eps,
    };
    let vic = vicreg_loss(rows.view(), &build_pair_relation(3), &c).unwrap();
    let target = alpha * k as f64;
    ensure(
        (vic.value - target).abs() <= target * eps.sqrt(),
        format!("VICReg identical rows = {} vs {target}", vic.value),
    )?;

    let ortho = to_array(&vec![
        vec![1.0, 1.0, 1.0],
        vec![1.0, -1.0, -1.0],
        vec![-1.0, 1.0, -1.0],
        vec![-1.0, -1.0, 1.0],
    ]);
    let barlow = barlow_loss(ortho.view(), ortho.view(), &BarlowParams::default()).unwrap();
    ensure(barlow.value.abs() <= 1e-15, format!("Barlow identical orthogonal views = {}", barlow.value))?;
    Ok(Verdict::Pass(format!(
        "SimCLR {}, VICReg |Δ| {:.1e} ≤ {:.1e}, Barlow {:.1e}",
        simclr.loss.value,
        (vic.value - target).abs(),
        target * eps.sqrt(),
        barlow.value
    )))
}

fn random_images(n: usize, seed: u64) -> Vec<ImageRecord> {
    let mut rng = SplitMix(seed);
    (0..n)
        .map(|i| {
            let (h, w) = (1 + rng.below(48), 1 + rng.below(48));
            let data = (0..h * w * 3).map(|_| rng.next_u64() as u8).collect();
            ImageRecord::new(Image::new(h, w, 3, data).unwrap(), i as u32 % 17)
        })
        .collect()
}

fn dataset_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("round.sslp");
    let records = random_images(1000, 303);
    pack_dataset(&path, &records, &PackOptions::default()).map_err(|e| e.to_string())?;
    let handle = open_dataset(&path).map_err(|e| e.to_string())?;
    ensure(handle.sample_count() == 1000, "sample count")?;
    for (i, r) in records.iter().enumerate() {
        ensure(handle.read_sample(i).map_err(|e| e.to_string())? == *r, format!("sample {i} differs"))?;
    }
    ensure(handle.validate().is_clean(), "fresh file fails validation")?;
    let victim = 517;
    let d = handle.descriptor(victim).map_err(|e| e.to_string())?;
    drop(handle);
    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    bytes[d.byte_offset as usize + d.byte_length as usize / 2] ^= 0x01;
    std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
    let report = open_dataset(&path).map_err(|e| e.to_string())?.validate();
    ensure(report.failed_indices == vec![victim], format!("validate flagged {:?}", report.failed_indices))?;
    Ok(Verdict::Pass(format!("1000 images byte-identical, flipped byte in sample {victim} detected")))
}

fn determinism_config(workers: usize) -> LoaderConfig {
    LoaderConfig {
        batch_size: 256,
        num_workers: workers,
        traversal: Traversal::Random,
        seed: 404,
        drop_last: false,
        view_pipelines: vec![Pipeline::ssl_default(32); 2],
        prefetch_depth: 2,
        resolution: None,
    }
}

fn loader_determinism() -> Check {
    let source: Arc<dyn SampleSource> = Arc::new(MemoryDataset::new(random_rgb_records(10_000, 64, 10, 404)));
    let reference: Vec<Batch> = Loader::new(source.clone(), determinism_config(1))
        .map_err(|e| e.to_string())?
        .epoch(0)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for workers in [2, 4, 8] {
        let loader = Loader::new(source.clone(), determinism_config(workers)).map_err(|e| e.to_string())?;
        let mut count = 0;
        for (k, b) in loader.epoch(0).enumerate() {
            let b = b.map_err(|e| e.to_string())?;
            ensure(reference.get(k) == Some(&b), format!("workers={workers}: batch {k} differs"))?;
            count += 1;
        }
        ensure(count == reference.len(), format!("workers={workers}: {count} batches"))?;
    }
    Ok(Verdict::Pass(format!(
        "{} batches of 10k 64x64 images, 2 views, identical for workers 1/2/4/8",
        reference.len()
    )))
}

fn throughput_scaling() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("bench.sslp");
    pack_dataset(&path, &random_rgb_records(1024, 64, 10, 505), &PackOptions::default()).map_err(|e| e.to_string())?;
    let source: Arc<dyn SampleSource> = Arc::new(open_dataset(&path).map_err(|e| e.to_string())?);
    let bench = |preset: usize, workers: usize| {
        let cfg = LoaderConfig {
            batch_size: 64,
            num_workers: workers,
            traversal: Traversal::Random,
            seed: 505,
            drop_last: true,
            view_pipelines: vec![preset_pipeline(preset, 64).unwrap(); 2],
            prefetch_depth: 2,
            resolution: None,
        };
        bench_throughput(source.clone(), cfg, 1).map_err(|e| e.to_string())
    };
    let crops = bench(0, 1)?;
    let jitter = bench(4, 1)?;
    let slowdown = crops.images_per_sec / jitter.images_per_sec;
    ensure(slowdown > 1.1, format!("+Jitter only {slowdown:.2}x slower than Crops"))?;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cores < 4 {
        return Ok(Verdict::Unverified(format!(
            "{cores} core(s) available, scaling needs >= 4; +Jitter is {slowdown:.2}x slower than Crops"
        )));
    }
    let four = bench(4, 4)?;
    let speedup = four.images_per_sec / jitter.images_per_sec;
    let detail = format!("4 workers {speedup:.2}x of 1 worker; +Jitter {slowdown:.2}x slower than Crops");
    if speedup >= 2.0 {
        Ok(Verdict::Pass(detail))
    } else {
        Ok(Verdict::Fail(detail))
    }
}

fn toy_run(method: &str) -> Result<RunReport, String> {
    let text = format!(
        "train.method = {method}\ntrain.steps = 2000\nloader.batch_size = 64\nloader.num_workers = 1\n\
         train.projector_hidden = 64\nrun.seed = 7\n"
    );
    let cfg = Config::parse(&text).map_err(|e| e.to_string())?;
    let settings = TrainSettings::from_config(&cfg).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        no_timing: true,
        ..RunOptions::default()
    };
    run_training(&settings, &opts).map_err(|e| e.to_string())
}

fn no_collapse_training() -> Check {
    let mut parts = Vec::new();
    for method in ["simclr", "vicreg", "barlow"] {
        let r = toy_run(method)?;
        ensure(r.status == RunStatus::Ok, format!("{method}: {:?}", r.error))?;
        ensure(r.steps_completed == 2000, format!("{method}: {} steps", r.steps_completed))?;
        let std = r.final_embedding_std.unwrap_or(0.0);
        let acc = r.probe_accuracy.unwrap_or(0.0);
        ensure(std > 1e-2, format!("{method}: embedding std {std:.3e}"))?;
        ensure(acc >= 0.80, format!("{method}: probe accuracy {acc:.3}"))?;
        parts.push(format!("{method} acc {acc:.3} std {std:.3}"));
    }
    Ok(Verdict::Pass(parts.join(", ")))
}

fn instance_simclr() -> Check {
    let r = toy_run("instance_simclr")?;
    ensure(r.status == RunStatus::Ok, format!("{:?}", r.error))?;
    let acc = r.probe_accuracy.unwrap_or(0.0);
    ensure(acc >= 0.60, format!("probe accuracy {acc:.3}"))?;
    Ok(Verdict::Pass(format!(
        "probe accuracy {acc:.3}, embedding std {:.3}",
        r.final_embedding_std.unwrap_or(0.0)
    )))
}

fn sweep_harness() -> Check {
    let text = "train.method = simclr\ntrain.steps = 2000\nloader.batch_size = 64\nloader.num_workers = 0\n\
                train.projector_hidden = 64\nrun.seed = 7\nsweep.grid = fig8\n";
    let cfg = Config::parse(text).map_err(|e| e.to_string())?;
    let sweep = SweepConfig::from_config(&cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first, s1) = run_sweep(&cfg, &sweep, &dir.path().join("a"), true).map_err(|e| e.to_string())?;
    ensure(first.len() == 36, format!("{} reports", first.len()))?;
    let (second, s2) = run_sweep(&cfg, &sweep, &dir.path().join("b"), true).map_err(|e| e.to_string())?;
    ensure(first == second, "rerun produced different reports")?;
    ensure(s1.argmax == s2.argmax && s1.argmax.is_some(), "argmax differs between reruns")?;
    let csv_a = std::fs::read(dir.path().join("a/summary.csv")).map_err(|e| e.to_string())?;
    let csv_b = std::fs::read(dir.path().join("b/summary.csv")).map_err(|e| e.to_string())?;
    ensure(csv_a == csv_b, "summary.csv differs between reruns")?;
    Ok(Verdict::Pass(format!(
        "36 reports ({} failed), argmax {} {:?} acc {:.3}, identical on rerun",
        s1.failed,
        s1.argmax.unwrap_or_default(),
        s1.argmax_axes,
        s1.argmax_accuracy.unwrap_or(0.0)
    )))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Check)> = vec![
        ("loss oracle equivalence", Duration::from_secs(10), loss_oracle_equivalence),
        ("gradient correctness", Duration::from_secs(60), gradient_correctness),
        ("trivial-value identities", Duration::from_secs(10), trivial_identities),
        ("dataset round trip", Duration::from_secs(30), dataset_round_trip),
        ("loader determinism", Duration::from_secs(120), loader_determinism),
        ("throughput scaling", Duration::from_secs(300), throughput_scaling),
        ("desk-scale no-collapse training", Duration::from_secs(600), no_collapse_training),
        ("instance SimCLR viability", Duration::from_secs(600), instance_simclr),
        ("sweep harness", Duration::from_secs(90 * 60), sweep_harness),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(Ok(v)) => v,
            Ok(Err(msg)) => Verdict::Fail(msg),
            Err(_) => Verdict::Fail("panicked".into()),
        };
        let verdict = match verdict {
            Verdict::Pass(d) if elapsed > budget => {
                Verdict::Fail(format!("{d}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget.as_secs()))
            }
            v => v,
        };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
            Verdict::Unverified(d) => ("UNVERIFIED", d),
        };
        println!("{tag:<10} {name} [{:.1}s] {detail}", elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
