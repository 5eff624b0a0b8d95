//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! per-criterion lines always reach stdout.
//!
//! `LGLAB_ACCEPTANCE_CONFIG` points at an alternative config for the full
//! run; the default is `configs/acceptance.conf` at the workspace root.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lglab::diffcore::{grad_check, GradCheckOptions, ParamStore, Tape, Tensor};
use lglab::latentlab::{estimate_attribute_vector, LabeledEncoding, Strategy};
use lglab::pipeline::{decode_checkpoint, encode_checkpoint, load_config, run_pipeline, Metrics, RunConfig};
use lglab::synthface::Attribute;
use lglab::vaegan::{loss_gan, loss_like, loss_prior, Architecture, ModelTriple, Trainer, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const H: f64 = 1e-4;

/// Small model with weights scaled up and nonzero biases, so that gradients
/// sit well above finite-difference roundoff.
fn conditioned(feature_layer: usize) -> (Trainer<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let arch = Architecture { image_size: 8, channels: vec![2, 3], latent_dim: 3, feature_layer };
    let cfg = TrainingConfig { architecture: arch.clone(), ..TrainingConfig::default() };
    let mut model = ModelTriple::<f64>::new(arch, 2).unwrap();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for (k, n) in names.iter().enumerate() {
        let t = model.params.get(n).unwrap().clone();
        let t = if n.ends_with(".b") {
            Tensor::from_fn(t.shape(), |i| 0.1 * ((i + 7 * k) as f64 * 1.3).sin())
        } else {
            t.map(|v| v * 3.0)
        };
        model.params.set(n, t).unwrap();
    }
    let tr = Trainer::with_model(model, cfg).unwrap();
    let x = Tensor::from_fn(&[2, 1, 8, 8], |i| 0.5 + 0.4 * ((i as f64) * 0.61).sin());
    let noise = Tensor::from_fn(&[2, 3], |i| ((i as f64) * 1.7).cos());
    let zp = Tensor::from_fn(&[2, 3], |i| ((i as f64) * 0.9 + 0.3).sin());
    (tr, x, noise, zp)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for l in [1, 2] {
        let (tr, x, noise, zp) = conditioned(l);
        let mut tape = Tape::new();
        tr.forward(&mut tape, &x, &noise, &zp).map_err(|e| e.to_string())?;
        let kink = tape.min_kink_distance().unwrap_or(f64::INFINITY);
        if kink <= 10.0 * H {
            return Err(format!("probe within {kink:.2e} of a leaky_relu kink"));
        }
        for term in 0..3 {
            let report = grad_check(
                |tape: &mut Tape<f64>, p: &ParamStore<f64>| {
                    let mut probe = tr.clone();
                    probe.model.params = p.clone();
                    let v = probe.forward(tape, &x, &noise, &zp)?;
                    Ok([v.prior, v.like, v.gan][term])
                },
                &tr.model.params,
                GradCheckOptions { h: H, max_per_tensor: None, seed: 1 },
            )
            .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-5 && secs < 120.0, format!("max relative error {worst:.2e} in {secs:.1}s"))
}

fn scalar(t: &mut Tape<f64>, shape: Vec<usize>, v: Vec<f64>) -> lglab::diffcore::Var {
    t.constant(Tensor::new(shape, v).unwrap()).unwrap()
}

/// KL(N(μ, σ²) ‖ N(0, 1)) by composite Simpson quadrature over ±14σ.
fn kl_by_quadrature(mu: f64, logvar: f64) -> f64 {
    let sigma = (0.5 * logvar).exp();
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 40_000;
    let step = (b - a) / n as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let f = |z: f64| {
        let log_q = -0.5 * ((z - mu) / sigma).powi(2) - sigma.ln() - 0.5 * ln2pi;
        let log_p = -0.5 * z * z - 0.5 * ln2pi;
        log_q.exp() * (log_q - log_p)
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * step / 3.0
}

fn loss_oracles() -> Outcome {
    let mut t = Tape::<f64>::new();
    let m = scalar(&mut t, vec![1, 1], vec![1.0]);
    let v = scalar(&mut t, vec![1, 1], vec![0.0]);
    let prior = loss_prior(&mut t, m, v, 1.0).map_err(|e| e.to_string())?;
    let prior = t.value(prior).item();
    let kl_err = (prior - kl_by_quadrature(1.0, 0.0)).abs().max((prior - 0.5).abs());

    let half = t.constant(Tensor::full(&[4, 1], 0.5)).unwrap();
    let gan = loss_gan(&mut t, half, half, half).map_err(|e| e.to_string())?;
    let gan_err = (t.value(gan).item() - 3.0 * std::f64::consts::LN_2).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 24;
    let fr: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fx: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_density: f64 = fr.iter().zip(&fx).map(|(a, b)| -0.5 * (a - b).powi(2) - 0.5 * ln2pi).sum();
    let a = scalar(&mut t, vec![1, d], fr);
    let b = scalar(&mut t, vec![1, d], fx);
    let like = loss_like(&mut t, a, b).map_err(|e| e.to_string())?;
    let like_err = (t.value(like).item() - (-log_density - 0.5 * d as f64 * ln2pi)).abs();

    check(
        kl_err < 1e-9 && gan_err < 1e-12 && like_err < 1e-9,
        format!("KL error {kl_err:.1e}, GAN error {gan_err:.1e}, likelihood error {like_err:.1e}"),
    )
}

fn reconstruction(m: &Metrics) -> Outcome {
    check(
        m.recon_ratio() < 0.5,
        format!(
            "held-out MSE {:.5} vs mean-image {:.5}, ratio {:.3} over {} frames",
            m.recon_mse,
            m.baseline_mse,
            m.recon_ratio(),
            m.holdout_frames
        ),
    )
}

fn transfer(m: &Metrics) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for attr in [Attribute::Smile, Attribute::Yawn] {
        let a = m.attribute(attr).ok_or("attribute missing from metrics")?;
        ok &= a.transfer_total >= 50 && a.transfer_increased * 5 >= a.transfer_total * 4;
        parts.push(format!("{attr} {}/{}", a.transfer_increased, a.transfer_total));
    }
    check(ok, parts.join(", "))
}

fn separation(m: &Metrics) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for attr in [Attribute::Smile, Attribute::Yawn] {
        let a = m.attribute(attr).ok_or("attribute missing from metrics")?;
        ok &= a.auc > 0.9;
        parts.push(format!("{attr} AUC {:.4}", a.auc));
    }
    check(ok, parts.join(", "))
}

fn anomalies(m: &Metrics) -> Outcome {
    check(
        m.anomaly_recall >= 0.7 && m.false_flag_rate <= 0.1,
        format!("ε {:.4}, recall {:.3}, false-flag rate {:.3}", m.epsilon, m.anomaly_recall, m.false_flag_rate),
    )
}

fn key_frames(m: &Metrics) -> Outcome {
    check(
        m.key_fraction() <= 0.05 && m.events_covered == m.events_total,
        format!(
            "{} of {} frames ({:.2}%), {}/{} events covered",
            m.key_frames,
            m.total_frames,
            100.0 * m.key_fraction(),
            m.events_covered,
            m.events_total
        ),
    )
}

fn attribute_estimate() -> Outcome {
    let d = 32;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a: Vec<f64> = (0..d).map(|j| (j as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..d).map(|j| 0.5 * (j as f64 * 0.11).cos()).collect();
    let mut draw = |c: &[f64]| -> Vec<f64> { c.iter().map(|v| v + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect() };
    let mut enc = Vec::with_capacity(2 * n);
    for i in 0..n {
        enc.push(LabeledEncoding { z: draw(&a), subject_id: (i % 10) as u32, positive: true });
        enc.push(LabeledEncoding { z: draw(&b), subject_id: (i % 10) as u32, positive: false });
    }
    let v = estimate_attribute_vector("a", &enc, Strategy::DiffOfMeans).map_err(|e| e.to_string())?;
    let err = v.z_a.iter().zip(a.iter().zip(&b)).map(|(e, (x, y))| (e - (x - y)).powi(2)).sum::<f64>().sqrt();
    let bound = 4.0 * (2.0 * d as f64 / n as f64).sqrt();
    check(err < bound, format!("‖ẑ − (a − b)‖ = {err:.4}, bound {bound:.4}"))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        subjects: 4,
        frames_per_subject: 120,
        event_min_len: 10,
        event_max_len: 30,
        epochs: 3,
        seed: 5,
        ..RunConfig::default()
    };
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        cfg.output_dir = dir.path().join(name);
        run_pipeline(&cfg).map_err(|e| e.to_string())?;
        runs.push(cfg.output_dir.clone());
    }
    let files = csv_files(&runs[0]);
    let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    let other: Vec<_> = csv_files(&runs[1]).iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    if names != other {
        return Err("runs wrote different CSV sets".into());
    }
    for n in &names {
        if fs::read(runs[0].join(n)).unwrap() != fs::read(runs[1].join(n)).unwrap() {
            return Err(format!("{} differs between runs", n.to_string_lossy()));
        }
    }

    let bytes = fs::read(runs[0].join("model.ckpt")).map_err(|e| e.to_string())?;
    let ck = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    let again = encode_checkpoint(&ck.model, &ck.training, ck.epoch, ck.step);
    let model = ModelTriple::<f32>::new(cfg.architecture(), 9).map_err(|e| e.to_string())?;
    let fresh = encode_checkpoint(&model, &cfg.training(), 1, 2);
    let back = decode_checkpoint(&fresh).map_err(|e| e.to_string())?;
    let params_equal = model.params.iter().all(|(n, t)| {
        back.model.params.get(n).is_ok_and(|u| {
            t.shape() == u.shape() && t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }) && model.params.len() == back.model.params.len();
    check(
        again == bytes && params_equal,
        format!("{} CSVs byte-identical across two runs, checkpoint roundtrip bit-exact", names.len()),
    )
}

fn full_run() -> Result<Metrics, String> {
    let path = std::env::var_os("LGLAB_ACCEPTANCE_CONFIG")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("configs/acceptance.conf"));
    let mut cfg = load_config(&path).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().to_path_buf();
    let start = Instant::now();
    let m = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    println!(
        "full run: {} subjects × {} frames, {} epochs, {:.0}s",
        cfg.subjects,
        cfg.frames_per_subject,
        cfg.epochs,
        start.elapsed().as_secs_f64()
    );
    Ok(m)
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let metrics = catch_unwind(full_run).unwrap_or_else(|_| Err("full run panicked".into()));
    let from_run = |f: fn(&Metrics) -> Outcome| -> Outcome {
        match &metrics {
            Ok(m) => guarded(|| f(m)),
            Err(e) => Err(format!("full run failed: {e}")),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient check", guarded(gradients)),
        ("loss oracles", guarded(loss_oracles)),
        ("held-out reconstruction", from_run(reconstruction)),
        ("attribute transfer", from_run(transfer)),
        ("attribute separation", from_run(separation)),
        ("anomaly flags", from_run(anomalies)),
        ("key-gesture coverage", from_run(key_frames)),
        ("attribute estimate bound", guarded(attribute_estimate)),
        ("determinism", guarded(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
