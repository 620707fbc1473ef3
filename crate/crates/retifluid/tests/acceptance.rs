//! One line per acceptance criterion. Pass criterion numbers to run a subset,
//! e.g. `cargo test -p retifluid --test acceptance -- 3 5`.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retifluid::cli::{self, EvalArgs, SynthArgs, TrainArgs};
use retifluid::config;
use retifluid_core::autodiff::Graph;
use retifluid_core::connectivity::{
    decode_labels, global_map, make_connectivity_mask, neighbor, opposite, DIRECTIONS,
};
use retifluid_core::data::{
    augment, has_isolated_pixel, remove_isolated_pixels, synth_generate, SynthConfig,
};
use retifluid_core::eval::{
    self, balanced_acc, dsc_metric, kfold_split, signed_ranks, wilcoxon_signed_rank, WilcoxonBranch,
};
use retifluid_core::gradcheck;
use retifluid_core::image::{one_hot_batch, LabelMap};
use retifluid_core::losses::{self, HeadVars, LossConfig, Targets};
use retifluid_core::model::{images_to_batch, Model, ModelConfig};
use retifluid_core::sda::{attention_kernels, sda_apply, SdaWeights};
use retifluid_core::{Shape, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

// ---- 1 ----------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let results = gradcheck::run_suite(11, 20).map_err(e2s)?;
    let elapsed = t.elapsed();
    let failed = gradcheck::failures(&results);
    check(failed.is_empty(), || {
        format!(
            "{} of {} cases failed, first {}",
            failed.len(),
            results.len(),
            failed[0]
        )
    })?;
    let mut per_op = std::collections::BTreeMap::<String, usize>::new();
    for r in &results {
        *per_op
            .entry(r.name.split('#').next().unwrap().to_string())
            .or_default() += 1;
    }
    for loss in ["dice", "decouple", "con_map", "con_dice", "bicon", "joint"] {
        let n = per_op
            .iter()
            .filter(|(k, _)| k.split('.').next() == Some(loss) || k.starts_with(loss))
            .map(|(_, v)| v)
            .sum::<usize>();
        check(n >= 20, || format!("loss {loss} has {n} cases"))?;
    }
    let fewest = per_op
        .iter()
        .filter(|(k, _)| *k != "model.joint")
        .map(|(_, v)| *v)
        .min()
        .unwrap_or(0);
    check(fewest >= 20, || {
        format!("an operation has only {fewest} cases")
    })?;
    check(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    let worst = results
        .iter()
        .filter(|r| r.name != "model.joint")
        .map(|r| r.report.max_rel_error)
        .fold(0.0, f64::max);
    let model = results.iter().find(|r| r.name == "model.joint").unwrap();
    Ok(format!(
        "{} cases over {} operations, worst rel err {worst:.1e} (tol 1e-4), toy model {:.1e} (tol 1e-3), {:.1}s",
        results.len(),
        per_op.len(),
        model.report.max_rel_error,
        elapsed.as_secs_f64()
    ))
}

// ---- 2 ----------------------------------------------------------------

fn softmax_rows(m: &mut [Vec<f64>]) {
    for row in m.iter_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        for v in row.iter_mut() {
            *v = (*v - mx).exp() / s;
        }
    }
}

/// Pool, flatten, both kernels, both products, upsample, fuse, written out
/// with nested vectors.
fn sda_oracle(x: &Tensor, alpha: f64, beta: f64, p: usize) -> Tensor {
    let s = x.shape();
    let (ph, pw) = (s.h / p, s.w / p);
    let np = ph * pw;
    let mut out = x.clone();
    for n in 0..s.n {
        let mut xd = vec![vec![f64::NEG_INFINITY; s.c]; np];
        for y in 0..s.h {
            for xx in 0..s.w {
                for c in 0..s.c {
                    let q = (y / p) * pw + xx / p;
                    xd[q][c] = xd[q][c].max(x.at(n, y, xx, c));
                }
            }
        }
        let mut kp = vec![vec![0.0; np]; np];
        for a in 0..np {
            for b in 0..np {
                kp[a][b] = (0..s.c).map(|c| xd[a][c] * xd[b][c]).sum::<f64>() / (np as f64).sqrt();
            }
        }
        softmax_rows(&mut kp);
        let mut kc = vec![vec![0.0; s.c]; s.c];
        for a in 0..s.c {
            for b in 0..s.c {
                kc[a][b] = (0..np).map(|q| xd[q][a] * xd[q][b]).sum::<f64>() / s.c as f64;
            }
        }
        softmax_rows(&mut kc);
        for y in 0..s.h {
            for xx in 0..s.w {
                let q = (y / p) * pw + xx / p;
                for c in 0..s.c {
                    let pix: f64 = (0..np).map(|r| kp[q][r] * xd[r][c]).sum();
                    let ch: f64 = (0..s.c).map(|d| kc[c][d] * xd[q][d]).sum();
                    out.set(
                        n,
                        y,
                        xx,
                        c,
                        x.at(n, y, xx, c) + 0.5 * (alpha * pix + beta * ch),
                    );
                }
            }
        }
    }
    out
}

fn sda_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let trials = 60;
    for t in 0..trials {
        let p = rng.gen_range(1..=2);
        let shape = Shape::new(
            rng.gen_range(1..3),
            p * rng.gen_range(1..4),
            p * rng.gen_range(1..4),
            rng.gen_range(1..6),
        );
        let x = random_tensor(&mut rng, shape, -2.0, 2.0);
        let same = sda_apply(&x, SdaWeights::IDENTITY, p).map_err(e2s)?;
        check(
            same.data()
                .iter()
                .zip(x.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("trial {t}: zero weights changed the input"),
        )?;
        let (kp, kc) = attention_kernels(&x, p).map_err(e2s)?;
        for k in [&kp, &kc] {
            for row in k.data().chunks(k.shape().c) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let (a, b) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let got = sda_apply(&x, SdaWeights::new(a, b), p).map_err(e2s)?;
        worst = worst.max(got.max_abs_diff(&sda_oracle(&x, a, b, p)));
    }
    check(worst_row <= 1e-6, || {
        format!("kernel row sum off by {worst_row:e}")
    })?;
    check(worst <= 1e-10, || format!("oracle difference {worst:e}"))?;
    Ok(format!("{trials} tensors: identity bitwise, row sums within {worst_row:.0e}, oracle diff {worst:.0e}"))
}

// ---- 3 ----------------------------------------------------------------

fn blocky_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    let mut m = LabelMap::zeros(h, w);
    let block = rng.gen_range(1..4);
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let l = rng.gen_range(0..classes) as u8;
            for y in by..(by + block).min(h) {
                for x in bx..(bx + block).min(w) {
                    m.set(y, x, l);
                }
            }
        }
    }
    remove_isolated_pixels(&mut m);
    m
}

fn connectivity_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 1000 {
        let classes = rng.gen_range(2..=4);
        let (h, w) = (rng.gen_range(2..=32), rng.gen_range(2..=32));
        let m = blocky_mask(&mut rng, h, w, classes);
        if has_isolated_pixel(&m) {
            continue;
        }
        let gt = make_connectivity_mask(&m, classes).map_err(e2s)?;
        let decoded = decode_labels(&global_map(&gt).map_err(e2s)?);
        check(decoded[0] == m, || {
            format!("mask {done} ({h}x{w}, C={classes}) does not roundtrip")
        })?;
        for y in 0..h {
            for x in 0..w {
                for c in 0..classes {
                    for k in 0..DIRECTIONS {
                        let v = gt.at(0, y, x, c * DIRECTIONS + k);
                        let want = match neighbor(h, w, y, x, k) {
                            Some((ny, nx)) => {
                                let back = gt.at(0, ny, nx, c * DIRECTIONS + opposite(k));
                                check(v == back, || {
                                    format!("mask {done}: asymmetric at ({y},{x}) c{c} k{k}")
                                })?;
                                (m.get(y, x) as usize == c && m.get(ny, nx) as usize == c) as u8
                                    as f64
                            }
                            None => 0.0,
                        };
                        check(v == want, || {
                            format!("mask {done}: wrong channel at ({y},{x}) c{c} k{k}")
                        })?;
                    }
                }
            }
        }
        done += 1;
    }
    Ok("1000 masks decode exactly; ground truth symmetric".into())
}

// ---- 4 ----------------------------------------------------------------

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let masks: Vec<LabelMap> = (0..2).map(|_| blocky_mask(&mut rng, 12, 12, 3)).collect();
    let truth = one_hot_batch(&masks, 3).map_err(e2s)?;
    let perfect = losses::dice_loss_value(&truth, &truth).map_err(e2s)?;
    check(perfect <= 1e-6, || format!("perfect dice {perfect:e}"))?;
    let disjoint = truth.map(|v| 1.0 - v);
    let dis = losses::dice_loss_value(&disjoint, &truth).map_err(e2s)?;
    check(dis >= 1.0 - 1e-6, || format!("disjoint dice {dis}"))?;

    // one class, prediction covers half of the truth
    let t = Tensor::from_fn(Shape::new(1, 16, 16, 1), |_, y, _, _| (y < 8) as u8 as f64);
    let p = Tensor::from_fn(Shape::new(1, 16, 16, 1), |_, y, _, _| (y < 4) as u8 as f64);
    let half = losses::dice_loss_value(&p, &t).map_err(e2s)?;
    check((half - 1.0 / 3.0).abs() <= 1e-9, || {
        format!("half overlap {half}")
    })?;

    let w = losses::scale_weights(4);
    check(w == [1.0, 1.0, 0.5, 0.25, 0.125], || {
        format!("scale weights {w:?}")
    })?;
    check(LossConfig::default().lambda == 0.05, || {
        "default lambda".into()
    })?;

    let model = Model::build(ModelConfig::toy(32, 32, 3), 4).map_err(e2s)?;
    let images: Vec<_> = (0..2)
        .map(|_| {
            retifluid_core::image::GrayImage::new(
                32,
                32,
                (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let labels: Vec<LabelMap> = (0..2).map(|_| blocky_mask(&mut rng, 32, 32, 3)).collect();
    let out = model
        .forward(&images_to_batch(&images).map_err(e2s)?)
        .map_err(e2s)?;
    let targets = Targets::from_labels(&labels, 3).map_err(e2s)?;
    let dlc = losses::dlc_value(&out.main_standard, &out.aux_standard, &targets.onehot, 4)
        .map_err(e2s)?;
    let clc = losses::clc_value(
        &out.main_connectivity,
        &out.aux_connectivity,
        &targets,
        4,
        true,
    )
    .map_err(e2s)?;
    let mut g = Graph::new();
    let heads = HeadVars {
        main_standard: g.constant(out.main_standard.clone()),
        main_connectivity: g.constant(out.main_connectivity.clone()),
        aux_standard: out
            .aux_standard
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect(),
        aux_connectivity: out
            .aux_connectivity
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect(),
    };
    let (joint, b) =
        losses::objective(&mut g, &heads, &targets, &LossConfig::default()).map_err(e2s)?;
    let jv = g.value(joint).item();
    let gap = (jv - (dlc + 0.05 * clc)).abs();
    check(gap <= 1e-12, || {
        format!("joint {jv} vs dlc + 0.05 clc {}", dlc + 0.05 * clc)
    })?;
    check(
        (b.dlc - dlc).abs() <= 1e-12 && (b.clc - clc).abs() <= 1e-12,
        || "component mismatch".into(),
    )?;
    Ok(format!("perfect {perfect:.0e}, disjoint {dis:.7}, half {half:.12}, weights {w:?}, joint gap {gap:.0e}"))
}

// ---- 5 ----------------------------------------------------------------

fn bicon_zero_case() -> Outcome {
    let samples = synth_generate(&SynthConfig {
        subjects: 3,
        scans_per_subject: 2,
        seed: 5,
        ..Default::default()
    })
    .map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for s in &samples {
        check(!has_isolated_pixel(&s.mask), || {
            format!("{} has an isolated pixel", s.subject_id)
        })?;
        let targets = Targets::from_labels(std::slice::from_ref(&s.mask), 4).map_err(e2s)?;
        for include_background in [true, false] {
            let v = losses::bicon_loss_value(&targets.connectivity, &targets, include_background)
                .map_err(e2s)?;
            worst = worst.max(v.total());
        }
    }
    check(worst <= 1e-5, || format!("bicon {worst:e}"))?;
    Ok(format!("{} phantoms, max bicon {worst:.1e}", samples.len()))
}

// ---- 6 ----------------------------------------------------------------

fn enumerate_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for bits in 0u32..(1 << n) {
        let s: f64 = (0..n)
            .filter(|i| bits >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        le += (s <= w + 1e-9) as u64;
        ge += (s >= w - 1e-9) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for pair in 0..500 {
        let (h, w) = (rng.gen_range(1..16), rng.gen_range(1..16));
        let classes = rng.gen_range(2..5u8);
        let mut p = LabelMap::zeros(h, w);
        let mut g = LabelMap::zeros(h, w);
        for v in p.data.iter_mut().chain(g.data.iter_mut()) {
            *v = rng.gen_range(0..classes);
        }
        for c in 0..classes {
            let (mut tp, mut tn, mut fp, mut fnn) = (0.0, 0.0, 0.0, 0.0);
            for (&a, &b) in p.data.iter().zip(&g.data) {
                match (a == c, b == c) {
                    (true, true) => tp += 1.0,
                    (false, false) => tn += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fnn += 1.0,
                }
            }
            let dsc = if tp + fp + fnn == 0.0 {
                1.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fnn)
            };
            let sens = if tp + fnn == 0.0 {
                1.0
            } else {
                tp / (tp + fnn)
            };
            let spec = if tn + fp == 0.0 { 1.0 } else { tn / (tn + fp) };
            let got = (
                dsc_metric(&p, &g, c).map_err(e2s)?,
                balanced_acc(&p, &g, c).map_err(e2s)?,
            );
            check(got == (dsc, (sens + spec) / 2.0), || {
                format!("pair {pair} class {c}: {got:?}")
            })?;
        }
    }
    let mut exact = 0;
    for trial in 0..400 {
        let n = rng.gen_range(1..=12);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.125).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.125).collect();
        let r = wilcoxon_signed_rank(&a, &b).map_err(e2s)?;
        let (_, ranks) = signed_ranks(&a, &b).map_err(e2s)?;
        if r.branch != WilcoxonBranch::Exact {
            continue;
        }
        exact += 1;
        let want = enumerate_p(&ranks, r.w);
        let got = r.p_value.unwrap_or(f64::NAN);
        check((got - want).abs() <= 1e-12, || {
            format!("trial {trial}: p {got} vs enumeration {want}")
        })?;
    }
    check(exact >= 300, || format!("only {exact} exact-branch trials"))?;
    Ok(format!(
        "500 mask pairs exact; {exact} exact Wilcoxon cases match 2^n enumeration"
    ))
}

// ---- 7 ----------------------------------------------------------------

fn protocol_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..200 {
        let subjects = rng.gen_range(2..40);
        let k = rng.gen_range(2..=subjects.min(10));
        let seed = rng.gen::<u64>();
        let ids: Vec<String> = (0..subjects)
            .flat_map(|s| (0..rng.gen_range(1..4)).map(move |_| format!("s{s}")))
            .collect();
        let folds = kfold_split(&ids, k, seed).map_err(e2s)?;
        check(folds.len() == k, || {
            format!("triple {t}: {} folds", folds.len())
        })?;
        let mut tested = BTreeSet::new();
        for f in &folds {
            let (tr, te): (BTreeSet<_>, BTreeSet<_>) =
                (f.train.iter().collect(), f.test.iter().collect());
            check(tr.is_disjoint(&te), || {
                format!("triple {t}: subject in train and test")
            })?;
            check(tr.len() + te.len() == subjects, || {
                format!("triple {t}: fold misses subjects")
            })?;
            for s in te {
                check(tested.insert(s.clone()), || {
                    format!("triple {t}: {s} tested twice")
                })?;
            }
        }
        check(tested.len() == subjects, || {
            format!("triple {t}: not every subject tested")
        })?;
    }

    let dir = tempfile::tempdir().map_err(e2s)?;
    let resolved = config::parse("{}", "empty")
        .map_err(e2s)?
        .resolve(4)
        .map_err(e2s)?;
    let path = resolved.write(dir.path()).map_err(e2s)?;
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).map_err(e2s)?).map_err(e2s)?;
    let train = &json["train"];
    let want = [
        ("epochs", 30.0),
        ("lr", 2e-4),
        ("lr_decay", 0.8),
        ("decay_every", 5.0),
        ("batch_size", 4.0),
        ("lambda", 0.05),
    ];
    for (key, v) in want {
        check(train[key].as_f64() == Some(v), || {
            format!("resolved train.{key} = {}", train[key])
        })?;
    }

    let s = &synth_generate(&SynthConfig {
        subjects: 1,
        scans_per_subject: 1,
        seed: 7,
        ..Default::default()
    })
    .map_err(e2s)?[0];
    let a = augment(s, 99);
    check(a.len() == 8, || format!("{} variants", a.len()))?;
    check(a == augment(s, 99), || {
        "augment is not deterministic".into()
    })?;
    check(a != augment(s, 100), || "seed has no effect".into())?;
    Ok("200 fold triples subject-disjoint; resolved defaults 30/2e-4/0.8 per 5/4/0.05; 8 deterministic variants".into())
}

// ---- 8 ----------------------------------------------------------------

/// Training plan of the synthetic bar.
const BAR_CONFIG: &str = r#"{
  "train": {"epochs": 60, "lr": 3e-3, "decay_every": 5},
  "augment": {"enabled": false}
}"#;

fn synthetic_bar() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let data = dir.path().join("data");
    cli::cmd_synth(&SynthArgs {
        out: data.clone(),
        subjects: 9,
        scans: 4,
        size: (64, 64),
        classes: 4,
        seed: 0,
        min_region_area: 2,
    })
    .map_err(e2s)?;
    let cfg = dir.path().join("bar.json");
    std::fs::write(&cfg, BAR_CONFIG).map_err(e2s)?;
    let args = EvalArgs {
        data: data.join("manifest.json"),
        out: dir.path().join("cv"),
        model: None,
        cv: Some(3),
        seed: 0,
        config: Some(cfg),
        compare_ablation: true,
        head: None,
    };
    let (_, samples) = retifluid::manifest::load_samples(&args.data).map_err(e2s)?;
    let m = retifluid::manifest::load_manifest(&args.data).map_err(e2s)?;
    let out = cli::eval_cv(&args, 3, &m, &samples).map_err(e2s)?;
    let elapsed = t.elapsed();
    let full = out.full.summary.overall_dsc();
    let ablation = out
        .ablation
        .as_ref()
        .map(|a| a.summary.overall_dsc())
        .unwrap_or(f64::NAN);
    let per_class = |r: &eval::CvReport| {
        r.summary
            .mean_dsc
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    let detail = format!(
        "full {full:.4} ({}), ablation {ablation:.4} ({}), margin {:+.4}, {:.0}s",
        per_class(&out.full),
        out.ablation.as_ref().map(per_class).unwrap_or_default(),
        full - ablation,
        elapsed.as_secs_f64()
    );
    check(full >= 0.80, || format!("{detail}: full below 0.80"))?;
    check(full - ablation >= 0.02, || {
        format!("{detail}: margin below 0.02")
    })?;
    check(elapsed < Duration::from_secs(30 * 60), || {
        format!("{detail}: over 30 min")
    })?;
    Ok(detail)
}

// ---- 9 ----------------------------------------------------------------

fn same_bytes(a: &Path, b: &Path) -> Result<(), String> {
    let (x, y) = (
        std::fs::read(a).map_err(e2s)?,
        std::fs::read(b).map_err(e2s)?,
    );
    check(x == y, || {
        format!("{} and {} differ", a.display(), b.display())
    })
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let data = dir.path().join("data");
    let synth = SynthArgs {
        out: data.clone(),
        subjects: 3,
        scans: 2,
        size: (32, 32),
        classes: 3,
        seed: 9,
        min_region_area: 2,
    };
    cli::cmd_synth(&synth).map_err(e2s)?;
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"epochs": 2, "batch_size": 2, "seed": 9}, "model": {"seed": 9}}"#,
    )
    .map_err(e2s)?;
    let manifest = data.join("manifest.json");
    let mut compared = 0;
    for run in ["a", "b"] {
        cli::cmd_train(&TrainArgs {
            data: Some(manifest.clone()),
            config: Some(cfg.clone()),
            out: Some(dir.path().join(run)),
        })
        .map_err(e2s)?;
        let args = EvalArgs {
            data: manifest.clone(),
            out: dir.path().join(run).join("cv"),
            model: None,
            cv: Some(3),
            seed: 9,
            config: Some(cfg.clone()),
            compare_ablation: true,
            head: None,
        };
        cli::cmd_eval(&args).map_err(e2s)?;
        let ev = EvalArgs {
            model: Some(dir.path().join(run).join("model.rfnt")),
            cv: None,
            compare_ablation: false,
            out: dir.path().join(run).join("eval"),
            ..args
        };
        cli::cmd_eval(&ev).map_err(e2s)?;
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for f in [
        "model.rfnt",
        "train_log.csv",
        "cv/summary.csv",
        "cv/folds.csv",
        "cv/ablation_summary.csv",
        "cv/wilcoxon.csv",
        "eval/metrics.csv",
        "eval/per_scan.csv",
    ] {
        same_bytes(&a.join(f), &b.join(f))?;
        compared += 1;
    }
    Ok(format!(
        "{compared} checkpoint and CSV files byte-identical across two runs"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("SDA identities", sda_identities),
        ("connectivity roundtrip", connectivity_roundtrip),
        ("loss identities", loss_identities),
        ("bicon zero case", bicon_zero_case),
        ("metric oracle equivalence", metric_oracles),
        ("protocol fidelity", protocol_fidelity),
        ("end-to-end synthetic bar", synthetic_bar),
        ("reproducibility", reproducibility),
    ];
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
