//! Acceptance suite. Prints one line per criterion.
//!
//! Criteria 1-7, 11 and 12 check implementation contracts and abort the run
//! on failure. Criteria 8-10 are experimental outcomes on the synthetic
//! roster; their lines report PASS or FAIL with the measured values, and the
//! run only aborts if the experiment itself is malformed.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use mage_core::engine::{cross_eval, run_sequence, RunOptions, RunRecord, TrainConfig};
use mage_core::metrics::{
    avg_acc, classify_errors, error_metrics, forgetting, mean_std, new_acc, reference_tables, sign_test_p,
    trajectory, ErrorLabel, ForgettingMode, LabelCounts,
};
use mage_core::model::{
    build_variant, derive_freeze_mask, mage_forward, AdapterKey, Checkpoint, LoraAdapter, MageLinear, Modality,
    ModelConfig, TensorName, ToyModel, Variant,
};
use mage_core::numerics::{finite_diff_check, Matrix, Rng};
use mage_core::pema::{damping_eigen_oracle, fisher_equals_neg_hessian_oracle};
use mage_core::pema::{ema_update, ema_weight, EmaPolicy, EmaState, DEFAULT_EPS_DELTA, DEFAULT_LAMBDA};
use mage_core::tasks::{generate_roster, task_order, Archetype, RosterConfig, TaskSpec};

/// Rounding slack for two-decimal reported values.
const REPORT_TOL: f64 = 0.005 + 1e-9;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = Result<Outcome, String>;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn c1_metric_reproduction() -> Check {
    let expected: BTreeMap<&str, (f64, f64, f64)> = [
        ("MAGE", (49.58, 12.26, 59.79)),
        ("LoRA", (42.23, 20.36, 59.19)),
        ("CIA", (47.99, 14.89, 60.40)),
    ]
    .into_iter()
    .collect();
    let tables = reference_tables();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, (aa, f, na)) in &expected {
        let t = tables.iter().find(|t| t.method == *name).ok_or(format!("no table {name}"))?;
        let m = t.matrix().map_err(|e| e.to_string())?;
        let got_aa = avg_acc(&m, m.stages() - 1).map_err(|e| e.to_string())?;
        let got_f = forgetting(&m, ForgettingMode::DiagRef).map_err(|e| e.to_string())?.unwrap();
        let got_na = new_acc(&m).map_err(|e| e.to_string())?;
        let ok = close(got_aa, *aa, REPORT_TOL) && close(got_f, *f, REPORT_TOL) && close(got_na, *na, REPORT_TOL);
        pass &= ok;
        details.push(format!("{name} {got_aa:.3}/{got_f:.3}/{got_na:.3}"));
    }
    let mage = tables.iter().find(|t| t.method == "MAGE").unwrap().matrix().unwrap();
    let traj = trajectory(&mage);
    let want = [62.10, 55.96, 50.29, 50.40, 52.20, 49.58];
    let traj_ok = traj.len() == want.len() && traj.iter().zip(want).all(|(a, b)| close(*a, b, REPORT_TOL));
    pass &= traj_ok;
    details.push(format!(
        "trajectory {}",
        traj.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(",")
    ));
    Ok(Outcome::new(pass, details.join("; ")))
}

fn c2_forgetting_discrepancy() -> Check {
    let tables = reference_tables();
    let m = tables.iter().find(|t| t.method == "MAGE").unwrap().matrix().unwrap();
    let max_ref = forgetting(&m, ForgettingMode::MaxRef).map_err(|e| e.to_string())?.unwrap();
    let pass = close(max_ref, -14.41, 0.01) && !close(max_ref, 12.26, 0.01);
    Ok(Outcome::new(pass, format!("max-ref {max_ref:.4} vs reported 12.26")))
}

fn c3_fisher_oracle() -> Check {
    let mut rng = Rng::new(3);
    let (mut worst_diff, mut worst_mean) = (0.0f64, 0.0f64);
    for draw in 0..20 {
        let k = 2 + draw % 7;
        let logits: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
        let r = fisher_equals_neg_hessian_oracle(&logits).map_err(|e| e.to_string())?;
        worst_diff = worst_diff.max(r.max_abs_diff);
        worst_mean = worst_mean.max(r.max_abs_score_mean);
    }
    Ok(Outcome::new(
        worst_diff < 1e-10 && worst_mean < 1e-12,
        format!("max |F - (-H)| {worst_diff:.2e}, max |E[s]| {worst_mean:.2e}"),
    ))
}

fn c4_damping_oracle() -> Check {
    let mut rng = Rng::new(4);
    let (mut worst, mut min_gram) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let raw = Matrix::randn(5, 5, 1.0, &mut rng);
        let h = raw.add(&raw.transpose()).map_err(|e| e.to_string())?;
        let r = damping_eigen_oracle(&h, DEFAULT_LAMBDA).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_abs_diff);
        min_gram = min_gram.min(r.min_gram_eig);
    }
    Ok(Outcome::new(
        worst < 1e-10 && min_gram >= DEFAULT_LAMBDA,
        format!("max eigen shift error {worst:.2e}, min eig(HᵀH+λI) {min_gram:.3e}"),
    ))
}

/// Gives every adapter nonzero factors so all gradients are informative. The
/// scale keeps the loss near log V; much larger logits push central
/// differences into cancellation noise.
fn perturbed(mut m: ToyModel, seed: u64) -> ToyModel {
    let mut rng = Rng::new(seed);
    for name in m.tensor_names() {
        if matches!(name, TensorName::Up { .. } | TensorName::Head { .. }) {
            let t = m.tensor(&name).unwrap();
            let noise = Matrix::randn(t.rows(), t.cols(), 0.05, &mut rng);
            m.set_tensor(&name, noise).unwrap();
        }
    }
    m
}

fn c5_gradient_check() -> Check {
    let cfg = ModelConfig::default();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    // the two signatures together make all four adapters trainable
    for arch in [Archetype::Vqa, Archetype::Edit] {
        let task = mage_core::tasks::generate_task(arch, 10, 5, 11).map_err(|e| e.to_string())?;
        let sig = task.signature.clone();
        let mut m = perturbed(ToyModel::new(cfg.clone()).map_err(|e| e.to_string())?, 5);
        m.apply_mask(&Variant::FourSplit.freeze_mask(&sig).unwrap()).map_err(|e| e.to_string())?;
        let ex = &task.train[0];
        let (_, grads) = m.loss_and_grads(&ex.inputs, &sig, &ex.target).map_err(|e| e.to_string())?;
        for name in m.trainable_names() {
            let t = m.tensor(&name).unwrap().clone();
            let analytic = grads.get(&name).cloned().unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols()));
            let mut probe = m.clone();
            let r = finite_diff_check(
                |p| {
                    probe.set_tensor(&name, Matrix::new(t.rows(), t.cols(), p.to_vec()).unwrap()).unwrap();
                    probe.loss(&ex.inputs, &sig, &ex.target).unwrap()
                },
                t.data(),
                analytic.data(),
                1e-4,
            );
            checked += r.checked;
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, name.to_string());
            }
        }
    }
    Ok(Outcome::new(
        worst.0 < 1e-4,
        format!("{checked} coordinates, max relative error {:.2e} ({})", worst.0, worst.1),
    ))
}

fn c6_adapter_invariants() -> Check {
    let mut rng = Rng::new(6);
    let (d_in, d_out) = (12, 9);
    let base = Matrix::randn(d_out, d_in, 0.5, &mut rng);
    let x = Matrix::randn(d_in, 1, 1.0, &mut rng);
    let keys = [AdapterKey::GI, AdapterKey::GT, AdapterKey::EI, AdapterKey::ET];
    let fresh: Vec<LoraAdapter> = keys
        .iter()
        .map(|&k| LoraAdapter::init(k, d_in, d_out, 2, 32.0, &mut rng).unwrap())
        .collect();
    let zero_layer = MageLinear::new(base.clone(), fresh.clone()).map_err(|e| e.to_string())?;
    let identity_err = mage_forward(&zero_layer, &x).unwrap().max_abs_diff(&base.matmul(&x).unwrap()).unwrap();

    let mut trained = fresh;
    for a in &mut trained {
        a.up = Matrix::randn(d_out, 2, 0.4, &mut rng);
    }
    let layer = MageLinear::new(base, trained).map_err(|e| e.to_string())?;
    let dense_err = mage_forward(&layer, &x)
        .unwrap()
        .max_abs_diff(&layer.effective_weight().matmul(&x).unwrap())
        .unwrap();

    // frozen tensors across a full task: vqa then caption (text in, image out)
    let roster: Vec<TaskSpec> = [Archetype::Vqa, Archetype::Caption2Image]
        .iter()
        .enumerate()
        .map(|(i, &a)| mage_core::tasks::generate_task(a, 200, 50, i as u64).unwrap())
        .collect();
    let ids: Vec<String> = roster.iter().map(|t| t.id.clone()).collect();
    let cfg = TrainConfig {
        lr: 0.1,
        epochs: 1,
        ema: EmaPolicy::Pema,
        model: ModelConfig {
            alpha: 8.0,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let run = run_sequence(&cfg, &roster, &task_order("default", &ids).unwrap(), &RunOptions::default())
        .map_err(|e| e.to_string())?;
    let (before, after) = (&run.stages[0].checkpoint, &run.stages[1].checkpoint);
    let frozen = Variant::FourSplit
        .freeze_mask(&roster[1].signature)
        .unwrap()
        .frozen_adapters();
    let mut frozen_stable = true;
    let mut moved_trainable = false;
    for name in before.model.tensor_names() {
        let Some(key) = name.adapter_key() else { continue };
        let same_live = before.model.tensor(&name) == after.model.tensor(&name);
        let same_shadow = before.ema.as_ref().unwrap().get(&name) == after.ema.as_ref().unwrap().get(&name);
        if frozen.contains(&key) {
            frozen_stable &= same_live && same_shadow;
        } else {
            moved_trainable |= !same_live;
        }
    }

    // initialization equivalence and rank conservation
    let dims = ModelConfig::default();
    let models: Vec<ToyModel> = Variant::ALL
        .iter()
        .map(|&v| build_variant(v, 32, &dims).unwrap())
        .collect();
    let probe = &roster[0].test[0];
    let hidden: Vec<Matrix> = models
        .iter()
        .map(|m| m.hidden(&probe.inputs, &roster[0].signature).unwrap())
        .collect();
    let init_equal = hidden.windows(2).all(|w| w[0] == w[1])
        && models.windows(2).all(|w| {
            w[0].tensor(&TensorName::Embedding(Modality::Text)) == w[1].tensor(&TensorName::Embedding(Modality::Text))
                && w[0].tensor(&TensorName::Base { layer: 0 }) == w[1].tensor(&TensorName::Base { layer: 0 })
        });
    let ranks_ok = models.iter().all(|m| m.layers().iter().all(|l| l.total_rank() == 32))
        && build_variant(Variant::FourSplit, 30, &dims).is_err();

    let pass = identity_err <= 1e-12 && dense_err <= 1e-12 && frozen_stable && moved_trainable && init_equal && ranks_ok;
    Ok(Outcome::new(
        pass,
        format!(
            "identity {identity_err:.1e}, dense sum {dense_err:.1e}, frozen {:?} bit-exact {frozen_stable}, \
             init equal {init_equal}, rank conserved {ranks_ok}",
            frozen
        ),
    ))
}

fn c7_pema_contracts() -> Check {
    let values = [-1e3, -2.0, -1.0, -1e-13, 0.0, 1e-13, 1e-6, 0.5, 1.0, 3.0, 1e3];
    let mut total = true;
    for &g in &values {
        for &d in &values {
            for &h in &[1e-5, 1.0, 4.0 + 1e-5, 1e6] {
                let b = ema_weight(g, d, h, DEFAULT_EPS_DELTA);
                total &= (0.0..=1.0).contains(&b);
            }
        }
    }
    let degenerate = ema_weight(7.0, 5e-13, 1.0, DEFAULT_EPS_DELTA) == 1.0 && ema_weight(-3.0, 0.0, 1.0, DEFAULT_EPS_DELTA) == 1.0;

    let mut rng = Rng::new(7);
    let mut segment = true;
    for _ in 0..200 {
        let s0 = rng.normal();
        let t = rng.normal();
        let b = rng.uniform();
        let mut s = Matrix::filled(1, 1, s0);
        ema_update(&mut s, &Matrix::filled(1, 1, t), &Matrix::filled(1, 1, b)).unwrap();
        let v = s.get(0, 0);
        segment &= v >= s0.min(t) - 1e-15 && v <= s0.max(t) + 1e-15;
    }
    let mut s = Matrix::filled(1, 1, 3.0);
    ema_update(&mut s, &Matrix::filled(1, 1, 2.0), &Matrix::filled(1, 1, 1.0)).unwrap();
    let one = s.get(0, 0) == 2.0;
    ema_update(&mut s, &Matrix::filled(1, 1, 9.0), &Matrix::filled(1, 1, 0.0)).unwrap();
    let zero = s.get(0, 0) == 2.0;

    // stable EMA, w = 0.99, shadow 1 and θ = 2, 4, -1
    let model = ToyModel::new(ModelConfig {
        vocab_per_modality: 2,
        embed_dim: 1,
        hidden_dim: 1,
        total_rank: 4,
        max_output_len: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    let name = TensorName::Up {
        layer: 0,
        key: AdapterKey::GT,
    };
    let mut state = EmaState::new(&model, DEFAULT_LAMBDA, DEFAULT_EPS_DELTA).unwrap();
    state.shadow.insert(name, Matrix::filled(1, 1, 1.0));
    let mut m = model.clone();
    m.apply_mask(&derive_freeze_mask(&[Modality::Text].into_iter().collect(), Modality::Text).unwrap())
        .unwrap();
    for theta in [2.0, 4.0, -1.0] {
        m.set_tensor(&name, Matrix::filled(1, 1, theta)).unwrap();
        state.step_stable(&m, 0.99).unwrap();
    }
    let stable = state.shadow.get(&name).unwrap().get(0, 0);
    let stable_ok = close(stable, 1.019501, 1e-12);

    Ok(Outcome::new(
        total && degenerate && segment && one && zero && stable_ok,
        format!(
            "clamp total {total}, degenerate rule {degenerate}, segment {segment}, β=1 {one}, β=0 {zero}, \
             stable 3-step {stable:.6}"
        ),
    ))
}

// ---- experiments ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Method {
    FourSplitPema,
    FourSplitOff,
    SingleOff,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::FourSplitPema => "FourSplit+PEMA",
            Method::FourSplitOff => "FourSplit+Off",
            Method::SingleOff => "Single+Off",
        }
    }

    /// Every variant gets alpha equal to its per-adapter rank, so each
    /// adapter update has unit scale and the variants differ only in
    /// structure and freezing.
    fn config(self, seed: u64) -> TrainConfig {
        let (variant, ema) = match self {
            Method::FourSplitPema => (Variant::FourSplit, EmaPolicy::Pema),
            Method::FourSplitOff => (Variant::FourSplit, EmaPolicy::Off),
            Method::SingleOff => (Variant::Single, EmaPolicy::Off),
        };
        let total_rank = 32;
        TrainConfig {
            lr: 0.1,
            batch_size: 16,
            epochs: 4,
            ema,
            model: ModelConfig {
                variant,
                total_rank,
                alpha: (total_rank / variant.split_count()) as f64,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
        .with_seed(seed)
    }
}

struct Sweep {
    rosters: BTreeMap<u64, Vec<TaskSpec>>,
    runs: BTreeMap<(Method, &'static str, u64), RunRecord>,
}

fn roster(seed: u64) -> Vec<TaskSpec> {
    generate_roster(&RosterConfig {
        seed,
        ..RosterConfig::default()
    })
    .expect("default roster")
}

fn sweep() -> Result<Sweep, String> {
    let mut s = Sweep {
        rosters: SEEDS.iter().map(|&seed| (seed, roster(seed))).collect(),
        runs: BTreeMap::new(),
    };
    let plan: Vec<(Method, &'static str)> = vec![
        (Method::FourSplitPema, "default"),
        (Method::FourSplitOff, "default"),
        (Method::SingleOff, "default"),
        (Method::FourSplitPema, "reverse"),
        (Method::SingleOff, "reverse"),
        (Method::FourSplitPema, "alphabet"),
        (Method::SingleOff, "alphabet"),
    ];
    for (method, order_name) in plan {
        for &seed in &SEEDS {
            let tasks = &s.rosters[&seed];
            let ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
            let order = task_order(order_name, &ids).map_err(|e| e.to_string())?;
            let run = run_sequence(&method.config(seed), tasks, &order, &RunOptions::default())
                .map_err(|e| format!("{} {order_name} seed {seed}: {e}", method.label()))?;
            if !run.is_complete() {
                return Err("incomplete run".into());
            }
            s.runs.insert((method, order_name, seed), run);
        }
    }
    Ok(s)
}

fn per_seed(s: &Sweep, method: Method, order: &str, f: impl Fn(&RunRecord) -> f64) -> Vec<f64> {
    SEEDS.iter().map(|&seed| f(&s.runs[&(method, order, seed)])).collect()
}

fn diag_forgetting(r: &RunRecord) -> f64 {
    forgetting(&r.matrix, ForgettingMode::DiagRef).unwrap().unwrap()
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(",")
}

fn mean(v: &[f64]) -> f64 {
    mean_std(v).unwrap().0
}

fn paired_wins(lower: &[f64], higher: &[f64]) -> (usize, usize) {
    let gaps: Vec<f64> = lower.iter().zip(higher).map(|(a, b)| b - a).filter(|g| *g != 0.0).collect();
    (gaps.iter().filter(|g| **g > 0.0).count(), gaps.len())
}

fn c8_anti_forgetting(s: &Sweep) -> Check {
    let fp = per_seed(s, Method::FourSplitPema, "default", diag_forgetting);
    let fo = per_seed(s, Method::FourSplitOff, "default", diag_forgetting);
    let so = per_seed(s, Method::SingleOff, "default", diag_forgetting);
    let na_fp = per_seed(s, Method::FourSplitPema, "default", |r| new_acc(&r.matrix).unwrap());
    let na_so = per_seed(s, Method::SingleOff, "default", |r| new_acc(&r.matrix).unwrap());
    if fp.iter().chain(&fo).chain(&so).chain(&na_fp).any(|v| !v.is_finite()) {
        return Err("non-finite metric".into());
    }
    // a one-sided sign test at 5 pairs reaches p < 0.05 only with 5/5 wins
    let (w1, n1) = paired_wins(&fp, &fo);
    let (w2, n2) = paired_wins(&fo, &so);
    let p1 = if n1 == 0 { 1.0 } else { sign_test_p(w1, n1) };
    let p2 = if n2 == 0 { 1.0 } else { sign_test_p(w2, n2) };
    let order_ok = mean(&fp) < mean(&fo) && mean(&fo) < mean(&so) && p1 < 0.05 && p2 < 0.05;
    let plasticity_gap = mean(&na_so) - mean(&na_fp);
    let plastic_ok = plasticity_gap.abs() <= 5.0;
    Ok(Outcome::new(
        order_ok && plastic_ok,
        format!(
            "forgetting {}={:.2} [{}], {}={:.2} [{}], {}={:.2} [{}]; sign tests p={p1:.3} ({w1}/{n1}), p={p2:.3} \
             ({w2}/{n2}); New.ACC {:.2} vs {:.2} (gap {plasticity_gap:.2}, limit 5)",
            Method::FourSplitPema.label(),
            mean(&fp),
            fmt_values(&fp),
            Method::FourSplitOff.label(),
            mean(&fo),
            fmt_values(&fo),
            Method::SingleOff.label(),
            mean(&so),
            fmt_values(&so),
            mean(&na_fp),
            mean(&na_so),
        ),
    ))
}

fn c9_order_robustness(s: &Sweep) -> Check {
    let spread = |m: Method| {
        let means: Vec<f64> = ["default", "reverse", "alphabet"]
            .iter()
            .map(|o| mean(&per_seed(s, m, o, diag_forgetting)))
            .collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo, means)
    };
    let (sp_fp, m_fp) = spread(Method::FourSplitPema);
    let (sp_so, m_so) = spread(Method::SingleOff);
    if !sp_fp.is_finite() || !sp_so.is_finite() {
        return Err("non-finite spread".into());
    }
    Ok(Outcome::new(
        sp_fp <= sp_so,
        format!(
            "forgetting by order (default/reverse/alphabet) {} [{}] spread {sp_fp:.2}; {} [{}] spread {sp_so:.2}",
            Method::FourSplitPema.label(),
            fmt_values(&m_fp),
            Method::SingleOff.label(),
            fmt_values(&m_so)
        ),
    ))
}

fn c10_transfer(s: &Sweep) -> Check {
    // default order: vqa (text out), classify, caption2image (image out), ocr (text out), ...
    let first = Archetype::Vqa.as_str();
    let image_task = Archetype::Caption2Image.as_str();
    let text_task = Archetype::Ocr.as_str();
    let eval = |m: Method, trained_on: &str| -> Result<Vec<f64>, String> {
        SEEDS
            .iter()
            .map(|&seed| {
                cross_eval(&s.runs[&(m, "default", seed)], trained_on, first, &s.rosters[&seed])
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let so_text = eval(Method::SingleOff, text_task)?;
    let so_image = eval(Method::SingleOff, image_task)?;
    let fp_image = eval(Method::FourSplitPema, image_task)?;
    let recall = mean(&so_text) > mean(&so_image);
    let retention = mean(&fp_image) > mean(&so_image);
    Ok(Outcome::new(
        recall && retention,
        format!(
            "{first} under Single+Off after {text_task} {:.2} vs after {image_task} {:.2}; after {image_task}: \
             FourSplit+PEMA {:.2} vs Single+Off {:.2}",
            mean(&so_text),
            mean(&so_image),
            mean(&fp_image),
            mean(&so_image)
        ),
    ))
}

fn c11_error_taxonomy(s: &Sweep) -> Check {
    // partition over every prediction of one full run
    let run = &s.runs[&(Method::SingleOff, "default", 0)];
    let vocab = ModelConfig::default().vocab();
    let mut partition = true;
    let mut labelled = 0;
    for stage in &run.stages {
        for (task, records) in &stage.predictions {
            let labels = classify_errors(records, vocab).map_err(|e| e.to_string())?;
            let counts = LabelCounts::from_labels(labels.values());
            let test_size = s.rosters[&0].iter().find(|t| &t.id == task).unwrap().test_size;
            partition &= labels.len() == records.len() && counts.total() == test_size;
            labelled += counts.total();
        }
    }

    // set-difference formula on constructed fixtures
    let make = |n: usize, bad: &[usize], l: ErrorLabel| -> BTreeMap<String, ErrorLabel> {
        (0..n)
            .map(|i| (format!("x{i:03}"), if bad.contains(&i) { l } else { ErrorLabel::Correct }))
            .collect()
    };
    let fresh: Vec<usize> = (0..10).collect();
    let ten = error_metrics(
        &[make(500, &[], ErrorLabel::Correct), make(50, &[], ErrorLabel::Correct)],
        &[make(500, &fresh, ErrorLabel::Hallucination), make(50, &[], ErrorLabel::Correct)],
    )
    .map_err(|e| e.to_string())?
    .unwrap();
    let persistent = error_metrics(
        &[make(20, &[4], ErrorLabel::Hallucination), make(20, &[], ErrorLabel::Correct)],
        &[make(20, &[4], ErrorLabel::Hallucination), make(20, &[], ErrorLabel::Correct)],
    )
    .map_err(|e| e.to_string())?
    .unwrap();
    let formula = close(ten.hal, 2.0, 1e-12) && ten.iuf == 0.0 && ten.oth == 0.0 && persistent.hal == 0.0;
    Ok(Outcome::new(
        partition && formula,
        format!(
            "{labelled} labels, one per example {partition}; 10/500 new HAL -> {:.3}; persistent HAL -> {:.3}",
            ten.hal, persistent.hal
        ),
    ))
}

fn c12_determinism_and_resume() -> Check {
    let tasks: Vec<TaskSpec> = generate_roster(&RosterConfig {
        seed: 12,
        train_size: 300,
        test_size: 100,
        archetypes: vec![Archetype::Vqa, Archetype::Caption2Image, Archetype::Ocr],
        ..RosterConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    let order = task_order("default", &ids).map_err(|e| e.to_string())?;
    let cfg = Method::FourSplitPema.config(12);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = |name: &str| RunOptions {
        dir: Some(tmp.path().join(name)),
        stop_after: None,
    };
    let a = run_sequence(&cfg, &tasks, &order, &dir("a")).map_err(|e| e.to_string())?;
    let b = run_sequence(&cfg, &tasks, &order, &dir("b")).map_err(|e| e.to_string())?;
    let interrupted = RunOptions {
        stop_after: Some(1),
        ..dir("c")
    };
    let partial = run_sequence(&cfg, &tasks, &order, &interrupted).map_err(|e| e.to_string())?;
    let resumed = run_sequence(&cfg, &tasks, &order, &dir("c")).map_err(|e| e.to_string())?;
    let bytes = |name: &str| fs::read(tmp.path().join(name).join("matrix.json")).unwrap();
    let ckpt = |name: &str| Checkpoint::load(&tmp.path().join(name).join("checkpoints/stage-02.ckpt")).unwrap();
    let identical = bytes("a") == bytes("b") && a == b;
    let resume_ok = partial.stages.len() == 1 && bytes("a") == bytes("c") && resumed == a && ckpt("a") == ckpt("c");
    Ok(Outcome::new(
        identical && resume_ok,
        format!("repeat run bit-identical {identical}; resume after stage 1 equals uninterrupted {resume_ok}"),
    ))
}

fn main() -> ExitCode {
    let mut hard_failure = false;
    let mut report = |n: u32, title: &str, hard: bool, started: Instant, r: Check| {
        let secs = started.elapsed().as_secs_f64();
        match r {
            Ok(o) => {
                println!(
                    "criterion {n:>2} [{title}]: {} ({secs:.1}s) {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
                hard_failure |= hard && !o.pass;
            }
            Err(e) => {
                println!("criterion {n:>2} [{title}]: FAIL ({secs:.1}s) error: {e}");
                hard_failure = true;
            }
        }
    };
    let t = Instant::now();
    report(1, "metric reproduction", true, t, c1_metric_reproduction());
    let t = Instant::now();
    report(2, "forgetting formula discrepancy", true, t, c2_forgetting_discrepancy());
    let t = Instant::now();
    report(3, "Fisher equals negative expected Hessian", true, t, c3_fisher_oracle());
    let t = Instant::now();
    report(4, "damping shifts eigenvalues", true, t, c4_damping_oracle());
    let t = Instant::now();
    report(5, "gradient correctness", true, t, c5_gradient_check());
    let t = Instant::now();
    report(6, "adapter sum and freezing invariants", true, t, c6_adapter_invariants());
    let t = Instant::now();
    report(7, "PEMA unit contracts", true, t, c7_pema_contracts());

    let t = Instant::now();
    match sweep() {
        Ok(s) => {
            let secs = t.elapsed().as_secs_f64();
            println!("sweep: {} runs in {secs:.1}s", s.runs.len());
            let t = Instant::now();
            report(8, "anti-forgetting direction", false, t, c8_anti_forgetting(&s));
            let t = Instant::now();
            report(9, "order robustness", false, t, c9_order_robustness(&s));
            let t = Instant::now();
            report(10, "transfer structure", false, t, c10_transfer(&s));
            let t = Instant::now();
            report(11, "error taxonomy partition", true, t, c11_error_taxonomy(&s));
        }
        Err(e) => {
            for (n, title) in [
                (8, "anti-forgetting direction"),
                (9, "order robustness"),
                (10, "transfer structure"),
                (11, "error taxonomy partition"),
            ] {
                report(n, title, true, t, Err(format!("sweep failed: {e}")));
            }
        }
    }
    let t = Instant::now();
    report(12, "determinism and resume", true, t, c12_determinism_and_resume());

    if hard_failure {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
