//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured values and runtime; the process exits non-zero if any fails.
//!
//! `cargo test --test acceptance -- <substring>` runs only the criteria
//! whose name contains the substring.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensorframe::diffengine::Tape;
use tensorframe::equiharness::{model_equivariance, pipeline_equivariance, EquiReport};
use tensorframe::frames::{build_frame, FrameConfig};
use tensorframe::linalg3::random_rotation;
use tensorframe::molgraph::{build_graph, gen_synthetic, split_by_molecule, Split, SynthParams, ELEMENTS};
use tensorframe::svtnet::{matched_scalar_width, Batch, ModelConfig, Prepared};
use tensorframe::trainer::{batch_gradient, evaluate, per_atom_scale, train, Metric, MetricValues, TrainConfig};
use tensorframe::{Mat3, Model, Molecule, Vec3};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn emit(line: &str) {
    // Straight to the process stdout so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn desk_pair(scale: f64) -> [ModelConfig; 2] {
    let tens = ModelConfig { output_scale: scale, ..ModelConfig::desk_tensorial() };
    let cs = matched_scalar_width(&tens, tens.param_count());
    let scal = ModelConfig { output_scale: scale, ..ModelConfig::desk_scalar(cs) };
    [tens, scal]
}

fn equi_models() -> (Vec<Molecule>, [Model; 2]) {
    let mols = gen_synthetic::<f64>(50, 1001, &SynthParams::default()).unwrap();
    let scale = per_atom_scale(&mols.iter().collect::<Vec<_>>()).unwrap();
    let [t, s] = desk_pair(scale);
    (mols, [Model::init(t, 1).unwrap(), Model::init(s, 1).unwrap()])
}

fn model_equivariance_bound() -> Outcome {
    let (mols, models) = equi_models();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &models {
        let rep = model_equivariance(m, &mols, 64, 7).unwrap();
        pass &= rep.mean <= 1e-9;
        parts.push(format!("{} {:.2e} ± {:.2e}", m.config.variant, rep.mean, rep.std));
    }
    outcome(pass, format!("mean rel_frob {} (bound 1e-9, 50 molecules × 64 rotations)", parts.join(", ")))
}

fn clean_mean(rep: &EquiReport) -> (Option<f64>, usize) {
    let clean: Vec<f64> =
        rep.molecules.iter().filter(|m| m.frames.is_clean()).flat_map(|m| m.rel.iter().copied()).collect();
    let n = rep.molecules.iter().filter(|m| m.frames.is_clean()).count();
    ((!clean.is_empty()).then(|| clean.iter().sum::<f64>() / clean.len() as f64), n)
}

fn pipeline_equivariance_ordering() -> Outcome {
    let (mols, models) = equi_models();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &models {
        let model_rep = model_equivariance(m, &mols, 64, 7).unwrap();
        let pipe = pipeline_equivariance(m, &mols, 64, 7).unwrap();
        let (clean, n_clean) = clean_mean(&pipe);
        let clean_ok = clean.is_some_and(|c| c <= 1e-6);
        let ordered = pipe.mean >= model_rep.mean;
        pass &= clean_ok && ordered;
        parts.push(format!(
            "{}: clean {} on {n_clean} molecules, pipeline {:.2e} ≥ model {:.2e} {}",
            m.config.variant,
            clean.map_or("n/a".into(), |c| format!("{c:.2e}")),
            pipe.mean,
            model_rep.mean,
            if ordered { "yes" } else { "no" }
        ));
    }
    outcome(pass, format!("{} (clean bound 1e-6)", parts.join("; ")))
}

fn loss_at(model: &Model, preps: &[&Prepared<f64>]) -> f64 {
    batch_gradient(model, preps, Metric::Tensor).unwrap().0
}

/// Central differences on sampled entries plus one random unit direction
/// per named parameter; norm-wise relative error over those probes.
fn fd_worst(model: &Model, mols: &[Molecule], rng: &mut ChaCha8Rng) -> (f64, String, usize) {
    let h = 1e-5;
    let preps: Vec<Prepared<f64>> = mols.iter().map(|m| model.prepare(m).unwrap()).collect();
    let refs: Vec<&Prepared<f64>> = preps.iter().collect();
    let (_, grads) = batch_gradient(model, &refs, Metric::Tensor).unwrap();
    let mut worst = (0.0, String::new(), 0);
    let mut probe = model.clone();
    for (k, (name, p)) in model.params.iter().enumerate() {
        let n = p.data.len();
        let picks: Vec<usize> = sample(rng, n, n.min(3)).into_vec();
        // Unit length, so the step along it is h like the per-entry probes.
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = dir.iter().map(|u| u * u).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|u| *u /= len);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut eval = |delta: &dyn Fn(&mut [f64], f64)| {
            let base = p.data.clone();
            delta(&mut probe.params.get_mut(name).unwrap().data, h);
            let up = loss_at(&probe, &refs);
            probe.params.get_mut(name).unwrap().data.copy_from_slice(&base);
            delta(&mut probe.params.get_mut(name).unwrap().data, -h);
            let down = loss_at(&probe, &refs);
            probe.params.get_mut(name).unwrap().data.copy_from_slice(&base);
            (up - down) / (2.0 * h)
        };
        for &e in &picks {
            numeric.push(eval(&|d: &mut [f64], s: f64| d[e] += s));
            analytic.push(grads[k][e]);
        }
        numeric.push(eval(&|d: &mut [f64], s: f64| d.iter_mut().zip(&dir).for_each(|(x, u)| *x += s * u)));
        analytic.push(grads[k].iter().zip(&dir).map(|(g, u)| g * u).sum());

        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        if rel >= worst.0 {
            worst.0 = rel;
            worst.1 = name.to_string();
        }
        worst.2 += 1;
    }
    worst
}

fn gradient_check() -> Outcome {
    let mols = gen_synthetic::<f64>(2, 303, &SynthParams::default()).unwrap();
    let scale = per_atom_scale(&mols.iter().collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let mut pass = true;
    let mut parts = Vec::new();
    for cfg in desk_pair(scale) {
        let model = Model::init(cfg, 305).unwrap();
        let (rel, name, count) = fd_worst(&model, &mols, &mut rng);
        pass &= rel <= 1e-5;
        parts.push(format!("{}: {count} parameters, worst {rel:.2e} at {name}", model.config.variant));
    }
    outcome(pass, format!("{} (bound 1e-5, h = 1e-5)", parts.join("; ")))
}

fn grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 1048576.0).round() / 1048576.0
}

fn frame_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = FrameConfig::default();
    let (mut orth, mut det, mut equi) = (0.0f64, 0.0f64, 0.0f64);
    let (mut translation_breaks, mut clean) = (0, 0);
    for _ in 0..1000 {
        let k = rng.gen_range(1..=8);
        let mut z = vec![ELEMENTS[rng.gen_range(0..ELEMENTS.len())]];
        let mut pos = vec![Vec3::zero()];
        while pos.len() <= k {
            let p = Vec3::new(grid(&mut rng, -2.3, 2.3), grid(&mut rng, -2.3, 2.3), grid(&mut rng, -2.3, 2.3));
            if p.norm() >= 0.5 && p.norm() <= 4.0 {
                pos.push(p);
                z.push(ELEMENTS[rng.gen_range(0..ELEMENTS.len())]);
            }
        }
        let mol = Molecule::new("nb", "c", z, pos, None).unwrap();
        let f = build_frame(&mol, &build_graph(&mol, 4.0).unwrap(), 0, &cfg);
        orth = orth.max(f.f.orthonormality_error());
        det = det.max((f.f.det() - 1.0).abs());

        let shift = Vec3::new(grid(&mut rng, -8.0, 8.0), grid(&mut rng, -8.0, 8.0), grid(&mut rng, -8.0, 8.0));
        let moved = mol.translated(shift);
        let g = build_frame(&moved, &build_graph(&moved, 4.0).unwrap(), 0, &cfg);
        if g.f != f.f || g.degenerate != f.degenerate || g.fallback != f.fallback {
            translation_breaks += 1;
        }

        if f.is_clean() {
            clean += 1;
            let r: Mat3 = random_rotation(&mut rng);
            let turned = mol.rotated(&r);
            let h = build_frame(&turned, &build_graph(&turned, 4.0).unwrap(), 0, &cfg);
            equi = equi.max((h.f - r * f.f).max_abs());
        }
    }
    let pass = orth <= 1e-12 && det <= 1e-10 && translation_breaks == 0 && equi <= 1e-9;
    outcome(
        pass,
        format!(
            "1000 neighbourhoods: orthonormality {orth:.2e} (≤1e-12), |det−1| {det:.2e} (≤1e-10), \
             translation mismatches {translation_breaks} (bitwise), rotation {equi:.2e} on {clean} clean frames (≤1e-9)"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ordering_reproduction() -> Outcome {
    // Molecules up to 12 atoms keep six 300-epoch runs on one core inside the
    // runtime budget.
    let params = SynthParams { max_atoms: 12, ..SynthParams::default() };
    let mols = gen_synthetic::<f64>(500, 505, &params).unwrap();
    let split = split_by_molecule(&mols, 506, [0.8, 0.1, 0.1]).unwrap();
    let (tr, va, te) = (split.select(&mols, Split::Train), split.select(&mols, Split::Val), split.select(&mols, Split::Test));
    let pair = desk_pair(per_atom_scale(&tr).unwrap());
    let counts = [pair[0].param_count(), pair[1].param_count()];
    let matched = (counts[1] as f64 / counts[0] as f64 - 1.0).abs() <= 0.1;

    let mut results = [Vec::new(), Vec::new()];
    for seed in 0..3u64 {
        for (k, cfg) in pair.iter().enumerate() {
            let tc = TrainConfig { epochs: 300, batch_size: 32, lr: 1e-4, loss: Metric::Tensor, seed, eval_every: 10, ..Default::default() };
            let out = train(Model::init(cfg.clone(), seed).unwrap(), &tc, &tr, &va, |_| {}).unwrap();
            let mae = evaluate(&out.best, &te, Some(Split::Test)).unwrap().mae.tensor;
            results[k].push(mae);
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    let (mt, ms) = (median(results[0].clone()), median(results[1].clone()));
    outcome(
        matched && mt <= ms,
        format!(
            "test tensor MAE median tensorial {mt:.4} ({}) vs scalar {ms:.4} ({}); params {} vs {} (≤10% apart: {matched})",
            fmt(&results[0]),
            fmt(&results[1]),
            counts[0],
            counts[1]
        ),
    )
}

fn overfit_sanity() -> Outcome {
    let mols = gen_synthetic::<f64>(4, 99, &SynthParams::default()).unwrap();
    let refs: Vec<&Molecule> = mols.iter().collect();
    let cfg = ModelConfig { output_scale: per_atom_scale(&refs).unwrap(), ..ModelConfig::desk_tensorial() };
    let model = Model::init(cfg, 0).unwrap();
    let initial = evaluate(&model, &refs, None).unwrap().mae.tensor;
    // One full batch per epoch: 2000 epochs are 2000 optimizer steps, and
    // each history entry is the train MAE before that step.
    let tc = TrainConfig { epochs: 2000, batch_size: 4, lr: 2e-4, loss: Metric::Tensor, ..Default::default() };
    let out = train(model, &tc, &refs, &[], |_| {}).unwrap();
    let last = evaluate(&out.last, &refs, None).unwrap().mae.tensor;
    let best = out.history.iter().map(|r| r.train_loss).fold(last, f64::min);
    outcome(
        best < 0.01 * initial,
        format!(
            "train tensor MAE {initial:.3} → lowest {best:.4} ({:.3}% of initial, bound 1%), after step 2000 {last:.4} ({:.3}%)",
            100.0 * best / initial,
            100.0 * last / initial
        ),
    )
}

fn parameter_counts() -> Outcome {
    let t = ModelConfig::paper_tensorial().param_count();
    let s = ModelConfig::paper_scalar().param_count();
    let dt = t as f64 / 5_477_145.0 - 1.0;
    let ds = s as f64 / 5_471_127.0 - 1.0;
    outcome(
        dt.abs() <= 0.05 && ds.abs() <= 0.05,
        format!("tensorial {t} ({:+.2}% of 5477145), scalar {s} ({:+.2}% of 5471127), bound ±5%", 100.0 * dt, 100.0 * ds),
    )
}

fn random_three_atoms(rng: &mut ChaCha8Rng, k: usize) -> Molecule {
    loop {
        let pos: Vec<Vec3> =
            (0..3).map(|_| Vec3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5))).collect();
        let ok = (0..3).all(|i| ((i + 1)..3).all(|j| (pos[i] - pos[j]).norm() >= 0.7));
        if ok {
            let z = (0..3).map(|_| ELEMENTS[rng.gen_range(0..ELEMENTS.len())]).collect();
            return Molecule::new(format!("tri{k}"), "c", z, pos, None).unwrap();
        }
    }
}

fn rows_of(t: &Tape<f64>, v: tensorframe::diffengine::Var) -> Vec<Vec<f64>> {
    let (_, c) = t.shape(v);
    t.value(v).chunks(c).map(<[f64]>::to_vec).collect()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let model = Model::init(ModelConfig::desk_tensorial(), 809).unwrap();
    let cfg = model.config.clone();
    let (mut layer_err, mut metric_err) = (0.0f64, 0.0f64);
    for k in 0..10 {
        let mol = random_three_atoms(&mut rng, k);
        let prep = model.prepare(&mol).unwrap();
        let batch = Batch::single(&prep);
        let pos: Vec<[f64; 3]> = mol.positions.iter().map(|p| p.to_array()).collect();
        let frames: Vec<common::M3> = prep.frames.iter().map(|f| f.m).collect();
        let mut rand_rows = |c: usize| (0..3 * c).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (sd, vd, td) = (rand_rows(cfg.cs), rand_rows(3 * cfg.cv), rand_rows(9 * cfg.ct));

        let mut t = Tape::new();
        let s0 = t.constant(3, cfg.cs, sd).unwrap();
        let v0 = t.constant(3, 3 * cfg.cv, vd).unwrap();
        let t0 = t.constant(3, 9 * cfg.ct, td).unwrap();
        let layer = 1 + k % (cfg.layers - 1);
        let s1 = model.scalar_layer(&mut t, &batch, layer, s0).unwrap();
        let v1 = model.vector_layer(&mut t, &batch, layer, s1, v0).unwrap();
        let t1 = model.tensor_layer(&mut t, &batch, layer, s1, t0).unwrap();

        let want_s = common::scalar_layer(&model.params, layer, &rows_of(&t, s0), &pos, cfg.cutoff);
        let s_rows = rows_of(&t, s1);
        let want_v = common::mixing_layer(&model.params, layer, 3, &s_rows, &rows_of(&t, v0), &frames, &pos, cfg.cutoff);
        let want_t = common::mixing_layer(&model.params, layer, 9, &s_rows, &rows_of(&t, t0), &frames, &pos, cfg.cutoff);
        layer_err = layer_err
            .max(max_diff(&s_rows, &want_s))
            .max(max_diff(&rows_of(&t, v1), &want_v))
            .max(max_diff(&rows_of(&t, t1), &want_t));

        let pred = Mat3::from_slice(&(0..9).map(|_| rng.gen_range(-20.0..20.0)).collect::<Vec<_>>()).symmetrized();
        let truth = Mat3::from_slice(&(0..9).map(|_| rng.gen_range(-20.0..20.0)).collect::<Vec<_>>()).symmetrized();
        let got = MetricValues::between(&pred, &truth).as_array();
        let want = common::metrics(&pred.m, &truth.m);
        for (a, b) in got.iter().zip(want) {
            metric_err = metric_err.max((a - b).abs());
        }
    }
    outcome(
        layer_err <= 1e-12 && metric_err <= 1e-12,
        format!("10 three-atom molecules: layers max |Δ| {layer_err:.2e}, metrics max |Δ| {metric_err:.2e} (bound 1e-12)"),
    )
}

fn determinism() -> Outcome {
    let mols = gen_synthetic::<f64>(60, 909, &SynthParams::default()).unwrap();
    let split = split_by_molecule(&mols, 910, [0.8, 0.1, 0.1]).unwrap();
    let (tr, va) = (split.select(&mols, Split::Train), split.select(&mols, Split::Val));
    let cfg = ModelConfig { output_scale: per_atom_scale(&tr).unwrap(), ..ModelConfig::desk_tensorial() };
    let tc = TrainConfig { epochs: 4, batch_size: 8, lr: 1e-3, seed: 911, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let out = pool.install(|| train(Model::init(cfg.clone(), 912).unwrap(), &tc, &tr, &va, |_| {})).unwrap();
        let h = dir.path().join(format!("history{run}.tsv"));
        let c = dir.path().join(format!("model{run}.ckpt"));
        std::fs::write(&h, out.history_text()).unwrap();
        out.checkpoint(&tc).save(&c).unwrap();
        files.push((std::fs::read(&h).unwrap(), std::fs::read(&c).unwrap()));
    }
    let same_history = files[0].0 == files[1].0;
    let same_ckpt = files[0].1 == files[1].1;
    outcome(
        same_history && same_ckpt,
        format!(
            "two single-thread runs: history identical {same_history} ({} bytes), checkpoint identical {same_ckpt} ({} bytes)",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "model equivariance", budget: secs(120), run: model_equivariance_bound },
        Criterion { id: 2, name: "pipeline equivariance", budget: secs(180), run: pipeline_equivariance_ordering },
        Criterion { id: 3, name: "gradient check", budget: secs(300), run: gradient_check },
        Criterion { id: 4, name: "frame properties", budget: secs(30), run: frame_properties },
        Criterion { id: 5, name: "ordering reproduction", budget: secs(3600), run: ordering_reproduction },
        Criterion { id: 6, name: "overfit sanity", budget: secs(300), run: overfit_sanity },
        Criterion { id: 7, name: "parameter counts", budget: secs(1), run: parameter_counts },
        Criterion { id: 8, name: "oracle equivalence", budget: secs(10), run: oracle_equivalence },
        Criterion { id: 9, name: "determinism", budget: secs(300), run: determinism },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = o.pass && in_time;
        emit(&format!(
            "acceptance {} {}: {} | {} | {:.1} s of {} s{}",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            o.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_time { "" } else { " (over budget)" }
        ));
        if !pass {
            failed.push(c.id);
        }
    }
    emit(&format!("acceptance summary: {}/{ran} passed", ran - failed.len()));
    if !failed.is_empty() {
        emit(&format!("acceptance failed: {failed:?}"));
        std::process::exit(1);
    }
}
