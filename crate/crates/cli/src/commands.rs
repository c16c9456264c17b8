use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use tensorframe::diffengine::Checkpoint;
use tensorframe::equiharness::{self, Mode};
use tensorframe::frames::{frames_for_molecule, FrameConfig};
use tensorframe::molgraph::{build_graph, gen_synthetic, read_dataset, split_by_molecule, write_dataset, Split, SynthParams};
use tensorframe::svtnet::{HiddenWidth, ModelConfig, Variant};
use tensorframe::trainer::{evaluate, per_atom_scale, train, TrainConfig};
use tensorframe::{Model, Molecule};

use crate::args::{Cli, Command, EquiArgs, EvalArgs, GenArgs, InspectArgs, SplitSel, TrainArgs};
use crate::{UsageError, Verdict};

const FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

pub fn run(cli: &Cli) -> anyhow::Result<Verdict> {
    match &cli.command {
        Command::GenSynthetic(a) => gen(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::CheckEquivariance(a) => equi_cmd(cli, a),
        Command::InspectFrames(a) => inspect_cmd(cli, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<Vec<Molecule>> {
    let path = cli.data_path(path);
    let mols = read_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))?;
    if mols.is_empty() {
        bail!("dataset {} has no records", path.display());
    }
    Ok(mols)
}

fn load_model(path: &Path) -> anyhow::Result<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = Model::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok((model, ck))
}

fn gen(cli: &Cli, a: &GenArgs) -> anyhow::Result<Verdict> {
    if a.min_atoms == 0 || a.min_atoms > a.max_atoms {
        return Err(usage(format!("need 1 ≤ --min-atoms ≤ --max-atoms, got {} and {}", a.min_atoms, a.max_atoms)));
    }
    let params = SynthParams { min_atoms: a.min_atoms, max_atoms: a.max_atoms, ..SynthParams::default() };
    let mols = gen_synthetic::<f64>(a.n, a.seed, &params)?;
    let out = cli.data_path(&a.out);
    write_dataset(&out, &mols).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} records to {}", mols.len(), out.display());
    Ok(Verdict::Ok)
}

fn model_config(a: &TrainArgs) -> anyhow::Result<ModelConfig> {
    let (cs, cv, ct) = match a.model {
        Variant::Tensorial => (a.cs.unwrap_or(128), a.cv.unwrap_or(4), a.ct.unwrap_or(32)),
        Variant::ScalarBaseline => (a.cs.unwrap_or(331), a.cv.unwrap_or(0), a.ct.unwrap_or(0)),
    };
    let cfg = ModelConfig {
        variant: a.model,
        layers: a.layers,
        cs,
        cv,
        ct,
        cutoff: a.cutoff,
        hidden: HiddenWidth::Auto,
        output_scale: a.output_scale.unwrap_or(1.0),
        ..ModelConfig::desk_tensorial()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> anyhow::Result<Verdict> {
    let mut cfg = model_config(a)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        loss: a.loss,
        seed: a.seed,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;

    let mols = load(cli, &a.data)?;
    if let Some(m) = mols.iter().find(|m| m.polarizability.is_none()) {
        bail!("molecule `{}` ({}) has no polarizability label; training needs labels", m.molecule_id, m.conformer_id);
    }
    let split = split_by_molecule(&mols, a.split_seed, FRACTIONS)?;
    let train_set = split.select(&mols, Split::Train);
    let val_set = split.select(&mols, Split::Val);
    if a.output_scale.is_none() {
        cfg.output_scale = per_atom_scale(&train_set)?;
    }

    let model = Model::init(cfg, a.seed)?;
    let n_params = model.param_count();
    let outcome = train(model, &tc, &train_set, &val_set, |r| {
        let val = r.val.map_or("-".to_string(), |v| format!("{:e}", v.get(tc.loss)));
        eprintln!("epoch {}\ttrain {:e}\tval {val}", r.epoch, r.train_loss);
    })?;

    let mut ck = outcome.checkpoint(&tc);
    ck.config.push(("split.seed".into(), a.split_seed.to_string()));
    ck.save(&a.out_ckpt).with_context(|| format!("writing checkpoint {}", a.out_ckpt.display()))?;
    if let Some(h) = &a.history {
        std::fs::write(h, outcome.history_text()).with_context(|| format!("writing history {}", h.display()))?;
    }
    println!(
        "trained {} model: params={} molecules(train/val)={}/{} epochs={} steps={} best_epoch={} output_scale={:e}",
        a.model,
        n_params,
        train_set.len(),
        val_set.len(),
        a.epochs,
        outcome.steps,
        outcome.best_epoch,
        outcome.best.config.output_scale
    );
    Ok(Verdict::Ok)
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> anyhow::Result<Verdict> {
    let (model, ck) = load_model(&a.ckpt)?;
    let mols = load(cli, &a.data)?;
    let (selected, split) = match a.split {
        SplitSel::All => (mols.iter().collect::<Vec<_>>(), None),
        SplitSel::One(s) => {
            let seed = match (a.split_seed, ck.config_value("split.seed")) {
                (Some(seed), _) => seed,
                (None, Some(v)) => v.parse().with_context(|| format!("checkpoint split.seed `{v}`"))?,
                (None, None) => 0,
            };
            (split_by_molecule(&mols, seed, FRACTIONS)?.select(&mols, s), Some(s))
        }
    };
    if selected.is_empty() {
        bail!("split `{}` of {} is empty", a.split_name(), a.data.display());
    }
    let report = evaluate(&model, &selected, split)?;
    print!("{}", report.table());
    Ok(Verdict::Ok)
}

impl EvalArgs {
    fn split_name(&self) -> &'static str {
        match self.split {
            SplitSel::All => "all",
            SplitSel::One(s) => s.name(),
        }
    }
}

fn equi_cmd(cli: &Cli, a: &EquiArgs) -> anyhow::Result<Verdict> {
    if a.rotations == 0 {
        return Err(usage("--rotations must be at least 1"));
    }
    let threshold = a.threshold.unwrap_or(match a.mode {
        Mode::Model => 1e-6,
        Mode::Pipeline => 1e-3,
    });
    let (model, _) = load_model(&a.ckpt)?;
    let mols = load(cli, &a.data)?;
    let report = match a.mode {
        Mode::Model => equiharness::model_equivariance(&model, &mols, a.rotations, a.seed)?,
        Mode::Pipeline => equiharness::pipeline_equivariance(&model, &mols, a.rotations, a.seed)?,
    };
    print!("{}", report.to_text());
    let pass = report.mean < threshold;
    println!("threshold\t{threshold:.6e}\t{}", if pass { "pass" } else { "fail" });
    Ok(if pass { Verdict::Ok } else { Verdict::ThresholdFailed })
}

fn inspect_cmd(cli: &Cli, a: &InspectArgs) -> anyhow::Result<Verdict> {
    if !(a.cutoff > 0.0 && a.cutoff.is_finite()) {
        return Err(usage("--cutoff must be positive"));
    }
    let mols = load(cli, &a.data)?;
    let mol = mols
        .iter()
        .find(|m| m.molecule_id == a.mol_id && a.conformer.as_ref().is_none_or(|c| *c == m.conformer_id))
        .ok_or_else(|| anyhow::anyhow!("no molecule `{}` in {}", a.mol_id, a.data.display()))?;
    let graph = build_graph(mol, a.cutoff)?;
    let (frames, summary) = frames_for_molecule(mol, &graph, &FrameConfig::default());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# frames molecule={} conformer={} atoms={} cutoff={}",
        mol.molecule_id,
        mol.conformer_id,
        mol.n_atoms(),
        a.cutoff
    );
    let _ = writeln!(
        s,
        "# atom\tZ\tneighbors\tF (row-major, columns are local x y z)\teigenvalues (ascending)\tmu_norm\tdegenerate\tfallback"
    );
    for (i, f) in frames.iter().enumerate() {
        let fl: Vec<String> = f.f.to_flat().iter().map(|v| format!("{v:.16e}")).collect();
        let ev: Vec<String> = f.eigenvalues.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(
            s,
            "{i}\t{}\t{}\t{}\t{}\t{:.16e}\t{}\t{}",
            mol.atomic_numbers[i],
            graph.neighbors[i].len(),
            fl.join(","),
            ev.join(","),
            f.mu_norm,
            f.degenerate,
            f.fallback.name()
        );
    }
    let _ = writeln!(
        s,
        "# summary degenerate={} sign_unstable={} x_parallel_z={} mu_small={} isolated={}",
        summary.degenerate, summary.sign_unstable, summary.x_parallel_z, summary.mu_small, summary.isolated
    );
    print!("{s}");
    Ok(Verdict::Ok)
}
