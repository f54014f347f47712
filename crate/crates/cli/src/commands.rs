//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};
use toga::embedbank::{gen_synthetic as generate, load_bank, sample_episode, save_bank, SyntheticSpec};
use toga::student::{accuracy, load_student, save_student};
use toga::trainer::{
    query_logits, run_ablation, select_hyperparameters, train as run_training, write_metrics_csv,
    write_summary_json, Arm, Checkpoint, SearchGrid, TrainConfig, ViewSet,
};
use toga::Result;

use crate::args::{AblateArgs, EvalArgs, ExportArgs, GenArgs, TrainArgs, TrainFlags, ViewsArg};

pub fn gen_synthetic(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        classes: a.classes,
        dim: a.dim,
        patches: a.patches,
        foreground: a.foreground,
        sigma_f: a.sigma_f,
        sigma_b: a.sigma_b,
        sigma_t: a.sigma_t,
        images_per_class: a.images_per_class,
        seed: a.seed,
    };
    let bank = generate(&spec)?;
    save_bank(&bank, &a.out)?;
    let digest = Sha256::digest(fs::read(&a.out)?);
    println!("sha256 {}  {}", hex::encode(digest), a.out.display());
    Ok(())
}

/// Config file (or defaults) with every given flag applied on top.
pub fn resolve_config(f: &TrainFlags) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &f.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:ident => $($field:tt)+) => {
            if let Some(v) = f.$flag {
                c.$($field)+ = v;
            }
        };
    }
    set!(lr => lr);
    set!(epochs => epochs);
    set!(weight_decay => adamw.weight_decay);
    set!(adam_beta1 => adamw.beta1);
    set!(adam_beta2 => adamw.beta2);
    set!(adam_eps => adamw.eps);
    set!(alpha => loss.alpha);
    set!(beta => cache_beta);
    set!(delta => loss.delta);
    set!(lambda => loss.lambda);
    set!(gamma => loss.gamma);
    set!(tau => loss.tau);
    set!(hidden => teacher.hidden);
    set!(layers => teacher.layers);
    set!(heads => teacher.heads);
    set!(graph_layers => teacher.graph_layers);
    set!(graph_heads => teacher.graph_heads);
    set!(keep => teacher.keep);
    set!(use_mgt => teacher.use_mgt);
    set!(use_text_nodes => teacher.use_text_nodes);
    set!(gate_filter => teacher.gate_filter);
    set!(jitter => jitter);
    if let Some(v) = f.views {
        c.views = match v {
            ViewsArg::Multiscale => ViewSet::Multiscale,
            ViewsArg::Grid2x2 => ViewSet::Grid2x2,
            ViewsArg::Grid3x3 => ViewSet::Grid3x3,
        };
    }
    c.validate()?;
    Ok(c)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.flags)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let bank = load_bank(&a.bank)?;
    let episode = sample_episode(&bank, a.shots, cfg.seed)?;
    if a.search {
        let found = select_hyperparameters(&bank, &episode, &cfg, &SearchGrid::default())?;
        eprintln!(
            "search: alpha={} beta={} (validation accuracy {:.4})",
            found.config.loss.alpha, found.config.cache_beta, found.validation_accuracy
        );
        cfg = found.config;
    }
    let outcome = run_training(&bank, &episode, &cfg)?;
    save_student(&outcome.model, &a.out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| sibling(&a.out, ".metrics.csv"));
    let summary = a.summary.clone().unwrap_or_else(|| sibling(&a.out, ".summary.json"));
    write_metrics_csv(&metrics, &outcome.metrics.epochs)?;
    write_summary_json(&summary, &outcome.metrics.summary)?;
    if let Some(path) = &a.checkpoint {
        Checkpoint { config: cfg, student: outcome.model, teacher: outcome.teacher }.save(path)?;
    }
    let s = &outcome.metrics.summary;
    println!("mode {}", s.mode);
    println!("accuracy {}", s.accuracy);
    if let Some(t) = s.teacher_accuracy {
        println!("teacher_accuracy {t}");
    }
    if let Some(p) = s.filter_precision {
        println!("filter_precision {p}");
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut model = load_student(&a.student)?;
    if let Some(alpha) = a.alpha {
        model.alpha = alpha;
        model.validate()?;
    }
    let bank = load_bank(&a.bank)?;
    let ids = bank.query_ids();
    let logits = query_logits(&model, &bank, &ids)?;
    let labels: Vec<usize> = ids.iter().map(|&i| bank.label(i)).collect();
    let acc = accuracy(&logits, &labels);
    if let Some(path) = &a.logits {
        let rows: Vec<&[f64]> = (0..logits.rows()).map(|r| logits.row(r)).collect();
        let doc = json!({ "accuracy": acc, "query_ids": ids, "query_logits": rows });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    println!("accuracy {acc}");
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let arms = a.arms.iter().map(|s| s.parse::<Arm>()).collect::<Result<Vec<_>>>()?;
    let base = resolve_config(&a.flags)?;
    let bank = load_bank(&a.bank)?;
    let table = run_ablation(&bank, &a.shots, &arms, &a.seeds, &base, a.jobs)?;
    if let Some(dir) = &a.runs_dir {
        fs::create_dir_all(dir)?;
        for (si, k) in table.shots.iter().enumerate() {
            for (ai, arm) in table.arms.iter().enumerate() {
                for (ei, seed) in table.seeds.iter().enumerate() {
                    let cell = &table.cells[si][ai][ei];
                    let doc = json!({ "arm": arm, "shots": k, "seed": seed, "result": cell });
                    let path = dir.join(format!("{arm}_k{k}_s{seed}.json"));
                    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
                }
            }
        }
    }
    let csv = table.to_csv();
    match &a.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    save_student(&ck.student, &a.out)?;
    let size = fs::metadata(&a.out)?.len();
    println!("wrote {} ({size} bytes)", a.out.display());
    Ok(())
}
