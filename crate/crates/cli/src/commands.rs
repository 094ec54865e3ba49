//! Subcommand bodies. Each one validates everything it can before doing
//! real work, then writes its outputs under the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gmcd::checkpoint::Checkpoint;
use gmcd::codec::{format_dataset, parse_dataset, Alphabet, Separator};
use gmcd::geometry::pack_sphere;
use gmcd::metrics::{
    file_budget, mean_std, pattern_correlation, poissonized_empirical, select_patterns, ListSource, MetricsReport,
};
use gmcd::rng::{derive_seed, seeded};
use gmcd::sampling::{entropy_csv, sample_many, SampleRequest};
use gmcd::synthdata::{generate_splits, split_sizes, DatasetManifest, GroundTruth, SplitInfo};
use gmcd::training::{fit_from, FitEvent, TrainState};
use gmcd::{CategorySequence, GmcdError, PackingResult, Predictor, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{seed_tag, RunConfig};

/// Effective configuration plus where outputs go.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub trials: usize,
    pub entropy: bool,
}

impl Context {
    pub fn new(mut cfg: RunConfig, out: Option<PathBuf>, trials: Option<usize>, entropy: bool) -> Result<Self> {
        cfg.apply_seed();
        let trials = trials.unwrap_or(cfg.evaluation.trials);
        if trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out, trials, entropy })
    }

    fn provenance(&self) -> Value {
        json!({ "config_hash": self.hash, "seed": self.cfg.seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let text = serde_json::to_string_pretty(&json!({ "provenance": self.provenance(), "config": self.cfg }))?;
        std::fs::write(self.path("run_config.json"), text + "\n")?;
        Ok(())
    }

    /// JSON output with the provenance object inlined.
    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        match &mut v {
            Value::Object(map) => {
                map.insert("provenance".into(), self.provenance());
            }
            other => {
                v = json!({ "value": other.take(), "provenance": self.provenance() });
            }
        }
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(path)
    }

    /// Text or CSV output plus a `<name>.meta.json` sidecar.
    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, text)?;
        let digest: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let meta = json!({
            "file": name,
            "sha256": digest,
            "provenance": self.provenance(),
        });
        std::fs::write(self.path(&format!("{name}.meta.json")), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(path)
    }
}

fn invalid(msg: impl Into<String>) -> GmcdError {
    GmcdError::InvalidArgument(msg.into())
}

fn require_file(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = path.clone().ok_or_else(|| invalid(format!("{key} is required")))?;
    if !path.is_file() {
        return Err(invalid(format!("{key}: no such file {}", path.display())));
    }
    Ok(path)
}

fn optional_file(path: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    match path {
        Some(_) => require_file(path, key).map(Some),
        None => Ok(None),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| GmcdError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_dataset(path: &Path, alphabet: &Alphabet) -> Result<Vec<CategorySequence>> {
    parse_dataset(&read(path)?, alphabet)
        .map(|(seqs, _)| seqs)
        .map_err(|e| match e {
            GmcdError::Parse(m) => GmcdError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
}

fn load_packing(path: &Path) -> Result<PackingResult> {
    PackingResult::from_json(&read(path)?)
}

fn dataset_text(seqs: &[CategorySequence], alphabet: &Alphabet) -> Result<String> {
    format_dataset(seqs, alphabet, Separator::default_for(alphabet))
}

fn checkpoint_alphabet(ckpt: &Checkpoint) -> Result<Alphabet> {
    match ckpt.meta.get("alphabet") {
        Some(v) => {
            let symbols: Vec<String> = serde_json::from_value(v.clone())?;
            Alphabet::new(symbols)
        }
        None => Ok(Alphabet::numeric(ckpt.packing.num_categories)),
    }
}

pub fn pack(ctx: &Context) -> Result<PathBuf> {
    let pcfg = &ctx.cfg.packing;
    pcfg.validate()?;
    ctx.prepare_out()?;
    let result = pack_sphere(pcfg)?;
    let path = ctx.write_json("packing.json", &result)?;
    eprintln!(
        "packed K={} d={} min_pair_sq_dist={:.6} sigma={:.6}",
        result.num_categories, result.latent_dim, result.min_pair_sq_dist, result.sigma
    );
    Ok(path)
}

pub fn gen_data(ctx: &Context) -> Result<PathBuf> {
    let data = &ctx.cfg.data;
    let k = data
        .num_categories
        .ok_or_else(|| invalid("data.num_categories (or --num-categories) is required"))?;
    if k < 2 {
        return Err(invalid(format!("num_categories must be at least 2, got {k}")));
    }
    let sizes = split_sizes(data.num_sequences, &data.split_ratios)?;
    let names: Vec<String> = if sizes.len() == 3 {
        ["train", "valid", "test"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..sizes.len()).map(|i| format!("split{i}")).collect()
    };
    ctx.prepare_out()?;
    let seed = ctx.cfg.component_seed(seed_tag::DATA);
    let splits = generate_splits(k, data.num_sequences, &data.split_ratios, seed)?;
    let alphabet = Alphabet::numeric(k);
    let mut infos = Vec::new();
    for (name, seqs) in names.iter().zip(&splits) {
        let file = format!("{name}.txt");
        ctx.write_text(&file, &dataset_text(seqs, &alphabet)?)?;
        infos.push(SplitInfo { name: name.clone(), size: seqs.len(), file });
    }
    ctx.write_text("alphabet.txt", &alphabet.to_text())?;
    let manifest = DatasetManifest { k, n: data.num_sequences, splits: infos, seed };
    let path = ctx.write_json("manifest.json", &manifest)?;
    eprintln!("wrote {} splits of K={k} data: {:?}", sizes.len(), sizes);
    Ok(path)
}

/// Fills predictor shape fields left at zero and rejects disagreements.
fn merge_dim(field: &mut usize, actual: usize, key: &str) -> Result<()> {
    if *field == 0 {
        *field = actual;
    } else if *field != actual {
        return Err(invalid(format!("{key}={field} but the data implies {actual}")));
    }
    Ok(())
}

pub fn train(ctx: &Context, resume: Option<&Path>) -> Result<PathBuf> {
    let cfg = &ctx.cfg;
    let data = &cfg.data;
    cfg.training.validate()?;
    let train_path = require_file(&data.train, "data.train")?;
    let valid_path = require_file(&data.valid, "data.valid")?;
    let alphabet_path = optional_file(&data.alphabet, "data.alphabet")?;
    let packing_path = optional_file(&data.packing, "data.packing")?;
    if let Some(r) = resume {
        if !r.is_file() {
            return Err(invalid(format!("--resume: no such file {}", r.display())));
        }
    }
    let schedule = cfg.schedule.build()?;

    let resumed = resume.map(Checkpoint::load).transpose()?;
    let alphabet = match (&alphabet_path, &resumed) {
        (Some(p), _) => Alphabet::from_text(&read(p)?)?,
        (None, Some(ck)) => checkpoint_alphabet(ck)?,
        (None, None) => {
            let k = data.num_categories.unwrap_or(cfg.packing.num_categories);
            Alphabet::numeric(k)
        }
    };
    let k = alphabet.len();
    if let Some(dk) = data.num_categories {
        if dk != k {
            return Err(invalid(format!("data.num_categories={dk} but the alphabet has {k} symbols")));
        }
    }
    let train_set = load_dataset(&train_path, &alphabet)?;
    let valid_set = load_dataset(&valid_path, &alphabet)?;
    let s = train_set[0].len();
    if valid_set[0].len() != s {
        return Err(invalid(format!("valid sequences have length {} but train has {s}", valid_set[0].len())));
    }

    let given_packing = match (&resumed, &packing_path) {
        (Some(ck), _) => Some(ck.packing.clone()),
        (None, Some(p)) => Some(load_packing(p)?),
        (None, None) => None,
    };
    let (pk, pd) = match &given_packing {
        Some(p) => (p.num_categories, p.latent_dim),
        None => (cfg.packing.num_categories, cfg.packing.latent_dim),
    };
    if pk != k {
        return Err(invalid(format!("packing has K={pk} but the alphabet has {k} symbols")));
    }
    if given_packing.is_none() {
        cfg.packing.validate()?;
    }

    let mut pcfg = match &resumed {
        Some(ck) => ck.state.predictor.config().clone(),
        None => cfg.predictor.clone(),
    };
    merge_dim(&mut pcfg.seq_len, s, "predictor.seq_len")?;
    merge_dim(&mut pcfg.latent_dim, pd, "predictor.latent_dim")?;
    merge_dim(&mut pcfg.num_categories, k, "predictor.num_categories")?;
    pcfg.validate()?;
    if let Some(ck) = &resumed {
        if ck.schedule != schedule {
            return Err(invalid(format!(
                "checkpoint schedule (T={}) differs from the configured one (T={})",
                ck.schedule.steps(),
                schedule.steps()
            )));
        }
        if ck.state.step() >= cfg.training.max_iterations {
            return Err(invalid(format!(
                "checkpoint is already at step {} and training.max_iterations is {}",
                ck.state.step(),
                cfg.training.max_iterations
            )));
        }
    }

    ctx.prepare_out()?;
    let packing = match given_packing {
        Some(p) => p,
        None => {
            let p = pack_sphere(&cfg.packing)?;
            ctx.write_json("packing.json", &p)?;
            p
        }
    };
    let state = match resumed {
        Some(ck) => ck.state,
        None => TrainState::new(Predictor::new(pcfg.clone())?, cfg.training.optimizer)?,
    };
    eprintln!(
        "training {} params on {} sequences (S={s}, K={k}, d={}), from step {}",
        state.predictor.num_params(),
        train_set.len(),
        packing.latent_dim,
        state.step()
    );
    let mut log = |ev: FitEvent| match ev {
        FitEvent::Step { iteration, loss } if iteration % 50 == 0 => eprintln!("step {iteration} loss {loss:.4}"),
        FitEvent::Eval { iteration, validation_loss, duplicate_fraction, improved } => eprintln!(
            "eval {iteration} valid {validation_loss:.4}{}{}",
            duplicate_fraction.map(|f| format!(" dup {f:.4}")).unwrap_or_default(),
            if improved { " *" } else { "" }
        ),
        _ => {}
    };
    let mut outcome = fit_from(state, &train_set, &valid_set, &packing, &schedule, &cfg.training, &mut log)?;

    let meta = json!({
        "config_hash": ctx.hash,
        "seed": cfg.seed,
        "alphabet": alphabet.symbols(),
    });
    let save = |state: TrainState, name: &str| -> Result<PathBuf> {
        let path = ctx.path(name);
        Checkpoint { state, schedule: schedule.clone(), packing: packing.clone(), meta: meta.clone() }.save(&path)?;
        Ok(path)
    };
    let best_path = save(outcome.best, "model.ckpt")?;
    save(outcome.last, "last.ckpt")?;
    outcome.report.best_checkpoint_path = Some(best_path.display().to_string());

    let mut curve = String::from("iteration,loss\n");
    for p in &outcome.report.loss_curve {
        curve.push_str(&format!("{},{}\n", p.iteration, p.value));
    }
    ctx.write_text("loss_curve.csv", &curve)?;
    let mut vcurve = String::from("iteration,validation_loss\n");
    for p in &outcome.report.validation_curve {
        vcurve.push_str(&format!("{},{}\n", p.iteration, p.value));
    }
    ctx.write_text("validation_curve.csv", &vcurve)?;
    ctx.write_json("train_report.json", &outcome.report)?;
    eprintln!(
        "best validation loss {:.4} at step {}; stopped at step {}",
        outcome.report.best_validation_loss, outcome.report.best_iteration, outcome.report.final_iteration
    );
    Ok(best_path)
}

fn checkpoint_path(ctx: &Context, flag: Option<&Path>) -> Result<PathBuf> {
    let p = flag.map(Path::to_path_buf).or_else(|| ctx.cfg.sampling.checkpoint.clone());
    require_file(&p, "checkpoint")
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        GmcdError::Integrity(m) => GmcdError::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn generate(ck: &Checkpoint, num_samples: usize, seed: u64, entropy: bool, map: bool) -> Result<gmcd::sampling::SampleOutput> {
    let req = SampleRequest {
        num_samples,
        seed,
        record_entropy: entropy,
        map_intermediate: map,
        ..SampleRequest::default()
    };
    sample_many(&ck.state.predictor, &ck.packing, &ck.schedule, &req)
}

pub fn sample(ctx: &Context, checkpoint: Option<&Path>, num_samples: Option<usize>) -> Result<PathBuf> {
    let path = checkpoint_path(ctx, checkpoint)?;
    let m = num_samples.unwrap_or(ctx.cfg.sampling.num_samples);
    if m == 0 {
        return Err(invalid("num_samples must be at least 1"));
    }
    let ck = load_checkpoint(&path)?;
    let alphabet = checkpoint_alphabet(&ck)?;
    ctx.prepare_out()?;
    let seed = ctx.cfg.component_seed(seed_tag::SAMPLING);
    let out = generate(&ck, m, seed, ctx.entropy, ctx.cfg.sampling.map_intermediate)?;
    let written = ctx.write_text("samples.txt", &dataset_text(&out.samples, &alphabet)?)?;
    if let Some(h) = &out.entropy {
        ctx.write_text("entropy.csv", &entropy_csv(h))?;
    }
    eprintln!("wrote {m} samples to {}", written.display());
    Ok(written)
}

/// Raw values behind the CSV columns, on the same scale.
fn column_values(r: &MetricsReport) -> Vec<(String, Option<f64>)> {
    let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
    let m = r.masses.as_ref();
    let mut cols = vec![
        ("hel".to_string(), pct(r.hellinger)),
        ("d_tv".to_string(), pct(r.tv)),
        ("d_tv_plus".to_string(), pct(r.tv_positive)),
        ("d_tv_ood".to_string(), pct(r.tv_ood)),
        ("p_likely".to_string(), pct(m.map(|m| m.likely))),
        ("p_rare".to_string(), pct(m.map(|m| m.rare))),
        ("p_plus".to_string(), pct(m.map(|m| m.positive))),
        ("p_ood".to_string(), pct(m.map(|m| m.ood))),
    ];
    for (p, v) in &r.rho {
        cols.push((format!("rho_{p}"), *v));
    }
    cols
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    trials: Vec<MetricsReport>,
    /// Column name to `[mean, std]` over trials with a defined value.
    /// Distances and masses are on the x100 scale, correlations are not.
    summary: BTreeMap<String, Option<[f64; 2]>>,
}

pub struct EvalInputs<'a> {
    pub samples: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub truth_k: Option<usize>,
    pub reference: Option<&'a Path>,
    pub num_samples: Option<usize>,
}

pub fn eval(ctx: &Context, inputs: EvalInputs<'_>) -> Result<PathBuf> {
    let ecfg = &ctx.cfg.evaluation;
    let truth_k = inputs.truth_k.or(ecfg.truth_k);
    let reference_path = optional_file(&inputs.reference.map(Path::to_path_buf).or_else(|| ecfg.reference.clone()), "reference")?;
    if truth_k.is_none() && reference_path.is_none() {
        return Err(invalid("eval needs --truth-k or --reference"));
    }
    let samples_path = optional_file(&inputs.samples.map(Path::to_path_buf).or_else(|| ecfg.samples.clone()), "samples")?;
    let ckpt_path = match inputs.checkpoint {
        Some(p) => Some(require_file(&Some(p.to_path_buf()), "checkpoint")?),
        None => None,
    };
    let ck = match (&samples_path, &ckpt_path) {
        (Some(_), Some(_)) => return Err(invalid("give either --samples or --checkpoint, not both")),
        (None, None) => return Err(invalid("eval needs --samples or --checkpoint")),
        (None, Some(p)) => Some(load_checkpoint(p)?),
        (Some(_), None) => None,
    };
    let truth = truth_k.map(GroundTruth::new).transpose()?;
    let alphabet_path = optional_file(&ctx.cfg.data.alphabet, "data.alphabet")?;
    let alphabet = match (&alphabet_path, &ck) {
        (Some(p), _) => Alphabet::from_text(&read(p)?)?,
        (None, Some(ck)) => checkpoint_alphabet(ck)?,
        (None, None) => match truth_k.or(ctx.cfg.data.num_categories) {
            Some(k) => Alphabet::numeric(k),
            None => return Err(invalid("an alphabet is needed to read samples: set data.alphabet or data.num_categories")),
        },
    };
    let reference = reference_path.as_deref().map(|p| load_dataset(p, &alphabet)).transpose()?;
    let file_samples = samples_path.as_deref().map(|p| load_dataset(p, &alphabet)).transpose()?;

    let seq_len = match (&file_samples, &ck) {
        (Some(s), _) => s[0].len(),
        (None, Some(ck)) => ck.state.predictor.config().seq_len,
        (None, None) => unreachable!("checked above"),
    };
    if let Some(k) = truth_k {
        if seq_len != k {
            return Err(invalid(format!("synthetic truth with K={k} needs sequences of length {k}, got {seq_len}")));
        }
    }
    if let Some(r) = &reference {
        if r[0].len() != seq_len {
            return Err(invalid(format!("samples have length {seq_len} but the reference has {}", r[0].len())));
        }
        for &p in &ecfg.pattern_lengths {
            if p == 0 || p > seq_len {
                return Err(invalid(format!("pattern length {p} must lie in [1, {seq_len}]")));
            }
        }
    }
    let num_samples = match &file_samples {
        Some(s) => s.len(),
        None => inputs.num_samples.unwrap_or(ctx.cfg.sampling.num_samples),
    };
    if num_samples == 0 {
        return Err(invalid("num_samples must be at least 1"));
    }
    if let Some(b) = ecfg.budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("evaluation.budget must be positive, got {b}")));
        }
    }

    ctx.prepare_out()?;
    let eval_seed = ctx.cfg.component_seed(seed_tag::EVALUATION);
    let patterns = match &reference {
        Some(r) => {
            let mut rng = seeded(derive_seed(eval_seed, u64::MAX));
            let mut out = Vec::new();
            for &p in &ecfg.pattern_lengths {
                out.push((p, select_patterns(r, p, ecfg.n_positions, ecfg.top_k, &mut rng)?));
            }
            out
        }
        None => Vec::new(),
    };

    let mut reports = Vec::new();
    for trial in 0..ctx.trials {
        let trial_seed = derive_seed(eval_seed, trial as u64);
        let generated;
        let samples: &[CategorySequence] = match (&file_samples, &ck) {
            (Some(s), _) => s,
            (None, Some(ck)) => {
                let out = generate(ck, num_samples, trial_seed, false, ctx.cfg.sampling.map_intermediate)?;
                generated = out.samples;
                &generated
            }
            (None, None) => unreachable!("checked above"),
        };
        let mut report = match &truth {
            Some(truth) => {
                let m = ecfg.budget.unwrap_or_else(|| file_budget(samples.len()));
                let mut rng = seeded(trial_seed);
                let phat = poissonized_empirical(&mut ListSource::new(samples), m, trial_seed, &mut rng)?;
                MetricsReport::synthetic(&phat, truth, samples.len())?
            }
            None => MetricsReport {
                num_samples: samples.len(),
                seeds: vec![trial_seed],
                ..MetricsReport::default()
            },
        };
        if let Some(r) = &reference {
            for (p, pats) in &patterns {
                let rho = match pattern_correlation(r, samples, pats) {
                    Ok(v) => Some(v),
                    Err(GmcdError::Degenerate(_)) => None,
                    Err(e) => return Err(e),
                };
                report.rho.insert(*p, rho);
            }
        }
        eprintln!("trial {trial}: {}", report.to_csv().lines().nth(1).unwrap_or_default());
        reports.push(report);
    }

    let mut summary = BTreeMap::new();
    let columns: Vec<Vec<(String, Option<f64>)>> = reports.iter().map(column_values).collect();
    for (i, (name, _)) in columns[0].iter().enumerate() {
        let values: Vec<f64> = columns.iter().filter_map(|c| c[i].1).collect();
        let stat = (!values.is_empty()).then(|| {
            let (m, s) = mean_std(&values);
            [m, s]
        });
        summary.insert(name.clone(), stat);
    }

    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let cols = r.csv_columns();
        if i == 0 {
            let header: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
            csv.push_str(&format!("trial,{}\n", header.join(",")));
        }
        let row: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
        csv.push_str(&format!("{i},{}\n", row.join(",")));
    }
    for (label, idx) in [("mean", 0), ("std", 1)] {
        let mut row = vec![label.to_string()];
        for (name, _) in &columns[0] {
            row.push(match summary[name] {
                Some(stat) => format!("{:.6}", stat[idx]),
                None => "-".into(),
            });
        }
        row.push(if idx == 0 { num_samples.to_string() } else { String::new() });
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    ctx.write_text("metrics.csv", &csv)?;
    let path = ctx.write_json("metrics.json", &EvalSummary { trials: reports, summary })?;
    Ok(path)
}
