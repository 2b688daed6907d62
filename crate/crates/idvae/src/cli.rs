//! Command-line entry points: train, sample, reconstruct, eval, grid,
//! inspect.
//!
//! Every command that writes files lists them on standard output at exit and
//! drops a `command.resolved` echo next to them; re-feeding a training run's
//! `config.resolved` to `train --config` reproduces the run byte for byte.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
//! `IDVAE_OUT` overrides the output directory when `--out` is absent;
//! `IDVAE_THREADS` caps evaluation worker threads.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_override, DatasetId, ExperimentConfig, Variant};
use crate::data::{self, Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::eval::{default_battery, ensemble_eval, train_expert, Expert, SampleSource};
use crate::graph::Graph;
use crate::nets::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{held_out_recons, load_data, train_resumed, TrainState};
use crate::viz;

#[derive(Parser)]
#[command(name = "idvae", version, about = "Shared encoder-discriminator VAE/GAN lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model variant and write checkpoints plus a metrics CSV.
    Train(TrainArgs),
    /// Decode prior samples from a checkpoint into a grid or point cloud.
    Sample(SampleArgs),
    /// Reconstruct held-out examples side by side with the originals.
    Reconstruct(ReconstructArgs),
    /// Fréchet-distance evaluation of checkpoints under an expert ensemble.
    Eval(EvalArgs),
    /// Label-conditioned sample grid, one row per label.
    Grid(GridArgs),
    /// Print a checkpoint's config, counters, and tensor directory.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output directory (overrides config and IDVAE_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additional key=value overrides; strongest precedence.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Resume from a checkpoint (its embedded config wins except epochs/out).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, default_value_t = 16)]
    n: usize,
    /// Condition every sample on this label (conditional checkpoints only).
    #[arg(long)]
    cond: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, default_value_t = 8)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// One or more checkpoints to score (all on the same dataset).
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Samples per generation (default: held-out set size).
    #[arg(short)]
    n: Option<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    expert_epochs: usize,
    #[arg(long, default_value_t = 7777)]
    expert_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Samples per label row.
    #[arg(long, default_value_t = 8)]
    per_label: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // help/version are successful exits
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir_override(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var("IDVAE_OUT").ok().map(PathBuf::from))
}

fn resolve_out(flag: Option<PathBuf>, default: &Path) -> PathBuf {
    out_dir_override(flag).unwrap_or_else(|| default.to_path_buf())
}

fn write_command_echo(out: &Path, lines: &[(String, String)]) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let path = out.join("command.resolved");
    let mut s = String::new();
    for (k, v) in lines {
        s.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(&path, s).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn cmd_train(a: TrainArgs) -> Result<Vec<PathBuf>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(v) = &a.variant {
        pairs.push(("variant".into(), v.clone()));
    }
    if let Some(v) = &a.dataset {
        pairs.push(("dataset".into(), v.clone()));
    }
    if let Some(v) = &a.schedule {
        pairs.push(("schedule".into(), v.clone()));
    }
    if let Some(v) = a.epochs {
        pairs.push(("epochs".into(), v.to_string()));
    }
    if let Some(v) = a.seed {
        pairs.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = a.batch_size {
        pairs.push(("batch_size".into(), v.to_string()));
    }
    for s in &a.sets {
        pairs.push(parse_override(s)?);
    }
    let mut cfg = ExperimentConfig::from_sources(a.config.as_deref(), &pairs)?;
    if let Some(out) = out_dir_override(a.out) {
        cfg.out_dir = out;
    }
    let output = train_resumed(&cfg, a.resume.as_deref())?;
    Ok(output.written)
}

/// Rebuild a model from a checkpoint (the dataset is needed for the
/// network-shape plan and for held-out data).
fn load_model(path: &Path) -> Result<(Checkpoint, Dataset, Dataset, TrainState)> {
    let ck = Checkpoint::load(path)?;
    let (train, test) = load_data(&ck.config)?;
    let state = TrainState::from_checkpoint(&ck, &train)?;
    Ok((ck, train, test, state))
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut v = vec![0.0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        v[i * classes + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), classes], v)
}

fn cmd_sample(a: SampleArgs) -> Result<Vec<PathBuf>> {
    if a.n == 0 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    let (ck, _train, _test, state) = load_model(&a.checkpoint)?;
    let model = &state.model;
    let conditional = model.spec.is_conditional();
    if a.cond.is_some() && !conditional {
        return Err(Error::Config("--cond given but the checkpoint is unconditional".into()));
    }
    if let Some(c) = a.cond {
        if c >= model.spec.cond_dim {
            return Err(Error::Config(format!(
                "--cond {c} out of range (checkpoint has {} labels)",
                model.spec.cond_dim
            )));
        }
    }
    let out = resolve_out(a.out, &ck.config.out_dir.join("samples"));
    let mut written = vec![write_command_echo(
        &out,
        &[
            ("command".into(), "sample".into()),
            ("checkpoint".into(), a.checkpoint.display().to_string()),
            ("n".into(), a.n.to_string()),
            ("cond".into(), a.cond.map_or("none".into(), |c| c.to_string())),
        ],
    )?];

    let mut rng = Rng::new(ck.config.seed).stream("cli-sample");
    let z = data::sample_prior(a.n, model.spec.latent_dim, &mut rng);
    let cond = conditional.then(|| {
        let labels: Vec<usize> = match a.cond {
            Some(c) => vec![c; a.n],
            None => (0..a.n).map(|i| i % model.spec.cond_dim).collect(),
        };
        one_hot(&labels, model.spec.cond_dim)
    });
    let mut g = Graph::inference();
    let samples = model.decode(&mut g, &z, cond.as_ref())?;

    if model.spec.is_image() {
        let cols = (a.n as f64).sqrt().ceil() as usize;
        let path = out.join("sample_grid.png");
        viz::write_image_grid(&path, &samples, cols)?;
        written.push(path);
    } else {
        let csv = out.join("samples.csv");
        viz::write_points_csv(&csv, &samples, "x,y")?;
        written.push(csv);
        let png = out.join("samples.png");
        let centers = ring_centers(&ck.config);
        viz::write_scatter(&png, &samples, &centers)?;
        written.push(png);
    }
    Ok(written)
}

fn ring_centers(cfg: &ExperimentConfig) -> Vec<(f32, f32)> {
    if cfg.dataset == DatasetId::Ring2d {
        MixtureSpec::ring(cfg.ring_modes, cfg.ring_radius, cfg.ring_sigma).centers
    } else {
        Vec::new()
    }
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<Vec<PathBuf>> {
    if a.n == 0 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    let (ck, _train, test, state) = load_model(&a.checkpoint)?;
    let model = &state.model;
    let n = a.n.min(test.len());
    let batch = test.head(n);
    let conditional = model.spec.is_conditional();
    let cond = if conditional { batch.cond() } else { None };

    let mut g = Graph::inference();
    let eps = Tensor::zeros(&[n, model.spec.latent_dim]);
    let code = model.encode_with_eps(&mut g, &batch.x, cond, &eps)?;
    let recon = model.decode(&mut g, &code.sample, cond)?;

    let out = resolve_out(a.out, &ck.config.out_dir.join("reconstructions"));
    let mut written = vec![write_command_echo(
        &out,
        &[
            ("command".into(), "reconstruct".into()),
            ("checkpoint".into(), a.checkpoint.display().to_string()),
            ("n".into(), n.to_string()),
        ],
    )?];

    if model.spec.is_image() {
        // interleave original, reconstruction: 2n tiles
        let shape = batch.x.shape();
        let (h, w) = (shape[2], shape[3]);
        let stride = h * w;
        let (xo, xr) = (batch.x.value(), recon.value());
        let mut tiles = Vec::with_capacity(2 * n * stride);
        for i in 0..n {
            tiles.extend_from_slice(&xo[i * stride..(i + 1) * stride]);
            tiles.extend_from_slice(&xr[i * stride..(i + 1) * stride]);
        }
        let tiles = Tensor::from_vec(&[2 * n, 1, h, w], tiles);
        let cols = 2 * n.min(4);
        let path = out.join("reconstruction_grid.png");
        viz::write_image_grid(&path, &tiles, cols)?;
        written.push(path);
    } else {
        let csv = out.join("reconstructions.csv");
        let (xo, xr) = (batch.x.value(), recon.value());
        let mut s = String::from("x,y,recon_x,recon_y\n");
        for i in 0..n {
            s.push_str(&format!(
                "{},{},{},{}\n",
                xo[2 * i],
                xo[2 * i + 1],
                xr[2 * i],
                xr[2 * i + 1]
            ));
        }
        std::fs::write(&csv, s).map_err(|e| Error::io(csv.display().to_string(), e))?;
        written.push(csv.clone());
        let png = out.join("reconstructions.png");
        viz::write_scatter(&png, &recon, &ring_centers(&ck.config))?;
        written.push(png);
    }
    Ok(written)
}

fn cmd_grid(a: GridArgs) -> Result<Vec<PathBuf>> {
    if a.per_label == 0 {
        return Err(Error::Config("per_label must be >= 1".into()));
    }
    let (ck, _train, _test, state) = load_model(&a.checkpoint)?;
    let model = &state.model;
    if !model.spec.is_conditional() {
        return Err(Error::Config(
            "grid requires a conditional checkpoint (use sample for unconditional models)".into(),
        ));
    }
    if !model.spec.is_image() {
        return Err(Error::Config("grid requires an image checkpoint".into()));
    }
    let classes = model.spec.cond_dim;
    let n = classes * a.per_label;
    let mut rng = Rng::new(ck.config.seed).stream("cli-grid");
    let z = data::sample_prior(n, model.spec.latent_dim, &mut rng);
    // row-major by label: row r is label r
    let labels: Vec<usize> = (0..n).map(|i| i / a.per_label).collect();
    let cond = one_hot(&labels, classes);
    let mut g = Graph::inference();
    let samples = model.decode(&mut g, &z, Some(&cond))?;

    let out = resolve_out(a.out, &ck.config.out_dir.join("grid"));
    let mut written = vec![write_command_echo(
        &out,
        &[
            ("command".into(), "grid".into()),
            ("checkpoint".into(), a.checkpoint.display().to_string()),
            ("per_label".into(), a.per_label.to_string()),
        ],
    )?];
    let path = out.join("conditional_grid.png");
    viz::write_image_grid(&path, &samples, a.per_label)?;
    written.push(path);
    Ok(written)
}

/// Decodes prior samples from a trained model, for ensemble scoring.
struct CkptModel {
    label: String,
    model: Model,
    seed: u64,
}

impl SampleSource for CkptModel {
    fn name(&self) -> &str {
        &self.label
    }

    fn generate(&mut self, n: usize, rep: usize) -> Result<Tensor> {
        let mut rng = Rng::new(self.seed).stream_indexed("eval-gen", rep as u64);
        let z = data::sample_prior(n, self.model.spec.latent_dim, &mut rng);
        let cond = self.model.spec.is_conditional().then(|| {
            let dy = self.model.spec.cond_dim;
            let labels: Vec<usize> = (0..n).map(|_| rng.below(dy)).collect();
            one_hot(&labels, dy)
        });
        let mut g = Graph::inference();
        self.model.decode(&mut g, &z, cond.as_ref())
    }
}

fn cmd_eval(a: EvalArgs) -> Result<Vec<PathBuf>> {
    if a.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    // load everything before writing anything
    let mut loaded = Vec::new();
    for path in &a.checkpoint {
        loaded.push((path.clone(), load_model(path)?));
    }
    let sample_shape = loaded[0].1 .2.sample_shape();
    let first_dataset = loaded[0].1 .0.config.dataset;
    let default_out = loaded[0].1 .0.config.out_dir.join("eval");
    for (path, (ck, _, t, _)) in &loaded {
        if ck.config.dataset != first_dataset || t.sample_shape() != sample_shape {
            return Err(Error::Config(format!(
                "{} and {} were trained on different datasets",
                a.checkpoint[0].display(),
                path.display()
            )));
        }
    }
    let is_image = sample_shape.len() == 3;
    let test_len = loaded[0].1 .2.len();
    let n = a.n.unwrap_or(test_len).min(test_len).max(2);
    let real = loaded[0].1 .2.head(n).x;

    let mut experts: Vec<Expert> = Vec::new();
    for (id, arch, seed) in default_battery(is_image, a.expert_seed) {
        let e = train_expert(&id, &loaded[0].1 .1, &loaded[0].1 .2, arch, seed, a.expert_epochs)?;
        if let Some(acc) = e.held_out_accuracy {
            eprintln!("expert {id}: held-out accuracy {acc:.4}");
        }
        experts.push(e);
    }

    // per-model statistics first, then consume the states as sample sources
    let mut recons_rows = Vec::new();
    let mut coverage_rows = Vec::new();
    for (path, (ck, _, t, state)) in &loaded {
        let name = model_label(path, ck);
        let conditional = ck.config.variant == Variant::CIdvae;
        let recons = held_out_recons(&state.model, t, t.len(), conditional)?;
        recons_rows.push((name.clone(), recons));
        if ck.config.dataset == DatasetId::Ring2d {
            let samples = state.sample_probe(4096, u64::MAX)?;
            let spec =
                MixtureSpec::ring(ck.config.ring_modes, ck.config.ring_radius, ck.config.ring_sigma);
            let (covered, hq) = crate::eval::mode_coverage(&samples, &spec);
            coverage_rows.push((name, covered, hq));
        }
    }

    let mut models: Vec<CkptModel> = loaded
        .into_iter()
        .map(|(path, (ck, _, _, state))| CkptModel {
            label: model_label(&path, &ck),
            model: state.model,
            seed: ck.config.seed,
        })
        .collect();
    let mut dyn_models: Vec<&mut dyn SampleSource> =
        models.iter_mut().map(|m| m as &mut dyn SampleSource).collect();
    let mut report = ensemble_eval(&mut dyn_models, &experts, &real, n, a.repeats)?;
    report.recons = recons_rows;
    report.coverage = coverage_rows;

    let out = resolve_out(a.out, &default_out);
    let mut written = vec![write_command_echo(
        &out,
        &[
            ("command".into(), "eval".into()),
            (
                "checkpoints".into(),
                a.checkpoint.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" "),
            ),
            ("n".into(), n.to_string()),
            ("repeats".into(), a.repeats.to_string()),
            ("expert_epochs".into(), a.expert_epochs.to_string()),
            ("expert_seed".into(), a.expert_seed.to_string()),
        ],
    )?];
    let frechet = out.join("frechet.csv");
    std::fs::write(&frechet, report.to_csv())
        .map_err(|e| Error::io(frechet.display().to_string(), e))?;
    written.push(frechet);
    let recons_csv = out.join("recons.csv");
    let mut s = String::from("model,recons_mse\n");
    for (m, v) in &report.recons {
        s.push_str(&format!("{m},{v}\n"));
    }
    std::fs::write(&recons_csv, s).map_err(|e| Error::io(recons_csv.display().to_string(), e))?;
    written.push(recons_csv);
    print!("{}", report.render_table());
    Ok(written)
}

fn model_label(path: &Path, ck: &Checkpoint) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    format!("{stem}:{}", ck.config.variant)
}

fn cmd_inspect(a: InspectArgs) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    println!("checkpoint {}", a.checkpoint.display());
    println!("step {} epoch {}", ck.step, ck.epoch);
    println!("-- config --");
    print!("{}", ck.config.to_text());
    println!("-- rng streams --");
    for (name, key, counter) in &ck.rng_states {
        println!("{name}: key {key:#018x} counter {counter}");
    }
    println!("-- tensors --");
    let mut total = 0usize;
    for (name, shape, values) in &ck.tensors {
        let l2 = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        println!("{name:<28} {shape:?} l2 {l2:.4}");
        if !name.starts_with("opt.") {
            total += values.len();
        }
    }
    println!("total model parameters: {total}");
    Ok(Vec::new())
}
