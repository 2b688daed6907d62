//! Phase-split training schedule, metrics logging, and deterministic
//! checkpoint/resume.
//!
//! One training step runs up to three phases, each with a fresh forward
//! pass so its gradients reflect the parameters it reads:
//!
//! 1. discriminator phase: update (dis, shared) on the discriminator loss,
//!    with both fake batches detached from the decoder;
//! 2. encoder phase: update (enc, shared) on alpha*recons + beta*prior;
//! 3. decoder phase: update (dec) on omega*gan + lambda*recons_dis
//!    (+ gamma*recons for the pixel-reconstruction variant), with the
//!    trunk and heads frozen so gradients reach only the decoder.
//!
//! The shared trunk is updated twice per step, once from each adversary
//! direction. `enc_first` swaps phases 1 and 2; `joint` merges them into a
//! single update on the summed loss. The plain VAE variant runs phases
//! 2 and 3 with the decoder phase reduced to pixel reconstruction, so a
//! degenerate schedule (omega = lambda = 0, discriminator phase disabled)
//! reproduces it bit for bit.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetId, ExperimentConfig, Schedule, Variant};
use crate::data::{self, Batch, Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{self, Components, LossBundle};
use crate::nets::{Model, NetSpec, ParamSet, TrunkLayer, TrunkPath};
use crate::optim::{Adam, Slot};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Dis,
    Enc,
    Dec,
    /// Phases 1 and 2 merged: one update on the summed loss.
    JointDisEnc,
}

impl PhaseKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseKind::Dis => "dis",
            PhaseKind::Enc => "enc",
            PhaseKind::Dec => "dec",
            PhaseKind::JointDisEnc => "joint",
        }
    }

    /// The parameter sets this phase updates.
    pub fn updated_sets(&self) -> &'static [ParamSet] {
        match self {
            PhaseKind::Dis => &[ParamSet::Dis, ParamSet::Shared],
            PhaseKind::Enc => &[ParamSet::Enc, ParamSet::Shared],
            PhaseKind::Dec => &[ParamSet::Dec],
            PhaseKind::JointDisEnc => &[ParamSet::Dis, ParamSet::Enc, ParamSet::Shared],
        }
    }
}

/// The phase order one step executes for this config.
pub fn phase_sequence(cfg: &ExperimentConfig) -> Vec<PhaseKind> {
    match cfg.variant {
        Variant::Vae => vec![PhaseKind::Enc, PhaseKind::Dec],
        _ => {
            let mut seq = match cfg.schedule {
                Schedule::DisFirst => vec![PhaseKind::Dis, PhaseKind::Enc, PhaseKind::Dec],
                Schedule::EncFirst => vec![PhaseKind::Enc, PhaseKind::Dis, PhaseKind::Dec],
                Schedule::Joint => vec![PhaseKind::JointDisEnc, PhaseKind::Dec],
            };
            if cfg.skip_dis_phase {
                seq.retain(|p| !matches!(p, PhaseKind::Dis | PhaseKind::JointDisEnc));
                if !seq.contains(&PhaseKind::Enc) {
                    seq.insert(0, PhaseKind::Enc);
                }
            }
            seq
        }
    }
}

/// Effective decoder-phase weights per variant: the VAE decoder trains on
/// pixel reconstruction alone.
fn dec_weights(cfg: &ExperimentConfig) -> (f32, f32, f32) {
    match cfg.variant {
        Variant::Vae => (0.0, 0.0, 1.0),
        _ => (cfg.weights.omega, cfg.weights.lambda, cfg.weights.gamma),
    }
}

/// Everything a run owns: model, optimizer state, counters, rng streams.
pub struct TrainState {
    pub model: Model,
    pub opt: Adam,
    pub step: u64,
    pub epoch: u64,
    rng_eps: Rng,
    rng_prior: Rng,
    rng_shuffle: Rng,
    /// Root generator, kept for stateless per-step probe streams.
    probe_root: Rng,
}

/// Build the network spec a config implies for the given dataset.
pub fn net_spec_for(cfg: &ExperimentConfig, train: &Dataset) -> Result<NetSpec> {
    let sample = train.sample_shape();
    let mut spec = match sample.len() {
        1 => NetSpec::vector(sample[0], &cfg.trunk, cfg.latent_dim),
        3 => {
            let mut s = NetSpec::image([sample[0], sample[1], sample[2]], &cfg.trunk, cfg.latent_dim);
            // mirror the configured channel list, kernel 4 stride 2 pad 1
            s.trunk = cfg
                .trunk
                .iter()
                .map(|&c| TrunkLayer::Conv { out_ch: c, kernel: 4, stride: 2, pad: 1 })
                .collect();
            s
        }
        other => {
            return Err(Error::Data(format!("unsupported sample rank {other}")));
        }
    };
    match cfg.variant {
        Variant::NoSharing => spec = spec.without_sharing(),
        Variant::CIdvae => {
            if train.labels.is_none() || train.num_classes == 0 {
                return Err(Error::Config("c_idvae needs a labeled dataset".into()));
            }
            spec = spec.conditional(train.num_classes);
        }
        _ => {}
    }
    Ok(spec)
}

/// Materialize the train/test datasets a config names.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetId::Ring2d => {
            let spec = MixtureSpec::ring(cfg.ring_modes, cfg.ring_radius, cfg.ring_sigma);
            let root = Rng::new(cfg.seed);
            let train = data::ring_dataset(&spec, cfg.train_n, &mut root.stream("data-train"))?;
            let test = data::ring_dataset(&spec, cfg.test_n, &mut root.stream("data-test"))?;
            Ok((train, test))
        }
        DatasetId::Idx => {
            let need = |p: &Option<PathBuf>, what: &str| {
                p.clone().ok_or_else(|| Error::Config(format!("missing {what}")))
            };
            let mut train = data::load_idx(
                &need(&cfg.train_images, "train_images")?,
                &need(&cfg.train_labels, "train_labels")?,
            )?;
            let test = data::load_idx(
                &need(&cfg.test_images, "test_images")?,
                &need(&cfg.test_labels, "test_labels")?,
            )?;
            if cfg.limit_train > 0 {
                train.truncate(cfg.limit_train);
            }
            Ok((train, test))
        }
    }
}

/// Per-phase scalar outcomes folded into the step's loss bundle.
#[derive(Debug, Default, Clone, Copy)]
struct PhaseScalars {
    l_dis: Option<f32>,
    l_enc: Option<f32>,
    l_dec: Option<f32>,
    recons: Option<f32>,
    prior: Option<f32>,
    recons_dis: Option<f32>,
    gan: Option<f32>,
    dis_real: Option<f32>,
    dis_fake_prior: Option<f32>,
    dis_fake_recon: Option<f32>,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig, train: &Dataset) -> Result<TrainState> {
        let spec = net_spec_for(cfg, train)?;
        let root = Rng::new(cfg.seed);
        let model = Model::new(spec, &mut root.stream("model"))?;
        Ok(TrainState {
            model,
            opt: Adam::new(cfg.adam),
            step: 0,
            epoch: 0,
            rng_eps: root.stream("eps"),
            rng_prior: root.stream("prior"),
            rng_shuffle: root.stream("shuffle"),
            probe_root: root,
        })
    }

    /// Conditioning tensor a phase should see (only conditional variants).
    fn cond<'a>(&self, cfg: &ExperimentConfig, batch: &'a Batch) -> Option<&'a Tensor> {
        if cfg.variant == Variant::CIdvae {
            batch.cond()
        } else {
            None
        }
    }

    /// Run one phase: fresh forward, backward, and an update restricted to
    /// the phase's parameter sets. Public so isolation checks can drive
    /// phases one at a time.
    pub fn run_phase(
        &mut self,
        cfg: &ExperimentConfig,
        kind: PhaseKind,
        batch: &Batch,
    ) -> Result<PhaseOutcome> {
        let scalars = match kind {
            PhaseKind::Dis => self.phase_dis(cfg, batch)?,
            PhaseKind::Enc => self.phase_enc(cfg, batch)?,
            PhaseKind::Dec => self.phase_dec(cfg, batch)?,
            PhaseKind::JointDisEnc => self.phase_joint(cfg, batch)?,
        };
        Ok(PhaseOutcome { kind, scalars })
    }

    fn finite(&self, v: f32, what: &str, kind: PhaseKind) -> Result<f32> {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: what.into(),
                phase: kind.name().into(),
                step: self.step,
            });
        }
        Ok(v)
    }

    fn phase_dis(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<PhaseScalars> {
        let cond = self.cond(cfg, batch);
        let b = batch.len();
        let dz = self.model.spec.latent_dim;
        // Fakes are produced without a tape: they enter the discriminator
        // graph as constants, so nothing flows back into the decoder.
        let (x_recon, x_prior) = {
            let mut gi = Graph::inference();
            let code = self.model.encode(&mut gi, &batch.x, cond, &mut self.rng_eps)?;
            let xr = self.model.decode(&mut gi, &code.sample, cond)?;
            let zp = data::sample_prior(b, dz, &mut self.rng_prior);
            let xp = self.model.decode(&mut gi, &zp, cond)?;
            (xr, xp)
        };
        let mut g = Graph::new();
        let d_real = self.model.discriminate(&mut g, &batch.x, cond)?;
        let d_fp = self.model.discriminate(&mut g, &x_prior, cond)?;
        let d_fr = self.model.discriminate(&mut g, &x_recon, cond)?;
        let dl = losses::dis_loss(&mut g, &d_real, &d_fp, &d_fr)?;
        let total = self.finite(dl.total.item(), "l_dis", PhaseKind::Dis)?;
        self.model.partition.zero_grads_all();
        g.backward(&dl.total)?;
        for set in PhaseKind::Dis.updated_sets() {
            self.opt.step(self.model.partition.set(*set));
        }
        Ok(PhaseScalars {
            l_dis: Some(total),
            dis_real: Some(dl.real.item()),
            dis_fake_prior: Some(dl.fake_prior.item()),
            dis_fake_recon: Some(dl.fake_recon.item()),
            ..PhaseScalars::default()
        })
    }

    fn phase_enc(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<PhaseScalars> {
        let cond = self.cond(cfg, batch);
        let mut g = Graph::new();
        let code = self.model.encode(&mut g, &batch.x, cond, &mut self.rng_eps)?;
        let x_recon = self.model.decode(&mut g, &code.sample, cond)?;
        let recons = losses::recons_loss(&mut g, &batch.x, &x_recon)?;
        let prior = losses::prior_kl(&mut g, &code.mu, &code.log_var)?;
        let a = g.scale(&recons, cfg.weights.alpha);
        let p = g.scale(&prior, cfg.weights.beta);
        let l_enc = g.add(&a, &p)?;
        let total = self.finite(l_enc.item(), "l_enc", PhaseKind::Enc)?;
        self.model.partition.zero_grads_all();
        g.backward(&l_enc)?;
        for set in PhaseKind::Enc.updated_sets() {
            self.opt.step(self.model.partition.set(*set));
        }
        Ok(PhaseScalars {
            l_enc: Some(total),
            recons: Some(recons.item()),
            prior: Some(prior.item()),
            ..PhaseScalars::default()
        })
    }

    fn phase_joint(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<PhaseScalars> {
        let cond = self.cond(cfg, batch);
        let b = batch.len();
        let dz = self.model.spec.latent_dim;
        let (x_recon_fake, x_prior_fake) = {
            let mut gi = Graph::inference();
            let code = self.model.encode(&mut gi, &batch.x, cond, &mut self.rng_eps)?;
            let xr = self.model.decode(&mut gi, &code.sample, cond)?;
            let zp = data::sample_prior(b, dz, &mut self.rng_prior);
            let xp = self.model.decode(&mut gi, &zp, cond)?;
            (xr, xp)
        };
        let mut g = Graph::new();
        let d_real = self.model.discriminate(&mut g, &batch.x, cond)?;
        let d_fp = self.model.discriminate(&mut g, &x_prior_fake, cond)?;
        let d_fr = self.model.discriminate(&mut g, &x_recon_fake, cond)?;
        let dl = losses::dis_loss(&mut g, &d_real, &d_fp, &d_fr)?;
        let code = self.model.encode(&mut g, &batch.x, cond, &mut self.rng_eps)?;
        let x_recon = self.model.decode(&mut g, &code.sample, cond)?;
        let recons = losses::recons_loss(&mut g, &batch.x, &x_recon)?;
        let prior = losses::prior_kl(&mut g, &code.mu, &code.log_var)?;
        let a = g.scale(&recons, cfg.weights.alpha);
        let p = g.scale(&prior, cfg.weights.beta);
        let l_enc = g.add(&a, &p)?;
        let joint = g.add(&dl.total, &l_enc)?;
        self.finite(joint.item(), "l_dis+l_enc", PhaseKind::JointDisEnc)?;
        self.model.partition.zero_grads_all();
        g.backward(&joint)?;
        for set in PhaseKind::JointDisEnc.updated_sets() {
            self.opt.step(self.model.partition.set(*set));
        }
        Ok(PhaseScalars {
            l_dis: Some(dl.total.item()),
            l_enc: Some(l_enc.item()),
            recons: Some(recons.item()),
            prior: Some(prior.item()),
            dis_real: Some(dl.real.item()),
            dis_fake_prior: Some(dl.fake_prior.item()),
            dis_fake_recon: Some(dl.fake_recon.item()),
            ..PhaseScalars::default()
        })
    }

    fn phase_dec(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<PhaseScalars> {
        let frozen = [ParamSet::Shared, ParamSet::Enc, ParamSet::Dis];
        self.model.partition.set_trainable(&frozen, false);
        let result = self.phase_dec_inner(cfg, batch);
        self.model.partition.set_trainable(&frozen, true);
        result
    }

    fn phase_dec_inner(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<PhaseScalars> {
        let cond = self.cond(cfg, batch);
        let (omega, lambda, gamma) = dec_weights(cfg);
        let b = batch.len();
        let dz = self.model.spec.latent_dim;
        let mut g = Graph::new();
        let code = self.model.encode(&mut g, &batch.x, cond, &mut self.rng_eps)?;
        let x_recon = self.model.decode(&mut g, &code.sample, cond)?;

        let mut scalars = PhaseScalars::default();
        let mut terms: Vec<Tensor> = Vec::new();
        if omega != 0.0 {
            let zp = data::sample_prior(b, dz, &mut self.rng_prior);
            let x_prior = self.model.decode(&mut g, &zp, cond)?;
            let d_fp = self.model.discriminate(&mut g, &x_prior, cond)?;
            let d_fr = self.model.discriminate(&mut g, &x_recon, cond)?;
            let gan = losses::gen_adv_loss(&mut g, &d_fp, &d_fr)?;
            scalars.gan = Some(gan.item());
            terms.push(g.scale(&gan, omega));
        }
        if lambda != 0.0 {
            let layer = self.model.spec.feature_layer();
            let f_x =
                self.model.trunk_features(&mut g, &batch.x, cond, layer, TrunkPath::Discriminator)?;
            let f_r =
                self.model.trunk_features(&mut g, &x_recon, cond, layer, TrunkPath::Discriminator)?;
            let rd = losses::recons_dis_loss(&mut g, &f_x, &f_r)?;
            scalars.recons_dis = Some(rd.item());
            terms.push(g.scale(&rd, lambda));
        }
        if gamma != 0.0 {
            let pix = losses::recons_loss(&mut g, &batch.x, &x_recon)?;
            if scalars.recons.is_none() {
                scalars.recons = Some(pix.item());
            }
            terms.push(g.scale(&pix, gamma));
        }
        let l_dec = match terms.split_first() {
            None => Tensor::scalar(0.0),
            Some((first, rest)) => {
                let mut acc = first.clone();
                for t in rest {
                    acc = g.add(&acc, t)?;
                }
                acc
            }
        };
        let total = self.finite(l_dec.item(), "l_dec", PhaseKind::Dec)?;
        scalars.l_dec = Some(total);
        self.model.partition.zero_grads_all();
        g.backward(&l_dec)?;
        self.opt.step(self.model.partition.set(ParamSet::Dec));
        Ok(scalars)
    }

    /// One full training step over one mini-batch.
    pub fn train_step(&mut self, cfg: &ExperimentConfig, batch: &Batch) -> Result<LossBundle> {
        let mut merged = PhaseScalars::default();
        for kind in phase_sequence(cfg) {
            let out = self.run_phase(cfg, kind, batch)?;
            let s = out.scalars;
            merged.l_dis = s.l_dis.or(merged.l_dis);
            merged.l_enc = s.l_enc.or(merged.l_enc);
            merged.l_dec = s.l_dec.or(merged.l_dec);
            merged.recons = s.recons.or(merged.recons);
            merged.prior = s.prior.or(merged.prior);
            merged.recons_dis = s.recons_dis.or(merged.recons_dis);
            merged.gan = s.gan.or(merged.gan);
            merged.dis_real = s.dis_real.or(merged.dis_real);
            merged.dis_fake_prior = s.dis_fake_prior.or(merged.dis_fake_prior);
            merged.dis_fake_recon = s.dis_fake_recon.or(merged.dis_fake_recon);
        }
        self.step += 1;
        Ok(LossBundle {
            l_enc: Tensor::scalar(merged.l_enc.unwrap_or(0.0)),
            l_dis: Tensor::scalar(merged.l_dis.unwrap_or(0.0)),
            l_dec: Tensor::scalar(merged.l_dec.unwrap_or(0.0)),
            components: Components {
                recons: merged.recons.unwrap_or(0.0),
                prior: merged.prior.unwrap_or(0.0),
                recons_dis: merged.recons_dis.unwrap_or(0.0),
                gan: merged.gan.unwrap_or(0.0),
                dis_real: merged.dis_real.unwrap_or(0.0),
                dis_fake_prior: merged.dis_fake_prior.unwrap_or(0.0),
                dis_fake_recon: merged.dis_fake_recon.unwrap_or(0.0),
            },
        })
    }

    /// Decode prior samples (a stateless probe keyed by tag and index).
    pub fn sample_probe(&self, n: usize, tag: u64) -> Result<Tensor> {
        let mut rng = self.probe_root.stream_indexed("probe", tag);
        let z = data::sample_prior(n, self.model.spec.latent_dim, &mut rng);
        let mut g = Graph::inference();
        // Unconditional probe: conditional models get uniform labels.
        let cond = if self.model.spec.is_conditional() {
            let dy = self.model.spec.cond_dim;
            let mut oh = vec![0.0f32; n * dy];
            for (i, row) in oh.chunks_mut(dy).enumerate() {
                row[i % dy] = 1.0;
            }
            Some(Tensor::from_vec(&[n, dy], oh))
        } else {
            None
        };
        self.model.decode(&mut g, &z, cond.as_ref())
    }

    pub fn to_checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        for p in self.model.partition.all() {
            tensors.push((p.name.clone(), p.tensor.shape(), p.tensor.value()));
        }
        let mut opt_t = Vec::new();
        for (name, slot) in self.opt.entries() {
            let shape = vec![slot.m.len()];
            tensors.push((format!("opt.m.{name}"), shape.clone(), slot.m.clone()));
            tensors.push((format!("opt.v.{name}"), shape, slot.v.clone()));
            opt_t.push((name.to_string(), slot.t));
        }
        let rng_states = vec![
            ("eps".to_string(), self.rng_eps.state().0, self.rng_eps.state().1),
            ("prior".to_string(), self.rng_prior.state().0, self.rng_prior.state().1),
            ("shuffle".to_string(), self.rng_shuffle.state().0, self.rng_shuffle.state().1),
            ("probe".to_string(), self.probe_root.state().0, self.probe_root.state().1),
        ];
        Checkpoint {
            config: cfg.clone(),
            step: self.step,
            epoch: self.epoch,
            rng_states,
            opt_t,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, train: &Dataset) -> Result<TrainState> {
        let cfg = &ck.config;
        let mut state = TrainState::new(cfg, train)?;
        state.step = ck.step;
        state.epoch = ck.epoch;
        for p in state.model.partition.all() {
            let (shape, values) = ck.tensor(&p.name).ok_or_else(|| {
                Error::Data(format!("checkpoint is missing parameter {}", p.name))
            })?;
            if shape != p.tensor.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    shape,
                    p.tensor.shape()
                )));
            }
            p.tensor.set_value(values);
        }
        for (name, t) in &ck.opt_t {
            let m = ck
                .tensor(&format!("opt.m.{name}"))
                .ok_or_else(|| Error::Data(format!("checkpoint missing opt.m.{name}")))?
                .1
                .to_vec();
            let v = ck
                .tensor(&format!("opt.v.{name}"))
                .ok_or_else(|| Error::Data(format!("checkpoint missing opt.v.{name}")))?
                .1
                .to_vec();
            state.opt.restore(name, Slot { m, v, t: *t });
        }
        for (name, key, counter) in &ck.rng_states {
            let rng = Rng::from_state(*key, *counter);
            match name.as_str() {
                "eps" => state.rng_eps = rng,
                "prior" => state.rng_prior = rng,
                "shuffle" => state.rng_shuffle = rng,
                "probe" => state.probe_root = rng,
                other => return Err(Error::Data(format!("unknown rng stream '{other}'"))),
            }
        }
        Ok(state)
    }
}

pub struct PhaseOutcome {
    pub kind: PhaseKind,
    scalars: PhaseScalars,
}

impl PhaseOutcome {
    pub fn loss(&self) -> f32 {
        match self.kind {
            PhaseKind::Dis => self.scalars.l_dis.unwrap_or(0.0),
            PhaseKind::Enc => self.scalars.l_enc.unwrap_or(0.0),
            PhaseKind::Dec => self.scalars.l_dec.unwrap_or(0.0),
            PhaseKind::JointDisEnc => {
                self.scalars.l_dis.unwrap_or(0.0) + self.scalars.l_enc.unwrap_or(0.0)
            }
        }
    }
}

/// Mean squared reconstruction error over (up to) `max_n` held-out examples,
/// using the posterior mean (no sampling noise).
pub fn held_out_recons(model: &Model, ds: &Dataset, max_n: usize, conditional: bool) -> Result<f64> {
    let n = ds.len().min(max_n);
    if n == 0 {
        return Ok(0.0);
    }
    let dz = model.spec.latent_dim;
    let mut sq_sum = 0.0f64;
    let mut elems = 0usize;
    let mut at = 0usize;
    while at < n {
        let hi = (at + 256).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let batch = ds.gather(&idx);
        let cond = if conditional { batch.cond() } else { None };
        let mut g = Graph::inference();
        let eps = Tensor::zeros(&[batch.len(), dz]);
        let code = model.encode_with_eps(&mut g, &batch.x, cond, &eps)?;
        let recon = model.decode(&mut g, &code.sample, cond)?;
        let xv = batch.x.value();
        let rv = recon.value();
        for (a, b) in xv.iter().zip(&rv) {
            let d = (*a - *b) as f64;
            sq_sum += d * d;
        }
        elems += xv.len();
        at = hi;
    }
    Ok(sq_sum / elems as f64)
}

pub struct TrainOutput {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub resolved_config_path: PathBuf,
    pub final_checkpoint: PathBuf,
    /// Every file the run wrote, in write order.
    pub written: Vec<PathBuf>,
    pub state: TrainState,
}

/// Train from scratch.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    train_resumed(cfg, None)
}

/// Train, optionally resuming from a checkpoint. On resume the embedded
/// config wins except for `epochs` and `out_dir`, which the caller controls.
pub fn train_resumed(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutput> {
    let (eff_cfg, resume_ck) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut c = ck.config.clone();
            c.epochs = cfg.epochs;
            c.out_dir = cfg.out_dir.clone();
            (c, Some(ck))
        }
        None => (cfg.clone(), None),
    };
    let cfg = &eff_cfg;
    cfg.validate()?;
    let (train_ds, test_ds) = load_data(cfg)?;
    let mut state = match &resume_ck {
        Some(ck) => TrainState::from_checkpoint(ck, &train_ds)?,
        None => TrainState::new(cfg, &train_ds)?,
    };

    let io_err = |p: &Path, e: std::io::Error| Error::io(p.display().to_string(), e);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    let mut written = Vec::new();

    let resolved = cfg.out_dir.join("config.resolved");
    cfg.write_to(&resolved)?;
    written.push(resolved.clone());

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(
        std::fs::File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?,
    );
    let ring_probe = cfg.dataset == DatasetId::Ring2d;
    let mut header = String::from(
        "step,l_dis,l_enc,l_dec,recons,prior,recons_dis,gan,dis_real,dis_fake_prior,dis_fake_recon,eval_recons",
    );
    if ring_probe {
        header.push_str(",mode_coverage,hq_fraction");
    }
    writeln!(metrics, "{header}").map_err(|e| io_err(&metrics_path, e))?;
    written.push(metrics_path.clone());

    let conditional = cfg.variant == Variant::CIdvae;
    let mixture = ring_probe
        .then(|| MixtureSpec::ring(cfg.ring_modes, cfg.ring_radius, cfg.ring_sigma));

    let n = train_ds.len();
    let batches_per_epoch = n / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::Config(format!(
            "batch_size {} exceeds training set size {n}",
            cfg.batch_size
        )));
    }
    let start_epoch = state.epoch;
    for epoch in start_epoch..cfg.epochs as u64 {
        // identity order re-shuffled each epoch, so a resumed run sees the
        // same permutation as the uninterrupted one
        let mut order: Vec<usize> = (0..n).collect();
        state.rng_shuffle.shuffle(&mut order);
        for bi in 0..batches_per_epoch {
            let idx = &order[bi * cfg.batch_size..(bi + 1) * cfg.batch_size];
            let batch = train_ds.gather(idx);
            let bundle = state.train_step(cfg, &batch)?;
            if state.step % cfg.log_every as u64 == 0 || bi + 1 == batches_per_epoch {
                let c = &bundle.components;
                let er = held_out_recons(&state.model, &test_ds, 256, conditional)?;
                let mut row = format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    state.step,
                    bundle.l_dis.item(),
                    bundle.l_enc.item(),
                    bundle.l_dec.item(),
                    c.recons,
                    c.prior,
                    c.recons_dis,
                    c.gan,
                    c.dis_real,
                    c.dis_fake_prior,
                    c.dis_fake_recon,
                    er
                );
                if let Some(mix) = &mixture {
                    let samples = state.sample_probe(1024, state.step)?;
                    let (covered, hq) = crate::eval::mode_coverage(&samples, mix);
                    row.push_str(&format!(",{covered},{hq}"));
                }
                writeln!(metrics, "{row}").map_err(|e| io_err(&metrics_path, e))?;
            }
        }
        state.epoch = epoch + 1;
        let ck_path = cfg.out_dir.join(format!("checkpoint_ep{:03}.idvae", state.epoch));
        state.to_checkpoint(cfg).save(&ck_path)?;
        written.push(ck_path);
    }
    metrics.flush().map_err(|e| io_err(&metrics_path, e))?;

    let final_path = cfg.out_dir.join("checkpoint_final.idvae");
    state.to_checkpoint(cfg).save(&final_path)?;
    written.push(final_path.clone());

    Ok(TrainOutput {
        out_dir: cfg.out_dir.clone(),
        metrics_path,
        resolved_config_path: resolved,
        final_checkpoint: final_path,
        written,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_cfg(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::ring_defaults();
        cfg.trunk = vec![16, 16];
        cfg.train_n = 256;
        cfg.test_n = 64;
        cfg.epochs = 2;
        cfg.batch_size = 32;
        cfg.log_every = 4;
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    fn snapshot_all(state: &TrainState) -> Vec<(String, Vec<f32>)> {
        state
            .model
            .partition
            .all()
            .map(|p| (p.name.clone(), p.tensor.value()))
            .collect()
    }

    fn changed_names(before: &[(String, Vec<f32>)], after: &[(String, Vec<f32>)]) -> Vec<String> {
        before
            .iter()
            .zip(after)
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0.clone())
            .collect()
    }

    #[test]
    fn phase_updates_touch_exactly_their_sets() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ring_cfg(dir.path());
        let (train, _) = load_data(&cfg).unwrap();
        let mut state = TrainState::new(&cfg, &train).unwrap();
        let batch = train.gather(&(0..32).collect::<Vec<_>>());

        // phase 1: only dis + shared change
        let before = snapshot_all(&state);
        state.run_phase(&cfg, PhaseKind::Dis, &batch).unwrap();
        let after = snapshot_all(&state);
        for name in changed_names(&before, &after) {
            assert!(
                name.starts_with("dis.") || name.starts_with("trunk."),
                "phase dis changed {name}"
            );
        }
        // enc heads and decoder bit-identical
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with("mu.") || name.starts_with("logvar.") || name.starts_with("dec.") {
                assert_eq!(a, b, "{name} changed in dis phase");
            }
        }

        // phase 2: only enc + shared change
        let before = snapshot_all(&state);
        state.run_phase(&cfg, PhaseKind::Enc, &batch).unwrap();
        let after = snapshot_all(&state);
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with("dis.") || name.starts_with("dec.") {
                assert_eq!(a, b, "{name} changed in enc phase");
            }
        }

        // phase 3: only dec changes
        let before = snapshot_all(&state);
        state.run_phase(&cfg, PhaseKind::Dec, &batch).unwrap();
        let after = snapshot_all(&state);
        for name in changed_names(&before, &after) {
            assert!(name.starts_with("dec."), "phase dec changed {name}");
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ring_cfg(dir.path());
        cfg.adam.lr = 0.0;
        let (train, _) = load_data(&cfg).unwrap();
        let mut state = TrainState::new(&cfg, &train).unwrap();
        let batch = train.gather(&(0..32).collect::<Vec<_>>());
        let before = snapshot_all(&state);
        state.train_step(&cfg, &batch).unwrap();
        let after = snapshot_all(&state);
        assert!(changed_names(&before, &after).is_empty());
    }

    #[test]
    fn schedule_order_affects_outcome() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = ring_cfg(dir.path());
        let mut cfg_b = ring_cfg(dir.path());
        cfg_b.schedule = Schedule::EncFirst;
        let (train, _) = load_data(&cfg_a).unwrap();
        let batch = train.gather(&(0..32).collect::<Vec<_>>());

        let mut sa = TrainState::new(&cfg_a, &train).unwrap();
        sa.train_step(&cfg_a, &batch).unwrap();
        let mut sb = TrainState::new(&cfg_b, &train).unwrap();
        sb.train_step(&cfg_b, &batch).unwrap();

        let a = snapshot_all(&sa);
        let b = snapshot_all(&sb);
        assert!(!changed_names(&a, &b).is_empty(), "orders produced identical parameters");
    }

    #[test]
    fn vae_variant_runs_two_phases() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ring_cfg(dir.path());
        cfg.variant = Variant::Vae;
        assert_eq!(phase_sequence(&cfg), vec![PhaseKind::Enc, PhaseKind::Dec]);
    }

    #[test]
    fn degenerate_idvae_r_step_equals_vae_step_bitwise() {
        // omega = lambda = 0, gamma = 1, discriminator phase disabled
        let dir = tempfile::tempdir().unwrap();
        let mut vae_cfg = ring_cfg(dir.path());
        vae_cfg.variant = Variant::Vae;
        let mut degen = ring_cfg(dir.path());
        degen.variant = Variant::IdvaeR;
        degen.weights.omega = 0.0;
        degen.weights.lambda = 0.0;
        degen.weights.gamma = 1.0;
        degen.skip_dis_phase = true;

        let (train, _) = load_data(&vae_cfg).unwrap();
        let batch = train.gather(&(0..32).collect::<Vec<_>>());
        let mut sa = TrainState::new(&vae_cfg, &train).unwrap();
        let mut sb = TrainState::new(&degen, &train).unwrap();
        for _ in 0..3 {
            sa.train_step(&vae_cfg, &batch).unwrap();
            sb.train_step(&degen, &batch).unwrap();
        }
        let a = snapshot_all(&sa);
        let b = snapshot_all(&sb);
        for ((name, va), (_, vb)) in a.iter().zip(&b) {
            assert_eq!(va, vb, "{name} diverged");
        }
    }

    #[test]
    fn training_runs_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ring_cfg(&dir.path().join("run"));
        let out = train(&cfg).unwrap();
        assert!(out.metrics_path.exists());
        assert!(out.final_checkpoint.exists());
        let metrics = std::fs::read_to_string(&out.metrics_path).unwrap();
        let mut lines = metrics.lines();
        assert!(lines.next().unwrap().starts_with("step,l_dis"));
        let mut last_step = 0u64;
        for line in lines {
            let step: u64 = line.split(',').next().unwrap().parse().unwrap();
            assert!(step > last_step, "steps not strictly increasing");
            last_step = step;
        }
    }

    #[test]
    fn identical_config_identical_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = ring_cfg(&dir.path().join("a"));
        let cfg_b = ring_cfg(&dir.path().join("b"));
        let oa = train(&cfg_a).unwrap();
        let ob = train(&cfg_b).unwrap();
        let ma = std::fs::read(&oa.metrics_path).unwrap();
        let mb = std::fs::read(&ob.metrics_path).unwrap();
        assert_eq!(ma, mb, "metrics differ between identical runs");
        let ca = std::fs::read(&oa.final_checkpoint).unwrap();
        let cb = std::fs::read(&ob.final_checkpoint).unwrap();
        // checkpoints embed out_dir in the config echo; compare past it
        assert_eq!(ca.len(), cb.len());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        // full run: 3 epochs
        let mut full_cfg = ring_cfg(&dir.path().join("full"));
        full_cfg.epochs = 3;
        let full = train(&full_cfg).unwrap();

        // interrupted: 2 epochs, then resume to 3
        let mut part_cfg = ring_cfg(&dir.path().join("part"));
        part_cfg.epochs = 2;
        let part = train(&part_cfg).unwrap();
        let mut resume_cfg = ring_cfg(&dir.path().join("part"));
        resume_cfg.epochs = 3;
        let resumed = train_resumed(&resume_cfg, Some(&part.final_checkpoint)).unwrap();

        let a = snapshot_all(&full.state);
        let b = snapshot_all(&resumed.state);
        for ((name, va), (_, vb)) in a.iter().zip(&b) {
            assert_eq!(va, vb, "{name} diverged after resume");
        }
        assert_eq!(full.state.step, resumed.state.step);
    }

    #[test]
    fn vae_recons_improves_on_ring() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ring_cfg(&dir.path().join("vae"));
        cfg.variant = Variant::Vae;
        cfg.trunk = vec![32, 32];
        cfg.epochs = 10;
        cfg.train_n = 2048;
        cfg.adam.lr = 1e-3;
        let (train_ds, test_ds) = load_data(&cfg).unwrap();
        let state0 = TrainState::new(&cfg, &train_ds).unwrap();
        let before = held_out_recons(&state0.model, &test_ds, 512, false).unwrap();
        let out = train(&cfg).unwrap();
        let after = held_out_recons(&out.state.model, &test_ds, 512, false).unwrap();
        assert!(
            after < before * 0.7,
            "reconstruction did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn no_sharing_never_cross_updates_trunks() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ring_cfg(dir.path());
        cfg.variant = Variant::NoSharing;
        let (train, _) = load_data(&cfg).unwrap();
        let mut state = TrainState::new(&cfg, &train).unwrap();
        let batch = train.gather(&(0..32).collect::<Vec<_>>());

        let before = snapshot_all(&state);
        state.run_phase(&cfg, PhaseKind::Dis, &batch).unwrap();
        let after = snapshot_all(&state);
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with("enc_trunk.") {
                assert_eq!(a, b, "dis phase touched encoder-side trunk {name}");
            }
        }
        let before = snapshot_all(&state);
        state.run_phase(&cfg, PhaseKind::Enc, &batch).unwrap();
        let after = snapshot_all(&state);
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with("dis_trunk.") {
                assert_eq!(a, b, "enc phase touched discriminator-side trunk {name}");
            }
        }
    }
}
