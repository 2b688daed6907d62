//! Evaluation harness: Gaussian feature statistics, Fréchet distance, an
//! ensemble of feature experts with ranking-agreement reporting, held-out
//! reconstruction loss, and 2-D mode-coverage statistics.
//!
//! Experts are deliberately plural: Fréchet scores from a single feature
//! extractor can rank models differently than another equally-informed
//! extractor, so the report carries one ranking per expert plus a flag that
//! is true only when all rankings agree.

use std::sync::Mutex;

use nalgebra::DMatrix;

use crate::data::{Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{Adam, AdamParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Covariance ridge added before the matrix square root.
const COV_EPS: f64 = 1e-6;

/// Mean and covariance fitted to a feature sample.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// d x d, row-major, symmetrized.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of an [n, d] feature matrix.
pub fn fit_gaussian(features: &Tensor) -> Result<GaussianStats> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(Error::invalid("fit_gaussian", format!("expected [n,d], got {shape:?}")));
    }
    let (n, d) = (shape[0], shape[1]);
    if n < 2 {
        return Err(Error::invalid("fit_gaussian", format!("need n >= 2 samples, got {n}")));
    }
    let x = features.value();
    let mut mean = vec![0.0f64; d];
    for row in 0..n {
        for j in 0..d {
            mean[j] += x[row * d + j] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for row in 0..n {
        for i in 0..d {
            let di = x[row * d + i] as f64 - mean[i];
            for j in i..d {
                let dj = x[row * d + j] as f64 - mean[j];
                cov[i * d + j] += di * dj;
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianStats { mean, cov, n })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance between Gaussians:
/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), the matrix square root
/// taken via symmetric eigendecomposition of Sa^{1/2} Sb Sa^{1/2} with
/// negative eigenvalues clamped to zero. Identical stats return exactly 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::invalid(
            "frechet_distance",
            format!("dimension mismatch {d} vs {}", b.dim()),
        ));
    }
    if a.mean.iter().chain(&a.cov).chain(&b.mean).chain(&b.cov).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("frechet_distance: non-finite statistics".into()));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();

    let mut sa = DMatrix::from_row_slice(d, d, &a.cov);
    let mut sb = DMatrix::from_row_slice(d, d, &b.cov);
    for i in 0..d {
        sa[(i, i)] += COV_EPS;
        sb[(i, i)] += COV_EPS;
    }
    let sa_half = sym_sqrt(&sa);
    let mut inner = &sa_half * &sb * &sa_half;
    // enforce symmetry before the eigendecomposition
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (inner[(i, j)] + inner[(j, i)]);
            inner[(i, j)] = v;
            inner[(j, i)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if dist < -1e-6 {
        return Err(Error::Numeric(format!("frechet_distance went negative: {dist}")));
    }
    Ok(dist.max(0.0))
}

// ── experts ─────────────────────────────────────────────────────────────

struct DenseP {
    w: Tensor,
    b: Tensor,
}

enum ExpertNet {
    /// conv(3x3, s2) -> conv(3x3, s2) -> flatten -> dense feature -> dense logits
    Cnn { conv1: DenseP, conv2: DenseP, feat: DenseP, out: DenseP },
    /// dense -> dense feature -> dense logits
    Mlp { l1: DenseP, feat: DenseP, out: DenseP },
    /// flatten -> fixed random projection -> tanh
    Proj { w: Tensor, in_numel: usize },
}

/// A frozen feature extractor with an identifier and, for trained experts,
/// the held-out accuracy reached during training.
pub struct Expert {
    pub id: String,
    pub feature_dim: usize,
    pub held_out_accuracy: Option<f32>,
    net: ExpertNet,
}

/// Architecture menu for `train_expert`.
#[derive(Debug, Clone, Copy)]
pub enum ExpertArch {
    Cnn { c1: usize, c2: usize, feature_dim: usize },
    Mlp { hidden: usize, feature_dim: usize },
    RandomProjection { feature_dim: usize },
}

fn dense_param(rng: &mut Rng, fan_in: usize, out: usize) -> DenseP {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let mut data = vec![0.0f32; fan_in * out];
    for v in data.iter_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    DenseP { w: Tensor::param(&[fan_in, out], data), b: Tensor::param(&[out], vec![0.0; out]) }
}

fn conv_param(rng: &mut Rng, oc: usize, ic: usize, k: usize) -> DenseP {
    let fan_in = ic * k * k;
    let bound = 1.0 / (fan_in as f32).sqrt();
    let mut data = vec![0.0f32; oc * ic * k * k];
    for v in data.iter_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    DenseP { w: Tensor::param(&[oc, ic, k, k], data), b: Tensor::param(&[oc], vec![0.0; oc]) }
}

fn dense_fwd(g: &mut Graph, l: &DenseP, x: &Tensor) -> Result<Tensor> {
    let y = g.matmul(x, &l.w)?;
    let bias = g.broadcast_to(&l.b, &y.shape())?;
    g.add(&y, &bias)
}

impl Expert {
    /// Forward to the logits (classifier experts only).
    fn logits(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        match &self.net {
            ExpertNet::Cnn { conv1, conv2, feat, out, .. } => {
                let h = self.cnn_feat(g, x, conv1, conv2, feat)?;
                dense_fwd(g, out, &h)
            }
            ExpertNet::Mlp { l1, feat, out, .. } => {
                let h = self.mlp_feat(g, x, l1, feat)?;
                dense_fwd(g, out, &h)
            }
            ExpertNet::Proj { .. } => {
                Err(Error::invalid("expert", "random-projection expert has no classifier"))
            }
        }
    }

    fn cnn_feat(
        &self,
        g: &mut Graph,
        x: &Tensor,
        conv1: &DenseP,
        conv2: &DenseP,
        feat: &DenseP,
    ) -> Result<Tensor> {
        let h = g.conv2d(x, &conv1.w, 2, 1)?;
        let bias = g.broadcast_to(&conv1.b, &h.shape())?;
        let h = g.add(&h, &bias)?;
        let h = g.leaky_relu(&h, 0.2);
        let h = g.conv2d(&h, &conv2.w, 2, 1)?;
        let bias = g.broadcast_to(&conv2.b, &h.shape())?;
        let h = g.add(&h, &bias)?;
        let h = g.leaky_relu(&h, 0.2);
        let b = h.shape()[0];
        let flat = h.numel() / b;
        let h = g.reshape(&h, &[b, flat])?;
        let h = dense_fwd(g, feat, &h)?;
        Ok(g.leaky_relu(&h, 0.2))
    }

    fn mlp_feat(&self, g: &mut Graph, x: &Tensor, l1: &DenseP, feat: &DenseP) -> Result<Tensor> {
        let h = dense_fwd(g, l1, x)?;
        let h = g.leaky_relu(&h, 0.2);
        let h = dense_fwd(g, feat, &h)?;
        Ok(g.leaky_relu(&h, 0.2))
    }

    /// Feature activations [n, feature_dim]; deterministic, no gradients.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        match &self.net {
            ExpertNet::Cnn { conv1, conv2, feat, .. } => self.cnn_feat(&mut g, x, conv1, conv2, feat),
            ExpertNet::Mlp { l1, feat, .. } => self.mlp_feat(&mut g, x, l1, feat),
            ExpertNet::Proj { w, in_numel } => {
                let b = x.shape()[0];
                let flat = g.reshape(x, &[b, *in_numel])?;
                let y = g.matmul(&flat, w)?;
                Ok(g.tanh(&y))
            }
        }
    }

    /// Arg-max class predictions (classifier experts only).
    pub fn classify(&self, x: &Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::inference();
        let logits = self.logits(&mut g, x)?;
        let shape = logits.shape();
        let (n, k) = (shape[0], shape[1]);
        let v = logits.value();
        Ok((0..n)
            .map(|i| {
                let row = &v[i * k..(i + 1) * k];
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f32> {
        let labels =
            ds.labels.as_ref().ok_or_else(|| Error::Data("accuracy needs labels".into()))?;
        let mut correct = 0usize;
        let n = ds.len();
        let mut at = 0;
        while at < n {
            let hi = (at + 256).min(n);
            let idx: Vec<usize> = (at..hi).collect();
            let batch = ds.gather(&idx);
            let preds = self.classify(&batch.x)?;
            for (p, &i) in preds.iter().zip(&idx) {
                if *p == labels[i] {
                    correct += 1;
                }
            }
            at = hi;
        }
        Ok(correct as f32 / n as f32)
    }

    fn params(&self) -> Vec<crate::nets::NamedParam> {
        use crate::nets::NamedParam;
        let mk = |name: &str, t: &Tensor| NamedParam { name: name.into(), tensor: t.clone() };
        match &self.net {
            ExpertNet::Cnn { conv1, conv2, feat, out, .. } => vec![
                mk("conv1.w", &conv1.w),
                mk("conv1.b", &conv1.b),
                mk("conv2.w", &conv2.w),
                mk("conv2.b", &conv2.b),
                mk("feat.w", &feat.w),
                mk("feat.b", &feat.b),
                mk("out.w", &out.w),
                mk("out.b", &out.b),
            ],
            ExpertNet::Mlp { l1, feat, out, .. } => vec![
                mk("l1.w", &l1.w),
                mk("l1.b", &l1.b),
                mk("feat.w", &feat.w),
                mk("feat.b", &feat.b),
                mk("out.w", &out.w),
                mk("out.b", &out.b),
            ],
            ExpertNet::Proj { w, .. } => vec![mk("w", w)],
        }
    }

    fn freeze(&self) {
        for p in self.params() {
            p.tensor.set_requires_grad(false);
        }
    }
}

/// Train a frozen feature expert on a labeled dataset. The random-projection
/// arch skips training entirely. Divergence (non-finite loss) is an error.
pub fn train_expert(
    id: &str,
    train: &Dataset,
    held_out: &Dataset,
    arch: ExpertArch,
    seed: u64,
    epochs: usize,
) -> Result<Expert> {
    let mut rng = Rng::new(seed).stream("expert");
    let sample_shape = train.sample_shape();
    let net = match arch {
        ExpertArch::Cnn { c1, c2, feature_dim } => {
            if sample_shape.len() != 3 {
                return Err(Error::invalid("train_expert", "cnn expert needs image data"));
            }
            let (ci, h, w) = (sample_shape[0], sample_shape[1], sample_shape[2]);
            let conv1 = conv_param(&mut rng, c1, ci, 3);
            let conv2 = conv_param(&mut rng, c2, c1, 3);
            let h1 = crate::kernels::conv_out(h, 3, 2, 1);
            let w1 = crate::kernels::conv_out(w, 3, 2, 1);
            let h2 = crate::kernels::conv_out(h1, 3, 2, 1);
            let w2 = crate::kernels::conv_out(w1, 3, 2, 1);
            let flat = c2 * h2 * w2;
            let feat = dense_param(&mut rng, flat, feature_dim);
            let out = dense_param(&mut rng, feature_dim, train.num_classes);
            ExpertNet::Cnn { conv1, conv2, feat, out }
        }
        ExpertArch::Mlp { hidden, feature_dim } => {
            if sample_shape.len() != 1 {
                return Err(Error::invalid("train_expert", "mlp expert needs vector data"));
            }
            let in_dim = sample_shape[0];
            let l1 = dense_param(&mut rng, in_dim, hidden);
            let feat = dense_param(&mut rng, hidden, feature_dim);
            let out = dense_param(&mut rng, feature_dim, train.num_classes);
            ExpertNet::Mlp { l1, feat, out }
        }
        ExpertArch::RandomProjection { feature_dim } => {
            let in_numel: usize = sample_shape.iter().product();
            let bound = 1.0 / (in_numel as f32).sqrt();
            let mut data = vec![0.0f32; in_numel * feature_dim];
            for v in data.iter_mut() {
                *v = rng.uniform_range(-bound, bound);
            }
            ExpertNet::Proj { w: Tensor::param(&[in_numel, feature_dim], data), in_numel }
        }
    };
    let feature_dim = match arch {
        ExpertArch::Cnn { feature_dim, .. }
        | ExpertArch::Mlp { feature_dim, .. }
        | ExpertArch::RandomProjection { feature_dim } => feature_dim,
    };
    let mut expert = Expert { id: id.to_string(), feature_dim, held_out_accuracy: None, net };

    if matches!(arch, ExpertArch::RandomProjection { .. }) {
        expert.freeze();
        return Ok(expert);
    }

    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("train_expert needs a labeled dataset".into()))?;
    let params = expert.params();
    let mut opt = Adam::new(AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let batch_size = 64usize;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        let mut shuffle_rng = Rng::new(seed).stream_indexed("expert-shuffle", epoch as u64);
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = train.gather(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let logits = expert.logits(&mut g, &batch.x)?;
            let loss = g.cross_entropy(&logits, &ys)?;
            if !loss.item().is_finite() {
                return Err(Error::Numeric(format!(
                    "expert {id} diverged at epoch {epoch} (loss {})",
                    loss.item()
                )));
            }
            for p in &params {
                p.tensor.zero_grad();
            }
            g.backward(&loss)?;
            opt.step(&params);
        }
    }
    expert.freeze();
    expert.held_out_accuracy = Some(expert.accuracy(held_out)?);
    Ok(expert)
}

/// The battery used when no explicit expert list is given: two trained
/// classifiers with different widths and seeds, plus one fixed random
/// projection. Feature dimension 64 throughout.
pub fn default_battery(image_data: bool, seed: u64) -> Vec<(String, ExpertArch, u64)> {
    if image_data {
        vec![
            ("cnn_a".into(), ExpertArch::Cnn { c1: 8, c2: 16, feature_dim: 64 }, seed ^ 0xA1),
            ("cnn_b".into(), ExpertArch::Cnn { c1: 12, c2: 24, feature_dim: 64 }, seed ^ 0xB2),
            ("proj".into(), ExpertArch::RandomProjection { feature_dim: 64 }, seed ^ 0xC3),
        ]
    } else {
        vec![
            ("mlp_a".into(), ExpertArch::Mlp { hidden: 64, feature_dim: 64 }, seed ^ 0xA1),
            ("mlp_b".into(), ExpertArch::Mlp { hidden: 96, feature_dim: 64 }, seed ^ 0xB2),
            ("proj".into(), ExpertArch::RandomProjection { feature_dim: 64 }, seed ^ 0xC3),
        ]
    }
}

// ── ensemble protocol ───────────────────────────────────────────────────

/// Anything that can produce data-space samples for scoring.
pub trait SampleSource {
    fn name(&self) -> &str;
    /// Fresh samples for repeat `rep`; must be deterministic in (self, rep).
    fn generate(&mut self, n: usize, rep: usize) -> Result<Tensor>;
}

/// Scores real data against itself by resampling rows.
pub struct RealDataSource<'a> {
    pub label: String,
    pub data: &'a Dataset,
    pub seed: u64,
}

impl SampleSource for RealDataSource<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn generate(&mut self, n: usize, rep: usize) -> Result<Tensor> {
        let mut rng = Rng::new(self.seed).stream_indexed("resample", rep as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.below(self.data.len())).collect();
        Ok(self.data.gather(&idx).x)
    }
}

/// Canned sample sets, one per repeat (cycled); for protocol fixtures.
pub struct FixtureSource {
    pub label: String,
    pub batches: Vec<Tensor>,
}

impl SampleSource for FixtureSource {
    fn name(&self) -> &str {
        &self.label
    }

    fn generate(&mut self, _n: usize, rep: usize) -> Result<Tensor> {
        Ok(self.batches[rep % self.batches.len()].clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub expert: String,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Per expert: model names ordered best (lowest mean) to worst.
    pub rankings: Vec<(String, Vec<String>)>,
    /// True iff every expert induces the same model ordering.
    pub agreement: bool,
    /// Held-out reconstruction MSE per model, when the caller computed it.
    pub recons: Vec<(String, f64)>,
    /// (model, modes covered, high-quality fraction) for 2-D data.
    pub coverage: Vec<(String, usize, f64)>,
}

impl EvalReport {
    /// CSV with header `model,expert,mean,std,repeats`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,expert,mean,std,repeats\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.model, r.expert, r.mean, r.std, r.repeats));
        }
        s
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:<10} {:>14} {:>12} {:>8}\n",
            "model", "expert", "frechet mean", "std", "repeats"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:<10} {:>14.4} {:>12.4} {:>8}\n",
                r.model, r.expert, r.mean, r.std, r.repeats
            ));
        }
        if !self.recons.is_empty() {
            out.push_str("\nreconstruction MSE (held-out):\n");
            for (m, v) in &self.recons {
                out.push_str(&format!("{m:<24} {v:.6}\n"));
            }
        }
        if !self.coverage.is_empty() {
            out.push_str("\nmode coverage:\n");
            for (m, covered, hq) in &self.coverage {
                out.push_str(&format!("{m:<24} modes {covered}, high-quality {hq:.3}\n"));
            }
        }
        out.push_str("\nrankings (best to worst):\n");
        for (e, order) in &self.rankings {
            out.push_str(&format!("{e:<10} {}\n", order.join(" < ")));
        }
        out.push_str(&format!("expert agreement: {}\n", self.agreement));
        out
    }
}

/// Fréchet-score every (model, expert) pair over `repeats` fresh generations
/// against the fixed real sample, then rank models per expert.
pub fn ensemble_eval(
    models: &mut [&mut dyn SampleSource],
    experts: &[Expert],
    real: &Tensor,
    n_samples: usize,
    repeats: usize,
) -> Result<EvalReport> {
    if experts.len() < 2 {
        return Err(Error::invalid("ensemble_eval", "need at least 2 experts"));
    }
    if models.is_empty() || repeats == 0 || n_samples < 2 {
        return Err(Error::invalid("ensemble_eval", "need models, repeats >= 1, n_samples >= 2"));
    }
    for e in experts {
        if n_samples < 10 * e.feature_dim {
            eprintln!(
                "warning: n_samples={} is below 10x feature dim {} for expert {}; \
                 covariance estimates will be noisy",
                n_samples, e.feature_dim, e.id
            );
        }
    }

    let real_stats: Vec<GaussianStats> =
        experts.iter().map(|e| fit_gaussian(&e.features(real)?)).collect::<Result<_>>()?;

    // Extract features serially (models and experts are not thread-safe),
    // then compute the distances in parallel.
    let mut jobs: Vec<(usize, usize, usize, GaussianStats)> = Vec::new();
    for (mi, model) in models.iter_mut().enumerate() {
        for rep in 0..repeats {
            let x = model.generate(n_samples, rep)?;
            for (ei, expert) in experts.iter().enumerate() {
                let stats = fit_gaussian(&expert.features(&x)?)?;
                jobs.push((mi, ei, rep, stats));
            }
        }
    }

    let mut scores = vec![vec![vec![0.0f64; repeats]; experts.len()]; models.len()];
    let threads = eval_threads().min(jobs.len().max(1));
    if threads <= 1 {
        for (mi, ei, rep, stats) in &jobs {
            scores[*mi][*ei][*rep] = frechet_distance(&real_stats[*ei], stats)?;
        }
    } else {
        let results: Mutex<Vec<Result<f64>>> =
            Mutex::new((0..jobs.len()).map(|_| Ok(0.0)).collect());
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let (_, ei, _, stats) = &jobs[i];
                    let r = frechet_distance(&real_stats[*ei], stats);
                    results.lock().unwrap()[i] = r;
                });
            }
        });
        let results = results.into_inner().unwrap();
        for (job, res) in jobs.iter().zip(results) {
            let (mi, ei, rep, _) = job;
            scores[*mi][*ei][*rep] = res?;
        }
    }

    let mut rows = Vec::new();
    for (mi, model) in models.iter().enumerate() {
        for (ei, expert) in experts.iter().enumerate() {
            let vals = &scores[mi][ei];
            let mean = vals.iter().sum::<f64>() / repeats as f64;
            let std = if repeats >= 2 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (repeats - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            rows.push(EvalRow {
                model: model.name().to_string(),
                expert: expert.id.clone(),
                mean,
                std,
                repeats,
            });
        }
    }

    let mut rankings = Vec::new();
    for (ei, expert) in experts.iter().enumerate() {
        let mut order: Vec<usize> = (0..models.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (
                scores[a][ei].iter().sum::<f64>(),
                scores[b][ei].iter().sum::<f64>(),
            );
            sa.partial_cmp(&sb).unwrap().then_with(|| models[a].name().cmp(models[b].name()))
        });
        rankings.push((
            expert.id.clone(),
            order.iter().map(|&i| models[i].name().to_string()).collect::<Vec<_>>(),
        ));
    }
    let agreement = rankings.windows(2).all(|w| w[0].1 == w[1].1);

    Ok(EvalReport { rows, rankings, agreement, recons: Vec::new(), coverage: Vec::new() })
}

fn eval_threads() -> usize {
    if let Ok(v) = std::env::var("IDVAE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

// ── mode coverage ───────────────────────────────────────────────────────

/// A sample is high-quality iff it lies within 3 sigma of its nearest mixture
/// center; a mode counts as covered iff at least max(20, n/(10k)) high-quality
/// samples map to it. Returns (modes covered, high-quality fraction).
pub fn mode_coverage(samples: &Tensor, spec: &MixtureSpec) -> (usize, f64) {
    let shape = samples.shape();
    assert_eq!(shape.len(), 2, "mode_coverage wants [n,2] points");
    assert_eq!(shape[1], 2, "mode_coverage wants 2-D points");
    let n = shape[0];
    let k = spec.k();
    let v = samples.value();
    let threshold = 3.0 * spec.sigma;
    let mut per_mode = vec![0usize; k];
    let mut hq = 0usize;
    for i in 0..n {
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        let mut best = 0usize;
        let mut best_d2 = f32::INFINITY;
        for (m, (cx, cy)) in spec.centers.iter().enumerate() {
            let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if d2 < best_d2 {
                best_d2 = d2;
                best = m;
            }
        }
        if best_d2.sqrt() <= threshold {
            per_mode[best] += 1;
            hq += 1;
        }
    }
    let need = 20.max(n / (10 * k));
    let covered = per_mode.iter().filter(|&&c| c >= need).count();
    (covered, hq as f64 / n as f64)
}
