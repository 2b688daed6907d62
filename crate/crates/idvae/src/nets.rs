//! Shared-trunk encoder/discriminator, decoder/generator, and the four-way
//! parameter partition.
//!
//! The trunk maps data to a flat feature vector (the penultimate layer).
//! Three heads hang off it: two single dense layers producing the posterior
//! mean and log-variance, and one single dense layer to a sigmoid unit
//! acting as the discriminator output. The decoder mirrors the trunk and is
//! shared with the generator role.
//!
//! Parameters live in exactly one of four disjoint sets: `shared` (trunk),
//! `enc` (mu + log-variance heads), `dis` (discriminator head), `dec`
//! (decoder). In `no_sharing` mode the trunk is duplicated; the encoder-side
//! copy joins `enc`, the discriminator-side copy joins `dis`, and `shared`
//! is empty.
//!
//! Conditional nets take a one-hot (or multi-hot) vector: the decoder sees
//! it concatenated to `z` at the input, the trunk sees it appended after
//! the first layer (channel-wise constant maps for convolutional trunks).

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::{conv_out, conv_transpose_out};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkLayer {
    Dense { out: usize },
    Conv { out_ch: usize, kernel: usize, stride: usize, pad: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    /// [d] for vector data, [c, h, w] for images.
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
    pub trunk: Vec<TrunkLayer>,
    /// 0 for unconditional nets.
    pub cond_dim: usize,
    /// Duplicate the trunk instead of sharing it (the VAE-GAN layout).
    pub no_sharing: bool,
    /// Negative slope of the leaky rectifier used throughout.
    pub leak: f32,
}

impl NetSpec {
    /// Dense trunk for 2-D point data: 2 -> 128 -> 128, latent dim 2.
    pub fn ring2d() -> NetSpec {
        NetSpec::vector(2, &[128, 128], 2)
    }

    pub fn vector(input_dim: usize, widths: &[usize], latent_dim: usize) -> NetSpec {
        NetSpec {
            input_shape: vec![input_dim],
            latent_dim,
            trunk: widths.iter().map(|&w| TrunkLayer::Dense { out: w }).collect(),
            cond_dim: 0,
            no_sharing: false,
            leak: 0.2,
        }
    }

    /// Convolutional trunk of stride-2, kernel-4 layers with the given
    /// channel progression; decoder mirrors it with transposed convolutions.
    pub fn image(input: [usize; 3], channels: &[usize], latent_dim: usize) -> NetSpec {
        NetSpec {
            input_shape: input.to_vec(),
            latent_dim,
            trunk: channels
                .iter()
                .map(|&c| TrunkLayer::Conv { out_ch: c, kernel: 4, stride: 2, pad: 1 })
                .collect(),
            cond_dim: 0,
            no_sharing: false,
            leak: 0.2,
        }
    }

    pub fn conditional(mut self, cond_dim: usize) -> NetSpec {
        self.cond_dim = cond_dim;
        self
    }

    pub fn without_sharing(mut self) -> NetSpec {
        self.no_sharing = true;
        self
    }

    pub fn is_image(&self) -> bool {
        self.input_shape.len() == 3
    }

    pub fn is_conditional(&self) -> bool {
        self.cond_dim > 0
    }

    /// Index of the designated shared feature layer (the trunk output).
    pub fn feature_layer(&self) -> usize {
        self.trunk.len()
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("net", "latent_dim must be >= 1"));
        }
        if self.trunk.is_empty() {
            return Err(Error::invalid("net", "trunk must have at least one layer"));
        }
        match self.input_shape.len() {
            1 => {
                if self.trunk.iter().any(|l| !matches!(l, TrunkLayer::Dense { .. })) {
                    return Err(Error::invalid("net", "vector input requires a dense trunk"));
                }
            }
            3 => {
                if self.trunk.iter().any(|l| !matches!(l, TrunkLayer::Conv { .. })) {
                    return Err(Error::invalid("net", "image input requires a conv trunk"));
                }
            }
            _ => {
                return Err(Error::invalid(
                    "net",
                    format!("input shape must be [d] or [c,h,w], got {:?}", self.input_shape),
                ))
            }
        }
        Ok(())
    }
}

/// Shape plan for one trunk: per-layer input channel/width counts (with the
/// conditional injection accounted for) plus spatial extents for images.
#[derive(Debug, Clone)]
struct TrunkPlan {
    /// Dense: input width per layer. Conv: input channels per layer.
    in_dims: Vec<usize>,
    /// Conv only: (h, w) entering each layer, plus the final extents.
    extents: Vec<(usize, usize)>,
    /// Flattened feature width of the trunk output.
    feat_dim: usize,
    /// Channel/width progression without conditional channels (decoder mirror).
    base_dims: Vec<usize>,
}

fn plan_trunk(spec: &NetSpec) -> Result<TrunkPlan> {
    let cond = spec.cond_dim;
    if spec.is_image() {
        let (c0, mut h, mut w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
        let mut in_dims = Vec::new();
        let mut extents = vec![(h, w)];
        let mut base_dims = vec![c0];
        let mut cur_c = c0;
        for (i, layer) in spec.trunk.iter().enumerate() {
            let TrunkLayer::Conv { out_ch, kernel, stride, pad } = *layer else { unreachable!() };
            in_dims.push(cur_c);
            if h + 2 * pad < kernel || w + 2 * pad < kernel {
                return Err(Error::invalid(
                    "net",
                    format!("trunk layer {i}: {h}x{w} too small for kernel {kernel}"),
                ));
            }
            h = conv_out(h, kernel, stride, pad);
            w = conv_out(w, kernel, stride, pad);
            if h == 0 || w == 0 {
                return Err(Error::invalid("net", format!("trunk layer {i} collapses to zero extent")));
            }
            extents.push((h, w));
            base_dims.push(out_ch);
            cur_c = out_ch;
            if i == 0 {
                cur_c += cond; // conditioning maps appended after the first layer
            }
        }
        Ok(TrunkPlan { in_dims, extents, feat_dim: cur_c * h * w, base_dims })
    } else {
        let d0 = spec.input_shape[0];
        let mut in_dims = Vec::new();
        let mut base_dims = vec![d0];
        let mut cur = d0;
        for (i, layer) in spec.trunk.iter().enumerate() {
            let TrunkLayer::Dense { out } = *layer else { unreachable!() };
            in_dims.push(cur);
            base_dims.push(out);
            cur = out;
            if i == 0 {
                cur += cond;
            }
        }
        Ok(TrunkPlan { in_dims, extents: Vec::new(), feat_dim: cur, base_dims })
    }
}

#[derive(Clone)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Shared,
    Enc,
    Dis,
    Dec,
}

pub const ALL_SETS: [ParamSet; 4] = [ParamSet::Shared, ParamSet::Enc, ParamSet::Dis, ParamSet::Dec];

/// The four disjoint parameter sets.
pub struct ParamPartition {
    pub shared: Vec<NamedParam>,
    pub enc: Vec<NamedParam>,
    pub dis: Vec<NamedParam>,
    pub dec: Vec<NamedParam>,
}

impl ParamPartition {
    pub fn set(&self, which: ParamSet) -> &[NamedParam] {
        match which {
            ParamSet::Shared => &self.shared,
            ParamSet::Enc => &self.enc,
            ParamSet::Dis => &self.dis,
            ParamSet::Dec => &self.dec,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &NamedParam> {
        self.shared.iter().chain(&self.enc).chain(&self.dis).chain(&self.dec)
    }

    pub fn set_trainable(&self, sets: &[ParamSet], on: bool) {
        for s in sets {
            for p in self.set(*s) {
                p.tensor.set_requires_grad(on);
            }
        }
    }

    pub fn zero_grads(&self, sets: &[ParamSet]) {
        for s in sets {
            for p in self.set(*s) {
                p.tensor.zero_grad();
            }
        }
    }

    pub fn zero_grads_all(&self) {
        self.zero_grads(&ALL_SETS);
    }

    /// Values snapshot keyed by name, for update-isolation checks.
    pub fn snapshot(&self, which: ParamSet) -> Vec<(String, Vec<f32>)> {
        self.set(which).iter().map(|p| (p.name.clone(), p.tensor.value())).collect()
    }

    fn assert_disjoint(&self) {
        let sets: Vec<&[NamedParam]> = vec![&self.shared, &self.enc, &self.dis, &self.dec];
        for (i, a) in sets.iter().enumerate() {
            for b in sets.iter().skip(i + 1) {
                for pa in a.iter() {
                    for pb in b.iter() {
                        assert!(
                            !pa.tensor.ptr_eq(&pb.tensor),
                            "parameter {} appears in two sets",
                            pa.name
                        );
                    }
                }
            }
        }
    }
}

/// Which trunk copy to run (only distinct in `no_sharing` mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkPath {
    Encoder,
    Discriminator,
}

struct DenseLayer {
    w: Tensor,
    b: Tensor,
}

impl DenseLayer {
    fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let y = g.matmul(x, &self.w)?;
        let bias = g.broadcast_to(&self.b, &y.shape())?;
        g.add(&y, &bias)
    }
}

struct ConvLayer {
    w: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
}

struct DeconvLayer {
    w: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
}

enum TrunkNet {
    Dense(Vec<DenseLayer>),
    Conv(Vec<ConvLayer>),
}

enum DecoderNet {
    Dense(Vec<DenseLayer>),
    Conv { fc: DenseLayer, unflatten: (usize, usize, usize), layers: Vec<DeconvLayer> },
}

/// Posterior parameters and the reparameterized draw for one batch.
pub struct LatentCode {
    pub mu: Tensor,
    pub log_var: Tensor,
    pub sample: Tensor,
}

pub struct Model {
    pub spec: NetSpec,
    plan: TrunkPlan,
    trunk_enc: TrunkNet,
    /// Same layer objects as `trunk_enc` unless `no_sharing`.
    trunk_dis: TrunkNet,
    mu_head: DenseLayer,
    logvar_head: DenseLayer,
    dis_head: DenseLayer,
    decoder: DecoderNet,
    pub partition: ParamPartition,
}

fn init_dense(rng: &mut Rng, name: &str, fan_in: usize, out: usize, sink: &mut Vec<NamedParam>) -> DenseLayer {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let mut data = vec![0.0f32; fan_in * out];
    for v in data.iter_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    let w = Tensor::param(&[fan_in, out], data);
    let b = Tensor::param(&[out], vec![0.0; out]);
    sink.push(NamedParam { name: format!("{name}.w"), tensor: w.clone() });
    sink.push(NamedParam { name: format!("{name}.b"), tensor: b.clone() });
    DenseLayer { w, b }
}

impl Model {
    pub fn new(spec: NetSpec, rng: &mut Rng) -> Result<Model> {
        spec.validate()?;
        let plan = plan_trunk(&spec)?;
        let mut rng = rng.stream("init");
        let mut shared = Vec::new();
        let mut enc = Vec::new();
        let mut dis = Vec::new();
        let mut dec = Vec::new();

        let build_trunk = |rng: &mut Rng, prefix: &str, sink: &mut Vec<NamedParam>| -> TrunkNet {
            match spec.input_shape.len() {
                1 => {
                    let mut layers = Vec::new();
                    for (i, layer) in spec.trunk.iter().enumerate() {
                        let TrunkLayer::Dense { out } = *layer else { unreachable!() };
                        layers.push(init_dense(rng, &format!("{prefix}.{i}"), plan.in_dims[i], out, sink));
                    }
                    TrunkNet::Dense(layers)
                }
                _ => {
                    let mut layers = Vec::new();
                    for (i, layer) in spec.trunk.iter().enumerate() {
                        let TrunkLayer::Conv { out_ch, kernel, stride, pad } = *layer else {
                            unreachable!()
                        };
                        let ic = plan.in_dims[i];
                        let fan_in = ic * kernel * kernel;
                        let bound = 1.0 / (fan_in as f32).sqrt();
                        let n = out_ch * ic * kernel * kernel;
                        let mut data = vec![0.0f32; n];
                        for v in data.iter_mut() {
                            *v = rng.uniform_range(-bound, bound);
                        }
                        let w = Tensor::param(&[out_ch, ic, kernel, kernel], data);
                        let b = Tensor::param(&[out_ch], vec![0.0; out_ch]);
                        sink.push(NamedParam { name: format!("{prefix}.{i}.w"), tensor: w.clone() });
                        sink.push(NamedParam { name: format!("{prefix}.{i}.b"), tensor: b.clone() });
                        layers.push(ConvLayer { w, b, stride, pad });
                    }
                    TrunkNet::Conv(layers)
                }
            }
        };

        let (trunk_enc, trunk_dis) = if spec.no_sharing {
            let te = build_trunk(&mut rng, "enc_trunk", &mut enc);
            let td = build_trunk(&mut rng, "dis_trunk", &mut dis);
            (te, td)
        } else {
            let te = build_trunk(&mut rng, "trunk", &mut shared);
            let td = match &te {
                TrunkNet::Dense(layers) => TrunkNet::Dense(
                    layers
                        .iter()
                        .map(|l| DenseLayer { w: l.w.clone(), b: l.b.clone() })
                        .collect(),
                ),
                TrunkNet::Conv(layers) => TrunkNet::Conv(
                    layers
                        .iter()
                        .map(|l| ConvLayer { w: l.w.clone(), b: l.b.clone(), stride: l.stride, pad: l.pad })
                        .collect(),
                ),
            };
            (te, td)
        };

        let feat = plan.feat_dim;
        let mu_head = init_dense(&mut rng, "mu", feat, spec.latent_dim, &mut enc);
        let logvar_head = init_dense(&mut rng, "logvar", feat, spec.latent_dim, &mut enc);
        let dis_head = init_dense(&mut rng, "dis", feat, 1, &mut dis);

        let decoder = if spec.is_image() {
            let (c_last, (h_last, w_last)) =
                (plan.base_dims[plan.base_dims.len() - 1], *plan.extents.last().unwrap());
            let flat = c_last * h_last * w_last;
            let fc = init_dense(&mut rng, "dec.fc", spec.latent_dim + spec.cond_dim, flat, &mut dec);
            let mut layers = Vec::new();
            for i in (0..spec.trunk.len()).rev() {
                let TrunkLayer::Conv { kernel, stride, pad, .. } = spec.trunk[i] else {
                    unreachable!()
                };
                let ic = plan.base_dims[i + 1];
                let oc = plan.base_dims[i];
                let (h_in, _) = plan.extents[i + 1];
                let (h_out, _) = plan.extents[i];
                let base = conv_transpose_out(h_in, kernel, stride, pad, 0);
                if base > h_out {
                    return Err(Error::invalid(
                        "net",
                        format!("decoder layer {i} cannot mirror extent {h_in} -> {h_out}"),
                    ));
                }
                let out_pad = h_out - base;
                if out_pad >= stride.max(1) + 1 {
                    return Err(Error::invalid(
                        "net",
                        format!("decoder layer {i} needs output padding {out_pad} >= stride+1"),
                    ));
                }
                let fan_in = ic * kernel * kernel;
                let bound = 1.0 / (fan_in as f32).sqrt();
                let n = ic * oc * kernel * kernel;
                let mut data = vec![0.0f32; n];
                for v in data.iter_mut() {
                    *v = rng.uniform_range(-bound, bound);
                }
                let name = format!("dec.{}", spec.trunk.len() - 1 - i);
                let w = Tensor::param(&[ic, oc, kernel, kernel], data);
                let b = Tensor::param(&[oc], vec![0.0; oc]);
                dec.push(NamedParam { name: format!("{name}.w"), tensor: w.clone() });
                dec.push(NamedParam { name: format!("{name}.b"), tensor: b.clone() });
                layers.push(DeconvLayer { w, b, stride, pad, out_pad });
            }
            DecoderNet::Conv { fc, unflatten: (c_last, h_last, w_last), layers }
        } else {
            // Mirror the dense widths: z(+cond) -> w_last -> ... -> w_0 -> input.
            let mut dims = vec![spec.latent_dim + spec.cond_dim];
            for d in plan.base_dims.iter().skip(1).rev() {
                dims.push(*d);
            }
            dims.push(spec.input_shape[0]);
            let mut layers = Vec::new();
            for i in 0..dims.len() - 1 {
                layers.push(init_dense(&mut rng, &format!("dec.{i}"), dims[i], dims[i + 1], &mut dec));
            }
            DecoderNet::Dense(layers)
        };

        let partition = ParamPartition { shared, enc, dis, dec };
        partition.assert_disjoint();
        Ok(Model {
            spec,
            plan,
            trunk_enc,
            trunk_dis,
            mu_head,
            logvar_head,
            dis_head,
            decoder,
            partition,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.plan.feat_dim
    }

    fn check_input(&self, x: &Tensor, op: &'static str) -> Result<usize> {
        let s = x.shape();
        if s.len() != self.spec.input_shape.len() + 1 || s[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape { op, lhs: s, rhs: self.spec.input_shape.clone() });
        }
        Ok(s[0])
    }

    fn check_cond(&self, cond: Option<&Tensor>, batch: usize, op: &'static str) -> Result<Option<Tensor>> {
        match (self.spec.cond_dim, cond) {
            (0, None) => Ok(None),
            (0, Some(_)) => Err(Error::invalid(op, "conditioning supplied to an unconditional net")),
            (d, Some(c)) => {
                let s = c.shape();
                if s != vec![batch, d] {
                    return Err(Error::Shape { op, lhs: s, rhs: vec![batch, d] });
                }
                Ok(Some(c.clone()))
            }
            (_, None) => Err(Error::invalid(op, "conditional net requires a conditioning batch")),
        }
    }

    /// Run a trunk copy to the designated feature layer.
    fn trunk_forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        cond: Option<&Tensor>,
        path: TrunkPath,
    ) -> Result<Tensor> {
        let batch = self.check_input(x, "trunk")?;
        let cond = self.check_cond(cond, batch, "trunk")?;
        let trunk = match path {
            TrunkPath::Encoder => &self.trunk_enc,
            TrunkPath::Discriminator => &self.trunk_dis,
        };
        let leak = self.spec.leak;
        match trunk {
            TrunkNet::Dense(layers) => {
                let mut h = x.clone();
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(g, &h)?;
                    h = g.leaky_relu(&h, leak);
                    if i == 0 {
                        if let Some(c) = &cond {
                            h = g.concat(&[&h, c], 1)?;
                        }
                    }
                }
                Ok(h)
            }
            TrunkNet::Conv(layers) => {
                let mut h = x.clone();
                for (i, layer) in layers.iter().enumerate() {
                    h = g.conv2d(&h, &layer.w, layer.stride, layer.pad)?;
                    let bias = g.broadcast_to(&layer.b, &h.shape())?;
                    h = g.add(&h, &bias)?;
                    h = g.leaky_relu(&h, leak);
                    if i == 0 {
                        if let Some(c) = &cond {
                            let s = h.shape();
                            let maps = g.broadcast_to(c, &[s[0], self.spec.cond_dim, s[2], s[3]])?;
                            h = g.concat(&[&h, &maps], 1)?;
                        }
                    }
                }
                let n = h.numel() / batch;
                g.reshape(&h, &[batch, n])
            }
        }
    }

    /// Trunk output at layer `layer` (must be the designated feature layer).
    /// This is the representation the feature-space reconstruction loss uses.
    pub fn trunk_features(
        &self,
        g: &mut Graph,
        x: &Tensor,
        cond: Option<&Tensor>,
        layer: usize,
        path: TrunkPath,
    ) -> Result<Tensor> {
        if layer != self.spec.feature_layer() {
            return Err(Error::invalid(
                "trunk_features",
                format!("layer {layer} is not the designated feature layer {}", self.spec.feature_layer()),
            ));
        }
        self.trunk_forward(g, x, cond, path)
    }

    /// Posterior parameters plus a reparameterized sample with caller-supplied noise.
    pub fn encode_with_eps(
        &self,
        g: &mut Graph,
        x: &Tensor,
        cond: Option<&Tensor>,
        eps: &Tensor,
    ) -> Result<LatentCode> {
        let batch = self.check_input(x, "encode")?;
        if eps.shape() != vec![batch, self.spec.latent_dim] {
            return Err(Error::Shape {
                op: "encode",
                lhs: eps.shape(),
                rhs: vec![batch, self.spec.latent_dim],
            });
        }
        let feat = self.trunk_forward(g, x, cond, TrunkPath::Encoder)?;
        let mu = self.mu_head.forward(g, &feat)?;
        let log_var = self.logvar_head.forward(g, &feat)?;
        // sample = mu + exp(log_var / 2) * eps
        let half = g.scale(&log_var, 0.5);
        let std = g.exp(&half);
        let noise = g.mul(&std, eps)?;
        let sample = g.add(&mu, &noise)?;
        Ok(LatentCode { mu, log_var, sample })
    }

    /// Posterior parameters plus a reparameterized sample drawn from `rng`.
    pub fn encode(
        &self,
        g: &mut Graph,
        x: &Tensor,
        cond: Option<&Tensor>,
        rng: &mut Rng,
    ) -> Result<LatentCode> {
        let batch = self.check_input(x, "encode")?;
        let mut eps = vec![0.0f32; batch * self.spec.latent_dim];
        rng.fill_normal(&mut eps);
        let eps = Tensor::from_vec(&[batch, self.spec.latent_dim], eps);
        self.encode_with_eps(g, x, cond, &eps)
    }

    /// Decode latent codes into data space.
    pub fn decode(&self, g: &mut Graph, z: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let s = z.shape();
        if s.len() != 2 || s[1] != self.spec.latent_dim {
            return Err(Error::Shape { op: "decode", lhs: s, rhs: vec![0, self.spec.latent_dim] });
        }
        let batch = s[0];
        let cond = self.check_cond(cond, batch, "decode")?;
        let zin = match &cond {
            Some(c) => g.concat(&[z, c], 1)?,
            None => z.clone(),
        };
        let leak = self.spec.leak;
        match &self.decoder {
            DecoderNet::Dense(layers) => {
                let mut h = zin;
                let last = layers.len() - 1;
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(g, &h)?;
                    if i != last {
                        h = g.leaky_relu(&h, leak);
                    }
                }
                Ok(h)
            }
            DecoderNet::Conv { fc, unflatten, layers } => {
                let mut h = fc.forward(g, &zin)?;
                h = g.leaky_relu(&h, leak);
                let (c, hh, ww) = *unflatten;
                h = g.reshape(&h, &[batch, c, hh, ww])?;
                let last = layers.len() - 1;
                for (i, layer) in layers.iter().enumerate() {
                    h = g.conv2d_transpose(&h, &layer.w, layer.stride, layer.pad, layer.out_pad)?;
                    let bias = g.broadcast_to(&layer.b, &h.shape())?;
                    h = g.add(&h, &bias)?;
                    h = if i == last { g.sigmoid(&h) } else { g.leaky_relu(&h, leak) };
                }
                Ok(h)
            }
        }
    }

    /// Probability that each input is real, in (0, 1). Shape [batch, 1].
    pub fn discriminate(&self, g: &mut Graph, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let feat = self.trunk_forward(g, x, cond, TrunkPath::Discriminator)?;
        let logit = self.dis_head.forward(g, &feat)?;
        Ok(g.sigmoid(&logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vec_spec() -> NetSpec {
        NetSpec::vector(2, &[8, 8], 2)
    }

    fn batch_x(b: usize) -> Tensor {
        let data: Vec<f32> = (0..b * 2).map(|i| (i as f32 * 0.37).sin()).collect();
        Tensor::from_vec(&[b, 2], data)
    }

    #[test]
    fn partition_sets_are_disjoint_and_complete() {
        let mut rng = Rng::new(1);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        assert!(!m.partition.shared.is_empty());
        assert_eq!(m.partition.enc.len(), 4); // mu.w mu.b logvar.w logvar.b
        assert_eq!(m.partition.dis.len(), 2); // dis.w dis.b
        // construction already runs assert_disjoint; spot-check identity too
        assert!(!m.partition.enc[0].tensor.ptr_eq(&m.partition.dis[0].tensor));
    }

    #[test]
    fn no_sharing_duplicates_trunk() {
        let mut rng = Rng::new(1);
        let m = Model::new(tiny_vec_spec().without_sharing(), &mut rng).unwrap();
        assert!(m.partition.shared.is_empty());
        // enc = enc_trunk (2 layers x2 tensors) + 2 heads x2
        assert_eq!(m.partition.enc.len(), 8);
        assert_eq!(m.partition.dis.len(), 6);
    }

    #[test]
    fn eps_zero_makes_sample_equal_mu() {
        let mut rng = Rng::new(2);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let mut g = Graph::inference();
        let x = batch_x(3);
        let eps = Tensor::zeros(&[3, 2]);
        let code = m.encode_with_eps(&mut g, &x, None, &eps).unwrap();
        assert_eq!(code.sample.value(), code.mu.value());
    }

    #[test]
    fn encode_is_deterministic_under_seed() {
        let mut rng = Rng::new(3);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let x = batch_x(4);
        let mut r1 = Rng::new(9).stream("eps");
        let mut r2 = Rng::new(9).stream("eps");
        let mut g1 = Graph::inference();
        let mut g2 = Graph::inference();
        let a = m.encode(&mut g1, &x, None, &mut r1).unwrap();
        let b = m.encode(&mut g2, &x, None, &mut r2).unwrap();
        assert_eq!(a.sample.value(), b.sample.value());
    }

    #[test]
    fn decode_output_shape_matches_input_shape() {
        let mut rng = Rng::new(4);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        for b in [1usize, 7, 64] {
            let z = Tensor::from_vec(&[b, 2], vec![0.1; b * 2]);
            let mut g = Graph::inference();
            let out = m.decode(&mut g, &z, None).unwrap();
            assert_eq!(out.shape(), vec![b, 2]);
        }
    }

    #[test]
    fn image_decoder_output_in_unit_interval() {
        let mut rng = Rng::new(5);
        let m = Model::new(NetSpec::image([1, 8, 8], &[4, 8], 6), &mut rng).unwrap();
        let z = Tensor::from_vec(&[2, 6], vec![0.5; 12]);
        let mut g = Graph::inference();
        let out = m.decode(&mut g, &z, None).unwrap();
        assert_eq!(out.shape(), vec![2, 1, 8, 8]);
        assert!(out.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn discriminate_outputs_probabilities() {
        let mut rng = Rng::new(6);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let mut g = Graph::inference();
        let p = m.discriminate(&mut g, &batch_x(5), None).unwrap();
        assert_eq!(p.shape(), vec![5, 1]);
        assert!(p.value().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zeroed_dis_head_outputs_half() {
        let mut rng = Rng::new(7);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        for p in &m.partition.dis {
            p.tensor.set_value(&vec![0.0; p.tensor.numel()]);
        }
        let mut g = Graph::inference();
        let p = m.discriminate(&mut g, &batch_x(4), None).unwrap();
        assert!(p.value().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn perturbing_enc_heads_leaves_discriminator_unchanged() {
        let mut rng = Rng::new(8);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let x = batch_x(4);
        let mut g = Graph::inference();
        let before = m.discriminate(&mut g, &x, None).unwrap().value();
        for p in &m.partition.enc {
            let bumped: Vec<f32> = p.tensor.value().iter().map(|v| v + 0.5).collect();
            p.tensor.set_value(&bumped);
        }
        let mut g2 = Graph::inference();
        let after = m.discriminate(&mut g2, &x, None).unwrap().value();
        assert_eq!(before, after);
    }

    #[test]
    fn trunk_features_same_objects_on_both_paths_when_shared() {
        let mut rng = Rng::new(9);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let x = batch_x(3);
        let l = m.spec.feature_layer();
        let mut g = Graph::inference();
        let fe = m.trunk_features(&mut g, &x, None, l, TrunkPath::Encoder).unwrap();
        let fd = m.trunk_features(&mut g, &x, None, l, TrunkPath::Discriminator).unwrap();
        assert_eq!(fe.value(), fd.value());
        assert_eq!(fe.shape()[1], m.feature_dim());
    }

    #[test]
    fn trunk_features_rejects_other_layers() {
        let mut rng = Rng::new(10);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let mut g = Graph::inference();
        assert!(m.trunk_features(&mut g, &batch_x(2), None, 0, TrunkPath::Encoder).is_err());
    }

    #[test]
    fn unconditional_net_rejects_cond() {
        let mut rng = Rng::new(11);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let cond = Tensor::from_vec(&[2, 3], vec![0.0; 6]);
        let mut g = Graph::inference();
        assert!(m.encode(&mut g, &batch_x(2), Some(&cond), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn conditional_channel_count_after_first_conv() {
        let mut rng = Rng::new(12);
        let spec = NetSpec::image([1, 8, 8], &[4, 8], 6).conditional(10);
        let m = Model::new(spec, &mut rng).unwrap();
        // Second conv consumes 4 + 10 input channels.
        let w1 = m
            .partition
            .shared
            .iter()
            .find(|p| p.name == "trunk.1.w")
            .expect("second conv weight");
        assert_eq!(w1.tensor.shape(), vec![8, 14, 4, 4]);
    }

    #[test]
    fn conditional_net_requires_cond() {
        let mut rng = Rng::new(13);
        let spec = NetSpec::vector(2, &[8], 2).conditional(5);
        let m = Model::new(spec, &mut rng).unwrap();
        let mut g = Graph::inference();
        assert!(m.encode(&mut g, &batch_x(2), None, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn reparameterized_sample_mean_approaches_mu() {
        // Monte Carlo: mean of n samples within 4*std/sqrt(n) of mu.
        let mut rng = Rng::new(14);
        let m = Model::new(tiny_vec_spec(), &mut rng).unwrap();
        let x = batch_x(1);
        let mut g = Graph::inference();
        let eps0 = Tensor::zeros(&[1, 2]);
        let code = m.encode_with_eps(&mut g, &x, None, &eps0).unwrap();
        let mu = code.mu.value();
        let std: Vec<f32> = code.log_var.value().iter().map(|lv| (0.5 * lv).exp()).collect();

        let n = 10_000usize;
        let mut acc = vec![0.0f64; 2];
        let mut eps_rng = Rng::new(999);
        for _ in 0..n {
            let mut g = Graph::inference();
            let code = m.encode(&mut g, &x, None, &mut eps_rng).unwrap();
            for (a, v) in acc.iter_mut().zip(code.sample.value()) {
                *a += v as f64;
            }
        }
        for d in 0..2 {
            let mean = acc[d] / n as f64;
            let tol = 4.0 * std[d] as f64 / (n as f64).sqrt();
            assert!(
                (mean - mu[d] as f64).abs() < tol,
                "dim {d}: mean {mean} vs mu {} (tol {tol})",
                mu[d]
            );
        }
    }
}
