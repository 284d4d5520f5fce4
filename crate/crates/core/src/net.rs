//! Encoder / latent / multi-decoder network.
//!
//! The encoder is a 3×3 stem, two residual blocks (whose output is the
//! full-resolution `conv5` keypoint map), four `2×conv + pool` stages and two
//! parallel 1×1 heads producing μ and the log-variance σ. The latent is split
//! channel-wise into `N + 1` groups of `M` maps; group 0 feeds the RGB
//! appearance decoder and group `g ≥ 1` feeds the decoder of class `g - 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, Real};
use crate::ndgrad::{Gradients, Padding, Tape, Tensor, Var};

/// Number of 2× pooling stages; the latent grid is H/16 × W/16.
pub const POOL_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    /// Feature maps per decoder group (M).
    pub maps_per_group: usize,
    /// Semantic classes, excluding appearance (N).
    pub classes: usize,
    /// Stem and residual-block width; this is the conv5 channel count.
    pub stem_channels: usize,
    /// Output width of each `2×conv + pool` stage.
    pub stage_channels: [usize; POOL_STAGES],
    /// Width of every decoder.
    pub decoder_channels: usize,
}

impl NetConfig {
    /// Full-size configuration (192×256, M = 4, N = 13, 32-map conv5).
    pub fn full() -> Self {
        NetConfig {
            height: 192,
            width: 256,
            maps_per_group: 4,
            classes: 13,
            stem_channels: 32,
            stage_channels: [64, 128, 256, 256],
            decoder_channels: 64,
        }
    }

    /// Desk-scale configuration used by training tests and the synthetic
    /// corpus: 64×64, M = 2, N = 3 with a narrow channel plan.
    pub fn toy() -> Self {
        NetConfig {
            height: 64,
            width: 64,
            maps_per_group: 2,
            classes: 3,
            stem_channels: 8,
            stage_channels: [16, 24, 32, 32],
            decoder_channels: 8,
        }
    }

    /// Smallest useful configuration, for end-to-end gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            height: 16,
            width: 16,
            maps_per_group: 2,
            classes: 2,
            stem_channels: 2,
            stage_channels: [2, 3, 3, 4],
            decoder_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = 1 << POOL_STAGES;
        if self.height == 0 || self.width == 0 || self.height % grid != 0 || self.width % grid != 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents {}×{} must be positive multiples of {grid}",
                self.height, self.width
            )));
        }
        if self.maps_per_group == 0
            || self.stem_channels == 0
            || self.decoder_channels == 0
            || self.stage_channels.contains(&0)
        {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.classes + 1
    }

    /// Latent channel count M·(N+1).
    pub fn latent_channels(&self) -> usize {
        self.maps_per_group * self.groups()
    }

    pub fn latent_height(&self) -> usize {
        self.height >> POOL_STAGES
    }

    pub fn latent_width(&self) -> usize {
        self.width >> POOL_STAGES
    }

    /// Local descriptor dimension D = (H/16)·(W/16).
    pub fn local_dim(&self) -> usize {
        self.latent_height() * self.latent_width()
    }

    /// Global descriptor length D·M·(N+1).
    pub fn descriptor_dim(&self) -> usize {
        self.local_dim() * self.latent_channels()
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_height(), self.latent_width(), self.latent_channels()]
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, k: usize, cin: usize, cout: usize| {
            out.push((format!("{name}.w"), vec![k, k, cin, cout]));
            out.push((format!("{name}.b"), vec![cout]));
        };
        let c0 = self.stem_channels;
        conv("stem".into(), 3, 3, c0);
        for r in 0..2 {
            conv(format!("res{r}.conv0"), 3, c0, c0);
            conv(format!("res{r}.conv1"), 3, c0, c0);
        }
        let mut cin = c0;
        for (s, &cout) in self.stage_channels.iter().enumerate() {
            conv(format!("stage{s}.conv0"), 3, cin, cout);
            conv(format!("stage{s}.conv1"), 3, cout, cout);
            cin = cout;
        }
        let lc = self.latent_channels();
        conv("mu".into(), 1, cin, lc);
        conv("logvar".into(), 1, cin, lc);
        let cd = self.decoder_channels;
        for g in 0..self.groups() {
            conv(format!("dec{g}.in"), 1, self.maps_per_group, cd);
            for u in 0..POOL_STAGES {
                conv(format!("dec{g}.up{u}"), 3, cd, 4 * cd);
            }
            conv(format!("dec{g}.out"), 1, cd, if g == 0 { 3 } else { 1 });
        }
        out.push(("centers".into(), vec![lc, self.local_dim()]));
        out
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        ParamStore { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Parameters bound as leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; parameters that received none get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.shape(v)))
            .collect()
    }
}

/// The latent bottleneck: μ, log-variance σ, the noise draw ε and
/// z = μ + exp(σ/2) ⊙ ε.
#[derive(Debug, Clone, Copy)]
pub struct LatentCode {
    pub mu: Var,
    pub sigma: Var,
    pub epsilon: Var,
    pub z: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub mu: Var,
    pub sigma: Var,
    pub conv5: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    pub latent: LatentCode,
    pub conv5: Var,
    pub reconstruction: Var,
    pub seg_logits: Var,
}

/// Inference-only encoder results.
#[derive(Debug, Clone)]
pub struct Inference {
    pub mu: Tensor,
    pub conv5: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalcNet {
    config: NetConfig,
    params: ParamStore,
}

impl CalcNet {
    /// Fresh network: LeCun-normal convolution weights, zero biases and
    /// standard-normal cluster centers scaled by 1/√D.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.local_dim();
        let entries = config
            .parameter_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let std = if name == "centers" {
                    1.0 / libm::sqrt(d as f64)
                } else if name.ends_with(".w") {
                    1.0 / libm::sqrt((shape[0] * shape[1] * shape[2]) as f64)
                } else {
                    0.0
                };
                let data = (0..n)
                    .map(|_| {
                        if std == 0.0 {
                            0.0
                        } else {
                            let s: f64 = StandardNormal.sample(rng);
                            (s * std) as Real
                        }
                    })
                    .collect();
                (name, Tensor::new(&shape, data).expect("layout shape"))
            })
            .collect();
        Ok(CalcNet {
            config,
            params: ParamStore::new(entries),
        })
    }

    /// Rebuilds a network from stored parameters, checking every name and
    /// shape against the configuration's layout.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname {
                return Err(Error::UnknownParameter(pname.into()));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("load parameter", t.shape(), shape));
            }
        }
        Ok(CalcNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn centers(&self) -> &Tensor {
        self.params.get("centers").expect("centers are always present")
    }

    /// Places every parameter on `tape`, trainable or not.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Uses existing tape vars as the parameters, in layout order.
    pub fn bind_vars(&self, tape: &Tape, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::shape("bind_vars", &[vars.len()], &[self.params.len()]));
        }
        for (&v, t) in vars.iter().zip(self.params.tensors()) {
            if tape.shape(v) != t.shape() {
                return Err(Error::shape("bind_vars", tape.shape(v), t.shape()));
            }
        }
        Ok(Bound { vars: vars.to_vec() })
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.params.index_of(name).expect("parameter name from layout")]
    }

    fn conv(&self, tape: &mut Tape, bound: &Bound, x: Var, name: &str) -> Result<Var> {
        let w = self.var(bound, &format!("{name}.w"));
        let b = self.var(bound, &format!("{name}.b"));
        let y = tape.conv2d(x, w, 1, Padding::Same)?;
        tape.add_bias(y, b)
    }

    fn conv_elu(&self, tape: &mut Tape, bound: &Bound, x: Var, name: &str) -> Result<Var> {
        let y = self.conv(tape, bound, x, name)?;
        Ok(tape.elu(y))
    }

    pub fn bound_centers(&self, bound: &Bound) -> Var {
        self.var(bound, "centers")
    }

    pub fn encode(&self, tape: &mut Tape, bound: &Bound, image: Var) -> Result<Encoded> {
        let cfg = &self.config;
        let shape = tape.shape(image);
        if shape != cfg.image_shape() {
            return Err(Error::shape("encode", shape, &cfg.image_shape()));
        }
        let mut x = self.conv_elu(tape, bound, image, "stem")?;
        for r in 0..2 {
            let h = self.conv_elu(tape, bound, x, &format!("res{r}.conv0"))?;
            let h = self.conv(tape, bound, h, &format!("res{r}.conv1"))?;
            let s = tape.add(x, h)?;
            x = tape.elu(s);
        }
        let conv5 = x;
        for s in 0..POOL_STAGES {
            x = self.conv_elu(tape, bound, x, &format!("stage{s}.conv0"))?;
            x = self.conv_elu(tape, bound, x, &format!("stage{s}.conv1"))?;
            x = tape.maxpool2x2(x)?;
        }
        let mu = self.conv(tape, bound, x, "mu")?;
        let sigma = self.conv(tape, bound, x, "logvar")?;
        Ok(Encoded { mu, sigma, conv5 })
    }

    /// Runs the N+1 independent decoders on the channel groups of `z`.
    /// Returns the sigmoid RGB reconstruction and the H×W×N logits.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<(Var, Var)> {
        let cfg = &self.config;
        if tape.shape(z) != cfg.latent_shape() {
            return Err(Error::shape("decode", tape.shape(z), &cfg.latent_shape()));
        }
        let m = cfg.maps_per_group;
        let mut recon = None;
        let mut logits = Vec::with_capacity(cfg.classes);
        for g in 0..cfg.groups() {
            let part = tape.slice_channels(z, g * m, m)?;
            let mut x = self.conv_elu(tape, bound, part, &format!("dec{g}.in"))?;
            for u in 0..POOL_STAGES {
                x = self.conv_elu(tape, bound, x, &format!("dec{g}.up{u}"))?;
                x = tape.subpixel_upscale(x)?;
            }
            let out = self.conv(tape, bound, x, &format!("dec{g}.out"))?;
            if g == 0 {
                recon = Some(tape.sigmoid(out));
            } else {
                logits.push(out);
            }
        }
        let seg = tape.concat_channels(&logits)?;
        Ok((recon.expect("appearance decoder"), seg))
    }

    /// Full training-time forward pass with the given noise draw.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: Var, epsilon: Tensor) -> Result<NetOutputs> {
        let enc = self.encode(tape, bound, image)?;
        let epsilon = tape.constant(epsilon);
        let z = reparameterize(tape, enc.mu, enc.sigma, epsilon)?;
        let (reconstruction, seg_logits) = self.decode(tape, bound, z)?;
        Ok(NetOutputs {
            latent: LatentCode {
                mu: enc.mu,
                sigma: enc.sigma,
                epsilon,
                z,
            },
            conv5: enc.conv5,
            reconstruction,
            seg_logits,
        })
    }

    /// Encoder-only pass without gradient bookkeeping.
    pub fn infer(&self, image: &Tensor) -> Result<Inference> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let enc = self.encode(&mut tape, &bound, x)?;
        Ok(Inference {
            mu: tape.value(enc.mu).clone(),
            conv5: tape.value(enc.conv5).clone(),
        })
    }
}

/// z = μ + exp(σ/2) ⊙ ε. ε is a constant, so gradients reach μ and σ only.
pub fn reparameterize(tape: &mut Tape, mu: Var, sigma: Var, epsilon: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(sigma) {
        return Err(Error::shape("reparameterize", tape.shape(mu), tape.shape(sigma)));
    }
    let half = tape.scale(sigma, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, epsilon)?;
    tape.add(mu, noise)
}

/// Standard-normal draw of the given shape.
pub fn sample_epsilon<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            s as Real
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Plain-value reparameterization, used by tests and samplers.
pub fn reparameterize_values(mu: &Tensor, sigma: &Tensor, epsilon: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != epsilon.shape() {
        return Err(Error::shape("reparameterize", mu.shape(), sigma.shape()));
    }
    let data = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(epsilon.data())
        .map(|((&m, &s), &e)| m + math::exp(0.5 * s) * e)
        .collect();
    Tensor::new(mu.shape(), data)
}
