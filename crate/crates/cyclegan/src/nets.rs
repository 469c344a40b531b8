//! Generator and patch discriminator networks. Both work on images scaled to [0, 1].

use stainlab_autodiff::{Graph, Initializer, ParamId, ParamStore, Tensor, Var};
use stainlab_core::seed::derive_seed;

use crate::config::{CycleGanConfig, DiscriminatorKind};
use crate::error::Result;

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conv,
    /// Transposed convolution doubling the spatial size.
    Up,
}

#[derive(Debug, Clone)]
struct Layer {
    kind: Kind,
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    padding: usize,
}

impl Layer {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        kind: Kind,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let shape = match kind {
            Kind::Conv => [cout, cin, k, k],
            Kind::Up => [cin, cout, k, k],
        };
        let w = store.add(format!("{name}.weight"), init.normal(&shape))?;
        let b = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?)
        } else {
            None
        };
        Ok(Self {
            kind,
            w,
            b,
            stride,
            padding,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = self.b.map(|b| g.param(store, b)).transpose()?;
        Ok(match self.kind {
            Kind::Conv => g.conv2d(x, w, b, self.stride, self.padding)?,
            Kind::Up => g.conv_transpose2d(x, w, b, self.stride, self.padding, 1)?,
        })
    }
}

/// Encoder (three stride-2 convolutions), residual blocks, decoder (three
/// transposed convolutions) and a 3-channel output mapped to [0, 1]. With
/// skips, encoder features are added to decoder features of equal size; a
/// nonzero input gain adds the scaled input to the output logits.
/// Parameters live in a shared [`ParamStore`] under a name prefix.
#[derive(Debug, Clone)]
pub struct Generator {
    skips: bool,
    input_gain: f64,
    residual: bool,
    down: Vec<Layer>,
    res: Vec<(Layer, Layer)>,
    up: Vec<Layer>,
    out: Option<Layer>,
}

impl Generator {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &CycleGanConfig, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed, INIT_STD);
        let c = config.base_channels;
        let (c1, c2, c3) = (c, 2 * c, 4 * c);
        let mut down = Vec::new();
        for (i, (cin, cout)) in [(3, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
            down.push(Layer::new(store, &mut init, &format!("{prefix}down{i}"), Kind::Conv, cin, cout, 3, 2, 1, false)?);
        }
        let mut res = Vec::new();
        for i in 0..config.residual_blocks {
            res.push((
                Layer::new(store, &mut init, &format!("{prefix}res{i}.a"), Kind::Conv, c3, c3, 3, 1, 1, false)?,
                Layer::new(store, &mut init, &format!("{prefix}res{i}.b"), Kind::Conv, c3, c3, 3, 1, 1, false)?,
            ));
        }
        let mut up = Vec::new();
        for (i, (cin, cout)) in [(c3, c2), (c2, c1), (c1, c1)].into_iter().enumerate() {
            up.push(Layer::new(store, &mut init, &format!("{prefix}up{i}"), Kind::Up, cin, cout, 3, 2, 1, false)?);
        }
        let out = Some(Layer::new(store, &mut init, &format!("{prefix}out"), Kind::Conv, c1, 3, 3, 1, 1, true)?);
        Ok(Self {
            skips: config.skip_connections,
            input_gain: config.input_skip_gain,
            residual: config.residual_output,
            down,
            res,
            up,
            out,
        })
    }

    /// A parameter-free generator that returns its input.
    pub fn identity() -> Self {
        Self {
            skips: false,
            input_gain: 0.0,
            residual: false,
            down: Vec::new(),
            res: Vec::new(),
            up: Vec::new(),
            out: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.out.is_none()
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let Some(out) = &self.out else { return Ok(x) };
        let mut h = x;
        let mut encoded = Vec::new();
        for l in &self.down {
            h = l.forward(g, s, h)?;
            h = g.instance_norm(h, NORM_EPS)?;
            h = g.relu(h)?;
            encoded.push(h);
        }
        for (a, b) in &self.res {
            let mut r = a.forward(g, s, h)?;
            r = g.instance_norm(r, NORM_EPS)?;
            r = g.relu(r)?;
            r = b.forward(g, s, r)?;
            r = g.instance_norm(r, NORM_EPS)?;
            h = g.add(h, r)?;
        }
        for (i, l) in self.up.iter().enumerate() {
            h = l.forward(g, s, h)?;
            h = g.instance_norm(h, NORM_EPS)?;
            h = g.relu(h)?;
            if self.skips && i + 2 <= encoded.len() {
                h = g.add(h, encoded[encoded.len() - 2 - i])?;
            }
        }
        h = out.forward(g, s, h)?;
        if self.residual {
            h = g.tanh(h)?;
            h = g.scale(h, 0.5)?;
            return Ok(g.add(x, h)?);
        }
        if self.input_gain != 0.0 {
            let bypass = g.affine(x, self.input_gain, -self.input_gain / 2.0)?;
            h = g.add(h, bypass)?;
        }
        h = g.tanh(h)?;
        Ok(g.affine(h, 0.5, 0.5)?)
    }
}

/// Convolutional patch discriminator emitting a map of real-valued scores.
#[derive(Debug, Clone)]
pub struct Discriminator {
    layers: Vec<Layer>,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, prefix: &str, kind: DiscriminatorKind, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed, INIT_STD);
        let plan: &[(usize, usize, usize)] = match kind {
            DiscriminatorKind::Patch4 => &[(3, 64, 2), (64, 128, 2), (128, 256, 1), (256, 1, 1)],
            DiscriminatorKind::Patch5 => &[(3, 64, 2), (64, 128, 2), (128, 256, 2), (256, 512, 1), (512, 1, 1)],
        };
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                Layer::new(store, &mut init, &format!("{prefix}d{i}"), Kind::Conv, cin, cout, 4, stride, 1, true)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// First layer: conv + leaky ReLU; middle layers add instance norm; last layer is linear.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = self.layers.len();
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, store, h)?;
            if i + 1 < n {
                if i > 0 {
                    h = g.instance_norm(h, NORM_EPS)?;
                }
                h = g.leaky_relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Both generators and both discriminators of one cycle-GAN, sharing a store
/// whose names are prefixed `G.`, `F.`, `Ds.` and `Dt.`.
#[derive(Debug, Clone)]
pub struct CycleGanModels {
    pub store: ParamStore,
    /// Triplex to singleplex.
    pub g: Generator,
    /// Singleplex to triplex.
    pub f: Generator,
    /// Judges triplex images.
    pub d_s: Discriminator,
    /// Judges singleplex images.
    pub d_t: Discriminator,
}

pub const PREFIXES: [&str; 4] = ["G.", "F.", "Ds.", "Dt."];

impl CycleGanModels {
    pub fn build(config: &CycleGanConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let seed = |tag: &str| derive_seed(config.seed, tag, 0);
        let g = Generator::new(&mut store, "G.", config, seed("init/G"))?;
        let f = Generator::new(&mut store, "F.", config, seed("init/F"))?;
        let d_s = Discriminator::new(&mut store, "Ds.", config.discriminator, seed("init/Ds"))?;
        let d_t = Discriminator::new(&mut store, "Dt.", config.discriminator, seed("init/Dt"))?;
        Ok(Self { store, g, f, d_s, d_t })
    }

    /// Models whose generators are parameter-free identity maps.
    pub fn with_identity_generators(config: &CycleGanConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let seed = |tag: &str| derive_seed(config.seed, tag, 0);
        let d_s = Discriminator::new(&mut store, "Ds.", config.discriminator, seed("init/Ds"))?;
        let d_t = Discriminator::new(&mut store, "Dt.", config.discriminator, seed("init/Dt"))?;
        Ok(Self {
            store,
            g: Generator::identity(),
            f: Generator::identity(),
            d_s,
            d_t,
        })
    }

    /// Scalar count per prefix, in [`PREFIXES`] order.
    pub fn parameter_counts(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (_, p) in self.store.iter() {
            if let Some(i) = PREFIXES.iter().position(|pre| p.name.starts_with(pre)) {
                out[i] += p.value.numel();
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }
}
