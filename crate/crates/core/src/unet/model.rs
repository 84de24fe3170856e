use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{
    bce_logit_grad, concat_skip, conv3x3_relu, conv3x3_relu_backward, maxpool2x2,
    maxpool2x2_backward, project, project_backward, sigmoid, split_channels, upconv2x2,
    upconv2x2_backward,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels at the first level; doubles per level.
    pub base_channels: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability clamp applied before the logarithms of the loss.
    pub epsilon: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input_h: 96,
            input_w: 128,
            depth: 3,
            base_channels: 8,
            seed: 0,
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 60,
            epsilon: 1e-7,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("model config: {msg}")));
        if self.input_h == 0 || self.input_w == 0 {
            return bad("input dims must be positive".into());
        }
        let step = 1usize.checked_shl(self.depth as u32).unwrap_or(0);
        if step == 0 || self.input_h % step != 0 || self.input_w % step != 0 {
            return bad(format!(
                "input {}x{} is not divisible by 2^{}",
                self.input_w, self.input_h, self.depth
            ));
        }
        if self.base_channels == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("base_channels, batch_size and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad(format!("epsilon must lie in (0, 0.5), got {}", self.epsilon));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    UpConv2x2,
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

/// Name, kind and kernel shape of every layer, in parameter order: encoder
/// levels top-down, the bottleneck, decoder levels bottom-up, then the head.
pub fn layer_plan(cfg: &UNetConfig) -> Vec<(String, LayerKind, [usize; 4])> {
    let mut plan = Vec::new();
    let mut in_c = 1;
    for l in 0..cfg.depth {
        let c = cfg.channels(l);
        plan.push((format!("enc{l}.conv1"), LayerKind::Conv3x3, [c, in_c, 3, 3]));
        plan.push((format!("enc{l}.conv2"), LayerKind::Conv3x3, [c, c, 3, 3]));
        in_c = c;
    }
    let c = cfg.channels(cfg.depth);
    plan.push(("mid.conv1".into(), LayerKind::Conv3x3, [c, in_c, 3, 3]));
    plan.push(("mid.conv2".into(), LayerKind::Conv3x3, [c, c, 3, 3]));
    for l in (0..cfg.depth).rev() {
        let c = cfg.channels(l);
        plan.push((format!("dec{l}.up"), LayerKind::UpConv2x2, [2 * c, c, 2, 2]));
        plan.push((format!("dec{l}.conv1"), LayerKind::Conv3x3, [c, 2 * c, 3, 3]));
        plan.push((format!("dec{l}.conv2"), LayerKind::Conv3x3, [c, c, 3, 3]));
    }
    plan.push((
        "head".into(),
        LayerKind::Projection,
        [1, cfg.base_channels, 1, 1],
    ));
    plan
}

fn bias_len(kind: LayerKind, shape: [usize; 4]) -> usize {
    match kind {
        LayerKind::UpConv2x2 => shape[1],
        _ => shape[0],
    }
}

fn fan_in(kind: LayerKind, shape: [usize; 4]) -> usize {
    match kind {
        LayerKind::Conv3x3 => shape[1] * 9,
        LayerKind::UpConv2x2 => shape[0],
        LayerKind::Projection => shape[1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams<T = f32> {
    pub config: UNetConfig,
    pub layers: Vec<Layer<T>>,
}

/// Parameter gradients, aligned with `UNetParams::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub kernels: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &UNetParams<T>) -> Self {
        Self {
            kernels: p.layers.iter().map(|l| vec![T::ZERO; l.kernel.data().len()]).collect(),
            biases: p.layers.iter().map(|l| vec![T::ZERO; l.bias.len()]).collect(),
        }
    }
}

struct EncCache<T> {
    x: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
    pool_idx: Vec<usize>,
}

struct DecCache<T> {
    x: Tensor<T>,
    cat: Tensor<T>,
    d1: Tensor<T>,
    d2: Tensor<T>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache<T> {
    enc: Vec<EncCache<T>>,
    mid_x: Tensor<T>,
    m1: Tensor<T>,
    m2: Tensor<T>,
    /// Indexed by level.
    dec: Vec<DecCache<T>>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> UNetParams<T> {
    /// He-initialised parameters: each kernel drawn from N(0, 2 / fan_in)
    /// in layer order from a generator seeded by `config.seed`; biases zero.
    pub fn init(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = layer_plan(config)
            .into_iter()
            .map(|(name, kind, shape)| {
                let std = (2.0 / fan_in(kind, shape) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64(z * std)
                    })
                    .collect();
                Layer {
                    name,
                    kind,
                    kernel: Tensor::from_vec(shape, data).expect("planned shape"),
                    bias: vec![T::ZERO; bias_len(kind, shape)],
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        UNetParams {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    kernel: l.kernel.cast(),
                    bias: l.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.data().len() + l.bias.len()).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    fn conv(&self, i: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv3x3_relu(x, &self.layers[i].kernel, &self.layers[i].bias)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 1 || h != self.config.input_h || w != self.config.input_w {
            return Err(Error::Dimension(format!(
                "network expects (n, 1, {}, {}) input, got {:?}",
                self.config.input_h,
                self.config.input_w,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every activation needed by [`Self::backward`].
    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let d = self.config.depth;
        let mut enc = Vec::with_capacity(d);
        let mut cur = x.clone();
        for l in 0..d {
            let a1 = self.conv(2 * l, &cur)?;
            let a2 = self.conv(2 * l + 1, &a1)?;
            let (pooled, pool_idx) = maxpool2x2(&a2)?;
            enc.push(EncCache {
                x: std::mem::replace(&mut cur, pooled),
                a1,
                a2,
                pool_idx,
            });
        }
        let m1 = self.conv(2 * d, &cur)?;
        let m2 = self.conv(2 * d + 1, &m1)?;
        let mid_x = cur;

        let mut dec: Vec<Option<DecCache<T>>> = (0..d).map(|_| None).collect();
        let mut cur = m2.clone();
        for l in (0..d).rev() {
            let base = 2 * d + 2 + 3 * (d - 1 - l);
            let up = &self.layers[base];
            let u = upconv2x2(&cur, &up.kernel, &up.bias)?;
            let cat = concat_skip(&u, &enc[l].a2)?;
            let d1 = self.conv(base + 1, &cat)?;
            let d2 = self.conv(base + 2, &d1)?;
            dec[l] = Some(DecCache {
                x: std::mem::replace(&mut cur, d2.clone()),
                cat,
                d1,
                d2,
            });
        }
        let head = self.layers.last().expect("head layer");
        let logits = project(&cur, &head.kernel, &head.bias)?;
        Ok(ForwardCache {
            enc,
            mid_x,
            m1,
            m2,
            dec: dec.into_iter().map(|c| c.expect("every level visited")).collect(),
            probs: sigmoid(&logits),
        })
    }

    /// Carbide probabilities, shape `(n, 1, input_h, input_w)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.probs)
    }

    /// Same result as [`Self::forward`], with samples spread over the rayon
    /// pool. Every operator is per-sample, so the output is bitwise equal.
    pub fn forward_parallel(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        use rayon::prelude::*;
        self.check_input(x)?;
        let parts = x
            .samples()
            .par_iter()
            .map(|s| self.forward(s))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&parts)
    }

    /// Exact gradients of the mean clamped BCE loss with respect to every
    /// kernel and bias.
    pub fn backward(&self, cache: &ForwardCache<T>, target: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.probs.shape() != target.shape() {
            return Err(Error::Dimension(format!(
                "target {:?} vs prediction {:?}",
                target.shape(),
                cache.probs.shape()
            )));
        }
        let d = self.config.depth;
        let mut g = Gradients::zeros_like(self);
        let mut put = |i: usize, dk: Vec<T>, db: Vec<T>| {
            g.kernels[i] = dk;
            g.biases[i] = db;
        };

        let dz = bce_logit_grad(&cache.probs, target, self.config.epsilon);
        let head_i = self.layers.len() - 1;
        let head_in = if d == 0 { &cache.m2 } else { &cache.dec[0].d2 };
        let (mut dcur, dk, db) = project_backward(head_in, &self.layers[head_i].kernel, &dz);
        put(head_i, dk, db);

        let mut dskips = Vec::with_capacity(d);
        for l in 0..d {
            let base = 2 * d + 2 + 3 * (d - 1 - l);
            let c = &cache.dec[l];
            let (dd1, dk, db) = conv3x3_relu_backward(&c.d1, &c.d2, &self.layers[base + 2].kernel, &dcur);
            put(base + 2, dk, db);
            let (dcat, dk, db) = conv3x3_relu_backward(&c.cat, &c.d1, &self.layers[base + 1].kernel, &dd1);
            put(base + 1, dk, db);
            let (du, dskip) = split_channels(&dcat, self.config.channels(l));
            dskips.push(dskip);
            let (dx, dk, db) = upconv2x2_backward(&c.x, &self.layers[base].kernel, &du);
            put(base, dk, db);
            dcur = dx;
        }

        let (dm1, dk, db) = conv3x3_relu_backward(&cache.m1, &cache.m2, &self.layers[2 * d + 1].kernel, &dcur);
        put(2 * d + 1, dk, db);
        let (dx, dk, db) = conv3x3_relu_backward(&cache.mid_x, &cache.m1, &self.layers[2 * d].kernel, &dm1);
        put(2 * d, dk, db);
        dcur = dx;

        for l in (0..d).rev() {
            let c = &cache.enc[l];
            let mut da2 = maxpool2x2_backward(&dcur, &c.pool_idx, c.a2.shape());
            for (a, &s) in da2.data_mut().iter_mut().zip(dskips[l].data()) {
                *a += s;
            }
            let (da1, dk, db) = conv3x3_relu_backward(&c.a1, &c.a2, &self.layers[2 * l + 1].kernel, &da2);
            put(2 * l + 1, dk, db);
            let (dx, dk, db) = conv3x3_relu_backward(&c.x, &c.a1, &self.layers[2 * l].kernel, &da1);
            put(2 * l, dk, db);
            dcur = dx;
        }
        Ok(g)
    }

    /// Plain gradient descent: `θ ← θ − lr·g` for every parameter. Nothing
    /// is modified when any gradient is non-finite.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if grads.kernels.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::Dimension("gradient layer count differs from parameters".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if grads.kernels[i].len() != l.kernel.data().len() || grads.biases[i].len() != l.bias.len() {
                return Err(Error::Dimension(format!("gradient shape differs in layer `{}`", l.name)));
            }
            if !grads.kernels[i].iter().chain(&grads.biases[i]).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: l.name.clone() });
            }
        }
        let lr = T::from_f64(lr);
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (w, &gv) in l.kernel.data_mut().iter_mut().zip(&grads.kernels[i]) {
                *w -= lr * gv;
            }
            for (b, &gv) in l.bias.iter_mut().zip(&grads.biases[i]) {
                *b -= lr * gv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::ops::bce_loss;
    use rand::Rng;

    pub(crate) fn tiny_config() -> UNetConfig {
        UNetConfig {
            input_h: 8,
            input_w: 8,
            depth: 1,
            base_channels: 2,
            seed: 3,
            ..UNetConfig::default()
        }
    }

    fn random_batch(cfg: &UNetConfig, n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * cfg.input_h * cfg.input_w;
        let shape = [n, 1, cfg.input_h, cfg.input_w];
        let x = Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let y = Tensor::from_vec(shape, (0..len).map(|_| f64::from(rng.random_bool(0.3))).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn layer_plan_for_defaults() {
        let plan = layer_plan(&UNetConfig::default());
        assert_eq!(plan.len(), 5 * 3 + 3);
        assert_eq!(plan[0].2, [8, 1, 3, 3]);
        assert_eq!(plan[6].0, "mid.conv1");
        assert_eq!(plan[6].2, [64, 32, 3, 3]);
        assert_eq!(plan[8].0, "dec2.up");
        assert_eq!(plan[8].2, [64, 32, 2, 2]);
        assert_eq!(plan[9].2, [32, 64, 3, 3]);
        assert_eq!(plan.last().unwrap().2, [1, 8, 1, 1]);
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::default().validate().is_ok());
        let odd = UNetConfig { input_h: 100, ..UNetConfig::default() };
        assert!(odd.validate().is_err());
        let zero_lr = UNetConfig { learning_rate: 0.0, ..UNetConfig::default() };
        assert!(zero_lr.validate().is_err());
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = UNetConfig { seed: 1, ..UNetConfig::default() };
        let p = UNetParams::<f32>::init(&cfg).unwrap();
        let x = Tensor::from_vec([2, 1, 96, 128], (0..2 * 96 * 128).map(|i| (i % 255) as f32 / 255.0).collect()).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 1, 96, 128]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.forward(&Tensor::zeros([1, 1, 96, 64])).is_err());
    }

    #[test]
    fn zero_head_gives_half() {
        let mut p = UNetParams::<f64>::init(&tiny_config()).unwrap();
        p.layer_mut("head").unwrap().kernel.data_mut().fill(0.0);
        let (x, _) = random_batch(&p.config, 2, 9);
        assert!(p.forward(&x).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn init_is_seeded() {
        let a = UNetParams::<f32>::init(&tiny_config()).unwrap();
        let b = UNetParams::<f32>::init(&tiny_config()).unwrap();
        assert_eq!(a, b);
        let c = UNetParams::<f32>::init(&UNetConfig { seed: 4, ..tiny_config() }).unwrap();
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn parallel_forward_is_identical() {
        let cfg = UNetConfig { input_h: 16, input_w: 16, depth: 2, ..tiny_config() };
        let p = UNetParams::<f32>::init(&cfg).unwrap();
        let (x, _) = random_batch(&cfg, 5, 2);
        let x = x.cast::<f32>();
        assert_eq!(p.forward(&x).unwrap(), p.forward_parallel(&x).unwrap());
    }

    fn loss_of(p: &UNetParams<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
        bce_loss(&p.forward(x).unwrap(), y, p.config.epsilon).unwrap()
    }

    /// Relative error with a small absolute floor so exact zeros compare sanely.
    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    pub(crate) fn max_gradient_error(cfg: &UNetConfig, data_seed: u64) -> f64 {
        let mut p = UNetParams::<f64>::init(cfg).unwrap();
        // Nonzero biases so bias gradients are exercised away from init.
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed + 100);
        for l in &mut p.layers {
            for b in &mut l.bias {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        let (x, y) = random_batch(cfg, 2, data_seed);
        let g = p.backward(&p.forward_cached(&x).unwrap(), &y).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.layers.len() {
            for j in 0..p.layers[i].kernel.data().len() {
                let orig = p.layers[i].kernel.data()[j];
                p.layers[i].kernel.data_mut()[j] = orig + h;
                let up = loss_of(&p, &x, &y);
                p.layers[i].kernel.data_mut()[j] = orig - h;
                let down = loss_of(&p, &x, &y);
                p.layers[i].kernel.data_mut()[j] = orig;
                worst = worst.max(rel_err(g.kernels[i][j], (up - down) / (2.0 * h)));
            }
            for j in 0..p.layers[i].bias.len() {
                let orig = p.layers[i].bias[j];
                p.layers[i].bias[j] = orig + h;
                let up = loss_of(&p, &x, &y);
                p.layers[i].bias[j] = orig - h;
                let down = loss_of(&p, &x, &y);
                p.layers[i].bias[j] = orig;
                worst = worst.max(rel_err(g.biases[i][j], (up - down) / (2.0 * h)));
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let err = max_gradient_error(&tiny_config(), 5);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences_depth_two() {
        let cfg = UNetConfig { depth: 2, input_h: 8, input_w: 8, ..tiny_config() };
        let err = max_gradient_error(&cfg, 6);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_head_blocks_upstream_gradients() {
        let mut p = UNetParams::<f64>::init(&tiny_config()).unwrap();
        p.layer_mut("head").unwrap().kernel.data_mut().fill(0.0);
        let (x, y) = random_batch(&p.config, 2, 7);
        let g = p.backward(&p.forward_cached(&x).unwrap(), &y).unwrap();
        let n = p.layers.len();
        for i in 0..n - 1 {
            assert!(g.kernels[i].iter().chain(&g.biases[i]).all(|&v| v == 0.0), "{}", p.layers[i].name);
        }
        assert!(g.biases[n - 1][0] != 0.0);
    }

    #[test]
    fn gradient_vanishes_at_single_pixel_minimum() {
        // Two copies of one pixel labelled 1 and 0: the loss is minimised at
        // p = 0.5, which a zero head produces exactly.
        let cfg = UNetConfig { input_h: 1, input_w: 1, depth: 0, base_channels: 2, ..tiny_config() };
        let mut p = UNetParams::<f64>::init(&cfg).unwrap();
        p.layer_mut("head").unwrap().kernel.data_mut().fill(0.0);
        let x = Tensor::from_vec([2, 1, 1, 1], vec![0.4, 0.4]).unwrap();
        let y = Tensor::from_vec([2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        let g = p.backward(&p.forward_cached(&x).unwrap(), &y).unwrap();
        assert!(g.kernels.iter().chain(&g.biases).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut p = UNetParams::<f64>::init(&tiny_config()).unwrap();
        let before = p.clone();
        p.sgd_step(&Gradients::zeros_like(&p), 0.1).unwrap();
        assert_eq!(p, before);

        let (x, y) = random_batch(&p.config, 2, 8);
        let g = p.backward(&p.forward_cached(&x).unwrap(), &y).unwrap();
        p.sgd_step(&g, 0.1).unwrap();
        for i in 0..p.layers.len() {
            for (j, &w) in p.layers[i].kernel.data().iter().enumerate() {
                assert_eq!(w, before.layers[i].kernel.data()[j] - 0.1 * g.kernels[i][j]);
            }
        }

        let mut single = Gradients::zeros_like(&before);
        let mut q = before.clone();
        q.layers[0].kernel.data_mut()[0] = 1.0;
        single.kernels[0][0] = 0.5;
        q.sgd_step(&single, 0.1).unwrap();
        assert_eq!(q.layers[0].kernel.data()[0], 0.95);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut p = UNetParams::<f32>::init(&tiny_config()).unwrap();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        g.biases[3][0] = f32::NAN;
        match p.sgd_step(&g, 0.1) {
            Err(Error::NonFiniteGradient { layer }) => assert_eq!(layer, "mid.conv2"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        let p0 = UNetParams::<f64>::init(&tiny_config()).unwrap();
        let (x, y) = random_batch(&p0.config, 2, 10);
        let l0 = loss_of(&p0, &x, &y);
        let g = p0.backward(&p0.forward_cached(&x).unwrap(), &y).unwrap();
        for lr in [1e-3, 1e-4] {
            let mut p = p0.clone();
            p.sgd_step(&g, lr).unwrap();
            assert!(loss_of(&p, &x, &y) <= l0, "lr {lr}");
        }
    }
}
