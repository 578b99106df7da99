//! Residual CNN: stem conv-BN-ReLU, residual blocks, global average pool
//! and a single-logit dense head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    bn_backward, bn_forward_eval, bn_forward_train, dense_backward, dense_forward, gap_backward, gap_forward, relu_backward_inplace,
    relu_inplace, BnTape, ConvShape,
};
use super::tensor::{Act, Scalar};
use super::{ModelConfig, ModelError};

/// One named parameter (or running statistic) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored alongside but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Zero tensors shaped like the parameters.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                    trainable: t.trainable,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    shape: ConvShape,
}

/// Indices of gamma, beta, running mean, running variance.
#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    proj: Option<(Conv, Bn)>,
}

#[derive(Debug, Clone)]
struct Arch {
    stem: (Conv, Bn),
    blocks: Vec<Block>,
    dense_w: usize,
    dense_b: usize,
    features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Activations kept by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    input: Act<T>,
    stem_bn: BnTape<T>,
    stem_out: Act<T>,
    blocks: Vec<BlockTape<T>>,
    pooled: Vec<T>,
}

#[derive(Debug, Clone)]
struct BlockTape<T> {
    bn1: BnTape<T>,
    mid: Act<T>,
    bn2: BnTape<T>,
    proj_bn: Option<BnTape<T>>,
    out: Act<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    arch: Arch,
}

struct Builder<'a, T, R> {
    tensors: Vec<Tensor<T>>,
    rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> usize {
        self.tensors.push(Tensor {
            name,
            shape,
            data,
            trainable,
        });
        self.tensors.len() - 1
    }

    fn conv(&mut self, name: &str, shape: ConvShape) -> Conv {
        // He initialization for ReLU networks.
        let std = (2.0 / (shape.cin * shape.k * shape.k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.weight_len()).map(|_| T::of(normal.sample(self.rng))).collect();
        let w = self.push(format!("{name}.w"), vec![shape.cout, shape.cin, shape.k, shape.k], data, true);
        Conv { w, shape }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.push(format!("{name}.gamma"), vec![c], vec![T::one(); c], true),
            beta: self.push(format!("{name}.beta"), vec![c], vec![T::zero(); c], true),
            mean: self.push(format!("{name}.running_mean"), vec![c], vec![T::zero(); c], false),
            var: self.push(format!("{name}.running_var"), vec![c], vec![T::one(); c], false),
        }
    }
}

fn arch_and_params<T: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (Arch, Params<T>) {
    let mut b = Builder { tensors: Vec::new(), rng };
    let k = cfg.kernel;
    let stem = (
        b.conv(
            "stem.conv",
            ConvShape {
                cin: cfg.in_channels,
                cout: cfg.stem_channels,
                k,
                stride: 1,
            },
        ),
        b.bn("stem.bn", cfg.stem_channels),
    );
    let mut cin = cfg.stem_channels;
    let mut blocks = Vec::new();
    for (i, &(cout, stride)) in cfg.blocks.iter().enumerate() {
        let p = format!("block{i}");
        let conv1 = b.conv(&format!("{p}.conv1"), ConvShape { cin, cout, k, stride });
        let bn1 = b.bn(&format!("{p}.bn1"), cout);
        let conv2 = b.conv(&format!("{p}.conv2"), ConvShape { cin: cout, cout, k, stride: 1 });
        let bn2 = b.bn(&format!("{p}.bn2"), cout);
        let proj = (cin != cout || stride != 1).then(|| {
            (
                b.conv(&format!("{p}.proj"), ConvShape { cin, cout, k: 1, stride }),
                b.bn(&format!("{p}.proj_bn"), cout),
            )
        });
        blocks.push(Block {
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
        });
        cin = cout;
    }
    let bound = 1.0 / (cin as f64).sqrt();
    let w: Vec<T> = (0..cin).map(|_| T::of(b.rng.random_range(-bound..bound))).collect();
    let dense_w = b.push("dense.w".into(), vec![cin], w, true);
    let dense_b = b.push("dense.b".into(), vec![1], vec![T::zero()], true);
    let arch = Arch {
        stem,
        blocks,
        dense_w,
        dense_b,
        features: cin,
    };
    (arch, Params { tensors: b.tensors })
}

impl<T: Scalar> Model<T> {
    /// Randomly initialized model.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate_architecture()?;
        let (arch, params) = arch_and_params(&config, rng);
        Ok(Model { config, params, arch })
    }

    /// Model with given parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self, ModelError> {
        config.validate_architecture()?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (arch, template) = arch_and_params::<T, _>(&config, &mut rng);
        if template.tensors.len() != params.tensors.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, found {}",
                template.tensors.len(),
                params.tensors.len()
            )));
        }
        for (a, b) in template.tensors.iter().zip(&params.tensors) {
            if a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len() {
                return Err(ModelError::ParamMismatch(format!("tensor {} {:?} vs expected {} {:?}", b.name, b.shape, a.name, a.shape)));
            }
        }
        if !params.all_finite() {
            return Err(ModelError::ParamMismatch("non-finite parameter".into()));
        }
        let mut params = params;
        for (a, b) in template.tensors.iter().zip(params.tensors.iter_mut()) {
            b.trainable = a.trainable;
        }
        Ok(Model { config, params, arch })
    }

    fn p(&self, i: usize) -> &[T] {
        &self.params.tensors[i].data
    }

    fn check_input(&self, x: &Act<T>) -> Result<(), ModelError> {
        if x.batch == 0 || x.channels != self.config.in_channels || x.height == 0 || x.width == 0 {
            return Err(ModelError::Shape {
                expected: format!("[B>=1][{}][H][W]", self.config.in_channels),
                found: format!("[{}][{}][{}][{}]", x.batch, x.channels, x.height, x.width),
            });
        }
        Ok(())
    }

    fn bn_eval(&self, bn: Bn, x: &Act<T>) -> Act<T> {
        bn_forward_eval(x, self.p(bn.gamma), self.p(bn.beta), self.p(bn.mean), self.p(bn.var), self.config.bn_eps)
    }

    fn bn_train(&self, bn: Bn, x: &Act<T>) -> (Act<T>, BnTape<T>) {
        bn_forward_train(x, self.p(bn.gamma), self.p(bn.beta), self.config.bn_eps)
    }

    /// Logits, one per batch item. Train mode uses batch statistics but
    /// does not touch the running estimates; see [`Model::update_running_stats`].
    pub fn forward(&self, x: &Act<T>, mode: Mode) -> Result<Vec<T>, ModelError> {
        match mode {
            Mode::Train => Ok(self.forward_train(x)?.0),
            Mode::Eval => {
                self.check_input(x)?;
                let (conv, bn) = self.arch.stem;
                let mut h = self.bn_eval(bn, &conv.shape.forward(self.p(conv.w), x));
                relu_inplace(&mut h);
                for blk in &self.arch.blocks {
                    let mut mid = self.bn_eval(blk.bn1, &blk.conv1.shape.forward(self.p(blk.conv1.w), &h));
                    relu_inplace(&mut mid);
                    let mut out = self.bn_eval(blk.bn2, &blk.conv2.shape.forward(self.p(blk.conv2.w), &mid));
                    let skip = match blk.proj {
                        Some((pc, pb)) => self.bn_eval(pb, &pc.shape.forward(self.p(pc.w), &h)),
                        None => h,
                    };
                    for (o, s) in out.data.iter_mut().zip(&skip.data) {
                        *o = *o + *s;
                    }
                    relu_inplace(&mut out);
                    h = out;
                }
                let pooled = gap_forward(&h);
                Ok(dense_forward(&pooled, self.arch.features, self.p(self.arch.dense_w), self.p(self.arch.dense_b)[0]))
            }
        }
    }

    /// Training-mode forward pass keeping what backward needs.
    pub fn forward_train(&self, x: &Act<T>) -> Result<(Vec<T>, Tape<T>), ModelError> {
        self.check_input(x)?;
        let (conv, bn) = self.arch.stem;
        let (mut stem_out, stem_bn) = self.bn_train(bn, &conv.shape.forward(self.p(conv.w), x));
        relu_inplace(&mut stem_out);
        let mut blocks = Vec::with_capacity(self.arch.blocks.len());
        for blk in &self.arch.blocks {
            let h = blocks.last().map_or(&stem_out, |t: &BlockTape<T>| &t.out);
            let (mut mid, bn1) = self.bn_train(blk.bn1, &blk.conv1.shape.forward(self.p(blk.conv1.w), h));
            relu_inplace(&mut mid);
            let (mut out, bn2) = self.bn_train(blk.bn2, &blk.conv2.shape.forward(self.p(blk.conv2.w), &mid));
            let proj_bn = match blk.proj {
                Some((pc, pb)) => {
                    let (skip, t) = self.bn_train(pb, &pc.shape.forward(self.p(pc.w), h));
                    for (o, s) in out.data.iter_mut().zip(&skip.data) {
                        *o = *o + *s;
                    }
                    Some(t)
                }
                None => {
                    for (o, s) in out.data.iter_mut().zip(&h.data) {
                        *o = *o + *s;
                    }
                    None
                }
            };
            relu_inplace(&mut out);
            blocks.push(BlockTape {
                bn1,
                mid,
                bn2,
                proj_bn,
                out,
            });
        }
        let last = blocks.last().map_or(&stem_out, |t| &t.out);
        let pooled = gap_forward(last);
        let logits = dense_forward(&pooled, self.arch.features, self.p(self.arch.dense_w), self.p(self.arch.dense_b)[0]);
        Ok((
            logits,
            Tape {
                input: x.clone(),
                stem_bn,
                stem_out,
                blocks,
                pooled,
            },
        ))
    }

    /// Gradients of the loss with respect to every tensor, given the loss
    /// gradient with respect to the logits. Running statistics get zeros.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &[T]) -> Vec<Vec<T>> {
        let mut grads = self.params.zeros_like();
        let a = &self.arch;
        let mut dense_dw = std::mem::take(&mut grads[a.dense_w]);
        let mut dbias = T::zero();
        let dpooled = dense_backward(&tape.pooled, a.features, self.p(a.dense_w), dlogits, &mut dense_dw, &mut dbias);
        grads[a.dense_w] = dense_dw;
        grads[a.dense_b][0] = dbias;

        let last = tape.blocks.last().map_or(&tape.stem_out, |t| &t.out);
        let mut dh = gap_backward(&dpooled, last);
        for (i, blk) in a.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[i];
            let input = if i == 0 { &tape.stem_out } else { &tape.blocks[i - 1].out };
            relu_backward_inplace(&bt.out, &mut dh);
            // Skip branch.
            let mut din = match (blk.proj, &bt.proj_bn) {
                (Some((pc, pb)), Some(pt)) => {
                    let dz = self.bn_grads(pb, pt, &dh, &mut grads);
                    self.conv_grads(pc, input, &dz, &mut grads, true).expect("dx requested")
                }
                _ => dh.clone(),
            };
            // Main branch.
            let dz2 = self.bn_grads(blk.bn2, &bt.bn2, &dh, &mut grads);
            let mut dmid = self.conv_grads(blk.conv2, &bt.mid, &dz2, &mut grads, true).expect("dx requested");
            relu_backward_inplace(&bt.mid, &mut dmid);
            let dz1 = self.bn_grads(blk.bn1, &bt.bn1, &dmid, &mut grads);
            let dmain = self.conv_grads(blk.conv1, input, &dz1, &mut grads, true).expect("dx requested");
            for (d, m) in din.data.iter_mut().zip(&dmain.data) {
                *d = *d + *m;
            }
            dh = din;
        }
        relu_backward_inplace(&tape.stem_out, &mut dh);
        let (conv, bn) = a.stem;
        let dz = self.bn_grads(bn, &tape.stem_bn, &dh, &mut grads);
        self.conv_grads(conv, &tape.input, &dz, &mut grads, false);
        grads
    }

    fn bn_grads(&self, bn: Bn, tape: &BnTape<T>, dy: &Act<T>, grads: &mut [Vec<T>]) -> Act<T> {
        let mut dg = std::mem::take(&mut grads[bn.gamma]);
        let mut db = std::mem::take(&mut grads[bn.beta]);
        let dx = bn_backward(tape, self.p(bn.gamma), dy, &mut dg, &mut db);
        grads[bn.gamma] = dg;
        grads[bn.beta] = db;
        dx
    }

    fn conv_grads(&self, conv: Conv, x: &Act<T>, dy: &Act<T>, grads: &mut [Vec<T>], need_dx: bool) -> Option<Act<T>> {
        let mut dw = std::mem::take(&mut grads[conv.w]);
        let dx = conv.shape.backward(self.p(conv.w), x, dy, &mut dw, need_dx);
        grads[conv.w] = dw;
        dx
    }

    /// Folds the batch statistics of `tape` into the running estimates:
    /// `running = momentum·running + (1 − momentum)·batch`.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        let m = self.config.bn_momentum;
        let mut pairs: Vec<(Bn, &BnTape<T>)> = vec![(self.arch.stem.1, &tape.stem_bn)];
        for (blk, bt) in self.arch.blocks.iter().zip(&tape.blocks) {
            pairs.push((blk.bn1, &bt.bn1));
            pairs.push((blk.bn2, &bt.bn2));
            if let (Some((_, pb)), Some(pt)) = (blk.proj, &bt.proj_bn) {
                pairs.push((pb, pt));
            }
        }
        for (bn, t) in pairs {
            for (r, b) in self.params.tensors[bn.mean].data.iter_mut().zip(&t.mean) {
                *r = T::of(m * r.f64() + (1.0 - m) * b);
            }
            for (r, b) in self.params.tensors[bn.var].data.iter_mut().zip(&t.var_unbiased) {
                *r = T::of(m * r.f64() + (1.0 - m) * b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(blocks: Vec<(usize, usize)>) -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            stem_channels: 2,
            blocks,
            ..ModelConfig::default()
        }
    }

    fn batch(b: usize, seed: u64) -> Act<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Act::from_vec(b, 2, 8, 8, (0..b * 128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shapes_and_names() {
        let m: Model<f32> = Model::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<&str> = m.params.tensors.iter().map(|t| t.name.as_str()).collect();
        assert!(names.contains(&"block1.proj.w"));
        assert!(!names.contains(&"block0.proj.w"));
        assert_eq!(m.params.get("dense.w").unwrap().shape, vec![32]);
        let n = m.params.trainable_count();
        assert!((15_000..40_000).contains(&n), "{n}");
    }

    #[test]
    fn eval_logits_finite_and_duplicates_match() {
        let m: Model<f64> = Model::new(tiny(vec![(3, 2)]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut x = batch(4, 2);
        let item = x.item(0).to_vec();
        x.data[128..256].copy_from_slice(&item);
        let z = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(z.len(), 4);
        assert!(z.iter().all(|v| v.is_finite()));
        assert_eq!(z[0], z[1]);
    }

    #[test]
    fn zero_dense_gives_zero_logits() {
        let mut m: Model<f64> = Model::new(tiny(vec![(2, 1)]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        m.params.get_mut("dense.w").unwrap().data.fill(0.0);
        let x = Act::zeros(3, 2, 8, 8);
        assert_eq!(m.forward(&x, Mode::Eval).unwrap(), vec![0.0; 3]);
        assert_eq!(m.forward(&x, Mode::Train).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn eval_permutation_equivariant() {
        let m: Model<f64> = Model::new(tiny(vec![(3, 2)]), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = batch(3, 4);
        let z = m.forward(&x, Mode::Eval).unwrap();
        let mut rev = x.clone();
        for b in 0..3 {
            rev.data[b * 128..(b + 1) * 128].copy_from_slice(x.item(2 - b));
        }
        let zr = m.forward(&rev, Mode::Eval).unwrap();
        assert_eq!(z, vec![zr[2], zr[1], zr[0]]);
    }

    #[test]
    fn wrong_channels_rejected() {
        let m: Model<f64> = Model::new(tiny(vec![]), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Act::zeros(1, 3, 8, 8);
        assert!(matches!(m.forward(&x, Mode::Eval), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn params_round_trip() {
        let m: Model<f32> = Model::new(tiny(vec![(3, 2)]), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let again = Model::from_params(m.config.clone(), m.params.clone()).unwrap();
        assert_eq!(again.params, m.params);
        let mut bad = m.params.clone();
        bad.tensors.pop();
        assert!(Model::from_params(m.config.clone(), bad).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut m: Model<f64> = Model::new(tiny(vec![]), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let (_, tape) = m.forward_train(&batch(4, 7)).unwrap();
        m.update_running_stats(&tape);
        let rm = &m.params.get("stem.bn.running_mean").unwrap().data;
        for (r, b) in rm.iter().zip(&tape.stem_bn.mean) {
            assert!((r - 0.1 * b).abs() < 1e-15);
        }
    }

    fn loss(m: &Model<f64>, x: &Act<f64>, labels: &[u8]) -> f64 {
        let z = m.forward(x, Mode::Train).unwrap();
        crate::nn::weighted_bce(&z, labels, 2.5).unwrap().0
    }

    /// Largest relative error between backprop and central differences.
    fn grad_check(blocks: Vec<(usize, usize)>) -> f64 {
        let mut m: Model<f64> = Model::new(tiny(blocks), &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let x = batch(4, 22);
        let labels = [1, 0, 0, 1];
        let (z, tape) = m.forward_train(&x).unwrap();
        let (_, dz) = crate::nn::weighted_bce(&z, &labels, 2.5).unwrap();
        let grads = m.backward(&tape, &dz);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for t in 0..m.params.tensors.len() {
            if !m.params.tensors[t].trainable {
                assert!(grads[t].iter().all(|&g| g == 0.0));
                continue;
            }
            assert!(grads[t].iter().any(|&g| g != 0.0), "{} has no gradient", m.params.tensors[t].name);
            for j in 0..m.params.tensors[t].data.len() {
                let orig = m.params.tensors[t].data[j];
                m.params.tensors[t].data[j] = orig + h;
                let lp = loss(&m, &x, &labels);
                m.params.tensors[t].data[j] = orig - h;
                let lm = loss(&m, &x, &labels);
                m.params.tensors[t].data[j] = orig;
                let num = (lp - lm) / (2.0 * h);
                let rel = (num - grads[t][j]).abs() / num.abs().max(grads[t][j].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(grad_check(vec![(2, 1)]) < 1e-4);
        assert!(grad_check(vec![(3, 2)]) < 1e-4);
        assert!(grad_check(vec![]) < 1e-4);
    }

    #[test]
    fn duplicate_items_share_gradient_contribution() {
        let m: Model<f64> = Model::new(tiny(vec![(2, 1)]), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x1 = batch(1, 30);
        let mut x2 = Act::zeros(2, 2, 8, 8);
        x2.data[..128].copy_from_slice(&x1.data);
        x2.data[128..].copy_from_slice(&x1.data);
        // A duplicated item contributes the same dense gradient twice.
        let (z, tape) = m.forward_train(&x2).unwrap();
        assert_eq!(z[0], z[1]);
        let g = m.backward(&tape, &[1.0, 1.0]);
        let g1 = m.backward(&tape, &[1.0, 0.0]);
        let dw = m.arch.dense_w;
        for (a, b) in g[dw].iter().zip(&g1[dw]) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
