//! The improved residual classifier: stem, four stages of basic blocks,
//! global average pooling, linear head.
//!
//! Two structural improvements over the stock layout, both behind config
//! flags so the stock network remains available as the ablation baseline:
//!
//! * downsampling shortcuts replace the strided 1×1 convolution with
//!   AvgPool(2,2) followed by a stride-1 1×1 convolution and BN;
//! * consecutive block pairs within a stage get an extra additive
//!   connection from the pair's input into the second block's
//!   pre-activation sum (projected by the same shortcut unit on shape
//!   mismatch), followed by the block's single ReLU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::{
    avg_pool2d_backward, avg_pool2d_forward, batch_norm_backward, batch_norm_forward,
    conv2d_backward, conv2d_forward, global_avg_pool_backward, global_avg_pool_forward,
    linear_backward, linear_forward, load_checkpoint, max_pool2d_backward,
    max_pool2d_forward_padded, relu_backward, relu_forward, save_checkpoint, AvgPoolCache,
    BnCache, BnMode, ConvCache, LinearCache, MaxPoolCache, Parameter, ReluCache, Tensor,
};
use crate::Result;

/// Which block pairs receive the long-range additive connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongRange {
    Off,
    /// Every complete pair (2j, 2j+1) in every stage; an odd final block
    /// stays unpaired.
    AllPairs,
    /// Explicit (stage, pair) indexes, for experiments on link placement.
    Pairs(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input shape C×H×W.
    pub input: (usize, usize, usize),
    pub stem_width: usize,
    pub stage_widths: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub num_classes: usize,
    /// Improvement (1): pool+conv downsampling shortcuts.
    pub pool_conv_shortcut: bool,
    /// Improvement (2): long-range pair connections.
    pub long_range: LongRange,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input: (3, 256, 256),
            stem_width: 64,
            stage_widths: [64, 128, 256, 512],
            blocks_per_stage: [3, 4, 6, 3],
            num_classes: 5,
            pool_conv_shortcut: true,
            long_range: LongRange::AllPairs,
        }
    }
}

impl ArchConfig {
    /// Desk-scale variant used by the training experiments.
    pub fn mini() -> Self {
        ArchConfig {
            input: (3, 64, 64),
            stem_width: 16,
            stage_widths: [16, 32, 64, 128],
            blocks_per_stage: [2, 2, 2, 2],
            num_classes: 5,
            pool_conv_shortcut: true,
            long_range: LongRange::AllPairs,
        }
    }

    /// Same layout with both improvements disabled.
    pub fn stock(mut self) -> Self {
        self.pool_conv_shortcut = false;
        self.long_range = LongRange::Off;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.stem_width < 1 || self.stage_widths.iter().any(|&w| w < 1) {
            return Err(Error::Config("widths must be >= 1".into()));
        }
        if self.blocks_per_stage.iter().any(|&b| b < 1) {
            return Err(Error::Config("each stage needs at least one block".into()));
        }
        let (_, h, w) = self.input;
        // stem halves twice, stages 2..4 halve once each
        if h / 32 == 0 || w / 32 == 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} collapses to zero spatial size"
            )));
        }
        Ok(())
    }

    fn wants_link(&self, stage: usize, pair: usize) -> bool {
        match &self.long_range {
            LongRange::Off => false,
            LongRange::AllPairs => true,
            LongRange::Pairs(list) => list.contains(&(stage, pair)),
        }
    }
}

pub(crate) struct Conv {
    pub weight: Parameter,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn init(
        name: String,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // He-scaled normal: std = sqrt(2 / fan_in)
        let fan_in = (in_ch * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data = (0..out_ch * in_ch * k * k)
            .map(|_| normal(rng) * std)
            .collect();
        Conv {
            weight: Parameter::new(name, Tensor::from_vec(&[out_ch, in_ch, k, k], data).unwrap()),
            stride,
            padding,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        conv2d_forward(x, &self.weight.value, self.stride, self.padding)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor, cache: &ConvCache) -> Result<Tensor> {
        let (dx, dw) = conv2d_backward(x, &self.weight.value, grad_out, cache)?;
        self.weight.value.accumulate_grad(dw.data());
        Ok(dx)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub(crate) struct Bn {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

impl Bn {
    fn init(prefix: String, channels: usize) -> Self {
        Bn {
            gamma: Parameter::new(
                format!("{prefix}.gamma"),
                Tensor::from_vec(&[channels], vec![1.0; channels]).unwrap(),
            ),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, BnCache)> {
        batch_norm_forward(
            x,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running_mean,
            &mut self.running_var,
            BN_MOMENTUM,
            BN_EPS,
            mode,
        )
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &BnCache) -> Result<Tensor> {
        let (dx, dgamma, dbeta) = batch_norm_backward(&self.gamma.value, grad_out, cache)?;
        self.gamma.value.accumulate_grad(dgamma.data());
        self.beta.value.accumulate_grad(dbeta.data());
        Ok(dx)
    }
}

/// Shortcut / long-link projection: optional AvgPool(2,2), 1×1 conv, BN.
pub(crate) struct Projection {
    pool: bool,
    conv: Conv,
    bn: Bn,
}

pub(crate) struct ProjCache {
    input: Tensor,
    pool: Option<AvgPoolCache>,
    pooled: Option<Tensor>,
    conv: ConvCache,
    bn: BnCache,
}

impl Projection {
    fn init(
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        downsample: bool,
        pool_conv: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pool = downsample && pool_conv;
        let conv_stride = if downsample && !pool_conv { 2 } else { 1 };
        Projection {
            pool,
            conv: Conv::init(
                format!("{prefix}.conv.weight"),
                out_ch,
                in_ch,
                1,
                conv_stride,
                0,
                rng,
            ),
            bn: Bn::init(format!("{prefix}.bn"), out_ch),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, ProjCache)> {
        let (pooled, pool_cache) = if self.pool {
            let (p, c) = avg_pool2d_forward(x, 2, 2)?;
            (Some(p), Some(c))
        } else {
            (None, None)
        };
        let conv_in = pooled.as_ref().unwrap_or(x);
        let (c, conv_cache) = self.conv.forward(conv_in)?;
        let (b, bn_cache) = self.bn.forward(&c, mode)?;
        Ok((
            b,
            ProjCache {
                input: x.clone(),
                pool: pool_cache,
                pooled,
                conv: conv_cache,
                bn: bn_cache,
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &ProjCache) -> Result<Tensor> {
        let db = self.bn.backward(grad_out, &cache.bn)?;
        let conv_in = cache.pooled.as_ref().unwrap_or(&cache.input);
        let dconv = self.conv.backward(conv_in, &db, &cache.conv)?;
        match &cache.pool {
            Some(pc) => avg_pool2d_backward(&dconv, pc),
            None => Ok(dconv),
        }
    }
}

/// Two 3×3 conv+BN layers with one ReLU between and one after the
/// residual addition.
pub(crate) struct BasicBlock {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    shortcut: Option<Projection>,
}

pub(crate) struct BlockCache {
    x: Tensor,
    conv1: ConvCache,
    bn1: BnCache,
    relu1: ReluCache,
    r1: Tensor,
    conv2: ConvCache,
    bn2: BnCache,
    shortcut: Option<ProjCache>,
    out_relu: ReluCache,
}

impl BasicBlock {
    fn init(
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        pool_conv: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some(Projection::init(
                &format!("{prefix}.shortcut"),
                in_ch,
                out_ch,
                stride != 1,
                pool_conv,
                rng,
            ))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv::init(format!("{prefix}.conv1.weight"), out_ch, in_ch, 3, stride, 1, rng),
            bn1: Bn::init(format!("{prefix}.bn1"), out_ch),
            conv2: Conv::init(format!("{prefix}.conv2.weight"), out_ch, out_ch, 3, 1, 1, rng),
            bn2: Bn::init(format!("{prefix}.bn2"), out_ch),
            shortcut,
        }
    }

    /// `extra` is the long-range pair input (already projected), added to
    /// the pre-activation sum.
    fn forward(
        &mut self,
        x: &Tensor,
        extra: Option<&Tensor>,
        mode: BnMode,
    ) -> Result<(Tensor, BlockCache)> {
        let (c1, conv1_cache) = self.conv1.forward(x)?;
        let (b1, bn1_cache) = self.bn1.forward(&c1, mode)?;
        let (r1, relu1_cache) = relu_forward(&b1)?;
        let (c2, conv2_cache) = self.conv2.forward(&r1)?;
        let (b2, bn2_cache) = self.bn2.forward(&c2, mode)?;
        let (shortcut_out, shortcut_cache) = match &mut self.shortcut {
            Some(proj) => {
                let (s, c) = proj.forward(x, mode)?;
                (s, Some(c))
            }
            None => (x.clone(), None),
        };
        if shortcut_out.shape() != b2.shape() {
            return Err(Error::Shape(format!(
                "residual {:?} vs shortcut {:?}",
                b2.shape(),
                shortcut_out.shape()
            )));
        }
        let mut sum = b2.data().to_vec();
        for (s, v) in sum.iter_mut().zip(shortcut_out.data()) {
            *s += v;
        }
        if let Some(e) = extra {
            if e.shape() != b2.shape() {
                return Err(Error::Shape(format!(
                    "long-range input {:?} vs block output {:?}",
                    e.shape(),
                    b2.shape()
                )));
            }
            for (s, v) in sum.iter_mut().zip(e.data()) {
                *s += v;
            }
        }
        let sum = Tensor::from_vec(b2.shape(), sum)?;
        let (out, out_relu) = relu_forward(&sum)?;
        Ok((
            out,
            BlockCache {
                x: x.clone(),
                conv1: conv1_cache,
                bn1: bn1_cache,
                relu1: relu1_cache,
                r1,
                conv2: conv2_cache,
                bn2: bn2_cache,
                shortcut: shortcut_cache,
                out_relu,
            },
        ))
    }

    /// Returns (d_input, d_extra): the gradient flowing to the block input
    /// and to the long-range addend (when one was added).
    fn backward(
        &mut self,
        grad_out: &Tensor,
        cache: &BlockCache,
        had_extra: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let dsum = relu_backward(grad_out, &cache.out_relu)?;
        // residual branch
        let db2 = self.bn2.backward(&dsum, &cache.bn2)?;
        let dr1 = self.conv2.backward(&cache.r1, &db2, &cache.conv2)?;
        let db1 = relu_backward(&dr1, &cache.relu1)?;
        let dc1 = self.bn1.backward(&db1, &cache.bn1)?;
        let dx_res = self.conv1.backward(&cache.x, &dc1, &cache.conv1)?;
        // shortcut branch
        let dx_short = match (&mut self.shortcut, &cache.shortcut) {
            (Some(proj), Some(pc)) => proj.backward(&dsum, pc)?,
            _ => dsum.clone(),
        };
        let mut dx = dx_res.data().to_vec();
        for (a, b) in dx.iter_mut().zip(dx_short.data()) {
            *a += b;
        }
        let dx = Tensor::from_vec(cache.x.shape(), dx)?;
        let dextra = if had_extra { Some(dsum) } else { None };
        Ok((dx, dextra))
    }
}

/// A long-range pair link; `projection` is present on shape mismatch.
pub(crate) struct PairLink {
    projection: Option<Projection>,
}

/// Per-pair forward record: the tensor added into the second block and the
/// projection cache when a projection ran.
struct LinkCache {
    projected: Tensor,
    proj: Option<ProjCache>,
}

/// The assembled network.
pub struct Model {
    pub config: ArchConfig,
    stem_conv: Conv,
    stem_bn: Bn,
    stages: Vec<Vec<BasicBlock>>,
    links: Vec<Vec<Option<PairLink>>>,
    head_weight: Parameter,
    head_bias: Parameter,
}

/// Everything backward needs from one training forward pass.
pub struct ForwardCache {
    input: Tensor,
    stem_conv: ConvCache,
    stem_bn: BnCache,
    stem_relu: ReluCache,
    stem_pool: MaxPoolCache,
    blocks: Vec<Vec<BlockCache>>,
    links: Vec<Vec<Option<LinkCache>>>,
    gap_shape: [usize; 4],
    head: LinearCache,
}

/// Builds the network with seeded He-style initialization.
pub fn build(config: &ArchConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (in_ch, _, _) = config.input;
    let stem_conv = Conv::init(
        "stem.conv.weight".into(),
        config.stem_width,
        in_ch,
        7,
        2,
        3,
        &mut rng,
    );
    let stem_bn = Bn::init("stem.bn".into(), config.stem_width);

    let mut stages = Vec::new();
    let mut links: Vec<Vec<Option<PairLink>>> = Vec::new();
    let mut prev_width = config.stem_width;
    for (si, (&width, &blocks)) in config
        .stage_widths
        .iter()
        .zip(&config.blocks_per_stage)
        .enumerate()
    {
        let mut stage = Vec::new();
        let mut stage_links = Vec::new();
        for bi in 0..blocks {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let in_ch = if bi == 0 { prev_width } else { width };
            stage.push(BasicBlock::init(
                &format!("stage{si}.block{bi}"),
                in_ch,
                width,
                stride,
                config.pool_conv_shortcut,
                &mut rng,
            ));
        }
        for pair in 0..blocks / 2 {
            let link = if config.wants_link(si, pair) {
                // the pair input differs in shape from the pair output
                // exactly when the pair opens with the stage's
                // downsampling / widening block
                let first = pair * 2;
                let pair_in = if first == 0 { prev_width } else { width };
                let downsample = si > 0 && first == 0;
                let projection = if downsample || pair_in != width {
                    Some(Projection::init(
                        &format!("stage{si}.link{pair}"),
                        pair_in,
                        width,
                        downsample,
                        config.pool_conv_shortcut,
                        &mut rng,
                    ))
                } else {
                    None
                };
                Some(PairLink { projection })
            } else {
                None
            };
            stage_links.push(link);
        }
        links.push(stage_links);
        stages.push(stage);
        prev_width = width;
    }

    let feat = config.stage_widths[3];
    let head_std = 1.0 / (feat as f64).sqrt();
    let head_weight = Parameter::new(
        "head.weight",
        Tensor::from_vec(
            &[feat, config.num_classes],
            (0..feat * config.num_classes)
                .map(|_| normal(&mut rng) * head_std)
                .collect(),
        )?,
    );
    let head_bias = Parameter::new("head.bias", Tensor::zeros(&[config.num_classes]));

    Ok(Model {
        config: config.clone(),
        stem_conv,
        stem_bn,
        stages,
        links,
        head_weight,
        head_bias,
    })
}

impl Model {
    /// Forward pass keeping every cache backward needs.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_inner(input, BnMode::Train)
    }

    /// Forward pass in eval mode (running BN statistics).
    pub fn forward_eval(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_inner(input, BnMode::Eval)?.0)
    }

    fn forward_inner(&mut self, input: &Tensor, mode: BnMode) -> Result<(Tensor, ForwardCache)> {
        let (c, stem_conv_cache) = self.stem_conv.forward(input)?;
        let (b, stem_bn_cache) = self.stem_bn.forward(&c, mode)?;
        let (r, stem_relu_cache) = relu_forward(&b)?;
        let (mut x, stem_pool_cache) = max_pool2d_forward_padded(&r, 3, 2, 1)?;

        let mut block_caches = Vec::with_capacity(self.stages.len());
        let mut link_caches: Vec<Vec<Option<LinkCache>>> = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter_mut().enumerate() {
            let pair_count = self.links[si].len();
            let mut stage_caches = Vec::with_capacity(stage.len());
            let mut stage_link_caches: Vec<Option<LinkCache>> =
                (0..pair_count).map(|_| None).collect();
            let mut pair_input: Option<Tensor> = None;
            for (bi, block) in stage.iter_mut().enumerate() {
                let pair = bi / 2;
                let link = if pair < pair_count {
                    self.links[si][pair].as_mut()
                } else {
                    None
                };
                if bi % 2 == 0 && link.is_some() {
                    pair_input = Some(x.clone());
                }
                let extra: Option<&Tensor> = if bi % 2 == 1 {
                    if let (Some(link), Some(pin)) = (link, pair_input.take()) {
                        let cache = match &mut link.projection {
                            Some(proj) => {
                                let (p, pc) = proj.forward(&pin, mode)?;
                                LinkCache {
                                    projected: p,
                                    proj: Some(pc),
                                }
                            }
                            None => LinkCache {
                                projected: pin,
                                proj: None,
                            },
                        };
                        stage_link_caches[pair] = Some(cache);
                        stage_link_caches[pair].as_ref().map(|lc| &lc.projected)
                    } else {
                        None
                    }
                } else {
                    None
                };
                let (out, cache) = block.forward(&x, extra, mode)?;
                x = out;
                stage_caches.push(cache);
            }
            block_caches.push(stage_caches);
            link_caches.push(stage_link_caches);
        }

        let (pooled, gap_shape) = global_avg_pool_forward(&x)?;
        let (logits, head_cache) =
            linear_forward(&pooled, &self.head_weight.value, &self.head_bias.value)?;
        Ok((
            logits,
            ForwardCache {
                input: input.clone(),
                stem_conv: stem_conv_cache,
                stem_bn: stem_bn_cache,
                stem_relu: stem_relu_cache,
                stem_pool: stem_pool_cache,
                blocks: block_caches,
                links: link_caches,
                gap_shape,
                head: head_cache,
            },
        ))
    }

    /// Backpropagates the logit gradient, accumulating parameter
    /// gradients.
    pub fn backward(&mut self, grad_logits: &Tensor, cache: &ForwardCache) -> Result<()> {
        let (dpooled, dhw, dhb) =
            linear_backward(&self.head_weight.value, grad_logits, &cache.head)?;
        self.head_weight.value.accumulate_grad(dhw.data());
        self.head_bias.value.accumulate_grad(dhb.data());
        let mut dx = global_avg_pool_backward(&dpooled, cache.gap_shape)?;

        for si in (0..self.stages.len()).rev() {
            // gradient waiting to be added at the pair's first block input
            let mut pending: Option<(usize, Tensor)> = None;
            for bi in (0..self.stages[si].len()).rev() {
                let pair = bi / 2;
                let had_extra =
                    bi % 2 == 1 && cache.links[si].get(pair).map_or(false, |l| l.is_some());
                let (dinput, dextra) =
                    self.stages[si][bi].backward(&dx, &cache.blocks[si][bi], had_extra)?;
                dx = dinput;
                if let Some(de) = dextra {
                    let link_cache = cache.links[si][pair].as_ref().unwrap();
                    let dpin = match (&mut self.links[si][pair], &link_cache.proj) {
                        (Some(PairLink { projection: Some(proj) }), Some(pc)) => {
                            proj.backward(&de, pc)?
                        }
                        _ => de,
                    };
                    pending = Some((pair * 2, dpin));
                }
                if let Some((target, _)) = &pending {
                    if *target == bi {
                        let (_, g) = pending.take().unwrap();
                        let mut sum = dx.data().to_vec();
                        for (a, b) in sum.iter_mut().zip(g.data()) {
                            *a += b;
                        }
                        dx = Tensor::from_vec(dx.shape(), sum)?;
                    }
                }
            }
            debug_assert!(pending.is_none());
        }

        let dpool = max_pool2d_backward(&dx, &cache.stem_pool)?;
        let drelu = relu_backward(&dpool, &cache.stem_relu)?;
        let dbn = self.stem_bn.backward(&drelu, &cache.stem_bn)?;
        self.stem_conv
            .backward(&cache.input, &dbn, &cache.stem_conv)?;
        Ok(())
    }

    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.stem_conv.weight);
        f(&self.stem_bn.gamma);
        f(&self.stem_bn.beta);
        for (stage, links) in self.stages.iter().zip(&self.links) {
            for block in stage {
                f(&block.conv1.weight);
                f(&block.bn1.gamma);
                f(&block.bn1.beta);
                f(&block.conv2.weight);
                f(&block.bn2.gamma);
                f(&block.bn2.beta);
                if let Some(proj) = &block.shortcut {
                    f(&proj.conv.weight);
                    f(&proj.bn.gamma);
                    f(&proj.bn.beta);
                }
            }
            for link in links.iter().flatten() {
                if let Some(proj) = &link.projection {
                    f(&proj.conv.weight);
                    f(&proj.bn.gamma);
                    f(&proj.bn.beta);
                }
            }
        }
        f(&self.head_weight);
        f(&self.head_bias);
    }

    /// All trainable parameters in a stable order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = vec![
            &mut self.stem_conv.weight,
            &mut self.stem_bn.gamma,
            &mut self.stem_bn.beta,
        ];
        for (stage, links) in self.stages.iter_mut().zip(&mut self.links) {
            for block in stage {
                out.push(&mut block.conv1.weight);
                out.push(&mut block.bn1.gamma);
                out.push(&mut block.bn1.beta);
                out.push(&mut block.conv2.weight);
                out.push(&mut block.bn2.gamma);
                out.push(&mut block.bn2.beta);
                if let Some(proj) = &mut block.shortcut {
                    out.push(&mut proj.conv.weight);
                    out.push(&mut proj.bn.gamma);
                    out.push(&mut proj.bn.beta);
                }
            }
            for link in links.iter_mut().flatten() {
                if let Some(proj) = &mut link.projection {
                    out.push(&mut proj.conv.weight);
                    out.push(&mut proj.bn.gamma);
                    out.push(&mut proj.bn.beta);
                }
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        self.visit_params(&mut |p| total += p.value.len());
        total
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.value.zero_grad();
        }
    }

    fn visit_bn<'a>(&'a self, f: &mut dyn FnMut(String, &'a Bn)) {
        f("stem.bn".into(), &self.stem_bn);
        for (si, (stage, links)) in self.stages.iter().zip(&self.links).enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                f(format!("stage{si}.block{bi}.bn1"), &block.bn1);
                f(format!("stage{si}.block{bi}.bn2"), &block.bn2);
                if let Some(proj) = &block.shortcut {
                    f(format!("stage{si}.block{bi}.shortcut.bn"), &proj.bn);
                }
            }
            for (pi, link) in links.iter().enumerate() {
                if let Some(PairLink {
                    projection: Some(proj),
                }) = link
                {
                    f(format!("stage{si}.link{pi}.bn"), &proj.bn);
                }
            }
        }
    }

    /// Writes the checkpoint (parameters plus BN running statistics) and an
    /// `ArchConfig` JSON sidecar at `<path>.json`.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut state: Vec<(String, Tensor)> = Vec::new();
        self.visit_params(&mut |p| state.push((p.name.clone(), p.value.clone())));
        self.visit_bn(&mut |prefix, bn| {
            state.push((
                format!("{prefix}.running_mean"),
                Tensor::from_vec(&[bn.running_mean.len()], bn.running_mean.clone()).unwrap(),
            ));
            state.push((
                format!("{prefix}.running_var"),
                Tensor::from_vec(&[bn.running_var.len()], bn.running_var.clone()).unwrap(),
            ));
        });
        let refs: Vec<(String, &Tensor)> = state.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_checkpoint(path, &refs)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config).unwrap();
        std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar.display().to_string(), e))
    }

    /// Rebuilds a model from a checkpoint and its config sidecar.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Model> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|e| Error::io(sidecar.display().to_string(), e))?;
        let config: ArchConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(sidecar.display().to_string(), e.to_string()))?;
        let mut model = build(&config, 0)?;
        let mut by_name: std::collections::HashMap<String, Tensor> =
            load_checkpoint(path)?.into_iter().collect();
        for p in model.parameters_mut() {
            let t = by_name.remove(&p.name).ok_or_else(|| {
                Error::format(
                    path.display().to_string(),
                    format!("missing parameter {}", p.name),
                )
            })?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint {} has shape {:?}, model wants {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        // restore BN running stats by name
        let mut names: Vec<String> = Vec::new();
        model.visit_bn(&mut |prefix, _| names.push(prefix));
        for prefix in names {
            let mean = by_name
                .remove(&format!("{prefix}.running_mean"))
                .ok_or_else(|| {
                    Error::format(
                        path.display().to_string(),
                        format!("missing {prefix}.running_mean"),
                    )
                })?;
            let var = by_name
                .remove(&format!("{prefix}.running_var"))
                .ok_or_else(|| {
                    Error::format(
                        path.display().to_string(),
                        format!("missing {prefix}.running_var"),
                    )
                })?;
            model.set_bn_running(&prefix, mean.data(), var.data())?;
        }
        Ok(model)
    }

    fn set_bn_running(&mut self, prefix: &str, mean: &[f64], var: &[f64]) -> Result<()> {
        let bn = self.find_bn_mut(prefix).ok_or_else(|| {
            Error::Format {
                path: "checkpoint".into(),
                message: format!("unknown bn {prefix}"),
            }
        })?;
        if mean.len() != bn.running_mean.len() || var.len() != bn.running_var.len() {
            return Err(Error::Shape(format!("bn {prefix} running stat length mismatch")));
        }
        bn.running_mean.copy_from_slice(mean);
        bn.running_var.copy_from_slice(var);
        Ok(())
    }

    fn find_bn_mut(&mut self, prefix: &str) -> Option<&mut Bn> {
        if prefix == "stem.bn" {
            return Some(&mut self.stem_bn);
        }
        for (si, (stage, links)) in self.stages.iter_mut().zip(&mut self.links).enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                if prefix == format!("stage{si}.block{bi}.bn1") {
                    return Some(&mut block.bn1);
                }
                if prefix == format!("stage{si}.block{bi}.bn2") {
                    return Some(&mut block.bn2);
                }
                if prefix == format!("stage{si}.block{bi}.shortcut.bn") {
                    return block.shortcut.as_mut().map(|p| &mut p.bn);
                }
            }
            for (pi, link) in links.iter_mut().enumerate() {
                if prefix == format!("stage{si}.link{pi}.bn") {
                    if let Some(PairLink {
                        projection: Some(proj),
                    }) = link
                    {
                        return Some(&mut proj.bn);
                    }
                }
            }
        }
        None
    }
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Zeroes the residual-branch weights of one block so its output is
    /// ReLU(shortcut(x)).
    pub fn zero_residual_branch(model: &mut Model, stage: usize, block: usize) {
        let b = &mut model.stages[stage][block];
        for v in b.conv1.weight.value.data_mut() {
            *v = 0.0;
        }
        for v in b.conv2.weight.value.data_mut() {
            *v = 0.0;
        }
        // with conv2 output all-zero, bn2 contributes only beta (zero)
        for v in b.bn2.gamma.value.data_mut() {
            *v = 0.0;
        }
    }

    pub fn block_forward(
        model: &mut Model,
        stage: usize,
        block: usize,
        x: &Tensor,
        mode: BnMode,
    ) -> Result<Tensor> {
        model.stages[stage][block].forward(x, None, mode).map(|(y, _)| y)
    }

    pub fn block_has_shortcut(model: &Model, stage: usize, block: usize) -> bool {
        model.stages[stage][block].shortcut.is_some()
    }
}
