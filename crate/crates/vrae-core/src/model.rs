//! The vertical residual autoencoder and its plain-autoencoder baseline.
//!
//! The encoder is the stem plus the first `depth-1` bottleneck stages of
//! ResNet-50. In the VRAE variant an auxiliary block per stage pools the
//! raw input down to that stage's spatial size, lifts it to the stage's
//! channel width (3x3 reflect-padded conv, batch norm, ReLU) and injects
//! it into the main stream by element-wise addition before the next
//! stage. The decoder mirrors the encoder's cumulative downsampling with
//! a cascade of 4x4/stride-2 transposed convolutions, each followed by
//! ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avgpool, maxpool_3x3_s2, maxpool_backward, relu, relu_backward, BatchNorm2d,
    BnCache, Conv2d, ConvTranspose2d, GradStore, MaxPoolCache,
};
use crate::rng::Rng;
use crate::tensor::{ConvSpec, PadMode, Tensor4};

pub const DEFAULT_STAGE_WIDTHS: [usize; 5] = [64, 256, 512, 1024, 2048];
/// Stem plus the ResNet-50 block counts for stages 2..5.
pub const DEFAULT_STAGE_BLOCKS: [usize; 5] = [1, 3, 4, 6, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Vrae,
    Ae,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Vrae => "vrae",
            Arch::Ae => "ae",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vrae" => Ok(Arch::Vrae),
            "ae" => Ok(Arch::Ae),
            other => Err(Error::Config(format!("unknown arch '{other}', expected vrae|ae"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VraeConfig {
    pub arch: Arch,
    /// Encoder depth k: stem plus k-1 bottleneck stages, k in 2..=5.
    pub depth: usize,
    /// Input dims (channels, height, width).
    pub input: (usize, usize, usize),
    pub stage_widths: [usize; 5],
    pub stage_blocks: [usize; 5],
}

impl VraeConfig {
    pub fn new(arch: Arch, depth: usize) -> Self {
        VraeConfig {
            arch,
            depth,
            input: (3, 256, 256),
            stage_widths: DEFAULT_STAGE_WIDTHS,
            stage_blocks: DEFAULT_STAGE_BLOCKS,
        }
    }

    pub fn with_input_hw(mut self, h: usize, w: usize) -> Self {
        self.input.1 = h;
        self.input.2 = w;
        self
    }

    /// A thin test-scale variant: narrow widths, one block per stage.
    pub fn reduced(arch: Arch, depth: usize, hw: usize) -> Self {
        VraeConfig {
            arch,
            depth,
            input: (3, hw, hw),
            stage_widths: [8, 16, 32, 64, 128],
            stage_blocks: [1, 1, 1, 1, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.depth) {
            return Err(Error::Config(format!("depth {} must be in 2..=5", self.depth)));
        }
        let (c, h, w) = self.input;
        if c == 0 {
            return Err(Error::Config("input channels must be >= 1".into()));
        }
        let factor = 1usize << self.depth;
        for (axis, dim) in [("height", h), ("width", w)] {
            if dim % factor != 0 || dim < factor.max(8) {
                return Err(Error::Config(format!(
                    "input {axis} {dim} must be a multiple of 2^depth={factor} and at least {}",
                    factor.max(8)
                )));
            }
        }
        for stage in 1..=self.depth {
            let width = self.stage_widths[stage - 1];
            if width == 0 {
                return Err(Error::Config(format!("stage {stage} width must be >= 1")));
            }
            if stage >= 2 && !width.is_multiple_of(4) {
                return Err(Error::Config(format!(
                    "stage {stage} width {width} must be divisible by 4 (bottleneck quarter)"
                )));
            }
            if self.stage_blocks[stage - 1] == 0 {
                return Err(Error::Config(format!("stage {stage} block count must be >= 1")));
            }
        }
        Ok(())
    }

    /// Spatial dims of stage `i`'s output (1-based): the stem quarters the
    /// input, stage 2 keeps that size, stages 3..5 halve it again.
    pub fn stage_hw(&self, stage: usize) -> (usize, usize) {
        let (_, h, w) = self.input;
        let div = if stage <= 2 { 4 } else { 4 << (stage - 2) };
        (h / div, w / div)
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.arch.as_str().to_uppercase(), self.depth)
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: Conv2d,
    reduce_bn: BatchNorm2d,
    spatial: Conv2d,
    spatial_bn: BatchNorm2d,
    restore: Conv2d,
    restore_bn: BatchNorm2d,
    proj: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug)]
struct BottleneckCache {
    input: Tensor4,
    reduce: BnCache,
    relu1: Tensor4,
    spatial: BnCache,
    relu2: Tensor4,
    restore: BnCache,
    proj: Option<BnCache>,
    out: Tensor4,
}

fn conv_spec_no_bias(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> ConvSpec {
    ConvSpec::new(in_c, out_c, kernel, stride, PadMode::Zero, pad, false)
}

impl Bottleneck {
    fn init(seed: u64, prefix: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        let mid = out_c / 4;
        let stream = |part: &str| Rng::stream(seed, &format!("{prefix}.{part}"), 0);
        let reduce = Conv2d::init(conv_spec_no_bias(in_c, mid, 1, 1, 0), &mut stream("reduce.weight"));
        let spatial =
            Conv2d::init(conv_spec_no_bias(mid, mid, 3, stride, 1), &mut stream("spatial.weight"));
        let restore = Conv2d::init(conv_spec_no_bias(mid, out_c, 1, 1, 0), &mut stream("restore.weight"));
        let proj = (in_c != out_c || stride != 1).then(|| {
            (
                Conv2d::init(conv_spec_no_bias(in_c, out_c, 1, stride, 0), &mut stream("proj.weight")),
                BatchNorm2d::new(out_c),
            )
        });
        Bottleneck {
            reduce,
            reduce_bn: BatchNorm2d::new(mid),
            spatial,
            spatial_bn: BatchNorm2d::new(mid),
            restore,
            restore_bn: BatchNorm2d::new(out_c),
            proj,
        }
    }

    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let r = relu(&self.reduce_bn.forward_eval(&self.reduce.forward(x)?)?);
        let t = relu(&self.spatial_bn.forward_eval(&self.spatial.forward(&r)?)?);
        let mut u = self.restore_bn.forward_eval(&self.restore.forward(&t)?)?;
        match &self.proj {
            Some((conv, bn)) => u.add_assign(&bn.forward_eval(&conv.forward(x)?)?)?,
            None => u.add_assign(x)?,
        }
        Ok(relu(&u))
    }

    fn forward_train(&mut self, x: Tensor4) -> Result<(Tensor4, BottleneckCache)> {
        let (b1, reduce) = self.reduce_bn.forward_train(&self.reduce.forward(&x)?)?;
        let relu1 = relu(&b1);
        let (b2, spatial) = self.spatial_bn.forward_train(&self.spatial.forward(&relu1)?)?;
        let relu2 = relu(&b2);
        let (mut u, restore) = self.restore_bn.forward_train(&self.restore.forward(&relu2)?)?;
        let proj = match &mut self.proj {
            Some((conv, bn)) => {
                let (s, cache) = bn.forward_train(&conv.forward(&x)?)?;
                u.add_assign(&s)?;
                Some(cache)
            }
            None => {
                u.add_assign(&x)?;
                None
            }
        };
        let out = relu(&u);
        Ok((
            out.clone(),
            BottleneckCache { input: x, reduce, relu1, spatial, relu2, restore, proj, out },
        ))
    }

    /// Returns the gradient w.r.t. the block input; parameter gradients are
    /// inserted under `prefix`.
    fn backward(
        &self,
        cache: &BottleneckCache,
        upstream: &Tensor4,
        prefix: &str,
        grads: &mut GradStore,
    ) -> Result<Tensor4> {
        let g_sum = relu_backward(&cache.out, upstream);

        let bn3 = self.restore_bn.backward(&cache.restore, &g_sum)?;
        grads.insert(format!("{prefix}.restore_bn.gamma"), bn3.gamma);
        grads.insert(format!("{prefix}.restore_bn.beta"), bn3.beta);
        let conv3 = self.restore.backward(&cache.relu2, &bn3.input)?;
        grads.insert(format!("{prefix}.restore.weight"), conv3.weight);

        let g_relu2 = relu_backward(&cache.relu2, &conv3.input);
        let bn2 = self.spatial_bn.backward(&cache.spatial, &g_relu2)?;
        grads.insert(format!("{prefix}.spatial_bn.gamma"), bn2.gamma);
        grads.insert(format!("{prefix}.spatial_bn.beta"), bn2.beta);
        let conv2 = self.spatial.backward(&cache.relu1, &bn2.input)?;
        grads.insert(format!("{prefix}.spatial.weight"), conv2.weight);

        let g_relu1 = relu_backward(&cache.relu1, &conv2.input);
        let bn1 = self.reduce_bn.backward(&cache.reduce, &g_relu1)?;
        grads.insert(format!("{prefix}.reduce_bn.gamma"), bn1.gamma);
        grads.insert(format!("{prefix}.reduce_bn.beta"), bn1.beta);
        let conv1 = self.reduce.backward(&cache.input, &bn1.input)?;
        grads.insert(format!("{prefix}.reduce.weight"), conv1.weight);

        let mut g_input = conv1.input;
        match (&self.proj, &cache.proj) {
            (Some((conv, bn)), Some(proj_cache)) => {
                let bnp = bn.backward(proj_cache, &g_sum)?;
                grads.insert(format!("{prefix}.proj_bn.gamma"), bnp.gamma);
                grads.insert(format!("{prefix}.proj_bn.beta"), bnp.beta);
                let convp = conv.backward(&cache.input, &bnp.input)?;
                grads.insert(format!("{prefix}.proj.weight"), convp.weight);
                g_input.add_assign(&convp.input)?;
            }
            _ => g_input.add_assign(&g_sum)?,
        }
        Ok(g_input)
    }
}

#[derive(Debug, Clone)]
struct AuxBlock {
    target_hw: (usize, usize),
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Debug)]
struct AuxCache {
    pooled: Tensor4,
    bn: BnCache,
    out: Tensor4,
}

impl AuxBlock {
    fn init(seed: u64, prefix: &str, in_c: usize, out_c: usize, target_hw: (usize, usize)) -> Self {
        let spec = ConvSpec::new(in_c, out_c, 3, 1, PadMode::Reflect, 1, false);
        let conv = Conv2d::init(spec, &mut Rng::stream(seed, &format!("{prefix}.conv.weight"), 0));
        AuxBlock { target_hw, conv, bn: BatchNorm2d::new(out_c) }
    }

    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let pooled = adaptive_avgpool(x, self.target_hw.0, self.target_hw.1)?;
        Ok(relu(&self.bn.forward_eval(&self.conv.forward(&pooled)?)?))
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, AuxCache)> {
        let pooled = adaptive_avgpool(x, self.target_hw.0, self.target_hw.1)?;
        let (b, bn) = self.bn.forward_train(&self.conv.forward(&pooled)?)?;
        let out = relu(&b);
        Ok((out.clone(), AuxCache { pooled, bn, out }))
    }

    /// Parameter gradients only; the gradient w.r.t. the raw network input
    /// has no parameters upstream of it and is not propagated further.
    fn backward(
        &self,
        cache: &AuxCache,
        upstream: &Tensor4,
        prefix: &str,
        grads: &mut GradStore,
    ) -> Result<()> {
        let g_relu = relu_backward(&cache.out, upstream);
        let bn = self.bn.backward(&cache.bn, &g_relu)?;
        grads.insert(format!("{prefix}.bn.gamma"), bn.gamma);
        grads.insert(format!("{prefix}.bn.beta"), bn.beta);
        let conv = self.conv.backward(&cache.pooled, &bn.input)?;
        grads.insert(format!("{prefix}.conv.weight"), conv.weight);
        Ok(())
    }
}

#[derive(Debug)]
struct StemCache {
    input: Tensor4,
    bn: BnCache,
    relu_out: Tensor4,
    pool: MaxPoolCache,
}

#[derive(Debug)]
struct DecoderCache {
    input: Tensor4,
    out: Tensor4,
}

/// Everything the backward pass needs from a training-mode forward.
#[derive(Debug)]
pub struct NetCache {
    stem: StemCache,
    stages: Vec<Vec<BottleneckCache>>,
    aux: Vec<AuxCache>,
    decoder: Vec<DecoderCache>,
}

/// Optional capture of the intermediate activations of one forward pass.
#[derive(Debug)]
pub struct ForwardTrace {
    /// The network input.
    pub input: Tensor4,
    /// x_1 .. x_k, one per encoder stage.
    pub stage_outputs: Vec<Tensor4>,
    /// x'_1 .. x'_{k-1}; empty for the plain autoencoder.
    pub aux_outputs: Vec<Tensor4>,
    /// y_1 .. y_K, one per decoder layer (the last one is the output).
    pub decoder_outputs: Vec<Tensor4>,
}

// ---------------------------------------------------------------------------
// The assembled network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct VraeNetwork {
    pub config: VraeConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    /// stages[i] is encoder stage i+2.
    stages: Vec<Vec<Bottleneck>>,
    /// aux[i] is the auxiliary block for stage i+1; empty for `Arch::Ae`.
    aux: Vec<AuxBlock>,
    decoder: Vec<ConvTranspose2d>,
}

/// Exact parameter totals per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub main: usize,
    pub auxiliary: usize,
    pub decoder: usize,
}

/// Builds and initializes a network. Every parameter draws from its own
/// name-keyed stream, so AE and VRAE variants built from the same seed
/// share bit-identical main-path and decoder weights.
pub fn build_network(config: &VraeConfig, seed: u64) -> Result<VraeNetwork> {
    config.validate()?;
    let (in_c, _, _) = config.input;
    let k = config.depth;

    let stem_spec = ConvSpec::new(in_c, config.stage_widths[0], 7, 2, PadMode::Zero, 3, false);
    let stem_conv = Conv2d::init(stem_spec, &mut Rng::stream(seed, "stem.conv.weight", 0));
    let stem_bn = BatchNorm2d::new(config.stage_widths[0]);

    let mut stages = Vec::new();
    for stage in 2..=k {
        let out_c = config.stage_widths[stage - 1];
        let stage_in = config.stage_widths[stage - 2];
        let stride = if stage == 2 { 1 } else { 2 };
        let mut blocks = Vec::new();
        for b in 0..config.stage_blocks[stage - 1] {
            let prefix = format!("stage{stage}.block{b}");
            let (bin, bstride) = if b == 0 { (stage_in, stride) } else { (out_c, 1) };
            blocks.push(Bottleneck::init(seed, &prefix, bin, out_c, bstride));
        }
        stages.push(blocks);
    }

    let mut aux = Vec::new();
    if config.arch == Arch::Vrae {
        for i in 1..k {
            let prefix = format!("aux{i}");
            aux.push(AuxBlock::init(
                seed,
                &prefix,
                in_c,
                config.stage_widths[i - 1],
                config.stage_hw(i),
            ));
        }
    }

    let mut decoder = Vec::new();
    let mut channels = config.stage_widths[k - 1];
    for j in 0..k {
        let out_c = if j == k - 1 { in_c } else { (channels / 4).max(16) };
        let spec = ConvSpec::new(channels, out_c, 4, 2, PadMode::Zero, 1, true);
        decoder.push(ConvTranspose2d::init(
            spec,
            &mut Rng::stream(seed, &format!("decoder{j}.weight"), 0),
        ));
        channels = out_c;
    }

    Ok(VraeNetwork { config: config.clone(), stem_conv, stem_bn, stages, aux, decoder })
}

impl VraeNetwork {
    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (n, c, h, w) = x.dims();
        let (ec, eh, ew) = self.config.input;
        if n == 0 {
            return Err(Error::Empty("forward on an empty batch".into()));
        }
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::Shape(format!(
                "input ({c},{h},{w}) does not match the configured ({ec},{eh},{ew})"
            )));
        }
        Ok(())
    }

    /// Inference forward: batch-norm running statistics, no caches, no
    /// clamping (evaluation contexts clamp to [0,1] before metrics).
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let stem = self.stem_conv.forward(x)?;
        let (mut cur, _) = maxpool_3x3_s2(&relu(&self.stem_bn.forward_eval(&stem)?))?;
        for (si, blocks) in self.stages.iter().enumerate() {
            if let Some(aux) = self.aux.get(si) {
                cur.add_assign(&aux.forward_eval(x)?)?;
            }
            for block in blocks {
                cur = block.forward_eval(&cur)?;
            }
        }
        for layer in &self.decoder {
            cur = relu(&layer.forward(&cur)?);
        }
        Ok(cur)
    }

    /// Inference forward that also captures per-stage activations.
    pub fn forward_eval_traced(&self, x: &Tensor4) -> Result<(Tensor4, ForwardTrace)> {
        self.check_input(x)?;
        let mut trace = ForwardTrace {
            input: x.clone(),
            stage_outputs: Vec::new(),
            aux_outputs: Vec::new(),
            decoder_outputs: Vec::new(),
        };
        let stem = self.stem_conv.forward(x)?;
        let (mut cur, _) = maxpool_3x3_s2(&relu(&self.stem_bn.forward_eval(&stem)?))?;
        trace.stage_outputs.push(cur.clone());
        for (si, blocks) in self.stages.iter().enumerate() {
            if let Some(aux) = self.aux.get(si) {
                let injected = aux.forward_eval(x)?;
                cur.add_assign(&injected)?;
                trace.aux_outputs.push(injected);
            }
            for block in blocks {
                cur = block.forward_eval(&cur)?;
            }
            trace.stage_outputs.push(cur.clone());
        }
        for layer in &self.decoder {
            cur = relu(&layer.forward(&cur)?);
            trace.decoder_outputs.push(cur.clone());
        }
        Ok((cur, trace))
    }

    /// Training forward: batch statistics, running-stat updates, and a
    /// cache for [`VraeNetwork::backward`].
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, NetCache)> {
        self.check_input(x)?;
        let conv_out = self.stem_conv.forward(x)?;
        let (bn_out, stem_bn_cache) = self.stem_bn.forward_train(&conv_out)?;
        let relu_out = relu(&bn_out);
        let (mut cur, pool) = maxpool_3x3_s2(&relu_out)?;
        let stem = StemCache { input: x.clone(), bn: stem_bn_cache, relu_out, pool };

        let mut stage_caches = Vec::new();
        let mut aux_caches = Vec::new();
        for si in 0..self.stages.len() {
            if let Some(aux) = self.aux.get_mut(si) {
                let (injected, cache) = aux.forward_train(x)?;
                cur.add_assign(&injected)?;
                aux_caches.push(cache);
            }
            let mut block_caches = Vec::new();
            for block in &mut self.stages[si] {
                let (next, cache) = block.forward_train(cur)?;
                block_caches.push(cache);
                cur = next;
            }
            stage_caches.push(block_caches);
        }

        let mut decoder_caches = Vec::new();
        for layer in &self.decoder {
            let out = relu(&layer.forward(&cur)?);
            decoder_caches.push(DecoderCache { input: cur, out: out.clone() });
            cur = out;
        }
        Ok((cur, NetCache { stem, stages: stage_caches, aux: aux_caches, decoder: decoder_caches }))
    }

    /// Backpropagates a loss gradient through the cached forward pass and
    /// returns every parameter gradient keyed by name.
    pub fn backward(&self, cache: &NetCache, loss_grad: &Tensor4) -> Result<GradStore> {
        let mut grads = GradStore::new();
        let mut g = loss_grad.clone();

        for (j, layer) in self.decoder.iter().enumerate().rev() {
            let dc = &cache.decoder[j];
            let g_pre = relu_backward(&dc.out, &g);
            let layer_grads = layer.backward(&dc.input, &g_pre)?;
            grads.insert(format!("decoder{j}.weight"), layer_grads.weight);
            if let Some(gb) = layer_grads.bias {
                grads.insert(format!("decoder{j}.bias"), gb);
            }
            g = layer_grads.input;
        }

        for si in (0..self.stages.len()).rev() {
            let stage = si + 2;
            for (b, block) in self.stages[si].iter().enumerate().rev() {
                let prefix = format!("stage{stage}.block{b}");
                g = block.backward(&cache.stages[si][b], &g, &prefix, &mut grads)?;
            }
            if let Some(aux) = self.aux.get(si) {
                aux.backward(&cache.aux[si], &g, &format!("aux{}", si + 1), &mut grads)?;
            }
        }

        let g_pool = maxpool_backward(&cache.stem.pool, &g);
        let g_relu = relu_backward(&cache.stem.relu_out, &g_pool);
        let bn = self.stem_bn.backward(&cache.stem.bn, &g_relu)?;
        grads.insert("stem.bn.gamma", bn.gamma);
        grads.insert("stem.bn.beta", bn.beta);
        let conv = self.stem_conv.backward(&cache.stem.input, &bn.input)?;
        grads.insert("stem.conv.weight", conv.weight);
        Ok(grads)
    }

    /// Visits every trainable parameter in a fixed, documented order.
    pub fn named_params(&self) -> Vec<(String, &Tensor4)> {
        let mut out: Vec<(String, &Tensor4)> = Vec::new();
        out.push(("stem.conv.weight".into(), &self.stem_conv.weight));
        out.push(("stem.bn.gamma".into(), &self.stem_bn.gamma));
        out.push(("stem.bn.beta".into(), &self.stem_bn.beta));
        for (si, blocks) in self.stages.iter().enumerate() {
            let stage = si + 2;
            for (b, block) in blocks.iter().enumerate() {
                let p = format!("stage{stage}.block{b}");
                out.push((format!("{p}.reduce.weight"), &block.reduce.weight));
                out.push((format!("{p}.reduce_bn.gamma"), &block.reduce_bn.gamma));
                out.push((format!("{p}.reduce_bn.beta"), &block.reduce_bn.beta));
                out.push((format!("{p}.spatial.weight"), &block.spatial.weight));
                out.push((format!("{p}.spatial_bn.gamma"), &block.spatial_bn.gamma));
                out.push((format!("{p}.spatial_bn.beta"), &block.spatial_bn.beta));
                out.push((format!("{p}.restore.weight"), &block.restore.weight));
                out.push((format!("{p}.restore_bn.gamma"), &block.restore_bn.gamma));
                out.push((format!("{p}.restore_bn.beta"), &block.restore_bn.beta));
                if let Some((conv, bn)) = &block.proj {
                    out.push((format!("{p}.proj.weight"), &conv.weight));
                    out.push((format!("{p}.proj_bn.gamma"), &bn.gamma));
                    out.push((format!("{p}.proj_bn.beta"), &bn.beta));
                }
            }
        }
        for (i, aux) in self.aux.iter().enumerate() {
            let p = format!("aux{}", i + 1);
            out.push((format!("{p}.conv.weight"), &aux.conv.weight));
            out.push((format!("{p}.bn.gamma"), &aux.bn.gamma));
            out.push((format!("{p}.bn.beta"), &aux.bn.beta));
        }
        for (j, layer) in self.decoder.iter().enumerate() {
            out.push((format!("decoder{j}.weight"), &layer.weight));
            if let Some(b) = &layer.bias {
                out.push((format!("decoder{j}.bias"), b));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor4)> {
        let mut out: Vec<(String, &mut Tensor4)> = Vec::new();
        out.push(("stem.conv.weight".into(), &mut self.stem_conv.weight));
        out.push(("stem.bn.gamma".into(), &mut self.stem_bn.gamma));
        out.push(("stem.bn.beta".into(), &mut self.stem_bn.beta));
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            let stage = si + 2;
            for (b, block) in blocks.iter_mut().enumerate() {
                let p = format!("stage{stage}.block{b}");
                out.push((format!("{p}.reduce.weight"), &mut block.reduce.weight));
                out.push((format!("{p}.reduce_bn.gamma"), &mut block.reduce_bn.gamma));
                out.push((format!("{p}.reduce_bn.beta"), &mut block.reduce_bn.beta));
                out.push((format!("{p}.spatial.weight"), &mut block.spatial.weight));
                out.push((format!("{p}.spatial_bn.gamma"), &mut block.spatial_bn.gamma));
                out.push((format!("{p}.spatial_bn.beta"), &mut block.spatial_bn.beta));
                out.push((format!("{p}.restore.weight"), &mut block.restore.weight));
                out.push((format!("{p}.restore_bn.gamma"), &mut block.restore_bn.gamma));
                out.push((format!("{p}.restore_bn.beta"), &mut block.restore_bn.beta));
                if let Some((conv, bn)) = &mut block.proj {
                    out.push((format!("{p}.proj.weight"), &mut conv.weight));
                    out.push((format!("{p}.proj_bn.gamma"), &mut bn.gamma));
                    out.push((format!("{p}.proj_bn.beta"), &mut bn.beta));
                }
            }
        }
        for (i, aux) in self.aux.iter_mut().enumerate() {
            let p = format!("aux{}", i + 1);
            out.push((format!("{p}.conv.weight"), &mut aux.conv.weight));
            out.push((format!("{p}.bn.gamma"), &mut aux.bn.gamma));
            out.push((format!("{p}.bn.beta"), &mut aux.bn.beta));
        }
        for (j, layer) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder{j}.weight"), &mut layer.weight));
            if let Some(b) = &mut layer.bias {
                out.push((format!("decoder{j}.bias"), b));
            }
        }
        out
    }

    /// Batch-norm running statistics (state, not trainable parameters).
    pub fn named_state(&self) -> Vec<(String, &Tensor4)> {
        let mut out: Vec<(String, &Tensor4)> = Vec::new();
        out.push(("stem.bn.running_mean".into(), &self.stem_bn.running_mean));
        out.push(("stem.bn.running_var".into(), &self.stem_bn.running_var));
        for (si, blocks) in self.stages.iter().enumerate() {
            let stage = si + 2;
            for (b, block) in blocks.iter().enumerate() {
                let p = format!("stage{stage}.block{b}");
                for (tag, bn) in [
                    ("reduce_bn", &block.reduce_bn),
                    ("spatial_bn", &block.spatial_bn),
                    ("restore_bn", &block.restore_bn),
                ] {
                    out.push((format!("{p}.{tag}.running_mean"), &bn.running_mean));
                    out.push((format!("{p}.{tag}.running_var"), &bn.running_var));
                }
                if let Some((_, bn)) = &block.proj {
                    out.push((format!("{p}.proj_bn.running_mean"), &bn.running_mean));
                    out.push((format!("{p}.proj_bn.running_var"), &bn.running_var));
                }
            }
        }
        for (i, aux) in self.aux.iter().enumerate() {
            let p = format!("aux{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &aux.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &aux.bn.running_var));
        }
        out
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor4)> {
        let mut out: Vec<(String, &mut Tensor4)> = Vec::new();
        out.push(("stem.bn.running_mean".into(), &mut self.stem_bn.running_mean));
        out.push(("stem.bn.running_var".into(), &mut self.stem_bn.running_var));
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            let stage = si + 2;
            for (b, block) in blocks.iter_mut().enumerate() {
                let p = format!("stage{stage}.block{b}");
                for (tag, bn) in [
                    ("reduce_bn", &mut block.reduce_bn),
                    ("spatial_bn", &mut block.spatial_bn),
                    ("restore_bn", &mut block.restore_bn),
                ] {
                    out.push((format!("{p}.{tag}.running_mean"), &mut bn.running_mean));
                    out.push((format!("{p}.{tag}.running_var"), &mut bn.running_var));
                }
                if let Some((_, bn)) = &mut block.proj {
                    out.push((format!("{p}.proj_bn.running_mean"), &mut bn.running_mean));
                    out.push((format!("{p}.proj_bn.running_var"), &mut bn.running_var));
                }
            }
        }
        for (i, aux) in self.aux.iter_mut().enumerate() {
            let p = format!("aux{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &mut aux.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &mut aux.bn.running_var));
        }
        out
    }

    /// Exact parameter count, broken down into main path (stem + stages),
    /// auxiliary blocks and decoder.
    pub fn count_parameters(&self) -> ParamCount {
        let mut count = ParamCount { total: 0, main: 0, auxiliary: 0, decoder: 0 };
        for (name, tensor) in self.named_params() {
            count.total += tensor.len();
            if name.starts_with("aux") {
                count.auxiliary += tensor.len();
            } else if name.starts_with("decoder") {
                count.decoder += tensor.len();
            } else {
                count.main += tensor.len();
            }
        }
        count
    }

    pub fn label(&self) -> String {
        self.config.label()
    }

    /// Asserts the fusion contract: every auxiliary output shape equals the
    /// matching stage output shape. Cheap, runs at build/load time.
    pub fn check_fusion_shapes(&self) -> Result<()> {
        for (i, aux) in self.aux.iter().enumerate() {
            let stage = i + 1;
            let expected = self.config.stage_hw(stage);
            if aux.target_hw != expected {
                return Err(Error::Shape(format!(
                    "aux{stage} target {:?} != stage {stage} output {:?}",
                    aux.target_hw, expected
                )));
            }
            let width = self.config.stage_widths[stage - 1];
            if aux.conv.spec.out_channels != width {
                return Err(Error::Shape(format!(
                    "aux{stage} channels {} != stage width {width}",
                    aux.conv.spec.out_channels
                )));
            }
        }
        Ok(())
    }
}
