use crate::attention::{check_feature_map, DaBlock, MipcBlock, PcBlock};
use crate::autodiff::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{BuildState, Conv2d, ConvBnRelu, Mode, ParamBuilder, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{AttentionBlock, ModelConfig};
use super::transformer::Transformer;

/// Attention block slot that the ablations can switch.
#[derive(Clone, Debug)]
pub enum BlockSlot {
    Mipc(MipcBlock),
    Pc(PcBlock),
    Identity,
}

impl BlockSlot {
    fn new(pb: &mut ParamBuilder<'_>, kind: AttentionBlock, channels: usize, cfg: &ModelConfig) -> Self {
        match kind {
            AttentionBlock::Mipc => BlockSlot::Mipc(MipcBlock::new(pb, channels, cfg.mipc_variant)),
            AttentionBlock::Pc => BlockSlot::Pc(PcBlock::new(pb, channels)),
            AttentionBlock::None => BlockSlot::Identity,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            BlockSlot::Mipc(b) => b.forward(s, x),
            BlockSlot::Pc(b) => b.forward(s, x),
            BlockSlot::Identity => Ok(x.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StemStage {
    pub down: ConvBnRelu,
    pub refine: ConvBnRelu,
}

/// Conv stem, stride-8 attention block, patch embedding and transformer.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<StemStage>,
    pub block: BlockSlot,
    pub embed: Conv2d,
    pub pos_embed: ParamId,
    pub transformer: Transformer,
}

/// Tokens `(B, N, D)` and the three pre-attention stem outputs at strides 2, 4, 8.
pub struct EncoderOutput<T> {
    pub tokens: Var<T>,
    pub skips: Vec<Var<T>>,
}

impl Encoder {
    fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let widths = cfg.stage_widths();
        let mut cin = cfg.in_channels;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut sp = pb.child(&format!("stem{}", i + 1));
                let stage =
                    StemStage { down: ConvBnRelu::new(&mut sp.child("down"), cin, w, 3, 2), refine: ConvBnRelu::new(&mut sp.child("refine"), w, w, 3, 1) };
                cin = w;
                stage
            })
            .collect();
        let block = BlockSlot::new(&mut pb.child("block"), cfg.attention_block, widths[2], cfg);
        let hidden = cfg.transformer.hidden_dim;
        let embed = Conv2d::new(&mut pb.child("embed"), widths[2], hidden, 2, Conv2dSpec { stride: 2, padding: 0 }, true);
        let pos_embed = pb.uniform("pos_embed", &[1, cfg.num_tokens(), hidden], 0.02);
        let t = &cfg.transformer;
        let transformer = Transformer::new(&mut pb.child("transformer"), hidden, t.depth, t.heads, t.mlp_ratio);
        Self { stages, block, embed, pos_embed, transformer }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, image: &Var<T>) -> Result<EncoderOutput<T>> {
        let (b, mut c, mut h, mut w) = check_feature_map("encoder", image.value())?;
        let mut x = image.clone();
        let mut skips = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.refine.forward(s, &stage.down.forward(s, &x)?)?;
            let (_, c2, h2, w2) = x.value().dims4()?;
            let want_c = if i == 0 { c2 } else { 2 * c };
            if h2 * 2 != h || w2 * 2 != w || c2 != want_c {
                return Err(Error::contract(
                    format!("stem stage {}", i + 1),
                    format!("({c}, {h}, {w}) -> ({c2}, {h2}, {w2}) does not halve size and double width"),
                ));
            }
            (c, h, w) = (c2, h2, w2);
            skips.push(x.clone());
        }
        let x = self.block.forward(s, &x)?;
        let e = self.embed.forward(s, &x)?;
        let (_, d, g1, g2) = e.value().dims4()?;
        let tokens = e.reshape(&[b, d, g1 * g2])?.permute(&[0, 2, 1])?;
        let tokens = tokens.add(&s.param(self.pos_embed)).map_err(|_| {
            Error::contract("embedding", format!("token grid {g1}x{g2} does not match the positional embedding"))
        })?;
        let tokens = self.transformer.forward(s, &tokens)?;
        Ok(EncoderOutput { tokens, skips })
    }
}

/// DA refinement of every skip and injection of the purified decoder feature.
#[derive(Clone, Debug)]
pub struct SkipPipeline {
    pub da: Option<Vec<DaBlock>>,
    /// 1×1 projection per skip level; `None` where the level receives nothing.
    pub inject: Vec<Option<Conv2d>>,
}

impl SkipPipeline {
    fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let widths = cfg.stage_widths();
        let da = cfg
            .use_da_skips
            .then(|| widths.iter().enumerate().map(|(i, &w)| DaBlock::new(&mut pb.child(&format!("da{}", i + 1)), w)).collect());
        let inject = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                cfg.gl_placement
                    .includes(i)
                    .then(|| Conv2d::same(&mut pb.child(&format!("inject{}", i + 1)), widths[0], w, 1, true))
            })
            .collect();
        Self { da, inject }
    }

    pub fn injects_any(&self) -> bool {
        self.inject.iter().any(Option::is_some)
    }

    /// Skips after their DA blocks (unchanged when DA skips are disabled).
    pub fn refine<T: Scalar>(&self, s: &Session<'_, T>, skips: &[Var<T>]) -> Result<Vec<Var<T>>> {
        match &self.da {
            Some(blocks) => skips.iter().zip(blocks).map(|(x, da)| da.forward(s, x)).collect(),
            None => Ok(skips.to_vec()),
        }
    }

    /// Adds the resized, projected global feature to each selected level.
    pub fn inject<T: Scalar>(&self, s: &Session<'_, T>, refined: &[Var<T>], global: Option<&Var<T>>) -> Result<Vec<Var<T>>> {
        if !self.injects_any() {
            return Ok(refined.to_vec());
        }
        let global = global.ok_or_else(|| Error::contract("skip pipeline", "global residue enabled but no global feature given"))?;
        refined
            .iter()
            .zip(&self.inject)
            .enumerate()
            .map(|(level, (skip, proj))| {
                let Some(proj) = proj else { return Ok(skip.clone()) };
                let (_, _, h, w) = skip.value().dims4()?;
                let g = proj.forward(s, &global.resize_bilinear(h, w)?)?;
                skip.add(&g).map_err(|e| Error::contract(format!("skip level {}", level + 1), e.to_string()))
            })
            .collect()
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, skips: &[Var<T>], global: Option<&Var<T>>) -> Result<Vec<Var<T>>> {
        self.inject(s, &self.refine(s, skips)?, global)
    }
}

#[derive(Clone, Debug)]
pub struct UpBlock {
    pub conv1: ConvBnRelu,
    pub conv2: ConvBnRelu,
}

/// Token reshaping, three upsampling blocks with skip fusion, and the head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub conv_more: ConvBnRelu,
    pub ups: Vec<UpBlock>,
    pub head: Conv2d,
}

impl Decoder {
    /// `passes` is 2 when the decoder runs twice per forward; each pass then
    /// keeps its own batch-norm running statistics.
    fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig, passes: usize) -> Self {
        let [w1, w2, w3] = cfg.stage_widths();
        let conv_more = ConvBnRelu::with_passes(&mut pb.child("conv_more"), cfg.transformer.hidden_dim, w3, 3, 1, passes);
        // (input width, skip width, output width), deepest first
        let plan = [(w3, w3, w3), (w3, w2, w2), (w2, w1, w1)];
        let ups = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cskip, cout))| {
                let mut up = pb.child(&format!("up{}", i + 1));
                UpBlock {
                    conv1: ConvBnRelu::with_passes(&mut up.child("conv1"), cin + cskip, cout, 3, 1, passes),
                    conv2: ConvBnRelu::with_passes(&mut up.child("conv2"), cout, cout, 3, 1, passes),
                }
            })
            .collect();
        let head = Conv2d::same(&mut pb.child("head"), w1, cfg.num_classes, 1, true);
        Self { conv_more, ups, head }
    }

    /// Runs the upsampling path; returns the stride-2 feature after the third block.
    pub fn features<T: Scalar>(&self, s: &Session<'_, T>, tokens: &Var<T>, skips: &[Var<T>]) -> Result<Var<T>> {
        let [b, n, d] = *tokens.shape() else {
            return Err(Error::contract("decoder", format!("tokens must be (B, N, D), got {:?}", tokens.shape())));
        };
        let g = (n as f64).sqrt().round() as usize;
        if g * g != n || skips.len() != 3 {
            return Err(Error::contract("decoder", format!("{n} tokens and {} skips", skips.len())));
        }
        let grid = tokens.permute(&[0, 2, 1])?.reshape(&[b, d, g, g])?;
        let mut x = self.conv_more.forward(s, &grid)?;
        for (i, up) in self.ups.iter().enumerate() {
            let skip = &skips[2 - i];
            let (_, _, h, w) = x.value().dims4()?;
            x = x.resize_bilinear(2 * h, 2 * w)?;
            let (sb, _, sh, sw) = skip.value().dims4()?;
            if (sb, sh, sw) != (b, 2 * h, 2 * w) {
                return Err(Error::contract(
                    format!("decoder stage {}", i + 1),
                    format!("skip {:?} does not match upsampled {:?}", skip.shape(), x.shape()),
                ));
            }
            x = Var::concat(&[&x, skip], 1)?;
            x = up.conv2.forward(s, &up.conv1.forward(s, &x)?)?;
        }
        Ok(x)
    }

    pub fn head<T: Scalar>(&self, s: &Session<'_, T>, post_up3: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = post_up3.value().dims4()?;
        self.head.forward(s, &post_up3.resize_bilinear(2 * h, 2 * w)?)
    }

    /// Logits and the stride-2 feature they were computed from.
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, tokens: &Var<T>, skips: &[Var<T>]) -> Result<(Var<T>, Var<T>)> {
        let post_up3 = self.features(s, tokens, skips)?;
        Ok((self.head(s, &post_up3)?, post_up3))
    }
}

/// Parameter layout of the full network; independent of the scalar type.
#[derive(Clone, Debug)]
pub struct MipcNet {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub skips: SkipPipeline,
    pub decoder: Decoder,
    /// Purifies the decoder feature for the global residue.
    pub global_block: Option<BlockSlot>,
}

impl MipcNet {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        cfg.validate()?;
        let mut st = BuildState::new(seed);
        let mut root = st.root();
        let encoder = Encoder::new(&mut root.child("encoder"), cfg);
        let skips = SkipPipeline::new(&mut root.child("skips"), cfg);
        let passes = if skips.injects_any() { 2 } else { 1 };
        let decoder = Decoder::new(&mut root.child("decoder"), cfg, passes);
        let global_block = skips
            .injects_any()
            .then(|| BlockSlot::new(&mut root.child("global"), cfg.attention_block, cfg.stem_base_width, cfg));
        let net = Self { cfg: cfg.clone(), encoder, skips, decoder, global_block };
        Ok((net, st.finish()))
    }

    fn check_image<T: Scalar>(&self, image: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = check_feature_map("model", image)?;
        let n = self.cfg.input_size;
        if (c, h, w) != (self.cfg.in_channels, n, n) {
            return Err(Error::shape(
                "model",
                format!("image {:?} does not match (B, {}, {n}, {n})", image.shape(), self.cfg.in_channels),
            ));
        }
        Ok(())
    }

    pub fn encode<T: Scalar>(&self, s: &Session<'_, T>, image: &Var<T>) -> Result<EncoderOutput<T>> {
        self.check_image(image.value())?;
        self.encoder.forward(s, image)
    }

    /// Logits `(B, K, H, W)`. With a global residue the decoder runs twice: the
    /// first pass yields the stride-2 feature that is purified and injected
    /// into the skips for the second.
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, image: &Var<T>) -> Result<Var<T>> {
        let enc = self.encode(s, image)?;
        let refined = self.skips.refine(s, &enc.skips)?;
        let Some(block) = &self.global_block else {
            let post = self.decoder.features(s, &enc.tokens, &refined)?;
            return self.decoder.head(s, &post);
        };
        s.set_first_pass(true);
        let first = self.decoder.features(s, &enc.tokens, &refined);
        s.set_first_pass(false);
        let first = first?;
        let global = block.forward(s, &first)?;
        let injected = self.skips.inject(s, &refined, Some(&global))?;
        let post = self.decoder.features(s, &enc.tokens, &injected)?;
        self.decoder.head(s, &post)
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: MipcNet,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let (net, params) = MipcNet::build(cfg, seed)?;
        Ok(Self { net, params: params.cast() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Forward pass without gradients.
    pub fn logits(&self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = Session::inference(&self.params, mode);
        let out = self.net.forward(&s, &Var::constant(image.clone()))?;
        Ok(out.value().clone())
    }

    /// Per-pixel argmax labels, one `(H, W)` map per batch item.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<Vec<u8>>> {
        Ok(argmax_labels(&self.logits(image, Mode::Eval)?))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { net: self.net.clone(), params: self.params.cast() }
    }
}

/// Argmax over the class axis of `(B, K, H, W)` logits; ties go to the lower class.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<u8>> {
    let (b, k, h, w) = logits.dims4().expect("logits are rank 4");
    let d = logits.data();
    (0..b)
        .map(|bi| {
            (0..h * w)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(bi * k + c) * h * w + p] > d[(bi * k + best) * h * w + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}
