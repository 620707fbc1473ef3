//! The U-shaped segmentation network.
//!
//! Five encoder blocks (two Conv-BN-ReLU layers and a 2x2 max-pool each), a
//! bottleneck that applies dual attention followed by residual multi-kernel
//! pooling, and five decoder blocks (2x transposed-conv upsampling, skip
//! concatenation, three Conv-BN-ReLU layers). Skip connections at levels 2-5
//! pass through dual attention; the full-resolution level 1 skip is a plain
//! concatenation. Every decoder block feeds a standard head (1x1 conv to `C`
//! channels, softmax) and a connectivity head (1x1 conv to `8C` channels,
//! sigmoid), upsampled to the input size. Block 1 is the main output; blocks
//! 2.. are the auxiliary scales, finest first.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::connectivity::{self, DIRECTIONS};
use crate::error::{shape_err, Error, Result};
use crate::image::{argmax_labels, GrayImage, LabelMap};
use crate::losses::HeadVars;
use crate::ops::{NormMode, Padding};
use crate::params::{he_uniform, Binder, ParamId, ParamStore};
use crate::sda::{self, SdaConfig, SdaWeights};
use crate::tensor::{Shape, Tensor};

pub const BLOCKS: usize = 5;
/// Number of dual-attention placements: four skip connections and the
/// bottleneck.
pub const SDA_PLACEMENTS: usize = 5;
pub const MAX_AUX_SCALES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `(H, W)`, both divisible by 32.
    pub input_size: (usize, usize),
    /// Background plus fluid classes.
    pub classes: usize,
    /// Channels of encoder block 1; doubled per block.
    pub base_channels: usize,
    /// Auxiliary supervised scales, at most 4.
    pub aux_scales: usize,
    /// Window sizes of the residual multi-kernel pooling branches.
    pub rmp_kernels: Vec<usize>,
    /// Pool factor per attention placement (`sda1..sda4` on the skip
    /// connections of levels 2-5, `sda5` at the bottleneck). `None` picks
    /// [`SdaConfig::default_for`] at each placement.
    pub sda_pool: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    /// Full-scale plan: 256x256 input, 32 -> 512 channels.
    fn default() -> Self {
        ModelConfig {
            input_size: (256, 256),
            classes: 4,
            base_channels: 32,
            aux_scales: MAX_AUX_SCALES,
            rmp_kernels: vec![2, 3, 5, 6],
            sda_pool: None,
        }
    }
}

impl ModelConfig {
    /// Desk-scale plan: 8 -> 128 channels. Pooling kernels are the ones of
    /// `[1, 2]` that fit the bottleneck.
    pub fn toy(height: usize, width: usize, classes: usize) -> Self {
        let side = (height / 32).min(width / 32);
        let rmp_kernels = [1usize, 2]
            .into_iter()
            .filter(|&k| k <= side.max(1))
            .collect();
        ModelConfig {
            input_size: (height, width),
            classes,
            base_channels: 8,
            aux_scales: MAX_AUX_SCALES,
            rmp_kernels,
            sda_pool: None,
        }
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_size.0 / 32, self.input_size.1 / 32)
    }

    pub fn channels(&self, block: usize) -> usize {
        self.base_channels << (block - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Invalid(format!(
                "input size {}x{} must be a positive multiple of 32",
                h, w
            )));
        }
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::Invalid(format!(
                "classes must be in 2..=256, got {}",
                self.classes
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Invalid("base_channels must be positive".into()));
        }
        if self.aux_scales > MAX_AUX_SCALES {
            return Err(Error::Invalid(format!(
                "aux_scales must be <= {}, got {}",
                MAX_AUX_SCALES, self.aux_scales
            )));
        }
        let (bh, bw) = self.bottleneck_size();
        for &k in &self.rmp_kernels {
            if k == 0 || k > bh || k > bw {
                return Err(Error::Invalid(format!(
                    "rmp kernel {} does not fit the {}x{} bottleneck",
                    k, bh, bw
                )));
            }
        }
        if let Some(pools) = &self.sda_pool {
            if pools.len() != SDA_PLACEMENTS {
                return Err(Error::Invalid(format!(
                    "sda_pool needs {} entries, got {}",
                    SDA_PLACEMENTS,
                    pools.len()
                )));
            }
            for (i, &p) in pools.iter().enumerate() {
                let (ph, pw) = self.placement_size(i);
                SdaConfig::new(p, ph, pw).map_err(|_| {
                    Error::Invalid(format!(
                        "sda{} pool {} does not divide {}x{}",
                        i + 1,
                        p,
                        ph,
                        pw
                    ))
                })?;
            }
        }
        Ok(())
    }

    /// Spatial size seen by attention placement `i` (0-based).
    fn placement_size(&self, i: usize) -> (usize, usize) {
        let (h, w) = self.input_size;
        if i + 1 < SDA_PLACEMENTS {
            // skip connection of level i + 2
            (h >> (i + 1), w >> (i + 1))
        } else {
            (h / 32, w / 32)
        }
    }

    pub fn sda_pools(&self) -> Vec<usize> {
        match &self.sda_pool {
            Some(p) => p.clone(),
            None => (0..SDA_PLACEMENTS)
                .map(|i| {
                    let (h, w) = self.placement_size(i);
                    SdaConfig::default_for(h, w).pool
                })
                .collect(),
        }
    }
}

/// Which head produces the label map at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceHead {
    /// Bilateral decode of the main connectivity head.
    Connectivity,
    /// Argmax of the main softmax head.
    Standard,
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    kernel: ParamId,
    bias: ParamId,
    scale: ParamId,
    shift: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct Decoder {
    up_kernel: ParamId,
    up_bias: ParamId,
    /// Index into `Model::sda` for attention skips.
    attention: Option<usize>,
    convs: Vec<ConvBn>,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    std_kernel: ParamId,
    std_bias: ParamId,
    con_kernel: ParamId,
    con_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    alpha: ParamId,
    beta: ParamId,
    pool: usize,
}

#[derive(Clone, Copy, Debug)]
struct RmpBranch {
    window: usize,
    kernel: ParamId,
    bias: ParamId,
}

/// Network outputs at full resolution.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub main_standard: Tensor,
    pub main_connectivity: Tensor,
    pub aux_standard: Vec<Tensor>,
    pub aux_connectivity: Vec<Tensor>,
}

/// Running-statistic values produced by a training-mode forward pass.
#[derive(Clone, Debug, Default)]
pub struct StatUpdates(Vec<(ParamId, Tensor)>);

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    encoders: Vec<[ConvBn; 2]>,
    decoders: Vec<Decoder>,
    heads: Vec<Head>,
    sda: Vec<Attention>,
    rmp: Vec<RmpBranch>,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
    ) -> Result<(ParamId, ParamId)> {
        let kernel = he_uniform(Shape::new(k, k, cin, cout), k * k * cin, self.rng);
        let kid = self.store.add(&format!("{name}.kernel"), kernel, true)?;
        let bid = self.store.add(
            &format!("{name}.bias"),
            Tensor::zeros(Shape::vector(cout)),
            true,
        )?;
        Ok((kid, bid))
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize) -> Result<ConvBn> {
        let (kernel, bias) = self.conv(name, 3, cin, cout)?;
        let v = Shape::vector(cout);
        Ok(ConvBn {
            kernel,
            bias,
            scale: self
                .store
                .add(&format!("{name}.bn.scale"), Tensor::full(v, 1.0), true)?,
            shift: self
                .store
                .add(&format!("{name}.bn.shift"), Tensor::zeros(v), true)?,
            mean: self
                .store
                .add(&format!("{name}.bn.running_mean"), Tensor::zeros(v), false)?,
            var: self.store.add(
                &format!("{name}.bn.running_var"),
                Tensor::full(v, 1.0),
                false,
            )?,
        })
    }
}

impl Model {
    /// Deterministic construction: same config and seed give bitwise equal
    /// parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };

        let mut encoders = Vec::with_capacity(BLOCKS);
        let mut cin = 1;
        for blk in 1..=BLOCKS {
            let c = config.channels(blk);
            encoders.push([
                b.conv_bn(&format!("enc{blk}.conv1"), cin, c)?,
                b.conv_bn(&format!("enc{blk}.conv2"), c, c)?,
            ]);
            cin = c;
        }

        let pools = config.sda_pools();
        let mut sda = Vec::with_capacity(SDA_PLACEMENTS);
        for (i, &pool) in pools.iter().enumerate() {
            let alpha = b
                .store
                .add(&format!("sda{}.alpha", i + 1), Tensor::scalar(0.0), true)?;
            let beta = b
                .store
                .add(&format!("sda{}.beta", i + 1), Tensor::scalar(0.0), true)?;
            sda.push(Attention { alpha, beta, pool });
        }

        let deepest = config.channels(BLOCKS);
        let mut rmp = Vec::with_capacity(config.rmp_kernels.len());
        for &window in &config.rmp_kernels {
            let (kernel, bias) = b.conv(&format!("rmp.k{window}"), 1, deepest, 1)?;
            rmp.push(RmpBranch {
                window,
                kernel,
                bias,
            });
        }

        // decoders are stored coarsest first (block 5 .. block 1)
        let mut decoders = Vec::with_capacity(BLOCKS);
        let mut cin = deepest + config.rmp_kernels.len();
        for blk in (1..=BLOCKS).rev() {
            let c = config.channels(blk);
            let (up_kernel, up_bias) = b.conv(&format!("dec{blk}.up"), 2, cin, c)?;
            let convs = vec![
                b.conv_bn(&format!("dec{blk}.conv1"), 2 * c, c)?,
                b.conv_bn(&format!("dec{blk}.conv2"), c, c)?,
                b.conv_bn(&format!("dec{blk}.conv3"), c, c)?,
            ];
            let attention = (blk >= 2).then(|| blk - 2);
            decoders.push(Decoder {
                up_kernel,
                up_bias,
                attention,
                convs,
            });
            cin = c;
        }

        let mut heads = Vec::with_capacity(1 + config.aux_scales);
        for blk in 1..=1 + config.aux_scales {
            let c = config.channels(blk);
            let (std_kernel, std_bias) =
                b.conv(&format!("head{blk}.standard"), 1, c, config.classes)?;
            let (con_kernel, con_bias) = b.conv(
                &format!("head{blk}.connectivity"),
                1,
                c,
                DIRECTIONS * config.classes,
            )?;
            heads.push(Head {
                std_kernel,
                std_bias,
                con_kernel,
                con_bias,
            });
        }

        Ok(Model {
            store: b.store,
            config,
            encoders,
            decoders,
            heads,
            sda,
            rmp,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Current fusion weights of every attention placement, `sda1..sda5`.
    pub fn sda_weights(&self) -> Vec<SdaWeights> {
        self.sda
            .iter()
            .map(|a| SdaWeights {
                alpha: self.store.value(a.alpha).item(),
                beta: self.store.value(a.beta).item(),
            })
            .collect()
    }

    pub fn set_sda_weights(&mut self, i: usize, w: SdaWeights) {
        let a = self.sda[i];
        self.store.get_mut(a.alpha).value = Tensor::scalar(w.alpha);
        self.store.get_mut(a.beta).value = Tensor::scalar(w.beta);
    }

    /// Clamps every `alpha`, `beta` to be non-negative.
    pub fn project_sda(&mut self) {
        for a in self.sda.clone() {
            for id in [a.alpha, a.beta] {
                let v = &mut self.store.get_mut(id).value.data_mut()[0];
                *v = v.max(0.0);
            }
        }
    }

    pub fn apply_stat_updates(&mut self, updates: StatUpdates) {
        for (id, t) in updates.0 {
            self.store.get_mut(id).value = t;
        }
    }

    fn conv_bn_relu(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        x: Var,
        layer: &ConvBn,
        mode: NormMode,
        updates: &mut StatUpdates,
    ) -> Result<Var> {
        let k = binder.bind(g, &self.store, layer.kernel);
        let b = binder.bind(g, &self.store, layer.bias);
        let y = g.conv2d(x, k, b, 1, Padding::Same)?;
        let scale = binder.bind(g, &self.store, layer.scale);
        let shift = binder.bind(g, &self.store, layer.shift);
        let mut mean = self.store.value(layer.mean).clone();
        let mut var = self.store.value(layer.var).clone();
        let y = g.batchnorm(y, scale, shift, mode, &mut mean, &mut var)?;
        if mode == NormMode::Train {
            updates.0.push((layer.mean, mean));
            updates.0.push((layer.var, var));
        }
        Ok(g.relu(y))
    }

    fn attention(&self, g: &mut Graph, binder: &mut Binder, i: usize) -> (Var, Var, usize) {
        let a = self.sda[i];
        (
            binder.bind(g, &self.store, a.alpha),
            binder.bind(g, &self.store, a.beta),
            a.pool,
        )
    }

    /// Residual multi-kernel pooling: input concatenated with one channel
    /// per pooling window.
    fn rmp_graph(&self, g: &mut Graph, binder: &mut Binder, x: Var) -> Result<Var> {
        let mut branches = Vec::with_capacity(self.rmp.len());
        for br in &self.rmp {
            let k = binder.bind(g, &self.store, br.kernel);
            let b = binder.bind(g, &self.store, br.bias);
            branches.push((br.window, k, b));
        }
        rmp(g, x, &branches)
    }

    /// Records the forward pass on `g`. Parameters are bound through
    /// `binder`; in training mode the new running statistics are returned
    /// separately so the forward pass itself leaves the model untouched.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        input: Var,
        mode: NormMode,
    ) -> Result<(HeadVars, StatUpdates)> {
        let xs = g.value(input).shape();
        let (h, w) = self.config.input_size;
        if xs.h != h || xs.w != w || xs.c != 1 {
            return Err(shape_err(
                "forward",
                format!("input {} does not match configured {}x{}x1", xs, h, w),
            ));
        }
        let mut updates = StatUpdates::default();

        let mut skips = Vec::with_capacity(BLOCKS);
        let mut x = input;
        for enc in &self.encoders {
            x = self.conv_bn_relu(g, binder, x, &enc[0], mode, &mut updates)?;
            x = self.conv_bn_relu(g, binder, x, &enc[1], mode, &mut updates)?;
            skips.push(x);
            x = g.maxpool2d(x, 2)?;
        }

        let (alpha, beta, pool) = self.attention(g, binder, SDA_PLACEMENTS - 1);
        x = sda::sda_forward(g, x, alpha, beta, pool)?;
        x = self.rmp_graph(g, binder, x)?;

        let mut block_out = vec![x; BLOCKS];
        for (dec, blk) in self.decoders.iter().zip((1..=BLOCKS).rev()) {
            let k = binder.bind(g, &self.store, dec.up_kernel);
            let b = binder.bind(g, &self.store, dec.up_bias);
            let up = g.conv2d_transpose(x, k, b)?;
            let skip = skips[blk - 1];
            x = match dec.attention {
                Some(i) => {
                    let (alpha, beta, pool) = self.attention(g, binder, i);
                    sda::sasc_forward(g, skip, up, alpha, beta, pool)?
                }
                None => g.concat_channels(up, skip)?,
            };
            for layer in &dec.convs {
                x = self.conv_bn_relu(g, binder, x, layer, mode, &mut updates)?;
            }
            block_out[blk - 1] = x;
        }

        let mut standard = Vec::with_capacity(self.heads.len());
        let mut conn = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let feat = block_out[i];
            let factor = 1 << i;
            let k = binder.bind(g, &self.store, head.std_kernel);
            let b = binder.bind(g, &self.store, head.std_bias);
            let s = g.conv2d(feat, k, b, 1, Padding::Valid)?;
            let s = g.nearest_upsample(s, factor)?;
            standard.push(g.softmax(s));
            let k = binder.bind(g, &self.store, head.con_kernel);
            let b = binder.bind(g, &self.store, head.con_bias);
            let c = g.conv2d(feat, k, b, 1, Padding::Valid)?;
            let c = g.nearest_upsample(c, factor)?;
            conn.push(g.sigmoid(c));
        }
        let heads = HeadVars {
            main_standard: standard[0],
            main_connectivity: conn[0],
            aux_standard: standard[1..].to_vec(),
            aux_connectivity: conn[1..].to_vec(),
        };
        Ok((heads, updates))
    }

    /// Eager forward pass in inference mode.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardOutputs> {
        let mut g = Graph::new();
        let mut binder = Binder::frozen();
        let x = g.constant(batch.clone());
        let (heads, _) = self.forward_graph(&mut g, &mut binder, x, NormMode::Infer)?;
        Ok(ForwardOutputs {
            main_standard: g.value(heads.main_standard).clone(),
            main_connectivity: g.value(heads.main_connectivity).clone(),
            aux_standard: heads
                .aux_standard
                .iter()
                .map(|&v| g.value(v).clone())
                .collect(),
            aux_connectivity: heads
                .aux_connectivity
                .iter()
                .map(|&v| g.value(v).clone())
                .collect(),
        })
    }

    /// Label maps for a batch `(N, H, W, 1)`.
    pub fn infer_batch(&self, batch: &Tensor, head: InferenceHead) -> Result<Vec<LabelMap>> {
        let out = self.forward(batch)?;
        match head {
            InferenceHead::Connectivity => {
                connectivity::decode_connectivity(&out.main_connectivity)
            }
            InferenceHead::Standard => Ok(argmax_labels(&out.main_standard)),
        }
    }

    /// Label map of one preprocessed image, decoded from the main
    /// connectivity head.
    pub fn infer(&self, image: &GrayImage) -> Result<LabelMap> {
        self.infer_with(image, InferenceHead::Connectivity)
    }

    pub fn infer_with(&self, image: &GrayImage, head: InferenceHead) -> Result<LabelMap> {
        let batch = images_to_batch(core::slice::from_ref(image))?;
        Ok(self.infer_batch(&batch, head)?.remove(0))
    }

    /// Names of every stored tensor in build order.
    pub fn param_names(&self) -> Vec<String> {
        self.store.iter().map(|p| p.name.clone()).collect()
    }
}

/// Stacks equally sized images into `(N, H, W, 1)`.
pub fn images_to_batch(images: &[GrayImage]) -> Result<Tensor> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.height != h || im.width != w {
            return Err(shape_err(
                "batch",
                format!("image {}x{} in a {}x{} batch", im.height, im.width, h, w),
            ));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::from_vec(Shape::new(images.len(), h, w, 1), data)
}

/// Residual multi-kernel pooling on the graph. Each branch is
/// `(window, 1x1 kernel (1, 1, C, 1), bias (1))`: window max-pool, 1x1 conv
/// to one channel, nearest resize back to the input size. The output is the
/// input followed by the branch channels.
pub fn rmp(g: &mut Graph, x: Var, branches: &[(usize, Var, Var)]) -> Result<Var> {
    let xs = g.value(x).shape();
    let mut out = x;
    for &(window, k, b) in branches {
        if window > xs.h || window > xs.w {
            return Err(shape_err(
                "rmp",
                format!("window {} larger than input {}", window, xs),
            ));
        }
        let pooled = g.max_pool_window(x, window)?;
        let proj = g.conv2d(pooled, k, b, 1, Padding::Valid)?;
        let back = g.resize_nearest(proj, xs.h, xs.w)?;
        out = g.concat_channels(out, back)?;
    }
    Ok(out)
}

/// Eager [`rmp`] on plain tensors.
pub fn rmp_forward(x: &Tensor, branches: &[(usize, Tensor, Tensor)]) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars: Vec<(usize, Var, Var)> = branches
        .iter()
        .map(|(w, k, b)| (*w, g.constant(k.clone()), g.constant(b.clone())))
        .collect();
    let out = rmp(&mut g, xv, &vars)?;
    Ok(g.value(out).clone())
}
