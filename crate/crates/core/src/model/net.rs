//! Encoder/decoder backbone with mask-enhanced modules.
//!
//! Level `n` runs at `patch / 2^n`. The encoder uses two conv–IN–LReLU blocks
//! per level, the first block of every level below the top strided by two.
//! Each decoder level upsamples with a stride-2 transposed convolution,
//! concatenates the encoder skip and applies two more blocks. Every level
//! emits a probability map `P_n`: the bottleneck through a plain 1x1x1 head,
//! the others either through a plain head or, with mask enhancement on,
//! through a [`mem_forward`] gated by the next coarser map.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::{encode_checkpoint, read_checkpoint, write_checkpoint};
use crate::tensor::{ConvGeom, Graph, Scalar, Tensor, UpMode, Var};

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvLayer {
    weight: usize,
    bias: Option<usize>,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvBlock {
    conv: ConvLayer,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLevel {
    blocks: [ConvBlock; 2],
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLevel {
    up: ConvLayer,
    blocks: [ConvBlock; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MemLayers {
    context: ConvLayer,
    mix: ConvLayer,
    head: ConvLayer,
}

/// Graph handles of one mask-enhanced module's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MemVars {
    /// 3x3x3 convolution over the embedding, `C_f + 1 -> C_f`.
    pub context_w: Var,
    pub context_b: Var,
    /// 1x1x1 convolution producing the attention features, `C_f -> C_f`.
    pub mix_w: Var,
    pub mix_b: Var,
    /// 1x1x1 classifier on the gated features, `C_f -> C`.
    pub head_w: Var,
    pub head_b: Var,
}

/// Intermediate tensors of one mask-enhanced module.
#[derive(Debug, Clone, Copy)]
pub struct MemOutputs {
    pub embedding: Var,
    pub attention: Var,
    pub prob: Var,
}

/// Per-level outputs of a forward pass; index `n` is level `n` (0 = full resolution).
#[derive(Debug, Clone)]
pub struct MultiScaleOutputs {
    pub probs: Vec<Var>,
    /// Decoder features `F_n` (the bottleneck features at `N - 1`).
    pub features: Vec<Var>,
    /// `E_n`, present where a mask-enhanced module ran.
    pub embeddings: Vec<Option<Var>>,
    /// `F^w_n`, present where a mask-enhanced module ran.
    pub attention: Vec<Option<Var>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Vec<EncoderLevel>,
    /// Indexed by level `n < N - 1`.
    decoder: Vec<DecoderLevel>,
    coarse_head: ConvLayer,
    heads: Vec<ConvLayer>,
    mems: Vec<MemLayers>,
}

struct Builder<'a, T> {
    params: ParamStore<T>,
    rng: ChaCha8Rng,
    gain: f64,
    config: &'a ModelConfig,
}

impl<T: Scalar> Builder<'_, T> {
    /// Kaiming-normal kernel (fan-in, leaky-ReLU gain) and optional zero bias.
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, geom: ConvGeom, bias: bool) -> ConvLayer {
        let fan_in = (c_in * k * k * k) as f64;
        let std = self.gain / fan_in.sqrt();
        let w = Tensor::randn([c_out, c_in, k, k, k], std, &mut self.rng);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = bias.then(|| self.params.push(format!("{name}.bias"), Tensor::zeros([c_out, 1, 1, 1, 1])));
        ConvLayer { weight, bias, geom }
    }

    /// Transposed convolution `c_in -> c_out` with kernel and stride 2.
    fn up(&mut self, name: &str, c_in: usize, c_out: usize) -> ConvLayer {
        // every output voxel sees exactly one kernel tap per input channel
        let std = self.gain / (c_in as f64).sqrt();
        let w = Tensor::randn([c_in, c_out, 2, 2, 2], std, &mut self.rng);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = Some(self.params.push(format!("{name}.bias"), Tensor::zeros([c_out, 1, 1, 1, 1])));
        ConvLayer {
            weight,
            bias,
            geom: ConvGeom::strided(2, 0),
        }
    }

    fn block(&mut self, name: &str, c_in: usize, c_out: usize, stride: usize) -> ConvBlock {
        let geom = ConvGeom::strided(stride, 1);
        // the bias would be cancelled by the instance norm
        let conv = self.conv(&format!("{name}.conv"), c_out, c_in, 3, geom, false);
        let gamma = self.params.push(format!("{name}.norm.gamma"), Tensor::full([c_out, 1, 1, 1, 1], T::ONE));
        let beta = self.params.push(format!("{name}.norm.beta"), Tensor::zeros([c_out, 1, 1, 1, 1]));
        ConvBlock { conv, gamma, beta }
    }
}

impl<T: Scalar> Model<T> {
    /// Deterministic Kaiming-initialized network.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ch = config.channels();
        let n_levels = config.num_levels;
        let classes = config.num_classes;
        let mut b = Builder {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            gain: (2.0 / (1.0 + config.lrelu_slope * config.lrelu_slope)).sqrt(),
            config,
        };
        let mut encoder = Vec::with_capacity(n_levels);
        for n in 0..n_levels {
            let (c_in, stride) = if n == 0 { (b.config.in_channels, 1) } else { (ch[n - 1], 2) };
            encoder.push(EncoderLevel {
                blocks: [
                    b.block(&format!("enc{n}.0"), c_in, ch[n], stride),
                    b.block(&format!("enc{n}.1"), ch[n], ch[n], 1),
                ],
            });
        }
        let mut decoder = Vec::with_capacity(n_levels - 1);
        for n in 0..n_levels - 1 {
            decoder.push(DecoderLevel {
                up: b.up(&format!("dec{n}.up"), ch[n + 1], ch[n]),
                blocks: [
                    b.block(&format!("dec{n}.0"), 2 * ch[n], ch[n], 1),
                    b.block(&format!("dec{n}.1"), ch[n], ch[n], 1),
                ],
            });
        }
        let coarse_head = b.conv(
            &format!("head{}", n_levels - 1),
            classes,
            ch[n_levels - 1],
            1,
            ConvGeom::unit(),
            true,
        );
        let mut heads = Vec::new();
        let mut mems = Vec::new();
        for n in 0..n_levels - 1 {
            if config.mem_enabled {
                mems.push(MemLayers {
                    context: b.conv(&format!("mem{n}.context"), ch[n], ch[n] + 1, 3, ConvGeom::same(3), true),
                    mix: b.conv(&format!("mem{n}.mix"), ch[n], ch[n], 1, ConvGeom::unit(), true),
                    head: b.conv(&format!("mem{n}.head"), classes, ch[n], 1, ConvGeom::unit(), true),
                });
            } else {
                heads.push(b.conv(&format!("head{n}"), classes, ch[n], 1, ConvGeom::unit(), true));
            }
        }
        Ok(Model {
            config: config.clone(),
            params: b.params,
            encoder,
            decoder,
            coarse_head,
            heads,
            mems,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Replace all parameter values, keeping the architecture.
    pub fn load_params(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.params.len()
            || tensors.iter().zip(self.params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("load_params", "parameter list does not match the architecture"));
        }
        self.params.tensors = tensors;
        Ok(())
    }

    /// Checkpoint bytes with the configuration stored as metadata.
    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let named: Vec<(String, &Tensor<T>)> =
            self.params.names().iter().cloned().zip(self.params.tensors()).collect();
        encode_checkpoint(&named, serde_json::json!({ "model": self.config }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(String, &Tensor<T>)> =
            self.params.names().iter().cloned().zip(self.params.tensors()).collect();
        write_checkpoint(path, &named, serde_json::json!({ "model": self.config }))
    }

    /// Rebuild a network from a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (header, tensors) = read_checkpoint::<T>(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_owned(),
            reason,
        };
        let config: ModelConfig = header
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| bad("checkpoint has no model configuration".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| bad(e.to_string())))?;
        let mut model = Self::build(&config, 0)?;
        let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
        if names != model.params.names() {
            return Err(bad("parameter names do not match the configuration".into()));
        }
        model.load_params(tensors)?;
        Ok(model)
    }

    /// Add every parameter to `g`; `trainable` controls gradient tracking.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    fn conv(&self, g: &mut Graph<T>, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        g.conv3d(x, p[layer.weight], layer.bias.map(|b| p[b]), layer.geom)
    }

    fn block(&self, g: &mut Graph<T>, p: &[Var], blk: &ConvBlock, x: Var) -> Result<Var> {
        let y = self.conv(g, p, &blk.conv, x)?;
        let y = g.instance_norm(y, Some(p[blk.gamma]), Some(p[blk.beta]), self.config.norm_eps)?;
        g.leaky_relu(y, self.config.lrelu_slope)
    }

    fn head(&self, g: &mut Graph<T>, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        let logits = self.conv(g, p, layer, x)?;
        g.softmax_channels(logits)
    }

    pub fn mem_vars(&self, p: &[Var], level: usize) -> Option<MemVars> {
        let m = self.mems.get(level)?;
        Some(MemVars {
            context_w: p[m.context.weight],
            context_b: p[m.context.bias?],
            mix_w: p[m.mix.weight],
            mix_b: p[m.mix.bias?],
            head_w: p[m.head.weight],
            head_b: p[m.head.bias?],
        })
    }

    /// Full forward pass on a `(B, in_channels, D, H, W)` patch batch.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<MultiScaleOutputs> {
        let s = g.value(x).shape();
        let c = &self.config;
        if s[1] != c.in_channels || [s[2], s[3], s[4]] != c.patch_size {
            return Err(Error::shape(
                "forward",
                format!("input {s:?} does not match patch {:?} with {} channels", c.patch_size, c.in_channels),
            ));
        }
        let n_levels = c.num_levels;
        let mut skips = Vec::with_capacity(n_levels);
        let mut cur = x;
        for level in &self.encoder {
            cur = self.block(g, p, &level.blocks[0], cur)?;
            cur = self.block(g, p, &level.blocks[1], cur)?;
            skips.push(cur);
        }

        let mut probs = vec![None; n_levels];
        let mut features = vec![None; n_levels];
        let mut embeddings = vec![None; n_levels];
        let mut attention = vec![None; n_levels];
        let bottleneck = skips[n_levels - 1];
        features[n_levels - 1] = Some(bottleneck);
        probs[n_levels - 1] = Some(self.head(g, p, &self.coarse_head, bottleneck)?);

        cur = bottleneck;
        for n in (0..n_levels - 1).rev() {
            let dec = &self.decoder[n];
            let up = self.conv_t(g, p, &dec.up, cur)?;
            let cat = g.concat_channels(skips[n], up)?;
            let f = self.block(g, p, &dec.blocks[0], cat)?;
            let f = self.block(g, p, &dec.blocks[1], f)?;
            features[n] = Some(f);
            let coarse = probs[n + 1].expect("coarser level computed first");
            probs[n] = Some(match self.mem_vars(p, n) {
                Some(vars) => {
                    let out = mem_forward(g, coarse, f, &vars)?;
                    embeddings[n] = Some(out.embedding);
                    attention[n] = Some(out.attention);
                    out.prob
                }
                None => self.head(g, p, &self.heads[n], f)?,
            });
            cur = f;
        }
        Ok(MultiScaleOutputs {
            probs: probs.into_iter().map(|v| v.expect("all levels")).collect(),
            features: features.into_iter().map(|v| v.expect("all levels")).collect(),
            embeddings,
            attention,
        })
    }

    fn conv_t(&self, g: &mut Graph<T>, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        g.conv_transpose3d(x, p[layer.weight], layer.bias.map(|b| p[b]), layer.geom)
    }
}

fn check_probability_map<T: Scalar>(t: &Tensor<T>) -> Result<()> {
    let tol = if T::BYTES == 4 { 1e-4 } else { 1e-9 };
    let c = t.channels();
    for b in 0..t.batch() {
        for i in 0..t.voxels() {
            let s: f64 = (0..c).map(|ch| t.plane(b, ch)[i].to_f64()).sum();
            let in_range = (0..c).all(|ch| (0.0..=1.0).contains(&t.plane(b, ch)[i].to_f64()));
            if (s - 1.0).abs() > tol || !in_range {
                return Err(Error::Input(format!("coarse map is not a probability map (sum {s})")));
            }
        }
    }
    Ok(())
}

/// Mask-enhanced module: gate fine decoder features with the coarser probability map.
///
/// The foreground probability `1 - P_coarse[background]` is upsampled
/// trilinearly to the fine grid and appended to the features as an extra
/// channel (`E`). A 3x3x3 then a 1x1x1 convolution turn `E` into attention
/// features `F^w`; the fine features are multiplied by their channel softmax
/// and classified by a 1x1x1 convolution and a softmax.
pub fn mem_forward<T: Scalar>(g: &mut Graph<T>, p_coarse: Var, f_fine: Var, vars: &MemVars) -> Result<MemOutputs> {
    let (ps, fs) = (g.value(p_coarse).shape(), g.value(f_fine).shape());
    if ps[0] != fs[0] || [ps[2] * 2, ps[3] * 2, ps[4] * 2] != [fs[2], fs[3], fs[4]] {
        return Err(Error::shape("mem_forward", format!("coarse map {ps:?} vs features {fs:?}")));
    }
    if ps[1] < 2 {
        return Err(Error::shape("mem_forward", "coarse map needs at least two classes"));
    }
    check_probability_map(g.value(p_coarse))?;
    let background = g.select_channel(p_coarse, 0)?;
    let foreground = g.affine(background, -1.0, 1.0)?;
    let resampled = g.upsample(foreground, UpMode::Trilinear)?;
    let embedding = g.concat_channels(f_fine, resampled)?;
    let ctx = g.conv3d(embedding, vars.context_w, Some(vars.context_b), ConvGeom::same(3))?;
    let attention = g.conv3d(ctx, vars.mix_w, Some(vars.mix_b), ConvGeom::unit())?;
    let weights = g.softmax_channels(attention)?;
    let gated = g.mul(f_fine, weights)?;
    let logits = g.conv3d(gated, vars.head_w, Some(vars.head_b), ConvGeom::unit())?;
    let prob = g.softmax_channels(logits)?;
    Ok(MemOutputs {
        embedding,
        attention,
        prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mem: bool) -> ModelConfig {
        ModelConfig {
            mem_enabled: mem,
            ..ModelConfig::tiny()
        }
    }

    #[test]
    fn parameter_count_by_hand() {
        // N=2, base 2, one input channel, two classes, channels (2, 4)
        let cfg = ModelConfig {
            num_levels: 2,
            base_channels: 2,
            channel_cap: 4,
            patch_size: [2, 4, 4],
            ..ModelConfig::tiny()
        };
        let enc0 = (2 * 27) + 4 + (2 * 2 * 27) + 4;
        let enc1 = (4 * 2 * 27) + 8 + (4 * 4 * 27) + 8;
        let dec0 = (4 * 2 * 8 + 2) + (2 * 4 * 27) + 4 + (2 * 2 * 27) + 4;
        let coarse_head = 4 * 2 + 2;
        let mem0 = (2 * 3 * 27 + 2) + (2 * 2 + 2) + (2 * 2 + 2);
        let m = Model::<f64>::build(&cfg, 0).unwrap();
        assert_eq!(m.params().count(), enc0 + enc1 + dec0 + coarse_head + mem0);
        let plain = Model::<f64>::build(&ModelConfig { mem_enabled: false, ..cfg }, 0).unwrap();
        assert_eq!(plain.params().count(), enc0 + enc1 + dec0 + coarse_head + (2 * 2 + 2));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::<f32>::build(&tiny(true), 7).unwrap();
        let b = Model::<f32>::build(&tiny(true), 7).unwrap();
        let c = Model::<f32>::build(&tiny(true), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params().tensors(), c.params().tensors());
    }

    #[test]
    fn output_shapes_with_and_without_mem() {
        let cfg = tiny(true);
        let mut shapes = Vec::new();
        for mem in [true, false] {
            let m = Model::<f64>::build(&tiny(mem), 1).unwrap();
            let mut g = Graph::new();
            let p = m.bind(&mut g, false);
            let x = g.constant(Tensor::full([2, 1, 8, 16, 16], 0.3));
            let out = m.forward(&mut g, &p, x).unwrap();
            assert_eq!(out.probs.len(), cfg.num_levels);
            shapes.push(out.probs.iter().map(|&v| g.value(v).shape()).collect::<Vec<_>>());
            assert_eq!(out.embeddings[0].is_some(), mem);
            assert!(out.embeddings[cfg.num_levels - 1].is_none());
        }
        assert_eq!(shapes[0], shapes[1]);
        assert_eq!(shapes[0][0], [2, 2, 8, 16, 16]);
        assert_eq!(shapes[0][2], [2, 2, 2, 4, 4]);
    }

    #[test]
    fn wrong_patch_rejected() {
        let m = Model::<f64>::build(&tiny(true), 1).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 1, 8, 16, 8]));
        assert!(m.forward(&mut g, &p, x).is_err());
    }

    #[test]
    fn mem_rejects_unnormalized_maps() {
        let m = Model::<f64>::build(&tiny(true), 1).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let vars = m.mem_vars(&p, 1).unwrap();
        let coarse = g.constant(Tensor::full([1, 2, 2, 4, 4], 0.7));
        let fine = g.constant(Tensor::zeros([1, 4, 4, 8, 8]));
        assert!(matches!(mem_forward(&mut g, coarse, fine, &vars), Err(Error::Input(_))));
        let coarse = g.constant(Tensor::full([1, 2, 2, 4, 3], 0.5));
        assert!(matches!(mem_forward(&mut g, coarse, fine, &vars), Err(Error::Shape { .. })));
    }
}
