//! Multimodal diffusion transformer: joint-attention blocks over audio,
//! vision and text tokens, audio-only blocks, and the convolutional head.

use foley_core::nn::{DepthwiseConv1d, Linear, ParamStore};
use foley_core::{Error, Graph, Result, Scalar, SeededRng, Var};

use crate::conditioning::{ConditionBundle, Conditioner, EncodedCondition};
use crate::config::ModelConfig;
use crate::rope::aligned_rope_apply;

const LN_EPS: f64 = 1e-6;

/// `layer_norm(x)·(1 + scale) + shift`, with `scale` and `shift` of shape `[D]`.
pub fn adaln<T: Scalar>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let s = g.add_scalar(scale, 1.0)?;
    let y = g.mul_row(n, s)?;
    g.add_row(y, shift)
}

/// Splits a `[1, k·D]` modulation row into `k` vectors of shape `[D]`.
fn chunks<T: Scalar>(g: &mut Graph<T>, m: Var, k: usize) -> Result<Vec<Var>> {
    let (_, w) = g.value(m).dims2()?;
    let d = w / k;
    let flat = g.reshape(m, &[w])?;
    (0..k).map(|i| g.slice(flat, 0, i * d, d)).collect()
}

/// Per-modality weights of one block.
#[derive(Clone, Debug)]
pub struct StreamParams {
    pub modulation: Linear,
    pub qkv: Linear,
    pub out: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl StreamParams {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d: usize, ratio: usize, rng: &mut SeededRng) -> Self {
        Self {
            modulation: Linear::zeros(ps, &format!("{name}.mod"), d, 6 * d),
            qkv: Linear::new(ps, &format!("{name}.qkv"), d, 3 * d, true, rng),
            out: Linear::new(ps, &format!("{name}.out"), d, d, true, rng),
            mlp_in: Linear::new(ps, &format!("{name}.mlp_in"), d, ratio * d, true, rng),
            mlp_out: Linear::new(ps, &format!("{name}.mlp_out"), ratio * d, d, true, rng),
        }
    }
}

/// One token stream entering a block.
#[derive(Clone, Copy, Debug)]
pub struct StreamInput<'a> {
    pub params: &'a StreamParams,
    /// `[T, D]`
    pub x: Var,
    /// Rotary rate scale; `None` leaves the stream unrotated.
    pub rope: Option<f64>,
    /// Added to the modulated attention input.
    pub add: Option<Var>,
}

/// Joint attention over the concatenated streams followed by per-stream MLPs,
/// each sub-layer wrapped in gated adaLN driven by `silu_g [1, D]`.
pub fn mm_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    streams: &[StreamInput<'_>],
    silu_g: Var,
    heads: usize,
    rope_base: f64,
) -> Result<Vec<Var>> {
    let mut mods = Vec::with_capacity(streams.len());
    let (mut qs, mut ks, mut vs, mut lens) = (vec![], vec![], vec![], vec![]);
    for s in streams {
        let (t, d) = g.value(s.x).dims2()?;
        let hd = d / heads;
        let m = s.params.modulation.forward(g, ps, silu_g)?;
        let m = chunks(g, m, 6)?;
        let mut h = adaln(g, s.x, m[0], m[1])?;
        if let Some(a) = s.add {
            h = g.add(h, a)?;
        }
        let qkv = s.params.qkv.forward(g, ps, h)?;
        let mut split = [qkv; 3];
        for (i, p) in split.iter_mut().enumerate() {
            let x = g.slice(qkv, 1, i * d, d)?;
            let x = g.reshape(x, &[t, heads, hd])?;
            let x = g.swap_axes01(x)?;
            *p = match (i, s.rope) {
                (0 | 1, Some(r)) => aligned_rope_apply(g, x, r, rope_base)?,
                _ => x,
            };
        }
        qs.push(split[0]);
        ks.push(split[1]);
        vs.push(split[2]);
        lens.push(t);
        mods.push(m);
    }
    let cat = |g: &mut Graph<T>, xs: &[Var]| if xs.len() == 1 { Ok(xs[0]) } else { g.concat(xs, 1) };
    let q = cat(g, &qs)?;
    let k = cat(g, &ks)?;
    let v = cat(g, &vs)?;
    let o = g.attention(q, k, v, None)?;
    let (h, total, hd) = g.value(o).dims3()?;
    if total != lens.iter().sum::<usize>() {
        return Err(Error::Internal(format!("joint attention produced {total} tokens for streams of {lens:?}")));
    }
    let o = g.swap_axes01(o)?;
    let o = g.reshape(o, &[total, h * hd])?;
    let mut outs = Vec::with_capacity(streams.len());
    let mut off = 0;
    for ((s, m), &t) in streams.iter().zip(&mods).zip(&lens) {
        let part = if streams.len() == 1 { o } else { g.slice(o, 0, off, t)? };
        off += t;
        let a = s.params.out.forward(g, ps, part)?;
        let a = g.mul_row(a, m[2])?;
        let x = g.add(s.x, a)?;
        let hm = adaln(g, x, m[3], m[4])?;
        let hm = s.params.mlp_in.forward(g, ps, hm)?;
        let hm = g.gelu(hm)?;
        let hm = s.params.mlp_out.forward(g, ps, hm)?;
        let hm = g.mul_row(hm, m[5])?;
        outs.push(g.add(x, hm)?);
    }
    Ok(outs)
}

/// Audio, vision and text streams sharing one attention.
#[derive(Clone, Debug)]
pub struct JointBlock {
    pub audio: StreamParams,
    pub vision: StreamParams,
    pub text: StreamParams,
}

/// Audio-only block: the joint block with the other two streams removed.
#[derive(Clone, Debug)]
pub struct SingleBlock {
    pub audio: StreamParams,
}

/// Inputs shared by every block of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BlockContext {
    pub silu_g: Var,
    pub align: Option<Var>,
    pub heads: usize,
    pub rope_base: f64,
    /// Rate scale for vision tokens (`audio_rate / vision_rate`).
    pub vision_scale: f64,
}

impl JointBlock {
    /// Returns `(audio, vision, text)`; absent streams are skipped entirely.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        audio: Var,
        vision: Option<Var>,
        text: Option<Var>,
        ctx: &BlockContext,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        let mut streams = vec![StreamInput { params: &self.audio, x: audio, rope: Some(1.0), add: ctx.align }];
        if let Some(v) = vision {
            streams.push(StreamInput { params: &self.vision, x: v, rope: Some(ctx.vision_scale), add: None });
        }
        if let Some(t) = text {
            streams.push(StreamInput { params: &self.text, x: t, rope: None, add: None });
        }
        let out = mm_block_forward(g, ps, &streams, ctx.silu_g, ctx.heads, ctx.rope_base)?;
        let mut it = out.into_iter();
        let a = it.next().ok_or_else(|| Error::Internal("joint block lost the audio stream".into()))?;
        let v = vision.map(|_| it.next()).flatten();
        let t = text.map(|_| it.next()).flatten();
        Ok((a, v, t))
    }
}

impl SingleBlock {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, audio: Var, ctx: &BlockContext) -> Result<Var> {
        let s = [StreamInput { params: &self.audio, x: audio, rope: Some(1.0), add: ctx.align }];
        Ok(mm_block_forward(g, ps, &s, ctx.silu_g, ctx.heads, ctx.rope_base)?[0])
    }
}

/// Final adaLN, depthwise conv (k = 3), MLP and projection to the latent width.
#[derive(Clone, Debug)]
pub struct FlowHead {
    pub modulation: Linear,
    pub conv: DepthwiseConv1d,
    pub mlp: Linear,
    pub proj: Linear,
}

impl FlowHead {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, d: usize, d_latent: usize, rng: &mut SeededRng) -> Self {
        Self {
            modulation: Linear::zeros(ps, "head.mod", d, 2 * d),
            conv: DepthwiseConv1d::new(ps, "head.conv", d, 3, rng),
            mlp: Linear::new(ps, "head.mlp", d, d, true, rng),
            proj: Linear::new(ps, "head.proj", d, d_latent, true, rng),
        }
    }

    /// `x [T, D] → [T, d_latent]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, silu_g: Var) -> Result<Var> {
        let m = self.modulation.forward(g, ps, silu_g)?;
        let m = chunks(g, m, 2)?;
        let h = adaln(g, x, m[0], m[1])?;
        let h = g.transpose(h)?;
        let h = self.conv.forward(g, ps, h)?;
        let h = g.transpose(h)?;
        let h = self.mlp.forward(g, ps, h)?;
        let h = g.gelu(h)?;
        self.proj.forward(g, ps, h)
    }
}

/// The velocity network `v(t, C, x)`.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub cond: Conditioner,
    pub input: Linear,
    pub joint: Vec<JointBlock>,
    pub single: Vec<SingleBlock>,
    pub head: FlowHead,
}

impl FlowModel {
    pub fn new<T: Scalar>(config: ModelConfig, ps: &mut ParamStore<T>, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden();
        let r = config.mlp_ratio;
        let cond = Conditioner::new(ps, &config, rng)?;
        let input = Linear::new(ps, "input", config.d_latent, d, true, rng);
        let joint = (0..config.depth_joint)
            .map(|i| JointBlock {
                audio: StreamParams::new(ps, &format!("joint{i}.audio"), d, r, rng),
                vision: StreamParams::new(ps, &format!("joint{i}.vision"), d, r, rng),
                text: StreamParams::new(ps, &format!("joint{i}.text"), d, r, rng),
            })
            .collect();
        let single = (0..config.depth_single)
            .map(|i| SingleBlock { audio: StreamParams::new(ps, &format!("single{i}.audio"), d, r, rng) })
            .collect();
        let head = FlowHead::new(ps, d, config.d_latent, rng);
        Ok(Self { config, cond, input, joint, single, head })
    }

    pub fn context<T: Scalar>(&self, g: &mut Graph<T>, enc: &EncodedCondition) -> Result<BlockContext> {
        Ok(BlockContext {
            silu_g: g.silu(enc.global)?,
            align: Some(enc.align),
            heads: self.config.heads,
            rope_base: self.config.rope.base,
            vision_scale: self.config.rope.rate_scale(self.config.rope.vision_rate),
        })
    }

    /// N1 joint blocks then N2 audio-only blocks on audio tokens `[T, D]`.
    pub fn stack<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        audio: Var,
        vision: Var,
        text: Var,
        ctx: &BlockContext,
    ) -> Result<Var> {
        let (mut a, mut v, mut t) = (audio, Some(vision), Some(text));
        for b in &self.joint {
            (a, v, t) = b.forward(g, ps, a, v, t, ctx)?;
        }
        for b in &self.single {
            a = b.forward(g, ps, a, ctx)?;
        }
        Ok(a)
    }

    /// Predicted velocity `[T, d_latent]` at latent `x [T, d_latent]` and flow time `t`.
    pub fn velocity<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Var,
        t: f64,
        bundle: &ConditionBundle,
    ) -> Result<Var> {
        let (n, c) = g.value(x).dims2()?;
        if c != self.config.d_latent {
            return Err(Error::Input(format!("latent width {c}, model expects {}", self.config.d_latent)));
        }
        if n == 0 || n > self.config.max_audio_len {
            return Err(Error::Input(format!("{n} latent frames, expected 1..={}", self.config.max_audio_len)));
        }
        let enc = self.cond.encode(g, ps, bundle, t, n)?;
        let ctx = self.context(g, &enc)?;
        let h = self.input.forward(g, ps, x)?;
        let h = self.stack(g, ps, h, enc.vision, enc.text, &ctx)?;
        self.head.forward(g, ps, h, ctx.silu_g)
    }
}
