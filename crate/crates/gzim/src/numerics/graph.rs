use rand::Rng;

use super::{DropoutMode, NumericsError, Result, Tensor};

pub type NodeId = usize;

/// One recorded primitive. Saved buffers are whatever backward needs.
enum Op {
    Leaf {
        param: Option<usize>,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Affine {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    UniformDropout {
        input: NodeId,
        keep_prob: f64,
        /// Bernoulli keep mask, present only in Train mode.
        mask: Option<Vec<f64>>,
    },
    SpatialDropout {
        input: NodeId,
        /// Per-location keep probabilities, length H*W.
        keep_mask: Vec<f64>,
        /// Per-location keep draw (0/1), present only in Train mode.
        draw: Option<Vec<f64>>,
    },
    UpsampleBilinear {
        input: NodeId,
        src: (usize, usize),
        dst: (usize, usize),
    },
    SoftmaxAll {
        input: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    AbsMean {
        input: NodeId,
    },
    SquareMean {
        input: NodeId,
    },
    BceWithLogit {
        logit: NodeId,
        target: f64,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Affine { .. } => "affine",
            Op::Relu { .. } => "relu",
            Op::UniformDropout { .. } => "uniform_dropout",
            Op::SpatialDropout { .. } => "spatial_modulated_dropout",
            Op::UpsampleBilinear { .. } => "upsample_bilinear",
            Op::SoftmaxAll { .. } => "softmax_all",
            Op::Sub { .. } => "sub",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::AbsMean { .. } => "abs_mean",
            Op::SquareMean { .. } => "square_mean",
            Op::BceWithLogit { .. } => "bce_with_logit",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Tape of one forward pass. Nodes are appended in execution order, so the
/// record is topologically sorted by construction; backward walks it in
/// reverse and accumulates into every node's grad buffer.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> NodeId {
        let n = value.len();
        self.nodes.push(Node {
            shape,
            value,
            grad: vec![0.0; n],
            op,
        });
        self.nodes.len() - 1
    }

    /// Register a tensor as a graph input. `param` links the leaf back to a
    /// caller-side parameter slot so gradients can be collected after backward.
    pub fn leaf(&mut self, t: &Tensor, param: Option<usize>) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf { param })
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf { param: None })
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    /// Op kinds in execution order, for structural assertions.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Valid (no-padding) 2D convolution: input [C_in,H,W], kernel
    /// [C_out,C_in,kH,kW], bias [C_out], output [C_out,H',W'] with
    /// H' = (H-kH)/stride + 1.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let ishape = self.nodes[input].shape.clone();
        let kshape = self.nodes[kernel].shape.clone();
        let bshape = self.nodes[bias].shape.clone();
        if ishape.len() != 3 {
            return Err(NumericsError::InvalidArgument(format!(
                "conv2d input must be rank 3, got shape {ishape:?}"
            )));
        }
        if kshape.len() != 4 {
            return Err(NumericsError::InvalidArgument(format!(
                "conv2d kernel must be rank 4, got shape {kshape:?}"
            )));
        }
        if stride == 0 {
            return Err(NumericsError::InvalidArgument("stride must be positive".into()));
        }
        let (ci, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (co, kci, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if kci != ci {
            return Err(NumericsError::DimensionMismatch {
                axis: 1,
                expected: ci,
                got: kci,
                context: "conv2d kernel in-channels vs input channels",
            });
        }
        if bshape != [co] {
            return Err(NumericsError::DimensionMismatch {
                axis: 0,
                expected: co,
                got: bshape.first().copied().unwrap_or(0),
                context: "conv2d bias vs kernel out-channels",
            });
        }
        if kh > h {
            return Err(NumericsError::DimensionMismatch {
                axis: 1,
                expected: h,
                got: kh,
                context: "conv2d kernel height exceeds input height",
            });
        }
        if kw > w {
            return Err(NumericsError::DimensionMismatch {
                axis: 2,
                expected: w,
                got: kw,
                context: "conv2d kernel width exceeds input width",
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0; co * oh * ow];
        {
            let inp = &self.nodes[input].value;
            let ker = &self.nodes[kernel].value;
            let b = &self.nodes[bias].value;
            for c_out in 0..co {
                let out_ch = &mut out[c_out * oh * ow..(c_out + 1) * oh * ow];
                out_ch.iter_mut().for_each(|v| *v = b[c_out]);
                for c_in in 0..ci {
                    let in_ch = &inp[c_in * h * w..(c_in + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wgt = ker[((c_out * ci + c_in) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let in_row = &in_ch[(oy * stride + ky) * w + kx..];
                                let out_row = &mut out_ch[oy * ow..(oy + 1) * ow];
                                for (ox, o) in out_row.iter_mut().enumerate() {
                                    *o += wgt * in_row[ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![co, oh, ow],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
        ))
    }

    /// Dense layer: input [N] (any shape, flattened), weights [M,N], bias [M].
    pub fn affine(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.nodes[input].value.len();
        let wshape = self.nodes[weights].shape.clone();
        if wshape.len() != 2 {
            return Err(NumericsError::InvalidArgument(format!(
                "affine weights must be rank 2, got shape {wshape:?}"
            )));
        }
        let (m, wn) = (wshape[0], wshape[1]);
        if wn != n {
            return Err(NumericsError::DimensionMismatch {
                axis: 1,
                expected: n,
                got: wn,
                context: "affine weights columns vs input length",
            });
        }
        if self.nodes[bias].value.len() != m {
            return Err(NumericsError::DimensionMismatch {
                axis: 0,
                expected: m,
                got: self.nodes[bias].value.len(),
                context: "affine bias vs weights rows",
            });
        }
        let mut out = vec![0.0; m];
        {
            let x = &self.nodes[input].value;
            let w = &self.nodes[weights].value;
            let b = &self.nodes[bias].value;
            for (row, o) in out.iter_mut().enumerate() {
                let wr = &w[row * n..(row + 1) * n];
                let mut acc = b[row];
                for (wi, xi) in wr.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *o = acc;
            }
        }
        Ok(self.push(
            vec![m],
            out,
            Op::Affine {
                input,
                weights,
                bias,
            },
        ))
    }

    /// Elementwise max(0, x). Gradient is 0 at exactly x == 0.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[input].value.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[input].shape.clone();
        self.push(shape, out, Op::Relu { input })
    }

    /// Classic non-inverted dropout. Train: keep each element with probability
    /// `keep_prob`, no rescaling. Test: multiply every element by `keep_prob`.
    pub fn uniform_dropout(
        &mut self,
        input: NodeId,
        keep_prob: f64,
        mode: DropoutMode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(NumericsError::InvalidArgument(format!(
                "keep_prob must be in (0,1], got {keep_prob}"
            )));
        }
        let shape = self.nodes[input].shape.clone();
        let (out, mask) = match mode {
            DropoutMode::Train => {
                let mask: Vec<f64> = self.nodes[input]
                    .value
                    .iter()
                    .map(|_| if rng.gen::<f64>() < keep_prob { 1.0 } else { 0.0 })
                    .collect();
                let out = self.nodes[input]
                    .value
                    .iter()
                    .zip(mask.iter())
                    .map(|(x, m)| x * m)
                    .collect();
                (out, Some(mask))
            }
            DropoutMode::Test => (
                self.nodes[input].value.iter().map(|x| x * keep_prob).collect(),
                None,
            ),
        };
        Ok(self.push(
            shape,
            out,
            Op::UniformDropout {
                input,
                keep_prob,
                mask,
            },
        ))
    }

    /// Gaze-modulated dropout over input [C,H,W] with a per-location keep
    /// probability mask of length H*W. The train-mode Bernoulli draw is made
    /// once per spatial location and shared across all channels; test mode
    /// multiplies every channel by the mask.
    pub fn spatial_modulated_dropout(
        &mut self,
        input: NodeId,
        keep_mask: &[f64],
        mode: DropoutMode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 3 {
            return Err(NumericsError::InvalidArgument(format!(
                "spatial_modulated_dropout input must be rank 3, got shape {shape:?}"
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if keep_mask.len() != h * w {
            return Err(NumericsError::DimensionMismatch {
                axis: 1,
                expected: h * w,
                got: keep_mask.len(),
                context: "spatial_modulated_dropout mask vs input spatial extent",
            });
        }
        if let Some(bad) = keep_mask.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(NumericsError::InvalidArgument(format!(
                "keep mask value {bad} outside (0,1]"
            )));
        }
        let (out, draw) = match mode {
            DropoutMode::Train => {
                let draw: Vec<f64> = keep_mask
                    .iter()
                    .map(|p| if rng.gen::<f64>() < *p { 1.0 } else { 0.0 })
                    .collect();
                let mut out = vec![0.0; c * h * w];
                let inp = &self.nodes[input].value;
                for ch in 0..c {
                    for (loc, dr) in draw.iter().enumerate() {
                        out[ch * h * w + loc] = inp[ch * h * w + loc] * dr;
                    }
                }
                (out, Some(draw))
            }
            DropoutMode::Test => {
                let mut out = vec![0.0; c * h * w];
                let inp = &self.nodes[input].value;
                for ch in 0..c {
                    for (loc, p) in keep_mask.iter().enumerate() {
                        out[ch * h * w + loc] = inp[ch * h * w + loc] * p;
                    }
                }
                (out, None)
            }
        };
        Ok(self.push(
            shape,
            out,
            Op::SpatialDropout {
                input,
                keep_mask: keep_mask.to_vec(),
                draw,
            },
        ))
    }

    /// Bilinear upsampling of [C,H,W] to [C,dh,dw].
    pub fn upsample_bilinear(&mut self, input: NodeId, dh: usize, dw: usize) -> Result<NodeId> {
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 3 {
            return Err(NumericsError::InvalidArgument(format!(
                "upsample input must be rank 3, got shape {shape:?}"
            )));
        }
        if dh == 0 || dw == 0 {
            return Err(NumericsError::InvalidArgument("target size must be positive".into()));
        }
        let (c, sh, sw) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; c * dh * dw];
        {
            let inp = &self.nodes[input].value;
            for ch in 0..c {
                let src = &inp[ch * sh * sw..(ch + 1) * sh * sw];
                let dst = &mut out[ch * dh * dw..(ch + 1) * dh * dw];
                for y in 0..dh {
                    let (y0, y1, fy) = sample_coords(y, dh, sh);
                    for x in 0..dw {
                        let (x0, x1, fx) = sample_coords(x, dw, sw);
                        let v00 = src[y0 * sw + x0];
                        let v01 = src[y0 * sw + x1];
                        let v10 = src[y1 * sw + x0];
                        let v11 = src[y1 * sw + x1];
                        dst[y * dw + x] = v00 * (1.0 - fy) * (1.0 - fx)
                            + v01 * (1.0 - fy) * fx
                            + v10 * fy * (1.0 - fx)
                            + v11 * fy * fx;
                    }
                }
            }
        }
        Ok(self.push(
            vec![c, dh, dw],
            out,
            Op::UpsampleBilinear {
                input,
                src: (sh, sw),
                dst: (dh, dw),
            },
        ))
    }

    /// Softmax over every element of the node, regardless of shape.
    pub fn softmax_all(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let shape = self.nodes[input].shape.clone();
        self.push(shape, out, Op::SoftmaxAll { input })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "sub operands")?;
        let out = self.nodes[a]
            .value
            .iter()
            .zip(self.nodes[b].value.iter())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(shape, out, Op::Sub { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "add operands")?;
        let out = self.nodes[a]
            .value
            .iter()
            .zip(self.nodes[b].value.iter())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let out = self.nodes[input].value.iter().map(|x| x * factor).collect();
        let shape = self.nodes[input].shape.clone();
        self.push(shape, out, Op::Scale { input, factor })
    }

    /// Mean of |x| over all elements; scalar output.
    pub fn abs_mean(&mut self, input: NodeId) -> NodeId {
        let n = self.nodes[input].value.len() as f64;
        let v = self.nodes[input].value.iter().map(|x| x.abs()).sum::<f64>() / n;
        self.push(vec![1], vec![v], Op::AbsMean { input })
    }

    /// Mean of x^2 over all elements; scalar output.
    pub fn square_mean(&mut self, input: NodeId) -> NodeId {
        let n = self.nodes[input].value.len() as f64;
        let v = self.nodes[input].value.iter().map(|x| x * x).sum::<f64>() / n;
        self.push(vec![1], vec![v], Op::SquareMean { input })
    }

    /// Binary cross-entropy on a scalar logit against a constant target label.
    pub fn bce_with_logit(&mut self, logit: NodeId, target: f64) -> Result<NodeId> {
        if self.nodes[logit].value.len() != 1 {
            return Err(NumericsError::InvalidArgument(
                "bce_with_logit expects a scalar logit".into(),
            ));
        }
        let x = self.nodes[logit].value[0];
        // max(x,0) - t*x + ln(1 + exp(-|x|)), the overflow-safe form
        let loss = x.max(0.0) - target * x + (1.0 + (-x.abs()).exp()).ln();
        Ok(self.push(vec![1], vec![loss], Op::BceWithLogit { logit, target }))
    }

    fn check_same_len(&self, a: NodeId, b: NodeId, context: &'static str) -> Result<()> {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        if la != lb {
            return Err(NumericsError::DimensionMismatch {
                axis: 0,
                expected: la,
                got: lb,
                context,
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Every node's grad buffer is populated;
    /// leaves not reachable from the loss keep their zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.len() != 1 {
            return Err(NumericsError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss].grad[0] = 1.0;
        for id in (0..self.nodes.len()).rev() {
            // split off the node being processed so its inputs can be mutated
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &rest[0];
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                } => {
                    let (co, oh, ow) = (node.shape[0], node.shape[1], node.shape[2]);
                    let ci = before[*input].shape[0];
                    let h = before[*input].shape[1];
                    let w = before[*input].shape[2];
                    let kh = before[*kernel].shape[2];
                    let kw = before[*kernel].shape[3];
                    let stride = *stride;
                    let gout = node.grad.clone();
                    let in_val = before[*input].value.clone();
                    let k_val = before[*kernel].value.clone();
                    let mut kgrad = vec![0.0; k_val.len()];
                    for c_out in 0..co {
                        let g_ch = &gout[c_out * oh * ow..(c_out + 1) * oh * ow];
                        before[*bias].grad[c_out] += g_ch.iter().sum::<f64>();
                        for c_in in 0..ci {
                            let in_ch = &in_val[c_in * h * w..(c_in + 1) * h * w];
                            let gin_ch = &mut before[*input].grad[c_in * h * w..(c_in + 1) * h * w];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let widx = ((c_out * ci + c_in) * kh + ky) * kw + kx;
                                    let wgt = k_val[widx];
                                    let mut wgrad = 0.0;
                                    for oy in 0..oh {
                                        let base = (oy * stride + ky) * w + kx;
                                        let g_row = &g_ch[oy * ow..(oy + 1) * ow];
                                        for (ox, g) in g_row.iter().enumerate() {
                                            wgrad += g * in_ch[base + ox * stride];
                                            gin_ch[base + ox * stride] += g * wgt;
                                        }
                                    }
                                    kgrad[widx] += wgrad;
                                }
                            }
                        }
                    }
                    for (kg, acc) in before[*kernel].grad.iter_mut().zip(kgrad.iter()) {
                        *kg += acc;
                    }
                }
                Op::Affine {
                    input,
                    weights,
                    bias,
                } => {
                    let n = before[*input].value.len();
                    let m = node.value.len();
                    let gout = node.grad.clone();
                    let x = before[*input].value.clone();
                    let w = before[*weights].value.clone();
                    for row in 0..m {
                        let g = gout[row];
                        before[*bias].grad[row] += g;
                        let wrow = &w[row * n..(row + 1) * n];
                        let gwrow = &mut before[*weights].grad[row * n..(row + 1) * n];
                        for col in 0..n {
                            gwrow[col] += g * x[col];
                        }
                        let gin = &mut before[*input].grad;
                        for col in 0..n {
                            gin[col] += g * wrow[col];
                        }
                    }
                }
                Op::Relu { input } => {
                    let gout = node.grad.clone();
                    let inp = &before[*input];
                    let vals = inp.value.clone();
                    for (i, g) in gout.iter().enumerate() {
                        if vals[i] > 0.0 {
                            before[*input].grad[i] += g;
                        }
                    }
                }
                Op::UniformDropout {
                    input,
                    keep_prob,
                    mask,
                } => {
                    let gout = node.grad.clone();
                    match mask {
                        Some(mask) => {
                            let mask = mask.clone();
                            for (i, g) in gout.iter().enumerate() {
                                before[*input].grad[i] += g * mask[i];
                            }
                        }
                        None => {
                            let kp = *keep_prob;
                            for (i, g) in gout.iter().enumerate() {
                                before[*input].grad[i] += g * kp;
                            }
                        }
                    }
                }
                Op::SpatialDropout {
                    input,
                    keep_mask,
                    draw,
                } => {
                    let (c, hw) = (node.shape[0], node.shape[1] * node.shape[2]);
                    let gout = node.grad.clone();
                    let factors = draw.as_ref().unwrap_or(keep_mask).clone();
                    for ch in 0..c {
                        for loc in 0..hw {
                            before[*input].grad[ch * hw + loc] +=
                                gout[ch * hw + loc] * factors[loc];
                        }
                    }
                }
                Op::UpsampleBilinear { input, src, dst } => {
                    let c = node.shape[0];
                    let (sh, sw) = *src;
                    let (dh, dw) = *dst;
                    let gout = node.grad.clone();
                    for ch in 0..c {
                        let g_dst = &gout[ch * dh * dw..(ch + 1) * dh * dw];
                        let g_src = &mut before[*input].grad[ch * sh * sw..(ch + 1) * sh * sw];
                        for y in 0..dh {
                            let (y0, y1, fy) = sample_coords(y, dh, sh);
                            for x in 0..dw {
                                let (x0, x1, fx) = sample_coords(x, dw, sw);
                                let g = g_dst[y * dw + x];
                                g_src[y0 * sw + x0] += g * (1.0 - fy) * (1.0 - fx);
                                g_src[y0 * sw + x1] += g * (1.0 - fy) * fx;
                                g_src[y1 * sw + x0] += g * fy * (1.0 - fx);
                                g_src[y1 * sw + x1] += g * fy * fx;
                            }
                        }
                    }
                }
                Op::SoftmaxAll { input } => {
                    let y = node.value.clone();
                    let gout = node.grad.clone();
                    let dot: f64 = y.iter().zip(gout.iter()).map(|(yi, gi)| yi * gi).sum();
                    for (i, yi) in y.iter().enumerate() {
                        before[*input].grad[i] += yi * (gout[i] - dot);
                    }
                }
                Op::Sub { a, b } => {
                    let gout = node.grad.clone();
                    let (a, b) = (*a, *b);
                    for (i, g) in gout.iter().enumerate() {
                        before[a].grad[i] += g;
                    }
                    for (i, g) in gout.iter().enumerate() {
                        before[b].grad[i] -= g;
                    }
                }
                Op::Add { a, b } => {
                    let gout = node.grad.clone();
                    let (a, b) = (*a, *b);
                    for (i, g) in gout.iter().enumerate() {
                        before[a].grad[i] += g;
                    }
                    for (i, g) in gout.iter().enumerate() {
                        before[b].grad[i] += g;
                    }
                }
                Op::Scale { input, factor } => {
                    let gout = node.grad.clone();
                    let f = *factor;
                    for (i, g) in gout.iter().enumerate() {
                        before[*input].grad[i] += g * f;
                    }
                }
                Op::AbsMean { input } => {
                    let g = node.grad[0];
                    let n = before[*input].value.len() as f64;
                    let vals = before[*input].value.clone();
                    for (i, x) in vals.iter().enumerate() {
                        before[*input].grad[i] += g * x.signum() * (x.abs() > 0.0) as u8 as f64 / n;
                    }
                }
                Op::SquareMean { input } => {
                    let g = node.grad[0];
                    let n = before[*input].value.len() as f64;
                    let vals = before[*input].value.clone();
                    for (i, x) in vals.iter().enumerate() {
                        before[*input].grad[i] += g * 2.0 * x / n;
                    }
                }
                Op::BceWithLogit { logit, target } => {
                    let g = node.grad[0];
                    let x = before[*logit].value[0];
                    let sigma = 1.0 / (1.0 + (-x).exp());
                    before[*logit].grad[0] += g * (sigma - target);
                }
            }
        }
        Ok(())
    }

    /// Add every param-linked leaf gradient into the matching tensor's grad.
    pub fn accumulate_param_grads(&self, params: &mut [Tensor]) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(idx) } = node.op {
                let g = params[idx]
                    .grad
                    .get_or_insert_with(|| vec![0.0; node.grad.len()]);
                for (pg, ng) in g.iter_mut().zip(node.grad.iter()) {
                    *pg += ng;
                }
            }
        }
    }
}

/// Bilinear sample coordinates for output index `i` of `dn` mapped into a
/// source axis of length `sn`: returns (floor, ceil, fraction).
fn sample_coords(i: usize, dn: usize, sn: usize) -> (usize, usize, f64) {
    let pos = (i as f64 + 0.5) * sn as f64 / dn as f64 - 0.5;
    let pos = pos.clamp(0.0, (sn - 1) as f64);
    let f = pos.floor();
    let lo = f as usize;
    let hi = (lo + 1).min(sn - 1);
    (lo, hi, pos - f)
}
