//! Encoder-decoder gaze predictor and its optional adversarial trainer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvSpec, GazePredictorConfig, Model, ModelError, Result, TrainParams};
use crate::gazemap::GazeMap;
use crate::numerics::{Graph, NodeId, Tensor};

/// One supervised gaze example: grayscale frame plus the target heatmap
/// (a distribution over the same resolution).
#[derive(Debug, Clone)]
pub struct GazeSample {
    pub image: Vec<f64>,
    pub target: GazeMap,
}

/// Patch discriminator for the adversarial loss. The first conv layer reads
/// the (image, heatmap) pair through two single-channel kernels whose outputs
/// are summed, which is algebraically the same as one conv over the stacked
/// two-channel input but keeps the heatmap differentiable without a concat op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub conv: Vec<ConvSpec>,
}

impl DiscriminatorConfig {
    pub fn for_frames(width: usize, height: usize) -> Self {
        DiscriminatorConfig {
            input_width: width,
            input_height: height,
            conv: vec![
                ConvSpec { out_channels: 6, kernel: 5, stride: 4 },
                ConvSpec { out_channels: 8, kernel: 3, stride: 2 },
            ],
        }
    }

    fn conv_chain(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut chain = Vec::new();
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.kernel > h || spec.kernel > w || spec.stride == 0 {
                return Err(ModelError::Config(format!(
                    "discriminator layer {i} cannot apply a {k}x{k} stride-{s} kernel to {h}x{w}",
                    k = spec.kernel,
                    s = spec.stride
                )));
            }
            h = (h - spec.kernel) / spec.stride + 1;
            w = (w - spec.kernel) / spec.stride + 1;
            chain.push((spec.out_channels, h, w));
        }
        Ok(chain)
    }
}

pub fn build_gaze_predictor(
    config: &GazePredictorConfig,
    rng: &mut impl Rng,
) -> Result<Model<GazePredictorConfig>> {
    config.conv_chain()?;
    let mut params = Vec::new();
    let mut in_c = 1;
    for (i, spec) in config.encoder.iter().enumerate() {
        let fan_in = in_c * spec.kernel * spec.kernel;
        params.push((
            format!("enc{}_w", i + 1),
            Tensor::uniform_fan_in(vec![spec.out_channels, in_c, spec.kernel, spec.kernel], fan_in, rng),
        ));
        // Slightly positive bias keeps the narrow ReLU encoder from going dead.
        params.push((
            format!("enc{}_b", i + 1),
            Tensor::new(vec![spec.out_channels], vec![0.05; spec.out_channels]),
        ));
        in_c = spec.out_channels;
    }
    for (i, spec) in config.decoder.iter().enumerate() {
        let fan_in = in_c * spec.kernel * spec.kernel;
        params.push((
            format!("dec{}_w", i + 1),
            Tensor::uniform_fan_in(vec![spec.out_channels, in_c, spec.kernel, spec.kernel], fan_in, rng),
        ));
        params.push((format!("dec{}_b", i + 1), Tensor::zeros(vec![spec.out_channels])));
        in_c = spec.out_channels;
    }
    Ok(Model {
        config: config.clone(),
        params,
        training_history: Vec::new(),
    })
}

pub fn build_discriminator(
    config: &DiscriminatorConfig,
    rng: &mut impl Rng,
) -> Result<Model<DiscriminatorConfig>> {
    let chain = config.conv_chain()?;
    let mut params = Vec::new();
    let first = &config.conv[0];
    let fan_in = 2 * first.kernel * first.kernel;
    params.push((
        "d1_w_img".to_string(),
        Tensor::uniform_fan_in(vec![first.out_channels, 1, first.kernel, first.kernel], fan_in, rng),
    ));
    params.push((
        "d1_w_map".to_string(),
        Tensor::uniform_fan_in(vec![first.out_channels, 1, first.kernel, first.kernel], fan_in, rng),
    ));
    params.push(("d1_b".to_string(), Tensor::zeros(vec![first.out_channels])));
    let mut in_c = first.out_channels;
    for (i, spec) in config.conv.iter().enumerate().skip(1) {
        let fan_in = in_c * spec.kernel * spec.kernel;
        params.push((
            format!("d{}_w", i + 1),
            Tensor::uniform_fan_in(vec![spec.out_channels, in_c, spec.kernel, spec.kernel], fan_in, rng),
        ));
        params.push((format!("d{}_b", i + 1), Tensor::zeros(vec![spec.out_channels])));
        in_c = spec.out_channels;
    }
    let (c, h, w) = *chain.last().unwrap();
    let n = c * h * w;
    params.push(("d_fc_w".to_string(), Tensor::uniform_fan_in(vec![1, n], n, rng)));
    params.push(("d_fc_b".to_string(), Tensor::zeros(vec![1])));
    Ok(Model {
        config: config.clone(),
        params,
        training_history: Vec::new(),
    })
}

/// Generator forward pass: conv encoder, coarse decoder, bilinear upsample to
/// the input resolution, frame-wide softmax.
pub fn gaze_graph(
    config: &GazePredictorConfig,
    params: &[Tensor],
    image: &[f64],
) -> Result<(Graph, NodeId)> {
    let (w, h) = (config.input_width, config.input_height);
    if image.len() != w * h {
        return Err(ModelError::InputSize { expected: w * h, got: image.len() });
    }
    let mut graph = Graph::new();
    let mut x = graph.constant(vec![1, h, w], image.to_vec());
    let n_layers = config.encoder.len() + config.decoder.len();
    for (i, spec) in config.encoder.iter().chain(config.decoder.iter()).enumerate() {
        let kernel = graph.leaf(&params[2 * i], Some(2 * i));
        let bias = graph.leaf(&params[2 * i + 1], Some(2 * i + 1));
        x = graph.conv2d(x, kernel, bias, spec.stride)?;
        if i + 1 < n_layers {
            x = graph.relu(x);
        }
    }
    x = graph.upsample_bilinear(x, h, w)?;
    let out = graph.softmax_all(x);
    Ok((graph, out))
}

pub fn predict_gaze(model: &Model<GazePredictorConfig>, image: &[f64]) -> Result<GazeMap> {
    let params = model.param_tensors();
    let (graph, out) = gaze_graph(&model.config, &params, image)?;
    Ok(GazeMap {
        width: model.config.input_width,
        height: model.config.input_height,
        values: graph.value(out).to_vec(),
    })
}

/// L1 distance (sum of absolute differences) between the prediction node and
/// the target map, as a scalar graph node.
fn l1_loss_node(graph: &mut Graph, pred: NodeId, target: &GazeMap) -> Result<NodeId> {
    let n = target.values.len();
    let t = graph.constant(vec![1, target.height, target.width], target.values.clone());
    let diff = graph.sub(pred, t)?;
    let mean = graph.abs_mean(diff);
    Ok(graph.scale(mean, n as f64))
}

/// Discriminator logit node over an image node and a heatmap node already in
/// the graph. `param_base` is `Some(0)` when discriminator parameters should
/// receive gradients, `None` to treat them as frozen constants.
fn disc_logit_node(
    graph: &mut Graph,
    config: &DiscriminatorConfig,
    params: &[Tensor],
    track_params: bool,
    image: NodeId,
    map: NodeId,
) -> Result<NodeId> {
    let reg = |graph: &mut Graph, idx: usize| {
        graph.leaf(&params[idx], if track_params { Some(idx) } else { None })
    };
    // Heatmaps are distributions with ~1/(H*W) magnitudes; rescale so the
    // discriminator sees O(1) inputs.
    let n = (config.input_width * config.input_height) as f64;
    let map = graph.scale(map, n);
    let first = &config.conv[0];
    let w_img = reg(graph, 0);
    let w_map = reg(graph, 1);
    let b = reg(graph, 2);
    let zero_b = graph.constant(vec![first.out_channels], vec![0.0; first.out_channels]);
    let a = graph.conv2d(image, w_img, b, first.stride)?;
    let bpath = graph.conv2d(map, w_map, zero_b, first.stride)?;
    let mut x = graph.add(a, bpath)?;
    x = graph.relu(x);
    let mut p = 3;
    for spec in config.conv.iter().skip(1) {
        let kernel = reg(graph, p);
        let bias = reg(graph, p + 1);
        p += 2;
        x = graph.conv2d(x, kernel, bias, spec.stride)?;
        x = graph.relu(x);
    }
    let fw = reg(graph, p);
    let fb = reg(graph, p + 1);
    Ok(graph.affine(x, fw, fb)?)
}

/// Convenience wrapper: discriminator logit for a concrete (frame, map) pair.
pub fn discriminator_logit(
    disc: &Model<DiscriminatorConfig>,
    image: &[f64],
    map: &GazeMap,
) -> Result<f64> {
    let (w, h) = (disc.config.input_width, disc.config.input_height);
    if image.len() != w * h {
        return Err(ModelError::InputSize { expected: w * h, got: image.len() });
    }
    let params = disc.param_tensors();
    let mut graph = Graph::new();
    let img = graph.constant(vec![1, h, w], image.to_vec());
    let m = graph.constant(vec![1, h, w], map.values.clone());
    let logit = disc_logit_node(&mut graph, &disc.config, &params, false, img, m)?;
    Ok(graph.value(logit)[0])
}

/// Plain L1 training of the generator. One history entry (mean L1 distance)
/// per epoch.
pub fn train_gaze_supervised(
    model: &mut Model<GazePredictorConfig>,
    data: &[GazeSample],
    params: &TrainParams,
    rng: &mut impl Rng,
) -> Result<()> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut tensors: Vec<Tensor> = model.param_tensors().into_iter().map(Tensor::with_grad).collect();
    let mut opt = params.optimizer_state();
    let batch = params.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            for t in tensors.iter_mut() {
                t.zero_grad();
            }
            for &i in chunk {
                let sample = &data[i];
                let (mut graph, pred) = gaze_graph(&model.config, &tensors, &sample.image)?;
                let l1 = l1_loss_node(&mut graph, pred, &sample.target)?;
                epoch_loss += graph.value(l1)[0];
                let loss = graph.scale(l1, 1.0 / chunk.len() as f64);
                graph.backward(loss)?;
                graph.accumulate_param_grads(&mut tensors);
            }
            opt.step(&mut tensors)?;
        }
        model.training_history.push(epoch_loss / data.len() as f64);
    }
    model.set_params(&tensors);
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct AdversarialReport {
    /// Mean generator objective (adversarial + weighted L1) per epoch.
    pub generator_history: Vec<f64>,
    /// Mean discriminator BCE per epoch.
    pub discriminator_history: Vec<f64>,
}

/// Conditional-GAN training: alternating discriminator and generator updates
/// per minibatch. The generator objective is
/// `adv_weight * BCE(D(x, G(x)), real) + l1_weight * L1(G(x), truth)`;
/// with `adv_weight == 0` an update reduces exactly to a supervised L1 step.
pub fn train_gaze_adversarial(
    gen: &mut Model<GazePredictorConfig>,
    disc: &mut Model<DiscriminatorConfig>,
    data: &[GazeSample],
    params: &TrainParams,
    adv_weight: f64,
    rng: &mut impl Rng,
) -> Result<AdversarialReport> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (w, h) = (gen.config.input_width, gen.config.input_height);
    if disc.config.input_width != w || disc.config.input_height != h {
        return Err(ModelError::Config(format!(
            "discriminator resolution {}x{} does not match generator {}x{}",
            disc.config.input_width, disc.config.input_height, w, h
        )));
    }
    let l1_weight = gen.config.l1_weight;
    let mut g_tensors: Vec<Tensor> = gen.param_tensors().into_iter().map(Tensor::with_grad).collect();
    let mut d_tensors: Vec<Tensor> = disc.param_tensors().into_iter().map(Tensor::with_grad).collect();
    let mut g_opt = params.optimizer_state();
    let mut d_opt = params.optimizer_state();
    let batch = params.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = AdversarialReport::default();
    for _ in 0..params.epochs {
        order.shuffle(rng);
        let (mut g_epoch, mut d_epoch) = (0.0, 0.0);
        for chunk in order.chunks(batch) {
            // Discriminator step: real maps toward 1, detached fakes toward 0.
            for t in d_tensors.iter_mut() {
                t.zero_grad();
            }
            for &i in chunk {
                let sample = &data[i];
                let fake = {
                    let (graph, pred) = gaze_graph(&gen.config, &g_tensors, &sample.image)?;
                    graph.value(pred).to_vec()
                };
                let mut graph = Graph::new();
                let img = graph.constant(vec![1, h, w], sample.image.clone());
                let real = graph.constant(vec![1, h, w], sample.target.values.clone());
                let fake = graph.constant(vec![1, h, w], fake);
                let logit_real = disc_logit_node(&mut graph, &disc.config, &d_tensors, true, img, real)?;
                let logit_fake = disc_logit_node(&mut graph, &disc.config, &d_tensors, true, img, fake)?;
                let bce_real = graph.bce_with_logit(logit_real, 1.0)?;
                let bce_fake = graph.bce_with_logit(logit_fake, 0.0)?;
                let both = graph.add(bce_real, bce_fake)?;
                let mean = graph.scale(both, 0.5);
                d_epoch += graph.value(mean)[0];
                let loss = graph.scale(mean, 1.0 / chunk.len() as f64);
                graph.backward(loss)?;
                graph.accumulate_param_grads(&mut d_tensors);
            }
            d_opt.step(&mut d_tensors)?;

            // Generator step: fool the (frozen) discriminator plus L1 term.
            for t in g_tensors.iter_mut() {
                t.zero_grad();
            }
            for &i in chunk {
                let sample = &data[i];
                let (mut graph, pred) = gaze_graph(&gen.config, &g_tensors, &sample.image)?;
                let img = graph.constant(vec![1, h, w], sample.image.clone());
                let logit = disc_logit_node(&mut graph, &disc.config, &d_tensors, false, img, pred)?;
                let adv = graph.bce_with_logit(logit, 1.0)?;
                let adv = graph.scale(adv, adv_weight);
                let l1 = l1_loss_node(&mut graph, pred, &sample.target)?;
                let l1 = graph.scale(l1, l1_weight);
                let total = graph.add(adv, l1)?;
                g_epoch += graph.value(total)[0];
                let loss = graph.scale(total, 1.0 / chunk.len() as f64);
                graph.backward(loss)?;
                graph.accumulate_param_grads(&mut g_tensors);
            }
            g_opt.step(&mut g_tensors)?;
        }
        report.generator_history.push(g_epoch / data.len() as f64);
        report.discriminator_history.push(d_epoch / data.len() as f64);
        gen.training_history.push(g_epoch / data.len() as f64);
    }
    gen.set_params(&g_tensors);
    disc.set_params(&d_tensors);
    Ok(report)
}
