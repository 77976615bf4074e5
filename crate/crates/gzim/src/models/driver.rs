//! PilotNet-style steering regressor with pluggable gaze integration.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{IntegrationMode, Model, ModelConfig, ModelError, Result};
use crate::gazemap::{central_blob, keep_prob_mask, resize_map, GazeMap};
use crate::numerics::{DropoutMode, Graph, NodeId, OptimizerKind, OptimizerState, Tensor};

/// One labelled training frame. `gaze` may be `None` for modes that do not
/// consume a map (no-gaze, central-blob).
#[derive(Debug, Clone)]
pub struct DriverSample {
    pub image: Vec<f64>,
    pub gaze: Option<GazeMap>,
    pub steering_deg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn optimizer_state(&self) -> OptimizerState {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerState::sgd(self.learning_rate),
            OptimizerKind::Adam => OptimizerState::adam(self.learning_rate),
        }
    }
}

/// Fresh driver network with fan-in-scaled uniform weights and zero biases.
pub fn build_pilotnet(config: &ModelConfig, rng: &mut impl Rng) -> Result<Model<ModelConfig>> {
    config.validate()?;
    let mut params = Vec::new();
    let mut in_c = config.input_channels;
    for (i, spec) in config.conv.iter().enumerate() {
        let fan_in = in_c * spec.kernel * spec.kernel;
        params.push((
            format!("conv{}_w", i + 1),
            Tensor::uniform_fan_in(
                vec![spec.out_channels, in_c, spec.kernel, spec.kernel],
                fan_in,
                rng,
            ),
        ));
        // Slightly positive bias keeps narrow ReLU stacks from going dead.
        params.push((
            format!("conv{}_b", i + 1),
            Tensor::new(vec![spec.out_channels], vec![0.05; spec.out_channels]),
        ));
        in_c = spec.out_channels;
    }
    let chain = config.conv_chain()?;
    let (c, h, w) = *chain.last().unwrap();
    let mut in_n = c * h * w;
    for (i, &width) in config.dense.iter().enumerate() {
        params.push((
            format!("fc{}_w", i + 1),
            Tensor::uniform_fan_in(vec![width, in_n], in_n, rng),
        ));
        let bias = if i + 1 < config.dense.len() { 0.05 } else { 0.0 };
        params.push((format!("fc{}_b", i + 1), Tensor::new(vec![width], vec![bias; width])));
        in_n = width;
    }
    Ok(Model {
        config: config.clone(),
        params,
        training_history: Vec::new(),
    })
}

/// Stack the grayscale frame with its gaze-weighted copy: channel 0 is the
/// image, channel 1 is image times the peak-normalized gaze map (resized to
/// the frame if needed).
pub fn preprocess_gaze_as_input(
    image: &[f64],
    gaze: &GazeMap,
    width: usize,
    height: usize,
) -> Result<Vec<f64>> {
    if image.len() != width * height {
        return Err(ModelError::InputSize {
            expected: width * height,
            got: image.len(),
        });
    }
    let gaze = if gaze.width == width && gaze.height == height {
        gaze.clone()
    } else {
        resize_map(gaze, width, height)
    };
    let peak = gaze.max();
    if peak <= 0.0 {
        return Err(ModelError::Gaze(crate::gazemap::GazeMapError::DegenerateMap));
    }
    let mut out = Vec::with_capacity(2 * width * height);
    out.extend_from_slice(image);
    out.extend(image.iter().zip(gaze.values.iter()).map(|(px, g)| px * g / peak));
    Ok(out)
}

/// Build the forward graph for one frame and return the steering output node.
pub fn driver_graph(
    config: &ModelConfig,
    params: &[Tensor],
    image: &[f64],
    gaze: Option<&GazeMap>,
    mode: DropoutMode,
    rng: &mut impl Rng,
) -> Result<(Graph, NodeId)> {
    let (w, h) = (config.input_width, config.input_height);
    if image.len() != w * h {
        return Err(ModelError::InputSize {
            expected: w * h,
            got: image.len(),
        });
    }
    let input_data = match config.integration_mode {
        IntegrationMode::GazeAsInput => {
            let gaze = gaze.ok_or(ModelError::MissingGaze)?;
            preprocess_gaze_as_input(image, gaze, w, h)?
        }
        _ => image.to_vec(),
    };
    // Keep-probability masks for the two modulated-dropout sites, if any.
    let chain = config.conv_chain()?;
    let spatial_masks = match config.integration_mode {
        IntegrationMode::GazeDropout => {
            let gaze = gaze.ok_or(ModelError::MissingGaze)?;
            Some(dropout_site_masks(gaze, config, &chain)?)
        }
        IntegrationMode::CentralBlobDropout => {
            let blob = central_blob(w, h, w as f64 / 16.0);
            Some(dropout_site_masks(&blob, config, &chain)?)
        }
        _ => None,
    };

    // Center the input: the raw frames have a large DC component that leaves
    // narrow relu stacks stuck on the predict-the-mean saddle for many epochs.
    let centered: Vec<f64> = input_data.iter().map(|v| v - 0.5).collect();

    let mut graph = Graph::new();
    let mut x = graph.constant(vec![config.input_channels, h, w], centered);
    let mut p = 0usize;
    for (i, spec) in config.conv.iter().enumerate() {
        let kernel = graph.leaf(&params[p], Some(p));
        let bias = graph.leaf(&params[p + 1], Some(p + 1));
        p += 2;
        x = graph.conv2d(x, kernel, bias, spec.stride)?;
        x = graph.relu(x);
        if i < 2 {
            x = match (&spatial_masks, config.integration_mode) {
                (Some(masks), _) => graph.spatial_modulated_dropout(x, &masks[i], mode, rng)?,
                (None, IntegrationMode::NoGaze | IntegrationMode::GazeAsInput) => {
                    graph.uniform_dropout(x, config.uniform_keep_prob, mode, rng)?
                }
                _ => unreachable!("dropout modes with no mask are uniform"),
            };
        }
    }
    for i in 0..config.dense.len() {
        let weights = graph.leaf(&params[p], Some(p));
        let bias = graph.leaf(&params[p + 1], Some(p + 1));
        p += 2;
        x = graph.affine(x, weights, bias)?;
        if i + 1 < config.dense.len() {
            x = graph.relu(x);
        }
    }
    Ok((graph, x))
}

fn dropout_site_masks(
    gaze: &GazeMap,
    config: &ModelConfig,
    chain: &[(usize, usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    let mut masks = Vec::with_capacity(2);
    for &(_, h, w) in &chain[..2] {
        masks.push(keep_prob_mask(gaze, config.p_base, w, h)?.values);
    }
    Ok(masks)
}

/// Steering prediction in degrees for one frame.
pub fn forward_driver(
    model: &Model<ModelConfig>,
    image: &[f64],
    gaze: Option<&GazeMap>,
    mode: DropoutMode,
    rng: &mut impl Rng,
) -> Result<f64> {
    let params = model.param_tensors();
    let (graph, out) = driver_graph(&model.config, &params, image, gaze, mode, rng)?;
    Ok(graph.value(out)[0])
}

/// Minibatch MSE training. Appends one mean-loss entry per epoch to the
/// model's training history; `epochs == 0` leaves the model untouched.
pub fn train_driver(
    model: &mut Model<ModelConfig>,
    data: &[DriverSample],
    params: &TrainParams,
    rng: &mut impl Rng,
) -> Result<()> {
    model.config.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut tensors: Vec<Tensor> = model
        .param_tensors()
        .into_iter()
        .map(Tensor::with_grad)
        .collect();
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
                let (mut graph, out) = driver_graph(
                    &model.config,
                    &tensors,
                    &sample.image,
                    sample.gaze.as_ref(),
                    DropoutMode::Train,
                    rng,
                )?;
                let target = graph.constant(vec![1], vec![sample.steering_deg]);
                let diff = graph.sub(out, target)?;
                let sq = graph.square_mean(diff);
                epoch_loss += graph.value(sq)[0];
                let loss = graph.scale(sq, 1.0 / chunk.len() as f64);
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
