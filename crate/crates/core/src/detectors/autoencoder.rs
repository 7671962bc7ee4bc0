//! Fully connected reconstruction autoencoder.
//!
//! Layer widths `[D, H, B, H, D]`; tanh on every hidden layer, identity on
//! the output. The anomaly score of a window is its mean squared
//! reconstruction error, and training minimises the batch mean of that score.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Hidden and bottleneck widths used when none are configured.
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_BOTTLENECK: usize = 16;

/// Scoring runs in row blocks of this size to bound memory.
const SCORE_BLOCK: usize = 256;

pub fn default_dims(input: usize) -> Vec<usize> {
    vec![input, DEFAULT_HIDDEN, DEFAULT_BOTTLENECK, DEFAULT_HIDDEN, input]
}

/// One affine layer. `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    layers: Vec<Dense>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::invalid(format!(
            "autoencoder needs at least input, bottleneck and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("layer widths must be positive, got {dims:?}")));
    }
    let (first, last) = (dims[0], dims[dims.len() - 1]);
    if first != last {
        return Err(Error::invalid(format!(
            "output width {last} must equal input width {first}"
        )));
    }
    let bottleneck = *dims.iter().min().unwrap();
    if bottleneck >= first {
        return Err(Error::invalid(format!(
            "bottleneck {bottleneck} must be narrower than input {first}"
        )));
    }
    Ok(())
}

impl AutoencoderParams {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::invalid("autoencoder has no layers"));
        };
        let mut dims = vec![first.input_dim()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_dim() != dims[i] {
                return Err(Error::invalid(format!(
                    "layer {i} expects width {}, previous layer produces {}",
                    layer.input_dim(),
                    dims[i]
                )));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::invalid(format!("layer {i} bias length mismatch")));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
            dims.push(layer.output_dim());
        }
        validate_dims(&dims)?;
        Ok(AutoencoderParams { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(AutoencoderParams { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::output_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn from_flat(dims: &[usize], values: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        if values.len() != params.param_count() {
            return Err(Error::DimensionMismatch {
                expected: params.param_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut params.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        AutoencoderParams::from_layers(params.layers)
    }

    fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Euclidean norm over all parameters (used on gradients).
    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self -= step * grad`
    fn descend(&mut self, grad: &AutoencoderParams, step: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.weights.scaled_add(-step, &g.weights);
            l.bias.scaled_add(-step, &g.bias);
        }
    }
}

/// Glorot-uniform weights (`|w| <= sqrt(6 / (fan_in + fan_out))`), zero biases.
pub fn ae_init(dims: &[usize], seed: u64) -> Result<AutoencoderParams> {
    let mut params = AutoencoderParams::zeros(dims)?;
    let mut rng = rng_from_seed(seed);
    for l in &mut params.layers {
        let limit = (6.0 / (l.input_dim() + l.output_dim()) as f64).sqrt();
        l.weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-limit..=limit));
    }
    Ok(params)
}

fn stack<S: AsRef<[f64]>>(samples: &[S], dim: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            });
        }
        data.extend_from_slice(s);
    }
    Ok(Array2::from_shape_vec((samples.len(), dim), data).expect("shape checked"))
}

/// Activations of every layer; `acts[0]` is the input, the last entry the
/// reconstruction.
fn forward(params: &AutoencoderParams, input: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let last = params.layers.len() - 1;
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(input.to_owned());
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = acts[i].dot(&layer.weights.t());
        z += &layer.bias;
        if i != last {
            z.mapv_inplace(f64::tanh);
        }
        acts.push(z);
    }
    acts
}

fn row_mse(input: ArrayView2<'_, f64>, output: &Array2<f64>) -> Vec<f64> {
    let d = input.ncols() as f64;
    Zip::from(input.rows())
        .and(output.rows())
        .map_collect(|x, y| x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / d)
        .to_vec()
}

/// Mean squared reconstruction error of one window.
pub fn ae_score(params: &AutoencoderParams, features: &[f64]) -> Result<f64> {
    Ok(ae_score_batch(params, &[features])?[0])
}

pub fn ae_score_batch<S: AsRef<[f64]>>(params: &AutoencoderParams, samples: &[S]) -> Result<Vec<f64>> {
    let dim = params.input_dim();
    let mut out = Vec::with_capacity(samples.len());
    for block in samples.chunks(SCORE_BLOCK) {
        let x = stack(block, dim)?;
        let acts = forward(params, x.view());
        out.extend(row_mse(x.view(), acts.last().unwrap()));
    }
    Ok(out)
}

fn loss_and_grad(params: &AutoencoderParams, x: ArrayView2<'_, f64>) -> (f64, AutoencoderParams) {
    let (n, d) = x.dim();
    let scale = 1.0 / (n * d) as f64;
    let acts = forward(params, x);
    let recon = acts.last().unwrap();

    let mut delta = recon - &x;
    let loss = delta.iter().map(|e| e * e).sum::<f64>() * scale;
    delta *= 2.0 * scale;

    let mut grads: Vec<Dense> = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input = &acts[i];
        let weights = delta.t().dot(input);
        let bias = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut back = delta.dot(&layer.weights);
            // tanh'(z) = 1 - tanh(z)^2, and acts[i] already holds tanh(z)
            Zip::from(&mut back)
                .and(input)
                .for_each(|g, &a| *g *= 1.0 - a * a);
            delta = back;
        }
        grads.push(Dense { weights, bias });
    }
    grads.reverse();
    (loss, AutoencoderParams { layers: grads })
}

/// Exact gradient of the batch-mean reconstruction MSE.
pub fn ae_grad<S: AsRef<[f64]>>(params: &AutoencoderParams, batch: &[S]) -> Result<AutoencoderParams> {
    Ok(ae_loss_and_grad(params, batch)?.1)
}

pub fn ae_loss_and_grad<S: AsRef<[f64]>>(
    params: &AutoencoderParams,
    batch: &[S],
) -> Result<(f64, AutoencoderParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient of an empty batch"));
    }
    let x = stack(batch, params.input_dim())?;
    Ok(loss_and_grad(params, x.view()))
}

/// Batch-mean reconstruction MSE.
pub fn ae_loss<S: AsRef<[f64]>>(params: &AutoencoderParams, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let scores = ae_score_batch(params, batch)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mini-batch gradient descent with a seeded shuffle every epoch.
///
/// Returns the trained parameters and the full-set loss measured after each
/// epoch.
pub fn ae_train<S: AsRef<[f64]>>(
    params: &AutoencoderParams,
    samples: &[S],
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(AutoencoderParams, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::invalid(format!("learning rate {learning_rate} must be finite and non-negative")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let data = stack(samples, params.input_dim())?;
    let mut params = params.clone();
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (_, grad) = loss_and_grad(&params, batch.view());
            params.descend(&grad, learning_rate);
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "autoencoder parameters diverged in epoch {epoch} (learning rate {learning_rate})"
            )));
        }
        let acts = forward(&params, data.view());
        let loss = row_mse(data.view(), acts.last().unwrap()).iter().sum::<f64>() / samples.len() as f64;
        trace.push(loss);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    fn random_samples(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn init_is_deterministic_bounded_and_unbiased() {
        let dims = [8, 4, 2, 4, 8];
        let a = ae_init(&dims, 1).unwrap();
        assert_eq!(a, ae_init(&dims, 1).unwrap());
        assert_ne!(a, ae_init(&dims, 2).unwrap());
        assert!(((6.0f64 / 12.0).sqrt() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        for l in a.layers() {
            let limit = (6.0 / (l.input_dim() + l.output_dim()) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ae_init(&[8, 0, 8], 0).is_err());
        assert!(ae_init(&[8, 4], 0).is_err());
        assert!(ae_init(&[8, 4, 6], 0).is_err());
        assert!(ae_init(&[4, 8, 4], 0).is_err());
    }

    #[test]
    fn zero_network_scores() {
        let p = AutoencoderParams::zeros(&[8, 4, 2, 4, 8]).unwrap();
        assert_eq!(ae_score(&p, &[0.0; 8]).unwrap(), 0.0);
        assert_eq!(ae_score(&p, &[1.0; 8]).unwrap(), 1.0);
        assert!(ae_score(&p, &[1.0; 7]).is_err());
    }

    #[test]
    fn zero_input_with_zero_output_bias_is_stationary() {
        let p = ae_init(&[8, 4, 2, 4, 8], 3).unwrap();
        let g = ae_grad(&p, &[vec![0.0; 8]]).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let p = ae_init(&[6, 5, 3, 5, 6], 9).unwrap();
        let batch = random_samples(4, 6, 10);
        let doubled: Vec<Vec<f64>> = batch.iter().chain(batch.iter()).cloned().collect();
        let a = ae_grad(&p, &batch).unwrap().to_flat();
        let b = ae_grad(&p, &doubled).unwrap().to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
        assert!(ae_grad::<Vec<f64>>(&p, &[]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let p = ae_init(&[6, 5, 3, 5, 6], 4).unwrap();
        let q = AutoencoderParams::from_flat(&p.dims(), &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(AutoencoderParams::from_flat(&p.dims(), &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let p = ae_init(&[6, 5, 3, 5, 6], 4).unwrap();
        let data = random_samples(10, 6, 5);
        let (q, trace) = ae_train(&p, &data, 3, 0.0, 4, 1).unwrap();
        assert_eq!(p, q);
        assert_eq!(trace.len(), 3);
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic() {
        let p = ae_init(&[6, 5, 3, 5, 6], 4).unwrap();
        let data = random_samples(20, 6, 5);
        let a = ae_train(&p, &data, 4, 0.1, 8, 11).unwrap();
        let b = ae_train(&p, &data, 4, 0.1, 8, 11).unwrap();
        assert_eq!(a.0.to_flat(), b.0.to_flat());
        assert_eq!(a.1, b.1);
        assert!(ae_train::<Vec<f64>>(&p, &[], 1, 0.1, 8, 0).is_err());
    }
}
