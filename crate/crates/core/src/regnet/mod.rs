//! The 3D regression CNN: blocks of valid 3×3×3 convolutions with ReLU and
//! 2× max pooling, a final single-conv block with 4× pooling, fully
//! connected layers and a single linear output unit.

mod model_io;
mod train;

pub use model_io::{load_model, save_model, ModelSidecar};
pub use train::{train, AugmentConfig, EpochStats, Example, TrainConfig, TrainState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::{conv3d_output_shape, maxpool3d_output_shape};
use crate::tensor::{Graph, LossKind, NodeId, Real, Tensor};
use crate::volgrid::Dims;
use crate::Volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Conv blocks before the final single-conv block.
    pub blocks: usize,
    pub convs_per_block: usize,
    pub features_first_layer: usize,
    pub fc_layout: Vec<usize>,
    pub final_pool: usize,
    pub loss: LossKind,
    /// `(h, w, d)` of the smooth-ROI input.
    pub input_dims: Dims,
    /// Multiplier on the He standard deviation `sqrt(2 / fan_in)`.
    pub init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One layer of the resolved architecture together with its output shape.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv { c_in: usize, c_out: usize, out: Vec<usize> },
    Pool { k: usize, out: Vec<usize> },
    Dense { n_in: usize, n_out: usize, relu: bool },
}

impl NetworkConfig {
    /// Full-size architecture on 168×128×84 inputs.
    pub fn paper() -> Self {
        Self {
            blocks: 2,
            convs_per_block: 4,
            features_first_layer: 32,
            fc_layout: vec![2000, 2000],
            final_pool: 4,
            loss: LossKind::Mse,
            input_dims: [168, 128, 84],
            init_scale: 1.0,
        }
    }

    /// CPU-sized profile on 64×48×32 inputs.
    pub fn desk() -> Self {
        Self {
            blocks: 2,
            convs_per_block: 1,
            features_first_layer: 8,
            fc_layout: vec![64],
            final_pool: 4,
            loss: LossKind::Mse,
            input_dims: [64, 48, 32],
            init_scale: 1.0,
        }
    }

    /// Resolves the layer sequence, failing on the first layer whose output
    /// would be empty.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        if self.blocks == 0 || self.convs_per_block == 0 || self.features_first_layer == 0 {
            return Err(Error::Config("blocks, convs_per_block and features_first_layer must be >= 1".into()));
        }
        if self.final_pool == 0 || self.fc_layout.contains(&0) {
            return Err(Error::Config("final_pool and fc widths must be >= 1".into()));
        }
        self.loss.validate()?;
        let [h, w, d] = self.input_dims;
        let mut shape = vec![1, d, w, h];
        let mut layers = Vec::new();
        let mut feat = self.features_first_layer;
        let underflow = |name: String, shape: &[usize]| {
            Error::Config(format!("shape underflow at {name} (input {shape:?})"))
        };
        for b in 0..=self.blocks {
            let convs = if b == self.blocks { 1 } else { self.convs_per_block };
            for c in 0..convs {
                let out = conv3d_output_shape(&shape, feat)
                    .map_err(|_| underflow(format!("block {b} conv {c}"), &shape))?;
                layers.push(Layer::Conv { c_in: shape[0], c_out: feat, out: out.clone() });
                shape = out;
            }
            let k = if b == self.blocks { self.final_pool } else { 2 };
            let out = maxpool3d_output_shape(&shape, k).map_err(|_| underflow(format!("block {b} pool"), &shape))?;
            layers.push(Layer::Pool { k, out: out.clone() });
            shape = out;
            feat *= 2;
        }
        let mut n = shape.iter().product::<usize>();
        for &m in &self.fc_layout {
            layers.push(Layer::Dense { n_in: n, n_out: m, relu: true });
            n = m;
        }
        layers.push(Layer::Dense { n_in: n, n_out: 1, relu: false });
        Ok(layers)
    }

    /// Shapes of every trainable tensor, weights before biases, layer by layer.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        for l in self.layers()? {
            match l {
                Layer::Conv { c_in, c_out, .. } => {
                    out.push(vec![c_out, c_in, 3, 3, 3]);
                    out.push(vec![c_out]);
                }
                Layer::Dense { n_in, n_out, .. } => {
                    out.push(vec![n_out, n_in]);
                    out.push(vec![n_out]);
                }
                Layer::Pool { .. } => {}
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }
}

/// Network configuration plus trained weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: NetworkConfig,
    layers: Vec<Layer>,
    params: Vec<Tensor<f32>>,
}

/// Node handles of one forward pass.
pub struct Forward {
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub output: NodeId,
}

impl Model {
    /// He-initialized weights and zero biases.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let layers = cfg.layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for shape in cfg.param_shapes()? {
            if shape.len() == 1 {
                params.push(Tensor::zeros(&shape));
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let std = cfg.init_scale * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            params.push(Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32));
        }
        Ok(Self { cfg, layers, params })
    }

    pub fn from_params(cfg: NetworkConfig, params: Vec<Tensor<f32>>) -> Result<Self> {
        let layers = cfg.layers()?;
        let shapes = cfg.param_shapes()?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::Shape("parameter shapes do not match the network configuration".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        Ok(Self { cfg, layers, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    /// Sets the output unit's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.data_mut().fill(0.0);
        }
    }

    pub fn set_output_bias(&mut self, b: f32) {
        let last = self.params.len() - 1;
        self.params[last].data_mut()[0] = b;
    }

    fn check_input(&self, s: &Volume) -> Result<()> {
        if s.dims() != self.cfg.input_dims {
            return Err(Error::Shape(format!(
                "input dims {:?} do not match network input {:?}",
                s.dims(),
                self.cfg.input_dims
            )));
        }
        Ok(())
    }

    /// The EPVS score of a smooth-ROI volume.
    pub fn score(&self, s: &Volume) -> Result<f64> {
        self.check_input(s)?;
        let mut g = Graph::<f32>::new();
        let fwd = forward(&mut g, &self.layers, &self.params, Tensor::from_volume(s), false, false)?;
        Ok(g.value(fwd.output).data()[0] as f64)
    }

    /// Score and `d score / d input`, laid out like the input volume.
    pub fn input_gradient(&self, s: &Volume) -> Result<(f64, Volume)> {
        self.check_input(s)?;
        let mut g = Graph::<f32>::new();
        let fwd = forward(&mut g, &self.layers, &self.params, Tensor::from_volume(s), false, true)?;
        let y = g.value(fwd.output).data()[0] as f64;
        let out = g.sum(fwd.output);
        g.backward(out)?;
        let grad = g.grad_or_zeros(fwd.input).into_data();
        Ok((y, Volume::new(s.dims(), s.spacing(), grad)?))
    }
}

/// Records one forward pass of the network described by `layers` on `g`.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    layers: &[Layer],
    params: &[Tensor<T>],
    input: Tensor<T>,
    params_require_grad: bool,
    input_requires_grad: bool,
) -> Result<Forward> {
    let input_id = g.leaf(input, input_requires_grad);
    let param_ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone(), params_require_grad)).collect();
    let mut x = input_id;
    let mut pi = 0;
    for layer in layers {
        match layer {
            Layer::Conv { .. } => {
                x = g.conv3d(x, param_ids[pi], param_ids[pi + 1])?;
                x = g.relu(x);
                pi += 2;
            }
            Layer::Pool { k, .. } => {
                x = g.maxpool3d(x, *k)?;
            }
            Layer::Dense { relu, .. } => {
                if g.value(x).shape().len() != 1 {
                    x = g.flatten(x);
                }
                x = g.dense(x, param_ids[pi], param_ids[pi + 1])?;
                if *relu {
                    x = g.relu(x);
                }
                pi += 2;
            }
        }
    }
    Ok(Forward {
        input: input_id,
        params: param_ids,
        output: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_shapes() {
        let layers = NetworkConfig::desk().layers().unwrap();
        let shapes: Vec<_> = layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { out, .. } | Layer::Pool { out, .. } => Some(out.clone()),
                Layer::Dense { .. } => None,
            })
            .collect();
        assert_eq!(
            shapes,
            vec![
                vec![8, 30, 46, 62],
                vec![8, 15, 23, 31],
                vec![16, 13, 21, 29],
                vec![16, 6, 10, 14],
                vec![32, 4, 8, 12],
                vec![32, 1, 2, 3],
            ]
        );
        assert_eq!(layers[6], Layer::Dense { n_in: 192, n_out: 64, relu: true });
    }

    #[test]
    fn paper_param_count_closed_form() {
        // 168×128×84: 4 convs → 160×120×76, pool → 80×60×38,
        // 4 convs → 72×52×30, pool → 36×26×15, conv → 34×24×13, pool 4 → 8×6×3.
        let cfg = NetworkConfig::paper();
        let conv = |ci: usize, co: usize| co * ci * 27 + co;
        let mut want = conv(1, 32) + 3 * conv(32, 32);
        want += conv(32, 64) + 3 * conv(64, 64);
        want += conv(64, 128);
        let flat = 128 * 8 * 6 * 3;
        want += flat * 2000 + 2000 + 2000 * 2000 + 2000 + 2000 + 1;
        assert_eq!(cfg.param_count().unwrap(), want);
        match cfg.layers().unwrap().iter().rev().nth(3).unwrap() {
            Layer::Pool { out, .. } => assert_eq!(out, &vec![128, 3, 6, 8]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn underflow_is_config_error() {
        let cfg = NetworkConfig {
            input_dims: [8, 8, 8],
            ..NetworkConfig::paper()
        };
        match cfg.layers() {
            Err(Error::Config(msg)) => assert!(msg.contains("block"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(NetworkConfig {
            convs_per_block: 4,
            ..NetworkConfig::desk()
        }
        .layers()
        .is_err());
    }

    #[test]
    fn no_fc_variant_builds() {
        let cfg = NetworkConfig {
            fc_layout: vec![],
            ..NetworkConfig::desk()
        };
        let m = Model::new(cfg.clone(), 1).unwrap();
        let s = Volume::filled(cfg.input_dims, [0.5; 3], 0.3);
        assert!(m.score(&s).unwrap().is_finite());
    }

    #[test]
    fn zero_output_layer_scores_zero() {
        let cfg = NetworkConfig::desk();
        let mut m = Model::new(cfg.clone(), 3).unwrap();
        m.zero_output_layer();
        let s = Volume::zeros(cfg.input_dims, [0.5; 3]);
        assert_eq!(m.score(&s).unwrap(), 0.0);
    }

    #[test]
    fn score_is_deterministic() {
        let cfg = NetworkConfig::desk();
        let m = Model::new(cfg.clone(), 5).unwrap();
        let s = Volume::from_fn(cfg.input_dims, [0.5; 3], |x, y, z| ((x * 7 + y * 3 + z) % 11) as f32 / 11.0);
        assert_eq!(m.score(&s).unwrap().to_bits(), m.score(&s).unwrap().to_bits());
        assert_eq!(Model::new(cfg, 5).unwrap(), m);
    }

    #[test]
    fn wrong_dims_rejected() {
        let m = Model::new(NetworkConfig::desk(), 0).unwrap();
        assert!(matches!(m.score(&Volume::zeros([10, 10, 10], [1.0; 3])), Err(Error::Shape(_))));
    }
}
