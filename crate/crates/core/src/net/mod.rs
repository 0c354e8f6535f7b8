//! The saliency network: configuration, parameter store, architecture and
//! parameter/FLOPs accounting.

mod arch;
mod backend;
mod config;
mod params;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arch::{fc2d, inverted_residual, is_fc2d_param, network, skip_reduce};
pub use backend::{Backend, BnObservation, ConvLayer, Eager, Graph, LayerCost, Shapes};
pub use config::{ModelConfig, SkipMode, StageConfig};
pub use params::{Param, ParamStore};

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::ops::norm::{update_running_stats, BnMode};
use crate::real::Real;
use crate::tensor::Tensor;

/// Built network: its configuration and every named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Per-layer and total cost of one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_size: (usize, usize),
    pub rows: Vec<LayerCost>,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

impl CostReport {
    pub fn from_rows(input_size: (usize, usize), rows: Vec<LayerCost>) -> Self {
        Self {
            input_size,
            params: rows.iter().map(|r| r.params).sum(),
            macs: rows.iter().map(|r| r.macs).sum(),
            flops: rows.iter().map(|r| r.flops).sum(),
            rows,
        }
    }
}

/// Result of recording a forward pass on a tape.
pub struct GraphPass<T> {
    pub output: Var,
    /// Tape leaf of every parameter the pass used.
    pub params: BTreeMap<String, Var>,
    pub observed: Vec<BnObservation<T>>,
}

/// Builds a model with seeded Kaiming-uniform weights.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    Model::build(config, seed)
}

impl<T: Real> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut walk = Shapes::<T>::declare(ChaCha8Rng::seed_from_u64(seed));
        network(config, &mut walk, &arch::input_shape(config, 1))?;
        Ok(Self {
            config: config.clone(),
            params: walk.into_params().expect("declaring walk owns its store"),
        })
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let s = images.shape();
        let (h, w) = self.config.input_size;
        if s.len() != 4 || s[1] != 3 || s[2] != h || s[3] != w {
            return Err(shape_err(
                "forward",
                format!("images {s:?} do not match the configured N x 3 x {h} x {w}; resize first"),
            ));
        }
        Ok(())
    }

    /// Inference pass, `[N,3,H,W]` to `[N,1,H,W]` densities.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(images)?;
        network(&self.config, &mut Eager { params: &self.params }, images)
    }

    /// Records a forward pass for differentiation.
    pub fn forward_graph(&self, tape: &mut Tape<T>, images: &Tensor<T>, mode: BnMode) -> Result<GraphPass<T>> {
        self.check_input(images)?;
        let mut g = Graph::new(tape, &self.params, mode);
        let x = g.tape.leaf(images.clone(), false);
        let output = network(&self.config, &mut g, &x)?;
        Ok(GraphPass {
            output,
            params: g.vars,
            observed: g.observed,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, observed: &[BnObservation<T>]) -> Result<()> {
        for o in observed {
            let mean = format!("{}.bn.running_mean", o.layer);
            let var = format!("{}.bn.running_var", o.layer);
            let mut rm = self.params.get(&mean)?.clone();
            let mut rv = self.params.get(&var)?.clone();
            update_running_stats(&mut rm, &mut rv, &o.saved, o.count);
            *self.params.get_mut(&mean)? = rm;
            *self.params.get_mut(&var)? = rv;
        }
        Ok(())
    }

    /// Number of trainable scalars; batchnorm running statistics excluded.
    pub fn count_params(&self) -> usize {
        self.params.trainable_count()
    }

    /// Trainable scalars in the fc2d branch.
    pub fn fc2d_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable && is_fc2d_param(&p.name))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Per-layer accounting for one image of the given size.
    pub fn cost(&self, input_size: (usize, usize)) -> Result<CostReport> {
        let mut walk = Shapes::check(&self.params);
        let mut cfg = self.config.clone();
        cfg.input_size = input_size;
        cfg.fc_grid = cfg.bottleneck_size();
        cfg.validate()?;
        network(&cfg, &mut walk, &arch::input_shape(&cfg, 1))?;
        Ok(CostReport::from_rows(input_size, walk.rows))
    }

    /// `(macs, flops)` of one forward pass.
    pub fn count_flops(&self, input_size: (usize, usize)) -> Result<(u64, u64)> {
        let c = self.cost(input_size)?;
        Ok((c.macs, c.flops))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_cost() {
        let mut walk = Shapes::<f32>::declare(ChaCha8Rng::seed_from_u64(0));
        let x = alloc::vec![1, 16, 10, 10];
        walk.conv("c", &x, ConvLayer::new(8, 3).bias(true)).unwrap();
        let c = CostReport::from_rows((10, 10), walk.rows);
        assert_eq!(c.params, 3 * 3 * 16 * 8 + 8);
        assert_eq!(c.macs, (3 * 3 * 16 * 8 * 100) as u64);
        assert_eq!(c.flops, 2 * c.macs);
    }

    #[test]
    fn empty_cost_is_zero() {
        let c = CostReport::from_rows((240, 240), Vec::new());
        assert_eq!((c.macs, c.flops, c.params), (0, 0, 0));
    }

    #[test]
    fn rows_sum_to_store_count() {
        let m = Model::<f32>::build(&ModelConfig::default(), 1).unwrap();
        let c = m.cost((240, 240)).unwrap();
        assert_eq!(c.params, m.count_params());
    }
}
