//! The noise-prediction network `ε_θ(x_t, t)`.
//!
//! Layout: the sinusoidal embedding of `t` goes through a two-layer MLP
//! (linear, swish, linear). Its output is concatenated with `x_t` and fed to
//! five linear layers with swish between them; the last layer maps back to
//! the data dimension.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{sinusoidal_embedding, GradError, Matrix, Tape, Var};

use super::DiffusionError;

pub const DEFAULT_TIME_EMBED_DIM: usize = 128;
pub const DEFAULT_TIME_HIDDEN: usize = 1024;
pub const DEFAULT_HIDDEN: usize = 1024;
/// Linear layers in the main trunk.
pub const TRUNK_LAYERS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub data_dim: usize,
    /// Width of the raw sinusoidal embedding and of the time-MLP output.
    pub time_embed_dim: usize,
    pub time_hidden: usize,
    /// Widths of the four hidden trunk activations.
    pub hidden: Vec<usize>,
}

impl NetConfig {
    pub fn new(data_dim: usize) -> Self {
        Self {
            data_dim,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
            time_hidden: DEFAULT_TIME_HIDDEN,
            hidden: vec![DEFAULT_HIDDEN; TRUNK_LAYERS - 1],
        }
    }

    /// Same topology with every width scaled down, for desk-scale runs.
    pub fn compact(data_dim: usize, width: usize, time_embed_dim: usize) -> Self {
        Self {
            data_dim,
            time_embed_dim,
            time_hidden: width,
            hidden: vec![width; TRUNK_LAYERS - 1],
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.data_dim == 0 {
            return Err(DiffusionError::Config("data_dim must be positive".into()));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(DiffusionError::Config(
                "time_embed_dim must be even and at least 2".into(),
            ));
        }
        if self.time_hidden == 0 || self.hidden.contains(&0) {
            return Err(DiffusionError::Config(
                "layer widths must be positive".into(),
            ));
        }
        if self.hidden.len() != TRUNK_LAYERS - 1 {
            return Err(DiffusionError::Config(format!(
                "expected {} hidden widths, got {}",
                TRUNK_LAYERS - 1,
                self.hidden.len()
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer in declared order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![
            (self.time_embed_dim, self.time_hidden),
            (self.time_hidden, self.time_embed_dim),
        ];
        let mut prev = self.data_dim + self.time_embed_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.data_dim));
        dims
    }

    pub fn layer_names() -> Vec<String> {
        let mut names = vec!["time.0".to_string(), "time.1".to_string()];
        names.extend((0..TRUNK_LAYERS).map(|i| format!("trunk.{i}")));
        names
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in × fan_out`.
    pub weight: Matrix,
    /// `1 × fan_out`.
    pub bias: Matrix,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        let bias = Matrix::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        trainable: bool,
    ) -> Result<Var, GradError> {
        let (w, b) = if trainable {
            (tape.param(&self.weight), tape.param(&self.bias))
        } else {
            (
                tape.constant_ref(&self.weight),
                tape.constant_ref(&self.bias),
            )
        };
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

/// Whether parameters are differentiated when recording a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

/// Anything that predicts the injected noise and can be differentiated with
/// respect to its input.
pub trait Denoiser: Sync {
    fn data_dim(&self) -> usize;

    /// Records `ε(x, t)` on `tape`. Every row of `x` uses the step at the
    /// same position in `steps`.
    fn record_eps<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        steps: &[usize],
    ) -> Result<Var, GradError>;

    /// Untaped evaluation; identical arithmetic to [`Denoiser::record_eps`].
    fn predict_eps(&self, x: &Matrix, steps: &[usize]) -> Result<Matrix, GradError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.record_eps(&mut tape, xv, steps)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DenoiserNet {
    config: NetConfig,
    /// Time MLP (2 layers) followed by the trunk (5 layers).
    layers: Vec<Linear>,
    #[serde(skip)]
    forward_rows: AtomicU64,
}

impl Clone for DenoiserNet {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self.layers.clone(),
            forward_rows: AtomicU64::new(0),
        }
    }
}

impl PartialEq for DenoiserNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

impl DenoiserNet {
    /// Uniform `±1/√fan_in` initialization from `seed`.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear::init(i, o, &mut rng))
            .collect();
        Ok(Self {
            config,
            layers,
            forward_rows: AtomicU64::new(0),
        })
    }

    /// Rebuilds a network from stored layers, checking every shape.
    pub fn from_layers(config: NetConfig, layers: Vec<Linear>) -> Result<Self, DiffusionError> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(DiffusionError::Config(format!(
                "expected {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (i, ((fi, fo), l)) in dims.iter().zip(&layers).enumerate() {
            if l.weight.shape() != (*fi, *fo) || l.bias.shape() != (1, *fo) {
                return Err(DiffusionError::Config(format!(
                    "layer {i}: expected weight {fi}x{fo}, got {:?}",
                    l.weight.shape()
                )));
            }
        }
        Ok(Self {
            config,
            layers,
            forward_rows: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Parameters in declared order: for each layer, weight then bias.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data().len()).sum()
    }

    /// Total rows pushed through a forward pass since construction.
    pub fn forward_rows(&self) -> u64 {
        self.forward_rows.load(Ordering::Relaxed)
    }

    /// Records a forward pass. With [`ParamMode::Trainable`] the parameters
    /// are registered (in declared order) so the backward pass returns their
    /// gradients.
    pub fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        steps: &[usize],
        mode: ParamMode,
    ) -> Result<Var, GradError> {
        let rows = tape.value(x).rows();
        if steps.len() != rows {
            return Err(GradError::Shape {
                op: "denoiser timesteps",
                lhs: (rows, self.config.data_dim),
                rhs: (steps.len(), 1),
            });
        }
        if tape.value(x).cols() != self.config.data_dim {
            return Err(GradError::Shape {
                op: "denoiser input",
                lhs: tape.value(x).shape(),
                rhs: (rows, self.config.data_dim),
            });
        }
        self.forward_rows.fetch_add(rows as u64, Ordering::Relaxed);
        let trainable = mode == ParamMode::Trainable;

        let emb = tape.constant(sinusoidal_embedding(steps, self.config.time_embed_dim));
        let h = self.layers[0].record(tape, emb, trainable)?;
        let h = tape.swish(h)?;
        let temb = self.layers[1].record(tape, h, trainable)?;

        let mut h = tape.concat_cols(x, temb)?;
        let trunk = &self.layers[2..];
        for (i, layer) in trunk.iter().enumerate() {
            h = layer.record(tape, h, trainable)?;
            if i + 1 < trunk.len() {
                h = tape.swish(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass on a fresh tape with trainable parameters, ready for
    /// `tape.backward(output, adjoint)`.
    pub fn forward_record(&self, x: &Matrix, steps: &[usize]) -> Result<Recorded<'_>, GradError> {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let output = self.record(&mut tape, input, steps, ParamMode::Trainable)?;
        Ok(Recorded {
            tape,
            input,
            output,
        })
    }
}

/// A recorded forward pass.
pub struct Recorded<'a> {
    pub tape: Tape<'a>,
    pub input: Var,
    pub output: Var,
}

impl Recorded<'_> {
    pub fn output(&self) -> &Matrix {
        self.tape.value(self.output)
    }
}

impl Denoiser for DenoiserNet {
    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn record_eps<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: Var,
        steps: &[usize],
    ) -> Result<Var, GradError> {
        self.record(tape, x, steps, ParamMode::Frozen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(d: usize) -> DenoiserNet {
        DenoiserNet::init(NetConfig::compact(d, 8, 4), 7).unwrap()
    }

    #[test]
    fn shapes_and_param_order() {
        let net = tiny(3);
        let dims = net.config().layer_dims();
        assert_eq!(dims.len(), 2 + TRUNK_LAYERS);
        assert_eq!(dims[2].0, 3 + 4);
        assert_eq!(dims.last().unwrap().1, 3);
        assert_eq!(net.params().len(), 2 * dims.len());
        let x = Matrix::from_fn(5, 3, |r, c| (r + c) as f64 * 0.1);
        let eps = net.predict_eps(&x, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(eps.shape(), (5, 3));
        assert!(eps.is_finite());
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = tiny(2);
        let b = tiny(2);
        assert_eq!(a, b);
        for (l, (fi, _)) in a.layers().iter().zip(a.config().layer_dims()) {
            let bound = 1.0 / (fi as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
        }
        let c = DenoiserNet::init(NetConfig::compact(2, 8, 4), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn wrong_input_width_is_reported() {
        let net = tiny(3);
        let err = net.predict_eps(&Matrix::zeros(1, 2), &[1]).unwrap_err();
        assert!(err.to_string().contains("denoiser input"));
        let err = net.predict_eps(&Matrix::zeros(2, 3), &[1]).unwrap_err();
        assert!(err.to_string().contains("timesteps"));
    }

    #[test]
    fn recorded_matches_untaped_bit_for_bit() {
        let net = tiny(2);
        let x = Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.5]]).unwrap();
        let rec = net.forward_record(&x, &[10, 20]).unwrap();
        let plain = net.predict_eps(&x, &[10, 20]).unwrap();
        assert_eq!(rec.output(), &plain);
    }

    #[test]
    fn from_layers_checks_shapes() {
        let net = tiny(2);
        let mut layers = net.layers().to_vec();
        assert!(DenoiserNet::from_layers(net.config().clone(), layers.clone()).is_ok());
        layers[3].bias = Matrix::zeros(1, 1);
        assert!(DenoiserNet::from_layers(net.config().clone(), layers).is_err());
    }
}
