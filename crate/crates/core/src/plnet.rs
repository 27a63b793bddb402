//! Small piecewise-linear feature extractor: affine, ReLU, and max-pool
//! layers. Within one activation pattern the whole network is a single
//! affine map, the pattern's region is a polytope of linear inequalities,
//! and both are computed exactly.

use crate::events::{EventTag, QuadIneq};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum PLNetError {
    #[error("layer {index}: expected input dim {expected}, got {got}")]
    DimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite weight in layer {0}")]
    NonFiniteWeight(usize),
    #[error("max-pool window {window} larger than layer input {len}")]
    PoolTooWide { window: usize, len: usize },
    #[error("activation pattern does not match the network shape")]
    PatternShapeMismatch,
    #[error("network serialization: {0}")]
    Serialization(String),
}

#[derive(Debug, Clone)]
pub enum Layer {
    Affine { weight: DMatrix<f64>, bias: DVector<f64> },
    Relu,
    MaxPool { window: usize, stride: usize },
}

/// Per-nonlinearity record of which linear piece the input landed in.
/// ReLU layers store one bool per unit (strictly positive pre-activation);
/// max-pool layers store the absolute argmax index per window, ties broken
/// by lowest index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub relu: Vec<Vec<bool>>,
    pub pool: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct PLNetwork {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

fn pool_output_len(len: usize, window: usize, stride: usize) -> Result<usize, PLNetError> {
    if window == 0 || stride == 0 || window > len {
        return Err(PLNetError::PoolTooWide { window, len });
    }
    Ok((len - window) / stride + 1)
}

impl PLNetwork {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, PLNetError> {
        let mut dim = input_dim;
        for (idx, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Affine { weight, bias } => {
                    if weight.ncols() != dim || bias.len() != weight.nrows() {
                        return Err(PLNetError::DimMismatch {
                            index: idx,
                            expected: dim,
                            got: weight.ncols(),
                        });
                    }
                    if weight.iter().any(|w| !w.is_finite())
                        || bias.iter().any(|b| !b.is_finite())
                    {
                        return Err(PLNetError::NonFiniteWeight(idx));
                    }
                    dim = weight.nrows();
                }
                Layer::Relu => {}
                Layer::MaxPool { window, stride } => {
                    dim = pool_output_len(dim, *window, *stride)?;
                }
            }
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass, recording the activation pattern.
    pub fn forward(&self, x: &DVector<f64>) -> Result<(DVector<f64>, ActivationPattern), PLNetError> {
        if x.len() != self.input_dim {
            return Err(PLNetError::DimMismatch {
                index: 0,
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut cur = x.clone();
        let mut pattern = ActivationPattern {
            relu: vec![],
            pool: vec![],
        };
        for layer in &self.layers {
            match layer {
                Layer::Affine { weight, bias } => cur = weight * &cur + bias,
                Layer::Relu => {
                    let mask: Vec<bool> = cur.iter().map(|&v| v > 0.0).collect();
                    for (v, &on) in cur.iter_mut().zip(&mask) {
                        if !on {
                            *v = 0.0;
                        }
                    }
                    pattern.relu.push(mask);
                }
                Layer::MaxPool { window, stride } => {
                    let out_len = pool_output_len(cur.len(), *window, *stride)?;
                    let mut argmax = Vec::with_capacity(out_len);
                    let mut pooled = DVector::zeros(out_len);
                    for o in 0..out_len {
                        let start = o * stride;
                        let mut best = start;
                        for j in start + 1..start + window {
                            if cur[j] > cur[best] {
                                best = j;
                            }
                        }
                        argmax.push(best);
                        pooled[o] = cur[best];
                    }
                    pattern.pool.push(argmax);
                    cur = pooled;
                }
            }
        }
        Ok((cur, pattern))
    }

    fn check_pattern(&self, pattern: &ActivationPattern) -> Result<(), PLNetError> {
        let n_relu = self.layers.iter().filter(|l| matches!(l, Layer::Relu)).count();
        let n_pool = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::MaxPool { .. }))
            .count();
        if pattern.relu.len() != n_relu || pattern.pool.len() != n_pool {
            return Err(PLNetError::PatternShapeMismatch);
        }
        Ok(())
    }

    /// The affine map (W, B) the network applies inside the given pattern's
    /// polytope: ReLU becomes a 0/1 diagonal mask, max-pool a row selection.
    pub fn affine_map(
        &self,
        pattern: &ActivationPattern,
    ) -> Result<(DMatrix<f64>, DVector<f64>), PLNetError> {
        self.check_pattern(pattern)?;
        let mut w = DMatrix::identity(self.input_dim, self.input_dim);
        let mut b = DVector::zeros(self.input_dim);
        let (mut i_relu, mut i_pool) = (0, 0);
        for layer in &self.layers {
            match layer {
                Layer::Affine { weight, bias } => {
                    b = weight * &b + bias;
                    w = weight * &w;
                }
                Layer::Relu => {
                    let mask = &pattern.relu[i_relu];
                    if mask.len() != w.nrows() {
                        return Err(PLNetError::PatternShapeMismatch);
                    }
                    for (row, &on) in mask.iter().enumerate() {
                        if !on {
                            w.row_mut(row).fill(0.0);
                            b[row] = 0.0;
                        }
                    }
                    i_relu += 1;
                }
                Layer::MaxPool { window, stride } => {
                    let argmax = &pattern.pool[i_pool];
                    let out_len = pool_output_len(w.nrows(), *window, *stride)?;
                    if argmax.len() != out_len
                        || argmax.iter().enumerate().any(|(o, &j)| {
                            j < o * stride || j >= o * stride + window || j >= w.nrows()
                        })
                    {
                        return Err(PLNetError::PatternShapeMismatch);
                    }
                    let mut w2 = DMatrix::zeros(out_len, w.ncols());
                    let mut b2 = DVector::zeros(out_len);
                    for (o, &j) in argmax.iter().enumerate() {
                        w2.row_mut(o).copy_from(&w.row(j));
                        b2[o] = b[j];
                    }
                    w = w2;
                    b = b2;
                    i_pool += 1;
                }
            }
        }
        Ok((w, b))
    }

    /// Linear inequalities c . x + c0 <= 0 carving out the pattern's
    /// polytope in input space.
    pub fn polytope_ineqs(
        &self,
        pattern: &ActivationPattern,
    ) -> Result<Vec<(DVector<f64>, f64)>, PLNetError> {
        self.check_pattern(pattern)?;
        let mut w = DMatrix::identity(self.input_dim, self.input_dim);
        let mut b = DVector::zeros(self.input_dim);
        let (mut i_relu, mut i_pool) = (0, 0);
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Affine { weight, bias } => {
                    b = weight * &b + bias;
                    w = weight * &w;
                }
                Layer::Relu => {
                    let mask = &pattern.relu[i_relu];
                    if mask.len() != w.nrows() {
                        return Err(PLNetError::PatternShapeMismatch);
                    }
                    for (row, &on) in mask.iter().enumerate() {
                        let c = w.row(row).transpose();
                        let c0 = b[row];
                        if on {
                            // pre-activation >= 0
                            out.push((-c, -c0));
                        } else {
                            out.push((c, c0));
                        }
                    }
                    for (row, &on) in mask.iter().enumerate() {
                        if !on {
                            w.row_mut(row).fill(0.0);
                            b[row] = 0.0;
                        }
                    }
                    i_relu += 1;
                }
                Layer::MaxPool { window, stride } => {
                    let argmax = &pattern.pool[i_pool];
                    let out_len = pool_output_len(w.nrows(), *window, *stride)?;
                    if argmax.len() != out_len {
                        return Err(PLNetError::PatternShapeMismatch);
                    }
                    for (o, &win) in argmax.iter().enumerate() {
                        let start = o * stride;
                        for j in start..start + window {
                            if j == win {
                                continue;
                            }
                            // loser <= winner
                            let c = (w.row(j) - w.row(win)).transpose();
                            out.push((c, b[j] - b[win]));
                        }
                    }
                    let mut w2 = DMatrix::zeros(out_len, w.ncols());
                    let mut b2 = DVector::zeros(out_len);
                    for (o, &j) in argmax.iter().enumerate() {
                        w2.row_mut(o).copy_from(&w.row(j));
                        b2[o] = b[j];
                    }
                    w = w2;
                    b = b2;
                    i_pool += 1;
                }
            }
        }
        Ok(out)
    }

    /// Random fully-connected network: affine layers at the given widths
    /// with a ReLU after each hidden affine, optionally a width-2 max-pool
    /// after the first ReLU.
    pub fn random_mlp<R: Rng>(
        rng: &mut R,
        dims: &[usize],
        with_pool: bool,
    ) -> Result<Self, PLNetError> {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let mut layers = Vec::new();
        // pooling shrinks the running width, so track it rather than trusting
        // dims[win] as the fan-in
        let mut cur = dims[0];
        for win in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (cur, dims[win + 1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let weight =
                DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-1.0..1.0) * scale);
            let bias = DVector::from_fn(fan_out, |_, _| rng.gen_range(-0.1..0.1));
            layers.push(Layer::Affine { weight, bias });
            cur = fan_out;
            if win + 2 < dims.len() {
                layers.push(Layer::Relu);
                if with_pool && win == 0 && fan_out >= 2 {
                    layers.push(Layer::MaxPool {
                        window: 2,
                        stride: 2,
                    });
                    cur = pool_output_len(fan_out, 2, 2)?;
                }
            }
        }
        Self::new(dims[0], layers)
    }

    pub fn to_json(&self) -> String {
        let ser = NetworkJson::from(self);
        serde_json::to_string_pretty(&ser).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, PLNetError> {
        let ser: NetworkJson =
            serde_json::from_str(s).map_err(|e| PLNetError::Serialization(e.to_string()))?;
        ser.build()
    }
}

/// Polytope constraints for every instance along the line, mapped to linear
/// inequalities in z: instance i travels offset_i + slope_i z, so
/// c . x + c0 <= 0 becomes (c . slope_i) z + (c . offset_i + c0) <= 0.
pub fn dnn_events(
    net: &PLNetwork,
    patterns: &[ActivationPattern],
    offsets: &[DVector<f64>],
    slopes: &[DVector<f64>],
) -> Result<Vec<QuadIneq>, PLNetError> {
    assert_eq!(patterns.len(), offsets.len());
    assert_eq!(patterns.len(), slopes.len());
    let mut out = Vec::new();
    for ((pattern, offset), slope) in patterns.iter().zip(offsets).zip(slopes) {
        for (c, c0) in net.polytope_ineqs(pattern)? {
            out.push(QuadIneq::new(
                0.0,
                c.dot(slope),
                c.dot(offset) + c0,
                EventTag::DnnPolytope,
            ));
        }
    }
    Ok(out)
}

// JSON wire format: layer list with row-major weight arrays.

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    input_dim: usize,
    layers: Vec<LayerJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerJson {
    Affine {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
}

impl From<&PLNetwork> for NetworkJson {
    fn from(net: &PLNetwork) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Affine { weight, bias } => LayerJson::Affine {
                    weight: (0..weight.nrows())
                        .map(|i| weight.row(i).iter().cloned().collect())
                        .collect(),
                    bias: bias.iter().cloned().collect(),
                },
                Layer::Relu => LayerJson::Relu,
                Layer::MaxPool { window, stride } => LayerJson::MaxPool {
                    window: *window,
                    stride: *stride,
                },
            })
            .collect();
        NetworkJson {
            input_dim: net.input_dim,
            layers,
        }
    }
}

impl NetworkJson {
    fn build(self) -> Result<PLNetwork, PLNetError> {
        let layers = self
            .layers
            .into_iter()
            .map(|l| match l {
                LayerJson::Affine { weight, bias } => {
                    let rows = weight.len();
                    let cols = weight.first().map_or(0, |r| r.len());
                    if weight.iter().any(|r| r.len() != cols) {
                        return Err(PLNetError::Serialization(
                            "ragged weight matrix".to_string(),
                        ));
                    }
                    let flat: Vec<f64> = weight.into_iter().flatten().collect();
                    Ok(Layer::Affine {
                        weight: DMatrix::from_row_slice(rows, cols, &flat),
                        bias: DVector::from_vec(bias),
                    })
                }
                LayerJson::Relu => Ok(Layer::Relu),
                LayerJson::MaxPool { window, stride } => Ok(Layer::MaxPool { window, stride }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        PLNetwork::new(self.input_dim, layers)
    }
}
