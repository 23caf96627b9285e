// SPDX-License-Identifier: Apache-2.0

//! Two-layer perceptron whose weights live on crossbar pairs.
//!
//! Each layer keeps its weights as a `(inputs + 1) x outputs` matrix, row
//! major by input; the extra last row multiplies a constant 1 (bias). The
//! hidden layer uses a configurable activation, the output layer softmax
//! with cross-entropy loss.

use serde::{Deserialize, Serialize};

use super::crossbar::CrossbarPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn slope(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub hidden: CrossbarPair,
    pub output: CrossbarPair,
    pub activation: Activation,
}

/// Layer values of one forward pass. `input` and `hidden` carry the
/// trailing bias entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Activations {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

/// Per-layer update signals. For each layer the outer product
/// `x_i * delta_j` is the negative loss gradient of weight `(i, j)`, so a
/// descent step is `W += lr * x * delta`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Deltas {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn affine(pair: &CrossbarPair, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let cols = pair.cols();
    let w = pair.weights();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

fn softmax(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

impl Network {
    pub fn new(hidden: CrossbarPair, output: CrossbarPair, activation: Activation) -> Result<Self> {
        if output.rows() != hidden.cols() + 1 {
            return Err(Error::Shape(format!(
                "output layer expects {} inputs, hidden layer gives {}",
                output.rows() - 1,
                hidden.cols()
            )));
        }
        Ok(Network {
            hidden,
            output,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.hidden.rows() - 1
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden.cols()
    }

    pub fn outputs(&self) -> usize {
        self.output.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        let mut acts = Activations::default();
        self.forward_into(x, &mut acts)?;
        Ok(acts)
    }

    /// Forward pass reusing the buffers in `acts`.
    pub fn forward_into(&self, x: &[f64], acts: &mut Activations) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::Shape(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.inputs()
            )));
        }
        let (h, k) = (self.hidden_units(), self.outputs());
        acts.input.clear();
        acts.input.extend_from_slice(x);
        acts.input.push(1.0);
        acts.hidden_pre.resize(h, 0.0);
        affine(&self.hidden, &acts.input, &mut acts.hidden_pre);
        acts.hidden.clear();
        acts.hidden
            .extend(acts.hidden_pre.iter().map(|&z| self.activation.apply(z)));
        acts.hidden.push(1.0);
        acts.logits.resize(k, 0.0);
        affine(&self.output, &acts.hidden, &mut acts.logits);
        acts.output.resize(k, 0.0);
        softmax(&acts.logits, &mut acts.output);
        Ok(())
    }

    /// Error signals of the cross-entropy loss for class `target`.
    pub fn backward(&self, acts: &Activations, target: usize) -> Result<Deltas> {
        let mut d = Deltas::default();
        self.backward_into(acts, target, &mut d)?;
        Ok(d)
    }

    pub fn backward_into(&self, acts: &Activations, target: usize, d: &mut Deltas) -> Result<()> {
        let (h, k) = (self.hidden_units(), self.outputs());
        if target >= k {
            return Err(Error::Shape(format!(
                "target class {target} outside 0..{k}"
            )));
        }
        if acts.output.len() != k || acts.hidden.len() != h + 1 {
            return Err(Error::Shape(
                "activations do not belong to this network".into(),
            ));
        }
        d.output.clear();
        d.output.extend(
            acts.output
                .iter()
                .enumerate()
                .map(|(j, &p)| if j == target { 1.0 - p } else { -p }),
        );
        d.hidden.resize(h, 0.0);
        let w = self.output.weights();
        for i in 0..h {
            let row = &w[i * k..(i + 1) * k];
            let back: f64 = row.iter().zip(&d.output).map(|(a, b)| a * b).sum();
            d.hidden[i] = back * self.activation.slope(acts.hidden_pre[i], acts.hidden[i]);
        }
        Ok(())
    }

    /// Cross-entropy loss of one sample.
    pub fn loss(&self, x: &[f64], target: usize) -> Result<f64> {
        let acts = self.forward(x)?;
        Ok(-acts.output[target].max(f64::MIN_POSITIVE).ln())
    }

    pub fn predict(&self, x: &[f64], acts: &mut Activations) -> Result<usize> {
        self.forward_into(x, acts)?;
        Ok(argmax(&acts.output))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::crossbar::CrossbarPair;

    fn toy(seed: u64) -> Network {
        let hidden = CrossbarPair::random(7, 4, 1.0, 0.8, seed).unwrap();
        let output = CrossbarPair::random(5, 3, 1.0, 0.8, seed + 1).unwrap();
        Network::new(hidden, output, Activation::Sigmoid).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let net = Network::new(
            CrossbarPair::zeros(785, 16, 1.0).unwrap(),
            CrossbarPair::zeros(17, 10, 1.0).unwrap(),
            Activation::Sigmoid,
        )
        .unwrap();
        let acts = net.forward(&vec![0.5; 784]).unwrap();
        for p in acts.output {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_normalizes() {
        let net = toy(3);
        let acts = net.forward(&[0.1, 0.9, 0.0, 0.3, 1.0, 0.5]).unwrap();
        let s: f64 = acts.output.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let net = toy(3);
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::Shape(_))));
        let acts = net.forward(&[0.0; 6]).unwrap();
        assert!(matches!(net.backward(&acts, 3), Err(Error::Shape(_))));
    }

    fn pick(n: &mut Network, layer: usize) -> &mut CrossbarPair {
        if layer == 0 {
            &mut n.hidden
        } else {
            &mut n.output
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradient_matches_central_difference() {
        for activation in [Activation::Sigmoid, Activation::Tanh] {
            let mut net = toy(11);
            net.activation = activation;
            let x = [0.2, 0.7, 0.0, 0.9, 0.4, 1.0];
            let target = 2;
            let acts = net.forward(&x).unwrap();
            let d = net.backward(&acts, target).unwrap();
            let h = 1e-6;
            for layer in 0..2 {
                let (xs, ds, rows, cols) = if layer == 0 {
                    (&acts.input, &d.hidden, 7, 4)
                } else {
                    (&acts.hidden, &d.output, 5, 3)
                };
                for i in 0..rows {
                    for j in 0..cols {
                        let analytic = -xs[i] * ds[j];
                        let mut plus = net.clone();
                        let mut minus = net.clone();
                        let w0 = pick(&mut plus, layer).weights()[i * cols + j];
                        pick(&mut plus, layer).set_weight(i, j, w0 + h);
                        pick(&mut minus, layer).set_weight(i, j, w0 - h);
                        let numeric = (plus.loss(&x, target).unwrap()
                            - minus.loss(&x, target).unwrap())
                            / (2.0 * h);
                        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                        assert!(
                            (analytic - numeric).abs() / scale < 1e-4
                                || (analytic - numeric).abs() < 1e-9,
                            "layer {layer} ({i},{j}): {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_small_error() {
        let mut net = toy(5);
        for j in 0..3 {
            net.output.set_weight(4, j, if j == 1 { 1.0 } else { -1.0 });
        }
        let acts = net.forward(&[0.0; 6]).unwrap();
        let d = net.backward(&acts, 1).unwrap();
        let total: f64 = d.output.iter().sum();
        assert!(total.abs() < 1e-12);
        assert!(d.output[1] > 0.0);
    }
}
