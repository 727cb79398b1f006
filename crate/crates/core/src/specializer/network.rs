//! Small feed-forward network over a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// Layers `widths[0] → widths[1] → ... → widths[n]`; the activation is
/// applied after every layer except the last. With `residual` the
/// (normalized) input is added to the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    widths: Vec<usize>,
    pub(crate) params: Vec<f64>,
    activation: Activation,
    residual: bool,
    normalize_input: bool,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every layer; `layer_inputs[0]` is the (normalized) input.
    layer_inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Trace {
    pub fn input(&self) -> &[f64] {
        &self.layer_inputs[0]
    }
}

impl Network {
    pub fn zeros(
        widths: Vec<usize>,
        activation: Activation,
        residual: bool,
        normalize_input: bool,
    ) -> Self {
        assert!(
            widths.len() >= 2 && widths.iter().all(|&w| w > 0),
            "invalid widths"
        );
        assert!(
            !residual || widths[0] == widths[widths.len() - 1],
            "residual needs equal in/out width"
        );
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Network {
            widths,
            params: vec![0.0; n],
            activation,
            residual,
            normalize_input,
        }
    }

    /// Uniform(±1/sqrt(fan_in)) weights, zero biases. With `zero_output`
    /// the last layer starts at zero, which makes a residual network the
    /// identity map on normalized inputs.
    pub fn init<R: Rng>(&mut self, rng: &mut R, zero_output: bool) {
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (w, b) = self.ranges(l);
            let bound = 1.0 / (self.widths[l] as f64).sqrt();
            for p in &mut self.params[w] {
                *p = if zero_output && l == last {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                };
            }
            self.params[b].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn normalize_input(&self) -> bool {
        self.normalize_input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Row-major `out x in` weights and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.ranges(l);
        (&self.params[w], &self.params[b])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.ranges(l);
        let (head, tail) = self.params.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.len()])
    }

    fn ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset: usize = self.widths[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (input, output) = (self.widths[l], self.widths[l + 1]);
        let w = offset..offset + input * output;
        (w.clone(), w.end..w.end + output)
    }

    fn prepare_input(&self, x: &[f64]) -> Vec<f64> {
        if self.normalize_input {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                return x.iter().map(|v| v / n).collect();
            }
        }
        x.to_vec()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let input = self.prepare_input(x);
        let last = self.n_layers() - 1;
        let mut layer_inputs = Vec::with_capacity(self.n_layers());
        let mut h = input;
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * h.len()..(o + 1) * h.len()];
                *zo += row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>();
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            layer_inputs.push(h);
            h = z;
        }
        if self.residual {
            h.iter_mut()
                .zip(&layer_inputs[0])
                .for_each(|(o, i)| *o += i);
        }
        Trace {
            layer_inputs,
            output: h,
        }
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut g = grad_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (w_range, b_range) = self.ranges(l);
            let input = &trace.layer_inputs[l];
            let n_in = input.len();
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                let row = &mut grads[w_range.start + o * n_in..w_range.start + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(r, x)| *r += go * x);
                grads[b_range.start + o] += go;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_range];
            let mut g_in = vec![0.0; n_in];
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                g_in.iter_mut().zip(row).for_each(|(gi, r)| *gi += go * r);
            }
            // input of layer l is the activation output of layer l - 1
            for (gi, h) in g_in.iter_mut().zip(input) {
                *gi *= self.activation.derivative_from_output(*h);
            }
            g = g_in;
        }
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        self.params
            .iter_mut()
            .for_each(|p| *p = f64::from(*p as f32));
    }

    pub(crate) fn from_parts(
        widths: Vec<usize>,
        params: Vec<f64>,
        activation: Activation,
        residual: bool,
        normalize_input: bool,
    ) -> Option<Self> {
        let mut net = Network::zeros(widths, activation, residual, normalize_input);
        if params.len() != net.params.len() {
            return None;
        }
        net.params = params;
        Some(net)
    }
}
