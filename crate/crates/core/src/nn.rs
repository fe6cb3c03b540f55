//! Fully connected networks, initialization, SGD with momentum and parameter accounting.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// What follows the last linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// No dedicated head: the last layer is activated like a hidden layer.
    None,
    Sigmoid,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, head: Head) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Spec(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Spec(format!("layer sizes must be positive: {layer_sizes:?}")));
        }
        Ok(MlpSpec {
            layer_sizes,
            activation: Activation::Relu,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// Widths of the activations between linear layers; these are the dropout sites.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<S> {
    /// `[in, out]`
    pub weight: Tensor<S>,
    /// `[out]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> LinearLayer<S> {
    /// Fan-in uniform initialization in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| S::lit(rng.random_range(-bound..=bound)))
            .collect();
        LinearLayer {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("linear shape"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

/// A multilayer perceptron: linear layers alternating with relu, then the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    spec: MlpSpec,
    layers: Vec<LinearLayer<S>>,
}

/// Parameters of an [`Mlp`] registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    params: Vec<(Var, Var)>,
}

impl<S: Scalar> Mlp<S> {
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| LinearLayer::init(w[0], w[1], rng))
            .collect();
        Mlp {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| LinearLayer::zeros(w[0], w[1]))
            .collect();
        Mlp {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LinearLayer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer<S>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Parameters in `w0, b0, w1, b1, ...` order.
    pub fn parameters(&self) -> Vec<&Tensor<S>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> BoundMlp {
        let params = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        BoundMlp { params }
    }

    /// Inference forward pass without dropout.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let out = bound.forward(&mut tape, &self.spec, input, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Dropout applied to the hidden activations of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HiddenDropout<'a, S> {
    /// One row mask per hidden layer, in layer order.
    pub masks: &'a [Tensor<S>],
    pub keep_prob: S,
}

impl BoundMlp {
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        spec: &MlpSpec,
        x: Var,
        dropout: Option<HiddenDropout<'_, S>>,
    ) -> Result<Var> {
        let xv = tape.value(x);
        if !xv.is_matrix() || xv.cols() != spec.input_dim() {
            return Err(Error::dim("mlp input", xv.shape(), &[spec.input_dim()]));
        }
        let hidden = spec.hidden_widths();
        if let Some(d) = dropout {
            if d.masks.len() != hidden.len() {
                return Err(Error::dim("dropout masks", hidden, &[d.masks.len()]));
            }
            for (m, &w) in d.masks.iter().zip(hidden) {
                if m.numel() != w {
                    return Err(Error::dim("dropout mask", &[w], m.shape()));
                }
            }
        }
        let last = self.params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = if i < last {
                let a = tape.relu(z);
                match dropout {
                    Some(d) => tape.dropout(a, &d.masks[i], d.keep_prob)?,
                    None => a,
                }
            } else {
                match spec.head {
                    Head::None => tape.relu(z),
                    Head::Sigmoid => tape.sigmoid(z),
                    Head::Logits => z,
                }
            };
        }
        Ok(h)
    }

    /// Parameter gradients in `w0, b0, w1, b1, ...` order; unreached parameters get zeros.
    pub fn gradients<S: Scalar>(&self, tape: &Tape<S>, grads: &Gradients<S>) -> Vec<Tensor<S>> {
        self.params
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .map(|v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect()
    }
}

/// SGD with heavy-ball momentum: `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdState<S> {
    pub learning_rate: S,
    pub momentum: S,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(learning_rate: S, momentum: S, params: &[&Tensor<S>]) -> Result<Self> {
        if !(learning_rate > S::zero()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(momentum >= S::zero() && momentum < S::one()) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn for_mlp(learning_rate: S, momentum: S, mlp: &Mlp<S>) -> Result<Self> {
        Self::new(learning_rate, momentum, &mlp.parameters())
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::dim(
                "sgd_step",
                &[params.len(), self.velocity.len()],
                &[grads.len()],
            ));
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::dim("sgd_step", p.shape(), g.shape()));
            }
            let (lr, mu) = (self.learning_rate, self.momentum);
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Shape of the adversarial head, for parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorArch {
    Single,
    /// One weight set evaluated under any number of dropout masks.
    Dropout,
    /// One independent discriminator per class.
    MultiHead(usize),
}

pub fn param_count(arch: DiscriminatorArch, disc_spec: &MlpSpec) -> Result<usize> {
    let single = disc_spec.param_count();
    match arch {
        DiscriminatorArch::Single | DiscriminatorArch::Dropout => Ok(single),
        DiscriminatorArch::MultiHead(0) => Err(Error::Parameter(
            "multi-head discriminator needs at least one class".into(),
        )),
        DiscriminatorArch::MultiHead(c) => Ok(c * single),
    }
}

/// Writes `name,index,value` rows for every parameter of the named networks.
pub fn write_params_csv<S: Scalar, W: Write>(out: W, nets: &[(&str, &Mlp<S>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "index", "value"])?;
    for (prefix, net) in nets {
        for (li, layer) in net.layers.iter().enumerate() {
            for (kind, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                let name = format!("{prefix}.{li}.{kind}");
                for (i, v) in t.data().iter().enumerate() {
                    w.write_record([name.as_str(), &i.to_string(), &v.as_f64().to_string()])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io("<params>", e))?;
    Ok(())
}

/// Parameter values keyed by tensor name, as read from a parameter CSV.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: BTreeMap<String, BTreeMap<usize, f64>>,
}

impl ParamStore {
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut values: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: &str| Error::Format {
                path: "<params>".into(),
                line,
                msg: msg.to_string(),
            };
            if rec.len() != 3 {
                return Err(bad("expected name,index,value"));
            }
            let index: usize = rec[1].trim().parse().map_err(|_| bad("bad index"))?;
            let value: f64 = rec[2].trim().parse().map_err(|_| bad("bad value"))?;
            values.entry(rec[0].trim().to_string()).or_default().insert(index, value);
        }
        Ok(ParamStore { values })
    }

    /// Rebuilds a network of the given spec from the tensors stored under `prefix`.
    pub fn load_mlp<S: Scalar>(&self, prefix: &str, spec: &MlpSpec) -> Result<Mlp<S>> {
        let mut net = Mlp::zeros(spec);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (kind, t) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let name = format!("{prefix}.{li}.{kind}");
                let stored = self
                    .values
                    .get(&name)
                    .ok_or_else(|| Error::Usage(format!("parameter {name} missing")))?;
                if stored.len() != t.numel() || stored.keys().next_back() != Some(&(t.numel() - 1)) {
                    return Err(Error::dim("load_mlp", t.shape(), &[stored.len()]));
                }
                for (slot, &v) in t.data_mut().iter_mut().zip(stored.values()) {
                    *slot = S::lit(v);
                }
            }
        }
        Ok(net)
    }
}
