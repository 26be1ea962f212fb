use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{softmax, softmax_backward, Head, NnError};

/// Fully connected network with ReLU hidden layers. All parameters live in
/// one flat vector: for each layer the row-major `out x in` weight matrix,
/// then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    offsets: Vec<usize>,
    generation: u64,
}

/// Activations recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct DenseForward {
    /// Input followed by each layer's post-activation output; the last entry
    /// holds the logits.
    activations: Vec<Vec<f64>>,
    output: Vec<f64>,
    generation: u64,
}

impl DenseForward {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn logits(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }
}

impl DenseNet {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layout(sizes: &[usize]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for w in sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        offsets.push(at);
        offsets
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; Self::param_count(sizes)],
            offsets: Self::layout(sizes),
            generation: 0,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, head);
        for l in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).unwrap();
            let (start, end) = (net.offsets[l], net.offsets[l + 1]);
            for p in &mut net.params[start..end] {
                *p = dist.sample(rng);
            }
        }
        net
    }

    pub fn from_params(sizes: &[usize], head: Head, params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, head);
        if params.len() != net.params.len() {
            return Err(NnError::Shape { expected: net.params.len(), got: params.len() });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    /// `dense:7-64-64-6:softmax`
    pub fn descriptor(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        format!("dense:{}:{}", sizes.join("-"), self.head.name())
    }

    pub fn from_descriptor(descriptor: &str) -> Result<Self, NnError> {
        let bad = || NnError::Descriptor(descriptor.to_string());
        let mut parts = descriptor.split(':');
        if parts.next() != Some("dense") {
            return Err(bad());
        }
        let sizes = parts
            .next()
            .ok_or_else(bad)?
            .split('-')
            .map(|s| s.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        let head = parts.next().ok_or_else(bad)?.parse::<Head>().map_err(|_| bad())?;
        if sizes.len() < 2 || parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self::zeros(&sizes, head))
    }

    /// Per-layer `(suffix, shape, values)` blocks, row-major.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.offsets[l];
            let b = w + n_in * n_out;
            out.push((format!("l{l}.weight"), vec![n_out, n_in], &self.params[w..b]));
            out.push((format!("l{l}.bias"), vec![n_out], &self.params[b..b + n_out]));
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Result<DenseForward, NnError> {
        if input.len() != self.sizes[0] {
            return Err(NnError::Shape { expected: self.sizes[0], got: input.len() });
        }
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let x = activations.last().unwrap();
            let hidden = l + 1 < layers;
            let y: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            activations.push(y);
        }
        let logits = activations.last().unwrap();
        let output = match self.head {
            Head::Linear => logits.clone(),
            Head::Softmax => softmax(logits),
        };
        Ok(DenseForward { activations, output, generation: self.generation })
    }

    /// Output for one input; panics on a shape mismatch.
    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).expect("input size").into_output()
    }

    /// Pre-head outputs.
    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut fwd = self.forward(input).expect("input size");
        fwd.activations.pop().unwrap()
    }

    /// Reverse pass for a gradient with respect to the output. Parameter
    /// gradients are added into `grads`; the input gradient is returned.
    pub fn backward(&self, cache: &DenseForward, grad_output: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        if grad_output.len() != self.output_size() {
            return Err(NnError::Shape { expected: self.output_size(), got: grad_output.len() });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Shape { expected: self.params.len(), got: grads.len() });
        }
        let g = match self.head {
            Head::Linear => grad_output.to_vec(),
            Head::Softmax => softmax_backward(&cache.output, grad_output),
        };
        Ok(self.backward_logits(cache, g, grads))
    }

    /// Reverse pass starting from a gradient with respect to the logits.
    pub fn backward_from_logits(&self, cache: &DenseForward, grad_logits: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        Ok(self.backward_logits(cache, grad_logits.to_vec(), grads))
    }

    fn backward_logits(&self, cache: &DenseForward, mut g: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.offsets[l];
            let b_off = w_off + n_in * n_out;
            let x = &cache.activations[l];
            let mut g_in = vec![0.0; n_in];
            for j in 0..n_out {
                let gj = g[j];
                if gj == 0.0 {
                    continue;
                }
                grads[b_off + j] += gj;
                let row = w_off + j * n_in;
                let w_row = &self.params[row..row + n_in];
                let dw_row = &mut grads[row..row + n_in];
                for i in 0..n_in {
                    dw_row[i] += gj * x[i];
                    g_in[i] += w_row[i] * gj;
                }
            }
            if l > 0 {
                for (gi, xi) in g_in.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        g
    }
}
