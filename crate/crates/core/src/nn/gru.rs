use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{sigmoid, softmax, softmax_backward, Head, NnError};

/// Gated recurrent cell with a linear or softmax readout at every step.
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// y = head(Wo h' + bo)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruNet {
    input: usize,
    hidden: usize,
    output: usize,
    head: Head,
    params: Vec<f64>,
    generation: u64,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wn: usize,
    un: usize,
    bn: usize,
    wo: usize,
    bo: usize,
    end: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
    output: Vec<f64>,
}

/// Activations recorded by [`GruNet::forward_sequence`].
#[derive(Debug, Clone)]
pub struct GruForward {
    steps: Vec<StepCache>,
    generation: u64,
}

impl GruForward {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn output(&self, t: usize) -> &[f64] {
        &self.steps[t].output
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.output.clone()).collect()
    }
}

fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64]) {
    let cols = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o += m[j * cols..(j + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `grad_m += g x^T`, `grad_x += m^T g`.
fn matvec_backward(m: &[f64], x: &[f64], g: &[f64], grad_m: &mut [f64], grad_x: Option<&mut [f64]>) {
    let cols = x.len();
    for (j, gj) in g.iter().enumerate() {
        let row = &mut grad_m[j * cols..(j + 1) * cols];
        for (r, xi) in row.iter_mut().zip(x) {
            *r += gj * xi;
        }
    }
    if let Some(gx) = grad_x {
        for (j, gj) in g.iter().enumerate() {
            let row = &m[j * cols..(j + 1) * cols];
            for (o, w) in gx.iter_mut().zip(row) {
                *o += w * gj;
            }
        }
    }
}

impl GruNet {
    fn layout(input: usize, hidden: usize, output: usize) -> Layout {
        let (ih, hh) = (input * hidden, hidden * hidden);
        let wz = 0;
        let uz = wz + ih;
        let bz = uz + hh;
        let wr = bz + hidden;
        let ur = wr + ih;
        let br = ur + hh;
        let wn = br + hidden;
        let un = wn + ih;
        let bn = un + hh;
        let wo = bn + hidden;
        let bo = wo + output * hidden;
        Layout { wz, uz, bz, wr, ur, br, wn, un, bn, wo, bo, end: bo + output }
    }

    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        Self::layout(input, hidden, output).end
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, head: Head) -> Self {
        Self {
            input,
            hidden,
            output,
            head,
            params: vec![0.0; Self::param_count(input, hidden, output)],
            generation: 0,
        }
    }

    /// Uniform `±1/sqrt(hidden)` initialization.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output, head);
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        for p in &mut net.params {
            *p = dist.sample(rng);
        }
        net
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, head: Head, params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(input, hidden, output, head);
        if params.len() != net.params.len() {
            return Err(NnError::Shape { expected: net.params.len(), got: params.len() });
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    /// `gru:12-32-6:softmax`
    pub fn descriptor(&self) -> String {
        format!("gru:{}-{}-{}:{}", self.input, self.hidden, self.output, self.head.name())
    }

    pub fn from_descriptor(descriptor: &str) -> Result<Self, NnError> {
        let bad = || NnError::Descriptor(descriptor.to_string());
        let mut parts = descriptor.split(':');
        if parts.next() != Some("gru") {
            return Err(bad());
        }
        let sizes = parts
            .next()
            .ok_or_else(bad)?
            .split('-')
            .map(|s| s.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        let head = parts.next().ok_or_else(bad)?.parse::<Head>().map_err(|_| bad())?;
        match sizes[..] {
            [i, h, o] if parts.next().is_none() => Ok(Self::zeros(i, h, o, head)),
            _ => Err(bad()),
        }
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let l = Self::layout(self.input, self.hidden, self.output);
        let (i, h, o) = (self.input, self.hidden, self.output);
        let p = &self.params;
        vec![
            ("wz".into(), vec![h, i], &p[l.wz..l.uz]),
            ("uz".into(), vec![h, h], &p[l.uz..l.bz]),
            ("bz".into(), vec![h], &p[l.bz..l.wr]),
            ("wr".into(), vec![h, i], &p[l.wr..l.ur]),
            ("ur".into(), vec![h, h], &p[l.ur..l.br]),
            ("br".into(), vec![h], &p[l.br..l.wn]),
            ("wn".into(), vec![h, i], &p[l.wn..l.un]),
            ("un".into(), vec![h, h], &p[l.un..l.bn]),
            ("bn".into(), vec![h], &p[l.bn..l.wo]),
            ("wo".into(), vec![o, h], &p[l.wo..l.bo]),
            ("bo".into(), vec![o], &p[l.bo..l.end]),
        ]
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden]
    }

    fn cell(&self, x: &[f64], h_prev: &[f64]) -> StepCache {
        let l = Self::layout(self.input, self.hidden, self.output);
        let (i, h, o) = (self.input, self.hidden, self.output);
        let p = &self.params;

        let gate = |w: usize, u: usize, b: usize, state: &[f64]| {
            let mut a = p[b..b + h].to_vec();
            matvec_add(&mut a, &p[w..w + h * i], x);
            matvec_add(&mut a, &p[u..u + h * h], state);
            a
        };
        let z: Vec<f64> = gate(l.wz, l.uz, l.bz, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(l.wr, l.ur, l.br, h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = gate(l.wn, l.un, l.bn, &rh).into_iter().map(f64::tanh).collect();
        let h_new: Vec<f64> = (0..h).map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k]).collect();

        let mut logits = p[l.bo..l.bo + o].to_vec();
        matvec_add(&mut logits, &p[l.wo..l.wo + o * h], &h_new);
        let output = match self.head {
            Head::Linear => logits,
            Head::Softmax => softmax(&logits),
        };
        StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, n, rh, h: h_new, output }
    }

    /// One online step: returns the output and replaces `hidden` with the new state.
    pub fn step(&self, hidden: &mut Vec<f64>, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input {
            return Err(NnError::Shape { expected: self.input, got: x.len() });
        }
        let cache = self.cell(x, hidden);
        *hidden = cache.h;
        Ok(cache.output)
    }

    /// Runs the cell over a whole sequence from the zero state.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<GruForward, NnError> {
        let mut h = self.initial_hidden();
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.len() != self.input {
                return Err(NnError::Shape { expected: self.input, got: x.len() });
            }
            let cache = self.cell(x, &h);
            h.clone_from(&cache.h);
            steps.push(cache);
        }
        Ok(GruForward { steps, generation: self.generation })
    }

    /// Backpropagation through the whole recorded sequence. `grad_outputs[t]`
    /// is the gradient with respect to the step-`t` output (after the head).
    pub fn backward_sequence(&self, cache: &GruForward, grad_outputs: &[Vec<f64>], grads: &mut [f64]) -> Result<(), NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        if grad_outputs.len() != cache.steps.len() {
            return Err(NnError::Shape { expected: cache.steps.len(), got: grad_outputs.len() });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Shape { expected: self.params.len(), got: grads.len() });
        }
        let l = Self::layout(self.input, self.hidden, self.output);
        let (i, h, o) = (self.input, self.hidden, self.output);
        let p = &self.params;

        let mut dh_next = vec![0.0; h];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let g_out = &grad_outputs[t];
            if g_out.len() != o {
                return Err(NnError::Shape { expected: o, got: g_out.len() });
            }
            let dlogits = match self.head {
                Head::Linear => g_out.clone(),
                Head::Softmax => softmax_backward(&step.output, g_out),
            };
            let mut dh = dh_next.clone();
            for (k, g) in dlogits.iter().enumerate() {
                grads[l.bo + k] += g;
            }
            {
                let (head_w, _) = grads[l.wo..].split_at_mut(o * h);
                matvec_backward(&p[l.wo..l.wo + o * h], &step.h, &dlogits, head_w, Some(&mut dh));
            }

            let mut dh_prev: Vec<f64> = (0..h).map(|k| dh[k] * step.z[k]).collect();
            let da_n: Vec<f64> = (0..h).map(|k| dh[k] * (1.0 - step.z[k]) * (1.0 - step.n[k] * step.n[k])).collect();
            let da_z: Vec<f64> = (0..h)
                .map(|k| dh[k] * (step.h_prev[k] - step.n[k]) * step.z[k] * (1.0 - step.z[k]))
                .collect();

            let mut d_rh = vec![0.0; h];
            matvec_backward(&p[l.wn..l.wn + h * i], &step.x, &da_n, &mut grads[l.wn..l.wn + h * i], None);
            matvec_backward(&p[l.un..l.un + h * h], &step.rh, &da_n, &mut grads[l.un..l.un + h * h], Some(&mut d_rh));
            for k in 0..h {
                grads[l.bn + k] += da_n[k];
            }
            let da_r: Vec<f64> = (0..h)
                .map(|k| d_rh[k] * step.h_prev[k] * step.r[k] * (1.0 - step.r[k]))
                .collect();
            for k in 0..h {
                dh_prev[k] += d_rh[k] * step.r[k];
            }

            for (w, u, b, da) in [(l.wz, l.uz, l.bz, &da_z), (l.wr, l.ur, l.br, &da_r)] {
                matvec_backward(&p[w..w + h * i], &step.x, da, &mut grads[w..w + h * i], None);
                matvec_backward(&p[u..u + h * h], &step.h_prev, da, &mut grads[u..u + h * h], Some(&mut dh_prev));
                for k in 0..h {
                    grads[b + k] += da[k];
                }
            }
            dh_next = dh_prev;
        }
        Ok(())
    }
}
