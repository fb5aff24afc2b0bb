//! Layers built on the autodiff tape, plus the Adam optimizer.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::rng::Rng;

pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn normal(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// `x W + b`, weights stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, input, output, bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, 1, output, bound)));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let bv = g.param(b);
                g.add_row(y, bv)
            }
            None => y,
        }
    }
}

/// Two-layer feed-forward network with a ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub hidden: Linear,
    pub output: Linear,
}

impl Ffn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Self {
        Ffn {
            hidden: Linear::new(store, &format!("{name}.0"), input, hidden, true, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden, output, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}

/// One GRU layer, one direction.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruLayer {
            w_input: store.add(
                format!("{name}.w_input"),
                uniform(rng, input, 3 * hidden, bound),
            ),
            w_hidden: store.add(
                format!("{name}.w_hidden"),
                uniform(rng, hidden, 3 * hidden, bound),
            ),
            b_input: store.add(
                format!("{name}.b_input"),
                uniform(rng, 1, 3 * hidden, bound),
            ),
            b_hidden: store.add(
                format!("{name}.b_hidden"),
                uniform(rng, 1, 3 * hidden, bound),
            ),
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let (wi, wh, bi, bh) = (
            g.param(self.w_input),
            g.param(self.w_hidden),
            g.param(self.b_input),
            g.param(self.b_hidden),
        );
        let gi = g.matmul(x, wi);
        let gi = g.add_row(gi, bi);
        let gh = g.matmul(h, wh);
        let gh = g.add_row(gh, bh);
        g.gru_cell(gi, gh, h)
    }

    /// Runs over `inputs` (forward or reversed order); padded positions
    /// (mask 0) carry the previous state unchanged. Outputs are in input order.
    pub fn run(
        &self,
        g: &mut Graph,
        inputs: &[Var],
        masks: &[Array2<f64>],
        reverse: bool,
    ) -> (Vec<Var>, Var) {
        let batch = g.value(inputs[0]).nrows();
        let mut h = g.constant(Array2::zeros((batch, self.hidden)));
        let mut outs = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let next = self.step(g, inputs[t], h);
            h = g.mask_blend(next, h, masks[t].clone());
            outs[t] = h;
        }
        (outs, h)
    }
}

/// Stacked bidirectional GRU.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub layers: Vec<(GruLayer, GruLayer)>,
    pub hidden: usize,
}

pub struct BiGruOutput {
    /// Per position, top layer `[forward; backward]`, width `2 * hidden`.
    pub states: Vec<Var>,
    /// Top layer `[final forward; final backward]`.
    pub final_state: Var,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    GruLayer::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    GruLayer::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        BiGru { layers, hidden }
    }

    pub fn forward(&self, g: &mut Graph, inputs: &[Var], masks: &[Array2<f64>]) -> BiGruOutput {
        let mut xs = inputs.to_vec();
        let mut final_state = None;
        for (fwd, bwd) in &self.layers {
            let (f_out, f_last) = fwd.run(g, &xs, masks, false);
            let (b_out, b_last) = bwd.run(g, &xs, masks, true);
            xs = f_out
                .iter()
                .zip(&b_out)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect();
            final_state = Some(g.concat(&[f_last, b_last]));
        }
        BiGruOutput {
            states: xs,
            final_state: final_state.expect("at least one layer"),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (id, g) in grads.iter() {
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let p = store.get_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}
