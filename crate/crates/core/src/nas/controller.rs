use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::NasError;

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    start: usize,
    w_x: usize,
    w_h: usize,
    bias: usize,
    /// Embedding tables for the actions of steps `0..steps-1`.
    embed: Vec<usize>,
    head_w: Vec<usize>,
    head_b: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(choices: &[usize], h: usize) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let start = take(h);
        let w_x = take(h * h);
        let w_h = take(h * h);
        let bias = take(h);
        let embed = choices[..choices.len() - 1].iter().map(|&n| take(n * h)).collect();
        let head_w = choices.iter().map(|&n| take(n * h)).collect();
        let head_b = choices.iter().map(|&n| take(n)).collect();
        Self {
            start,
            w_x,
            w_h,
            bias,
            embed,
            head_w,
            head_b,
            len: next,
        }
    }
}

/// Recurrent policy: `h_t = tanh(W_x x_t + W_h h_{t-1} + bias)` with `x_0`
/// a learned start vector and `x_t` the embedding of action `t-1`; step `t`
/// samples from `softmax(V_t h_t + c_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    choices: Vec<usize>,
    hidden: usize,
    layout: Layout,
    params: Vec<f64>,
}

/// One sampled decision sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

/// A decision sequence to reinforce. Steps with `trained[t] == false` were
/// forced and only contribute through the recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub trained: Vec<bool>,
    pub advantage: f64,
}

struct Trace {
    xs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl ControllerState {
    /// All weights zero: every head starts uniform.
    pub fn zeros(choices: &[usize], hidden: usize) -> Result<Self, NasError> {
        if choices.is_empty() || choices.contains(&0) || hidden == 0 {
            return Err(NasError::Shape(format!(
                "choices {choices:?} with hidden width {hidden}"
            )));
        }
        let layout = Layout::new(choices, hidden);
        Ok(Self {
            choices: choices.to_vec(),
            hidden,
            params: vec![0.0; layout.len],
            layout,
        })
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random(choices: &[usize], hidden: usize, scale: f64, rng: &mut impl Rng) -> Result<Self, NasError> {
        let mut s = Self::zeros(choices, hidden)?;
        if scale > 0.0 {
            s.params.iter_mut().for_each(|p| *p = rng.gen_range(-scale..=scale));
        }
        Ok(s)
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_actions(&self, actions: &[usize]) -> Result<(), NasError> {
        if actions.len() > self.choices.len() {
            return Err(NasError::Shape(format!(
                "{} actions for {} decisions",
                actions.len(),
                self.choices.len()
            )));
        }
        for (t, (&a, &n)) in actions.iter().zip(&self.choices).enumerate() {
            if a >= n {
                return Err(NasError::Shape(format!("action {a} at step {t} exceeds {n} choices")));
            }
        }
        Ok(())
    }

    fn step(&self, t: usize, h_prev: &[f64], prev_action: Option<usize>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h, l, p) = (self.hidden, &self.layout, &self.params);
        let x: Vec<f64> = match prev_action {
            None => p[l.start..l.start + h].to_vec(),
            Some(a) => {
                let at = l.embed[t - 1] + a * h;
                p[at..at + h].to_vec()
            }
        };
        let state: Vec<f64> = (0..h)
            .map(|i| {
                let wx = &p[l.w_x + i * h..l.w_x + (i + 1) * h];
                let wh = &p[l.w_h + i * h..l.w_h + (i + 1) * h];
                let z = p[l.bias + i]
                    + wx.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>()
                    + wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
                z.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.choices[t])
            .map(|k| {
                let row = &p[l.head_w[t] + k * h..l.head_w[t] + (k + 1) * h];
                p[l.head_b[t] + k] + row.iter().zip(&state).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        (x, state, softmax(&logits))
    }

    fn trace(&self, actions: &[usize]) -> Trace {
        let mut tr = Trace {
            xs: Vec::new(),
            hs: Vec::new(),
            probs: Vec::new(),
        };
        let mut h_prev = vec![0.0; self.hidden];
        for t in 0..actions.len() {
            let prev = if t == 0 { None } else { Some(actions[t - 1]) };
            let (x, h, p) = self.step(t, &h_prev, prev);
            h_prev.clone_from(&h);
            tr.xs.push(x);
            tr.hs.push(h);
            tr.probs.push(p);
        }
        tr
    }

    /// Distribution of step `prefix.len()` after the actions in `prefix`.
    pub fn probabilities(&self, prefix: &[usize]) -> Result<Vec<f64>, NasError> {
        if prefix.len() >= self.choices.len() {
            return Err(NasError::Shape("prefix covers every decision".into()));
        }
        self.check_actions(prefix)?;
        let mut h_prev = vec![0.0; self.hidden];
        for t in 0..=prefix.len() {
            let prev = if t == 0 { None } else { Some(prefix[t - 1]) };
            let (_, h, p) = self.step(t, &h_prev, prev);
            if t == prefix.len() {
                return Ok(p);
            }
            h_prev = h;
        }
        unreachable!("loop returns at the last step")
    }

    /// Samples every decision in order; `forced[t] = Some(a)` fixes step `t`.
    pub fn sample(&self, rng: &mut impl Rng, forced: &[Option<usize>]) -> Result<PolicySample, NasError> {
        if forced.len() != self.choices.len() {
            return Err(NasError::Shape(format!(
                "{} forced slots for {} decisions",
                forced.len(),
                self.choices.len()
            )));
        }
        let mut actions = Vec::with_capacity(forced.len());
        let mut log_probs = Vec::with_capacity(forced.len());
        let mut h_prev = vec![0.0; self.hidden];
        for (t, &force) in forced.iter().enumerate() {
            let (_, h, p) = self.step(t, &h_prev, actions.last().copied());
            let a = match force {
                Some(a) if a < self.choices[t] => a,
                Some(a) => {
                    return Err(NasError::Shape(format!("forced action {a} at step {t} out of range")))
                }
                None => WeightedIndex::new(&p)
                    .map_err(|e| NasError::Shape(e.to_string()))?
                    .sample(rng),
            };
            log_probs.push(p[a].ln());
            actions.push(a);
            h_prev = h;
        }
        Ok(PolicySample { actions, log_probs })
    }

    fn check_trajectory(&self, tr: &Trajectory) -> Result<(), NasError> {
        if tr.actions.len() != self.choices.len() || tr.trained.len() != self.choices.len() {
            return Err(NasError::Shape("trajectory length differs from decision count".into()));
        }
        self.check_actions(&tr.actions)
    }

    /// Mean over the batch of `advantage * sum of trained log-probabilities`.
    pub fn objective(&self, batch: &[Trajectory]) -> Result<f64, NasError> {
        let mut total = 0.0;
        for tr in batch {
            self.check_trajectory(tr)?;
            let trace = self.trace(&tr.actions);
            let logp: f64 = (0..tr.actions.len())
                .filter(|&t| tr.trained[t])
                .map(|t| trace.probs[t][tr.actions[t]].ln())
                .sum();
            total += tr.advantage * logp;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Gradient of [`Self::objective`] by backpropagation through time.
    /// Fails on the first trajectory whose contribution is not finite.
    pub fn gradient(&self, batch: &[Trajectory]) -> Result<Vec<f64>, NasError> {
        let (h, l, p) = (self.hidden, &self.layout, &self.params);
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = vec![0.0; p.len()];
        for (episode, tr) in batch.iter().enumerate() {
            self.check_trajectory(tr)?;
            let mut g = vec![0.0; p.len()];
            let trace = self.trace(&tr.actions);
            let mut dh_next = vec![0.0; h];
            for t in (0..tr.actions.len()).rev() {
                let mut dh = std::mem::take(&mut dh_next);
                let h_t = &trace.hs[t];
                if tr.trained[t] {
                    for (k, &pk) in trace.probs[t].iter().enumerate() {
                        let target = if k == tr.actions[t] { 1.0 } else { 0.0 };
                        let dlogit = tr.advantage * (target - pk);
                        g[l.head_b[t] + k] += dlogit;
                        let row = l.head_w[t] + k * h;
                        for i in 0..h {
                            g[row + i] += dlogit * h_t[i];
                            dh[i] += dlogit * p[row + i];
                        }
                    }
                }
                let dz: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - h_t[i] * h_t[i])).collect();
                let zeros = vec![0.0; h];
                let h_prev = if t == 0 { &zeros } else { &trace.hs[t - 1] };
                let x = &trace.xs[t];
                let dx_at = if t == 0 { l.start } else { l.embed[t - 1] + tr.actions[t - 1] * h };
                dh_next = vec![0.0; h];
                for i in 0..h {
                    g[l.bias + i] += dz[i];
                    for j in 0..h {
                        g[l.w_x + i * h + j] += dz[i] * x[j];
                        g[l.w_h + i * h + j] += dz[i] * h_prev[j];
                        g[dx_at + j] += dz[i] * p[l.w_x + i * h + j];
                        dh_next[j] += dz[i] * p[l.w_h + i * h + j];
                    }
                }
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NasError::NonFiniteGradient { episode });
            }
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
        }
        Ok(grad)
    }

    /// One plain gradient-ascent step on [`Self::objective`].
    pub fn updated(&self, batch: &[Trajectory], learning_rate: f64) -> Result<Self, NasError> {
        let grad = self.gradient(batch)?;
        let mut next = self.clone();
        next.params.iter_mut().zip(&grad).for_each(|(w, g)| *w += learning_rate * g);
        Ok(next)
    }
}
