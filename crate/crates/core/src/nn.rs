//! Dense layers with hand-written backward passes.
//!
//! Parameters live in one flat [`Params`] store addressed by [`ParamId`];
//! layers only hold ids. Gradients accumulate into a [`Grads`] of the same
//! shape, which keeps optimizers, checkpoints and gradient checks generic.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub value: Vec<f64>,
}

impl Param {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.value[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    list: Vec<Param>,
}

impl Params {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: Vec<f64>) -> ParamId {
        assert_eq!(value.len(), rows * cols, "shape mismatch");
        self.list.push(Param {
            name: name.into(),
            rows,
            cols,
            trainable: true,
            value,
        });
        self.list.len() - 1
    }

    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = (0..rows * cols)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
            .collect();
        self.add(name, rows, cols, value)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.list[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.list[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.list.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.list.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.list.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.list.iter().position(|p| p.name == name)
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.list
            .iter()
            .map(|p| (p.name.clone(), p.value.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads {
            data: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_row(&mut self, id: ParamId, cols: usize, row: usize, delta: &[f64]) {
        axpy(1.0, delta, &mut self.data[id][row * cols..(row + 1) * cols]);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `W x` for row-major `W` of shape `rows × x.len()`.
pub fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

/// `dx += W^T dy`
pub fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[r * cols..(r + 1) * cols], dx);
        }
    }
}

/// `dW += dy x^T`
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut dw[r * cols..(r + 1) * cols]);
        }
    }
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the unmasked entries; masked entries get weight 0. If
/// everything is masked the mask is ignored.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let any = (0..logits.len()).any(keep);
    let keep = |i: usize| !any || keep(i);
    let max = (0..logits.len())
        .filter(|&i| keep(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..logits.len())
        .map(|i| if keep(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    masked_softmax(logits, None)
}

/// Gradient of the logits given the softmax output and the gradient of it.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, dprobs);
    probs.iter().zip(dprobs).map(|(p, d)| p * (d - inner)).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Inverted dropout mask: entries are 0 or `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub fn apply_mask(x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `y = W x + b`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(params: &mut Params, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = params.add_uniform(format!("{name}.weight"), output, input, glorot(input, output), rng);
        let b = params.add(format!("{name}.bias"), output, 1, vec![0.0; output]);
        Linear { w, b, input, output }
    }

    pub fn forward(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(&params.get(self.w).value, self.output, x);
        axpy(1.0, &params.get(self.b).value, &mut y);
        y
    }

    pub fn backward(&self, params: &Params, grads: &mut Grads, x: &[f64], dy: &[f64]) -> Vec<f64> {
        outer_acc(grads.get_mut(self.w), dy, x);
        axpy(1.0, dy, grads.get_mut(self.b));
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&params.get(self.w).value, self.input, dy, &mut dx);
        dx
    }
}

/// Scalar attention score `v · tanh(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionMlp {
    pub hidden: Linear,
    pub v: ParamId,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Vec<f64>,
    act: Vec<f64>,
}

impl AttentionMlp {
    pub fn new(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let lin = Linear::new(params, &format!("{name}.hidden"), input, hidden, rng);
        let v = params.add_uniform(format!("{name}.score"), 1, hidden, glorot(hidden, 1), rng);
        AttentionMlp { hidden: lin, v }
    }

    pub fn forward(&self, params: &Params, x: Vec<f64>) -> (f64, MlpCache) {
        let act: Vec<f64> = self.hidden.forward(params, &x).into_iter().map(f64::tanh).collect();
        let score = dot(&params.get(self.v).value, &act);
        (score, MlpCache { x, act })
    }

    pub fn backward(&self, params: &Params, grads: &mut Grads, cache: &MlpCache, dscore: f64) -> Vec<f64> {
        axpy(dscore, &cache.act, grads.get_mut(self.v));
        let v = &params.get(self.v).value;
        let dpre: Vec<f64> = cache
            .act
            .iter()
            .zip(v)
            .map(|(a, vi)| dscore * vi * (1.0 - a * a))
            .collect();
        self.hidden.backward(params, grads, &cache.x, &dpre)
    }
}

/// Gated recurrent unit:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + Un (r ⊙ h) + bn)`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub wx: ParamId,
    pub uh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

impl GruCell {
    pub fn new(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let wx = params.add_uniform(format!("{name}.wx"), 3 * hidden, input, glorot(input, hidden), rng);
        let uh = params.add_uniform(format!("{name}.uh"), 3 * hidden, hidden, glorot(hidden, hidden), rng);
        let b = params.add(format!("{name}.bias"), 3 * hidden, 1, vec![0.0; 3 * hidden]);
        GruCell {
            wx,
            uh,
            b,
            input,
            hidden,
        }
    }

    pub fn step(&self, params: &Params, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStep) {
        let hd = self.hidden;
        let wx = &params.get(self.wx).value;
        let uh = &params.get(self.uh).value;
        let b = &params.get(self.b).value;
        let mut ax = matvec(wx, 3 * hd, x);
        axpy(1.0, b, &mut ax);
        let uz_ur = matvec(&uh[..2 * hd * hd], 2 * hd, h_prev);
        let z: Vec<f64> = (0..hd).map(|i| sigmoid(ax[i] + uz_ur[i])).collect();
        let r: Vec<f64> = (0..hd).map(|i| sigmoid(ax[hd + i] + uz_ur[hd + i])).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let un = matvec(&uh[2 * hd * hd..], hd, &rh);
        let n: Vec<f64> = (0..hd).map(|i| (ax[2 * hd + i] + un[i]).tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
        let cache = GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
        };
        (h, cache)
    }

    /// Returns `(dx, dh_prev)`.
    pub fn step_backward(
        &self,
        params: &Params,
        grads: &mut Grads,
        c: &GruStep,
        dh: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let uh = &params.get(self.uh).value;
        let mut dh_prev: Vec<f64> = dh.iter().zip(&c.z).map(|(g, z)| g * z).collect();
        let mut da = vec![0.0; 3 * hd];
        for i in 0..hd {
            let dn = dh[i] * (1.0 - c.z[i]);
            let dz = dh[i] * (c.h_prev[i] - c.n[i]);
            da[i] = dz * c.z[i] * (1.0 - c.z[i]);
            da[2 * hd + i] = dn * (1.0 - c.n[i] * c.n[i]);
        }
        let mut drh = vec![0.0; hd];
        matvec_t_acc(&uh[2 * hd * hd..], hd, &da[2 * hd..], &mut drh);
        for i in 0..hd {
            dh_prev[i] += drh[i] * c.r[i];
            let dr = drh[i] * c.h_prev[i];
            da[hd + i] = dr * c.r[i] * (1.0 - c.r[i]);
        }
        matvec_t_acc(&uh[..2 * hd * hd], hd, &da[..2 * hd], &mut dh_prev);

        let g_uh = grads.get_mut(self.uh);
        outer_acc(&mut g_uh[..2 * hd * hd], &da[..2 * hd], &c.h_prev);
        outer_acc(&mut g_uh[2 * hd * hd..], &da[2 * hd..], &c.rh);
        outer_acc(grads.get_mut(self.wx), &da, &c.x);
        axpy(1.0, &da, grads.get_mut(self.b));
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&params.get(self.wx).value, self.input, &da, &mut dx);
        (dx, dh_prev)
    }
}

/// Bidirectional GRU; output at step j is `[forward_j; backward_j]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
}

impl BiGru {
    pub fn new(params: &mut Params, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiGru {
            fwd: GruCell::new(params, &format!("{name}.fwd"), input, hidden, rng),
            bwd: GruCell::new(params, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, params: &Params, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiGruCache) {
        let hd = self.fwd.hidden;
        let len = xs.len();
        let mut outs = vec![vec![0.0; 2 * hd]; len];
        let mut fwd = Vec::with_capacity(len);
        let mut h = vec![0.0; hd];
        for (j, x) in xs.iter().enumerate() {
            let (hn, c) = self.fwd.step(params, x, &h);
            outs[j][..hd].copy_from_slice(&hn);
            fwd.push(c);
            h = hn;
        }
        let mut bwd = Vec::with_capacity(len);
        let mut h = vec![0.0; hd];
        for j in (0..len).rev() {
            let (hn, c) = self.bwd.step(params, &xs[j], &h);
            outs[j][hd..].copy_from_slice(&hn);
            bwd.push(c);
            h = hn;
        }
        bwd.reverse();
        (outs, BiGruCache { fwd, bwd })
    }

    pub fn backward(
        &self,
        params: &Params,
        grads: &mut Grads,
        cache: &BiGruCache,
        douts: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let hd = self.fwd.hidden;
        let len = douts.len();
        let mut dxs = vec![vec![0.0; self.fwd.input]; len];
        let mut carry = vec![0.0; hd];
        for j in (0..len).rev() {
            let mut dh = douts[j][..hd].to_vec();
            axpy(1.0, &carry, &mut dh);
            let (dx, dprev) = self.fwd.step_backward(params, grads, &cache.fwd[j], &dh);
            axpy(1.0, &dx, &mut dxs[j]);
            carry = dprev;
        }
        let mut carry = vec![0.0; hd];
        for j in 0..len {
            let mut dh = douts[j][hd..].to_vec();
            axpy(1.0, &carry, &mut dh);
            let (dx, dprev) = self.bwd.step_backward(params, grads, &cache.bwd[j], &dh);
            axpy(1.0, &dx, &mut dxs[j]);
            carry = dprev;
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric<F: Fn(&Params) -> f64>(params: &mut Params, id: ParamId, k: usize, f: F) -> f64 {
        let eps = 1e-6;
        let orig = params.get(id).value[k];
        params.get_mut(id).value[k] = orig + eps;
        let up = f(params);
        params.get_mut(id).value[k] = orig - eps;
        let down = f(params);
        params.get_mut(id).value[k] = orig;
        (up - down) / (2.0 * eps)
    }

    #[test]
    fn softmax_sums_to_one_and_masks() {
        let p = masked_softmax(&[1.0, 2.0, 3.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let all_masked = masked_softmax(&[1.0, 1.0], Some(&[false, false]));
        assert_eq!(all_masked, vec![0.5, 0.5]);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [1.0, 2.0, 3.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn bigru_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::default();
        let gru = BiGru::new(&mut params, "g", 3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let weights: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let loss = |p: &Params| {
            let (outs, _) = gru.forward(p, &xs);
            outs.iter().zip(&weights).map(|(o, w)| dot(o, w)).sum::<f64>()
        };
        let (_, cache) = gru.forward(&params, &xs);
        let mut grads = Grads::zeros_like(&params);
        gru.backward(&params, &mut grads, &cache, &weights);
        for id in 0..params.len() {
            for k in 0..params.get(id).value.len() {
                let n = numeric(&mut params, id, k, loss);
                let a = grads.data[id][k];
                assert!((a - n).abs() < 1e-7, "param {id}[{k}]: {a} vs {n}");
            }
        }
    }

    #[test]
    fn attention_mlp_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::default();
        let mlp = AttentionMlp::new(&mut params, "a", 4, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = mlp.forward(&params, x.clone());
        let mut grads = Grads::zeros_like(&params);
        let dx = mlp.backward(&params, &mut grads, &cache, 1.0);
        for id in 0..params.len() {
            for k in 0..params.get(id).value.len() {
                let n = numeric(&mut params, id, k, |p| mlp.forward(p, x.clone()).0);
                assert!((grads.data[id][k] - n).abs() < 1e-8);
            }
        }
        for k in 0..4 {
            let mut xp = x.clone();
            xp[k] += 1e-6;
            let mut xm = x.clone();
            xm[k] -= 1e-6;
            let n = (mlp.forward(&params, xp).0 - mlp.forward(&params, xm).0) / 2e-6;
            assert!((dx[k] - n).abs() < 1e-8);
        }
    }
}
