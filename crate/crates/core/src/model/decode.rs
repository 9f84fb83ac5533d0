use serde::{Deserialize, Serialize};

use super::config::MambaConfig;
use super::weights::{LayerWeights, ModelWeights};
use crate::error::{dim_err, Error, Result};
use crate::hadamard::HadamardPlan;
use crate::tensor::{conv1d_step_raw, rmsnorm_row, silu_scalar, softplus_scalar, vecmat};

/// Dimensions of the selective state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmDims {
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
    pub n_groups: usize,
}

impl SsmDims {
    pub fn of(cfg: &MambaConfig) -> Self {
        SsmDims {
            n_heads: cfg.n_heads,
            head_dim: cfg.head_dim,
            d_state: cfg.d_state,
            n_groups: cfg.n_groups,
        }
    }

    pub fn state_len(&self) -> usize {
        self.n_heads * self.head_dim * self.d_state
    }

    /// Group whose `B`/`C` head `h` reads.
    #[inline]
    pub fn group_of(&self, h: usize) -> usize {
        h / (self.n_heads / self.n_groups)
    }
}

/// Per-token SSM inputs. `b` and `c` hold `n_groups · d_state` entries.
#[derive(Debug, Clone, Copy)]
pub struct SsmInputs<'a> {
    pub a_bar: &'a [f64],
    pub dt: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    pub x: &'a [f64],
    pub d: &'a [f64],
}

/// One recurrence step:
/// `h'[h,p,n] = Ā[h]·h[h,p,n] + Δ[h]·B[n]·x[h,p]` and
/// `y[h,p] = Σ_n C[n]·h'[h,p,n] + D[h]·x[h,p]`. Updates `h` in place.
pub fn ssm_step(dims: SsmDims, h: &mut [f64], inp: SsmInputs<'_>) -> Result<Vec<f64>> {
    let SsmDims {
        n_heads,
        head_dim: p_dim,
        d_state: n_dim,
        n_groups,
    } = dims;
    let gn = n_groups * n_dim;
    if h.len() != dims.state_len()
        || inp.a_bar.len() != n_heads
        || inp.dt.len() != n_heads
        || inp.d.len() != n_heads
        || inp.b.len() != gn
        || inp.c.len() != gn
        || inp.x.len() != n_heads * p_dim
        || n_groups == 0
        || n_heads % n_groups != 0
    {
        return Err(dim_err("ssm_step", format!("inputs do not match {dims:?}")));
    }
    let mut y = vec![0.0; n_heads * p_dim];
    for hd in 0..n_heads {
        let g = dims.group_of(hd);
        let b = &inp.b[g * n_dim..(g + 1) * n_dim];
        let c = &inp.c[g * n_dim..(g + 1) * n_dim];
        let (a, dt, d) = (inp.a_bar[hd], inp.dt[hd], inp.d[hd]);
        for p in 0..p_dim {
            let xv = inp.x[hd * p_dim + p];
            let row = &mut h[(hd * p_dim + p) * n_dim..(hd * p_dim + p + 1) * n_dim];
            let mut acc = 0.0;
            for n in 0..n_dim {
                let v = a * row[n] + dt * b[n] * xv;
                row[n] = v;
                acc += c[n] * v;
            }
            y[hd * p_dim + p] = acc + d * xv;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    /// `[n_heads × head_dim × d_state]`.
    pub h: Vec<f64>,
    /// `[conv_channels × (conv_kernel − 1)]`, oldest first.
    pub conv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeState {
    pub layers: Vec<LayerState>,
}

impl DecodeState {
    pub fn new(cfg: &MambaConfig) -> Self {
        DecodeState {
            layers: (0..cfg.n_layers)
                .map(|_| LayerState {
                    h: vec![0.0; cfg.state_len()],
                    conv: vec![0.0; cfg.conv_channels() * (cfg.conv_kernel - 1)],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.h.iter().chain(&l.conv).all(|v| v.is_finite()))
    }
}

/// Activation sites exposed to probes during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActSite {
    /// Normalized residual entering the input projection.
    InProj,
    /// Gated-norm output entering the output projection (after any online
    /// rotation).
    OutProj,
    /// Final-normed residual entering the LM head.
    LmHead,
    /// SSM output `y` before gating.
    SsmOutput,
}

pub type Probe<'p> = &'p mut dyn FnMut(ActSite, usize, &[f64]);

/// Splits of the input projection output.
pub(crate) struct InProjSplit<'a> {
    pub z: &'a [f64],
    pub xbc: &'a [f64],
    pub dt_raw: &'a [f64],
}

pub(crate) fn split_in_proj<'a>(cfg: &MambaConfig, proj: &'a [f64]) -> InProjSplit<'a> {
    let inner = cfg.d_inner();
    let ch = cfg.conv_channels();
    InProjSplit {
        z: &proj[..inner],
        xbc: &proj[inner..inner + ch],
        dt_raw: &proj[inner + ch..],
    }
}

/// Discretization: `Δ = softplus(raw + dt_bias)`, `Ā = exp(Δ·A)` with
/// `A = −exp(A_log)`.
pub fn discretize(dt_raw: &[f64], dt_bias: &[f64], a_log: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dt: Vec<f64> = dt_raw
        .iter()
        .zip(dt_bias)
        .map(|(r, b)| softplus_scalar(r + b))
        .collect();
    let a_bar = dt
        .iter()
        .zip(a_log)
        .map(|(d, al)| (-d * al.exp()).exp())
        .collect();
    (dt, a_bar)
}

/// `rmsnorm(y ⊙ silu(z), w)`.
pub fn gated_norm(y: &[f64], z: &[f64], w: &[f64], eps: f64) -> Vec<f64> {
    let gated: Vec<f64> = y.iter().zip(z).map(|(a, b)| a * silu_scalar(*b)).collect();
    rmsnorm_row(&gated, w, eps)
}

fn mixer_step(
    layer: &LayerWeights,
    cfg: &MambaConfig,
    st: &mut LayerState,
    resid: &[f64],
    l: usize,
    online: Option<&HadamardPlan>,
    probe: &mut Option<Probe<'_>>,
) -> Result<Vec<f64>> {
    let u = rmsnorm_row(resid, layer.norm1.data(), cfg.norm_eps);
    if let Some(p) = probe.as_mut() {
        p(ActSite::InProj, l, &u);
    }
    let proj = vecmat(&u, &layer.w_in)?;
    let sp = split_in_proj(cfg, &proj);
    let (xbc, window) = conv1d_step_raw(
        &st.conv,
        sp.xbc,
        layer.conv_weight.data(),
        layer.conv_bias.data(),
        cfg.conv_kernel,
    );
    st.conv = window;
    let inner = cfg.d_inner();
    let gn = cfg.n_groups * cfg.d_state;
    let (x, rest) = xbc.split_at(inner);
    let (b, c) = rest.split_at(gn);
    let (dt, a_bar) = discretize(sp.dt_raw, layer.dt_bias.data(), layer.a_log.data());
    let y = ssm_step(
        SsmDims::of(cfg),
        &mut st.h,
        SsmInputs {
            a_bar: &a_bar,
            dt: &dt,
            b,
            c,
            x,
            d: layer.d_skip.data(),
        },
    )?;
    if let Some(p) = probe.as_mut() {
        p(ActSite::SsmOutput, l, &y);
    }
    let mut g = gated_norm(&y, sp.z, layer.norm2.data(), cfg.norm_eps);
    if let Some(plan) = online {
        plan.rotate_row(&mut g)?;
    }
    if let Some(p) = probe.as_mut() {
        p(ActSite::OutProj, l, &g);
    }
    vecmat(&g, &layer.w_out)
}

pub fn check_token(token: usize, vocab: usize) -> Result<()> {
    if token >= vocab {
        return Err(Error::TokenOutOfRange { token, vocab });
    }
    Ok(())
}

/// One decode step of the floating-point reference model.
pub fn decode_step(
    w: &ModelWeights,
    cfg: &MambaConfig,
    state: &mut DecodeState,
    token: usize,
) -> Result<Vec<f64>> {
    decode_step_with(w, cfg, state, token, None, None)
}

/// Decode step with an optional online rotation applied before each output
/// projection and an optional activation probe.
pub fn decode_step_with(
    w: &ModelWeights,
    cfg: &MambaConfig,
    state: &mut DecodeState,
    token: usize,
    online: Option<&HadamardPlan>,
    mut probe: Option<Probe<'_>>,
) -> Result<Vec<f64>> {
    check_token(token, cfg.vocab_size)?;
    if state.layers.len() != cfg.n_layers || w.layers.len() != cfg.n_layers {
        return Err(dim_err("decode_step", "layer count mismatch"));
    }
    let mut resid = w.embedding.row(token).to_vec();
    for (l, (layer, st)) in w.layers.iter().zip(state.layers.iter_mut()).enumerate() {
        let out = mixer_step(layer, cfg, st, &resid, l, online, &mut probe)?;
        resid.iter_mut().zip(&out).for_each(|(r, o)| *r += o);
    }
    let f = rmsnorm_row(&resid, w.norm_f.data(), cfg.norm_eps);
    if let Some(p) = probe.as_mut() {
        p(ActSite::LmHead, cfg.n_layers, &f);
    }
    vecmat(&f, &w.lm_head)
}

/// Greedy (argmax) continuation of `prompt` by `n_new` tokens. Returns the
/// generated tokens and the logits of every step.
pub fn greedy_decode(
    w: &ModelWeights,
    cfg: &MambaConfig,
    prompt: &[usize],
    n_new: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    greedy_with(cfg, prompt, n_new, |s, t| decode_step(w, cfg, s, t))
}

/// Greedy continuation driven by an arbitrary step function.
pub fn greedy_with<F>(
    cfg: &MambaConfig,
    prompt: &[usize],
    n_new: usize,
    mut step: F,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)>
where
    F: FnMut(&mut DecodeState, usize) -> Result<Vec<f64>>,
{
    if prompt.is_empty() {
        return Err(Error::EmptyStream { need: 1, got: 0 });
    }
    let mut state = DecodeState::new(cfg);
    let mut all_logits = Vec::new();
    let mut last = Vec::new();
    for &t in prompt {
        last = step(&mut state, t)?;
        all_logits.push(last.clone());
    }
    let mut generated = Vec::with_capacity(n_new);
    for i in 0..n_new {
        let next = argmax(&last);
        generated.push(next);
        if i + 1 < n_new {
            last = step(&mut state, next)?;
            all_logits.push(last.clone());
        }
    }
    Ok((generated, all_logits))
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

/// `log softmax(logits)[target]`, computed stably.
pub fn log_prob(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    logits[target] - lse
}

/// Teacher-forced perplexity given a per-token step function producing
/// logits for the next token.
pub fn perplexity_with<F>(tokens: &[usize], vocab: usize, mut step: F) -> Result<f64>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if tokens.len() < 2 {
        return Err(Error::EmptyStream {
            need: 2,
            got: tokens.len(),
        });
    }
    for &t in tokens {
        check_token(t, vocab)?;
    }
    let mut nll = 0.0;
    for pair in tokens.windows(2) {
        let logits = step(pair[0])?;
        nll -= log_prob(&logits, pair[1]);
    }
    Ok((nll / (tokens.len() - 1) as f64).exp())
}

pub fn perplexity(w: &ModelWeights, cfg: &MambaConfig, tokens: &[usize]) -> Result<f64> {
    let mut state = DecodeState::new(cfg);
    perplexity_with(tokens, cfg.vocab_size, |t| {
        decode_step(w, cfg, &mut state, t)
    })
}
