//! Offline Hadamard rotation of a model's residual stream.
//!
//! A single orthogonal `Q` rotates the residual stream of every layer. It is
//! folded into the embedding (rows times `Q`), the input projections
//! (`Qᵀ·diag(w1)·W_in`) and the LM head (`Qᵀ·diag(w_f)·W_head`). Before each
//! output projection an online rotation `H` over `d_inner` is applied at run
//! time, and its transpose is folded into `W_out` together with `Q`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::hadamard::{HadamardPlan, SignMatrix};
use crate::model::decode::{decode_step_with, DecodeState, Probe};
use crate::model::{MambaConfig, ModelWeights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// ① embedding table.
    Embedding,
    /// ② input projection (with the first norm scale).
    InProj,
    /// ③ online rotation before the output projection.
    OutProjOnline,
    /// ④ output projection.
    OutProj,
    /// ⑤ LM head (with the final norm scale).
    LmHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteMode {
    FusedOffline,
    Online,
    Skipped,
}

/// Dimensions of a [`HadamardPlan`], enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub n_total: usize,
    pub pot_size: usize,
    pub small_size: usize,
}

impl PlanSpec {
    pub fn of(plan: &HadamardPlan) -> Self {
        PlanSpec {
            n_total: plan.n_total(),
            pot_size: plan.pot_size(),
            small_size: plan.small_size(),
        }
    }

    pub fn build(&self) -> Result<HadamardPlan> {
        let plan = HadamardPlan::new(self.pot_size, self.small_size)?;
        if plan.n_total() != self.n_total {
            return Err(Error::RotationPlan(self.n_total));
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub site: Site,
    pub mode: SiteMode,
    pub plan: PlanSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationRecipe {
    pub sites: Vec<SiteEntry>,
    #[serde(default)]
    pub fuse_second_norm_scale: bool,
}

impl RotationRecipe {
    /// No rotation anywhere.
    pub fn identity() -> Self {
        RotationRecipe {
            sites: Vec::new(),
            fuse_second_norm_scale: false,
        }
    }

    /// Sites ①②④⑤ fused offline with the residual plan and ③ online with
    /// the `d_inner` plan.
    pub fn standard(cfg: &MambaConfig) -> Result<Self> {
        let resid = PlanSpec::of(&HadamardPlan::for_dim(cfg.d_model)?);
        let inner = PlanSpec::of(&HadamardPlan::for_dim(cfg.d_inner())?);
        let fused = |site, plan| SiteEntry {
            site,
            mode: SiteMode::FusedOffline,
            plan,
        };
        Ok(RotationRecipe {
            sites: vec![
                fused(Site::Embedding, resid),
                fused(Site::InProj, resid),
                SiteEntry {
                    site: Site::OutProjOnline,
                    mode: SiteMode::Online,
                    plan: inner,
                },
                fused(Site::OutProj, resid),
                fused(Site::LmHead, resid),
            ],
            fuse_second_norm_scale: false,
        })
    }

    pub fn with_second_norm_fused(mut self) -> Self {
        self.fuse_second_norm_scale = true;
        self
    }

    /// Marks `site` as skipped (negative controls).
    pub fn without(mut self, site: Site) -> Self {
        for e in &mut self.sites {
            if e.site == site {
                e.mode = SiteMode::Skipped;
            }
        }
        self
    }

    pub fn entry(&self, site: Site) -> Option<&SiteEntry> {
        self.sites
            .iter()
            .find(|e| e.site == site && e.mode != SiteMode::Skipped)
    }

    fn plan(&self, site: Site) -> Result<Option<HadamardPlan>> {
        self.entry(site).map(|e| e.plan.build()).transpose()
    }

    /// The run-time rotation before each output projection, if any.
    pub fn online_plan(&self) -> Result<Option<HadamardPlan>> {
        self.plan(Site::OutProjOnline)
    }

    pub fn validate(&self, cfg: &MambaConfig) -> Result<()> {
        let mut online = 0;
        for e in &self.sites {
            e.plan.build()?;
            let want = match e.site {
                Site::OutProjOnline => cfg.d_inner(),
                _ => cfg.d_model,
            };
            if e.plan.n_total != want {
                return Err(dim_err(
                    "rotation_recipe",
                    format!(
                        "{:?} plan of {} for dimension {want}",
                        e.site, e.plan.n_total
                    ),
                ));
            }
            match (e.site, e.mode) {
                (Site::OutProjOnline, SiteMode::Online) => online += 1,
                (Site::OutProjOnline, SiteMode::FusedOffline) | (_, SiteMode::Online) => {
                    return Err(Error::Config {
                        field: "rotation_recipe".into(),
                        reason: format!("site {:?} cannot be {:?}", e.site, e.mode),
                    })
                }
                _ => {}
            }
        }
        if online > 1 {
            return Err(Error::Config {
                field: "rotation_recipe".into(),
                reason: "more than one online site".into(),
            });
        }
        Ok(())
    }
}

/// `Qᵀ·M`: rotates every column of `m`.
fn left_rotate_transposed(m: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(m)?;
    if rows != plan.n_total() {
        return Err(dim_err(
            "rotation",
            format!("matrix with {rows} rows vs plan of {}", plan.n_total()),
        ));
    }
    let mut out = m.clone();
    let mut col = vec![0.0; rows];
    for c in 0..cols {
        for (r, v) in col.iter_mut().enumerate() {
            *v = m.data()[r * cols + c];
        }
        plan.rotate_row(&mut col)?;
        for (r, v) in col.iter().enumerate() {
            out.data_mut()[r * cols + c] = *v;
        }
    }
    Ok(out)
}

/// `M·Q`: rotates every row of `m`.
fn right_rotate(m: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(m)?;
    if cols != plan.n_total() {
        return Err(dim_err(
            "rotation",
            format!("matrix with {cols} columns vs plan of {}", plan.n_total()),
        ));
    }
    let mut out = m.clone();
    for r in 0..rows {
        plan.rotate_row(out.row_mut(r))?;
    }
    Ok(out)
}

fn matrix_dims(m: &Tensor) -> Result<(usize, usize)> {
    match m.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(dim_err("rotation", format!("expected a matrix, got {s:?}"))),
    }
}

/// `diag(w)·M`.
fn scale_rows(m: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (rows, _) = matrix_dims(m)?;
    if w.numel() != rows {
        return Err(dim_err(
            "rotation",
            format!("{} scales for {rows} rows", w.numel()),
        ));
    }
    let mut out = m.clone();
    for r in 0..rows {
        let s = w.data()[r];
        out.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// ①: every embedding row times `Q`.
pub fn fuse_embedding(emb: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    right_rotate(emb, plan)
}

/// ②: returns unit norm weights and `Qᵀ·diag(w)·W_in`.
pub fn split_rmsnorm_fuse_inproj(
    norm_weight: &Tensor,
    w_in: &Tensor,
    plan: &HadamardPlan,
) -> Result<(Tensor, Tensor)> {
    let fused = left_rotate_transposed(&scale_rows(w_in, norm_weight)?, plan)?;
    Ok((Tensor::full(norm_weight.shape(), 1.0), fused))
}

/// ④: `H_inᵀ·W_out·Q_resid`.
pub fn fuse_outproj(
    w_out: &Tensor,
    plan_in: &HadamardPlan,
    plan_resid: &HadamardPlan,
) -> Result<Tensor> {
    left_rotate_transposed(&right_rotate(w_out, plan_resid)?, plan_in)
}

/// ⑤: `Qᵀ·W_head`.
pub fn fuse_lm_head(w_head: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    left_rotate_transposed(w_head, plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotatedModel {
    pub weights: ModelWeights,
    pub recipe: RotationRecipe,
    /// SHA-256 of the source weights (hex).
    pub source_hash: String,
}

/// SHA-256 over the names, shapes and `f64` bits of every tensor.
pub fn weights_hash(w: &ModelWeights, cfg: &MambaConfig) -> String {
    let mut h = Sha256::new();
    for (name, t) in w.named_tensors(cfg) {
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Applies ①②④⑤ with the standard recipe.
pub fn build_rotated_model(w: &ModelWeights, cfg: &MambaConfig) -> Result<RotatedModel> {
    build_with_recipe(w, cfg, &RotationRecipe::standard(cfg)?)
}

pub fn build_with_recipe(
    w: &ModelWeights,
    cfg: &MambaConfig,
    recipe: &RotationRecipe,
) -> Result<RotatedModel> {
    w.validate(cfg)?;
    recipe.validate(cfg)?;
    let mut out = w.clone();
    if let Some(q) = recipe.plan(Site::Embedding)? {
        out.embedding = fuse_embedding(&w.embedding, &q)?;
    }
    let online = recipe.online_plan()?;
    let in_plan = recipe.plan(Site::InProj)?;
    let out_plan = recipe.plan(Site::OutProj)?;
    for layer in &mut out.layers {
        if let Some(q) = &in_plan {
            let (norm, w_in) = split_rmsnorm_fuse_inproj(&layer.norm1, &layer.w_in, q)?;
            layer.norm1 = norm;
            layer.w_in = w_in;
        }
        if recipe.fuse_second_norm_scale {
            layer.w_out = scale_rows(&layer.w_out, &layer.norm2)?;
            layer.norm2 = Tensor::full(layer.norm2.shape(), 1.0);
        }
        let (h, q) = match (&online, &out_plan) {
            (None, None) => continue,
            (h, q) => (h.as_ref(), q.as_ref()),
        };
        let mut m = layer.w_out.clone();
        if let Some(q) = q {
            m = right_rotate(&m, q)?;
        }
        if let Some(h) = h {
            m = left_rotate_transposed(&m, h)?;
        }
        layer.w_out = m;
    }
    if let Some(q) = recipe.plan(Site::LmHead)? {
        out.lm_head = fuse_lm_head(&scale_rows(&w.lm_head, &w.norm_f)?, &q)?;
        out.norm_f = Tensor::full(w.norm_f.shape(), 1.0);
    }
    Ok(RotatedModel {
        weights: out,
        recipe: recipe.clone(),
        source_hash: weights_hash(w, cfg),
    })
}

impl RotatedModel {
    pub fn decode_step(
        &self,
        cfg: &MambaConfig,
        state: &mut DecodeState,
        token: usize,
    ) -> Result<Vec<f64>> {
        self.decode_step_probed(cfg, state, token, None)
    }

    pub fn decode_step_probed(
        &self,
        cfg: &MambaConfig,
        state: &mut DecodeState,
        token: usize,
        probe: Option<Probe<'_>>,
    ) -> Result<Vec<f64>> {
        let online = self.recipe.online_plan()?;
        decode_step_with(&self.weights, cfg, state, token, online.as_ref(), probe)
    }
}

/// Runs both models on the same seeded random token stream and returns the
/// largest absolute logit difference.
pub fn verify_invariance(
    source: &ModelWeights,
    rotated: &RotatedModel,
    cfg: &MambaConfig,
    n_tokens: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut s_src = DecodeState::new(cfg);
    let mut s_rot = DecodeState::new(cfg);
    let mut worst = 0.0f64;
    for _ in 0..n_tokens {
        let t = rng.random_range(0..cfg.vocab_size);
        let a = decode_step_with(source, cfg, &mut s_src, t, None, None)?;
        let b = rotated.decode_step(cfg, &mut s_rot, t)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// `(Ā⊙h + B̄⊙x)·H`.
    pub lhs: Vec<f64>,
    /// `Ā⊙(h·H) + B̄⊙(x·H)`.
    pub rhs: Vec<f64>,
    pub equal: bool,
}

/// Compares rotating the updated state against updating the rotated state.
/// The two agree only when the elementwise factors commute with `H`.
pub fn ssm_rotation_counterexample(
    h_mat: &SignMatrix,
    a_bar: &[f64],
    h: &[f64],
    b_bar: &[f64],
    x: &[f64],
) -> Result<Counterexample> {
    let n = h_mat.order();
    if [a_bar.len(), h.len(), b_bar.len(), x.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(dim_err(
            "ssm_rotation_counterexample",
            format!("vectors must have length {n}"),
        ));
    }
    let times_h = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| (0..n).map(|i| v[i] * f64::from(h_mat.get(i, j))).sum())
            .collect()
    };
    let upd: Vec<f64> = (0..n).map(|i| a_bar[i] * h[i] + b_bar[i] * x[i]).collect();
    let lhs = times_h(&upd);
    let (hh, xh) = (times_h(h), times_h(x));
    let rhs: Vec<f64> = (0..n)
        .map(|i| a_bar[i] * hh[i] + b_bar[i] * xh[i])
        .collect();
    let scale = lhs.iter().chain(&rhs).fold(1.0f64, |m, v| m.max(v.abs()));
    let equal = lhs
        .iter()
        .zip(&rhs)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
    Ok(Counterexample { lhs, rhs, equal })
}
