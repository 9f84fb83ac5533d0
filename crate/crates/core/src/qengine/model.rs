use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linear::qlinear;
use super::ssm::{qssm_step, CountingAlu, IntSsmState, PotVec, QSsmInputs, SsmTile};
use crate::error::{Error, Result};
use crate::hadamard::HadamardPlan;
use crate::model::container::Container;
use crate::model::decode::{
    check_token, discretize, gated_norm, split_in_proj, ssm_step, ActSite, Probe, SsmDims,
    SsmInputs,
};
use crate::model::weights::layer_tensor_specs;
use crate::model::{load_config, save_config, MambaConfig, ModelWeights};
use crate::quant::{
    compute_pot_scales_ceil, dequantize, pot_value, quantize_rtn, quantize_with_scales,
    Granularity, QuantScheme, QuantizedTensor, Scales, DEFAULT_GROUP_SIZE,
};
use crate::rotation::{build_with_recipe, weights_hash, RotationRecipe};
use crate::tensor::{conv1d_step_raw, rmsnorm_row, Tensor};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.lmb";
const FORMAT_TAG: &str = "lightmamba-quantized";

/// What to quantize and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Bit width of linear weights and activations; `None` keeps them FP.
    pub linear_bits: Option<u8>,
    /// Group length for 4-bit schemes (clamped to the reduction length).
    pub group_size: usize,
    /// Run the SSM in power-of-two INT8.
    pub quantize_ssm: bool,
    pub rotate: bool,
    #[serde(default)]
    pub fuse_second_norm_scale: bool,
    /// Quantize conv weights at the linear bit width; conv activations stay FP.
    pub quantize_conv_weights: bool,
    pub ssm_tile: SsmTile,
}

impl QuantSpec {
    pub fn new(bits: u8, quantize_ssm: bool, rotate: bool) -> Result<Self> {
        let spec = QuantSpec {
            linear_bits: Some(bits),
            group_size: DEFAULT_GROUP_SIZE,
            quantize_ssm,
            rotate,
            fuse_second_norm_scale: false,
            quantize_conv_weights: true,
            ssm_tile: SsmTile::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn w8a8() -> Self {
        QuantSpec::new(8, false, false).expect("valid")
    }

    pub fn w4a4() -> Self {
        QuantSpec::new(4, false, false).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.linear_bits {
            if b != 4 && b != 8 {
                return Err(Error::UnsupportedBits(b));
            }
        }
        if self.group_size == 0 || self.ssm_tile.heads == 0 || self.ssm_tile.states == 0 {
            return Err(Error::Scheme(
                "group and tile sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Static weight scheme: per-channel at 8 bits,
    /// per-group at 4 bits.
    pub fn weight_scheme(&self) -> Option<QuantScheme> {
        self.linear_bits
            .map(|b| self.scheme_for(b, Granularity::PerChannel))
    }

    /// Dynamic activation scheme: per-token at 8 bits, per-group at 4 bits.
    pub fn act_scheme(&self) -> Option<QuantScheme> {
        self.linear_bits
            .map(|b| self.scheme_for(b, Granularity::PerToken))
    }

    fn scheme_for(&self, bits: u8, row: Granularity) -> QuantScheme {
        let s = if bits == 4 {
            QuantScheme::per_group(bits, self.group_size)
        } else {
            QuantScheme::new(bits, row, 0, crate::quant::ScaleKind::Float)
        };
        s.expect("validated bits")
    }
}

/// A linear layer stored either quantized `[out × in]` or FP `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub enum QWeight {
    Quant(QuantizedTensor),
    Float(Tensor),
}

impl QWeight {
    fn new(w_in_out: &Tensor, scheme: Option<QuantScheme>) -> Result<Self> {
        Ok(match scheme {
            Some(s) => QWeight::Quant(quantize_rtn(&w_in_out.transpose()?, &s)?),
            None => QWeight::Float(f32_exact(w_in_out)),
        })
    }

    fn apply(&self, x: &[f64], act: Option<QuantScheme>) -> Result<Vec<f64>> {
        match (self, act) {
            (QWeight::Quant(w), Some(s)) => {
                let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
                Ok(qlinear(&quantize_rtn(&xt, &s)?, w)?.into_data())
            }
            (QWeight::Float(w), _) => crate::tensor::vecmat(x, w),
            (QWeight::Quant(_), None) => Err(Error::Scheme(
                "quantized weight without activation scheme".into(),
            )),
        }
    }

    pub fn as_quantized(&self) -> Option<&QuantizedTensor> {
        match self {
            QWeight::Quant(q) => Some(q),
            QWeight::Float(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub norm1: Tensor,
    pub w_in: QWeight,
    /// Codes of the conv kernel when conv weights are quantized.
    pub conv_weight_q: Option<QuantizedTensor>,
    /// Kernel used at run time (dequantized when `conv_weight_q` is set).
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub a_log: Tensor,
    pub dt_bias: Tensor,
    pub d_skip: Tensor,
    pub norm2: Tensor,
    pub w_out: QWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub cfg: MambaConfig,
    pub spec: QuantSpec,
    pub recipe: RotationRecipe,
    pub source_hash: String,
    pub embedding: Tensor,
    pub layers: Vec<QLayer>,
    pub norm_f: Tensor,
    pub lm_head: QWeight,
}

fn f32_exact(t: &Tensor) -> Tensor {
    t.map(|v| f64::from(v as f32))
}

/// Rotates (optionally) and quantizes a model.
pub fn quantize_model(
    w: &ModelWeights,
    cfg: &MambaConfig,
    spec: &QuantSpec,
) -> Result<QuantizedModel> {
    spec.validate()?;
    w.validate(cfg)?;
    let recipe = if spec.rotate {
        let r = RotationRecipe::standard(cfg)?;
        if spec.fuse_second_norm_scale {
            r.with_second_norm_fused()
        } else {
            r
        }
    } else {
        RotationRecipe::identity()
    };
    let rotated = build_with_recipe(w, cfg, &recipe)?;
    let src = &rotated.weights;
    let ws = spec.weight_scheme();
    let layers = src
        .layers
        .iter()
        .map(|l| {
            let conv_weight_q = match (spec.quantize_conv_weights, ws) {
                (true, Some(s)) => Some(quantize_rtn(&l.conv_weight, &s)?),
                _ => None,
            };
            let conv_weight = match &conv_weight_q {
                Some(q) => dequantize(q),
                None => f32_exact(&l.conv_weight),
            };
            Ok(QLayer {
                norm1: f32_exact(&l.norm1),
                w_in: QWeight::new(&l.w_in, ws)?,
                conv_weight_q,
                conv_weight,
                conv_bias: f32_exact(&l.conv_bias),
                a_log: f32_exact(&l.a_log),
                dt_bias: f32_exact(&l.dt_bias),
                d_skip: f32_exact(&l.d_skip),
                norm2: f32_exact(&l.norm2),
                w_out: QWeight::new(&l.w_out, ws)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedModel {
        cfg: cfg.clone(),
        spec: *spec,
        recipe,
        source_hash: weights_hash(w, cfg),
        embedding: f32_exact(&src.embedding),
        layers,
        norm_f: f32_exact(&src.norm_f),
        lm_head: QWeight::new(&src.lm_head, ws)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SsmState {
    Int(IntSsmState),
    Float(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLayerState {
    pub ssm: SsmState,
    pub conv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDecodeState {
    pub layers: Vec<QLayerState>,
}

impl QDecodeState {
    pub fn new(qm: &QuantizedModel) -> Self {
        let cfg = &qm.cfg;
        let dims = SsmDims::of(cfg);
        QDecodeState {
            layers: (0..cfg.n_layers)
                .map(|_| QLayerState {
                    ssm: if qm.spec.quantize_ssm {
                        SsmState::Int(IntSsmState::new(dims, qm.spec.ssm_tile))
                    } else {
                        SsmState::Float(vec![0.0; cfg.state_len()])
                    },
                    conv: vec![0.0; cfg.conv_channels() * (cfg.conv_kernel - 1)],
                })
                .collect(),
        }
    }
}

/// Quantizes `v` (viewed as rows of `row_len`) to `i8` codes with one
/// power-of-two exponent per `group_len` run. Exponents are rounded up so
/// the group maximum is representable.
pub fn quantize_pot(v: &[f64], row_len: usize, group_len: usize) -> Result<PotVec> {
    let group_len = group_len.clamp(1, row_len);
    let t = Tensor::new(vec![v.len() / row_len, row_len], v.to_vec())?;
    let scheme = QuantScheme::per_group(8, group_len)?.with_pot();
    let q = quantize_with_scales(&t, &scheme, compute_pot_scales_ceil(&t, &scheme)?)?;
    let Scales::Pot(exps) = q.scales else {
        unreachable!("pot scheme yields exponents")
    };
    Ok(PotVec {
        codes: q.qdata.to_i8(),
        exps,
        row_len,
        group_len,
    })
}

pub fn dequantize_pot(v: &PotVec) -> Vec<f64> {
    (0..v.codes.len())
        .map(|i| f64::from(v.codes[i]) * pot_value(v.exp(i)))
        .collect()
}

/// Quantizes float SSM inputs with the tile grouping, runs [`qssm_step`]
/// and dequantizes `y`.
pub fn int_ssm_step(
    dims: SsmDims,
    state: &mut IntSsmState,
    inp: SsmInputs<'_>,
    alu: &mut CountingAlu,
) -> Result<Vec<f64>> {
    let tile = state.tile;
    let (h, n, p) = (dims.n_heads, dims.d_state, dims.head_dim);
    let a = quantize_pot(inp.a_bar, h, tile.heads)?;
    let dt = quantize_pot(inp.dt, h, tile.heads)?;
    let d = quantize_pot(inp.d, h, tile.heads)?;
    let b = quantize_pot(inp.b, n, tile.states)?;
    let c = quantize_pot(inp.c, n, tile.states)?;
    let x = quantize_pot(inp.x, h * p, tile.heads * p)?;
    let y = qssm_step(
        dims,
        state,
        QSsmInputs {
            a: &a,
            dt: &dt,
            b: &b,
            c: &c,
            x: &x,
            d: &d,
        },
        alu,
    )?;
    Ok(dequantize_pot(&y))
}

/// One decode step through the quantized model.
pub fn qdecode_step(
    qm: &QuantizedModel,
    state: &mut QDecodeState,
    token: usize,
) -> Result<Vec<f64>> {
    qdecode_step_probed(qm, state, token, None)
}

pub fn qdecode_step_probed(
    qm: &QuantizedModel,
    state: &mut QDecodeState,
    token: usize,
    mut probe: Option<Probe<'_>>,
) -> Result<Vec<f64>> {
    let cfg = &qm.cfg;
    check_token(token, cfg.vocab_size)?;
    let act = qm.spec.act_scheme();
    let online: Option<HadamardPlan> = qm.recipe.online_plan()?;
    let dims = SsmDims::of(cfg);
    let mut alu = CountingAlu::default();
    let mut resid = qm.embedding.row(token).to_vec();
    for (l, (layer, st)) in qm.layers.iter().zip(state.layers.iter_mut()).enumerate() {
        let u = rmsnorm_row(&resid, layer.norm1.data(), cfg.norm_eps);
        if let Some(p) = probe.as_mut() {
            p(ActSite::InProj, l, &u);
        }
        let proj = layer.w_in.apply(&u, act)?;
        let sp = split_in_proj(cfg, &proj);
        let (xbc, window) = conv1d_step_raw(
            &st.conv,
            sp.xbc,
            layer.conv_weight.data(),
            layer.conv_bias.data(),
            cfg.conv_kernel,
        );
        st.conv = window;
        let (x, rest) = xbc.split_at(cfg.d_inner());
        let (b, c) = rest.split_at(cfg.n_groups * cfg.d_state);
        let (dt, a_bar) = discretize(sp.dt_raw, layer.dt_bias.data(), layer.a_log.data());
        let inputs = SsmInputs {
            a_bar: &a_bar,
            dt: &dt,
            b,
            c,
            x,
            d: layer.d_skip.data(),
        };
        let y = match &mut st.ssm {
            SsmState::Int(s) => int_ssm_step(dims, s, inputs, &mut alu)?,
            SsmState::Float(h) => ssm_step(dims, h, inputs)?,
        };
        if let Some(p) = probe.as_mut() {
            p(ActSite::SsmOutput, l, &y);
        }
        let mut g = gated_norm(&y, sp.z, layer.norm2.data(), cfg.norm_eps);
        if let Some(plan) = &online {
            plan.rotate_row(&mut g)?;
        }
        if let Some(p) = probe.as_mut() {
            p(ActSite::OutProj, l, &g);
        }
        let out = layer.w_out.apply(&g, act)?;
        resid.iter_mut().zip(&out).for_each(|(r, o)| *r += o);
    }
    let f = rmsnorm_row(&resid, qm.norm_f.data(), cfg.norm_eps);
    if let Some(p) = probe.as_mut() {
        p(ActSite::LmHead, cfg.n_layers, &f);
    }
    qm.lm_head.apply(&f, act)
}

impl QuantizedModel {
    pub fn perplexity(&self, tokens: &[usize]) -> Result<f64> {
        let mut st = QDecodeState::new(self);
        crate::model::decode::perplexity_with(tokens, self.cfg.vocab_size, |t| {
            qdecode_step(self, &mut st, t)
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let cfg = &self.cfg;
        let mut c = Container::new();
        c.metadata = serde_json::json!({
            "format": FORMAT_TAG,
            "spec": self.spec,
            "recipe": self.recipe,
            "source_hash": self.source_hash,
        });
        let push_w = |c: &mut Container, name: &str, w: &QWeight| match w {
            QWeight::Quant(q) => c.push_quantized(name, q),
            QWeight::Float(t) => c.push_f32(name, t),
        };
        c.push_f32("embedding", &self.embedding)?;
        for (l, layer) in self.layers.iter().enumerate() {
            let names: Vec<String> = layer_tensor_specs(cfg, l)
                .into_iter()
                .map(|s| s.0)
                .collect();
            c.push_f32(&names[0], &layer.norm1)?;
            push_w(&mut c, &names[1], &layer.w_in)?;
            match &layer.conv_weight_q {
                Some(q) => c.push_quantized(&names[2], q)?,
                None => c.push_f32(&names[2], &layer.conv_weight)?,
            }
            c.push_f32(&names[3], &layer.conv_bias)?;
            c.push_f32(&names[4], &layer.a_log)?;
            c.push_f32(&names[5], &layer.dt_bias)?;
            c.push_f32(&names[6], &layer.d_skip)?;
            c.push_f32(&names[7], &layer.norm2)?;
            push_w(&mut c, &names[8], &layer.w_out)?;
        }
        c.push_f32("norm_f", &self.norm_f)?;
        push_w(&mut c, "lm_head", &self.lm_head)?;
        Ok(c)
    }

    pub fn from_container(c: &Container, cfg: &MambaConfig) -> Result<Self> {
        cfg.validate()?;
        let meta = &c.metadata;
        if meta.get("format").and_then(|f| f.as_str()) != Some(FORMAT_TAG) {
            return Err(Error::Container("not a quantized model container".into()));
        }
        let spec: QuantSpec = serde_json::from_value(meta["spec"].clone())?;
        spec.validate()?;
        let recipe: RotationRecipe = serde_json::from_value(meta["recipe"].clone())?;
        recipe.validate(cfg)?;
        let source_hash = meta["source_hash"].as_str().unwrap_or_default().to_string();
        let get_w = |name: &str, in_out: &[usize]| -> Result<QWeight> {
            match spec.linear_bits {
                Some(_) => {
                    let q = c.get_quantized(name)?;
                    let expect = [in_out[1], in_out[0]];
                    if q.shape != expect {
                        return Err(Error::TensorShape {
                            name: name.into(),
                            expected: expect.to_vec(),
                            got: q.shape.clone(),
                        });
                    }
                    Ok(QWeight::Quant(q))
                }
                None => Ok(QWeight::Float(c.get_f32_shaped(name, in_out)?)),
            }
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let s = layer_tensor_specs(cfg, l);
            let f = |i: usize| c.get_f32_shaped(&s[i].0, &s[i].1);
            let (conv_weight_q, conv_weight) =
                if spec.quantize_conv_weights && spec.linear_bits.is_some() {
                    let q = c.get_quantized(&s[2].0)?;
                    let w = dequantize(&q);
                    (Some(q), w)
                } else {
                    (None, f(2)?)
                };
            layers.push(QLayer {
                norm1: f(0)?,
                w_in: get_w(&s[1].0, &s[1].1)?,
                conv_weight_q,
                conv_weight,
                conv_bias: f(3)?,
                a_log: f(4)?,
                dt_bias: f(5)?,
                d_skip: f(6)?,
                norm2: f(7)?,
                w_out: get_w(&s[8].0, &s[8].1)?,
            });
        }
        Ok(QuantizedModel {
            cfg: cfg.clone(),
            spec,
            recipe,
            source_hash,
            embedding: c.get_f32_shaped("embedding", &[cfg.vocab_size, cfg.d_model])?,
            layers,
            norm_f: c.get_f32_shaped("norm_f", &[cfg.d_model])?,
            lm_head: get_w("lm_head", &[cfg.d_model, cfg.vocab_size])?,
        })
    }
}

/// Writes `config.json` and `model.lmb` into `dir`.
pub fn save_quantized(qm: &QuantizedModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_config(&qm.cfg, dir.join(CONFIG_FILE))?;
    qm.to_container()?.write(dir.join(MODEL_FILE))
}

pub fn load_quantized(dir: impl AsRef<Path>) -> Result<QuantizedModel> {
    let dir = dir.as_ref();
    let cfg = load_config(dir.join(CONFIG_FILE))?;
    QuantizedModel::from_container(&Container::read(dir.join(MODEL_FILE))?, &cfg)
}
