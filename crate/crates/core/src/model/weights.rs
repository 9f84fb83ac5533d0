use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::MambaConfig;
use super::container::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub norm1: Tensor,
    /// `[d_model × in_proj_dim]`, output order `Z, X, B, C, Δ`.
    pub w_in: Tensor,
    /// `[conv_channels × conv_kernel]`.
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub a_log: Tensor,
    pub dt_bias: Tensor,
    pub d_skip: Tensor,
    /// Gated RMSNorm weight over `d_inner`.
    pub norm2: Tensor,
    /// `[d_inner × d_model]`.
    pub w_out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    /// `[vocab × d_model]`.
    pub embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub norm_f: Tensor,
    /// `[d_model × vocab]`.
    pub lm_head: Tensor,
}

/// Layer tensor names and shapes in container order.
pub fn layer_tensor_specs(cfg: &MambaConfig, l: usize) -> Vec<(String, Vec<usize>)> {
    let (d, inner, h) = (cfg.d_model, cfg.d_inner(), cfg.n_heads);
    vec![
        (format!("norm1.{l}"), vec![d]),
        (format!("W_in.{l}"), vec![d, cfg.in_proj_dim()]),
        (
            format!("conv_weight.{l}"),
            vec![cfg.conv_channels(), cfg.conv_kernel],
        ),
        (format!("conv_bias.{l}"), vec![cfg.conv_channels()]),
        (format!("A_log.{l}"), vec![h]),
        (format!("dt_bias.{l}"), vec![h]),
        (format!("D.{l}"), vec![h]),
        (format!("norm2.{l}"), vec![inner]),
        (format!("W_out.{l}"), vec![inner, d]),
    ]
}

/// Knobs for the seeded synthetic weight generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub seed: u64,
    /// Residual channels whose embedding column is amplified.
    pub outlier_channels: usize,
    pub outlier_scale: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            seed: 0,
            outlier_channels: 2,
            outlier_scale: 8.0,
        }
    }
}

fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| f32_round(rng.random_range(lo..hi)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite")
}

impl LayerWeights {
    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.norm1,
            &self.w_in,
            &self.conv_weight,
            &self.conv_bias,
            &self.a_log,
            &self.dt_bias,
            &self.d_skip,
            &self.norm2,
            &self.w_out,
        ]
    }
}

impl ModelWeights {
    /// All-zero projections with unit norms, `A_log = 0` and `D = 0`.
    pub fn zeros(cfg: &MambaConfig) -> Self {
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let s = layer_tensor_specs(cfg, l);
                LayerWeights {
                    norm1: Tensor::full(&s[0].1, 1.0),
                    w_in: Tensor::zeros(&s[1].1),
                    conv_weight: Tensor::zeros(&s[2].1),
                    conv_bias: Tensor::zeros(&s[3].1),
                    a_log: Tensor::zeros(&s[4].1),
                    dt_bias: Tensor::zeros(&s[5].1),
                    d_skip: Tensor::zeros(&s[6].1),
                    norm2: Tensor::full(&s[7].1, 1.0),
                    w_out: Tensor::zeros(&s[8].1),
                }
            })
            .collect();
        ModelWeights {
            embedding: Tensor::zeros(&[cfg.vocab_size, cfg.d_model]),
            layers,
            norm_f: Tensor::full(&[cfg.d_model], 1.0),
            lm_head: Tensor::zeros(&[cfg.d_model, cfg.vocab_size]),
        }
    }

    /// Seeded synthetic weights. Values are `f32`-representable so that a
    /// save/load cycle reproduces them exactly.
    pub fn random(cfg: &MambaConfig, opts: &InitOptions) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let d = cfg.d_model;
        let inner = cfg.d_inner();
        let mut embedding = uniform(&mut rng, &[cfg.vocab_size, d], -1.0, 1.0);
        let n_out = opts.outlier_channels.min(d);
        let mut channels: Vec<usize> = (0..d).collect();
        for i in 0..n_out {
            let j = rng.random_range(i..d);
            channels.swap(i, j);
        }
        for &c in &channels[..n_out] {
            for r in 0..cfg.vocab_size {
                let v = &mut embedding.data_mut()[r * d + c];
                *v = f32_round(*v * opts.outlier_scale);
            }
        }
        let w_in_bound = 1.0 / (d as f64).sqrt();
        let w_out_bound = 1.0 / (inner as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let s = layer_tensor_specs(cfg, l);
            let a_log = uniform(&mut rng, &s[4].1, 0.0, 16f64.ln());
            // dt in [1e-3, 1e-1] mapped through the inverse softplus
            let dt_bias = uniform(&mut rng, &s[5].1, 1e-3f64.ln(), 1e-1f64.ln())
                .map(|log_dt| f32_round((log_dt.exp()).exp_m1().ln()));
            layers.push(LayerWeights {
                norm1: uniform(&mut rng, &s[0].1, 0.5, 1.5),
                w_in: uniform(&mut rng, &s[1].1, -w_in_bound, w_in_bound),
                conv_weight: uniform(&mut rng, &s[2].1, -0.5, 0.5),
                conv_bias: uniform(&mut rng, &s[3].1, -0.1, 0.1),
                a_log,
                dt_bias,
                d_skip: uniform(&mut rng, &s[6].1, 0.5, 1.5),
                norm2: uniform(&mut rng, &s[7].1, 0.5, 1.5),
                w_out: uniform(&mut rng, &s[8].1, -w_out_bound, w_out_bound),
            });
        }
        let norm_f = uniform(&mut rng, &[d], 0.5, 1.5);
        let lm_head = uniform(&mut rng, &[d, cfg.vocab_size], -w_in_bound, w_in_bound);
        let w = ModelWeights {
            embedding,
            layers,
            norm_f,
            lm_head,
        };
        w.validate(cfg)?;
        Ok(w)
    }

    /// Named tensors in container order.
    pub fn named_tensors(&self, cfg: &MambaConfig) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            for ((name, _), t) in layer_tensor_specs(cfg, l).into_iter().zip(layer.tensors()) {
                out.push((name, t));
            }
        }
        out.push(("norm_f".to_string(), &self.norm_f));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn validate(&self, cfg: &MambaConfig) -> Result<()> {
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Config {
                field: "n_layers".into(),
                reason: format!("weights have {} layers", self.layers.len()),
            });
        }
        let mut expected = vec![("embedding".to_string(), vec![cfg.vocab_size, cfg.d_model])];
        for l in 0..cfg.n_layers {
            expected.extend(layer_tensor_specs(cfg, l));
        }
        expected.push(("norm_f".into(), vec![cfg.d_model]));
        expected.push(("lm_head".into(), vec![cfg.d_model, cfg.vocab_size]));
        for ((name, shape), (_, t)) in expected.into_iter().zip(self.named_tensors(cfg)) {
            if t.shape() != shape.as_slice() {
                return Err(Error::TensorShape {
                    name,
                    expected: shape,
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn to_container(&self, cfg: &MambaConfig) -> Result<Container> {
        self.validate(cfg)?;
        let mut c = Container::new();
        for (name, t) in self.named_tensors(cfg) {
            c.push_f32(&name, t)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container, cfg: &MambaConfig) -> Result<Self> {
        cfg.validate()?;
        let embedding = c.get_f32_shaped("embedding", &[cfg.vocab_size, cfg.d_model])?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let mut ts = layer_tensor_specs(cfg, l)
                .into_iter()
                .map(|(name, shape)| c.get_f32_shaped(&name, &shape))
                .collect::<Result<Vec<_>>>()?
                .into_iter();
            let mut next = || ts.next().expect("nine layer tensors");
            layers.push(LayerWeights {
                norm1: next(),
                w_in: next(),
                conv_weight: next(),
                conv_bias: next(),
                a_log: next(),
                dt_bias: next(),
                d_skip: next(),
                norm2: next(),
                w_out: next(),
            });
        }
        Ok(ModelWeights {
            embedding,
            layers,
            norm_f: c.get_f32_shaped("norm_f", &[cfg.d_model])?,
            lm_head: c.get_f32_shaped("lm_head", &[cfg.d_model, cfg.vocab_size])?,
        })
    }
}

pub fn save_weights(path: impl AsRef<Path>, w: &ModelWeights, cfg: &MambaConfig) -> Result<()> {
    w.to_container(cfg)?.write(path)
}

pub fn load_weights(path: impl AsRef<Path>, cfg: &MambaConfig) -> Result<ModelWeights> {
    ModelWeights::from_container(&Container::read(path)?, cfg)
}
