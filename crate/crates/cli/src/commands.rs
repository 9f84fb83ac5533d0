//! Command implementations. Each returns its outcome and a manifest.

use std::path::{Path, PathBuf};

use lightmamba_core::corpus::BigramSource;
use lightmamba_core::hadamard::sylvester;
use lightmamba_core::model::decode::greedy_with;
use lightmamba_core::model::{
    argmax, decode_step, greedy_decode, load_config, load_weights, perplexity, save_config,
    save_weights, DecodeState, InitOptions, MambaConfig, ModelWeights,
};
use lightmamba_core::qengine::{
    load_quantized, qdecode_step, quantize_model, save_quantized, QDecodeState, QuantSpec,
    QuantizedModel, CONFIG_FILE, MODEL_FILE,
};
use lightmamba_core::rotation::{
    build_with_recipe, ssm_rotation_counterexample, verify_invariance, RotationRecipe,
};
use lightmamba_sim::{simulate, BitWidths, HwConfig, SimOptions, SimReport, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::{
    CheckArgs, EvalArgs, GenCorpusArgs, InitArgs, QuantizeArgs, SimBits, SimulateArgs,
};
use crate::error::{input_err, io_err, CliError, Result};
use crate::manifest::RunManifest;
use crate::render;

/// FP weight file inside a model directory.
pub const WEIGHTS_FILE: &str = "weights.lmb";
pub const RECIPE_FILE: &str = "recipe.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
    Infeasible,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::CheckFailed => 1,
            Outcome::Infeasible => 3,
        }
    }
}

/// What a command produced: its outcome, manifest and where the manifest
/// goes when `--manifest` is not given (`None` means stderr).
pub struct Run {
    pub outcome: Outcome,
    pub manifest: RunManifest,
    pub manifest_path: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn init(args: &InitArgs) -> Result<Run> {
    let mut m = RunManifest::new("init", args);
    let cfg = match &args.config {
        Some(p) => {
            m.input_file("config", p)?;
            load_config(p)?
        }
        None => {
            let cfg = MambaConfig::toy();
            m.input_preset("config", "toy", &cfg.to_json());
            cfg
        }
    };
    let w = ModelWeights::random(
        &cfg,
        &InitOptions {
            seed: args.seed,
            outlier_channels: args.outlier_channels,
            outlier_scale: args.outlier_scale,
        },
    )?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let (cfg_path, w_path) = (args.out.join(CONFIG_FILE), args.out.join(WEIGHTS_FILE));
    save_config(&cfg, &cfg_path)?;
    save_weights(&w_path, &w, &cfg)?;
    m.output(cfg_path);
    m.output(w_path);
    Ok(Run {
        outcome: Outcome::Success,
        manifest: m,
        manifest_path: Some(args.out.join(MANIFEST_FILE)),
    })
}

pub fn gen_corpus(args: &GenCorpusArgs) -> Result<Run> {
    let mut m = RunManifest::new("gen-corpus", args);
    let src = BigramSource::random(args.vocab, args.fanout, args.seed)?;
    let tokens = src.sample(args.len, args.seed.wrapping_add(1));
    write_text(&args.out, &format_corpus(&tokens))?;
    m.output(args.out.clone());
    Ok(Run {
        outcome: Outcome::Success,
        manifest: m,
        manifest_path: Some(sidecar(&args.out, ".manifest.json")),
    })
}

pub fn format_corpus(tokens: &[usize]) -> String {
    tokens.iter().map(|t| format!("{t}\n")).collect()
}

/// Parses one token id per line. Blank lines are skipped; ids must be below
/// `vocab`.
pub fn parse_corpus(text: &str, vocab: usize, path: &Path) -> Result<Vec<usize>> {
    let mut tokens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CliError::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let t: usize = line
            .parse()
            .map_err(|_| err(format!("`{line}` is not a token id")))?;
        if t >= vocab {
            return Err(err(format!(
                "token id {t} out of range for vocabulary of {vocab}"
            )));
        }
        tokens.push(t);
    }
    if tokens.is_empty() {
        return Err(CliError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(tokens)
}

pub fn quantize(args: &QuantizeArgs) -> Result<Run> {
    let mut m = RunManifest::new("quantize", args);
    m.input_file("config", &args.config)?;
    m.input_file("weights", &args.weights)?;
    let cfg = load_config(&args.config)?;
    let w = load_weights(&args.weights, &cfg)?;
    let mut spec = QuantSpec::new(args.scheme.bits(), args.quantize_ssm, args.rotate)?;
    spec.group_size = args.group_size;
    spec.validate()?;
    let qm = quantize_model(&w, &cfg, &spec)?;
    save_quantized(&qm, &args.out)?;
    let recipe_path = args.out.join(RECIPE_FILE);
    let recipe = serde_json::to_string_pretty(&qm.recipe).expect("recipe serializes");
    write_text(&recipe_path, &(recipe + "\n"))?;
    m.output(args.out.join(CONFIG_FILE));
    m.output(args.out.join(MODEL_FILE));
    m.output(recipe_path);
    Ok(Run {
        outcome: Outcome::Success,
        manifest: m,
        manifest_path: Some(args.out.join(MANIFEST_FILE)),
    })
}

enum Model {
    Fp {
        cfg: MambaConfig,
        w: Box<ModelWeights>,
    },
    Quant(Box<QuantizedModel>),
}

impl Model {
    fn cfg(&self) -> &MambaConfig {
        match self {
            Model::Fp { cfg, .. } => cfg,
            Model::Quant(q) => &q.cfg,
        }
    }

    fn perplexity(&self, tokens: &[usize]) -> Result<f64> {
        Ok(match self {
            Model::Fp { cfg, w } => perplexity(w, cfg, tokens)?,
            Model::Quant(q) => q.perplexity(tokens)?,
        })
    }

    fn stepper(&self) -> Box<dyn FnMut(usize) -> lightmamba_core::Result<Vec<f64>> + '_> {
        match self {
            Model::Fp { cfg, w } => {
                let mut st = DecodeState::new(cfg);
                Box::new(move |t| decode_step(w, cfg, &mut st, t))
            }
            Model::Quant(q) => {
                let mut st = QDecodeState::new(q);
                Box::new(move |t| qdecode_step(q, &mut st, t))
            }
        }
    }
}

fn load_fp_dir(dir: &Path, m: &mut RunManifest, role: &str) -> Result<Model> {
    let (cfg_path, w_path) = (dir.join(CONFIG_FILE), dir.join(WEIGHTS_FILE));
    m.input_file(&format!("{role}.config"), &cfg_path)?;
    m.input_file(&format!("{role}.weights"), &w_path)?;
    let cfg = load_config(&cfg_path)?;
    let w = load_weights(&w_path, &cfg)?;
    Ok(Model::Fp {
        cfg,
        w: Box::new(w),
    })
}

fn load_quant_dir(dir: &Path, m: &mut RunManifest, role: &str) -> Result<Model> {
    m.input_file(&format!("{role}.config"), &dir.join(CONFIG_FILE))?;
    m.input_file(&format!("{role}.weights"), &dir.join(MODEL_FILE))?;
    Ok(Model::Quant(Box::new(load_quantized(dir)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub model: PathBuf,
    pub perplexity: f64,
    /// Fraction of positions where both models predict the same next token.
    pub argmax_agreement: f64,
    /// `perplexity / reference perplexity - 1`.
    pub perplexity_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub model: PathBuf,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<QuantSpec>,
    pub tokens: usize,
    pub perplexity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceMetrics>,
}

fn argmax_agreement(a: &Model, b: &Model, tokens: &[usize]) -> Result<f64> {
    let (mut sa, mut sb) = (a.stepper(), b.stepper());
    let mut agree = 0usize;
    for &t in tokens {
        if argmax(&sa(t)?) == argmax(&sb(t)?) {
            agree += 1;
        }
    }
    Ok(agree as f64 / tokens.len() as f64)
}

pub fn eval(args: &EvalArgs) -> Result<(Run, EvalMetrics)> {
    let mut m = RunManifest::new("eval", args);
    let model = if args.quantized {
        load_quant_dir(&args.model, &mut m, "model")?
    } else {
        load_fp_dir(&args.model, &mut m, "model")?
    };
    m.input_file("corpus", &args.corpus)?;
    let text = std::fs::read_to_string(&args.corpus).map_err(io_err(&args.corpus))?;
    let tokens = parse_corpus(&text, model.cfg().vocab_size, &args.corpus)?;
    let ppl = model.perplexity(&tokens)?;
    let reference = match &args.reference {
        Some(dir) => {
            let r = load_fp_dir(dir, &mut m, "reference")?;
            if r.cfg() != model.cfg() {
                return Err(input_err("reference", "model configs differ"));
            }
            let rp = r.perplexity(&tokens)?;
            Some(ReferenceMetrics {
                model: dir.clone(),
                perplexity: rp,
                argmax_agreement: argmax_agreement(&model, &r, &tokens)?,
                perplexity_change: ppl / rp - 1.0,
            })
        }
        None => None,
    };
    let metrics = EvalMetrics {
        model: args.model.clone(),
        kind: if args.quantized { "quantized" } else { "fp" }.into(),
        spec: match &model {
            Model::Quant(q) => Some(q.spec),
            Model::Fp { .. } => None,
        },
        tokens: tokens.len(),
        perplexity: ppl,
        reference,
    };
    Ok((
        Run {
            outcome: Outcome::Success,
            manifest: m,
            manifest_path: None,
        },
        metrics,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equivalence {
    pub max_diff: f64,
    pub greedy_identical: bool,
    pub text: String,
    pub pass: bool,
}

/// Greedy tokens generated after the prompt.
const GREEDY_STEPS: usize = 32;
/// Order of the Hadamard matrix in the state-rotation demonstration.
const DEMO_ORDER_LOG2: u32 = 3;

pub fn check_equivalence(args: &CheckArgs) -> Result<(Run, Equivalence)> {
    let mut m = RunManifest::new("check-equivalence", args);
    m.input_file("config", &args.config)?;
    m.input_file("weights", &args.weights)?;
    let cfg = load_config(&args.config)?;
    let w = load_weights(&args.weights, &cfg)?;
    let (recipe, recipe_name) = match &args.recipe {
        Some(p) => {
            m.input_file("recipe", p)?;
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            let r: RotationRecipe =
                serde_json::from_str(&text).map_err(|source| CliError::Json {
                    path: p.clone(),
                    source,
                })?;
            (r, p.display().to_string())
        }
        None => (RotationRecipe::standard(&cfg)?, "standard".to_string()),
    };
    let rot = build_with_recipe(&w, &cfg, &recipe)?;
    let max_diff = verify_invariance(&w, &rot, &cfg, args.tokens, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let prompt: Vec<usize> = (0..4)
        .map(|_| rng.random_range(0..cfg.vocab_size))
        .collect();
    let (a, _) = greedy_decode(&w, &cfg, &prompt, GREEDY_STEPS)?;
    let (b, _) = greedy_with(&cfg, &prompt, GREEDY_STEPS, |s, t| {
        rot.decode_step(&cfg, s, t)
    })?;
    let greedy_identical = a == b;

    let h = sylvester(DEMO_ORDER_LOG2)?;
    let n = h.order();
    let mut vec =
        |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let (hv, xv, bv, av) = (
        vec(-1.0, 1.0),
        vec(-1.0, 1.0),
        vec(-1.0, 1.0),
        vec(0.05, 0.95),
    );
    let varying = ssm_rotation_counterexample(&h, &av, &hv, &bv, &xv)?;
    let scalar = ssm_rotation_counterexample(&h, &vec![av[0]; n], &hv, &vec![bv[0]; n], &xv)?;

    let pass = max_diff <= args.tolerance;
    let mut text = format!("recipe: {recipe_name}\n");
    text.push_str(&format!(
        "max |logit diff| over {} tokens: {max_diff:.3e} (tolerance {:.1e})\n",
        args.tokens, args.tolerance
    ));
    text.push_str(&format!(
        "greedy decode ({GREEDY_STEPS} tokens): {}\n",
        if greedy_identical {
            "identical"
        } else {
            "differs"
        }
    ));
    text.push_str(&format!(
        "\nrotating the SSM state update with the {n}x{n} Hadamard matrix:\n"
    ));
    text.push_str(&render::counterexample_table(&[
        ("per-channel", varying),
        ("scalar", scalar),
    ]));
    text.push_str(&format!(
        "\nresult: {}\n",
        if pass { "PASS" } else { "FAIL" }
    ));
    Ok((
        Run {
            outcome: if pass {
                Outcome::Success
            } else {
                Outcome::CheckFailed
            },
            manifest: m,
            manifest_path: None,
        },
        Equivalence {
            max_diff,
            greedy_identical,
            text,
            pass,
        },
    ))
}

fn resolve_hw(spec: &str, m: &mut RunManifest) -> Result<HwConfig> {
    if let Some(hw) = HwConfig::preset(spec) {
        m.input_preset("hw", spec, &hw.to_json());
        return Ok(hw);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(input_err(
            "hw",
            format!("`{spec}` is neither a preset (vck190, u280) nor a file"),
        ));
    }
    m.input_file("hw", path)?;
    Ok(HwConfig::load(path)?)
}

pub fn model_preset(name: &str) -> Option<MambaConfig> {
    match name {
        "toy" => Some(MambaConfig::toy()),
        "mamba2-2.7b" | "2.7b" => Some(MambaConfig::mamba2_2_7b()),
        _ => None,
    }
}

fn resolve_model(spec: &str, m: &mut RunManifest) -> Result<MambaConfig> {
    if let Some(cfg) = model_preset(spec) {
        m.input_preset("model_config", spec, &cfg.to_json());
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(input_err(
            "model-config",
            format!("`{spec}` is neither a preset (toy, mamba2-2.7b) nor a file"),
        ));
    }
    m.input_file("model_config", path)?;
    Ok(load_config(path)?)
}

/// Output of `simulate`: the reports plus text for stdout and stderr.
pub struct Simulation {
    pub reports: Vec<SimReport>,
    pub stdout: String,
    pub stderr: String,
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<(Run, Simulation)> {
    let mut m = RunManifest::new("simulate", args);
    let hw = resolve_hw(&args.hw, &mut m)?;
    let model = resolve_model(&args.model_config, &mut m)?;
    let bits = match args.bits {
        SimBits::W4a4 => BitWidths::w4a4(),
        SimBits::W8a8 => BitWidths::w8a8(),
        SimBits::Fp16 => BitWidths::fp16(),
    };
    let modes = args.schedule.modes();
    let base = Workload {
        tile: args.tile,
        group_size: args.group_size,
        online_rotation: !args.no_online_rotation,
        ..Workload::new(model, bits, modes[0])
    };
    base.validate()?;
    let want_timeline = args.timeline || args.timeline_text.is_some();
    let mut reports = Vec::with_capacity(modes.len());
    for mode in modes {
        reports.push(simulate(
            &base.with_schedule(mode),
            &hw,
            SimOptions {
                timeline: want_timeline,
            },
        )?);
    }
    if let Some(path) = &args.timeline_text {
        let text: String = reports
            .iter()
            .map(|r| format!("# {}\n{}", r.schedule, render::timeline(&r.timeline)))
            .collect();
        write_text(path, &text)?;
        m.output(path.clone());
    }
    if !args.timeline {
        reports.iter_mut().for_each(|r| r.timeline.clear());
    }
    let json = if reports.len() == 1 {
        reports[0].to_json()
    } else {
        serde_json::to_string_pretty(&reports).expect("reports serialize")
    };
    let mut stdout = String::new();
    if reports.len() > 1 {
        stdout.push_str(&render::comparison_table(&reports));
    }
    let manifest_path = match &args.report {
        Some(path) => {
            write_text(path, &(json + "\n"))?;
            m.output(path.clone());
            Some(sidecar(path, ".manifest.json"))
        }
        None => {
            if reports.len() == 1 {
                stdout.push_str(&json);
                stdout.push('\n');
            }
            None
        }
    };
    let mut stderr = String::new();
    for r in &reports {
        for reason in &r.infeasible_reasons {
            stderr.push_str(&format!("infeasible ({}): {reason}\n", r.schedule));
        }
    }
    let outcome = if reports.iter().all(|r| r.feasible) {
        Outcome::Success
    } else {
        Outcome::Infeasible
    };
    Ok((
        Run {
            outcome,
            manifest: m,
            manifest_path,
        },
        Simulation {
            reports,
            stdout,
            stderr,
        },
    ))
}
