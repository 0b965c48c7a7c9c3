use std::fs;
use std::io::{self, Write};
use std::path::Path;

use kcl_core::io::{read_emb, read_labels};
use kcl_core::{
    accuracy, gen_synth, run, validate_run, ClassWeights, HpMode, HyperParams, KclError, LabelMatrix,
    Mode, Result, RuleKind, RunBundle, RunConfig, SelectionRule, SynthSpec, ValidationSplit,
};
use log::{debug, info};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::{Cli, Command, EvalArgs, RunArgs, SynthArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // only fails if a global pool already exists, which cannot happen here
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| KclError::InvalidParam(e.to_string()))?;
    }
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

/// Everything a run needs, loaded and checked once.
struct Inputs {
    bundle: RunBundle,
    val: Option<ValidationSplit>,
    truth: Option<Vec<usize>>,
}

fn load(a: &RunArgs) -> Result<Inputs> {
    let test = read_emb(&a.features, a.normalize)?;
    let weights = ClassWeights::new(read_emb(&a.weights, a.normalize)?)?;
    let classes = weights.classes();
    debug!("loaded {} test rows, {} classes, dim {}", test.rows(), classes, weights.dim());

    let cache = match (&a.cache_features, &a.cache_labels) {
        (Some(f), Some(l)) => Some((read_emb(f, a.normalize)?, LabelMatrix::new(read_labels(l)?, classes)?)),
        (Some(_), None) => return Err(KclError::MissingLabels),
        (None, Some(_)) => return Err(KclError::InvalidParam("--cache-labels needs --cache-features".into())),
        (None, None) => None,
    };
    let (cache, cache_labels) = cache.unzip();
    let bundle = validate_run(test, weights, cache, cache_labels)?;

    let val = match (&a.val_features, &a.val_labels) {
        (Some(f), Some(l)) => Some(ValidationSplit {
            features: read_emb(f, a.normalize)?,
            labels: LabelMatrix::new(read_labels(l)?, classes)?,
        }),
        (None, None) => None,
        _ => return Err(KclError::InvalidParam("--val-features and --val-labels go together".into())),
    };

    let truth = match &a.labels {
        Some(p) => {
            let l = read_labels(p)?;
            if l.len() != bundle.test().rows() {
                return Err(KclError::LengthMismatch(l.len(), bundle.test().rows()));
            }
            Some(LabelMatrix::new(l, classes)?.labels().to_vec())
        }
        None => None,
    };
    Ok(Inputs { bundle, val, truth })
}

fn config(a: &RunArgs, kind: RuleKind) -> Result<RunConfig> {
    if a.steps == 0 {
        return Err(KclError::InvalidParam("--steps must be >= 1".into()));
    }
    if a.budget == Some(0) {
        return Err(KclError::InvalidParam("--budget must be >= 1".into()));
    }
    let mode: Mode = a.mode.into();
    if mode == Mode::FewShot && a.cache_features.is_none() {
        return Err(KclError::MissingCache);
    }
    let mut cfg = RunConfig::new(mode, SelectionRule::new(kind, a.k)?, a.steps);
    cfg.hp = HyperParams {
        alpha: a.alpha,
        beta: a.beta,
        lambda: a.lambda,
        mu: a.mu,
    };
    cfg.hp.validate()?;
    cfg.hp_mode = if a.search { HpMode::ValidationSearch } else { HpMode::Fixed };
    cfg.modality = a.modality.into();
    cfg.budget = a.budget;
    Ok(cfg)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let cfg = config(a, a.rule.map_or(RuleKind::Mutual, Into::into))?;
    let inputs = load(a)?;
    let report = run(&inputs.bundle, &cfg, inputs.val.as_ref(), inputs.truth.as_deref())?;
    emit(&report, a.out.as_deref())
}

fn cmd_ablate(a: &RunArgs) -> Result<()> {
    let rules: Vec<RuleKind> = match a.rule.map(RuleKind::from) {
        None => RuleKind::ALL.to_vec(),
        Some(RuleKind::Mutual) => vec![RuleKind::Mutual],
        Some(r) => vec![RuleKind::Mutual, r],
    };
    let configs = rules.iter().map(|&r| config(a, r)).collect::<Result<Vec<_>>>()?;
    let inputs = load(a)?;
    let mut out = Map::new();
    for (rule, cfg) in rules.iter().zip(&configs) {
        let report = run(&inputs.bundle, cfg, inputs.val.as_ref(), inputs.truth.as_deref())?;
        if let Some(acc) = report.accuracy {
            info!("{rule}: accuracy {acc:.4}");
        }
        out.insert(rule.name().to_owned(), to_value(&report));
    }
    emit(&Value::Object(out), a.out.as_deref())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        samples_per_class: a.samples_per_class,
        shots: a.shots,
        val_per_class: a.val_per_class,
        center_separation: a.separation,
        noise_sigma: a.sigma,
        center_bias: a.bias,
        imbalance: a.imbalance,
        seed: a.seed,
    };
    let data = gen_synth(&spec)?;
    let files = data.write_dir(&a.out)?;
    info!("wrote {} files to {}", files.len(), a.out.display());
    emit(&json!({ "out": a.out, "files": files }), None)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|source| KclError::Io {
        path: a.report.clone(),
        source,
    })?;
    let bad = |msg: String| KclError::Parse {
        path: a.report.clone(),
        msg,
    };
    let report: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let truth = read_labels(&a.labels)?;

    // a single run report, or an ablation map of them
    let result = if report.get("predictions").is_some() {
        score(&report, &truth).map_err(|e| relabel(e, &bad))?
    } else if let Value::Object(runs) = &report {
        let mut out = Map::new();
        for (name, r) in runs {
            out.insert(name.clone(), score(r, &truth).map_err(|e| relabel(e, &bad))?);
        }
        Value::Object(out)
    } else {
        return Err(bad("expected a report object".into()));
    };
    emit(&result, a.out.as_deref())
}

fn score(report: &Value, truth: &[usize]) -> Result<Value> {
    let pred: Vec<usize> = report
        .get("predictions")
        .cloned()
        .and_then(|p| serde_json::from_value(p).ok())
        .ok_or_else(|| KclError::InvalidParam("missing or malformed predictions".into()))?;
    let acc = accuracy(&pred, truth)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(json!({ "accuracy": acc, "correct": correct, "total": truth.len() }))
}

// A malformed report file is an input problem, not a parameter problem.
fn relabel(e: KclError, bad: &impl Fn(String) -> KclError) -> KclError {
    match e {
        KclError::InvalidParam(msg) => bad(msg),
        other => other,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn emit<T: Serialize>(v: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("report types serialize");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).map_err(|source| KclError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    // a closed pipe (`kcl run ... | head`) is not an error
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(KclError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}
