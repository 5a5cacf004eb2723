//! End-to-end workflows behind the subcommands: data generation, stage-1
//! pretraining, stage-2 adaptation for every task, evaluation and inference.

use serde::Serialize;
use softsense_core::datagen::{generate_process, split, Dataset, NormStats, SyntheticConfig};
use softsense_core::metrics::{compute_metrics, macro_average, per_variable};
use softsense_core::model::{is_stage2_extra, PRETRAIN_HEAD, TASK_HEAD};
use softsense_core::prompts::{
    clock_time, pad_left, render_prefix_prompt, render_text_prompt, tokenize_text, PromptTemplate, SHORT_BACKGROUND, SHORT_INSTRUCTION,
};
use softsense_core::tasks::anomaly::{
    calibrate_threshold, covering_starts, element_errors, flag, inject_chunked, AnomalySpec, Reconstruction,
};
use softsense_core::tasks::impute::{evaluate_imputation, impute, mask_random, MaskedReconstruction};
use softsense_core::tasks::pretrain::Autoregressive;
use softsense_core::tasks::regress::{predict, Regression};
use softsense_core::tasks::{evaluate_loss, train, Objective, TrainReport, WindowSet};
use softsense_core::{Batch, Graph, Model, Series, Tensor, WindowSample};

use crate::checkpoint::{AnomalyCalibration, Checkpoint, PromptSpec, Stage, Task};
use crate::config::{PeftMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{AnomalyReport, ClassificationRecord, DetectionRecord, ImputationRecord, MetricsRecord};

/// Extra token room reserved beyond the longest text prompt seen in training data.
pub const PROMPT_SLACK: usize = 16;

/// Spike size (in training standard deviations) of the large-spike benchmark.
pub const LARGE_SPIKE: f64 = 10.0;

/// Which chronological block of a dataset a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

pub fn select(data: &Dataset, which: Split) -> CliResult<Dataset> {
    if which == Split::All {
        return Ok(data.clone());
    }
    let s = split(data)?;
    Ok(match which {
        Split::Train => s.train,
        Split::Val => s.val,
        Split::Test => s.test,
        Split::All => unreachable!(),
    })
}

pub fn generate(samples: usize, seed: u64) -> CliResult<Dataset> {
    Ok(generate_process(&SyntheticConfig { samples, seed, ..SyntheticConfig::default() })?)
}

/// A trained checkpoint with its training history.
#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

fn normalized(raw: &Dataset, stats: &NormStats) -> CliResult<Series> {
    let series = if raw.labels().is_some() && stats.label_mean.is_none() {
        Series { labels: None, ..raw.series.clone() }
    } else {
        raw.series.clone()
    };
    Ok(stats.apply(&series)?)
}

fn norm_stats(ck: &Checkpoint) -> CliResult<&NormStats> {
    ck.norm.as_ref().ok_or_else(|| CliError::data("checkpoint carries no normalisation statistics"))
}

fn check_context(tokens: usize, n_ctx: usize, what: &str) -> CliResult<()> {
    if tokens > n_ctx {
        return Err(CliError::usage(format!("{what} needs {tokens} positions but n_ctx is {n_ctx}")));
    }
    Ok(())
}

fn variable_names(vars: usize) -> Vec<String> {
    (1..=vars).map(|i| format!("V{i}")).collect()
}

fn short_template(vars: usize) -> PromptTemplate {
    let names = variable_names(vars);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    PromptTemplate::new(SHORT_BACKGROUND, SHORT_INSTRUCTION, &refs)
}

/// Raw-unit text rendering of the window ending at `end`.
fn text_prompt(template: &PromptTemplate, raw: &Dataset, steps: usize, end: usize) -> CliResult<Vec<usize>> {
    let m = raw.series.vars;
    let start = end + 1 - steps;
    let window = WindowSample {
        values: raw.series.values[start * m..(end + 1) * m].to_vec(),
        steps,
        vars: m,
        end,
        label: None,
    };
    let text = render_text_prompt(template, &window, &clock_time(raw.timestamps[end]))?;
    Ok(tokenize_text(&text))
}

fn window_ends(len: usize, steps: usize, stride: usize) -> CliResult<Vec<usize>> {
    if len < steps {
        return Err(CliError::data(format!("{len} rows cannot hold a window of {steps} steps")));
    }
    Ok((steps - 1..len).step_by(stride).collect())
}

/// The samples a checkpoint consumes from `raw` (already restricted to one split).
pub fn window_set(ck: &Checkpoint, raw: &Dataset, stride: usize) -> CliResult<WindowSet> {
    match ck.task {
        Task::Pss => {
            let prompt = ck.prompt.as_ref().ok_or_else(|| CliError::data("text checkpoint carries no prompt template"))?;
            let template = prompt.template();
            let steps = ck.config.prompt_window;
            let ends = window_ends(raw.len(), steps, stride)?;
            let mut ids = Vec::with_capacity(ends.len() * prompt.len);
            for &end in &ends {
                ids.extend(pad_left(&text_prompt(&template, raw, steps, end)?, prompt.len)?);
            }
            Ok(WindowSet::text_only(raw.series.clone(), ends, ids, prompt.len)?)
        }
        _ => {
            let series = normalized(raw, norm_stats(ck)?)?;
            let set = WindowSet::new(series, ck.window, stride)?;
            match (&ck.prompt, ck.task) {
                (Some(prompt), Task::Pdss) => {
                    let template = prompt.template();
                    let mut ids = Vec::with_capacity(set.len() * prompt.len);
                    for &end in set.ends() {
                        let text = render_prefix_prompt(&template, &clock_time(raw.timestamps[end]));
                        ids.extend(pad_left(&tokenize_text(&text), prompt.len)?);
                    }
                    Ok(set.with_prefixes(ids, prompt.len)?)
                }
                _ => Ok(set),
            }
        }
    }
}

/// Stage 1: attach LoRA, freeze, and train the autoregressive objective.
pub fn pretrain(data: &Dataset, cfg: &RunConfig) -> CliResult<Trained> {
    cfg.validate()?;
    let parts = split(data)?;
    let stats = NormStats::fit(&parts.train.series)?;
    let m = data.series.vars;
    let model_cfg = cfg.model_config(m, cfg.n_ctx);
    check_context(model_cfg.encoder.seq_len(cfg.window, m), cfg.n_ctx, "the data window")?;
    let mut model = Model::new(model_cfg, cfg.seed)?;
    model.prepare_stage1(cfg.seed.wrapping_add(1))?;
    let mut ck = Checkpoint {
        stage: Stage::Ssfm,
        task: Task::Pretrain,
        seed: cfg.seed,
        config: cfg.clone(),
        window: cfg.window,
        norm: Some(stats),
        prompt: None,
        anomaly: None,
        calibration_errors: None,
        model,
    };
    let train_set = window_set(&ck, &parts.train, cfg.train_stride)?;
    let val_set = window_set(&ck, &parts.val, cfg.val_stride)?;
    let report = train(&mut ck.model, &Autoregressive, &train_set, Some(&val_set), &cfg.train_config(cfg.epochs))?;
    ck.model.params.round_to_f32();
    Ok(Trained { checkpoint: ck, report })
}

/// Keep the SSFM's architecture; take training, PEFT-size and task settings from `run`.
fn inherit_architecture(ssfm: &RunConfig, run: &RunConfig) -> RunConfig {
    RunConfig {
        k: ssfm.k,
        p: ssfm.p,
        s: ssfm.s,
        d: ssfm.d,
        heads: ssfm.heads,
        ffn_mult: ssfm.ffn_mult,
        n_ctx: ssfm.n_ctx,
        r_lora: ssfm.r_lora,
        alpha: ssfm.alpha,
        lora_dropout: ssfm.lora_dropout,
        frozen_layers: ssfm.frozen_layers,
        lora_layers: ssfm.lora_layers,
        encoder: ssfm.encoder,
        ..run.clone()
    }
}

fn is_layer_norm(name: &str) -> bool {
    name.contains(".ln1.") || name.contains(".ln2.") || name.starts_with("final_ln.")
}

fn objective(task: Task, cfg: &RunConfig) -> Box<dyn Objective> {
    match task {
        Task::Pretrain => Box::new(Autoregressive),
        Task::Regress | Task::Pss | Task::Pdss => Box::new(Regression),
        Task::Impute => Box::new(MaskedReconstruction { ratios: cfg.mask_ratios.clone() }),
        Task::Anomaly => Box::new(Reconstruction),
    }
}

/// Longest raw-unit text prompt over every window of the dataset.
fn longest_prompt(template: &PromptTemplate, raw: &Dataset, steps: usize) -> CliResult<usize> {
    let mut longest = 0;
    for end in window_ends(raw.len(), steps, 1)? {
        longest = longest.max(text_prompt(template, raw, steps, end)?.len());
    }
    Ok(longest)
}

/// Stage 2 (or one of its ablations): build the task model and train it.
///
/// `ssfm` is required unless `cfg` asks for a fresh backbone (`no_pretrain`,
/// `skip_stage1`) or the task is the fully textual `pss`; when given, its
/// architecture overrides the one in `cfg`.
pub fn adapt(task: Task, ssfm: Option<&Checkpoint>, data: &Dataset, cfg: &RunConfig) -> CliResult<Trained> {
    if task == Task::Pretrain {
        return Err(CliError::usage("stage-1 training is the `pretrain` command"));
    }
    cfg.validate()?;
    if let Some(s) = ssfm {
        if s.stage != Stage::Ssfm {
            return Err(CliError::data(format!("--ssfm checkpoint has stage `{:?}`; adapt needs a stage-1 (ssfm) checkpoint", s.stage).to_lowercase()));
        }
    }
    let fresh = cfg.no_pretrain || cfg.skip_stage1 || task == Task::Pss;
    let run = match ssfm {
        Some(s) if task != Task::Pss => inherit_architecture(&s.config, cfg),
        None if !fresh => return Err(CliError::usage(format!("--ssfm is required for task `{}`", task.name()))),
        _ => cfg.clone(),
    };
    if matches!(task, Task::Regress | Task::Pss | Task::Pdss) && data.labels().is_none() {
        return Err(CliError::data(format!("task `{}` needs a `y` column", task.name())));
    }
    let m = data.series.vars;
    if let Some(s) = ssfm {
        if s.model.config.n_vars != m && task != Task::Pss {
            return Err(CliError::data(format!("SSFM was trained on {} variables, data has {m}", s.model.config.n_vars)));
        }
    }
    let parts = split(data)?;
    let stats = NormStats::fit(&parts.train.series)?;
    let seed = run.seed;
    let outputs = match task {
        Task::Impute | Task::Anomaly => m,
        _ => 1,
    };

    let (n_ctx, prompt) = match task {
        Task::Pss => {
            let template = short_template(m);
            let len = longest_prompt(&template, data, run.prompt_window)? + PROMPT_SLACK;
            (len, Some(PromptSpec::new(&template, len)))
        }
        Task::Pdss => {
            let data_len = run.model_config(m, run.n_ctx).encoder.seq_len(run.window, m);
            check_context(data_len + 1, run.n_ctx, "the data window plus a text prefix")?;
            let template = short_template(m);
            let len = run.n_ctx - data_len;
            let needed = tokenize_text(&render_prefix_prompt(&template, &clock_time(0.0))).len();
            check_context(needed, len, "the prefix prompt")?;
            (run.n_ctx, Some(PromptSpec::new(&template, len)))
        }
        _ => {
            let data_len = run.model_config(m, run.n_ctx).encoder.seq_len(run.window, m);
            check_context(data_len, run.n_ctx, "the data window")?;
            (run.n_ctx, None)
        }
    };
    let model_cfg = run.model_config(m, n_ctx);

    let (model, stage) = if task == Task::Pss {
        let mut model = Model::new(model_cfg, seed)?;
        model.add_text_embedding(seed.wrapping_add(2))?;
        model.add_head(TASK_HEAD, 1)?;
        // The text path never touches the window encoder.
        model.params.set_mask_by(|n| !n.starts_with("encoder."));
        (model, Stage::Full)
    } else if run.no_pretrain {
        let mut model = Model::new(model_cfg, seed)?;
        if task == Task::Pdss {
            model.add_text_embedding(seed.wrapping_add(2))?;
        }
        model.add_head(TASK_HEAD, outputs)?;
        model.params.unfreeze_all();
        (model, Stage::Full)
    } else {
        let mut model = match ssfm {
            Some(s) if !run.skip_stage1 => {
                let mut model = s.model.clone();
                model.config = model_cfg;
                model
            }
            _ => {
                let mut model = Model::new(model_cfg, seed)?;
                model.prepare_stage1(seed.wrapping_add(1))?;
                model
            }
        };
        if task == Task::Pdss {
            model.add_text_embedding(seed.wrapping_add(2))?;
        }
        match run.peft_mode {
            PeftMode::Adapter => {
                model.prepare_stage2(outputs, seed.wrapping_add(3))?;
            }
            PeftMode::LnOnly => {
                model.remove_head(PRETRAIN_HEAD);
                model.add_head(TASK_HEAD, outputs)?;
                model.params.set_mask_by(|n| is_layer_norm(n) || is_stage2_extra(n));
            }
        }
        (model, Stage::Adapted)
    };

    let mut ck = Checkpoint {
        stage,
        task,
        seed,
        config: run.clone(),
        window: if task == Task::Pss { run.prompt_window } else { run.window },
        norm: Some(stats),
        prompt,
        anomaly: None,
        calibration_errors: None,
        model,
    };
    let mut train_set = window_set(&ck, &parts.train, run.train_stride)?;
    if run.train_fraction < 1.0 {
        train_set = train_set.sample_fraction(run.train_fraction, seed)?;
    }
    let val_set = window_set(&ck, &parts.val, run.val_stride)?;
    let epochs = if task == Task::Anomaly { run.anomaly_epochs } else { run.epochs };
    let obj = objective(task, &run);
    let report = train(&mut ck.model, obj.as_ref(), &train_set, Some(&val_set), &run.train_config(epochs))?;
    ck.model.params.round_to_f32();

    if task == Task::Anomaly {
        let val = normalized(&parts.val, norm_stats(&ck)?)?;
        let errors = element_errors(&ck.model, &val, run.window, run.detect_stride, run.eval_batch())?;
        // Rounded up so that stored thresholds never fall below a clean error.
        let stored: Vec<f64> = errors.iter().map(|&e| round_up_f32(e)).collect();
        let thresholds = calibrate_threshold(&stored, m, run.quantile)?;
        ck.calibration_errors = Some(Tensor::new(vec![val.len(), m], stored)?);
        ck.anomaly = Some(AnomalyCalibration { quantile: run.quantile, thresholds, stride: run.detect_stride });
    }
    Ok(Trained { checkpoint: ck, report })
}

fn round_up_f32(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up() as f64
    } else {
        f as f64
    }
}

fn expect_task(ck: &Checkpoint, allowed: &[Task], command: &str) -> CliResult<()> {
    if allowed.contains(&ck.task) {
        Ok(())
    } else {
        let names: Vec<&str> = allowed.iter().map(Task::name).collect();
        Err(CliError::usage(format!("`{command}` needs a {} checkpoint, got `{}`", names.join("/"), ck.task.name())))
    }
}

/// Window-end timestamps and predictions in engineering units.
pub fn predictions(ck: &Checkpoint, raw: &Dataset, stride: usize) -> CliResult<(Vec<f64>, Vec<f64>)> {
    expect_task(ck, &[Task::Regress, Task::Pdss, Task::Pss], "predict")?;
    let set = window_set(ck, raw, stride)?;
    // Text-only models are trained on raw-unit targets.
    let stats = if ck.task == Task::Pss { None } else { Some(norm_stats(ck)?) };
    let pred = predict(&ck.model, &set, stats, ck.config.eval_batch())?;
    let times = set.ends().iter().map(|&e| raw.timestamps[e]).collect();
    Ok((times, pred))
}

pub fn regression_metrics(ck: &Checkpoint, raw: &Dataset, stride: usize) -> CliResult<MetricsRecord> {
    let labels = raw.labels().ok_or_else(|| CliError::data("evaluation needs a `y` column"))?;
    let set = window_set(ck, raw, stride)?;
    let (_, pred) = predictions(ck, raw, stride)?;
    let truth: Vec<f64> = set.ends().iter().map(|&e| labels[e]).collect();
    Ok(MetricsRecord::from(&compute_metrics(&truth, &pred)?))
}

pub fn imputation_metrics(ck: &Checkpoint, raw: &Dataset, stride: usize) -> CliResult<Vec<ImputationRecord>> {
    expect_task(ck, &[Task::Impute], "eval")?;
    let set = window_set(ck, raw, stride)?;
    let stats = norm_stats(ck)?;
    ck.config
        .mask_ratios
        .iter()
        .map(|&ratio| {
            let r = evaluate_imputation(&ck.model, &set, stats, ratio, ck.seed, ck.config.eval_batch())?;
            Ok(ImputationRecord { mask_ratio: ratio, metrics: MetricsRecord::from(&r) })
        })
        .collect()
}

/// Per-variable thresholds, recalibrated from the stored clean errors when
/// `quantile` differs from the one used at training time.
pub fn thresholds(ck: &Checkpoint, quantile: Option<f64>) -> CliResult<(f64, Vec<f64>)> {
    expect_task(ck, &[Task::Anomaly], "detect")?;
    let cal = ck.anomaly.as_ref().ok_or_else(|| CliError::data("anomaly checkpoint carries no calibration"))?;
    match quantile {
        Some(q) if q != cal.quantile => {
            if !(0.0..=1.0).contains(&q) {
                return Err(CliError::usage(format!("quantile {q} outside [0, 1]")));
            }
            let errors = ck.calibration_errors.as_ref().ok_or_else(|| CliError::data("anomaly checkpoint carries no calibration errors"))?;
            Ok((q, calibrate_threshold(errors.data(), ck.model.config.n_vars, q)?))
        }
        _ => Ok((cal.quantile, cal.thresholds.clone())),
    }
}

fn detection_stride(ck: &Checkpoint) -> usize {
    ck.anomaly.as_ref().map_or(ck.config.detect_stride, |a| a.stride)
}

/// Step-major flags for a raw-unit dataset.
pub fn detect(ck: &Checkpoint, raw: &Dataset, quantile: Option<f64>) -> CliResult<Vec<bool>> {
    let (_, th) = thresholds(ck, quantile)?;
    let series = normalized(&raw.clone().without_labels(), norm_stats(ck)?)?;
    let errors = element_errors(&ck.model, &series, ck.window, detection_stride(ck), ck.config.eval_batch())?;
    Ok(flag(&errors, &th)?)
}

/// Corrupt every variable of a normalised series independently, one
/// injection per window-length chunk.
pub fn inject_all(series: &Series, spec: &AnomalySpec, chunk: usize) -> CliResult<(Series, Vec<bool>)> {
    let m = series.vars;
    let mut values = series.values.clone();
    let mut labels = vec![false; values.len()];
    for s in 0..m {
        let column = series.column(s);
        let var_spec = AnomalySpec { seed: spec.seed.wrapping_add(1_000_003 * s as u64), ..*spec };
        let (x, l) = inject_chunked(&column, &var_spec, chunk)?;
        for t in 0..series.len() {
            values[t * m + s] = x[t];
            labels[t * m + s] = l[t];
        }
    }
    Ok((Series::new(values, m, None)?, labels))
}

/// Detection quality on `raw` for the standard injections plus the clean
/// false-positive rate.
pub fn anomaly_metrics(ck: &Checkpoint, raw: &Dataset, quantile: Option<f64>, seed: u64) -> CliResult<AnomalyReport> {
    let (q, th) = thresholds(ck, quantile)?;
    let m = ck.model.config.n_vars;
    let clean = normalized(&raw.clone().without_labels(), norm_stats(ck)?)?;
    let stride = detection_stride(ck);
    let score = |series: &Series| -> CliResult<Vec<bool>> {
        let errors = element_errors(&ck.model, series, ck.window, stride, ck.config.eval_batch())?;
        Ok(flag(&errors, &th)?)
    };
    let clean_flags = score(&clean)?;
    let clean_fpr = clean_flags.iter().filter(|&&f| f).count() as f64 / clean_flags.len() as f64;

    let kinds = [
        ("spike", AnomalySpec::spike(seed)),
        ("spike_10sd", AnomalySpec::fixed_spike(LARGE_SPIKE, seed)),
        ("noise", AnomalySpec::noise(seed)),
        ("scale", AnomalySpec::scale(seed)),
    ];
    let mut records = Vec::new();
    for (name, spec) in kinds {
        let (corrupted, truth) = inject_all(&clean, &spec, ck.window)?;
        let flags = score(&corrupted)?;
        let per = per_variable(&flags, &truth, m)?;
        records.push(DetectionRecord {
            kind: name.into(),
            labelled: truth.iter().filter(|&&t| t).count(),
            flagged: flags.iter().filter(|&&f| f).count(),
            average: ClassificationRecord::from(&macro_average(&per)?),
            per_variable: per.iter().map(ClassificationRecord::from).collect(),
        });
    }
    Ok(AnomalyReport { quantile: q, clean_false_positive_rate: clean_fpr, kinds: records })
}

/// Result of `eval`, serialised as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Evaluation {
    Regression(MetricsRecord),
    Imputation(Vec<ImputationRecord>),
    Anomaly(AnomalyReport),
    Loss { loss: f64 },
}

pub fn evaluate(ck: &Checkpoint, task: Task, data: &Dataset, which: Split) -> CliResult<Evaluation> {
    if task != ck.task {
        return Err(CliError::usage(format!("--task {} does not match the checkpoint's task `{}`", task.name(), ck.task.name())));
    }
    let raw = select(data, which)?;
    let stride = ck.config.test_stride;
    Ok(match task {
        Task::Regress | Task::Pdss | Task::Pss => Evaluation::Regression(regression_metrics(ck, &raw, stride)?),
        Task::Impute => Evaluation::Imputation(imputation_metrics(ck, &raw, stride)?),
        Task::Anomaly => Evaluation::Anomaly(anomaly_metrics(ck, &raw, None, ck.seed)?),
        Task::Pretrain => {
            let set = window_set(ck, &raw, stride)?;
            Evaluation::Loss { loss: evaluate_loss(&ck.model, &Autoregressive, &set, ck.config.eval_batch())? }
        }
    })
}

/// Mask `ratio` of the values at random, then fill them from reconstructions
/// of consecutive windows. Returns raw-unit filled values and the mask, both
/// step-major over the whole dataset.
pub fn impute_dataset(ck: &Checkpoint, raw: &Dataset, ratio: f64, seed: u64) -> CliResult<(Vec<f64>, Vec<bool>)> {
    expect_task(ck, &[Task::Impute], "impute")?;
    let stats = norm_stats(ck)?;
    let series = normalized(&raw.clone().without_labels(), stats)?;
    let (masked, mask) = mask_random(&series.values, ratio, seed)?;
    let m = series.vars;
    let steps = ck.window;
    let starts = covering_starts(series.len(), steps, steps)?;
    let masked_series = Series::new(masked.clone(), m, None)?;
    let set = WindowSet::new(masked_series, steps, 1)?.subset(&starts);
    let per = steps * m;
    let mut window_mask = Vec::with_capacity(starts.len() * per);
    for &s in &starts {
        window_mask.extend_from_slice(&mask[s * m..s * m + per]);
    }
    let window_values = set.gather(&(0..set.len()).collect::<Vec<_>>());
    let filled = impute(&ck.model, &set, &window_values, &window_mask, ck.config.eval_batch())?;
    let mut out = masked;
    let mut done = vec![false; out.len()];
    for (w, &s) in starts.iter().enumerate() {
        for k in 0..per {
            let i = s * m + k;
            if mask[i] && !done[i] {
                out[i] = filled[w * per + k];
                done[i] = true;
            }
        }
    }
    let values = out.iter().enumerate().map(|(i, &v)| if mask[i] { stats.denormalize_value(i % m, v) } else { raw.series.values[i] }).collect();
    Ok((values, mask))
}

/// Row-major `n×n` attention probabilities of one head for one sample.
pub fn attention_map(ck: &Checkpoint, raw: &Dataset, sample: usize, layer: usize, head: usize) -> CliResult<(usize, Vec<f64>)> {
    let cfg = &ck.model.config;
    if layer >= cfg.backbone.n_layers {
        return Err(CliError::usage(format!("layer {layer} out of range (model has {})", cfg.backbone.n_layers)));
    }
    if head >= cfg.backbone.n_heads {
        return Err(CliError::usage(format!("head {head} out of range (model has {})", cfg.backbone.n_heads)));
    }
    let set = window_set(ck, raw, 1)?;
    if sample >= set.len() {
        return Err(CliError::usage(format!("sample {sample} out of range ({} windows)", set.len())));
    }
    let idx = [sample];
    let values = set.gather(&idx);
    let ids = set.prefix_ids(&idx);
    let mut batch = Batch::new(&values, 1, set.steps());
    if set.prefix_len() > 0 {
        batch = batch.with_prefix(&ids, set.prefix_len());
    }
    let mut g = Graph::new();
    let enc = ck.model.encode(&mut g, &batch)?;
    let (probs, layout, heads) = g.attention_probs(enc.attention[layer]).ok_or_else(|| CliError::data("attention weights unavailable"))?;
    let n = layout.seq;
    debug_assert_eq!(heads, cfg.backbone.n_heads);
    Ok((n, probs[head * n * n..(head + 1) * n * n].to_vec()))
}
