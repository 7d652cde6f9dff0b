use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use asot::bench::{self, BenchSpec};
use asot::costs::{add_temporal_prior, build_kot_cost, logits_to_cost, ActionEmbeddings, FrameEmbeddings};
use asot::data_io::{
    self, block_cost_instance, format_labels, list_files, logit_instance, read_features, read_labels,
    synth_generate, write_dataset, write_features, write_file, BlockSpec, SynthSpec, FEATURES_DIR, LABELS_DIR,
};
use asot::learn::{self, read_checkpoint, write_checkpoint, Params, TrainConfig};
use asot::metrics::{evaluate, segmental_scores, EvalMode, Evaluation};
use asot::plot::barcode_svg;
use asot::segmentation::{decode, Segmentation};
use asot::solver::{solve, SolveReport, SolverConfig};
use asot::{AsotError, Matrix, Result};
use serde::Serialize;

use crate::args::*;

pub const LABELS_FILE: &str = "labels.txt";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const REPORT_FILE: &str = "report.json";
pub const PLAN_FILE: &str = "plan.feat";
pub const REPORTS_FILE: &str = "reports.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const SPEC_FILE: &str = "spec.json";
pub const BENCH_CSV: &str = "bench.csv";
pub const FIT_FILE: &str = "fit.json";

fn invalid(msg: impl Into<String>) -> AsotError {
    AsotError::InvalidInput(msg.into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| AsotError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(AsotError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn resolve_solver(base: SolverConfig, flags: &SolverFlags) -> Result<SolverConfig> {
    let mut cfg = match &flags.solver_config {
        Some(p) => read_json(p)?,
        None => base,
    };
    if let Some(v) = flags.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = flags.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = flags.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = flags.radius {
        cfg.radius = v;
    }
    if flags.step_size.is_some() {
        cfg.step_size = flags.step_size;
    }
    if let Some(v) = flags.n_iter {
        cfg.n_iter = v;
    }
    if let Some(v) = flags.stop_tol {
        cfg.stop_tol = v;
    }
    if flags.no_adaptive {
        cfg.adaptive_step = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

enum CostSource {
    Actions(ActionEmbeddings),
    Encoder(Box<Params>),
    Logits,
    Cost,
}

impl CostSource {
    fn cost(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            CostSource::Actions(a) => {
                if a.dim() != x.ncols() {
                    return Err(invalid(format!(
                        "features have {} columns but actions have {}",
                        x.ncols(),
                        a.dim()
                    )));
                }
                build_kot_cost(&FrameEmbeddings::new(x.clone())?, a)
            }
            CostSource::Encoder(p) => {
                if p.d_in() != x.ncols() {
                    return Err(invalid(format!(
                        "features have {} columns but the checkpoint expects {}",
                        x.ncols(),
                        p.d_in()
                    )));
                }
                learn::video_cost(p, x.view())
            }
            CostSource::Logits => logits_to_cost(x.view()),
            CostSource::Cost => Ok(x.clone()),
        }
    }
}

#[derive(Serialize)]
struct NamedReport<'a> {
    name: &'a str,
    segments: usize,
    #[serde(flatten)]
    report: &'a SolveReport,
}

pub fn decode_cmd(args: &DecodeArgs) -> Result<()> {
    require_exists(&args.input)?;
    let kind = match (args.kind, &args.actions, &args.checkpoint) {
        (Some(k), _, _) => k,
        (None, Some(_), _) => InputKind::Features,
        (None, None, Some(_)) => InputKind::Encoded,
        (None, None, None) => {
            return Err(invalid("decode needs --actions, --checkpoint or an explicit --kind"));
        }
    };
    let source = match kind {
        InputKind::Features => {
            let p = args.actions.as_ref().ok_or_else(|| invalid("--kind features needs --actions"))?;
            require_exists(p)?;
            CostSource::Actions(ActionEmbeddings::new(read_features(p)?)?)
        }
        InputKind::Encoded => {
            let p = args.checkpoint.as_ref().ok_or_else(|| invalid("--kind encoded needs --checkpoint"))?;
            require_exists(p)?;
            CostSource::Encoder(Box::new(read_checkpoint(p)?.params))
        }
        InputKind::Logits => CostSource::Logits,
        InputKind::Cost => CostSource::Cost,
    };
    let base = if kind == InputKind::Logits { SolverConfig::supervised_logits() } else { SolverConfig::inference() };
    let cfg = resolve_solver(base, &args.solver)?;
    if !(args.rho >= 0.0) {
        return Err(invalid(format!("rho must be >= 0, got {}", args.rho)));
    }

    let run = |x: &Matrix| -> Result<(Segmentation, SolveReport, Matrix)> {
        let mut cost = source.cost(x)?;
        if args.rho > 0.0 {
            cost = add_temporal_prior(cost.view(), args.rho)?;
        }
        let (plan, report) = solve(cost.view(), &cfg)?;
        Ok((decode(&plan), report, plan.plan))
    };

    if args.input.is_dir() {
        let dir = if args.input.join(FEATURES_DIR).is_dir() { args.input.join(FEATURES_DIR) } else { args.input.clone() };
        let files = list_files(&dir, "feat")?;
        if files.is_empty() {
            return Err(invalid(format!("no .feat files in {}", dir.display())));
        }
        let mut reports = Vec::new();
        let mut outcomes = Vec::new();
        for f in &files {
            let name = file_stem(f);
            let (seg, report, plan) = run(&read_features(f)?)?;
            write_file(args.out.join(LABELS_DIR).join(format!("{name}.txt")), format_labels(seg.labels()))?;
            write_file(args.out.join("segments").join(format!("{name}.json")), seg.segments_json()? + "\n")?;
            if args.dump_plan {
                write_features(args.out.join("plans").join(format!("{name}.feat")), &plan)?;
            }
            outcomes.push((name, seg.segments().len(), report));
        }
        for (name, segments, report) in &outcomes {
            reports.push(NamedReport { name, segments: *segments, report });
        }
        write_file(args.out.join(REPORTS_FILE), to_json(&reports)?)?;
        println!("decoded {} videos into {}", files.len(), args.out.display());
    } else {
        let (seg, report, plan) = run(&read_features(&args.input)?)?;
        write_file(args.out.join(LABELS_FILE), format_labels(seg.labels()))?;
        write_file(args.out.join(SEGMENTS_FILE), seg.segments_json()? + "\n")?;
        let name = file_stem(&args.input);
        write_file(
            args.out.join(REPORT_FILE),
            to_json(&NamedReport { name: &name, segments: seg.segments().len(), report: &report })?,
        )?;
        if args.dump_plan {
            write_features(args.out.join(PLAN_FILE), &plan)?;
        }
        println!(
            "{} frames, {} segments, objective {:.6} after {} iterations",
            seg.len(),
            seg.segments().len(),
            report.objective_trace.last().copied().unwrap_or(f64::NAN),
            report.n_iter_run
        );
    }
    Ok(())
}

pub fn resolve_train(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(n_actions, epochs, lr, weight_decay, temperature, frames_per_video, batch_videos, hidden, out_dim, rho, seed);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    mean_loss: f64,
    steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mof: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    miou: Option<f64>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    require_exists(&args.data)?;
    let cfg = resolve_train(args)?;
    let records = data_io::read_dataset(&args.data)?;
    let videos: Vec<Matrix> = records.iter().map(|r| r.features.clone()).collect();
    let gt: Option<Vec<Vec<usize>>> = records.iter().map(|r| r.labels.clone()).collect();

    let mut lines = String::new();
    let mut failure = None;
    let (state, _) = learn::train_with(&videos, &cfg, |state, log| {
        let mut line = EpochLine {
            epoch: log.epoch,
            mean_loss: log.mean_loss,
            steps: log.steps,
            mof: None,
            f1: None,
            miou: None,
        };
        if let Some(gt) = &gt {
            let scored = videos
                .iter()
                .map(|v| learn::segment_video(&state.params, v.view(), &cfg.solver_infer))
                .collect::<Result<Vec<_>>>()
                .and_then(|pred| evaluate(&pred, gt, EvalMode::FullDataset));
            match scored {
                Ok(ev) => {
                    line.mof = Some(ev.aggregate.mof);
                    line.f1 = Some(ev.aggregate.f1);
                    line.miou = Some(ev.aggregate.miou);
                }
                Err(e) => failure = failure.take().or(Some(e)),
            }
        }
        eprintln!(
            "epoch {:>3}  loss {:.4}{}",
            log.epoch,
            log.mean_loss,
            line.mof.map(|m| format!("  MoF {m:.3}")).unwrap_or_default()
        );
        lines.push_str(&serde_json::to_string(&line).expect("plain struct"));
        lines.push('\n');
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    write_checkpoint(args.out.join(CHECKPOINT_FILE), &state)?;
    write_file(args.out.join(EPOCHS_FILE), lines)?;
    write_file(args.out.join(TRAIN_CONFIG_FILE), to_json(&cfg)?)?;
    println!("wrote {}", args.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn label_dir(dir: &Path) -> PathBuf {
    if dir.join(LABELS_DIR).is_dir() {
        dir.join(LABELS_DIR)
    } else {
        dir.to_path_buf()
    }
}

#[derive(Serialize)]
struct VideoScores {
    name: String,
    frames: usize,
    edit: f64,
    f1_10: f64,
    f1_25: f64,
    f1_50: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mof: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    miou: Option<f64>,
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    evaluation: Evaluation,
    edit: f64,
    f1_10: f64,
    f1_25: f64,
    f1_50: f64,
    videos: Vec<VideoScores>,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    require_exists(&args.pred)?;
    require_exists(&args.gt)?;
    let pred_dir = label_dir(&args.pred);
    let gt_files = list_files(&label_dir(&args.gt), "txt")?;
    if gt_files.is_empty() {
        return Err(invalid(format!("no .txt label files in {}", args.gt.display())));
    }
    let mut names = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for g in &gt_files {
        let name = file_stem(g);
        let p = pred_dir.join(format!("{name}.txt"));
        require_exists(&p)?;
        let gt = read_labels(g)?;
        let pred = read_labels(&p)?;
        if gt.len() != pred.len() {
            return Err(invalid(format!(
                "{}: {} predicted frames but ground truth has {}",
                p.display(),
                pred.len(),
                gt.len()
            )));
        }
        names.push(name);
        preds.push(Segmentation::from_labels(pred));
        gts.push(gt);
    }
    let mode = match args.mode {
        ModeArg::PerVideo => EvalMode::PerVideo,
        ModeArg::Full => EvalMode::FullDataset,
    };
    let evaluation = evaluate(&preds, &gts, mode)?;
    let mut videos = Vec::new();
    for (i, ((name, pred), gt)) in names.iter().zip(&preds).zip(&gts).enumerate() {
        // Segmental scores compare matched labels for the full-dataset mode.
        let mapped = match mode {
            EvalMode::FullDataset => {
                let m = &evaluation.aggregate.matching;
                pred.map_labels(|l| m.get(&l).copied().unwrap_or(usize::MAX - l))
            }
            EvalMode::PerVideo => {
                let m = &evaluation.per_video[i].matching;
                pred.map_labels(|l| m.get(&l).copied().unwrap_or(usize::MAX - l))
            }
        };
        let s = segmental_scores(&mapped, &Segmentation::from_labels(gt.clone()));
        let per = evaluation.per_video.get(i);
        videos.push(VideoScores {
            name: name.clone(),
            frames: gt.len(),
            edit: s.edit,
            f1_10: s.f1_10,
            f1_25: s.f1_25,
            f1_50: s.f1_50,
            mof: per.map(|r| r.mof),
            f1: per.map(|r| r.f1),
            miou: per.map(|r| r.miou),
        });
    }
    let mean = |f: fn(&VideoScores) -> f64| videos.iter().map(f).sum::<f64>() / videos.len() as f64;
    let output = EvalOutput {
        edit: mean(|v| v.edit),
        f1_10: mean(|v| v.f1_10),
        f1_25: mean(|v| v.f1_25),
        f1_50: mean(|v| v.f1_50),
        evaluation,
        videos,
    };
    let table = metrics_table(&output);
    write_file(args.out.join(METRICS_JSON), to_json(&output)?)?;
    write_file(args.out.join(METRICS_TABLE), &table)?;
    print!("{table}");
    Ok(())
}

fn metrics_table(o: &EvalOutput) -> String {
    let mut t = String::new();
    let a = &o.evaluation.aggregate;
    let mode = match o.evaluation.mode {
        EvalMode::PerVideo => "per_video",
        EvalMode::FullDataset => "full",
    };
    let _ = writeln!(t, "mode     {mode}");
    let _ = writeln!(t, "videos   {}", o.videos.len());
    let _ = writeln!(t, "MoF      {:.4}", a.mof);
    let _ = writeln!(t, "F1       {:.4}", a.f1);
    let _ = writeln!(t, "mIoU     {:.4}", a.miou);
    let _ = writeln!(t, "Edit     {:.4}", o.edit);
    let _ = writeln!(t, "F1@10    {:.4}", o.f1_10);
    let _ = writeln!(t, "F1@25    {:.4}", o.f1_25);
    let _ = writeln!(t, "F1@50    {:.4}", o.f1_50);
    t
}

pub fn resolve_synth(args: &SynthArgs) -> Result<SynthSpec> {
    let mut spec: SynthSpec = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(v) = args.n_videos {
        spec.n_videos = v;
    }
    if let Some(v) = args.n_actions {
        spec.n_actions = v;
    }
    if let Some(v) = args.dim {
        spec.dim = v;
    }
    if let Some(v) = args.frames {
        spec.mean_frames = v;
    }
    if let Some(v) = args.segments {
        spec.mean_segments_per_video = v;
    }
    if let Some(v) = args.sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.concentration {
        spec.class_imbalance = v;
    }
    if args.fixed_order {
        spec.order_variation = false;
    }
    if args.no_repeats {
        spec.repeat_actions = false;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let spec = resolve_synth(args)?;
    match args.kind {
        SynthKind::Dataset => {
            write_dataset(&args.out, &synth_generate(&spec)?)?;
            write_file(args.out.join(SPEC_FILE), to_json(&spec)?)?;
        }
        SynthKind::Blocks | SynthKind::Logits => {
            let defaults = BlockSpec::default();
            let block = BlockSpec {
                n_frames: args.frames.unwrap_or(defaults.n_frames),
                n_actions: args.n_actions.unwrap_or(defaults.n_actions),
                n_segments: args.segments.unwrap_or(defaults.n_segments),
                noise_sigma: args.sigma.unwrap_or(defaults.noise_sigma),
                concentration: args.concentration,
                seed: spec.seed,
            };
            for i in 0..spec.n_videos {
                let one = BlockSpec { seed: block.seed.wrapping_add(i as u64), ..block.clone() };
                let inst = match args.kind {
                    SynthKind::Blocks => block_cost_instance(&one)?,
                    _ => logit_instance(&one)?,
                };
                let name = format!("video_{i:03}");
                write_features(args.out.join(FEATURES_DIR).join(format!("{name}.feat")), &inst.scores)?;
                write_file(args.out.join(LABELS_DIR).join(format!("{name}.txt")), format_labels(&inst.labels))?;
            }
            write_file(args.out.join(SPEC_FILE), to_json(&block)?)?;
        }
    }
    println!("wrote {} videos to {}", spec.n_videos, args.out.display());
    Ok(())
}

pub fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let solver = resolve_solver(SolverConfig::inference(), &args.solver)?;
    let spec = BenchSpec { sizes: args.sizes.clone(), k: args.k, repeats: args.repeats, seed: args.seed, solver };
    let rows = bench::run(&spec)?;
    let csv = bench::to_csv(&rows);
    write_file(args.out.join(BENCH_CSV), &csv)?;
    print!("{csv}");
    if rows.len() >= 2 {
        let fit = bench::fit_rows(&rows)?;
        write_file(args.out.join(FIT_FILE), to_json(&fit)?)?;
        println!("linear fit in N*K: R^2 = {:.5}", fit.r_squared);
    }
    Ok(())
}

pub fn plot_cmd(args: &PlotArgs) -> Result<()> {
    let mut files = Vec::new();
    for p in &args.labels {
        require_exists(p)?;
        if p.is_dir() {
            files.extend(list_files(&label_dir(p), "txt")?);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(invalid("no label files to plot"));
    }
    if let Some(g) = &args.gt {
        require_exists(g)?;
    }
    for f in &files {
        let name = file_stem(f);
        let pred = Segmentation::from_labels(read_labels(f)?);
        let gt = match &args.gt {
            Some(dir) => {
                let p = label_dir(dir).join(format!("{name}.txt"));
                p.exists().then(|| read_labels(&p).map(Segmentation::from_labels)).transpose()?
            }
            None => None,
        };
        let mut rows = vec![("prediction", &pred)];
        if let Some(g) = &gt {
            rows.push(("ground truth", g));
        }
        write_file(args.out.join(format!("{name}.svg")), barcode_svg(&rows))?;
    }
    println!("wrote {} plots to {}", files.len(), args.out.display());
    Ok(())
}
