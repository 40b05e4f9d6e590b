//! `trace run`: one pipeline execution per home, or per home and fold.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Duration;
use rayon::prelude::*;
use serde::Serialize;
use trace_core::context::{derive_prior_from_history, load_prior, ContextPrior, DeriveConfig};
use trace_core::eval::{
    blocked_splits, evaluate, segments_from_materialized, EvalOptions, EvalReport, Fold, LabelMap, Segment,
};
use trace_core::inference::{run_pipeline, HomeInputs, InferenceError, PipelineConfig, PipelineReport};
use trace_core::ingest::{
    normalize_ground_truth, parse_event_log, parse_ground_truth, parse_predictions, GroundTruthSegment, ParseOptions,
    PredictionRecord, PredictionSource, SensorMetadataSet,
};
use trace_core::labels::LabelSet;
use trace_core::reasoner::{Backend, CachingBackend, HttpBackend, HttpConfig, Reasoner, RuleBackend, RunLog};
use trace_core::time::{ceil_to_unit, floor_to_unit, Span};

use crate::config::{BackendKind, HomeConfig, RunConfig};
use crate::error::{data, usage, CliResult, Failure};

struct LoadedHome {
    config: HomeConfig,
    inputs: HomeInputs,
    prior_given: bool,
    ground_truth: Option<Vec<GroundTruthSegment>>,
}

struct Job {
    home: usize,
    fold: Option<Fold>,
    name: String,
}

#[derive(Debug, Serialize)]
struct JobSummary {
    name: String,
    home_id: String,
    fold: Option<usize>,
    output_dir: PathBuf,
    pipeline: PipelineReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<EvalReport>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    jobs: Vec<JobSummary>,
    /// Calls that reached the configured backend (cache misses included).
    pub backend_calls: usize,
    pub cache_hits: usize,
}

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn open(path: &Path, what: &str) -> CliResult<File> {
    File::open(path).map_err(|e| usage(format!("cannot open {what} {}: {e}", path.display())))
}

pub fn resolve_label_map(spec: &str) -> CliResult<LabelMap> {
    if let Some(m) = LabelMap::builtin(spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!("label map {spec:?} is neither a builtin nor a file")));
    }
    LabelMap::from_toml_str(&read_text(path, "label map")?).map_err(|e| data(format!("{spec}: {e}")))
}

fn read_predictions(path: &Path, source: PredictionSource) -> CliResult<Vec<PredictionRecord>> {
    parse_predictions(open(path, "predictions")?, source).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_home(h: &HomeConfig) -> CliResult<LoadedHome> {
    let metadata = match &h.metadata {
        Some(p) => SensorMetadataSet::from_toml_str(&read_text(p, "metadata")?)
            .map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => SensorMetadataSet::default(),
    };
    let events = match &h.events {
        Some(p) => {
            let log = parse_event_log(BufReader::new(open(p, "events")?), &metadata, ParseOptions::default())
                .map_err(|e| data(format!("{}: {e}", p.display())))?;
            if !log.issues.is_empty() {
                log::warn!(
                    "{}: {} line issue(s), first at line {}",
                    p.display(),
                    log.issues.len(),
                    log.issues[0].line
                );
            }
            log.events
        }
        None => Vec::new(),
    };
    let env_predictions = h
        .env_predictions
        .as_deref()
        .map(|p| read_predictions(p, PredictionSource::Env))
        .transpose()?;
    let wear_predictions = h
        .wear_predictions
        .as_deref()
        .map(|p| read_predictions(p, PredictionSource::Wear))
        .transpose()?;
    let prior = match &h.prior {
        Some(p) => {
            load_prior(&read_text(p, "prior")?)
                .map_err(|e| data(format!("{}: {e}", p.display())))?
                .0
        }
        None => ContextPrior::default(),
    };
    let ground_truth = match &h.ground_truth {
        Some(p) => {
            let raw =
                parse_ground_truth(open(p, "ground truth")?).map_err(|e| data(format!("{}: {e}", p.display())))?;
            let mut gt = normalize_ground_truth(raw);
            if let Some(spec) = &h.label_map {
                let map = resolve_label_map(spec)?;
                for s in &mut gt {
                    s.label = map
                        .map(&s.label)
                        .map_err(|e| data(format!("{}: {e}", p.display())))?
                        .to_string();
                }
            }
            Some(gt)
        }
        None => None,
    };
    Ok(LoadedHome {
        config: h.clone(),
        inputs: HomeInputs {
            events,
            metadata,
            env_predictions,
            wear_predictions,
            prior,
            span: None,
        },
        prior_given: h.prior.is_some(),
        ground_truth,
    })
}

fn label_set(cfg: &RunConfig, home: &LoadedHome) -> CliResult<LabelSet> {
    let labels = if !cfg.labels.is_empty() {
        LabelSet::new(cfg.labels.iter().cloned())
    } else if !home.inputs.prior.allowed_labels.is_empty() {
        home.inputs.prior.allowed_labels.clone()
    } else if let Some(spec) = &home.config.label_map {
        LabelSet::new(resolve_label_map(spec)?.shared_labels())
    } else {
        return Err(usage(format!(
            "home {}: no label set (set `labels`, the prior's allowed_labels, or a label_map)",
            home.config.id
        )));
    };
    Ok(labels)
}

fn ground_truth_span(gt: &[GroundTruthSegment]) -> Option<Span> {
    let start = gt.iter().map(|s| s.start).min()?;
    let end = gt.iter().map(|s| s.end).max()?;
    Some(Span::new(
        floor_to_unit(start, Duration::days(1)),
        ceil_to_unit(end, Duration::days(1)),
    ))
}

fn plan_jobs(cfg: &RunConfig, homes: &[LoadedHome]) -> CliResult<Vec<Job>> {
    let mut jobs = Vec::new();
    for (i, h) in homes.iter().enumerate() {
        match &cfg.split {
            None => jobs.push(Job {
                home: i,
                fold: None,
                name: h.config.id.clone(),
            }),
            Some(split) => {
                let gt = h.ground_truth.as_deref().unwrap_or_default();
                let span = ground_truth_span(gt)
                    .ok_or_else(|| data(format!("home {}: ground truth is empty", h.config.id)))?;
                let folds = blocked_splits(&span, split.folds, split.test_days)
                    .map_err(|e| data(format!("home {}: {e}", h.config.id)))?;
                for f in folds {
                    jobs.push(Job {
                        home: i,
                        name: format!("{}/fold-{}", h.config.id, f.index),
                        fold: Some(f),
                    });
                }
            }
        }
    }
    Ok(jobs)
}

fn build_backend(cfg: &RunConfig) -> CliResult<(Arc<dyn Backend>, Option<Arc<CachingBackend>>)> {
    let inner: Arc<dyn Backend> = match cfg.backend.kind {
        BackendKind::Rule => Arc::new(RuleBackend::new(cfg.unit())),
        BackendKind::Http => {
            let mut http = HttpConfig::from_env(&cfg.backend.model)
                .or_else(|| {
                    cfg.backend.url.as_ref().map(|url| HttpConfig {
                        url: url.clone(),
                        api_key: std::env::var("TRACE_LLM_KEY").ok(),
                        model: cfg.backend.model.clone(),
                        timeout_secs: cfg.backend.timeout_secs,
                    })
                })
                .ok_or_else(|| Failure::Backend("TRACE_LLM_URL is not set and backend.url is empty".into()))?;
            if let Some(url) = &cfg.backend.url {
                http.url = url.clone();
            }
            http.timeout_secs = cfg.backend.timeout_secs;
            Arc::new(HttpBackend::new(http).map_err(|e| Failure::Backend(e.to_string()))?)
        }
    };
    if !cfg.backend.cache {
        return Ok((inner, None));
    }
    let dir = cfg.output_dir.join("cache");
    let cache =
        Arc::new(CachingBackend::new(inner, &dir).map_err(|e| usage(format!("cache dir {}: {e}", dir.display())))?);
    Ok((cache.clone(), Some(cache)))
}

fn inference_failure(job: &str, e: InferenceError) -> Failure {
    match e {
        InferenceError::Config(m) => usage(format!("{job}: {m}")),
        other => data(format!("{job}: {other}")),
    }
}

fn run_job(cfg: &RunConfig, home: &LoadedHome, job: &Job, backend: &Arc<dyn Backend>) -> CliResult<JobSummary> {
    let declared = label_set(cfg, home)?;
    let allowed = declared.clone().with_fallback();
    let mut inputs = home.inputs.clone();
    if let Some(fold) = &job.fold {
        inputs.span = Some(fold.test);
        let derive = cfg.split.as_ref().is_some_and(|s| s.derive_prior);
        if !home.prior_given && derive {
            let gt = home.ground_truth.as_deref().unwrap_or_default();
            let derived = derive_prior_from_history(gt, &fold.train, &allowed, &DeriveConfig::default());
            inputs.prior = derived.prior;
        }
    }

    let mut pc = PipelineConfig::new(home.config.id.clone(), allowed.clone());
    pc.unit = cfg.unit();
    pc.window_size = cfg.window_size;
    pc.stride = cfg.stride.unwrap_or(cfg.window_size);
    pc.history_windows = cfg.history_windows;
    pc.split_refinement = cfg.split_refinement;
    pc.out_of_home_horizon = Duration::minutes(cfg.out_of_home_minutes);

    let dir = cfg.output_dir.join(&job.name);
    fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let log_path = dir.join("prompts.jsonl");
    let _ = fs::remove_file(&log_path);
    let run_log = RunLog::create(&log_path).map_err(|e| usage(format!("{}: {e}", log_path.display())))?;
    let mut reasoner = Reasoner::new(backend.clone()).with_run_log(Arc::new(run_log));
    reasoner.max_attempts = cfg.backend.max_attempts;
    reasoner.max_tokens = cfg.backend.max_tokens;

    let out = run_pipeline(&inputs, &pc, &reasoner).map_err(|e| inference_failure(&job.name, e))?;
    let csv_path = dir.join("timeline.csv");
    let file = File::create(&csv_path).map_err(|e| usage(format!("{}: {e}", csv_path.display())))?;
    out.store
        .write_csv(file)
        .map_err(|e| data(format!("{}: {e}", csv_path.display())))?;

    let eval = home.ground_truth.as_ref().and_then(|gt| {
        let span = job.fold.as_ref().map(|f| f.test).unwrap_or_else(|| out.timeline.span());
        let pred = segments_from_materialized(&out.store.materialize(&span));
        let gt: Vec<Segment> = gt.iter().map(Segment::from).collect();
        let options = EvalOptions {
            unit: cfg.unit(),
            label_space: Some(declared.as_slice().to_vec()),
            ..EvalOptions::default()
        };
        match evaluate(
            &pred,
            &gt,
            &EvalOptions {
                span: Some(span),
                ..options
            },
        ) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("{}: evaluation skipped: {e}", job.name);
                None
            }
        }
    });
    if let Some(r) = &eval {
        write_json(&dir.join("eval.json"), r)?;
        fs::write(dir.join("eval.txt"), r.to_table()).map_err(|e| usage(e.to_string()))?;
    }
    let summary = JobSummary {
        name: job.name.clone(),
        home_id: home.config.id.clone(),
        fold: job.fold.as_ref().map(|f| f.index),
        output_dir: dir.clone(),
        pipeline: out.report,
        eval,
    };
    write_json(&dir.join("report.json"), &summary)?;
    log::info!(
        "{}: {} steps, {} degraded window(s)",
        job.name,
        summary.pipeline.steps,
        summary.pipeline.degraded_windows.len()
    );
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn cmd_run(cfg: &RunConfig) -> CliResult<RunSummary> {
    let homes = cfg.homes.iter().map(load_home).collect::<CliResult<Vec<_>>>()?;
    let jobs = plan_jobs(cfg, &homes)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| usage(format!("{}: {e}", cfg.output_dir.display())))?;
    let (backend, cache) = build_backend(cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| usage(e.to_string()))?;
    let results: Vec<CliResult<JobSummary>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| run_job(cfg, &homes[j.home], j, &backend))
            .collect()
    });
    let jobs = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let attempts: usize = jobs.iter().map(|j| j.pipeline.backend_attempts).sum();
    let summary = RunSummary {
        backend_calls: cache.as_ref().map_or(attempts, |c| c.misses()),
        cache_hits: cache.as_ref().map_or(0, |c| c.hits()),
        jobs,
    };
    write_json(&cfg.output_dir.join("run.json"), &summary)?;

    let requests: usize = summary.jobs.iter().map(|j| j.pipeline.backend_requests).sum();
    let unavailable: usize = summary.jobs.iter().map(|j| j.pipeline.unavailable_requests).sum();
    if requests > 0 && unavailable == requests {
        return Err(Failure::Backend(format!(
            "all {requests} backend requests failed; fallback timelines written"
        )));
    }
    Ok(summary)
}
