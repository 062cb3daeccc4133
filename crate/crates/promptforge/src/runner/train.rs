//! `train`: build (or load) the training set, run the optimization loop,
//! and leave a complete, reproducible run directory behind.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use crate::dataset::{build_training_set, load_tasks, TrainingSet};
use crate::llm::LlmClient;
use crate::optimizer::{
    optimize, rng_for, Decision, LoopState, OptimizeParams, Prompt, RunSink,
};
use crate::sandbox::ProcessSandbox;

use super::config::RunConfig;
use super::rundir::{
    FileSink, Manifest, RunDir, RUN_LOG_FILE, TRAINING_SET_FILE, TRANSCRIPTS_FILE,
};
use super::{build_client, RunnerError};

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_prompt: Prompt,
    pub decision: Decision,
    pub stopped_at: u32,
    pub training_size: usize,
}

/// Run the full training pipeline into `config.output.run_dir`.
///
/// A fresh run writes the manifest first; a resumed run re-reads the
/// original manifest (its config snapshot and seed govern, so a drifted
/// config file cannot corrupt a half-finished run) and picks up from the
/// recorded iterations plus any cell checkpoints.
pub fn cmd_train(
    config: &RunConfig,
    scripted: Option<&Path>,
    cli_seed: Option<u64>,
    resume: bool,
) -> Result<TrainOutcome, RunnerError> {
    let started = Instant::now();

    let (run, manifest) = if resume {
        let run = RunDir::open_existing(&config.output.run_dir)?;
        let manifest = run.read_manifest()?;
        (run, manifest)
    } else {
        let run = RunDir::create_new(&config.output.run_dir)?;
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.resolve_seed(cli_seed),
            scripted_fixture: scripted.map(Into::into),
            config: config.clone(),
        };
        (run, manifest)
    };
    let _lock = run.lock()?;
    if !resume {
        run.write_manifest(&manifest)?;
    }

    let cfg = &manifest.config;
    let seed = manifest.seed;
    let fixture = scripted
        .map(Path::to_path_buf)
        .or_else(|| manifest.scripted_fixture.clone());
    let llm = build_client(cfg, fixture.as_deref())?;
    let sandbox = ProcessSandbox::new(cfg.sandbox.clone())
        .map_err(|e| RunnerError::Config(e.to_string()))?;

    let training = load_or_build_training_set(&run, cfg, seed, &llm, &sandbox)?;
    let initial = Prompt::initial(cfg.initial_prompt_text()?);

    let records = run.read_log_records()?;
    let state = if records.is_empty() {
        LoopState::fresh(&initial)
    } else {
        LoopState::from_records(&initial, &records)?
    };

    let params = OptimizeParams {
        n: cfg.optimize.n,
        k_max: cfg.optimize.k_max,
        window: cfg.optimize.window,
        seed,
        workers: cfg.sandbox.workers(),
    };
    let mut sink = FileSink::new(&run);
    let result = optimize(
        &initial,
        &training,
        &params,
        &llm,
        &sandbox,
        &mut sink,
        state,
    );

    // usage and timings are recorded even when the run aborts
    let _ = run.append_usage("train", &llm.totals());
    let _ = run.append_timing("train", started.elapsed().as_secs_f64());

    let outcome = result?;
    debug_assert!(run.exists(RUN_LOG_FILE));
    Ok(TrainOutcome {
        final_prompt: outcome.final_prompt,
        decision: outcome.decision,
        stopped_at: outcome.stopped_at,
        training_size: training.tasks.len(),
    })
}

fn load_or_build_training_set(
    run: &RunDir,
    cfg: &RunConfig,
    seed: u64,
    llm: &LlmClient,
    sandbox: &ProcessSandbox,
) -> Result<TrainingSet, RunnerError> {
    if run.exists(TRAINING_SET_FILE) {
        return Ok(TrainingSet::from_jsonl(&run.read(TRAINING_SET_FILE)?)?);
    }
    if let Some(prebuilt) = &cfg.train.training_set {
        let raw = std::fs::read_to_string(prebuilt).map_err(|e| {
            RunnerError::Config(format!(
                "train.training_set: cannot read {}: {e}",
                prebuilt.display()
            ))
        })?;
        let set = TrainingSet::from_jsonl(&raw)?;
        run.write_atomic(TRAINING_SET_FILE, &set.to_jsonl())?;
        return Ok(set);
    }

    let existing_path = cfg
        .train
        .existing_source
        .as_ref()
        .expect("validated: sources present without prebuilt set");
    let mutation_path = cfg
        .train
        .mutation_source
        .as_ref()
        .expect("validated: sources present without prebuilt set");
    let existing = load_tasks(existing_path, cfg.train.format)?;
    let mutation = load_tasks(mutation_path, cfg.train.format)?;
    let eval_ids: HashSet<String> = match &cfg.train.eval_corpus {
        Some(path) => load_tasks(path, cfg.train.format)?.ids(),
        None => HashSet::new(),
    };

    let mut rng = rng_for(seed, "dataset");
    let (set, transcripts) = build_training_set(
        &existing,
        &mutation,
        cfg.train.k_per_source,
        cfg.retry_budget(),
        &eval_ids,
        &mut rng,
        llm,
        sandbox,
    )?;
    for transcript in &transcripts {
        run.append_line(
            TRANSCRIPTS_FILE,
            &serde_json::to_string(transcript).expect("transcript serializes"),
        )?;
    }
    run.write_atomic(TRAINING_SET_FILE, &set.to_jsonl())?;
    Ok(set)
}
