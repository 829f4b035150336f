//! The run subcommands. Each resolves its configuration, loads data, does
//! its work, and leaves `config.resolved` next to whatever it wrote. None of
//! them touch dataset files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use gmi_core::encoder::{encode, EncoderParams};
use gmi_core::eval::{link_auc, logistic_eval, standardize, LogisticConfig};
use gmi_core::graph::{self, Graph};
use gmi_core::objective::Discriminator;
use gmi_core::seeding::{stream_rng, streams};
use gmi_core::trainer::{self, history_lines, StopReason, TrainerState};
use rand::Rng;

use crate::config::RunConfig;
use crate::dataset::{self, Loaded};
use crate::failure::{from_eval, from_graph, from_train, CliResult, Failure};

fn required_dataset(config: &RunConfig) -> CliResult<&str> {
    config
        .dataset
        .as_deref()
        .ok_or_else(|| Failure::config(anyhow!("--dataset is required")))
}

fn required_out(config: &RunConfig) -> CliResult<&Path> {
    config
        .out
        .as_deref()
        .ok_or_else(|| Failure::config(anyhow!("--out is required")))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(Failure::config)
}

fn write_resolved(config: &RunConfig, dir: &Path) -> CliResult<()> {
    fs::write(dir.join("config.resolved"), config.render())
        .with_context(|| format!("writing config.resolved into {}", dir.display()))
        .map_err(Failure::config)
}

fn load_normalized(spec: &str) -> CliResult<Loaded> {
    let mut loaded = dataset::load(spec)?;
    loaded.graph = graph::row_normalize_features(&loaded.graph);
    Ok(loaded)
}

fn print_loaded(loaded: &Loaded) {
    let g = &loaded.graph;
    println!(
        "dataset: {} nodes, {} edges, {} features, {} classes ({})",
        g.n_nodes(),
        g.n_edges(),
        g.n_features(),
        g.n_classes(),
        loaded.source
    );
    for note in &loaded.notes {
        println!("note: {note}");
    }
}

fn run_training(graph: &Graph, config: &RunConfig) -> CliResult<trainer::TrainOutcome> {
    trainer::train(graph, &config.encoder_config(), &config.gmi_config(), &config.train_config())
        .map_err(from_train)
}

fn describe_outcome(outcome: &trainer::TrainOutcome) {
    let stop = match outcome.stop {
        StopReason::BudgetExhausted => "epoch budget exhausted",
        StopReason::EarlyStopped => "early stopping",
    };
    let last = outcome.history.last();
    println!(
        "trained {} epochs ({stop}); best epoch {}",
        outcome.history.len(),
        outcome.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string())
    );
    if let Some(stats) = last {
        println!(
            "final loss {:.6} (fmi {:.6}, topology {:.6})",
            stats.loss, stats.fmi, stats.topology
        );
    }
}

pub fn train(mut config: RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let spec = required_dataset(&config)?.to_string();
    let out = required_out(&config)?.to_path_buf();
    config.dataset = Some(spec.clone());
    let loaded = load_normalized(&spec)?;
    print_loaded(&loaded);

    prepare_out(&out)?;
    write_resolved(&config, &out)?;

    let outcome = run_training(&loaded.graph, &config)?;
    describe_outcome(&outcome);

    let (embeddings, _) = encode(&loaded.graph, &outcome.encoder).map_err(Failure::data)?;
    outcome.state.save(&out.join("checkpoint.bin")).map_err(from_train)?;
    dataset::write_embeddings(&out.join("embeddings.tsv"), loaded.graph.node_ids(), &embeddings)?;
    fs::write(out.join("history.tsv"), history_lines(&outcome.history))
        .context("writing history.tsv")
        .map_err(Failure::data)?;
    println!("wrote checkpoint.bin, embeddings.tsv, history.tsv to {}", out.display());
    println!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Best-epoch parameters when the checkpoint has them, else the live ones.
fn checkpoint_encoder(state: &TrainerState) -> (&EncoderParams, &[Discriminator]) {
    match &state.best {
        Some(best) => (&best.encoder, &best.discs),
        None => (&state.encoder, &state.discs),
    }
}

fn embeddings_for_eval(config: &RunConfig, loaded: &Loaded) -> CliResult<gmi_core::Matrix> {
    match (&config.embeddings, &config.checkpoint) {
        (Some(_), Some(_)) => Err(Failure::config(anyhow!(
            "--embeddings and --checkpoint are mutually exclusive"
        ))),
        (None, None) => Err(Failure::config(anyhow!(
            "classify needs --embeddings or --checkpoint"
        ))),
        (Some(path), None) => dataset::read_embeddings(path, loaded.graph.node_ids()),
        (None, Some(path)) => {
            let state = TrainerState::load(path)
                .map_err(from_train)
                .map_err(|f| f.context("reading checkpoint"))?;
            let (params, _) = checkpoint_encoder(&state);
            let (embeddings, _) = encode(&loaded.graph, params).map_err(Failure::data)?;
            Ok(embeddings)
        }
    }
}

pub fn classify(mut config: RunConfig) -> CliResult<()> {
    let spec = required_dataset(&config)?.to_string();
    let out = required_out(&config)?.to_path_buf();
    let runs = config.runs.unwrap_or(50);
    config.runs = Some(runs);

    let loaded = load_normalized(&spec)?;
    print_loaded(&loaded);
    let labels = loaded
        .graph
        .labels()
        .ok_or_else(|| Failure::data(anyhow!("dataset has no labels")))?;
    let masks = loaded
        .graph
        .masks()
        .ok_or_else(|| Failure::data(anyhow!("dataset has no split masks")))?;

    let raw = embeddings_for_eval(&config, &loaded)?;
    let embeddings = if config.standardize { standardize(&raw) } else { raw };

    let mut report = logistic_eval(
        &embeddings,
        labels,
        &masks.train,
        &masks.test,
        runs,
        config.seed,
        &LogisticConfig::default(),
    )
    .map_err(from_eval)?;
    report.config_echo =
        format!("{}; standardize = {}", report.config_echo, config.standardize);

    prepare_out(&out)?;
    write_resolved(&config, &out)?;
    dataset::write_report(&report, &out)?;
    print!("{}", report.text());
    println!("wrote report.txt, report.ndjson to {}", out.display());
    Ok(())
}

pub fn linkpred(mut config: RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let spec = required_dataset(&config)?.to_string();
    let out = required_out(&config)?.to_path_buf();
    let runs = config.runs.unwrap_or(10);
    config.runs = Some(runs);

    let loaded = load_normalized(&spec)?;
    print_loaded(&loaded);
    let component = graph::largest_component(&loaded.graph).map_err(from_graph)?;
    if component.graph.n_nodes() < loaded.graph.n_nodes() {
        println!(
            "largest component: kept {} of {} nodes",
            component.graph.n_nodes(),
            loaded.graph.n_nodes()
        );
    }
    let original = component.graph;

    let removal_seed: u64 = stream_rng(config.seed, streams::EDGE_REMOVAL).gen();
    let split = graph::remove_edges(&original, config.ratio, removal_seed).map_err(from_graph)?;
    println!(
        "removed {} of {} edges (ratio {})",
        split.removed_edges.len(),
        original.n_edges(),
        config.ratio
    );

    prepare_out(&out)?;
    write_resolved(&config, &out)?;
    let mut removed = String::new();
    for (i, j) in &split.removed_edges {
        removed.push_str(&format!("{i}\t{j}\n"));
    }
    fs::write(out.join("removed_edges.tsv"), removed)
        .context("writing removed_edges.tsv")
        .map_err(Failure::data)?;

    let outcome = run_training(&split.damaged, &config)?;
    describe_outcome(&outcome);
    let (embeddings, _) = encode(&split.damaged, &outcome.encoder).map_err(Failure::data)?;
    outcome.state.save(&out.join("checkpoint.bin")).map_err(from_train)?;
    dataset::write_embeddings(&out.join("embeddings.tsv"), original.node_ids(), &embeddings)?;

    let report =
        link_auc(&embeddings, &split.removed_edges, &original, config.seed, runs)
            .map_err(from_eval)?;
    dataset::write_report(&report, &out)?;
    print!("{}", report.text());
    println!("wrote removed_edges.tsv, checkpoint.bin, embeddings.tsv, report.txt, report.ndjson");
    println!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

pub fn export_cache(config: RunConfig) -> CliResult<()> {
    let spec = required_dataset(&config)?.to_string();
    let out = required_out(&config)?.to_path_buf();
    let loaded = dataset::load(&spec)?;
    print_loaded(&loaded);
    prepare_out(&out)?;
    write_resolved(&config, &out)?;
    let path: PathBuf = out.join("cache.bin");
    graph::write_cache(&path, &loaded.graph).map_err(from_graph)?;
    println!("wrote {}", path.display());
    Ok(())
}
