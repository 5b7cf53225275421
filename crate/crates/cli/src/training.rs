//! Tagger training from projected, oracle or gold constraints.

use std::collections::BTreeSet;

use anyhow::bail;
use morphproj::corpus::{build_tag_inventory, parse_corpus, restrict_to_attribute_types, ReadOptions, Sentence, TagInventory};
use morphproj::features::{load_embeddings, read_clusters, ClusterMap, EmbeddingTable, ShapeFlags, WindowConfig};
use morphproj::hmm::{train_lbfgs, HmmConfig};
use morphproj::projection::io::read_lattices;
use morphproj::projection::{
    build_oracle_dictionary, gold_lattices, type_lattices, within_budget, ConstraintLattice, ConstraintMode,
};
use morphproj::wsabie::{self, FeatureContext, RankWeighting, WsabieConfig};
use morphproj::Execution;
use serde_json::{json, Value};

use crate::cli::{Constraints, ModelKind, ModelOpts, SupervisedArgs, TextFormat, TrainArgs, Weighting};
use crate::manifest::RunManifest;
use crate::pipeline::read_text;
use crate::UsageError;

pub fn wsabie_config(opts: &ModelOpts) -> WsabieConfig {
    let w = &opts.wsabie;
    WsabieConfig {
        dim: w.dim,
        learning_rate: w.learning_rate,
        margin: w.margin,
        epochs: w.epochs,
        norm_cap: w.norm_cap,
        seed: opts.seed,
        weighting: match w.weighting {
            Weighting::Harmonic => RankWeighting::Harmonic,
            Weighting::Uniform => RankWeighting::Uniform,
        },
        window: WindowConfig {
            context: w.context,
            cluster_window: w.cluster_window,
        },
    }
}

pub fn hmm_config(opts: &ModelOpts) -> HmmConfig {
    let h = &opts.hmm;
    HmmConfig {
        l2: h.l2,
        lbfgs_memory: h.lbfgs_memory,
        max_iterations: h.max_iterations,
        tolerance: h.tolerance,
        rare_threshold: h.rare_threshold,
        pos_pair_features: !h.no_pos_pairs,
        shape: ShapeFlags {
            digit: !h.no_shape_features,
            capital: !h.no_shape_features,
        },
    }
}

pub fn load_clusters(m: &mut RunManifest, path: Option<&std::path::Path>) -> anyhow::Result<Option<ClusterMap>> {
    path.map(|p| Ok(read_clusters(&m.read("clusters", p)?)?)).transpose()
}

pub fn load_embedding_table(m: &mut RunManifest, path: Option<&std::path::Path>) -> anyhow::Result<EmbeddingTable> {
    match path {
        Some(p) => {
            let table = load_embeddings(&m.read("embeddings", p)?)?;
            m.count("embedding_words", table.len());
            Ok(table)
        }
        None => Ok(EmbeddingTable::empty(0)),
    }
}

/// Train the chosen model; returns its serialised form and records the
/// effective model configuration.
fn fit(
    opts: &ModelOpts,
    lattices: &[ConstraintLattice],
    inventory: &TagInventory,
    exec: Execution,
    m: &mut RunManifest,
) -> anyhow::Result<(String, Value)> {
    if lattices.is_empty() {
        bail!("no training sentences");
    }
    m.seed = Some(opts.seed);
    m.count("train_sentences", lattices.len());
    m.count("train_tokens", lattices.iter().map(|l| l.len()).sum::<usize>());
    m.count("tags", inventory.len());
    let clusters = load_clusters(m, opts.features.clusters.as_deref())?;
    match opts.model {
        ModelKind::Wsabie => {
            let config = wsabie_config(opts);
            config.validate().map_err(|e| UsageError(e.to_string()))?;
            let embeddings = load_embedding_table(m, opts.features.embeddings.as_deref())?;
            let ctx = FeatureContext {
                embeddings: &embeddings,
                clusters: clusters.as_ref(),
            };
            let (model, stats) = wsabie::train(lattices, inventory, &ctx, &config, exec)?;
            m.count("trainable_tokens", stats.trainable_tokens);
            m.count("skipped_tokens", stats.skipped_tokens);
            m.count("updates", stats.updates);
            m.count("embedding_dim", embeddings.dim());
            m.count("sparse_features", model.vocab.len());
            Ok((model.to_json(), serde_json::to_value(&config)?))
        }
        ModelKind::Hmm => {
            if opts.features.embeddings.is_some() {
                log::warn!("the HMM does not use embeddings; ignoring --embeddings");
            }
            let config = hmm_config(opts);
            config.validate().map_err(|e| UsageError(e.to_string()))?;
            let (model, report) = train_lbfgs(lattices, inventory, clusters.as_ref(), &config, exec)?;
            m.count("iterations", report.iterations);
            m.count("evaluations", report.evaluations);
            m.count("termination", report.termination.clone());
            m.count("skipped_sentences", report.skipped_sentences);
            if let Some(last) = report.trace.last() {
                m.count("objective", json!(last));
            }
            m.count("parameters", model.num_params());
            Ok((model.to_json(), serde_json::to_value(&config)?))
        }
    }
}

fn feature_paths(opts: &ModelOpts) -> Value {
    json!({
        "embeddings": opts.features.embeddings,
        "clusters": opts.features.clusters,
    })
}

fn budget(lattices: Vec<ConstraintLattice>, max_tokens: usize) -> Vec<ConstraintLattice> {
    let keep = within_budget(&lattices, max_tokens, ConstraintLattice::len).len();
    let mut lattices = lattices;
    lattices.truncate(keep);
    lattices
}

fn read_gold(m: &mut RunManifest, path: &std::path::Path, exec: Execution) -> anyhow::Result<Vec<Sentence>> {
    Ok(parse_corpus(&m.read("gold", path)?, ReadOptions::unlimited(), exec)?.sentences)
}

fn mode_constraints(mode: ConstraintMode) -> Constraints {
    match mode {
        ConstraintMode::Type => Constraints::Type,
        ConstraintMode::TypeAndToken => Constraints::TypeToken,
        ConstraintMode::UnambiguousType => Constraints::Unambiguous,
    }
}

pub fn train(args: &TrainArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    let file = match &args.lattices {
        Some(p) => Some(read_lattices(&m.read("lattices", p)?)?),
        None => None,
    };
    let file_mode = file.as_ref().map(|f| {
        f.constraint_mode()
            .map(mode_constraints)
            .ok_or_else(|| anyhow::anyhow!("lattice file has unknown mode {:?}", f.mode))
    });
    let file_mode = file_mode.transpose()?;
    let constraints = match (args.constraints, file_mode) {
        (Some(c), _) => c,
        (None, Some(c)) => c,
        (None, None) => return Err(UsageError("--constraints is required without --lattices".into()).into()),
    };

    let (lattices, inventory) = match constraints {
        Constraints::Type | Constraints::TypeToken | Constraints::Unambiguous => {
            let Some(file) = file else {
                return Err(UsageError("projected constraints need --lattices from `project`".into()).into());
            };
            if file_mode != Some(constraints) {
                return Err(UsageError(format!(
                    "--constraints {} does not match the lattice file, which was built with {}",
                    json!(constraints).as_str().unwrap_or_default(),
                    file.mode
                ))
                .into());
            }
            (budget(file.lattices, args.max_tokens), file.inventory)
        }
        Constraints::Oracle => {
            let Some(gold) = &args.gold else {
                return Err(UsageError("oracle constraints need --gold".into()).into());
            };
            let gold = read_gold(m, gold, exec)?;
            let dict = build_oracle_dictionary(&gold)?;
            let sentences = match (&args.text, file) {
                (Some(p), _) => read_text(m, "text", p, TextFormat::Raw, exec)?,
                (None, Some(f)) => f.lattices.into_iter().map(|l| l.sentence).collect(),
                (None, None) => return Err(UsageError("oracle constraints need --text or --lattices".into()).into()),
            };
            m.count("dictionary_types", dict.len());
            (type_lattices(&sentences, &dict, args.max_tokens), dict.inventory().clone())
        }
        Constraints::Gold => {
            let Some(gold) = &args.gold else {
                return Err(UsageError("gold constraints need --gold".into()).into());
            };
            let gold = read_gold(m, gold, exec)?;
            let inventory = build_tag_inventory(&gold)?;
            let gold = within_budget(&gold, args.max_tokens, Sentence::len);
            (gold_lattices(gold, &inventory, None)?, inventory)
        }
    };
    let (model, model_config) = fit(&args.model, &lattices, &inventory, exec, m)?;
    m.config = json!({
        "model": args.model.model,
        "constraints": constraints,
        "max_tokens": args.max_tokens,
        "features": feature_paths(&args.model),
        "model_config": model_config,
    });
    m.write("model", &args.out, &model)
}

pub fn supervised_train(args: &SupervisedArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    let mut gold = read_gold(m, &args.gold, exec)?;
    if let Some(keep) = &args.restrict_attributes {
        let keep: BTreeSet<String> = keep.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        gold = restrict_to_attribute_types(&gold, &keep);
    }
    let inventory = build_tag_inventory(&gold)?;
    let lattices = gold_lattices(&gold, &inventory, args.first_n_tokens)?;
    m.count("labelled_tokens", lattices.iter().map(|l| l.constrained_tokens()).sum::<usize>());
    let (model, model_config) = fit(&args.model, &lattices, &inventory, exec, m)?;
    m.config = json!({
        "model": args.model.model,
        "first_n_tokens": args.first_n_tokens,
        "restrict_attributes": args.restrict_attributes,
        "features": feature_paths(&args.model),
        "model_config": model_config,
    });
    m.write("model", &args.out, &model)
}
