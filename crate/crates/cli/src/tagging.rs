//! Tagging with a trained model, and evaluation.

use anyhow::{anyhow, bail};
use morphproj::corpus::{parse_corpus, write_corpus, ReadOptions, TagColumn};
use morphproj::eval::{score, EvalConfig, EvalMode, MacroScope};
use morphproj::hmm::FeatureHmm;
use morphproj::projection::io::read_dictionary;
use morphproj::wsabie::{FeatureContext, WsabieModel};
use morphproj::Execution;

use crate::cli::{EvaluateArgs, Mode, Scope, TagArgs};
use crate::manifest::RunManifest;
use crate::pipeline::read_text;
use crate::training::{load_clusters, load_embedding_table};
use crate::UsageError;

enum Model {
    Wsabie(WsabieModel),
    Hmm(FeatureHmm),
}

fn load_model(text: &str) -> anyhow::Result<Model> {
    let header: serde_json::Value = serde_json::from_str(text).map_err(|e| anyhow!("model file is not JSON: {e}"))?;
    match header.get("format").and_then(|f| f.as_str()) {
        Some("morphproj-wsabie") => Ok(Model::Wsabie(WsabieModel::from_json(text)?)),
        Some("morphproj-hmm") => Ok(Model::Hmm(FeatureHmm::from_json(text)?)),
        Some(other) => bail!("unsupported model format {other:?}"),
        None => bail!("model file has no format field"),
    }
}

fn same_file(a: &std::path::Path, b: &std::path::Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

pub fn tag(args: &TagArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    for input in [Some(&args.input), Some(&args.model), args.dictionary.as_ref()].into_iter().flatten() {
        if same_file(input, &args.out) {
            return Err(UsageError(format!("refusing to overwrite input {}", input.display())).into());
        }
    }
    m.config = serde_json::to_value(args)?;
    let model = load_model(&m.read("model", &args.model)?)?;
    let mut sentences = read_text(m, "input", &args.input, args.format, exec)?;
    match &model {
        Model::Wsabie(w) => {
            if args.dictionary.is_some() {
                log::warn!("the ranking tagger decodes without a dictionary; ignoring --dictionary");
            }
            if w.embedding_dim > 0 && args.embeddings.is_none() {
                return Err(UsageError(format!(
                    "the model was trained with {}-dimensional embeddings; pass --embeddings",
                    w.embedding_dim
                ))
                .into());
            }
            let embeddings = load_embedding_table(m, args.embeddings.as_deref())?;
            let clusters = load_clusters(m, args.clusters.as_deref())?;
            let ctx = FeatureContext {
                embeddings: &embeddings,
                clusters: clusters.as_ref(),
            };
            w.tag_corpus(&mut sentences, &ctx, exec)?;
        }
        Model::Hmm(h) => {
            if args.embeddings.is_some() || args.clusters.is_some() {
                log::warn!("HMM emission features are fixed at training time; ignoring --embeddings and --clusters");
            }
            let dict = match &args.dictionary {
                Some(p) => Some(read_dictionary(&m.read("dictionary", p)?, h.inventory.clone())?),
                None => None,
            };
            h.decoder(exec).tag_corpus(&mut sentences, dict.as_ref(), exec);
        }
    }
    m.count("sentences", sentences.len());
    m.count("tokens", sentences.iter().map(|s| s.len()).sum::<usize>());
    m.write("tagged", &args.out, &write_corpus(&sentences, TagColumn::Predicted))
}

pub fn evaluate(args: &EvaluateArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    let mode = match args.mode {
        Mode::Standard => EvalMode::Standard,
        Mode::Intersected => EvalMode::Intersected,
        Mode::Pos => EvalMode::Pos,
    };
    if mode != EvalMode::Pos && (args.source_train.is_none() || args.target_train.is_none()) {
        return Err(UsageError(format!(
            "{mode} evaluation needs --source-train and --target-train to derive the shared attribute sets"
        ))
        .into());
    }
    m.config = serde_json::to_value(args)?;
    let mut corpus = |role: &str, path: &std::path::Path| -> anyhow::Result<_> {
        Ok(parse_corpus(&m.read(role, path)?, ReadOptions::unlimited(), exec)?.sentences)
    };
    let gold = corpus("gold", &args.gold)?;
    let predicted = corpus("predicted", &args.predicted)?;
    let source_train = args.source_train.as_deref().map(|p| corpus("source_train", p)).transpose()?;
    let target_train = args.target_train.as_deref().map(|p| corpus("target_train", p)).transpose()?;
    if gold.len() != predicted.len() {
        bail!("gold has {} sentences, predictions have {}", gold.len(), predicted.len());
    }
    for (i, (g, p)) in gold.iter().zip(&predicted).enumerate() {
        if g.words().ne(p.words()) {
            bail!("sentence {}: gold and predicted tokens differ", i + 1);
        }
    }
    let mut config = EvalConfig::derive(
        mode,
        source_train.as_deref().unwrap_or_default(),
        target_train.as_deref().unwrap_or_default(),
    );
    config.scope = match args.scope {
        Scope::Observed => MacroScope::Observed,
        Scope::Shared => MacroScope::Shared,
    };
    let report = score(&gold, &predicted, &config, exec)?;
    m.count("tokens", report.token_count);
    m.count("macro_f1", report.macro_f1);
    m.count("pos_accuracy", report.pos_accuracy);
    m.count("attributes_scored", report.per_attribute.len());
    m.write("report", &args.out, &report.to_tsv())?;
    print!("{}", report.to_table());
    Ok(())
}
