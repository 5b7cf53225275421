//! Data preparation: alignment, projection and clustering.

use anyhow::{bail, Context};
use morphproj::corpus::{parse_corpus, parse_raw, ReadOptions, Sentence, Token};
use morphproj::features::{induce_clusters, write_clusters, ExchangeConfig};
use morphproj::projection::io::{read_alignments, read_bitext, write_alignments, write_bitext, write_dictionary, write_lattices};
use morphproj::projection::{
    accumulate_type_distributions, assemble_pairs, build_lattice_corpus, build_type_dictionary, model1_align,
    projected_inventory, ConstraintMode, ProjectionConfig,
};
use morphproj::Execution;
use serde_json::json;

use crate::cli::{AlignArgs, ClusterArgs, Constraints, ProjectArgs, TextFormat};
use crate::manifest::RunManifest;
use crate::UsageError;

pub fn align(args: &AlignArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    if args.iterations == 0 {
        return Err(UsageError("--iterations must be at least 1".into()).into());
    }
    m.config = serde_json::to_value(args)?;
    let text = m.read("bitext", &args.bitext)?;
    let cap = (args.max_sentence_len > 0).then_some(args.max_sentence_len);
    let bitext = read_bitext(&text, cap)?;
    m.count("pairs_kept", bitext.pairs.len());
    m.count("pairs_empty", bitext.empty);
    m.count("pairs_too_long", bitext.too_long);
    let aligned = model1_align(&bitext.pairs, args.iterations, exec)?;
    let links = |v: &[Vec<_>]| v.iter().map(Vec::len).sum::<usize>();
    m.count("forward_links", links(&aligned.forward));
    m.count("reverse_links", links(&aligned.reverse));
    m.write("forward", &args.out_forward, &write_alignments(&aligned.forward))?;
    m.write("reverse", &args.out_reverse, &write_alignments(&aligned.reverse))?;
    if let Some(path) = &args.out_bitext {
        m.write("bitext", path, &write_bitext(&bitext.pairs))?;
    } else if bitext.empty + bitext.too_long > 0 {
        log::warn!(
            "{} pairs were dropped; pass --out-bitext to keep a bitext that lines up with the alignments",
            bitext.empty + bitext.too_long
        );
    }
    Ok(())
}

fn constraint_mode(c: Constraints) -> Result<ConstraintMode, UsageError> {
    match c {
        Constraints::Type => Ok(ConstraintMode::Type),
        Constraints::TypeToken => Ok(ConstraintMode::TypeAndToken),
        Constraints::Unambiguous => Ok(ConstraintMode::UnambiguousType),
        Constraints::Oracle | Constraints::Gold => Err(UsageError(format!(
            "projection builds type, type+token or unambiguous lattices, not {}",
            serde_json::to_value(c).unwrap().as_str().unwrap_or_default()
        ))),
    }
}

pub fn project(args: &ProjectArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    let config = ProjectionConfig {
        alpha: args.alpha,
        beta: args.beta,
        max_train_tokens: args.max_tokens,
        constraint_mode: constraint_mode(args.constraints)?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    m.config = serde_json::to_value(args)?;

    let bitext = read_bitext(&m.read("bitext", &args.bitext)?, None)?;
    if bitext.empty > 0 {
        bail!("bitext has {} pairs with an empty side; project the bitext written by `align --out-bitext`", bitext.empty);
    }
    let source = parse_corpus(&m.read("source", &args.source)?, ReadOptions::unlimited(), exec)?.sentences;
    let forward = read_alignments(&m.read("forward", &args.forward)?).context("forward alignments")?;
    let reverse = read_alignments(&m.read("reverse", &args.reverse)?).context("reverse alignments")?;
    if source.len() != bitext.pairs.len() {
        bail!("tagged source has {} sentences but the bitext has {} pairs", source.len(), bitext.pairs.len());
    }
    for (i, (s, p)) in source.iter().zip(&bitext.pairs).enumerate() {
        if s.len() != p.source.len() {
            bail!("pair {}: tagged source has {} tokens, bitext source has {}", i + 1, s.len(), p.source.len());
        }
    }
    let targets: Vec<Sentence> = bitext
        .pairs
        .iter()
        .map(|p| Sentence::new(p.target.iter().map(Token::new).collect()))
        .collect();
    let pairs = assemble_pairs(&source, &targets, &forward, &reverse, config.alpha)?;

    let dists = accumulate_type_distributions(&pairs, exec)?;
    let inventory = projected_inventory(&pairs);
    let dictionary = build_type_dictionary(&dists, config.beta, &inventory);
    let lattices = build_lattice_corpus(&pairs, &dictionary, &config)?;

    m.count("pairs", pairs.len());
    m.count("links_forward", forward.iter().map(Vec::len).sum::<usize>());
    m.count("links_reverse", reverse.iter().map(Vec::len).sum::<usize>());
    m.count("links_kept", pairs.iter().map(|p| p.links.len()).sum::<usize>());
    m.count("tags", inventory.len());
    m.count("dictionary_types", dictionary.len());
    m.count("lattice_sentences", lattices.len());
    m.count("lattice_tokens", lattices.iter().map(|l| l.len()).sum::<usize>());
    m.count("constrained_tokens", lattices.iter().map(|l| l.constrained_tokens()).sum::<usize>());
    m.write("dictionary", &args.out_dictionary, &write_dictionary(&dictionary))?;
    m.write(
        "lattices",
        &args.out_lattices,
        &write_lattices(&lattices, dictionary.inventory(), &config.constraint_mode.to_string()),
    )?;
    Ok(())
}

pub fn read_text(m: &mut RunManifest, role: &str, path: &std::path::Path, format: TextFormat, exec: Execution) -> anyhow::Result<Vec<Sentence>> {
    let text = m.read(role, path)?;
    Ok(match format {
        TextFormat::Raw => parse_raw(&text, ReadOptions::unlimited()).sentences,
        TextFormat::Conllu => parse_corpus(&text, ReadOptions::unlimited(), exec)?.sentences,
    })
}

pub fn cluster(args: &ClusterArgs, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    if args.num_clusters == 0 {
        return Err(UsageError("--num-clusters must be at least 1".into()).into());
    }
    m.config = serde_json::to_value(args)?;
    let corpus = read_text(m, "corpus", &args.corpus, args.format, exec)?;
    let config = ExchangeConfig {
        num_clusters: args.num_clusters,
        max_words: args.max_words,
        max_iterations: args.max_iterations,
        trace: false,
    };
    let outcome = induce_clusters(&corpus, &config)?;
    m.count("sentences", corpus.len());
    m.count("tokens", corpus.iter().map(Sentence::len).sum::<usize>());
    m.count("clustered_words", outcome.clusters.len());
    m.count("passes", outcome.passes);
    m.count("moves", outcome.moves);
    m.count("objective", json!(outcome.objective));
    m.write("clusters", &args.out, &write_clusters(&outcome.clusters))
}
