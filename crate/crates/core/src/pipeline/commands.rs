//! File-level stage commands. Each reads its inputs, runs one module and
//! writes its outputs under the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::align::{harmonize, Checkpoint, TransportConfig};
use crate::annotate::{annotate_tree, divergence_score, hierarchy_score, PromptTemplates};
use crate::corpus::{
    aggregate_parents, build_cooccurrence, read_events, sppmi, svd_embed, write_events, CodeVocabulary,
    EmbeddingMatrix, ParentMap,
};
use crate::error::{open_input, Error, Result};
use crate::evalkit::{
    ari, nmi, pair_auc, partition_from_tree, sibling_precision_sensitivity, LabeledPairs, MetricsReport,
    PartitionMode, PartitionPair, Relation, Split,
};
use crate::hyperembed::{train_hyperbolic, write_training_log, LorentzEmbedding, SupervisionSets};
use crate::synth::{reference_tree, SyntheticWorld};
use crate::treebuild::{build_forest, CategoryMap, HierarchyTree, NodeKind};

pub const STAGES: [&str; 7] = ["synth", "sppmi", "align", "embed", "tree", "annotate", "eval"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(path.to_path_buf())
}

fn read_with<T>(path: &Path, f: impl FnOnce(BufReader<File>, &str) -> Result<T>) -> Result<T> {
    let file = open_input(path)?;
    f(BufReader::new(file), &path.display().to_string())
}

/// The explicit path if set, else the stage default.
fn required(explicit: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    explicit.clone().unwrap_or(default)
}

/// The explicit path (which must exist) or the stage default when present.
fn optional(explicit: &Option<PathBuf>, default: PathBuf) -> Result<Option<PathBuf>> {
    match explicit {
        Some(p) if p.exists() => Ok(Some(p.clone())),
        Some(p) => Err(Error::MissingInput(p.clone())),
        None => Ok(default.exists().then_some(default)),
    }
}

fn load_vocab(cfg: &RunConfig) -> Result<CodeVocabulary> {
    read_with(&required(&cfg.inputs.vocab, cfg.out_path("synth", "vocab.csv")), CodeVocabulary::read_csv)
}

fn load_parents(cfg: &RunConfig) -> Result<Option<ParentMap>> {
    optional(&cfg.inputs.parents, cfg.out_path("synth", "parents.csv"))?
        .map(|p| read_with(&p, ParentMap::read_csv))
        .transpose()
}

fn load_embedding(path: &Path) -> Result<EmbeddingMatrix> {
    read_with(path, EmbeddingMatrix::read_tsv)
}

fn load_tree(path: &Path) -> Result<HierarchyTree> {
    read_with(path, |r, _| HierarchyTree::read_json(r))
}

fn source_embedding_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.inputs
        .embeddings
        .get(name)
        .cloned()
        .unwrap_or_else(|| cfg.out_path("sppmi", &format!("{name}.tsv")))
}

fn coder_path(cfg: &RunConfig) -> PathBuf {
    required(&cfg.inputs.coder, cfg.out_path("synth", "coder.tsv"))
}

/// Generates the synthetic bundle: vocabulary, parents, categories, labelled
/// pairs, event streams, the language-model embedding and the reference tree.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let world_cfg = crate::synth::WorldConfig {
        seed: cfg.seed,
        ..cfg.synth.world.clone()
    };
    let world = SyntheticWorld::generate(&world_cfg)?;
    let mut out = Vec::new();
    out.push(write_with(&cfg.out_path("synth", "vocab.csv"), |w| world.vocab.write_csv(w))?);
    out.push(write_with(&cfg.out_path("synth", "parents.csv"), |w| world.parents.write_csv(w))?);
    out.push(write_with(&cfg.out_path("synth", "categories.csv"), |w| world.categories.write_csv(w))?);
    out.push(write_with(&cfg.out_path("synth", "pairs.csv"), |w| world.pairs.write_csv(w))?);
    for name in &cfg.synth.sources {
        let events = world.events(name, &cfg.synth.events)?;
        out.push(write_with(&cfg.out_path("synth", &format!("events_{name}.csv")), |w| write_events(&events, w))?);
        if let Some(src) = &cfg.synth.source_embeddings {
            let e = world.noisy_source(name, src)?;
            out.push(write_with(&cfg.out_path("synth", &format!("embedding_{name}.tsv")), |w| e.write_tsv(w))?);
        }
    }
    let coder = world.noisy_source("coder", &cfg.synth.coder)?;
    out.push(write_with(&cfg.out_path("synth", "coder.tsv"), |w| coder.write_tsv(w))?);
    let reference = reference_tree(&world);
    out.push(write_with(&cfg.out_path("synth", "reference_tree.json"), |w| reference.write_json(w))?);
    Ok(out)
}

/// Co-occurrence counting, parent aggregation, SPPMI and SVD per source.
pub fn cmd_sppmi(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let vocab = load_vocab(cfg)?;
    let parents = if cfg.sppmi.aggregate_parents { load_parents(cfg)? } else { None };
    let mut out = Vec::new();
    for name in cfg.sppmi_sources() {
        let path = cfg
            .inputs
            .events
            .get(&name)
            .cloned()
            .unwrap_or_else(|| cfg.out_path("synth", &format!("events_{name}.csv")));
        let events = read_with(&path, read_events)?;
        let (mut cooc, report) = build_cooccurrence(&vocab, &events, cfg.sppmi.window_days, &name)?;
        log::info!("{name}: {} events, {} nonzero pairs", report.events, cooc.nnz());
        if let Some(p) = &parents {
            cooc = aggregate_parents(&cooc, &vocab, p)?;
        }
        let m = sppmi(&cooc, cfg.sppmi.use_total_factor)?;
        let emb = svd_embed(&m, &vocab, cfg.sppmi.dim.min(vocab.len()))?;
        out.push(write_with(&cfg.out_path("sppmi", &format!("{name}.tsv")), |w| emb.write_tsv(w))?);
    }
    Ok(out)
}

/// Trains transport maps into the target source and writes the harmonized
/// embedding, one checkpoint, coupling and objective trace per map.
pub fn cmd_align(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let target = load_embedding(&source_embedding_path(cfg, &cfg.align.target))?;
    let names = cfg.align_sources();
    let sources: Vec<EmbeddingMatrix> = names
        .iter()
        .map(|n| load_embedding(&source_embedding_path(cfg, n)))
        .collect::<Result<_>>()?;
    let coder = load_embedding(&coder_path(cfg))?;
    let tcfg = TransportConfig {
        seed: cfg.seed,
        ..cfg.align.transport.clone()
    };
    let named: Vec<(&str, &EmbeddingMatrix)> = names.iter().map(String::as_str).zip(&sources).collect();
    let h = harmonize(&named, &target, &coder, &tcfg)?;
    let mut out = vec![write_with(&cfg.out_path("align", "harmonized.tsv"), |w| h.embedding.write_tsv(w))?];
    for a in &h.maps {
        let ck = Checkpoint::new(&a.result.map, &tcfg);
        out.push(write_with(&cfg.out_path("align", &format!("transport_{}.json", a.name)), |w| ck.write(w))?);
        out.push(write_with(&cfg.out_path("align", &format!("coupling_{}.tsv", a.name)), |w| {
            a.result.coupling.write_tsv(&a.shared, &a.shared, w)
        })?);
        out.push(write_with(&cfg.out_path("align", &format!("trace_{}.tsv", a.name)), |w| {
            writeln!(w, "outer\tstage\titer\ttotal\tmapping\tot")?;
            for t in &a.result.trace {
                writeln!(w, "{}\t{}\t{}\t{}\t{}\t{}", t.outer, t.stage, t.iter, t.total, t.mapping, t.ot)?;
            }
            Ok(())
        })?);
    }
    Ok(out)
}

fn training_pairs(cfg: &RunConfig) -> Result<Option<LabeledPairs>> {
    optional(&cfg.inputs.pairs, cfg.out_path("synth", "pairs.csv"))?
        .map(|p| read_with(&p, LabeledPairs::read_csv))
        .transpose()
}

/// Lifts the harmonized embedding and trains it on the hyperboloid.
pub fn cmd_embed(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let init = load_embedding(&required(&cfg.inputs.harmonized, cfg.out_path("align", "harmonized.tsv")))?;
    let positives = training_pairs(cfg)?.map_or_else(Vec::new, |p| p.select(None, Some(Split::Train)));
    let parents = if cfg.embed.use_hierarchy { load_parents(cfg)? } else { None };
    let sup = SupervisionSets::from_codes(init.codes(), &positives, parents.as_ref())?;
    let hcfg = crate::hyperembed::HypTrainConfig {
        seed: cfg.seed,
        ..cfg.embed.train.clone()
    };
    let res = train_hyperbolic(&init, &sup, &hcfg)?;
    Ok(vec![
        write_with(&cfg.out_path("embed", "lorentz.tsv"), |w| res.embedding.write_tsv(w))?,
        write_with(&cfg.out_path("embed", "training_log.tsv"), |w| write_training_log(&res.trace, w))?,
    ])
}

/// Builds the hierarchy forest from Lorentzian distances.
pub fn cmd_tree(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let emb = read_with(&required(&cfg.inputs.lorentz, cfg.out_path("embed", "lorentz.tsv")), LorentzEmbedding::read_tsv)?;
    let vocab = optional(&cfg.inputs.vocab, cfg.out_path("synth", "vocab.csv"))?
        .map(|p| read_with(&p, CodeVocabulary::read_csv))
        .transpose()?;
    let categories = if cfg.tree.use_categories {
        optional(&cfg.inputs.categories, cfg.out_path("synth", "categories.csv"))?
            .map(|p| read_with(&p, CategoryMap::read_csv))
            .transpose()?
    } else {
        None
    };
    let categories = categories.unwrap_or_else(|| CategoryMap::single(emb.codes().iter().map(String::as_str), "all"));
    let known = if cfg.tree.use_known_parents { load_parents(cfg)? } else { None };
    let gcfg = crate::treebuild::GroupingConfig {
        cluster: crate::treebuild::ClusterConfig {
            seed: cfg.seed,
            ..cfg.tree.grouping.cluster.clone()
        },
        ..cfg.tree.grouping.clone()
    };
    let tree = build_forest(&emb, &categories, known.as_ref(), vocab.as_ref(), &gcfg)?;
    Ok(vec![
        write_with(&cfg.out_path("tree", "tree.json"), |w| tree.write_json(w))?,
        write_with(&cfg.out_path("tree", "tree.dot"), |w| Ok(w.write_all(tree.to_dot().as_bytes())?))?,
    ])
}

/// Annotates latent nodes with the configured chat client.
pub fn cmd_annotate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let tree = load_tree(&required(&cfg.inputs.tree, cfg.out_path("tree", "tree.json")))?;
    let vocab = optional(&cfg.inputs.vocab, cfg.out_path("synth", "vocab.csv"))?
        .map(|p| read_with(&p, CodeVocabulary::read_csv))
        .transpose()?;
    let client = cfg.annotate.client.build()?;
    let (annotated, report) = annotate_tree(
        &tree,
        client.as_ref(),
        &PromptTemplates::default(),
        vocab.as_ref(),
        &cfg.annotate.protocol,
    )?;
    Ok(vec![
        write_with(&cfg.out_path("annotate", "tree.json"), |w| annotated.write_json(w))?,
        write_with(&cfg.out_path("annotate", "report.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            Ok(writeln!(w)?)
        })?,
    ])
}

fn relation_name(r: Relation) -> &'static str {
    match r {
        Relation::Similar => "similar",
        Relation::Related => "related",
    }
}

/// AUC for separating labelled pairs from random pairs by `score` over the
/// codes of one embedding. Pairs with a code outside `codes` are skipped;
/// None when no pair remains.
pub fn labeled_pair_auc<F>(
    codes: &[String],
    score: F,
    pairs: &[(String, String)],
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Option<f64>>
where
    F: Fn(usize, usize) -> f64,
{
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let pos: Vec<(usize, usize)> = pairs
        .iter()
        .filter_map(|(a, b)| Some((*index.get(a.as_str())?, *index.get(b.as_str())?)))
        .collect();
    if pos.len() < pairs.len() {
        log::warn!("{} of {} pairs fall outside the embedding", pairs.len() - pos.len(), pairs.len());
    }
    if pos.is_empty() {
        return Ok(None);
    }
    pair_auc(codes.len(), score, &pos, negatives_per_positive, seed).map(Some)
}

/// Pair AUCs on held-out pairs for every available embedding, tree
/// agreement with the reference tree, and judged annotation scores.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pairs = read_with(&required(&cfg.inputs.pairs, cfg.out_path("synth", "pairs.csv")), LabeledPairs::read_csv)?;
    let k = cfg.eval.negatives_per_positive;
    let mut report = MetricsReport::new();

    let mut euclid: Vec<(String, EmbeddingMatrix)> = Vec::new();
    let mut names = cfg.sppmi_sources();
    names.extend(cfg.inputs.embeddings.keys().filter(|k| !names.contains(k)).cloned().collect::<Vec<_>>());
    for name in names {
        let p = source_embedding_path(cfg, &name);
        if p.exists() {
            euclid.push((format!("source_{name}"), load_embedding(&p)?));
        }
    }
    if let Some(p) = optional(&cfg.inputs.coder, cfg.out_path("synth", "coder.tsv"))? {
        euclid.push(("coder".into(), load_embedding(&p)?));
    }
    if let Some(p) = optional(&cfg.inputs.harmonized, cfg.out_path("align", "harmonized.tsv"))? {
        euclid.push(("ot_aggregated".into(), load_embedding(&p)?));
    }
    let hyp = optional(&cfg.inputs.lorentz, cfg.out_path("embed", "lorentz.tsv"))?
        .map(|p| read_with(&p, LorentzEmbedding::read_tsv))
        .transpose()?;

    for rel in [Relation::Similar, Relation::Related] {
        let test = pairs.select(Some(rel), Some(Split::Test));
        let r = relation_name(rel);
        for (name, e) in &euclid {
            if let Some(v) = labeled_pair_auc(e.codes(), |i, j| e.cosine(i, j), &test, k, cfg.seed)? {
                report.insert(format!("auc.{r}.{name}"), v);
            }
        }
        if let Some(h) = &hyp {
            if let Some(v) = labeled_pair_auc(h.codes(), |i, j| -h.distance(i, j), &test, k, cfg.seed)? {
                report.insert(format!("auc.{r}.hyperbolic"), v);
            }
        }
    }

    let tree_path = optional(&cfg.inputs.tree, cfg.out_path("tree", "tree.json"))?;
    let reference = optional(&cfg.inputs.reference_tree, cfg.out_path("synth", "reference_tree.json"))?;
    if let Some(tp) = &tree_path {
        let tree = load_tree(tp)?;
        report.insert("tree.nodes", tree.len() as f64);
        report.insert(
            "tree.latent_nodes",
            tree.nodes().iter().filter(|n| n.kind == NodeKind::Latent).count() as f64,
        );
        report.insert("tree.height", tree.height() as f64);
        if let Some(rp) = &reference {
            let reference = load_tree(rp)?;
            let (prec, sens) = sibling_precision_sensitivity(&tree, &reference);
            report.insert("tree.sibling_precision", prec);
            report.insert("tree.sibling_sensitivity", sens);
            let pp = PartitionPair::new(
                &partition_from_tree(&tree, PartitionMode::ParentOfLeaf),
                &partition_from_tree(&reference, PartitionMode::ParentOfLeaf),
            )?;
            report.insert("tree.ari", ari(&pp)?);
            report.insert("tree.nmi", nmi(&pp)?);
        }
    }

    if cfg.eval.judged_scores {
        if let Some(ap) = optional(&cfg.inputs.annotated_tree, cfg.out_path("annotate", "tree.json"))? {
            let tree = load_tree(&ap)?;
            let client = cfg.annotate.client.build()?;
            let h = hierarchy_score(&tree, client.as_ref())?;
            let d = divergence_score(&tree, client.as_ref())?;
            report.insert("judged.hierarchy", h.score);
            report.insert("judged.divergence", d.score);
            report.info.insert("judged.hierarchy_scored".into(), h.scored.into());
            report.info.insert("judged.divergence_scored".into(), d.scored.into());
        }
    }
    report.info.insert("seed".into(), cfg.seed.into());
    report.info.insert("test_pairs".into(), pairs.select(None, Some(Split::Test)).len().into());

    Ok(vec![
        write_with(&cfg.out_path("eval", "metrics.json"), |w| report.write_json(w))?,
        write_with(&cfg.out_path("eval", "metrics.txt"), |w| report.write_kv(w))?,
    ])
}

/// Runs one stage by name.
pub fn run_stage(cfg: &RunConfig, stage: &str) -> Result<Vec<PathBuf>> {
    log::info!("stage {stage}");
    match stage {
        "synth" => cmd_synth(cfg),
        "sppmi" => cmd_sppmi(cfg),
        "align" => cmd_align(cfg),
        "embed" => cmd_embed(cfg),
        "tree" => cmd_tree(cfg),
        "annotate" => cmd_annotate(cfg),
        "eval" => cmd_eval(cfg),
        other => Err(Error::invalid(format!("unknown stage {other:?}"))),
    }
}

/// Runs every stage in order.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for s in STAGES {
        out.extend(run_stage(cfg, s)?);
    }
    Ok(out)
}

/// Process exit status for an error: 2 for usage, configuration and missing
/// inputs, 3 for malformed data and I/O, 4 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::MissingInput(_) => 2,
        Error::Data { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Client(_) => 3,
        Error::Numerical(_) | Error::Internal(_) => 4,
    }
}
