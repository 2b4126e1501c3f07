//! The six commands. Each is a pure function of the settings: read
//! inputs, call the library, write outputs, and print a handful of
//! key=value report lines that scripts can grep.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use drlm_core::checkpoint;
use drlm_core::corpus::{
    build_vocab, encode, load_documents, save_documents, EncodedCorpus, EncodedDocument,
    LabelTable, Vocabulary, DUMMY_LABEL, EOS_ID,
};
use drlm_core::inference::{corpus_marginal_log_likelihood, tag_document};
use drlm_core::metrics::{
    load_predictions, perplexity, save_predictions, sign_test_from_predictions, ConfusionCounts,
    PredictionRecord,
};
use drlm_core::model::{DrlmParams, ModelDims, ModelVariant, ParamNodes};
use drlm_core::synth::{self, SynthConfig};
use drlm_core::tape::finite_difference_check;
use drlm_core::tensor::Tensor;
use drlm_core::training::{conditional_loss, fit, init_params, joint_loss, Objective, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{user_error, CliError, CliResult, Settings};

fn parse_variant(s: &Settings) -> CliResult<ModelVariant> {
    Ok(ModelVariant::from_name(s.str_or("model.variant", "drlm"))?)
}

fn train_config(s: &Settings) -> CliResult<TrainConfig> {
    let objective = Objective::from_name(s.str_or("train.objective", "conditional"))?;
    let mut config = TrainConfig::new(objective, s.u64_or("train.seed", 1)?);
    config.learning_rate = s.f64_or("train.learning_rate", config.learning_rate)?;
    config.clip_threshold = s.f64_or("train.clip_threshold", config.clip_threshold)?;
    config.dropout = s.f64_or("train.dropout", config.dropout)?;
    config.max_epochs = s.usize_or("train.max_epochs", config.max_epochs)?;
    config.include_dummy = s.bool_or("train.include_dummy", config.include_dummy)?;
    config.model2_enum_cap = s.usize_or("train.enum_cap", config.model2_enum_cap)?;
    Ok(config)
}

/// Variants without a relation prior get a single relation slot.
fn relation_count(variant: ModelVariant, labels: &LabelTable) -> usize {
    if variant.has_prior() {
        labels.len()
    } else {
        1
    }
}

struct TrainingData {
    vocab: Vocabulary,
    labels: LabelTable,
    train: EncodedCorpus,
    dev: EncodedCorpus,
}

fn load_training_data(s: &Settings) -> CliResult<TrainingData> {
    let train_raw = load_documents(&s.input_path("paths.train")?)?;
    let dev_raw = load_documents(&s.input_path("paths.dev")?)?;
    let labels = LabelTable::load(&s.input_path("paths.labels")?)?;
    let cap = s.usize_or("data.vocab_cap", 10_000)?;
    let vocab = build_vocab(&train_raw, cap)?;
    let train = encode(&train_raw, &vocab, &labels)?;
    let dev = encode(&dev_raw, &vocab, &labels)?;
    Ok(TrainingData {
        vocab,
        labels,
        train,
        dev,
    })
}

fn model_dims(s: &Settings, vocab: usize, relations: usize) -> CliResult<ModelDims> {
    Ok(ModelDims::new(
        vocab,
        s.usize_or("model.embed", 32)?,
        s.usize_or("model.hidden", 32)?,
        relations,
    )?)
}

/// Epoch lines go to stdout and, when configured, to a log file.
struct Tee {
    file: Option<BufWriter<File>>,
}

impl Tee {
    fn new(path: Option<&Path>) -> CliResult<Tee> {
        let file = match path {
            None => None,
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| {
                user_error(format!("cannot create epoch log {}: {e}", p.display()))
            })?)),
        };
        Ok(Tee { file })
    }
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stdout().write_all(buf)?;
        if let Some(f) = &mut self.file {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().flush()?;
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

pub fn cmd_train(s: &Settings) -> CliResult<()> {
    let variant = parse_variant(s)?;
    let config = train_config(s)?;
    let data = load_training_data(s)?;
    let dims = model_dims(s, data.vocab.len(), relation_count(variant, &data.labels))?;
    data.vocab.save(&s.output_path("paths.vocab")?)?;

    let log_path = s.get("paths.epoch_log").map(PathBuf::from);
    let mut tee = Tee::new(log_path.as_deref())?;
    let result = fit(
        variant,
        dims,
        &data.train,
        &data.dev,
        &config,
        Some(&mut tee),
    )?;
    tee.flush()
        .map_err(|e| user_error(format!("epoch log: {e}")))?;

    let ckpt = s.output_path("paths.checkpoint")?;
    checkpoint::save(&result.params, &ckpt)?;
    println!(
        "trained variant={} objective={} epochs={} best_epoch={} {}={:.6} checkpoint={}",
        variant.name(),
        config.objective.name(),
        config.max_epochs,
        result.best_epoch,
        config.objective.dev_metric_name(),
        result.dev_value,
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_eval_lm(s: &Settings) -> CliResult<()> {
    let vocab_path = s.input_path("paths.vocab")?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let params = checkpoint::load(&s.input_path("paths.checkpoint")?)?;
    if params.dims.vocab != vocab.len() {
        return Err(user_error(format!(
            "checkpoint expects a vocabulary of {} types but {} holds {}",
            params.dims.vocab,
            vocab_path.display(),
            vocab.len()
        )));
    }
    // relations are summed out, so any labels in the file play no part
    let mut test_raw = load_documents(&s.input_path("paths.test")?)?;
    for doc in &mut test_raw {
        doc.relations = vec![None; doc.relations.len()];
    }
    let placeholder = LabelTable::new(vec!["none".to_string()])?;
    let test = encode(&test_raw, &vocab, &placeholder)?;
    let (ll, tokens) = corpus_marginal_log_likelihood(&params, &test)?;
    let ppl = perplexity(ll, tokens)?;
    println!(
        "evaluated docs={} tokens={} total_log_likelihood={:.6} perplexity={:.6}",
        test.documents.len(),
        tokens,
        ll,
        ppl
    );
    Ok(())
}

pub fn cmd_tag(s: &Settings) -> CliResult<()> {
    let vocab_path = s.input_path("paths.vocab")?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let labels_path = s.input_path("paths.labels")?;
    let labels = LabelTable::load(&labels_path)?;
    let params = checkpoint::load(&s.input_path("paths.checkpoint")?)?;
    if !params.variant.has_prior() {
        return Err(user_error(format!(
            "variant {} has no relation variable to tag with",
            params.variant.name()
        )));
    }
    if params.dims.vocab != vocab.len() {
        return Err(user_error(format!(
            "checkpoint expects a vocabulary of {} types but {} holds {}",
            params.dims.vocab,
            vocab_path.display(),
            vocab.len()
        )));
    }
    if params.dims.relations != labels.len() {
        return Err(user_error(format!(
            "checkpoint has {} relations but {} lists {} labels",
            params.dims.relations,
            labels_path.display(),
            labels.len()
        )));
    }
    let test_raw = load_documents(&s.input_path("paths.test")?)?;
    let test = encode(&test_raw, &vocab, &labels)?;
    let include_dummy = s.bool_or("eval.include_dummy", true)?;

    if include_dummy {
        // scoring every slot needs real gold everywhere; refuse to score
        // fill-ins as if they were annotations
        let offending: Vec<String> = test
            .documents
            .iter()
            .enumerate()
            .flat_map(|(d, doc)| {
                doc.labeled
                    .iter()
                    .enumerate()
                    .filter(|(_, &lab)| !lab)
                    .map(move |(t, _)| format!("doc {d} slot {t}"))
            })
            .collect();
        if !offending.is_empty() {
            let shown = offending
                .iter()
                .take(10)
                .cloned()
                .collect::<Vec<_>>()
                .join(", ");
            let more = if offending.len() > 10 {
                format!(" and {} more", offending.len() - 10)
            } else {
                String::new()
            };
            return Err(user_error(format!(
                "{} slots lack gold labels but eval.include_dummy=true scores every slot: \
                 {shown}{more}; annotate them or set eval.include_dummy=false",
                offending.len()
            )));
        }
    }

    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for (d, doc) in test.documents.iter().enumerate() {
        let tags = tag_document(&params, doc)?;
        for (t, &pred) in tags.iter().enumerate() {
            if !include_dummy && !doc.labeled[t] {
                continue;
            }
            pairs.push((doc.relations[t], pred));
            records.push(PredictionRecord {
                doc: d,
                slot: t,
                gold: labels.name(doc.relations[t]).to_string(),
                pred: labels.name(pred).to_string(),
            });
        }
    }
    if records.is_empty() {
        return Err(user_error(
            "no scored slots: every slot is unlabeled and eval.include_dummy=false",
        ));
    }
    let pred_path = s.output_path("paths.predictions")?;
    save_predictions(&records, &pred_path)?;

    let counts = ConfusionCounts::from_pairs(labels.len(), &pairs)?;
    let acc = counts.accuracy()?;
    let f1 = if include_dummy {
        counts.macro_f1()?
    } else {
        let real: Vec<usize> = (0..labels.len()).filter(|&c| c != DUMMY_LABEL).collect();
        counts.macro_f1_over(&real)?
    };
    println!(
        "tagged docs={} scored_slots={} accuracy={:.6} macro_f1={:.6} predictions={}",
        test.documents.len(),
        records.len(),
        acc,
        f1,
        pred_path.display()
    );

    if let Some(base_path) = s.get("eval.compare") {
        let baseline = load_predictions(Path::new(base_path))?;
        let st = sign_test_from_predictions(&records, &baseline)?;
        println!(
            "compared baseline={base_path} wins_current={} wins_baseline={} ties={} p_value={:.6}",
            st.wins_a, st.wins_b, st.ties, st.p_value
        );
    }
    Ok(())
}

pub fn cmd_gradcheck(s: &Settings) -> CliResult<()> {
    const THRESHOLD: f64 = 1e-4;
    let v = s.usize_or("gradcheck.vocab", 12)?;
    let k = s.usize_or("gradcheck.embed", 6)?;
    let h = s.usize_or("gradcheck.hidden", 6)?;
    let z = s.usize_or("gradcheck.relations", 3)?;
    let t = s.usize_or("gradcheck.sentences", 3)?;
    let seed = s.u64_or("gradcheck.seed", 11)?;
    if v > 20 || k > 8 || h > 8 || t > 3 {
        return Err(user_error(format!(
            "finite differences are only run on tiny models \
             (vocab <= 20, embed/hidden <= 8, sentences <= 3); \
             got vocab={v} embed={k} hidden={h} sentences={t}"
        )));
    }
    if v < 6 || k == 0 || h == 0 || t == 0 || !(2..=6).contains(&z) {
        return Err(user_error(format!(
            "need vocab >= 6, positive embed/hidden/sentences, 2..=6 relations; \
             got vocab={v} embed={k} hidden={h} relations={z} sentences={t}"
        )));
    }

    // fixed token pattern; only the parameters are randomized
    let doc = EncodedDocument {
        sentences: (0..t)
            .map(|i| {
                let len = 3 + i % 2;
                let mut toks: Vec<usize> = (0..len)
                    .map(|j| 4 + (5 * i + 3 * j + 1) % (v - 4))
                    .collect();
                toks.push(EOS_ID);
                toks
            })
            .collect(),
        relations: (0..t).map(|i| i % z).collect(),
        labeled: vec![true; t],
    };

    let mut worst: (f64, &str, &str, String) = (0.0, "", "", String::new());
    for variant in [ModelVariant::Drlm, ModelVariant::DrlmModel2] {
        for objective in [Objective::Joint, Objective::Conditional] {
            let dims = ModelDims::new(v, k, h, z)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = init_params(dims, variant, &mut rng)?;
            let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            let names = params.tensor_names();
            let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let report = finite_difference_check(&tensors, &name_refs, 1e-5, |tape, ids| {
                let nodes = ParamNodes::from_ordered(dims, variant, ids.to_vec())?;
                match objective {
                    Objective::Joint => joint_loss(tape, &nodes, &doc, None),
                    Objective::Conditional => {
                        conditional_loss(tape, &nodes, &doc, None, true, 100_000)
                            .map(|o| o.expect("every slot is labeled"))
                    }
                }
            })?;
            for (tensor, err) in &report.per_tensor {
                println!(
                    "gradcheck variant={} objective={} tensor={} max_rel_error={:.3e}",
                    variant.name(),
                    objective.name(),
                    tensor,
                    err
                );
            }
            println!(
                "gradcheck variant={} objective={} worst_tensor={} max_rel_error={:.3e}",
                variant.name(),
                objective.name(),
                report.worst_tensor,
                report.max_rel_error
            );
            if report.max_rel_error > worst.0 {
                worst = (
                    report.max_rel_error,
                    variant.name(),
                    objective.name(),
                    report.worst_tensor.clone(),
                );
            }
        }
    }
    let pass = worst.0 < THRESHOLD;
    println!(
        "gradcheck_overall max_rel_error={:.3e} threshold={THRESHOLD:.0e} verdict={}",
        worst.0,
        if pass { "pass" } else { "fail" }
    );
    if !pass {
        return Err(CliError::Internal(format!(
            "gradient check failed: variant {} objective {} tensor {} \
             relative error {:.3e} over threshold {THRESHOLD:.0e}",
            worst.1, worst.2, worst.3, worst.0
        )));
    }
    Ok(())
}

pub fn cmd_synth(s: &Settings) -> CliResult<()> {
    let config = SynthConfig {
        relations: s.usize_or("synth.relations", 3)?,
        block_size: s.usize_or("synth.block_size", 100)?,
        train_docs: s.usize_or("synth.train_docs", 400)?,
        dev_docs: s.usize_or("synth.dev_docs", 50)?,
        test_docs: s.usize_or("synth.test_docs", 50)?,
        sentences_per_doc: s.usize_or("synth.sentences_per_doc", 6)?,
        min_len: s.usize_or("synth.min_len", 5)?,
        max_len: s.usize_or("synth.max_len", 9)?,
        peak_transition: s.f64_or("synth.peak_transition", 0.7)?,
        seed: s.u64_or("synth.seed", 1)?,
    };
    let corpus = synth::generate(&config)?;
    save_documents(&corpus.train, &s.output_path("paths.train")?)?;
    save_documents(&corpus.dev, &s.output_path("paths.dev")?)?;
    save_documents(&corpus.test, &s.output_path("paths.test")?)?;
    LabelTable::new(corpus.label_names.clone())?.save(&s.output_path("paths.labels")?)?;

    let manifest_path = s.output_path("paths.manifest")?;
    let manifest = synth::manifest(&config);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Internal(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json + "\n")
        .map_err(|e| user_error(format!("cannot write {}: {e}", manifest_path.display())))?;

    println!(
        "synthesized train_docs={} dev_docs={} test_docs={} labels={} word_types={} manifest={}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.label_names.len(),
        config.relations * config.block_size,
        manifest_path.display()
    );
    Ok(())
}

pub fn cmd_grid(s: &Settings) -> CliResult<()> {
    const DEFAULT_GRID: &[usize] = &[32, 48, 64, 96, 128];
    let variant = parse_variant(s)?;
    let config = train_config(s)?;
    let data = load_training_data(s)?;
    data.vocab.save(&s.output_path("paths.vocab")?)?;
    let embeds = s.usize_list_or("grid.embed", DEFAULT_GRID)?;
    let hiddens = s.usize_list_or("grid.hidden", DEFAULT_GRID)?;
    if embeds.is_empty() || hiddens.is_empty() {
        return Err(user_error("grid candidate lists must be non-empty"));
    }
    let metric = config.objective.dev_metric_name();
    let relations = relation_count(variant, &data.labels);

    let mut best: Option<(usize, usize, f64, DrlmParams)> = None;
    for &embed in &embeds {
        for &hidden in &hiddens {
            let dims = ModelDims::new(data.vocab.len(), embed, hidden, relations)?;
            let result = fit(variant, dims, &data.train, &data.dev, &config, None)?;
            println!(
                "grid embed={embed} hidden={hidden} {metric}={:.6} best_epoch={}",
                result.dev_value, result.best_epoch
            );
            let improves = match &best {
                None => true,
                Some((_, _, value, _)) => {
                    if config.objective.higher_is_better() {
                        result.dev_value > *value
                    } else {
                        result.dev_value < *value
                    }
                }
            };
            if improves {
                best = Some((embed, hidden, result.dev_value, result.params));
            }
        }
    }
    let (embed, hidden, value, params) = best.expect("grid has at least one cell");
    let ckpt = s.output_path("paths.checkpoint")?;
    checkpoint::save(&params, &ckpt)?;
    println!(
        "selected embed={embed} hidden={hidden} {metric}={value:.6} checkpoint={}",
        ckpt.display()
    );
    Ok(())
}
