//! End-to-end runs: stage corpora, checkpointed training, decoder training,
//! decoding and evaluation. Every entry point is a pure function of the
//! configuration, the corpus and its input checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use mmgen_core::nn::Linear;
use mmgen_core::{derive_seed, seeded, ImageTensor, ParamSet, RngState, Tensor};
use mmgen_fewshot::{run_eval, EvalOptions, EvalReport};
use mmgen_mmlm::{check_stage, Lm, Model, Stage, StepMetrics, Trainer};
use mmgen_mmtok::{
    encode_chat, encode_gen, encode_grounded, encode_interleaved, encode_pair, encode_prompt, ChatTurn,
    DocBlock, Element, FormatConfig, GenEntity, GroundedPhrase, InstructionPart, SequenceSample,
    Special, Supervision, TokError, Vocab,
};
use mmgen_vizdec::{train_decoder, Decoder, DiffusionSchedule};
use mmgen_viztok::Encoder;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::corpus::{Corpus, SYSTEM_MESSAGE};
use crate::error::HarnessError;
use crate::task::{retrieval_episodes, EpisodeConfig};

/// Name prefixes a checkpoint may contain.
pub const KNOWN_SCOPES: [&str; 5] = ["viztok/", "mmlm/", "vizdec/", "optim/", "target_proj/"];
const TARGET_SCOPE: &str = "target_proj";
const DECODER_SCOPE: &str = "vizdec";
const DECODER_STAGE: &str = "decoder";

pub fn format(cfg: &Config, supervision: Supervision) -> FormatConfig {
    FormatConfig {
        slots_per_image: cfg.slots(),
        max_len: cfg.max_len,
        supervision,
        loc_image_size: cfg.image_size,
    }
}

/// A freshly initialised model; the draw depends only on the seed.
pub fn new_model(cfg: &Config, vocab: &Vocab) -> Result<Model<f32>, HarnessError> {
    let mut rng = seeded(derive_seed(cfg.seed, 0x30DE1));
    Ok(Model {
        encoder: Encoder::new(cfg.viz(), &mut rng)?,
        lm: Lm::new(cfg.lm(vocab.len()), &mut rng)?,
    })
}

/// Keeps samples that fit the context; a sample that would overflow is
/// dropped whole rather than cut inside an image run.
fn fitting(
    samples: impl Iterator<Item = Result<SequenceSample, TokError>>,
) -> Result<Vec<SequenceSample>, HarnessError> {
    let mut out = Vec::new();
    for s in samples {
        match s {
            Ok(s) => out.push(s),
            Err(TokError::TooLong { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Training sequences for `stage`. Few-shot episodes retrieve with
/// `encoder`, which must be the stage's frozen encoder so that a resumed run
/// rebuilds the same corpus.
pub fn stage_corpus(
    cfg: &Config,
    corpus: &Corpus,
    stage: Stage,
    encoder: &Encoder<f32>,
) -> Result<Vec<SequenceSample>, HarnessError> {
    let vocab = &corpus.vocab;
    let base = derive_seed(cfg.seed, 0xC0_0000 + stage as u64);
    let seed = |split: u64, i: usize| derive_seed(derive_seed(base, split), i as u64);
    let tok = |text: &str| vocab.tokenize(text);
    let pairs = |sup: Supervision| {
        fitting(corpus.pairs.iter().enumerate().map(|(i, p)| {
            encode_pair(vocab, format(cfg, sup), p.image.clone(), &tok(&p.caption)?, seed(0, i))
        }))
    };
    let full = format(cfg, Supervision::Full);
    let samples = match stage {
        Stage::One => pairs(Supervision::Captioning)?,
        Stage::Two => {
            let mut out = pairs(Supervision::Full)?;
            for (i, doc) in corpus.interleaved.iter().enumerate() {
                let blocks = doc
                    .iter()
                    .map(|b| {
                        Ok(DocBlock {
                            image: Some(b.image.clone()),
                            text: tok(&b.caption)?,
                        })
                    })
                    .collect::<Result<Vec<_>, TokError>>()?;
                out.push(encode_interleaved(vocab, full, &blocks, seed(1, i))?);
            }
            out.extend(fitting(corpus.grounded.iter().enumerate().map(|(i, g)| {
                let phrases = g
                    .phrases
                    .iter()
                    .map(|(p, b)| Ok(GroundedPhrase { phrase: tok(p)?, bbox: *b }))
                    .collect::<Result<Vec<_>, TokError>>()?;
                encode_grounded(vocab, full, g.image.clone(), &phrases, seed(2, i))
            }))?);
            if cfg.episodes > 0 && corpus.qa.len() > 1 {
                let episodes = EpisodeConfig {
                    shots: cfg.min_shots..=cfg.max_shots,
                    count: cfg.episodes,
                    relabel_prob: cfg.relabel_prob,
                };
                out.extend(retrieval_episodes(vocab, full, encoder, &corpus.qa, &episodes, seed(3, 0))?);
            }
            out
        }
        Stage::Chat => {
            let system = tok(SYSTEM_MESSAGE)?;
            fitting(corpus.chat.iter().enumerate().map(|(i, c)| {
                let turns = c
                    .turns
                    .iter()
                    .enumerate()
                    .map(|(t, (q, a))| {
                        let mut instruction = Vec::new();
                        if t == 0 {
                            instruction.push(InstructionPart::Image(c.image.clone()));
                        }
                        instruction.push(InstructionPart::Text(tok(q)?));
                        Ok(ChatTurn { instruction, answer: tok(a)? })
                    })
                    .collect::<Result<Vec<_>, TokError>>()?;
                encode_chat(vocab, full, &system, &turns, seed(4, i))
            }))?
        }
        Stage::Gen => fitting(corpus.gen.iter().enumerate().map(|(i, g)| {
            let entities = g
                .entities
                .iter()
                .map(|e| {
                    Ok(GenEntity {
                        phrase: tok(&e.phrase)?,
                        subject: e.subject.clone(),
                        bbox: e.bbox,
                    })
                })
                .collect::<Result<Vec<_>, TokError>>()?;
            encode_gen(vocab, full, &tok(&g.caption)?, &entities, g.target.clone(), cfg.entity_drop, seed(5, i))
        }))?,
    };
    check_stage(stage, &samples)?;
    Ok(samples)
}

/// Owned projection snapshot, stored under its own scope.
struct Projection(Linear<f32>);

impl ParamSet<f32> for Projection {
    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        self.0.tensors("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        self.0.tensors_mut("", &mut out);
        out
    }
}

/// Loads a checkpoint and checks that every array belongs to a known scope.
pub fn open_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let ck = Checkpoint::load(path)?;
    ck.check_names(&KNOWN_SCOPES)?;
    Ok(ck)
}

/// Model weights from a checkpoint, ignoring any optimizer state.
pub fn load_model(cfg: &Config, vocab: &Vocab, path: &Path) -> Result<Model<f32>, HarnessError> {
    let mut model = new_model(cfg, vocab)?;
    open_checkpoint(path)?.fill("", &mut model)?;
    Ok(model)
}

#[derive(Clone, Copy, Debug)]
pub struct TrainRequest<'a> {
    pub stage: Stage,
    /// Weights to start from (a previous stage's output).
    pub init: Option<&'a Path>,
    /// A checkpoint of this same stage to continue, optimizer and RNG included.
    pub resume: Option<&'a Path>,
    pub out: &'a Path,
    /// Per-step metrics; appended to when resuming.
    pub metrics: &'a Path,
    /// Stop once this many optimizer steps are done, before the stage ends.
    pub until: Option<u64>,
}

fn trainer_for(cfg: &Config, corpus: &Corpus, req: &TrainRequest<'_>) -> Result<Trainer<f32>, HarnessError> {
    let mut model = new_model(cfg, &corpus.vocab)?;
    let train_cfg = cfg.train(req.stage);
    let Some(path) = req.resume else {
        if let Some(init) = req.init {
            open_checkpoint(init)?.fill("", &mut model)?;
        }
        return Ok(Trainer::new(model, train_cfg)?);
    };
    let ck = open_checkpoint(path)?;
    let stage: String = ck.meta_value("stage")?;
    if stage != req.stage.name() {
        return Err(HarnessError::Checkpoint(format!(
            "cannot resume stage {} from a stage {stage} checkpoint",
            req.stage
        )));
    }
    ck.fill("", &mut model)?;
    let mut trainer = Trainer::new(model, train_cfg)?;
    ck.fill_optimizer(&mut trainer.opt)?;
    trainer.rng = ck
        .rng
        .as_ref()
        .ok_or_else(|| HarnessError::Checkpoint("resume checkpoint has no RNG state".into()))?
        .restore();
    if let Some(proj) = trainer.target_proj.take() {
        let mut snapshot = Projection(proj);
        ck.fill(TARGET_SCOPE, &mut snapshot)?;
        trainer.target_proj = Some(snapshot.0);
    }
    Ok(trainer)
}

fn trainer_checkpoint(cfg: &Config, trainer: &Trainer<f32>) -> Checkpoint {
    let mut ck = Checkpoint {
        config: cfg.to_text(),
        rng: Some(RngState::capture(&trainer.rng)),
        ..Checkpoint::default()
    };
    ck.meta.insert("stage".into(), trainer.cfg.stage.name().into());
    ck.meta.insert("step".into(), trainer.step_count().to_string());
    ck.put("", &trainer.model);
    ck.put_optimizer(&trainer.opt);
    if let Some(p) = &trainer.target_proj {
        ck.put(TARGET_SCOPE, &Projection(p.clone()));
    }
    ck
}

fn log_file(path: &Path, append: bool) -> Result<BufWriter<File>, HarnessError> {
    let file = if append {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    };
    Ok(BufWriter::new(file.map_err(|e| HarnessError::io(path, e))?))
}

/// Runs (part of) one stage and writes its checkpoint. Returns the metrics of
/// the steps taken in this call.
pub fn train(cfg: &Config, corpus: &Corpus, req: &TrainRequest<'_>) -> Result<Vec<StepMetrics>, HarnessError> {
    let mut trainer = trainer_for(cfg, corpus, req)?;
    let mut encoder = trainer.model.encoder.clone();
    if let Some(p) = &trainer.target_proj {
        encoder.proj = p.clone();
    }
    let samples = stage_corpus(cfg, corpus, req.stage, &encoder)?;
    let mut log = log_file(req.metrics, req.resume.is_some())?;
    let stop = req.until.unwrap_or(u64::MAX);
    let mut out = Vec::new();
    while !trainer.is_done() && trainer.step_count() < stop {
        let m = trainer.step(&samples)?;
        writeln!(log, "{m}").map_err(|e| HarnessError::io(req.metrics, e))?;
        out.push(m);
    }
    log.flush().map_err(|e| HarnessError::io(req.metrics, e))?;
    trainer_checkpoint(cfg, &trainer).save(req.out)?;
    Ok(out)
}

/// Trains the detokenizer against the frozen encoder of `lm_checkpoint` on
/// every corpus image, and saves it together with that encoder.
pub fn train_decoder_run(
    cfg: &Config,
    corpus: &Corpus,
    lm_checkpoint: &Path,
    out: &Path,
    metrics: &Path,
) -> Result<(), HarnessError> {
    let mut encoder = load_model(cfg, &corpus.vocab, lm_checkpoint)?.encoder;
    encoder.freeze(true);
    let images: Vec<ImageTensor> = corpus
        .pairs
        .iter()
        .map(|p| p.image.clone())
        .chain(corpus.gen.iter().map(|g| g.target.clone()))
        .collect();
    let mut log = log_file(metrics, false)?;
    let mut failure = None;
    let decoder = train_decoder(&images, &encoder, cfg.unet(), cfg.decoder_train(), |m| {
        if failure.is_none() {
            failure = writeln!(log, "{m}").err();
        }
    })?;
    if let Some(e) = failure.or_else(|| log.flush().err()) {
        return Err(HarnessError::io(metrics, e));
    }
    let mut ck = Checkpoint {
        config: cfg.to_text(),
        ..Checkpoint::default()
    };
    ck.meta.insert("stage".into(), DECODER_STAGE.into());
    ck.put(mmgen_mmlm::ENCODER_SCOPE, &encoder);
    ck.put(DECODER_SCOPE, &decoder);
    ck.save(out)
}

pub fn load_decoder(cfg: &Config, path: &Path) -> Result<(Encoder<f32>, Decoder<f32>), HarnessError> {
    let ck = open_checkpoint(path)?;
    let mut rng = seeded(0);
    let mut encoder = Encoder::new(cfg.viz(), &mut rng)?;
    ck.fill(mmgen_mmlm::ENCODER_SCOPE, &mut encoder)?;
    encoder.freeze(true);
    let mut decoder = Decoder::new(cfg.unet(), &mut rng)?;
    ck.fill(DECODER_SCOPE, &mut decoder)?;
    Ok((encoder, decoder))
}

/// What to decode into an image.
#[derive(Clone, Debug)]
pub enum DecodeSource<'a> {
    /// Tokenize this image and decode it back.
    Reconstruct(&'a ImageTensor),
    /// Let the language model regress image embeddings after this text.
    Prompt { text: &'a str, model: &'a Model<f32>, vocab: &'a Vocab },
}

pub fn decode(
    cfg: &Config,
    encoder: &Encoder<f32>,
    decoder: &Decoder<f32>,
    source: DecodeSource<'_>,
    seed: u64,
) -> Result<ImageTensor, HarnessError> {
    let schedule = DiffusionSchedule::standard();
    let sampler = cfg.sampler(seed);
    let cond = match source {
        DecodeSource::Reconstruct(image) => encoder.tokenize_image(image)?.data,
        DecodeSource::Prompt { text, model, vocab } => {
            let fmt = format(cfg, Supervision::Full);
            let mut prefix = encode_prompt(vocab, fmt, &[InstructionPart::Text(vocab.tokenize(text)?)])?;
            let img = vocab.special(Special::Img);
            prefix.elements.push(Element::Token(img));
            prefix.text_mask.push(false);
            prefix.visual_mask.push(false);
            model.generate_image_embeddings(&prefix, img)?.data
        }
    };
    Ok(decoder.sample(&cond, &schedule, &sampler)?)
}

/// Few-shot evaluation of a checkpoint on the corpus's held-out task.
pub fn evaluate(cfg: &Config, corpus: &Corpus, checkpoint: &Path, shots: &[usize]) -> Result<EvalReport, HarnessError> {
    let model = load_model(cfg, &corpus.vocab, checkpoint)?;
    evaluate_model(cfg, corpus, &model, shots)
}

pub fn evaluate_model(cfg: &Config, corpus: &Corpus, model: &Model<f32>, shots: &[usize]) -> Result<EvalReport, HarnessError> {
    let opts = EvalOptions {
        max_new: cfg.max_new,
        ..EvalOptions::default()
    };
    Ok(run_eval(model, &corpus.vocab, &corpus.eval, shots, &opts)?)
}

/// Golden records for the first `per_template` samples of every stage corpus.
pub fn tokenize_fixtures(cfg: &Config, corpus: &Corpus, per_template: usize) -> Result<String, HarnessError> {
    let model = new_model(cfg, &corpus.vocab)?;
    let mut out = String::new();
    for stage in [Stage::One, Stage::Two, Stage::Chat, Stage::Gen] {
        let samples = match stage_corpus(cfg, corpus, stage, &model.encoder) {
            Ok(s) => s,
            Err(HarnessError::Lm(mmgen_mmlm::LmError::EmptyCorpus)) => continue,
            Err(e) => return Err(e),
        };
        let mut seen = std::collections::BTreeMap::new();
        for s in samples {
            let n = seen.entry(s.meta.template.name()).or_insert(0usize);
            if *n < per_template {
                *n += 1;
                out.push_str(&s.to_record(&corpus.vocab)?);
                out.push('\n');
            }
        }
    }
    Ok(out)
}
