//! The synthetic corpus: generation, the on-disk layout, and loading.
//!
//! A corpus directory holds `vocab.txt`, `corpus.cfg` (the generating
//! configuration), PPM images under `images/`, and one TSV per split:
//!
//! | file | columns |
//! |---|---|
//! | `pairs.tsv` | image, caption |
//! | `interleaved.tsv` | document id, image, caption |
//! | `grounded.tsv` | image, `phrase@x1,y1,x2,y2` joined by `\|` |
//! | `gen.tsv` | target image, caption, `phrase@subject image@x1,y1,x2,y2` joined by `\|` |
//! | `chat.tsv` | image, then question and answer columns per turn |
//! | `qa.tsv`, `eval_pool.tsv`, `eval_test.tsv` | image, question, answer |
//!
//! Images are stored 8-bit, so generation quantizes them up front and a
//! loaded corpus equals the generated one exactly.

use std::fs;
use std::path::{Path, PathBuf};

use mmgen_core::{derive_seed, seeded, ImageTensor};
use mmgen_fewshot::{EvalItem, EvalTask};
use mmgen_mmtok::{BBox, Vocab};
use rand::Rng;

use crate::config::Config;
use crate::error::HarnessError;
use crate::synth::{color_question, word_list, SceneSpec, Shape, SynthScene};
use crate::task::{held_out_combos, held_out_questions, training_questions, QaItem};

pub const SYSTEM_MESSAGE: &str = "you are a helpful assistant .";

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub image: ImageTensor,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundedRecord {
    pub image: ImageTensor,
    pub phrases: Vec<(String, BBox)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenEntityRecord {
    pub phrase: String,
    pub subject: ImageTensor,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRecord {
    pub target: ImageTensor,
    pub caption: String,
    pub entities: Vec<GenEntityRecord>,
}

/// A dialogue about one image; the image opens the first turn.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatRecord {
    pub image: ImageTensor,
    pub turns: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub pairs: Vec<PairRecord>,
    pub interleaved: Vec<Vec<PairRecord>>,
    pub grounded: Vec<GroundedRecord>,
    pub gen: Vec<GenRecord>,
    pub chat: Vec<ChatRecord>,
    pub qa: Vec<EvalItem>,
    pub eval: EvalTask,
}

fn quantized(image: ImageTensor) -> ImageTensor {
    let bytes = image.to_ppm().expect("rendered images are well-formed");
    ImageTensor::from_ppm(&bytes).expect("own encoding parses")
}

fn render(scene: &SynthScene, size: usize) -> ImageTensor {
    quantized(scene.render(size))
}

/// A shape drawn alone, filling the canvas: the entity's subject image.
fn subject(shape: &Shape, size: usize) -> ImageTensor {
    let alone = SynthScene {
        shapes: vec![Shape {
            bbox: BBox::new(0.1, 0.1, 0.9, 0.9).expect("valid box"),
            ..*shape
        }],
    };
    render(&alone, size)
}

fn count_word(n: usize) -> &'static str {
    ["no", "one", "two", "three"][n.min(3)]
}

/// Independent streams per split, so changing one split's size leaves the
/// others untouched.
#[derive(Clone, Copy)]
enum Stream {
    Pairs = 1,
    Interleaved,
    Grounded,
    Gen,
    Chat,
    Qa,
    EvalPool,
    EvalTest,
}

fn stream(seed: u64, s: Stream) -> u64 {
    derive_seed(seed, s as u64)
}

pub fn generate(cfg: &Config) -> Result<Corpus, HarnessError> {
    let size = cfg.image_size;
    let held = held_out_combos();
    let spec = SceneSpec {
        excluded: held.clone(),
        ..SceneSpec::default()
    };
    let scenes = |s: Stream, n: usize| -> Vec<SynthScene> {
        (0..n as u64)
            .map(|i| SynthScene::generate(stream(cfg.seed, s), i, &spec))
            .collect()
    };
    let pair = |scene: &SynthScene| PairRecord {
        image: render(scene, size),
        caption: scene.caption(),
    };
    let pairs = scenes(Stream::Pairs, cfg.pairs).iter().map(pair).collect();
    let interleaved = (0..cfg.interleaved as u64)
        .map(|d| {
            let doc_seed = derive_seed(stream(cfg.seed, Stream::Interleaved), d);
            let blocks = seeded(doc_seed).random_range(2..=4u64);
            (0..blocks)
                .map(|b| pair(&SynthScene::generate(doc_seed, b, &spec)))
                .collect()
        })
        .collect();
    let grounded = scenes(Stream::Grounded, cfg.grounded)
        .iter()
        .map(|s| GroundedRecord {
            image: render(s, size),
            phrases: s.shapes.iter().map(|sh| (sh.phrase(), sh.bbox)).collect(),
        })
        .collect();
    let gen = scenes(Stream::Gen, cfg.gen)
        .iter()
        .map(|s| GenRecord {
            target: render(s, size),
            caption: s.caption(),
            entities: s
                .shapes
                .iter()
                .map(|sh| GenEntityRecord {
                    phrase: sh.phrase(),
                    subject: subject(sh, size),
                    bbox: sh.bbox,
                })
                .collect(),
        })
        .collect();
    let chat = scenes(Stream::Chat, cfg.chat)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = seeded(derive_seed(stream(cfg.seed, Stream::Chat) ^ 0xC4A7, i as u64));
            let asked = s.shapes[rng.random_range(0..s.shapes.len())];
            let mut turns = vec![(color_question(asked.kind), asked.color.word().to_string())];
            turns.push(match rng.random_range(0..2) {
                0 => ("how many shapes are there ?".into(), count_word(s.shapes.len()).to_string()),
                _ => ("describe the image .".into(), s.caption()),
            });
            ChatRecord {
                image: render(s, size),
                turns,
            }
        })
        .collect();
    let to_items = |qs: Vec<QaItem>| -> Vec<EvalItem> {
        qs.iter()
            .map(|q| EvalItem {
                image: render(&q.scene, size),
                question: q.question(),
                answer: q.answer().to_string(),
            })
            .collect()
    };
    Ok(Corpus {
        vocab: Vocab::build(&word_list())?,
        pairs,
        interleaved,
        grounded,
        gen,
        chat,
        qa: to_items(training_questions(stream(cfg.seed, Stream::Qa), cfg.qa, &held)),
        eval: EvalTask {
            pool: to_items(held_out_questions(stream(cfg.seed, Stream::EvalPool), cfg.eval_pool, &held)),
            test: to_items(held_out_questions(stream(cfg.seed, Stream::EvalTest), cfg.eval_test, &held)),
        },
    })
}

fn fmt_box(b: &BBox) -> String {
    format!("{},{},{},{}", b.x1, b.y1, b.x2, b.y2)
}

fn parse_box(s: &str) -> Result<BBox, HarnessError> {
    let v = s
        .split(',')
        .map(|x| x.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| HarnessError::Corpus(format!("bad box `{s}`")))?;
    match v[..] {
        [x1, y1, x2, y2] => Ok(BBox::new(x1, y1, x2, y2)?),
        _ => Err(HarnessError::Corpus(format!("bad box `{s}`"))),
    }
}

struct Writer {
    root: PathBuf,
}

impl Writer {
    fn image(&self, name: String, img: &ImageTensor) -> Result<String, HarnessError> {
        let rel = format!("images/{name}.ppm");
        img.write_ppm(&self.root.join(&rel))?;
        Ok(rel)
    }

    fn table(&self, file: &str, rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
        let text: String = rows.iter().map(|r| r.join("\t") + "\n").collect();
        let path = self.root.join(file);
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }
}

impl Corpus {
    /// Writes the corpus under `dir`, creating it if needed.
    pub fn write(&self, dir: &Path, cfg: &Config) -> Result<(), HarnessError> {
        fs::create_dir_all(dir.join("images")).map_err(|e| HarnessError::io(dir, e))?;
        let w = Writer { root: dir.to_path_buf() };
        let vocab_path = dir.join("vocab.txt");
        fs::write(&vocab_path, self.vocab.to_text()).map_err(|e| HarnessError::io(&vocab_path, e))?;
        let cfg_path = dir.join("corpus.cfg");
        fs::write(&cfg_path, cfg.to_text()).map_err(|e| HarnessError::io(&cfg_path, e))?;

        let rows = |name: &str, items: &[PairRecord]| -> Result<Vec<Vec<String>>, HarnessError> {
            items
                .iter()
                .enumerate()
                .map(|(i, p)| Ok(vec![w.image(format!("{name}-{i:05}"), &p.image)?, p.caption.clone()]))
                .collect()
        };
        w.table("pairs.tsv", rows("pair", &self.pairs)?)?;
        let mut inter = Vec::new();
        for (d, doc) in self.interleaved.iter().enumerate() {
            for (b, block) in doc.iter().enumerate() {
                let img = w.image(format!("doc-{d:05}-{b}"), &block.image)?;
                inter.push(vec![d.to_string(), img, block.caption.clone()]);
            }
        }
        w.table("interleaved.tsv", inter)?;
        let grounded = self
            .grounded
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let phrases: Vec<String> = g.phrases.iter().map(|(p, b)| format!("{p}@{}", fmt_box(b))).collect();
                Ok(vec![w.image(format!("grounded-{i:05}"), &g.image)?, phrases.join("|")])
            })
            .collect::<Result<_, HarnessError>>()?;
        w.table("grounded.tsv", grounded)?;
        let gen = self
            .gen
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let ents = g
                    .entities
                    .iter()
                    .enumerate()
                    .map(|(j, e)| {
                        let img = w.image(format!("gen-{i:05}-subject{j}"), &e.subject)?;
                        Ok(format!("{}@{img}@{}", e.phrase, fmt_box(&e.bbox)))
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                Ok(vec![w.image(format!("gen-{i:05}"), &g.target)?, g.caption.clone(), ents.join("|")])
            })
            .collect::<Result<_, HarnessError>>()?;
        w.table("gen.tsv", gen)?;
        let chat = self
            .chat
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut row = vec![w.image(format!("chat-{i:05}"), &c.image)?];
                for (q, a) in &c.turns {
                    row.extend([q.clone(), a.clone()]);
                }
                Ok(row)
            })
            .collect::<Result<_, HarnessError>>()?;
        w.table("chat.tsv", chat)?;
        let qa_rows = |name: &str, items: &[EvalItem]| -> Result<Vec<Vec<String>>, HarnessError> {
            items
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    Ok(vec![
                        w.image(format!("{name}-{i:05}"), &it.image)?,
                        it.question.clone(),
                        it.answer.clone(),
                    ])
                })
                .collect()
        };
        w.table("qa.tsv", qa_rows("qa", &self.qa)?)?;
        w.table("eval_pool.tsv", qa_rows("pool", &self.eval.pool)?)?;
        w.table("eval_test.tsv", qa_rows("test", &self.eval.test)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let read = |file: &str| -> Result<Vec<Vec<String>>, HarnessError> {
            let path = dir.join(file);
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            Ok(text.lines().map(|l| l.split('\t').map(str::to_string).collect()).collect())
        };
        let image = |rel: &str| -> Result<ImageTensor, HarnessError> { Ok(ImageTensor::read_ppm(&dir.join(rel))?) };
        let cols = |row: &[String], n: usize, file: &str| -> Result<(), HarnessError> {
            if row.len() < n {
                return Err(HarnessError::Corpus(format!("{file}: row has {} columns, need {n}", row.len())));
            }
            Ok(())
        };
        let vocab_path = dir.join("vocab.txt");
        let vocab = Vocab::from_text(&fs::read_to_string(&vocab_path).map_err(|e| HarnessError::io(&vocab_path, e))?)?;

        let pairs = read("pairs.tsv")?
            .iter()
            .map(|r| {
                cols(r, 2, "pairs.tsv")?;
                Ok(PairRecord { image: image(&r[0])?, caption: r[1].clone() })
            })
            .collect::<Result<_, HarnessError>>()?;
        let mut interleaved: Vec<Vec<PairRecord>> = Vec::new();
        for r in read("interleaved.tsv")? {
            cols(&r, 3, "interleaved.tsv")?;
            let d: usize = r[0].parse().map_err(|_| HarnessError::Corpus(format!("bad document id `{}`", r[0])))?;
            if d == interleaved.len() {
                interleaved.push(Vec::new());
            } else if d + 1 != interleaved.len() {
                return Err(HarnessError::Corpus(format!("interleaved.tsv: document {d} out of order")));
            }
            interleaved[d].push(PairRecord { image: image(&r[1])?, caption: r[2].clone() });
        }
        let grounded = read("grounded.tsv")?
            .iter()
            .map(|r| {
                cols(r, 2, "grounded.tsv")?;
                let phrases = r[1]
                    .split('|')
                    .map(|p| {
                        let (text, b) = p
                            .split_once('@')
                            .ok_or_else(|| HarnessError::Corpus(format!("bad phrase `{p}`")))?;
                        Ok((text.to_string(), parse_box(b)?))
                    })
                    .collect::<Result<_, HarnessError>>()?;
                Ok(GroundedRecord { image: image(&r[0])?, phrases })
            })
            .collect::<Result<_, HarnessError>>()?;
        let gen = read("gen.tsv")?
            .iter()
            .map(|r| {
                cols(r, 3, "gen.tsv")?;
                let entities = r[2]
                    .split('|')
                    .map(|e| {
                        let parts: Vec<&str> = e.split('@').collect();
                        match parts[..] {
                            [phrase, img, b] => Ok(GenEntityRecord {
                                phrase: phrase.to_string(),
                                subject: image(img)?,
                                bbox: parse_box(b)?,
                            }),
                            _ => Err(HarnessError::Corpus(format!("bad entity `{e}`"))),
                        }
                    })
                    .collect::<Result<_, HarnessError>>()?;
                Ok(GenRecord { target: image(&r[0])?, caption: r[1].clone(), entities })
            })
            .collect::<Result<_, HarnessError>>()?;
        let chat = read("chat.tsv")?
            .iter()
            .map(|r| {
                cols(r, 3, "chat.tsv")?;
                if r.len() % 2 == 0 {
                    return Err(HarnessError::Corpus("chat.tsv: unpaired turn".into()));
                }
                let turns = r[1..].chunks(2).map(|t| (t[0].clone(), t[1].clone())).collect();
                Ok(ChatRecord { image: image(&r[0])?, turns })
            })
            .collect::<Result<_, HarnessError>>()?;
        let qa = |file: &str| -> Result<Vec<EvalItem>, HarnessError> {
            read(file)?
                .iter()
                .map(|r| {
                    cols(r, 3, file)?;
                    Ok(EvalItem { image: image(&r[0])?, question: r[1].clone(), answer: r[2].clone() })
                })
                .collect()
        };
        Ok(Self {
            vocab,
            pairs,
            interleaved,
            grounded,
            gen,
            chat,
            qa: qa("qa.tsv")?,
            eval: EvalTask {
                pool: qa("eval_pool.tsv")?,
                test: qa("eval_test.tsv")?,
            },
        })
    }
}

