//! The attribute-question task: training questions over seen colours,
//! evaluation over colours no training image shows, and few-shot training
//! episodes assembled by retrieval.

use std::ops::RangeInclusive;

use mmgen_core::{derive_seed, seeded, ImageTensor};
use mmgen_fewshot::{build_episode, embed_all, rices_select, EvalItem, EvalTask, FewShotError, SEPARATOR};
use mmgen_mmtok::{FormatConfig, SequenceSample, Vocab};
use mmgen_viztok::Encoder;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::synth::{color_question, Color, SceneSpec, ShapeKind, SynthScene, PALETTE};

/// Colours absent from every training image. Their words still occur as
/// relabelled answers, so the model can emit them but only learns what they
/// look like from demonstrations.
pub const HELD_OUT_COLORS: [Color; 2] = [Color(4), Color(7)];

/// Every (kind, colour) combination over the held-out colours.
pub fn held_out_combos() -> Vec<(ShapeKind, Color)> {
    HELD_OUT_COLORS
        .iter()
        .flat_map(|&c| ShapeKind::ALL.iter().map(move |&k| (k, c)))
        .collect()
}

/// A question about the colour of one shape in a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct QaItem {
    pub scene: SynthScene,
    pub kind: ShapeKind,
}

impl QaItem {
    pub fn question(&self) -> String {
        color_question(self.kind)
    }

    pub fn answer(&self) -> &'static str {
        self.scene
            .shape_of(self.kind)
            .expect("questions only ask about present shapes")
            .color
            .word()
    }

    pub fn to_eval_item(&self, image_size: usize) -> EvalItem {
        EvalItem {
            image: self.scene.render(image_size),
            question: self.question(),
            answer: self.answer().to_string(),
        }
    }
}

/// Questions over scenes that avoid `held_out`; the asked shape is uniform
/// over those present.
pub fn training_questions(seed: u64, count: usize, held_out: &[(ShapeKind, Color)]) -> Vec<QaItem> {
    let spec = SceneSpec {
        excluded: held_out.to_vec(),
        ..SceneSpec::default()
    };
    (0..count as u64)
        .map(|i| {
            let scene = SynthScene::generate(seed, i, &spec);
            let mut rng = seeded(derive_seed(seed ^ 0x51A5, i));
            let kind = scene.shapes[rng.random_range(0..scene.shapes.len())].kind;
            QaItem { scene, kind }
        })
        .collect()
}

/// Questions whose answer is a held-out combination, cycling through them.
/// Other shapes in the scene stay within the seen combinations.
pub fn held_out_questions(seed: u64, count: usize, held_out: &[(ShapeKind, Color)]) -> Vec<QaItem> {
    (0..count as u64)
        .map(|i| {
            let combo = held_out[i as usize % held_out.len()];
            let spec = SceneSpec {
                excluded: held_out.to_vec(),
                required: Some(combo),
                ..SceneSpec::default()
            };
            QaItem {
                scene: SynthScene::generate(seed, i, &spec),
                kind: combo.0,
            }
        })
        .collect()
}

/// Retrieval pool and test set over held-out combinations.
pub fn attribute_task(seed: u64, pool: usize, test: usize, image_size: usize) -> EvalTask {
    let held = held_out_combos();
    let to_items = |qs: Vec<QaItem>| qs.iter().map(|q| q.to_eval_item(image_size)).collect();
    EvalTask {
        pool: to_items(held_out_questions(derive_seed(seed, 1), pool, &held)),
        test: to_items(held_out_questions(derive_seed(seed, 2), test, &held)),
    }
}

/// How few-shot training episodes are drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub shots: RangeInclusive<usize>,
    pub count: usize,
    /// Probability that an episode renames every colour answer through one
    /// random permutation of the palette. Such episodes are only solvable
    /// from context.
    pub relabel_prob: f64,
}

fn relabelled(items: &[&EvalItem], rng: &mut impl Rng) -> Vec<EvalItem> {
    let mut words: Vec<&str> = PALETTE.iter().map(|(w, _)| *w).collect();
    words.shuffle(rng);
    items
        .iter()
        .map(|it| {
            let idx = PALETTE.iter().position(|(w, _)| *w == it.answer);
            EvalItem {
                answer: idx.map_or_else(|| it.answer.clone(), |i| words[i].to_string()),
                ..(*it).clone()
            }
        })
        .collect()
}

/// Few-shot training episodes: each picks a query, retrieves `k` examples
/// (uniform in `cfg.shots`) from the other items with the encoder, and
/// supervises every answer.
pub fn retrieval_episodes(
    vocab: &Vocab,
    fmt: FormatConfig,
    encoder: &Encoder<f32>,
    items: &[EvalItem],
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<SequenceSample>, FewShotError> {
    let images: Vec<&ImageTensor> = items.iter().map(|i| &i.image).collect();
    let emb = embed_all(encoder, &images)?;
    let mut rng = seeded(seed);
    (0..cfg.count)
        .map(|e| {
            let q = rng.random_range(0..items.len());
            let k = rng.random_range(cfg.shots.clone()).min(items.len() - 1);
            let others: Vec<usize> = (0..items.len()).filter(|&i| i != q).collect();
            let pool: Vec<Vec<f64>> = others.iter().map(|&i| emb[i].clone()).collect();
            let picks = rices_select(&emb[q], &pool, k)?;
            let mut episode: Vec<&EvalItem> = picks.iter().map(|&p| &items[others[p]]).collect();
            episode.push(&items[q]);
            let episode_seed = derive_seed(seed, e as u64);
            if rng.random_bool(cfg.relabel_prob) {
                let renamed = relabelled(&episode, &mut rng);
                let refs: Vec<&EvalItem> = renamed.iter().collect();
                build_episode(vocab, fmt, &refs, SEPARATOR, episode_seed)
            } else {
                build_episode(vocab, fmt, &episode, SEPARATOR, episode_seed)
            }
        })
        .collect()
}
