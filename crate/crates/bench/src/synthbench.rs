//! Synthetic triplets with ground-truth latent factors.
//!
//! A scene holds `G` objects from distinct families, each with an attribute
//! from its own family. Every visual token is the bag `[object, attribute]`.
//! The modification names the subject (or just says "it") and gives a new
//! attribute from the subject's family; the target is the reference with the
//! subject's attribute replaced. The subject covers only a small share of the
//! tokens, and with the pronoun it can be found only by matching the new
//! attribute's family against the objects in the reference.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use hud_core::model::Triplet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{BenchError, Result};

pub const PRONOUN_IT: usize = 1;
pub const PRONOUN_THEM: usize = 2;
const FIRST_OBJECT: usize = 3;
/// Distractor streams live above every triplet index.
const DISTRACTOR_STREAM: u64 = 1 << 32;

pub const DEFAULT_PRONOUNS: [&str; 2] = ["it", "them"];

/// `frames × tokens × bag` of vocabulary ids.
pub type Video = Vec<Vec<Vec<usize>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    pub attributes: usize,
    pub families: usize,
    pub objects_per_scene: usize,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub detail_fraction: f64,
    pub ambiguous: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 20,
            attributes: 20,
            families: 5,
            objects_per_scene: 3,
            frames: 2,
            tokens_per_frame: 10,
            detail_fraction: 0.1,
            ambiguous: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.families == 0 || self.families > self.objects {
            return bad(format!(
                "need 1 ≤ families ≤ objects, got {} and {}",
                self.families, self.objects
            ));
        }
        if self.attributes < 2 * self.families {
            return bad(format!(
                "every family needs two attributes: {} attributes for {} families",
                self.attributes, self.families
            ));
        }
        if self.objects_per_scene == 0 || self.objects_per_scene > self.families {
            return bad(format!(
                "objects_per_scene must lie in 1..={} (one per family), got {}",
                self.families, self.objects_per_scene
            ));
        }
        if self.frames == 0 || self.tokens_per_frame == 0 {
            return bad("frames and tokens_per_frame must be at least 1".into());
        }
        if !(self.detail_fraction > 0.0 && self.detail_fraction <= 1.0) {
            return bad(format!(
                "detail_fraction must lie in (0, 1], got {}",
                self.detail_fraction
            ));
        }
        let total = self.total_tokens();
        if self.detail_fraction * (total as f64) < 1.0 {
            return bad(format!(
                "detail_fraction {} leaves the subject no token out of {total}",
                self.detail_fraction
            ));
        }
        if self.objects_per_scene > 1 && total - self.subject_tokens() < self.objects_per_scene - 1 {
            return bad("too few tokens left for the non-subject objects".into());
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    /// `⌈f · total⌉`, or every token when the scene has a single object.
    pub fn subject_tokens(&self) -> usize {
        if self.objects_per_scene == 1 {
            return self.total_tokens();
        }
        let exact = self.detail_fraction * self.total_tokens() as f64;
        ((exact - 1e-9).ceil() as usize).clamp(1, self.total_tokens())
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_OBJECT + self.objects + self.attributes
    }

    pub fn object_id(&self, object: usize) -> usize {
        FIRST_OBJECT + object
    }

    pub fn attribute_id(&self, attribute: usize) -> usize {
        FIRST_OBJECT + self.objects + attribute
    }

    fn object_of_id(&self, id: usize) -> Option<usize> {
        (FIRST_OBJECT..FIRST_OBJECT + self.objects)
            .contains(&id)
            .then(|| id - FIRST_OBJECT)
    }

    fn attribute_of_id(&self, id: usize) -> Option<usize> {
        let start = FIRST_OBJECT + self.objects;
        (start..start + self.attributes).contains(&id).then(|| id - start)
    }

    pub fn object_family(&self, object: usize) -> usize {
        object % self.families
    }

    pub fn attribute_family(&self, attribute: usize) -> usize {
        attribute % self.families
    }

    fn members(&self, family: usize, count: usize) -> Vec<usize> {
        (family..count).step_by(self.families).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object: usize,
    pub attribute: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentScene {
    pub objects: Vec<SceneObject>,
    /// Index into `objects` of the object the modification targets.
    pub subject: usize,
    pub detail_fraction: f64,
}

impl LatentScene {
    pub fn token_total(&self) -> usize {
        self.objects.iter().map(|o| o.tokens).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTriplet {
    pub index: usize,
    pub seed: u64,
    pub scene: LatentScene,
    pub new_attribute: usize,
    /// Scene slot shown at each token position, `frames × tokens_per_frame`.
    pub layout: Vec<Vec<usize>>,
    pub triplet: Triplet,
}

fn render(cfg: &SynthConfig, objects: &[SceneObject], layout: &[Vec<usize>]) -> Video {
    layout
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|&slot| {
                    let o = &objects[slot];
                    vec![cfg.object_id(o.object), cfg.attribute_id(o.attribute)]
                })
                .collect()
        })
        .collect()
}

fn pick_other<R: Rng>(rng: &mut R, pool: &[usize], avoid: &[usize]) -> usize {
    let choices: Vec<usize> = pool.iter().copied().filter(|v| !avoid.contains(v)).collect();
    *choices
        .choose(rng)
        .expect("validated: every family has a spare attribute")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Triplet `index` of the dataset keyed by `seed`; each index has its own
/// keystream, so triplets can be generated in any order.
pub fn generate_triplet(seed: u64, index: usize, cfg: &SynthConfig) -> Result<GeneratedTriplet> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, index as u64);
    let g = cfg.objects_per_scene;

    let families = rand::seq::index::sample(&mut rng, cfg.families, g).into_vec();
    let subject = rng.gen_range(0..g);
    let total = cfg.total_tokens();
    let subject_tokens = cfg.subject_tokens();
    let mut counts = vec![0; g];
    counts[subject] = subject_tokens;
    if g > 1 {
        let rest = total - subject_tokens;
        let others: Vec<usize> = (0..g).filter(|&s| s != subject).collect();
        for &s in &others {
            counts[s] = rest / others.len();
        }
        let mut extra: Vec<usize> = others.clone();
        extra.shuffle(&mut rng);
        for &s in extra.iter().take(rest % others.len()) {
            counts[s] += 1;
        }
    }
    let objects: Vec<SceneObject> = families
        .iter()
        .zip(&counts)
        .map(|(&f, &tokens)| SceneObject {
            object: *cfg
                .members(f, cfg.objects)
                .choose(&mut rng)
                .expect("family has objects"),
            attribute: *cfg
                .members(f, cfg.attributes)
                .choose(&mut rng)
                .expect("family has attributes"),
            tokens,
        })
        .collect();

    // Spread the subject evenly over frames, fill the rest with the others.
    let mut pool: Vec<usize> = (0..g)
        .filter(|&s| s != subject)
        .flat_map(|s| vec![s; counts[s]])
        .collect();
    pool.shuffle(&mut rng);
    let mut pool = pool.into_iter();
    let layout: Vec<Vec<usize>> = (0..cfg.frames)
        .map(|k| {
            let share = subject_tokens / cfg.frames + usize::from(k < subject_tokens % cfg.frames);
            let mut frame = vec![subject; share];
            frame.extend(pool.by_ref().take(cfg.tokens_per_frame - share));
            frame.shuffle(&mut rng);
            frame
        })
        .collect();

    let old = objects[subject].attribute;
    let family = cfg.attribute_family(old);
    let new_attribute = pick_other(&mut rng, &cfg.members(family, cfg.attributes), &[old]);
    let mut changed = objects.clone();
    changed[subject].attribute = new_attribute;
    let referent = if cfg.ambiguous {
        PRONOUN_IT
    } else {
        cfg.object_id(objects[subject].object)
    };
    let triplet = Triplet {
        reference: render(cfg, &objects, &layout),
        modification: vec![referent, cfg.attribute_id(new_attribute)],
        target: render(cfg, &changed, &layout),
    };
    Ok(GeneratedTriplet {
        index,
        seed,
        scene: LatentScene {
            objects,
            subject,
            detail_fraction: cfg.detail_fraction,
        },
        new_attribute,
        layout,
        triplet,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    /// A non-subject object changes instead of the subject.
    WrongReferent,
    /// The requested change plus a change to a non-subject object.
    Jitter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Distractor {
    pub source: usize,
    pub kind: DistractorKind,
    /// Perturbed slot and its new attribute; `None` for single-object scenes,
    /// where the distractor is the unchanged reference.
    pub change: Option<(usize, usize)>,
    pub video: Video,
}

fn make_distractor(
    seed: u64,
    k: usize,
    source: &GeneratedTriplet,
    kind: DistractorKind,
    cfg: &SynthConfig,
) -> Distractor {
    let mut rng = stream_rng(seed, DISTRACTOR_STREAM + k as u64);
    let scene = &source.scene;
    let others: Vec<usize> = (0..scene.objects.len()).filter(|&s| s != scene.subject).collect();
    let Some(&slot) = others.choose(&mut rng) else {
        return Distractor {
            source: source.index,
            kind,
            change: None,
            video: source.triplet.reference.clone(),
        };
    };
    let mut objects = scene.objects.clone();
    let old = objects[slot].attribute;
    let attr = pick_other(
        &mut rng,
        &cfg.members(cfg.attribute_family(old), cfg.attributes),
        &[old],
    );
    objects[slot].attribute = attr;
    if kind == DistractorKind::Jitter {
        objects[scene.subject].attribute = source.new_attribute;
    }
    Distractor {
        source: source.index,
        kind,
        change: Some((slot, attr)),
        video: render(cfg, &objects, &source.layout),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub config: SynthConfig,
    pub triplets: Vec<GeneratedTriplet>,
    pub distractors: Vec<Distractor>,
}

/// `n` triplets plus `n_db` near-miss distractor targets. Distractor `k`
/// perturbs triplet `k mod n`; the first pass over the triplets produces
/// wrong-referent edits, the second jittered targets, and so on alternately.
pub fn generate_dataset(seed: u64, n: usize, n_db: usize, cfg: &SynthConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(BenchError::Config("a dataset needs at least one triplet".into()));
    }
    let triplets = (0..n)
        .map(|i| generate_triplet(seed, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let distractors = (0..n_db)
        .map(|k| {
            let kind = if (k / n).is_multiple_of(2) {
                DistractorKind::WrongReferent
            } else {
                DistractorKind::Jitter
            };
            make_distractor(seed, k, &triplets[k % n], kind, cfg)
        })
        .collect();
    Ok(Dataset {
        seed,
        config: cfg.clone(),
        triplets,
        distractors,
    })
}

impl Dataset {
    /// Retrieval gallery: every triplet's target in order, then the
    /// distractors. Query `i`'s true target sits at index `i`.
    pub fn database(&self) -> Vec<&Video> {
        self.triplets
            .iter()
            .map(|t| &t.triplet.target)
            .chain(self.distractors.iter().map(|d| &d.video))
            .collect()
    }

    /// One JSON record per line: triplets first, then distractors.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.triplets {
            let record = json!({
                "record": "triplet",
                "seed": t.seed,
                "index": t.index,
                "scene": t.scene,
                "new_attribute": t.new_attribute,
                "layout": t.layout,
                "reference": t.triplet.reference,
                "modification": t.triplet.modification,
                "target": t.triplet.target,
            });
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        for (k, d) in self.distractors.iter().enumerate() {
            let record = json!({
                "record": "distractor",
                "seed": self.seed,
                "index": k,
                "source": d.source,
                "kind": d.kind,
                "change": d.change,
                "video": d.video,
            });
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(())
    }
}

/// Objects present in a video as `(object, attribute)` pairs, in order of
/// first appearance.
fn scene_objects(cfg: &SynthConfig, video: &Video) -> Vec<(usize, usize)> {
    let mut seen = Vec::new();
    for bag in video.iter().flatten() {
        let object = bag.iter().find_map(|&id| cfg.object_of_id(id));
        let attribute = bag.iter().find_map(|&id| cfg.attribute_of_id(id));
        if let (Some(o), Some(a)) = (object, attribute) {
            if !seen.contains(&(o, a)) {
                seen.push((o, a));
            }
        }
    }
    seen
}

fn apply_change(cfg: &SynthConfig, video: &Video, object: usize, attribute: usize) -> Video {
    let (oid, aid) = (cfg.object_id(object), cfg.attribute_id(attribute));
    video
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|bag| {
                    if bag.contains(&oid) {
                        bag.iter()
                            .map(|&id| if cfg.attribute_of_id(id).is_some() { aid } else { id })
                            .collect()
                    } else {
                        bag.clone()
                    }
                })
                .collect()
        })
        .collect()
}

/// Solves a triplet from the reference tokens and the text alone: the
/// subject is the named object, or for a pronoun the object whose family
/// matches the requested attribute.
pub fn symbolic_oracle(cfg: &SynthConfig, reference: &Video, modification: &[usize]) -> Option<Video> {
    let [referent, attr_id] = modification else {
        return None;
    };
    let attribute = cfg.attribute_of_id(*attr_id)?;
    let present = scene_objects(cfg, reference);
    let subject = match cfg.object_of_id(*referent) {
        Some(o) => present.iter().find(|(p, _)| *p == o)?.0,
        None => {
            let family = cfg.attribute_family(attribute);
            present.iter().find(|(p, _)| cfg.object_family(*p) == family)?.0
        }
    };
    Some(apply_change(cfg, reference, subject, attribute))
}

/// Ignores which object the text refers to: applies the new attribute to a
/// uniformly chosen object of the reference.
pub fn text_only_guess<R: Rng>(
    cfg: &SynthConfig,
    reference: &Video,
    modification: &[usize],
    rng: &mut R,
) -> Option<Video> {
    let attribute = cfg.attribute_of_id(*modification.get(1)?)?;
    let present = scene_objects(cfg, reference);
    let (object, _) = *present.choose(rng)?;
    Some(apply_change(cfg, reference, object, attribute))
}

/// Percentage of texts containing at least one pronoun. Tokens are split on
/// whitespace and compared case-insensitively.
pub fn pronoun_ratio<S: AsRef<str>, P: AsRef<str>>(texts: &[S], pronouns: &[P]) -> Result<f64> {
    if texts.is_empty() {
        return Err(BenchError::Config("pronoun ratio of an empty corpus".into()));
    }
    let set: BTreeSet<String> = pronouns.iter().map(|p| p.as_ref().to_lowercase()).collect();
    let hits = texts
        .iter()
        .filter(|t| {
            t.as_ref()
                .split_whitespace()
                .any(|tok| set.contains(&tok.to_lowercase()))
        })
        .count();
    Ok(100.0 * hits as f64 / texts.len() as f64)
}

/// Reads one modification text per line, skipping blank lines.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut texts = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            texts.push(line);
        }
    }
    Ok(texts)
}
