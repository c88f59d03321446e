//! Synthetic dual-modality tasks.
//!
//! Every example carries a small group of tokens per input modality. Exactly
//! one token in each group is a "key" (local id below [`CONTENT`]); the rest
//! are fillers, plus a per-archetype instruction token in text groups. A task's
//! hidden rule reads the key of a chosen input modality for each output
//! position and maps it through a permutation of the content ids.
//!
//! Tasks that produce the same output modality draw their permutations
//! partly from a shared "world" permutation, so learning one of them helps
//! with the others.

mod io;
mod order;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, Signature, TokenGroups, Vocab};
use crate::numerics::Rng;

pub use io::{read_dataset, read_manifest, write_dataset, write_manifest, write_roster, Manifest, ManifestEntry};
pub use order::{task_order, OrderName, TaskOrder};

/// Number of content ids per modality; local ids `0..CONTENT` are keys.
pub const CONTENT: u32 = 32;
/// Text fillers are local ids `CONTENT..TEXT_FILLER_END`; the rest of the text
/// range holds instruction tokens.
pub const TEXT_FILLER_END: u32 = 56;
/// Tokens per input group besides the key.
pub const FILLERS_PER_GROUP: usize = 2;
/// Vocabulary size per modality the generator assumes.
pub const VOCAB_PER_MODALITY: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Archetype {
    #[serde(rename = "vqa-like")]
    Vqa,
    #[serde(rename = "classify-like")]
    Classify,
    #[serde(rename = "caption2image-like")]
    Caption2Image,
    #[serde(rename = "ocr-like")]
    Ocr,
    #[serde(rename = "grounding-like")]
    Grounding,
    #[serde(rename = "edit-like")]
    Edit,
}

impl Archetype {
    /// Default roster order.
    pub const ALL: [Archetype; 6] = [
        Archetype::Vqa,
        Archetype::Classify,
        Archetype::Caption2Image,
        Archetype::Ocr,
        Archetype::Grounding,
        Archetype::Edit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Vqa => "vqa-like",
            Archetype::Classify => "classify-like",
            Archetype::Caption2Image => "caption2image-like",
            Archetype::Ocr => "ocr-like",
            Archetype::Grounding => "grounding-like",
            Archetype::Edit => "edit-like",
        }
    }

    pub fn signature(self) -> Signature {
        use Modality::{Image, Text};
        let (inputs, output): (&[Modality], Modality) = match self {
            Archetype::Vqa | Archetype::Ocr | Archetype::Grounding => (&[Image, Text], Text),
            Archetype::Classify => (&[Image], Text),
            Archetype::Caption2Image => (&[Text], Image),
            Archetype::Edit => (&[Image, Text], Image),
        };
        Signature::new(inputs.iter().copied(), output).expect("nonempty inputs")
    }

    /// Input modality whose key feeds each output position.
    pub fn sources(self) -> Vec<Modality> {
        use Modality::{Image, Text};
        match self {
            Archetype::Vqa | Archetype::Classify | Archetype::Ocr => vec![Image],
            Archetype::Grounding => vec![Image, Image, Text, Text],
            Archetype::Caption2Image => vec![Text, Text],
            Archetype::Edit => vec![Image, Text],
        }
    }

    /// Text instruction token (local id) that marks this archetype.
    pub fn instruction(self) -> u32 {
        TEXT_FILLER_END + Archetype::ALL.iter().position(|&a| a == self).expect("listed") as u32
    }

    /// Fraction of each position's map that agrees with the shared world map.
    pub fn default_share(self) -> f64 {
        match self {
            Archetype::Classify | Archetype::Grounding => 0.5,
            _ => 0.75,
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s || a.as_str().trim_end_matches("-like") == s)
            .ok_or_else(|| Error::config(format!("unknown archetype {s:?}")))
    }
}

/// Required output shape of an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Format {
    pub length: usize,
    pub modality: Modality,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub inputs: TokenGroups,
    pub target: Vec<u32>,
    pub format: Format,
}

/// Hidden mapping for one output position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionRule {
    pub source: Modality,
    /// `map[key]` is the local output content id.
    pub map: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub positions: Vec<PositionRule>,
}

impl Rule {
    /// The exact answer for `inputs`, or `None` if a source group has no
    /// unique key.
    pub fn apply(&self, inputs: &TokenGroups, output: Modality, vocab: Vocab) -> Option<Vec<u32>> {
        self.positions
            .iter()
            .map(|p| {
                let key = find_key(inputs.get(&p.source)?, p.source, vocab)?;
                Some(vocab.token(output, p.map[key as usize]))
            })
            .collect()
    }
}

fn find_key(group: &[u32], m: Modality, vocab: Vocab) -> Option<u32> {
    let mut keys = group
        .iter()
        .filter_map(|&t| vocab.local(m, t))
        .filter(|&l| (l as u32) < CONTENT);
    let k = keys.next()?;
    keys.next().is_none().then_some(k as u32)
}

/// Permutations shared by every task with the same output modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    maps: BTreeMap<(Modality, usize), Vec<u32>>,
}

impl World {
    pub fn new(seed: u64) -> Self {
        let root = Rng::new(seed).fork_named("world");
        let mut maps = BTreeMap::new();
        for m in Modality::ALL {
            for pos in 0..4 {
                let mut rng = root.fork_named(&format!("{m}.{pos}"));
                let p = rng.permutation(CONTENT as usize).into_iter().map(|v| v as u32).collect();
                maps.insert((m, pos), p);
            }
        }
        Self { maps }
    }

    pub fn map(&self, output: Modality, position: usize) -> &[u32] {
        &self.maps[&(output, position)]
    }
}

/// Generation knobs beyond archetype, sizes and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub world_seed: u64,
    /// Overrides [`Archetype::default_share`].
    pub share: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub archetype: Archetype,
    pub signature: Signature,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub share: f64,
    pub rule: Rule,
    #[serde(skip)]
    pub train: Vec<Example>,
    #[serde(skip)]
    pub test: Vec<Example>,
}

impl TaskSpec {
    pub fn format(&self) -> Format {
        Format {
            length: self.rule.positions.len(),
            modality: self.signature.output,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(VOCAB_PER_MODALITY)
    }

    /// Output of the hidden rule; scores 100% on every generated example.
    pub fn oracle(&self, inputs: &TokenGroups) -> Option<Vec<u32>> {
        self.rule.apply(inputs, self.signature.output, self.vocab())
    }
}

/// Permutation equal to `world` on a `share` fraction of keys. The world
/// values of the remaining keys are rotated among them, so none of those keys
/// keeps its world value (unless exactly one key moves).
fn partly_shared(world: &[u32], share: f64, rng: &mut Rng) -> Vec<u32> {
    let n = world.len();
    let keep = ((share * n as f64).round() as usize).min(n);
    let moved = rng.permutation(n).split_off(keep);
    let mut out = world.to_vec();
    if moved.len() > 1 {
        for (i, &k) in moved.iter().enumerate() {
            out[k] = world[moved[(i + 1) % moved.len()]];
        }
    }
    out
}

pub fn generate_task(archetype: Archetype, train_size: usize, test_size: usize, seed: u64) -> Result<TaskSpec> {
    generate_task_with(archetype, train_size, test_size, seed, &GenOptions::default())
}

pub fn generate_task_with(
    archetype: Archetype,
    train_size: usize,
    test_size: usize,
    seed: u64,
    opts: &GenOptions,
) -> Result<TaskSpec> {
    if train_size == 0 || test_size == 0 {
        return Err(Error::validation("train and test sizes must be at least 1"));
    }
    let share = opts.share.unwrap_or_else(|| archetype.default_share());
    if !(0.0..=1.0).contains(&share) {
        return Err(Error::config(format!("share {share} outside [0, 1]")));
    }
    let signature = archetype.signature();
    let vocab = Vocab::new(VOCAB_PER_MODALITY);
    let root = Rng::new(seed).fork_named(archetype.as_str());
    let world = World::new(opts.world_seed);

    let mut rule_rng = root.fork_named("rule");
    let positions = archetype
        .sources()
        .into_iter()
        .enumerate()
        .map(|(pos, source)| PositionRule {
            source,
            map: partly_shared(world.map(signature.output, pos), share, &mut rule_rng),
        })
        .collect();
    let rule = Rule { positions };

    let capacity = input_space(&signature);
    if (train_size + test_size) as f64 > 0.5 * capacity {
        return Err(Error::validation(format!(
            "{} distinct inputs requested but {archetype} has only about {capacity:.0}",
            train_size + test_size
        )));
    }

    let mut rng = root.fork_named("examples");
    let mut seen: HashSet<TokenGroups> = HashSet::new();
    let mut draw = |split: &str, n: usize, rng: &mut Rng| -> Vec<Example> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let inputs = draw_inputs(archetype, &signature, vocab, rng);
            if !seen.insert(canonical(&inputs)) {
                continue;
            }
            let target = rule.apply(&inputs, signature.output, vocab).expect("generated inputs carry keys");
            out.push(Example {
                id: format!("{archetype}-{split}-{:05}", out.len()),
                inputs,
                target,
                format: Format {
                    length: rule.positions.len(),
                    modality: signature.output,
                },
            });
        }
        out
    };
    let train = draw("train", train_size, &mut rng);
    let test = draw("test", test_size, &mut rng);

    Ok(TaskSpec {
        id: archetype.as_str().to_string(),
        archetype,
        signature,
        train_size,
        test_size,
        seed,
        share,
        rule,
        train,
        test,
    })
}

/// Input content ignoring token order within groups.
fn canonical(inputs: &TokenGroups) -> TokenGroups {
    inputs
        .iter()
        .map(|(m, t)| {
            let mut t = t.clone();
            t.sort_unstable();
            (*m, t)
        })
        .collect()
}

fn filler_range(m: Modality) -> (u32, u32) {
    match m {
        Modality::Text => (CONTENT, TEXT_FILLER_END),
        Modality::Image => (CONTENT, VOCAB_PER_MODALITY),
    }
}

/// Approximate count of distinct input contents for a signature.
fn input_space(sig: &Signature) -> f64 {
    sig.inputs
        .iter()
        .map(|&m| {
            let (lo, hi) = filler_range(m);
            let f = f64::from(hi - lo);
            // multisets of FILLERS_PER_GROUP fillers
            let pairs = f * (f + 1.0) / 2.0;
            f64::from(CONTENT) * pairs
        })
        .product()
}

fn draw_inputs(archetype: Archetype, sig: &Signature, vocab: Vocab, rng: &mut Rng) -> TokenGroups {
    sig.inputs
        .iter()
        .map(|&m| {
            let (lo, hi) = filler_range(m);
            let mut group = vec![vocab.token(m, rng.below(CONTENT as usize) as u32)];
            for _ in 0..FILLERS_PER_GROUP {
                group.push(vocab.token(m, lo + rng.below((hi - lo) as usize) as u32));
            }
            if m == Modality::Text {
                group.push(vocab.token(m, archetype.instruction()));
            }
            rng.shuffle(&mut group);
            (m, group)
        })
        .collect()
}

/// Roster generation settings. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterConfig {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub archetypes: Vec<Archetype>,
    /// Per-archetype share overrides.
    #[serde(default)]
    pub shares: BTreeMap<Archetype, f64>,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_size: 2000,
            test_size: 500,
            archetypes: Archetype::ALL.to_vec(),
            shares: BTreeMap::new(),
        }
    }
}

/// Generates every task of a roster. Task seeds and the shared world derive
/// from the roster seed.
pub fn generate_roster(cfg: &RosterConfig) -> Result<Vec<TaskSpec>> {
    if cfg.archetypes.is_empty() {
        return Err(Error::config("roster has no tasks"));
    }
    let distinct: BTreeSet<_> = cfg.archetypes.iter().collect();
    if distinct.len() != cfg.archetypes.len() {
        return Err(Error::config("roster lists an archetype twice"));
    }
    let root = Rng::new(cfg.seed);
    let world_seed = root.fork_named("world-seed").seed();
    cfg.archetypes
        .iter()
        .map(|&a| {
            let seed = root.fork_named(a.as_str()).seed();
            let opts = GenOptions {
                world_seed,
                share: cfg.shares.get(&a).copied(),
            };
            generate_task_with(a, cfg.train_size, cfg.test_size, seed, &opts)
        })
        .collect()
}
