//! Synthetic recommendation world with a planted bilinear affinity.
//!
//! Items are built from categorical attributes. Each attribute value owns a
//! latent vector and an item's latent is the weighted sum of its attribute
//! vectors plus a little item-specific noise. Users own a latent vector and
//! pick their next item by a softmax over affinity `<user, item>` among the
//! items they have not consumed yet; ratings are a clipped affine function of
//! the standardized affinity plus noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::prompt::render_user_prompt;
use crate::error::{Error, Result};
use crate::rng::{self, label};

/// Attribute name and the pool of values it draws from, with the weight of
/// the attribute in the item latent.
const ATTRIBUTES: &[(&str, &[&str], f64)] = &[
    (
        "genre",
        &["rock", "jazz", "pop", "folk", "soul", "metal", "blues", "disco"],
        1.0,
    ),
    ("mood", &["calm", "dark", "warm", "wild", "sad", "bright"], 0.8),
    ("era", &["60s", "70s", "80s", "90s", "00s", "10s"], 0.6),
    ("label", &["apex", "nova", "orbit", "lumen", "delta"], 0.3),
];

pub const MAX_HISTORY: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub latent_dim: usize,
    /// Raw events per user, including the held-out target.
    pub min_events: usize,
    pub max_events: usize,
    /// History cap after truncation (latest events win).
    pub max_history: usize,
    /// train / val / test user fractions.
    pub split: [f64; 3],
    pub category: String,
    /// Softmax temperature of the user choice model.
    pub choice_temperature: f64,
    pub item_noise: f64,
    pub rating_noise: f64,
    /// Longest admissible rendered user prompt, in tokens.
    pub max_prompt_tokens: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_items: 500,
            num_users: 1000,
            latent_dim: 8,
            min_events: 5,
            max_events: 9,
            max_history: MAX_HISTORY,
            split: [0.8, 0.1, 0.1],
            category: "album".to_string(),
            choice_temperature: 1.0,
            item_noise: 0.3,
            rating_noise: 0.5,
            max_prompt_tokens: 512,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let combos: usize = ATTRIBUTES.iter().map(|a| a.1.len()).product();
        if self.num_items == 0 {
            return Err(Error::config("corpus.num_items", "must be positive"));
        }
        if self.num_items > combos {
            return Err(Error::config(
                "corpus.num_items",
                format!("at most {combos} distinct attribute combinations exist"),
            ));
        }
        if self.num_users == 0 {
            return Err(Error::config("corpus.num_users", "must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("corpus.latent_dim", "must be positive"));
        }
        if self.min_events < 2 {
            return Err(Error::config(
                "corpus.min_events",
                "need at least one history event plus the target",
            ));
        }
        if self.max_events < self.min_events {
            return Err(Error::config("corpus.max_events", "must be >= min_events"));
        }
        if self.max_events > self.num_items {
            return Err(Error::config(
                "corpus.max_events",
                "users never repeat items, so this cannot exceed num_items",
            ));
        }
        if self.max_history == 0 || self.max_history > MAX_HISTORY {
            return Err(Error::config(
                "corpus.max_history",
                format!("must be in 1..={MAX_HISTORY}"),
            ));
        }
        if self.split.iter().any(|r| !(0.0..=1.0).contains(r))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "corpus.split",
                "ratios must lie in [0, 1] and sum to 1",
            ));
        }
        if self.category.is_empty() || !self.category.chars().all(|c| (' '..='~').contains(&c)) {
            return Err(Error::config("corpus.category", "must be non-empty printable ASCII"));
        }
        if !(self.choice_temperature > 0.0) {
            return Err(Error::config("corpus.choice_temperature", "must be positive"));
        }
        if !(self.item_noise >= 0.0) || !(self.rating_noise >= 0.0) {
            return Err(Error::config("corpus.item_noise", "noise scales must be >= 0"));
        }
        if self.max_prompt_tokens == 0 {
            return Err(Error::config("corpus.max_prompt_tokens", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: usize,
    pub title: String,
    pub attributes: Vec<(String, String)>,
}

impl Item {
    pub fn new(item_id: usize, attributes: Vec<(String, String)>) -> Self {
        let title = title_for(&attributes);
        Item {
            item_id,
            title,
            attributes,
        }
    }
}

/// Title shown in user histories: `"{mood} {genre} {era}"` when those keys
/// exist, otherwise all values joined by spaces.
pub fn title_for(attributes: &[(String, String)]) -> String {
    let get = |k: &str| attributes.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    match (get("mood"), get("genre"), get("era")) {
        (Some(m), Some(g), Some(e)) => format!("{m} {g} {e}"),
        _ => attributes
            .iter()
            .map(|(_, v)| v.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: usize,
    pub item_id: usize,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: usize,
    pub events: Vec<Interaction>,
    pub target: usize,
    /// Time of the held-out interaction; the "now" for rendering.
    pub target_timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub items: Vec<Item>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Item> {
        self.items.get(id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<UserHistory>,
    pub val: Vec<UserHistory>,
    pub test: Vec<UserHistory>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[UserHistory]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// A generated world. Latents are kept for oracle checks and are not part of
/// the serialized corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub catalog: Catalog,
    pub splits: Splits,
    pub user_latents: Vec<Vec<f64>>,
    pub item_latents: Vec<Vec<f64>>,
}

impl World {
    pub fn affinity(&self, user_id: usize, item_id: usize) -> f64 {
        dot(&self.user_latents[user_id], &self.item_latents[item_id])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut rng::Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Deterministic in `(config, seed)`.
pub fn generate_world(config: &CorpusConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let k = config.latent_dim;
    let mut rng = rng::stream(seed, &[label::WORLD]);

    let value_latents: Vec<Vec<Vec<f64>>> = ATTRIBUTES
        .iter()
        .map(|(_, values, weight)| {
            values
                .iter()
                .map(|_| gaussian_vec(&mut rng, k, *weight))
                .collect()
        })
        .collect();

    // Distinct attribute combinations, drawn without replacement.
    let combos: usize = ATTRIBUTES.iter().map(|a| a.1.len()).product();
    let mut codes: Vec<usize> = (0..combos).collect();
    codes.shuffle(&mut rng);
    codes.truncate(config.num_items);

    let mut items = Vec::with_capacity(config.num_items);
    let mut item_latents = Vec::with_capacity(config.num_items);
    for (item_id, mut code) in codes.into_iter().enumerate() {
        let mut attributes = Vec::with_capacity(ATTRIBUTES.len());
        let mut latent = gaussian_vec(&mut rng, k, config.item_noise);
        for (a, (key, values, _)) in ATTRIBUTES.iter().enumerate() {
            let j = code % values.len();
            code /= values.len();
            attributes.push((key.to_string(), values[j].to_string()));
            for (z, e) in latent.iter_mut().zip(&value_latents[a][j]) {
                *z += e;
            }
        }
        items.push(Item::new(item_id, attributes));
        item_latents.push(latent);
    }

    let gap = Exp::new(1.0 / (3.0 * 86_400.0)).expect("positive rate");
    let rating_noise = Normal::new(0.0, config.rating_noise.max(1e-12)).expect("finite");
    let mut user_latents = Vec::with_capacity(config.num_users);
    let mut histories = Vec::with_capacity(config.num_users);
    for user_id in 0..config.num_users {
        let u = gaussian_vec(&mut rng, k, 1.0);
        let affinity: Vec<f64> = item_latents.iter().map(|z| dot(&u, z)).collect();
        let mean = affinity.iter().sum::<f64>() / affinity.len() as f64;
        let std = (affinity.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
            / affinity.len() as f64)
            .sqrt()
            .max(1e-12);

        let n_events = rng.random_range(config.min_events..=config.max_events);
        let mut consumed = vec![false; config.num_items];
        let mut t: i64 = 1_600_000_000 + rng.random_range(0..10_000_000);
        let mut events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let item_id = choose(&affinity, &consumed, config.choice_temperature, &mut rng);
            consumed[item_id] = true;
            t += 1 + gap.sample(&mut rng) as i64;
            let mut noisy = 3.0 + 1.5 * (affinity[item_id] - mean) / std;
            if config.rating_noise > 0.0 {
                noisy += rating_noise.sample(&mut rng);
            }
            let rating = noisy.round().clamp(1.0, 5.0) as u8;
            events.push(Interaction {
                user_id,
                item_id,
                rating,
                timestamp: t,
            });
        }
        let last = events.pop().expect("min_events >= 2");
        let skip = events.len().saturating_sub(config.max_history);
        let history = UserHistory {
            user_id,
            events: events.split_off(skip),
            target: last.item_id,
            target_timestamp: last.timestamp,
        };
        let prompt = render_user_prompt(&history, &items, &config.category)?;
        if prompt.len() > config.max_prompt_tokens {
            return Err(Error::config(
                "corpus.max_prompt_tokens",
                format!(
                    "user {user_id} renders to {} tokens, above the limit {}",
                    prompt.len(),
                    config.max_prompt_tokens
                ),
            ));
        }
        user_latents.push(u);
        histories.push(history);
    }

    let n = histories.len();
    let n_train = (config.split[0] * n as f64).round() as usize;
    let n_val = ((config.split[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut splits = Splits::default();
    for (rank, &u) in order.iter().enumerate() {
        let bucket = if rank < n_train {
            &mut splits.train
        } else if rank < n_train + n_val {
            &mut splits.val
        } else {
            &mut splits.test
        };
        bucket.push(histories[u].clone());
    }
    for bucket in [&mut splits.train, &mut splits.val, &mut splits.test] {
        bucket.sort_by_key(|h| h.user_id);
    }

    Ok(World {
        catalog: Catalog { items },
        splits,
        user_latents,
        item_latents,
    })
}

fn choose(affinity: &[f64], consumed: &[bool], temperature: f64, rng: &mut rng::Rng) -> usize {
    let max = affinity
        .iter()
        .zip(consumed)
        .filter(|(_, &c)| !c)
        .map(|(a, _)| *a)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = affinity
        .iter()
        .zip(consumed)
        .map(|(a, &c)| if c { 0.0 } else { ((a - max) / temperature).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            if u < *w {
                return i;
            }
            u -= w;
        }
    }
    last
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

/// Writes `catalog.jsonl`, `train.jsonl`, `val.jsonl` and `test.jsonl`.
pub fn write_corpus(dir: &Path, catalog: &Catalog, splits: &Splits) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("catalog.jsonl"), &catalog.items)?;
    write_jsonl(&dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("val.jsonl"), &splits.val)?;
    write_jsonl(&dir.join("test.jsonl"), &splits.test)
}

pub fn read_corpus(dir: &Path) -> Result<(Catalog, Splits)> {
    let items: Vec<Item> = read_jsonl(&dir.join("catalog.jsonl"))?;
    for (i, item) in items.iter().enumerate() {
        if item.item_id != i {
            return Err(Error::InvalidArgument(format!(
                "catalog row {i} carries item_id {}",
                item.item_id
            )));
        }
    }
    let splits = Splits {
        train: read_jsonl(&dir.join("train.jsonl"))?,
        val: read_jsonl(&dir.join("val.jsonl"))?,
        test: read_jsonl(&dir.join("test.jsonl"))?,
    };
    Ok((Catalog { items }, splits))
}
