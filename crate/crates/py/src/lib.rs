//! Python bindings: reward and advantage formulas, corpus generation, policy
//! inference and evaluation, and the command-line entry point.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use recpo::corpus::{self, CorpusConfig, PromptBank};
use recpo::eval::{self, EvalConfig, RewardSettings};
use recpo::model::{self, ItemEmbeddingTable, ModelConfig, PolicyParams, Pooling};
use recpo::reward;

fn to_py(e: recpo::Error) -> PyErr {
    match e {
        recpo::Error::Config { .. } | recpo::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_pooling(name: &str) -> PyResult<Pooling> {
    match name {
        "last" => Ok(Pooling::Last),
        "mean" => Ok(Pooling::Mean),
        "max" => Ok(Pooling::Max),
        _ => Err(PyValueError::new_err(format!("unknown pooling `{name}` (expected last, mean or max)"))),
    }
}

/// Single-target NDCG of a 1-based rank with cutoff `k`.
#[pyfunction]
fn ndcg_reward(rank: usize, k: usize) -> f64 {
    reward::ndcg_reward(rank, k)
}

/// `beta * r_c + (1 - beta) * r_d`.
#[pyfunction]
fn fuse(r_d: f64, r_c: f64, beta: f64) -> PyResult<f64> {
    reward::fuse(r_d, r_c, beta).map_err(to_py)
}

#[pyfunction]
fn grpo_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(reward::grpo_advantages(&rewards).map_err(to_py)?.advantages)
}

#[pyfunction]
fn rloo_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(reward::rloo_advantages(&rewards).map_err(to_py)?.advantages)
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
#[pyfunction]
fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    recpo::recpo::clipped_term(ratio, advantage, eps)
}

/// Softmax probability of `target` over `<h, row> / tau` for every table row.
#[pyfunction]
fn similarity_reward(h: Vec<f64>, table: Vec<Vec<f64>>, target: usize, tau: f64) -> PyResult<f64> {
    let d = h.len();
    if table.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("every table row must match the length of h"));
    }
    let flat: Vec<f64> = table.iter().flatten().copied().collect();
    let rows = Array2::from_shape_vec((table.len(), d), flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let t = ItemEmbeddingTable::new(rows, Pooling::Last);
    reward::similarity_reward(Array1::from(h).view(), &t, target, tau).map_err(to_py)
}

#[pyfunction]
fn tokenize(text: &str) -> PyResult<Vec<u32>> {
    Ok(corpus::tokenize(text).map_err(to_py)?.0)
}

#[pyfunction]
fn detokenize(tokens: Vec<u32>) -> PyResult<String> {
    corpus::detokenize(&corpus::TokenSequence(tokens)).map_err(to_py)
}

/// Runs the `recpo` command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv = std::iter::once("recpo".to_string()).chain(args);
    py.detach(|| recpo::cli::main_with_args(argv))
}

/// A synthetic catalog and its train/val/test users.
#[pyclass(module = "pyrecpo")]
struct Corpus {
    catalog: corpus::Catalog,
    splits: corpus::Splits,
    category: String,
}

impl Corpus {
    fn user(&self, split: &str, index: usize) -> PyResult<&corpus::UserHistory> {
        let users = self
            .splits
            .get(split)
            .ok_or_else(|| PyValueError::new_err(format!("unknown split `{split}`")))?;
        users
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("split `{split}` has {} users", users.len())))
    }
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    #[pyo3(signature = (num_items=500, num_users=1000, seed=0))]
    fn generate(num_items: usize, num_users: usize, seed: u64) -> PyResult<Self> {
        let cfg = CorpusConfig {
            num_items,
            num_users,
            ..CorpusConfig::default()
        };
        let world = corpus::generate_world(&cfg, seed).map_err(to_py)?;
        Ok(Corpus {
            catalog: world.catalog,
            splits: world.splits,
            category: cfg.category,
        })
    }

    /// Reads a corpus directory written by `save` or `recpo gen-data`.
    #[staticmethod]
    #[pyo3(signature = (path, category="album"))]
    fn load(path: PathBuf, category: &str) -> PyResult<Self> {
        let (catalog, splits) = corpus::read_corpus(&path).map_err(to_py)?;
        Ok(Corpus {
            catalog,
            splits,
            category: category.to_string(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        corpus::write_corpus(&path, &self.catalog, &self.splits).map_err(to_py)
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.catalog.len()
    }

    fn split_sizes(&self) -> HashMap<&'static str, usize> {
        HashMap::from([
            ("train", self.splits.train.len()),
            ("val", self.splits.val.len()),
            ("test", self.splits.test.len()),
        ])
    }

    fn titles(&self) -> Vec<String> {
        self.catalog.items.iter().map(|i| i.title.clone()).collect()
    }

    fn user_prompt(&self, split: &str, index: usize) -> PyResult<String> {
        corpus::user_prompt_text(self.user(split, index)?, &self.catalog.items, &self.category).map_err(to_py)
    }

    fn target(&self, split: &str, index: usize) -> PyResult<usize> {
        Ok(self.user(split, index)?.target)
    }
}

/// Policy parameters plus an item table built under them.
#[pyclass(module = "pyrecpo")]
struct Policy {
    params: PolicyParams<f32>,
    pooling: Pooling,
    table: Option<(usize, ItemEmbeddingTable<f32>)>,
}

impl Policy {
    /// The cached table, rebuilt when the catalog size changes.
    fn table_for(&mut self, c: &Corpus) -> PyResult<(&PolicyParams<f32>, &ItemEmbeddingTable<f32>, PromptBank)> {
        let bank = PromptBank::new(&c.catalog.items, &c.category).map_err(to_py)?;
        let stale = !matches!(&self.table, Some((n, _)) if *n == c.catalog.len());
        if stale {
            let t = eval::refresh_item_embeddings(&self.params, &bank, self.pooling, None).map_err(to_py)?;
            self.table = Some((c.catalog.len(), t));
        }
        let (_, table) = self.table.as_ref().expect("table built above");
        Ok((&self.params, table, bank))
    }
}

#[pymethods]
impl Policy {
    #[new]
    #[pyo3(signature = (layers=4, heads=4, width=64, ff_width=256, seed=0, pooling="last"))]
    fn new(layers: usize, heads: usize, width: usize, ff_width: usize, seed: u64, pooling: &str) -> PyResult<Self> {
        let cfg = ModelConfig {
            layers,
            heads,
            width,
            ff_width,
            ..ModelConfig::default()
        };
        Ok(Policy {
            params: PolicyParams::init(&cfg, seed).map_err(to_py)?,
            pooling: parse_pooling(pooling)?,
            table: None,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, header) = model::load_checkpoint(&path).map_err(to_py)?;
        Ok(Policy {
            params,
            pooling: header.pooling,
            table: None,
        })
    }

    fn save(&self, path: PathBuf, step: usize) -> PyResult<()> {
        model::save_checkpoint(&path, &self.params, step, self.pooling).map_err(to_py)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    /// Greedy reasoning for one user, then the top-`k` item ids.
    #[pyo3(signature = (corpus, split, index, k=10, budget=8))]
    fn recommend(&mut self, corpus: &Corpus, split: &str, index: usize, k: usize, budget: usize) -> PyResult<(Vec<usize>, String)> {
        let user = corpus.user(split, index)?.clone();
        let (params, table, bank) = self.table_for(corpus)?;
        let prompt = bank.user_prompt(&user, &corpus.catalog.items).map_err(to_py)?;
        let rec = eval::recommend(params, table, &prompt, k, budget).map_err(to_py)?;
        Ok((rec.items, corpus::detokenize(&rec.trajectory.reasoning).map_err(to_py)?))
    }

    /// HR@K and NDCG@K for K in 5, 10, 20 plus the mean fused reward.
    #[pyo3(signature = (corpus, split="val", budget=8, max_users=0))]
    fn evaluate(&mut self, corpus: &Corpus, split: &str, budget: usize, max_users: usize) -> PyResult<HashMap<String, f64>> {
        let users = corpus
            .splits
            .get(split)
            .ok_or_else(|| PyValueError::new_err(format!("unknown split `{split}`")))?
            .to_vec();
        let cfg = EvalConfig {
            reasoning_budget: budget,
            max_users,
            split: split.to_string(),
            ..EvalConfig::default()
        };
        let settings = RewardSettings {
            ndcg_cutoff: 1000,
            beta: 0.05,
            tau_sim: 0.1,
        };
        let (params, table, bank) = self.table_for(corpus)?;
        let report = eval::evaluate(params, table, &bank, &corpus.catalog, &users, &cfg, settings, true).map_err(to_py)?;
        let mut out = HashMap::from([("mean_fused_reward".to_string(), report.mean_fused_reward)]);
        for (k, v) in &report.hit_rate {
            out.insert(format!("hr@{k}"), *v);
        }
        for (k, v) in &report.ndcg {
            out.insert(format!("ndcg@{k}"), *v);
        }
        Ok(out)
    }
}

#[pymodule]
fn pyrecpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ndcg_reward, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(rloo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_term, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_reward, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(detokenize, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Corpus>()?;
    m.add_class::<Policy>()?;
    Ok(())
}
