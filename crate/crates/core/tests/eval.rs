//! Evaluation metrics on hand-built fixtures against a brute-force pipeline
//! that re-runs the full model on every prefix without any caching.

use recpo::corpus::{tokenize, Catalog, Interaction, Item, PromptBank, UserHistory, ANSWER_OPEN};
use recpo::eval::{evaluate, metrics_from_ranks, refresh_item_embeddings, top_k_items, EvalConfig, RewardSettings};
use recpo::model::{forward, ModelConfig, PolicyParams, Pooling};

fn attrs(genre: &str, mood: &str, era: &str) -> Vec<(String, String)> {
    vec![
        ("genre".into(), genre.into()),
        ("mood".into(), mood.into()),
        ("era".into(), era.into()),
    ]
}

fn fixture_catalog() -> Catalog {
    let genres = ["rock", "jazz", "folk", "soul"];
    let moods = ["calm", "dark", "wild"];
    let items = (0..12)
        .map(|i| Item::new(i, attrs(genres[i % 4], moods[i % 3], ["70s", "90s"][i / 6])))
        .collect();
    Catalog { items }
}

/// Ten users with short hand-written histories and targets.
fn fixture_users() -> Vec<UserHistory> {
    let histories: [(&[usize], usize); 10] = [
        (&[0, 4], 8),
        (&[1, 5, 9], 2),
        (&[3], 7),
        (&[2, 6, 10], 11),
        (&[11, 0], 4),
        (&[5, 5], 1),
        (&[7, 8, 9], 10),
        (&[6], 3),
        (&[9, 1], 0),
        (&[4, 10, 2], 6),
    ];
    histories
        .iter()
        .enumerate()
        .map(|(u, (events, target))| UserHistory {
            user_id: u,
            events: events
                .iter()
                .enumerate()
                .map(|(j, &item_id)| Interaction {
                    user_id: u,
                    item_id,
                    rating: 1 + ((u + j) % 5) as u8,
                    timestamp: 1_600_000_000 + 3_600 * (j as i64) + 100 * u as i64,
                })
                .collect(),
            target: *target,
            target_timestamp: 1_600_100_000,
        })
        .collect()
}

fn fixture_params() -> PolicyParams<f64> {
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        width: 16,
        ff_width: 32,
        max_context: 576,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    PolicyParams::init(&cfg, 11).unwrap()
}

fn argmax_first(row: ndarray::ArrayView1<f64>) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy reasoning by full re-forwarding; returns the final hidden state.
fn oracle_final_hidden(params: &PolicyParams<f64>, prompt: &[u32], budget: usize) -> (Vec<f64>, usize) {
    let mut seq = prompt.to_vec();
    for _ in 0..budget {
        let (_, logits) = forward(params, &seq).unwrap();
        let next = argmax_first(logits.row(seq.len() - 1));
        if next == ANSWER_OPEN {
            break;
        }
        seq.push(next);
    }
    let (hidden, _) = forward(params, &seq).unwrap();
    (hidden.row(seq.len() - 1).to_vec(), seq.len() - prompt.len())
}

fn oracle_item_embedding(params: &PolicyParams<f64>, prompt: &[u32], pooling: Pooling) -> Vec<f64> {
    let (hidden, _) = forward(params, prompt).unwrap();
    let n = hidden.nrows();
    (0..hidden.ncols())
        .map(|j| {
            let col = hidden.column(j);
            match pooling {
                Pooling::Last => col[n - 1],
                Pooling::Mean => col.sum() / n as f64,
                Pooling::Max => col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

fn oracle_metrics(ranks: &[usize], k: usize) -> (f64, f64) {
    let n = ranks.len() as f64;
    let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
    let gain: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    (hits / n, gain / n)
}

#[test]
fn hand_ranks_give_hand_metrics() {
    let ranks = [1, 2, 3, 5, 6, 10, 11, 20, 21, 500];
    let (hr, ndcg) = metrics_from_ranks(&ranks, &[5, 10, 20]);
    assert_eq!(hr[&5], 0.4);
    assert_eq!(hr[&10], 0.6);
    assert_eq!(hr[&20], 0.8);
    let at5 = (1.0 + 1.0 / 3f64.log2() + 0.5 + 1.0 / 6f64.log2()) / 10.0;
    assert!((ndcg[&5] - at5).abs() < 1e-15);
    for k in [5, 10, 20] {
        let (h, g) = oracle_metrics(&ranks, k);
        assert_eq!(hr[&k], h);
        assert!((ndcg[&k] - g).abs() < 1e-15);
    }
}

fn check_fixture(pooling: Pooling, budget: usize) {
    let params = fixture_params();
    let catalog = fixture_catalog();
    let users = fixture_users();
    let bank = PromptBank::new(&catalog.items, "album").unwrap();
    let table = refresh_item_embeddings(&params, &bank, pooling, None).unwrap();
    let cfg = EvalConfig {
        reasoning_budget: budget,
        split: "val".into(),
        ..EvalConfig::default()
    };
    let reward = RewardSettings { ndcg_cutoff: 1000, beta: 0.05, tau_sim: 0.1 };
    let report = evaluate(&params, &table, &bank, &catalog, &users, &cfg, reward, true).unwrap();

    let embeddings: Vec<Vec<f64>> = bank
        .item_prompts
        .iter()
        .map(|p| oracle_item_embedding(&params, p.as_slice(), pooling))
        .collect();
    let mut ranks = Vec::new();
    for u in &users {
        let text = recpo::corpus::user_prompt_text(u, &catalog.items, "album").unwrap();
        let prompt = tokenize(&text).unwrap();
        let (h, _) = oracle_final_hidden(&params, prompt.as_slice(), budget);
        let scores: Vec<f64> = embeddings.iter().map(|e| e.iter().zip(&h).map(|(a, b)| a * b).sum()).collect();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        ranks.push(order.iter().position(|&v| v == u.target).unwrap() + 1);
    }
    assert_eq!(report.users, 10);
    for &k in &cfg.ks {
        let (hr, ndcg) = oracle_metrics(&ranks, k);
        assert_eq!(report.hit_rate[&k], hr, "HR@{k}");
        assert!((report.ndcg[&k] - ndcg).abs() < 1e-15, "NDCG@{k}");
    }
    assert!(report.hit_rate[&5] <= report.hit_rate[&10]);
    assert!(report.hit_rate[&10] <= report.hit_rate[&20]);
}

#[test]
fn evaluate_matches_brute_force_without_reasoning() {
    check_fixture(Pooling::Last, 0);
}

#[test]
fn evaluate_matches_brute_force_with_reasoning() {
    check_fixture(Pooling::Mean, 3);
    check_fixture(Pooling::Max, 2);
}

#[test]
fn stale_table_is_rejected_in_strict_mode() {
    let mut params = fixture_params();
    let catalog = fixture_catalog();
    let bank = PromptBank::new(&catalog.items, "album").unwrap();
    let table = refresh_item_embeddings(&params, &bank, Pooling::Last, None).unwrap();
    params.version += 1;
    let cfg = EvalConfig { reasoning_budget: 0, ..EvalConfig::default() };
    let reward = RewardSettings { ndcg_cutoff: 1000, beta: 0.05, tau_sim: 0.1 };
    let err = evaluate(&params, &table, &bank, &catalog, &fixture_users(), &cfg, reward, true).unwrap_err();
    assert!(err.to_string().contains("stale"));
}

#[test]
fn top_k_is_sorted_prefix_of_full_ranking() {
    let scores = ndarray::array![0.3, -1.0, 2.0, 0.3, 5.0, 0.0];
    assert_eq!(top_k_items(&scores, 4), vec![4, 2, 0, 3]);
}
