//! User and item prompt templates.

use super::tokenizer::{tokenize, TokenSequence, ANSWER_CLOSE_TEXT, ANSWER_OPEN_TEXT};
use super::world::{Item, UserHistory};
use crate::error::{Error, Result};

/// Fixed instruction block that opens every user prompt.
pub fn user_prompt_header(category: &str) -> String {
    format!(
        "Analyze in depth and finally recommend next {category} I might purchase inside the answer tags.\n\
         For example, {ANSWER_OPEN_TEXT} a product {ANSWER_CLOSE_TEXT}.\n\
         Below is my historical {category} purchases and ratings (out of 5):\n"
    )
}

/// Fixed instruction block that opens every item prompt.
pub fn item_prompt_header(category: &str) -> String {
    format!(
        "Summarize key attributes of the following {category} inside {ANSWER_OPEN_TEXT} and {ANSWER_CLOSE_TEXT}:\n"
    )
}

/// Largest two units among days, hours and minutes. The leading unit is an
/// integer, the trailing one is truncated to one decimal.
pub fn format_time_delta(seconds: i64) -> String {
    let s = seconds.max(0);
    let tenth = |x: f64| (x * 10.0).floor() / 10.0;
    if s >= 86_400 {
        let days = s / 86_400;
        format!("{days}d {:.1}h", tenth((s - days * 86_400) as f64 / 3600.0))
    } else if s >= 3600 {
        let hours = s / 3600;
        format!("{hours}h {:.1}min", tenth((s - hours * 3600) as f64 / 60.0))
    } else {
        format!("{:.1}min", tenth(s as f64 / 60.0))
    }
}

pub fn user_prompt_text(history: &UserHistory, items: &[Item], category: &str) -> Result<String> {
    if history.events.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut text = user_prompt_header(category);
    for e in &history.events {
        let item = items.get(e.item_id).ok_or_else(|| {
            Error::InvalidArgument(format!("history references unknown item {}", e.item_id))
        })?;
        text.push_str(&format!(
            "{} ago: [{}] ({})\n",
            format_time_delta(history.target_timestamp - e.timestamp),
            item.title,
            e.rating
        ));
    }
    Ok(text)
}

/// Renders with "now" set to the target timestamp.
pub fn render_user_prompt(
    history: &UserHistory,
    items: &[Item],
    category: &str,
) -> Result<TokenSequence> {
    tokenize(&user_prompt_text(history, items, category)?)
}

pub fn item_prompt_text(item: &Item, category: &str) -> String {
    let mut text = item_prompt_header(category);
    for (k, v) in &item.attributes {
        text.push_str(&format!("{k}: {v}\n"));
    }
    text
}

pub fn render_item_prompt(item: &Item, category: &str) -> Result<TokenSequence> {
    tokenize(&item_prompt_text(item, category))
}

/// Tokenized prompt material for one catalog: both shared headers and every
/// item prompt, indexed by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub category: String,
    pub user_header: TokenSequence,
    pub item_header: TokenSequence,
    pub item_prompts: Vec<TokenSequence>,
}

impl PromptBank {
    pub fn new(items: &[Item], category: &str) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            if item.item_id != i {
                return Err(Error::InvalidArgument(format!(
                    "catalog position {i} holds item id {}",
                    item.item_id
                )));
            }
        }
        Ok(PromptBank {
            category: category.to_string(),
            user_header: tokenize(&user_prompt_header(category))?,
            item_header: tokenize(&item_prompt_header(category))?,
            item_prompts: items
                .iter()
                .map(|it| render_item_prompt(it, category))
                .collect::<Result<_>>()?,
        })
    }

    pub fn user_prompt(&self, history: &UserHistory, items: &[Item]) -> Result<TokenSequence> {
        render_user_prompt(history, items, &self.category)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenizer::{detokenize, ANSWER_OPEN};
    use crate::corpus::world::Interaction;

    fn item(id: usize, vals: [&str; 3]) -> Item {
        Item::new(
            id,
            vec![
                ("genre".into(), vals[0].into()),
                ("mood".into(), vals[1].into()),
                ("era".into(), vals[2].into()),
            ],
        )
    }

    fn history() -> (UserHistory, Vec<Item>) {
        let items = vec![item(0, ["jazz", "calm", "70s"]), item(1, ["rock", "wild", "80s"])];
        let now = 1_000_000;
        let h = UserHistory {
            user_id: 3,
            events: vec![
                Interaction {
                    user_id: 3,
                    item_id: 0,
                    rating: 4,
                    timestamp: now - 90_000,
                },
                Interaction {
                    user_id: 3,
                    item_id: 1,
                    rating: 2,
                    timestamp: now - 600,
                },
            ],
            target: 1,
            target_timestamp: now,
        };
        (h, items)
    }

    #[test]
    fn time_delta_format() {
        assert_eq!(format_time_delta(90_000), "1d 1.0h");
        assert_eq!(format_time_delta(255 * 86_400 + 13 * 3600 + 720), "255d 13.2h");
        assert_eq!(format_time_delta(7200 + 90), "2h 1.5min");
        assert_eq!(format_time_delta(600), "10.0min");
        assert_eq!(format_time_delta(86_399), "23h 59.9min");
    }

    #[test]
    fn user_prompt_lines() {
        let (h, items) = history();
        let text = user_prompt_text(&h, &items, "album").unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[3].starts_with("1d 1.0h ago:"));
        assert_eq!(lines[3], "1d 1.0h ago: [calm jazz 70s] (4)");
        assert_eq!(lines[4], "10.0min ago: [wild rock 80s] (2)");
    }

    #[test]
    fn user_prompt_deterministic_with_one_answer_open() {
        let (h, items) = history();
        let a = render_user_prompt(&h, &items, "album").unwrap();
        let b = render_user_prompt(&h, &items, "album").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.iter().filter(|&&t| t == ANSWER_OPEN).count(), 1);
        assert!(a.starts_with(&tokenize(&user_prompt_header("album")).unwrap()));
        assert_eq!(
            detokenize(&a).unwrap(),
            user_prompt_text(&h, &items, "album").unwrap()
        );
    }

    #[test]
    fn empty_history_rejected() {
        let (mut h, items) = history();
        h.events.clear();
        assert!(matches!(
            render_user_prompt(&h, &items, "album"),
            Err(Error::EmptyPrompt)
        ));
    }

    #[test]
    fn item_prompt_has_one_line_per_attribute() {
        let it = item(0, ["jazz", "calm", "70s"]);
        let a = render_item_prompt(&it, "album").unwrap();
        assert_eq!(a, render_item_prompt(&it, "album").unwrap());
        let text = detokenize(&a).unwrap();
        let body: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(body, vec!["genre: jazz", "mood: calm", "era: 70s"]);
        let other = item(0, ["jazz", "calm", "80s"]);
        assert_ne!(a, render_item_prompt(&other, "album").unwrap());
    }
}
