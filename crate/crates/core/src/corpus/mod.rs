//! Synthetic corpus: world generation, prompt templates and tokenization.

pub mod prompt;
pub mod tokenizer;
pub mod world;

pub use prompt::{
    format_time_delta, item_prompt_header, item_prompt_text, user_prompt_text, PromptBank, render_item_prompt, render_user_prompt,
    user_prompt_header,
};
pub use tokenizer::{detokenize, tokenize, TokenSequence, Vocabulary, ANSWER_OPEN, VOCAB_SIZE};
pub use world::{
    generate_world, read_corpus, write_corpus, Catalog, CorpusConfig, Interaction, Item, Splits,
    UserHistory, World,
};
