//! Shared test support: deterministic synthetic corpus and observation
//! streams.

// Each integration-test binary compiles this module and uses a subset.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use artbp::dynsys::{ObservedStep, StepValue};
use artbp::rng::stream_rng;

/// Common English words; sampled with a Zipf-like bias so the synthetic
/// text has realistic repetition for a character model to learn.
const WORDS: &[&str] = &[
    "the", "of", "and", "to", "a", "in", "is", "it", "you", "that", "he", "was", "for", "on",
    "are", "with", "as", "his", "they", "be", "at", "one", "have", "this", "from", "or", "had",
    "by", "word", "but", "what", "some", "we", "can", "out", "other", "were", "all", "there",
    "when", "up", "use", "your", "how", "said", "an", "each", "she", "which", "do", "their",
    "time", "if", "will", "way", "about", "many", "then", "them", "write", "would", "like", "so",
    "these", "her", "long", "make", "thing", "see", "him", "two", "has", "look", "more", "day",
    "could", "go", "come", "did", "number", "sound", "no", "most", "people", "my", "over",
    "know", "water", "than", "call", "first", "who", "may", "down", "side", "been", "now",
    "find", "any", "new", "work", "part", "take", "get", "place", "made", "live", "where",
    "after", "back", "little", "only", "round", "man", "year", "came", "show", "every", "good",
    "me", "give", "our", "under", "name", "very", "through", "just", "form", "sentence",
    "great", "think", "say", "help", "low", "line", "differ", "turn", "cause", "much", "mean",
    "before", "move", "right", "boy", "old", "too", "same", "tell", "does", "set", "three",
    "want", "air", "well", "also", "play", "small", "end", "put", "home", "read", "hand",
    "port", "large", "spell", "add", "even", "land", "here", "must", "big", "high", "such",
    "follow", "act", "why", "ask", "men", "change", "went", "light", "kind", "off", "need",
    "house", "picture", "try", "us", "again", "animal", "point", "mother", "world", "near",
    "build", "self", "earth", "father",
];

/// Deterministic English-like text of at least `target_chars` characters:
/// Zipf-sampled words, sentence punctuation, lines wrapped near 70 columns.
pub fn synthetic_corpus(seed: u64, target_chars: usize) -> String {
    let mut rng: ChaCha8Rng = stream_rng(seed, 0);
    let weights: Vec<f64> = (0..WORDS.len()).map(|i| 1.0 / (i as f64 + 1.0).powf(0.85)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc / total);
    }
    let pick = |rng: &mut ChaCha8Rng| -> &'static str {
        let u: f64 = rng.gen();
        let idx = cumulative.partition_point(|&c| c < u);
        WORDS[idx.min(WORDS.len() - 1)]
    };

    let mut text = String::with_capacity(target_chars + 128);
    let mut column = 0usize;
    while text.len() < target_chars {
        let sentence_len = rng.gen_range(4..=11);
        for i in 0..sentence_len {
            let word = pick(&mut rng);
            if column + word.len() + 1 > 70 {
                text.push('\n');
                column = 0;
            } else if column > 0 {
                text.push(' ');
                column += 1;
            }
            text.push_str(word);
            column += word.len();
            if i == sentence_len - 1 {
                text.push('.');
                column += 1;
            }
        }
    }
    text.push('\n');
    text
}

/// Constant-target observation stream for the influence balancing system.
pub fn ib_observed(n: usize) -> Vec<ObservedStep> {
    (0..n)
        .map(|_| ObservedStep {
            input: StepValue::empty(),
            target: StepValue::Vector(vec![1.0]),
        })
        .collect()
}

/// Random dense observations for a tanh RNN.
pub fn rnn_observed(n: usize, n_in: usize, n_out: usize, seed: u64) -> Vec<ObservedStep> {
    let mut rng = stream_rng(seed, artbp::rng::streams::DATA);
    (0..n)
        .map(|_| ObservedStep {
            input: StepValue::Vector((0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            target: StepValue::Vector((0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        })
        .collect()
}

/// Random token observations for the LSTM character model.
pub fn token_observed(n: usize, vocab: usize, seed: u64) -> Vec<ObservedStep> {
    let mut rng = stream_rng(seed, artbp::rng::streams::DATA);
    (0..n)
        .map(|_| ObservedStep {
            input: StepValue::Token(rng.gen_range(0..vocab)),
            target: StepValue::Token(rng.gen_range(0..vocab)),
        })
        .collect()
}
