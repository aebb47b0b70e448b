//! Corpus handling: byte-level tokenization of raw files, a deterministic
//! train/held-out split, seeded window sampling, and a synthetic corpus
//! generator that mixes token difficulties (some spans are predictable,
//! some require recall or computation), which gives an adaptive-depth
//! model something worth spending extra steps on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::tokenizer::{self, TOKEN_BOS};

/// Tokenized corpus split deterministically into train and held-out parts.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<u32>,
    pub held_out: Vec<u32>,
    /// Fraction of tokens held out, as configured.
    pub held_out_fraction: f64,
}

/// Byte-tokenizes `bytes` and splits off the trailing `held_out_fraction`
/// of tokens. The boundary is a pure function of the input length.
pub fn load_corpus(bytes: &[u8], held_out_fraction: f64) -> Result<Corpus> {
    if !(0.0..1.0).contains(&held_out_fraction) {
        return Err(CoreError::Config(format!(
            "held-out fraction {held_out_fraction} must lie in [0, 1)"
        )));
    }
    let ids = tokenizer::tokenize(bytes);
    if ids.is_empty() {
        return Err(CoreError::Data("corpus is empty".into()));
    }
    let train_len = ((ids.len() as f64) * (1.0 - held_out_fraction)).floor() as usize;
    let train_len = train_len.clamp(1, ids.len());
    let (train, held) = ids.split_at(train_len);
    Ok(Corpus {
        train: train.to_vec(),
        held_out: held.to_vec(),
        held_out_fraction,
    })
}

/// Seeded sampler of fixed-length training windows. Each window is
/// `[BOS, t₀, …, t_{len−2}]` for a uniformly chosen corpus offset, so every
/// window supervises `len − 1` next-token predictions.
pub struct WindowSampler {
    rng: ChaCha20Rng,
    window_len: usize,
}

impl WindowSampler {
    pub fn new(seed: u64, window_len: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(CoreError::Config(format!(
                "window length {window_len} leaves nothing to supervise"
            )));
        }
        Ok(Self { rng: ChaCha20Rng::seed_from_u64(seed), window_len })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// One window over `data`; needs at least `window_len − 1` tokens.
    pub fn sample(&mut self, data: &[u32]) -> Result<Vec<u32>> {
        let body = self.window_len - 1;
        if data.len() < body {
            return Err(CoreError::Data(format!(
                "corpus of {} tokens cannot fill a window of {}",
                data.len(),
                self.window_len
            )));
        }
        let max_offset = data.len() - body;
        let offset = self.rng.gen_range(0..=max_offset);
        let mut window = Vec::with_capacity(self.window_len);
        window.push(TOKEN_BOS);
        window.extend_from_slice(&data[offset..offset + body]);
        Ok(window)
    }

    /// `batch_size` independent windows.
    pub fn batch(&mut self, data: &[u32], batch_size: usize) -> Result<Vec<Vec<u32>>> {
        (0..batch_size).map(|_| self.sample(data)).collect()
    }

    /// Consecutive non-overlapping windows covering a prefix of `data`,
    /// for evaluation: deterministic, no sampling. The trailing window may
    /// be shorter than `window_len` so that no token is left unscored.
    pub fn sequential_windows(data: &[u32], window_len: usize, max_windows: usize) -> Vec<Vec<u32>> {
        let body = window_len.saturating_sub(1);
        if body == 0 {
            return Vec::new();
        }
        data.chunks(body)
            .take(max_windows)
            .map(|c| {
                let mut w = Vec::with_capacity(c.len() + 1);
                w.push(TOKEN_BOS);
                w.extend_from_slice(c);
                w
            })
            .collect()
    }
}

/// Deterministic mixed-difficulty corpus: line-oriented ASCII combining
/// multi-digit addition (answers demand computation), key-value recall
/// (answers demand lookups), a skewed random-word stream, and literal
/// repeats (nearly free to predict). Output is at least `target_bytes`
/// long, newline-terminated.
pub fn synthetic_corpus(seed: u64, target_bytes: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let words = [
        "tide", "stone", "ember", "wool", "marsh", "glint", "rook", "fen",
        "alder", "brine", "crag", "down", "eyrie", "frost", "gorse", "heath",
    ];
    let mut out = Vec::with_capacity(target_bytes + 128);
    while out.len() < target_bytes {
        match rng.gen_range(0..4u8) {
            0 => {
                // Addition with enough digits that carries matter.
                let a: u32 = rng.gen_range(10..1000);
                let b: u32 = rng.gen_range(10..1000);
                out.extend_from_slice(format!("{a}+{b}={};", a + b).as_bytes());
            }
            1 => {
                // Bind a handful of keys, then query one of them.
                let n = rng.gen_range(2..5usize);
                let mut pairs = Vec::with_capacity(n);
                for _ in 0..n {
                    let k: u8 = rng.gen_range(0..26);
                    let v: u16 = rng.gen_range(10..100);
                    pairs.push((k, v));
                    out.extend_from_slice(
                        format!("{}{}={} ", (b'a' + k) as char, pairs.len(), v).as_bytes(),
                    );
                }
                let (qi, &(k, v)) = {
                    let i = rng.gen_range(0..pairs.len());
                    (i, &pairs[i])
                };
                out.extend_from_slice(
                    format!("?{}{}={};", (b'a' + k) as char, qi + 1, v).as_bytes(),
                );
            }
            2 => {
                // Skewed word stream: low-index words dominate.
                let n = rng.gen_range(4..9usize);
                for i in 0..n {
                    let pick = rng.gen_range(0..words.len() * 2);
                    let w = words[pick.min(words.len() - 1)];
                    if i > 0 {
                        out.push(b' ');
                    }
                    out.extend_from_slice(w.as_bytes());
                }
                out.push(b';');
            }
            _ => {
                // Literal repeats of a short chunk.
                let w = words[rng.gen_range(0..words.len())];
                let times = rng.gen_range(3..6usize);
                for _ in 0..times {
                    out.extend_from_slice(w.as_bytes());
                }
                out.push(b';');
            }
        }
        if rng.gen_bool(0.25) {
            out.push(b'\n');
        }
    }
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_ratioed() {
        let bytes: Vec<u8> = (0..1000u32).map(|i| (i % 251) as u8).collect();
        let a = load_corpus(&bytes, 0.1).unwrap();
        let b = load_corpus(&bytes, 0.1).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.held_out, b.held_out);
        assert_eq!(a.train.len(), 900);
        assert_eq!(a.held_out.len(), 100);
        assert_eq!(a.train.len() + a.held_out.len(), 1000);
    }

    #[test]
    fn rejects_empty_and_bad_fractions() {
        assert_eq!(load_corpus(&[], 0.1).unwrap_err().category(), "data");
        assert_eq!(load_corpus(b"abc", 1.0).unwrap_err().category(), "config");
        assert_eq!(load_corpus(b"abc", -0.5).unwrap_err().category(), "config");
    }

    #[test]
    fn windows_start_with_bos_and_are_reproducible() {
        let corpus = load_corpus(&synthetic_corpus(3, 4096), 0.1).unwrap();
        let mut s1 = WindowSampler::new(42, 17).unwrap();
        let mut s2 = WindowSampler::new(42, 17).unwrap();
        for _ in 0..25 {
            let w1 = s1.sample(&corpus.train).unwrap();
            let w2 = s2.sample(&corpus.train).unwrap();
            assert_eq!(w1, w2);
            assert_eq!(w1.len(), 17);
            assert_eq!(w1[0], TOKEN_BOS);
            assert!(w1[1..].iter().all(|&t| t < 256));
        }
        let mut s3 = WindowSampler::new(43, 17).unwrap();
        let w3 = s3.sample(&corpus.train).unwrap();
        let w1 = s1.sample(&corpus.train).unwrap();
        assert_ne!(w1, w3, "different seeds should explore different offsets");
    }

    #[test]
    fn window_bounds_are_enforced() {
        assert!(WindowSampler::new(1, 1).is_err());
        let mut s = WindowSampler::new(1, 10).unwrap();
        let short = vec![1u32; 5];
        assert_eq!(s.sample(&short).unwrap_err().category(), "data");
        let exact = vec![2u32; 9];
        let w = s.sample(&exact).unwrap();
        assert_eq!(&w[1..], &exact[..]);
    }

    #[test]
    fn sequential_windows_tile_without_overlap() {
        let data: Vec<u32> = (0..100).map(|i| i % 256).collect();
        let ws = WindowSampler::sequential_windows(&data, 11, 5);
        assert_eq!(ws.len(), 5);
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w[0], TOKEN_BOS);
            assert_eq!(&w[1..], &data[i * 10..(i + 1) * 10]);
        }
        // A trailing partial chunk becomes a shorter final window.
        let ws = WindowSampler::sequential_windows(&data, 31, 100);
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[3].len(), 11);
        assert_eq!(ws[3][0], TOKEN_BOS);
        assert_eq!(&ws[3][1..], &data[90..]);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_ascii() {
        let a = synthetic_corpus(7, 10_000);
        let b = synthetic_corpus(7, 10_000);
        assert_eq!(a, b);
        assert!(a.len() >= 10_000);
        assert!(a.iter().all(|&c| c == b'\n' || (0x20..0x7f).contains(&c)));
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains('+') && text.contains('=') && text.contains('?'));
        let c = synthetic_corpus(8, 10_000);
        assert_ne!(text.as_bytes(), &c[..]);
    }
}
