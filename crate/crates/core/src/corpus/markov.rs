//! First-order Markov source with known conditionals, used as an oracle
//! corpus: every quantity a trained model estimates has an exact reference.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::rng::{pick_weighted, stream_rng, Stream};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovOracle {
    tokens: Vec<String>,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn check_distribution(p: &[f64], row: usize) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic { row, sum });
    }
    Ok(())
}

impl MarkovOracle {
    pub fn new(tokens: Vec<String>, transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = tokens.len();
        if n == 0 || transition.len() != n || initial.len() != n || transition.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid(format!("oracle needs {n} tokens, an {n}x{n} transition and length-{n} initial")));
        }
        let oracle = MarkovOracle {
            tokens,
            transition,
            initial,
        };
        oracle.validate()?;
        Ok(oracle)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.transition.iter().enumerate() {
            check_distribution(row, i)?;
        }
        check_distribution(&self.initial, usize::MAX)
    }

    /// Rows drawn from a symmetric Dirichlet(`concentration`); the chain
    /// starts in its stationary distribution. Tokens are `w00`, `w01`, ….
    pub fn random(states: usize, concentration: f64, seed: u64) -> Result<Self> {
        if states == 0 || concentration <= 0.0 {
            return Err(Error::Invalid("need states ≥ 1 and concentration > 0".into()));
        }
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = stream_rng(seed, Stream::Corpus, &[0x6f72_6163]);
        let transition = (0..states)
            .map(|_| {
                let raw: Vec<f64> = (0..states).map(|_| gamma.sample(&mut rng).max(1e-300)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let tokens = (0..states).map(|i| format!("w{i:02}")).collect();
        let mut oracle = MarkovOracle {
            tokens,
            transition,
            initial: vec![1.0 / states as f64; states],
        };
        oracle.initial = oracle.stationary();
        let s: f64 = oracle.initial.iter().sum();
        oracle.initial.iter_mut().for_each(|p| *p /= s);
        oracle.validate()?;
        Ok(oracle)
    }

    pub fn states(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    fn step(&self, dist: &[f64]) -> Vec<f64> {
        let n = self.states();
        let mut next = vec![0.0; n];
        for (a, &pa) in dist.iter().enumerate() {
            for (b, nb) in next.iter_mut().enumerate() {
                *nb += pa * self.transition[a][b];
            }
        }
        next
    }

    /// Stationary distribution by power iteration on the lazy chain `(P + I)/2`,
    /// which shares the stationary vector and is aperiodic.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.states();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..1_000_000 {
            let stepped = self.step(&pi);
            let next: Vec<f64> = pi.iter().zip(&stepped).map(|(a, b)| 0.5 * (a + b)).collect();
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Marginal distribution of the token at word index `j`.
    pub fn marginal(&self, j: usize) -> Vec<f64> {
        let mut d = self.initial.clone();
        for _ in 0..j {
            d = self.step(&d);
        }
        d
    }

    /// `H(X_t | X_{t−1})` under the stationary distribution.
    pub fn conditional_entropy(&self) -> f64 {
        self.stationary()
            .iter()
            .zip(&self.transition)
            .map(|(p, row)| p * entropy(row))
            .sum()
    }

    /// Exact conditional of a token given whichever neighbours are observed.
    /// `prior` is the token's marginal, used only when `prev` is absent.
    pub fn posterior(&self, prev: Option<usize>, next: Option<usize>, prior: &[f64]) -> Vec<f64> {
        let n = self.states();
        let mut q: Vec<f64> = (0..n)
            .map(|x| {
                let left = match prev {
                    Some(a) => self.transition[a][x],
                    None => prior[x],
                };
                let right = next.map_or(1.0, |c| self.transition[x][c]);
                left * right
            })
            .collect();
        let s: f64 = q.iter().sum();
        if s > 0.0 {
            q.iter_mut().for_each(|v| *v /= s);
        }
        q
    }

    /// `H(X_j | X_{j−1}, X_{j+1})` for word index `j` of a length-`n` sequence.
    pub fn blanket_entropy_at(&self, j: usize, n: usize) -> f64 {
        let states = self.states();
        let prior = self.marginal(j);
        let prev_marg = if j > 0 { self.marginal(j - 1) } else { vec![] };
        let has_next = j + 1 < n;
        let mut h = 0.0;
        let lefts: Vec<Option<usize>> = if j > 0 { (0..states).map(Some).collect() } else { vec![None] };
        let rights: Vec<Option<usize>> = if has_next { (0..states).map(Some).collect() } else { vec![None] };
        for &a in &lefts {
            for &c in &rights {
                // P(prev = a, next = c) = Σ_x P(a) T[a,x] T[x,c]
                let joint: f64 = (0..states)
                    .map(|x| {
                        let left = a.map_or(prior[x], |a| prev_marg[a] * self.transition[a][x]);
                        let right = c.map_or(1.0, |c| self.transition[x][c]);
                        left * right
                    })
                    .sum();
                if joint > 0.0 {
                    h += joint * entropy(&self.posterior(a, c, &prior));
                }
            }
        }
        h
    }

    /// Information-theoretic floor for predicting a uniformly chosen word
    /// position of a length-`n` sequence from all other tokens.
    pub fn entropy_floor(&self, n: usize) -> f64 {
        (0..n).map(|j| self.blanket_entropy_at(j, n)).sum::<f64>() / n as f64
    }

    /// Entropy of the position-averaged token distribution of length-`n`
    /// sequences (what a context-free unigram model achieves).
    pub fn unigram_entropy(&self, n: usize) -> f64 {
        let mut avg = vec![0.0; self.states()];
        let mut d = self.initial.clone();
        for _ in 0..n {
            for (a, p) in avg.iter_mut().zip(&d) {
                *a += p / n as f64;
            }
            d = self.step(&d);
        }
        entropy(&avg)
    }

    /// Vocabulary ids of the oracle's states.
    pub fn vocab_ids(&self, vocab: &Vocab) -> Result<Vec<u32>> {
        self.tokens
            .iter()
            .map(|t| vocab.get(t).ok_or_else(|| Error::Invalid(format!("oracle token {t:?} missing from vocabulary"))))
            .collect()
    }

    pub fn state_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Sample `num_seqs` space-separated documents of `seq_len` tokens.
    pub fn generate(&self, num_seqs: usize, seq_len: usize, seed: u64) -> Result<Vec<String>> {
        self.validate()?;
        if num_seqs == 0 || seq_len == 0 {
            return Err(Error::Invalid("num_seqs and seq_len must be ≥ 1".into()));
        }
        let mut rng = stream_rng(seed, Stream::Corpus, &[]);
        let mut docs = Vec::with_capacity(num_seqs);
        for _ in 0..num_seqs {
            let mut doc = String::with_capacity(seq_len * 4);
            let mut state = pick_weighted(self.initial.iter().copied(), rng.gen::<f64>());
            for t in 0..seq_len {
                if t > 0 {
                    state = pick_weighted(self.transition[state].iter().copied(), rng.gen::<f64>());
                    doc.push(' ');
                }
                doc.push_str(&self.tokens[state]);
            }
            docs.push(doc);
        }
        Ok(docs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "order 1");
        let _ = writeln!(s, "states {}", self.states());
        let _ = writeln!(s, "tokens {}", self.tokens.join(" "));
        let _ = writeln!(s, "initial {}", join(&self.initial));
        let _ = writeln!(s, "transition");
        for row in &self.transition {
            let _ = writeln!(s, "{}", join(row));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("oracle file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| bad(&format!("expected {name}, found {line:?}")))?;
            Ok(rest.trim().to_string())
        };
        if field("order")? != "1" {
            return Err(bad("only order 1 is supported"));
        }
        let states: usize = field("states")?.parse().map_err(|_| bad("states"))?;
        let tokens: Vec<String> = field("tokens")?.split_whitespace().map(str::to_string).collect();
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(&format!("bad number {x:?}"))))
                .collect()
        };
        let initial = floats(&field("initial")?)?;
        field("transition")?;
        let transition = lines.take(states).map(floats).collect::<Result<Vec<_>>>()?;
        if tokens.len() != states || transition.len() != states {
            return Err(bad("state count does not match contents"));
        }
        Self::new(tokens, transition, initial)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
