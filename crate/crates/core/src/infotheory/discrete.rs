use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Latent-conditioned order-1 Markov text generator.
///
/// `z ~ prior`, `x_1 ~ initial[z]`, `x_{t+1} ~ transition[z][x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSequenceModel {
    latent_size: usize,
    vocab_size: usize,
    prior: Vec<f64>,
    initial: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
    horizon: usize,
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::Dimension(format!("{what}: {} entries, expected {len}", p.len())));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Contract(format!("{what}: entries must be finite and non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::Contract(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteSequenceModel {
    pub fn new(
        prior: Vec<f64>,
        initial: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        horizon: usize,
    ) -> Result<Self> {
        let latent_size = prior.len();
        if latent_size == 0 {
            return Err(Error::Dimension("latent space must have at least one value".into()));
        }
        let vocab_size = initial.first().map_or(0, Vec::len);
        if vocab_size < 2 {
            return Err(Error::Dimension(format!("vocabulary of {vocab_size}; need at least 2")));
        }
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        check_distribution(&prior, latent_size, "prior")?;
        if initial.len() != latent_size || transition.len() != latent_size {
            return Err(Error::Dimension(format!(
                "initial/transition give {}/{} latent rows, prior has {latent_size}",
                initial.len(),
                transition.len()
            )));
        }
        for (z, row) in initial.iter().enumerate() {
            check_distribution(row, vocab_size, &format!("initial[{z}]"))?;
        }
        for (z, mat) in transition.iter().enumerate() {
            if mat.len() != vocab_size {
                return Err(Error::Dimension(format!("transition[{z}] has {} rows, expected {vocab_size}", mat.len())));
            }
            for (x, row) in mat.iter().enumerate() {
                check_distribution(row, vocab_size, &format!("transition[{z}][{x}]"))?;
            }
        }
        Ok(Self { latent_size, vocab_size, prior, initial, transition, horizon })
    }

    pub fn latent_size(&self) -> usize {
        self.latent_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn initial(&self, z: usize) -> &[f64] {
        &self.initial[z]
    }

    pub fn transition(&self, z: usize, from: usize) -> &[f64] {
        &self.transition[z][from]
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Draws `z` and a length-`len` sequence.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> (usize, Vec<usize>) {
        let z = sample_index(rng, &self.prior);
        (z, self.sample_given(rng, z, len))
    }

    /// Draws a length-`len` sequence conditioned on latent `z`.
    pub fn sample_given<R: Rng + ?Sized>(&self, rng: &mut R, z: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut x = sample_index(rng, &self.initial[z]);
        out.push(x);
        for _ in 1..len {
            x = sample_index(rng, &self.transition[z][x]);
            out.push(x);
        }
        out
    }

    /// Tokens i.i.d. uniform over `vocab_size`, one latent value.
    pub fn iid_uniform(vocab_size: usize, horizon: usize) -> Result<Self> {
        let u = vec![1.0 / vocab_size as f64; vocab_size];
        Self::new(vec![1.0], vec![u.clone()], vec![vec![u; vocab_size]], horizon)
    }

    /// Two latent values that fix the first token with probability 0.95;
    /// afterwards a latent-independent chain keeps the previous token with
    /// probability 0.9. Visual information decays while the text memory
    /// stays, so the alignment ratio shrinks with position.
    pub fn strong_memory(horizon: usize) -> Result<Self> {
        let stay = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        Self::new(vec![0.5, 0.5], vec![vec![0.95, 0.05], vec![0.05, 0.95]], vec![stay.clone(), stay], horizon)
    }

    /// The first token copies a uniform bit `z`; later tokens are fair coin
    /// flips independent of everything.
    pub fn copy_channel(horizon: usize) -> Result<Self> {
        let u = vec![0.5, 0.5];
        Self::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![u.clone(), u.clone()], vec![u.clone(), u]],
            horizon,
        )
    }

    /// Built-in model by name: `iid-uniform`, `strong-memory`, `copy-channel`.
    pub fn builtin(name: &str, horizon: usize) -> Result<Self> {
        match name {
            "iid-uniform" => Self::iid_uniform(2, horizon),
            "strong-memory" => Self::strong_memory(horizon),
            "copy-channel" => Self::copy_channel(horizon),
            other => Err(Error::Parse(format!("unknown builtin model '{other}'"))),
        }
    }

    pub const BUILTINS: [&'static str; 3] = ["iid-uniform", "strong-memory", "copy-channel"];

    /// Random model with every probability at least `floor / size`-ish
    /// above zero, hence strictly positive conditional entropies.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        latent_size: usize,
        vocab_size: usize,
        horizon: usize,
        floor: f64,
    ) -> Result<Self> {
        let mut dist = |n: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        };
        let prior = dist(latent_size);
        let initial = (0..latent_size).map(|_| dist(vocab_size)).collect();
        let transition = (0..latent_size).map(|_| (0..vocab_size).map(|_| dist(vocab_size)).collect()).collect();
        Self::new(prior, initial, transition, horizon)
    }

    /// Parses the TOML model description documented in the README.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            horizon: Option<usize>,
            prior: Vec<f64>,
            initial: Vec<Vec<f64>>,
            transition: Vec<Vec<Vec<f64>>>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(raw.prior, raw.initial, raw.transition, raw.horizon.unwrap_or(8))
    }

    pub fn to_toml(&self) -> String {
        fn row(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", items.join(", "))
        }
        let mut s = format!("horizon = {}\nprior = {}\ninitial = [\n", self.horizon, row(&self.prior));
        for r in &self.initial {
            s.push_str(&format!("  {},\n", row(r)));
        }
        s.push_str("]\ntransition = [\n");
        for m in &self.transition {
            s.push_str("  [\n");
            for r in m {
                s.push_str(&format!("    {},\n", row(r)));
            }
            s.push_str("  ],\n");
        }
        s.push_str("]\n");
        s
    }
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Round-off can leave acc slightly below 1; fall back to the last
    // index with positive mass.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}
