//! Lossy network with acknowledgments and a hard bound on consecutive losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PetcError, Result};

/// How delivery outcomes are produced.
#[derive(Debug, Clone)]
pub enum LossProcess {
    AlwaysDeliver,
    /// Each attempt is lost with probability `p`, except that a loss which
    /// would exceed the bound is turned into a delivery.
    Bernoulli { p: f64, seed: u64, rng: ChaCha8Rng },
    /// Fixed outcome per attempt; delivers unconditionally once exhausted.
    Trace { outcomes: Vec<bool>, cursor: usize, exhausted_warned: bool },
}

/// Network model: loss process plus the consecutive-loss counter.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    m: usize,
    process: LossProcess,
    consecutive_failures: usize,
    attempts: u64,
}

impl ChannelModel {
    pub fn always_deliver(m: usize) -> Self {
        ChannelModel { m, process: LossProcess::AlwaysDeliver, consecutive_failures: 0, attempts: 0 }
    }

    pub fn bernoulli(p: f64, m: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PetcError::Config(format!("loss probability must lie in [0, 1], got {p}")));
        }
        Ok(ChannelModel {
            m,
            process: LossProcess::Bernoulli { p, seed, rng: ChaCha8Rng::seed_from_u64(seed) },
            consecutive_failures: 0,
            attempts: 0,
        })
    }

    /// Validates a delivery trace against the loss bound.
    pub fn load_trace(outcomes: Vec<bool>, m: usize) -> Result<Self> {
        let mut run = 0usize;
        for (i, &ok) in outcomes.iter().enumerate() {
            run = if ok { 0 } else { run + 1 };
            if run > m {
                return Err(PetcError::Trace(format!(
                    "attempt {i} is loss number {run} in a row, bound is {m}"
                )));
            }
        }
        Ok(ChannelModel {
            m,
            process: LossProcess::Trace { outcomes, cursor: 0, exhausted_warned: false },
            consecutive_failures: 0,
            attempts: 0,
        })
    }

    /// Parses a trace file body: one `T`/`F` per attempt, whitespace ignored.
    pub fn parse_trace(text: &str) -> Result<Vec<bool>> {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .enumerate()
            .map(|(i, c)| match c {
                'T' => Ok(true),
                'F' => Ok(false),
                other => Err(PetcError::Trace(format!("invalid character {other:?} at position {i}"))),
            })
            .collect()
    }

    pub fn loss_bound(&self) -> usize {
        self.m
    }

    pub fn consecutive_failures(&self) -> usize {
        self.consecutive_failures
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn process(&self) -> &LossProcess {
        &self.process
    }

    /// One transmission attempt at sampling index `z`; returns whether it
    /// was delivered (and acknowledged).
    pub fn attempt(&mut self, z: usize) -> bool {
        self.attempts += 1;
        let forced = self.consecutive_failures >= self.m;
        let delivered = match &mut self.process {
            LossProcess::AlwaysDeliver => true,
            LossProcess::Bernoulli { p, rng, .. } => {
                // Draw unconditionally so the random stream does not depend
                // on the forcing.
                let lost = rng.gen::<f64>() < *p;
                !lost || forced
            }
            LossProcess::Trace { outcomes, cursor, exhausted_warned } => match outcomes.get(*cursor) {
                Some(&ok) => {
                    *cursor += 1;
                    ok
                }
                None => {
                    if !*exhausted_warned {
                        log::warn!("delivery trace exhausted at sampling index {z}; delivering from now on");
                        *exhausted_warned = true;
                    }
                    true
                }
            },
        };
        if delivered {
            self.consecutive_failures = 0;
        } else {
            self.consecutive_failures += 1;
        }
        debug_assert!(self.consecutive_failures <= self.m);
        delivered
    }
}
