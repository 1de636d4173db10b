//! Variable-structure learning automaton with a linear reward/penalty scheme.
//!
//! The automaton keeps a probability vector over its `r` actions. A favorable
//! response to action `i` applies the reward update
//!
//! ```text
//! p_i <- p_i + a (1 - p_i)
//! p_j <- (1 - a) p_j              j != i
//! ```
//!
//! and an unfavorable response applies the penalty update
//!
//! ```text
//! p_i <- (1 - b) p_i
//! p_j <- b / (r - 1) + (1 - b) p_j    j != i
//! ```
//!
//! Both maps keep the vector on the probability simplex.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Learning rates and the favorable-response threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningParams<T> {
    /// Reward rate `a`, in (0, 1].
    pub lambda_reward: T,
    /// Penalty rate `b`, in [0, 1).
    pub lambda_penalty: T,
    /// A normalized score at or above this value is a favorable response.
    pub threshold: T,
}

impl<T: Scalar> Default for LearningParams<T> {
    fn default() -> Self {
        Self {
            lambda_reward: T::of(0.8),
            lambda_penalty: T::of(0.05),
            threshold: T::of(0.5),
        }
    }
}

impl<T: Scalar> LearningParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reward > T::zero() && self.lambda_reward <= T::one()) {
            return Err(Error::Validation(format!(
                "lambda_reward must be in (0,1], got {}",
                self.lambda_reward
            )));
        }
        if !(self.lambda_penalty >= T::zero() && self.lambda_penalty < T::one()) {
            return Err(Error::Validation(format!(
                "lambda_penalty must be in [0,1), got {}",
                self.lambda_penalty
            )));
        }
        if !(self.threshold > T::zero() && self.threshold < T::one()) {
            return Err(Error::Validation(format!(
                "threshold must be in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// When to stop iterating an automaton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergencePolicy {
    pub prob_threshold: f64,
    pub stall_window: usize,
    pub stall_epsilon: f64,
    pub max_iterations: u64,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        Self {
            prob_threshold: 0.95,
            stall_window: 20,
            stall_epsilon: 1e-6,
            max_iterations: 500,
        }
    }
}

impl ConvergencePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob_threshold > 0.5 && self.prob_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "prob_threshold must be in (0.5,1], got {}",
                self.prob_threshold
            )));
        }
        if self.stall_window == 0 {
            return Err(Error::Validation("stall_window must be positive".into()));
        }
        if !(self.stall_epsilon >= 0.0) {
            return Err(Error::Validation(format!(
                "stall_epsilon must be non-negative, got {}",
                self.stall_epsilon
            )));
        }
        if self.max_iterations == 0 || self.max_iterations < self.stall_window as u64 {
            return Err(Error::Validation(format!(
                "max_iterations ({}) must be positive and >= stall_window ({})",
                self.max_iterations, self.stall_window
            )));
        }
        Ok(())
    }
}

/// Outcome of a convergence check. Every terminal variant carries an action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceStatus {
    Running,
    ConvergedByProbability(usize),
    ConvergedByStall(usize),
    StoppedAtLimit(usize),
}

impl ConvergenceStatus {
    pub fn action(&self) -> Option<usize> {
        match *self {
            ConvergenceStatus::Running => None,
            ConvergenceStatus::ConvergedByProbability(a)
            | ConvergenceStatus::ConvergedByStall(a)
            | ConvergenceStatus::StoppedAtLimit(a) => Some(a),
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, ConvergenceStatus::Running)
    }
}

/// Action-probability vector plus the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Automaton<T> {
    probs: Vec<T>,
    iterations: u64,
}

impl<T: Scalar> Automaton<T> {
    /// Uniform automaton over `r` actions.
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidArgument(
                "automaton needs at least one action".into(),
            ));
        }
        let p = T::one() / T::of_usize(r);
        Ok(Self {
            probs: vec![p; r],
            iterations: 0,
        })
    }

    /// Automaton with an explicit state. `probs` must lie on the simplex
    /// (sum within 1e-9 of one, entries in [0,1]).
    pub fn from_probs(probs: Vec<T>, iterations: u64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument(
                "automaton needs at least one action".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::InvalidArgument(
                "probabilities must lie in [0,1]".into(),
            ));
        }
        let sum = probs.iter().fold(T::zero(), |acc, &p| acc + p);
        let tol = T::of(1e-9).max(T::epsilon() * T::of_usize(4 * probs.len()));
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(Self { probs, iterations })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn best_action(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> T {
        self.probs[self.best_action()]
    }

    /// Draw an action with probability `probs[i]`.
    pub fn select_action<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = T::of(rng.gen::<f64>());
        let mut acc = T::zero();
        for (i, &p) in self.probs.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                return i;
            }
        }
        // Rounding left the cumulative sum just below u; fall back to the
        // last action with positive mass.
        self.probs
            .iter()
            .rposition(|&p| p > T::zero())
            .unwrap_or(self.probs.len() - 1)
    }

    /// Reward update for action `i` with rate `rate`.
    pub fn reward(&mut self, i: usize, rate: T) -> Result<()> {
        self.check_index(i)?;
        let keep = T::one() - rate;
        for (j, p) in self.probs.iter_mut().enumerate() {
            *p = if j == i {
                clamp_unit(*p + rate * (T::one() - *p))
            } else {
                clamp_unit(keep * *p)
            };
        }
        self.iterations += 1;
        Ok(())
    }

    /// Penalty update for action `i` with rate `rate`. A single-action
    /// automaton has nowhere to move mass, so this is a no-op there.
    pub fn penalize(&mut self, i: usize, rate: T) -> Result<()> {
        self.check_index(i)?;
        let r = self.probs.len();
        if r == 1 {
            return Ok(());
        }
        let keep = T::one() - rate;
        let spread = rate / T::of_usize(r - 1);
        for (j, p) in self.probs.iter_mut().enumerate() {
            *p = if j == i {
                clamp_unit(keep * *p)
            } else {
                clamp_unit(spread + keep * *p)
            };
        }
        self.iterations += 1;
        Ok(())
    }

    /// Apply the reward or penalty update depending on whether `score`
    /// reaches the favorable threshold.
    pub fn respond(&mut self, i: usize, score: T, params: &LearningParams<T>) -> Result<bool> {
        let favorable = score >= params.threshold;
        if favorable {
            self.reward(i, params.lambda_reward)?;
        } else {
            self.penalize(i, params.lambda_penalty)?;
        }
        Ok(favorable)
    }

    /// Evaluate the stop rules in order: probability, stall, iteration limit.
    pub fn check_convergence(
        &self,
        rho_history: &[T],
        policy: &ConvergencePolicy,
    ) -> ConvergenceStatus {
        let best = self.best_action();
        if self.probs[best].as_f64() >= policy.prob_threshold {
            return ConvergenceStatus::ConvergedByProbability(best);
        }
        let w = policy.stall_window;
        if w > 0 && rho_history.len() >= w {
            let recent = &rho_history[rho_history.len() - w..];
            let (lo, hi) = recent
                .iter()
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                });
            if (hi - lo).as_f64() < policy.stall_epsilon {
                return ConvergenceStatus::ConvergedByStall(best);
            }
        }
        if self.iterations >= policy.max_iterations {
            return ConvergenceStatus::StoppedAtLimit(best);
        }
        ConvergenceStatus::Running
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.probs.len() {
            return Err(Error::InvalidArgument(format!(
                "action {i} out of range for {} actions",
                self.probs.len()
            )));
        }
        Ok(())
    }
}

fn clamp_unit<T: Scalar>(p: T) -> T {
    p.max(T::zero()).min(T::one())
}
