use crate::error::{Error, Result};

pub const BASELINE_INIT: f64 = 0.5;

/// Exponential moving averages of observed rewards, used as the
/// action-independent baseline `b`.
#[derive(Clone, Debug, PartialEq)]
pub enum BaselineState {
    /// One value for whole-response rewards.
    Scalar(f64),
    /// One value per response position for per-prefix rewards.
    PerPosition { values: Vec<f64>, counts: Vec<u64> },
}

impl BaselineState {
    pub fn scalar() -> Self {
        BaselineState::Scalar(BASELINE_INIT)
    }

    pub fn per_position(max_len: usize) -> Self {
        BaselineState::PerPosition {
            values: vec![BASELINE_INIT; max_len],
            counts: vec![0; max_len],
        }
    }

    /// Baselines for a response of `len` steps.
    pub fn values_for(&self, len: usize) -> Vec<f64> {
        match self {
            BaselineState::Scalar(b) => vec![*b; len],
            BaselineState::PerPosition { values, .. } => (0..len)
                .map(|t| values.get(t).copied().unwrap_or(BASELINE_INIT))
                .collect(),
        }
    }

    /// `b ← decay·b + (1 − decay)·reward`, per position for `PerPosition`.
    /// A scalar baseline takes exactly one reward.
    pub fn update(&mut self, rewards: &[f64], decay: f64) -> Result<()> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("baseline decay {decay} outside (0, 1)")));
        }
        match self {
            BaselineState::Scalar(b) => {
                let [r] = rewards else {
                    return Err(Error::invalid("scalar baseline takes one reward"));
                };
                *b = decay * *b + (1.0 - decay) * r;
            }
            BaselineState::PerPosition { values, counts } => {
                if rewards.len() > values.len() {
                    values.resize(rewards.len(), BASELINE_INIT);
                    counts.resize(rewards.len(), 0);
                }
                for (t, &r) in rewards.iter().enumerate() {
                    values[t] = decay * values[t] + (1.0 - decay) * r;
                    counts[t] += 1;
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`BaselineState::update`].
pub fn baseline_update(state: &BaselineState, rewards: &[f64], decay: f64) -> Result<BaselineState> {
    let mut next = state.clone();
    next.update(rewards, decay)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_arithmetic() {
        let b = baseline_update(&BaselineState::Scalar(0.0), &[1.0], 0.9).unwrap();
        match b {
            BaselineState::Scalar(v) => assert!((v - 0.1).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn reward_equal_to_baseline_is_a_fixed_point() {
        let b = baseline_update(&BaselineState::Scalar(0.37), &[0.37], 0.95).unwrap();
        assert_eq!(b, BaselineState::Scalar(0.37));
    }

    #[test]
    fn unobserved_positions_stay_at_init() {
        let mut b = BaselineState::per_position(5);
        b.update(&[0.9, 0.1], 0.5).unwrap();
        let v = b.values_for(5);
        assert_eq!(&v[..2], &[0.7, 0.3]);
        assert!(v[2..].iter().all(|&x| x == BASELINE_INIT));
        b.update(&[1.0; 7], 0.5).unwrap();
        assert_eq!(b.values_for(7)[6], 0.75);
    }

    #[test]
    fn rejects_bad_decay_and_arity() {
        let mut b = BaselineState::scalar();
        assert!(b.update(&[1.0], 1.0).is_err());
        assert!(b.update(&[1.0, 0.0], 0.9).is_err());
    }
}
