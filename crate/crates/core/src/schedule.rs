//! Two-phase activation of the relative terms: ReL1 from the start, ReL2 once
//! the windowed ReL1 mean stops improving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard for the relative-improvement denominator.
pub const IMPROVEMENT_EPS: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Adv,
    Tl,
    Rel1,
    Rel2,
}

/// Set of loss terms allowed into the generator total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTerms {
    pub adv: bool,
    pub tl: bool,
    pub rel1: bool,
    pub rel2: bool,
}

impl ActiveTerms {
    pub const ALL: ActiveTerms = ActiveTerms {
        adv: true,
        tl: true,
        rel1: true,
        rel2: true,
    };

    pub fn contains(&self, term: LossTerm) -> bool {
        match term {
            LossTerm::Adv => self.adv,
            LossTerm::Tl => self.tl,
            LossTerm::Rel1 => self.rel1,
            LossTerm::Rel2 => self.rel2,
        }
    }

    pub fn without(mut self, term: LossTerm) -> Self {
        match term {
            LossTerm::Adv => self.adv = false,
            LossTerm::Tl => self.tl = false,
            LossTerm::Rel1 => self.rel1 = false,
            LossTerm::Rel2 => self.rel2 = false,
        }
        self
    }

    pub fn tags(&self) -> Vec<LossTerm> {
        [LossTerm::Adv, LossTerm::Tl, LossTerm::Rel1, LossTerm::Rel2]
            .into_iter()
            .filter(|t| self.contains(*t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "TL_REL1")]
    TlRel1,
    #[serde(rename = "TL_REL1_REL2")]
    TlRel1Rel2,
}

/// Windowed stagnation test: a window is stagnant when the relative drop of
/// its mean against the previous window's mean is below `delta`; ReL2 starts
/// after `patience` consecutive stagnant windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagnationRule {
    pub window: usize,
    pub delta: f64,
    pub patience: usize,
}

impl Default for StagnationRule {
    fn default() -> Self {
        StagnationRule {
            window: 200,
            delta: 0.01,
            patience: 3,
        }
    }
}

impl StagnationRule {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("/rule/window", "must be at least 2"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::config("/rule/delta", "must be finite and > 0"));
        }
        if self.patience < 1 {
            return Err(Error::config("/rule/patience", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    /// Observations of the window in progress.
    pub window: Vec<f64>,
    pub prev_window_mean: Option<f64>,
    pub windows_stagnant: usize,
    /// Number of observations so far.
    pub step: u64,
    pub transition_step: Option<u64>,
}

impl Default for PhaseState {
    fn default() -> Self {
        Self::new()
    }
}

impl PhaseState {
    pub fn new() -> Self {
        PhaseState {
            phase: Phase::TlRel1,
            window: Vec::new(),
            prev_window_mean: None,
            windows_stagnant: 0,
            step: 0,
            transition_step: None,
        }
    }

    /// Record one ReL1 value. Returns the step number if this observation
    /// triggered the (single) transition.
    pub fn observe(&mut self, value: f64, rule: &StagnationRule) -> Result<Option<u64>> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NonFinite {
                term: format!("rel1 observation {value}"),
            });
        }
        self.step += 1;
        self.window.push(value);
        if self.window.len() < rule.window {
            return Ok(None);
        }

        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.window.clear();
        if let Some(prev) = self.prev_window_mean {
            let improvement = (prev - mean) / prev.max(IMPROVEMENT_EPS);
            if improvement < rule.delta {
                self.windows_stagnant += 1;
            } else {
                self.windows_stagnant = 0;
            }
        }
        self.prev_window_mean = Some(mean);

        if self.phase == Phase::TlRel1 && self.windows_stagnant >= rule.patience {
            self.phase = Phase::TlRel1Rel2;
            self.transition_step = Some(self.step);
            return Ok(Some(self.step));
        }
        Ok(None)
    }

    pub fn active_terms(&self) -> ActiveTerms {
        ActiveTerms {
            adv: true,
            tl: true,
            rel1: true,
            rel2: self.phase == Phase::TlRel1Rel2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feed(values: impl IntoIterator<Item = f64>, rule: &StagnationRule) -> PhaseState {
        let mut s = PhaseState::new();
        for v in values {
            s.observe(v, rule).unwrap();
        }
        s
    }

    #[test]
    fn constant_stream_transitions_after_baseline_plus_patience_windows() {
        let rule = StagnationRule::default();
        let mut s = PhaseState::new();
        let mut fired = None;
        for _ in 0..2000 {
            if let Some(step) = s.observe(0.7, &rule).unwrap() {
                assert!(fired.is_none());
                fired = Some(step);
            }
        }
        assert_eq!(fired, Some(800));
        assert_eq!(s.transition_step, Some(800));
    }

    #[test]
    fn halving_windows_never_transition() {
        let rule = StagnationRule::default();
        let s = feed((0..10_000).map(|i| 0.5f64.powi((i / 200) as i32)), &rule);
        assert_eq!(s.phase, Phase::TlRel1);
    }

    #[test]
    fn transition_is_monotone() {
        let rule = StagnationRule {
            window: 2,
            delta: 0.01,
            patience: 1,
        };
        let mut s = feed([1.0, 1.0, 1.0, 1.0], &rule);
        assert_eq!(s.phase, Phase::TlRel1Rel2);
        for i in 0..20 {
            s.observe(1.0 / (i + 2) as f64, &rule).unwrap();
        }
        assert_eq!(s.phase, Phase::TlRel1Rel2);
        assert_eq!(s.transition_step, Some(4));
    }

    #[test]
    fn active_terms_follow_phase() {
        let mut s = PhaseState::new();
        assert_eq!(s.active_terms().tags(), vec![LossTerm::Adv, LossTerm::Tl, LossTerm::Rel1]);
        assert_eq!(s.active_terms(), s.active_terms());
        s.phase = Phase::TlRel1Rel2;
        assert_eq!(s.active_terms(), ActiveTerms::ALL);
    }

    #[test]
    fn nan_is_rejected() {
        let mut s = PhaseState::new();
        assert!(s.observe(f64::NAN, &StagnationRule::default()).is_err());
        assert_eq!(s.step, 0);
    }

    #[test]
    fn rule_validation() {
        assert!(StagnationRule { window: 1, ..Default::default() }.validate().is_err());
        assert!(StagnationRule { delta: 0.0, ..Default::default() }.validate().is_err());
        assert!(StagnationRule { patience: 0, ..Default::default() }.validate().is_err());
        assert!(StagnationRule::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn at_most_one_transition_and_replay_is_deterministic(
            values in proptest::collection::vec(0.0f64..10.0, 0..400),
            window in 2usize..10,
            patience in 1usize..4,
        ) {
            let rule = StagnationRule { window, delta: 0.05, patience };
            let mut a = PhaseState::new();
            let mut fired = 0;
            for &v in &values {
                if a.observe(v, &rule).unwrap().is_some() {
                    fired += 1;
                }
            }
            prop_assert!(fired <= 1);
            let b = feed(values.iter().copied(), &rule);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn truncating_patience_windows_undoes_the_transition(
            values in proptest::collection::vec(0.0f64..10.0, 0..600),
            window in 2usize..8,
            patience in 1usize..4,
        ) {
            let rule = StagnationRule { window, delta: 0.05, patience };
            let full = feed(values.iter().copied(), &rule);
            if let Some(step) = full.transition_step {
                // No lookahead: the prefix before the P windows that closed at
                // the transition cannot have transitioned.
                let cut = step as usize - patience * window;
                let prefix = feed(values[..cut].iter().copied(), &rule);
                prop_assert_eq!(prefix.phase, Phase::TlRel1);
            }
        }
    }
}
