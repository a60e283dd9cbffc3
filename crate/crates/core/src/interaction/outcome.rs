use serde::{Deserialize, Serialize};

use crate::kinematics::JointState;
use crate::{Error, Result};

/// Arrow-of-Time class of an executed (or predicted) action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Aot {
    /// Moves the state back toward the reference state.
    Backward,
    /// No significant change.
    Still,
    /// Moves the state away from the reference state.
    Forward,
}

impl Aot {
    pub const ALL: [Aot; 3] = [Aot::Backward, Aot::Still, Aot::Forward];

    pub fn value(self) -> i8 {
        match self {
            Aot::Backward => -1,
            Aot::Still => 0,
            Aot::Forward => 1,
        }
    }

    /// Position of this class in a three-way probability vector.
    pub fn class_index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_class_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl From<Aot> for i8 {
    fn from(a: Aot) -> i8 {
        a.value()
    }
}

impl TryFrom<i8> for Aot {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Aot::Backward),
            0 => Ok(Aot::Still),
            1 => Ok(Aot::Forward),
            other => Err(format!("AoT label must be -1, 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionOutcome {
    pub r_dist: f64,
    pub gamma: f64,
    pub r_aot: Aot,
}

/// Per-coordinate scaling used for distances and dot products. Objects whose
/// joints share one threshold keep native units with that threshold; mixed
/// thresholds divide each coordinate by its own and compare against 1.
fn scaling(deltas: &[f64]) -> (Vec<f64>, f64) {
    let homogeneous = deltas.windows(2).all(|w| w[0] == w[1]);
    match (homogeneous, deltas.first()) {
        (true, Some(&d)) => (vec![1.0; deltas.len()], d),
        (true, None) => (Vec::new(), 1.0),
        (false, _) => (deltas.iter().map(|d| 1.0 / d).collect(), 1.0),
    }
}

fn check_dims(deltas: &[f64], states: &[&JointState]) -> Result<()> {
    for s in states {
        if s.len() != deltas.len() {
            return Err(Error::Shape {
                expected: deltas.len(),
                got: s.len(),
            });
        }
    }
    Ok(())
}

/// Distance, history dot product and AoT class of one executed step.
pub fn compute_outcome(
    deltas: &[f64],
    j_init: &JointState,
    j_prev: &JointState,
    j_curr: &JointState,
) -> Result<InteractionOutcome> {
    check_dims(deltas, &[j_init, j_prev, j_curr])?;
    let (scale, threshold) = scaling(deltas);
    let mut r2 = 0.0;
    let mut gamma = 0.0;
    for i in 0..deltas.len() {
        let step = (j_curr[i] - j_prev[i]) * scale[i];
        let hist = (j_prev[i] - j_init[i]) * scale[i];
        r2 += step * step;
        gamma += step * hist;
    }
    let r_dist = r2.sqrt();
    let r_aot = if r_dist <= threshold {
        Aot::Still
    } else if gamma < 0.0 {
        Aot::Backward
    } else {
        Aot::Forward
    };
    Ok(InteractionOutcome {
        r_dist,
        gamma,
        r_aot,
    })
}

/// Euclidean distance after dividing every coordinate by its threshold.
pub fn normalized_distance(deltas: &[f64], a: &JointState, b: &JointState) -> Result<f64> {
    check_dims(deltas, &[a, b])?;
    Ok(deltas
        .iter()
        .enumerate()
        .map(|(i, d)| ((a[i] - b[i]) / d).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn js(v: &[f64]) -> JointState {
        JointState::new(v.to_vec())
    }

    #[test]
    fn forward_step() {
        let o = compute_outcome(&[0.15], &js(&[0.0]), &js(&[0.2]), &js(&[0.4])).unwrap();
        assert!((o.r_dist - 0.2).abs() < 1e-12);
        assert!((o.gamma - 0.04).abs() < 1e-12);
        assert_eq!(o.r_aot, Aot::Forward);
    }

    #[test]
    fn backward_step() {
        let o = compute_outcome(&[0.15], &js(&[0.0]), &js(&[0.2]), &js(&[0.0])).unwrap();
        assert!((o.r_dist - 0.2).abs() < 1e-12);
        assert!((o.gamma + 0.04).abs() < 1e-12);
        assert_eq!(o.r_aot, Aot::Backward);
    }

    #[test]
    fn first_step_has_zero_history() {
        let o = compute_outcome(&[0.15], &js(&[0.1]), &js(&[0.1]), &js(&[0.3])).unwrap();
        assert_eq!(o.gamma, 0.0);
        assert_eq!(o.r_aot, Aot::Forward);
        let o = compute_outcome(&[0.15], &js(&[0.1]), &js(&[0.1]), &js(&[-0.1])).unwrap();
        assert_eq!(o.r_aot, Aot::Forward);
    }

    #[test]
    fn small_steps_are_still() {
        let o = compute_outcome(&[0.15], &js(&[0.0]), &js(&[0.2]), &js(&[0.35])).unwrap();
        assert_eq!(o.r_aot, Aot::Still);
    }

    #[test]
    fn mixed_kinds_are_normalized() {
        // 0.1 m on a 0.15 m joint plus 0.1 rad on a 0.3 rad joint: 0.745 < 1
        let d = [0.15, 0.3];
        let o = compute_outcome(&d, &js(&[0.0, 0.0]), &js(&[0.0, 0.0]), &js(&[0.1, 0.1])).unwrap();
        let expect = ((0.1f64 / 0.15).powi(2) + (0.1f64 / 0.3).powi(2)).sqrt();
        assert!((o.r_dist - expect).abs() < 1e-12);
        assert_eq!(o.r_aot, Aot::Still);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            compute_outcome(&[0.15], &js(&[0.0]), &js(&[0.0, 1.0]), &js(&[0.0])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn aot_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Aot::Backward).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Aot>("1").unwrap(), Aot::Forward);
        assert!(serde_json::from_str::<Aot>("2").is_err());
    }

    proptest! {
        /// Same-sign steps are forward, opposite-sign steps backward, once the
        /// state has left its start and the step is significant.
        #[test]
        fn direction_law(j0 in -1.0f64..1.0, h in 0.01f64..1.0, hsign in prop::bool::ANY,
                         d in 0.1501f64..1.0, same in prop::bool::ANY) {
            let hs = if hsign { 1.0 } else { -1.0 };
            let prev = j0 + hs * h;
            let step = if same { hs * d } else { -hs * d };
            let o = compute_outcome(&[0.15], &js(&[j0]), &js(&[prev]), &js(&[prev + step])).unwrap();
            prop_assert_eq!(o.r_aot, if same { Aot::Forward } else { Aot::Backward });
        }

        #[test]
        fn still_iff_within_threshold(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let o = compute_outcome(&[0.15], &js(&[a]), &js(&[b]), &js(&[c])).unwrap();
            prop_assert_eq!(o.r_aot == Aot::Still, o.r_dist <= 0.15);
        }
    }
}
