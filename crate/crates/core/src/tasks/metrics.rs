use crate::interaction::{normalized_distance, Transition};
use crate::kinematics::JointState;
use crate::{Error, Result};

/// Per-step normalized displacement `||dj / delta||` of every directional
/// step.
pub fn single_action_effect(trajectory: &[Transition], deltas: &[f64]) -> Result<Vec<f64>> {
    trajectory
        .iter()
        .filter(|t| !t.is_grasp())
        .map(|t| normalized_distance(deltas, &t.j_prev, &t.j_curr))
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Greedy clustering of visited states in visit order: a state is retained
/// when it is at least one threshold away from every retained state.
/// Returns retained / visited.
pub fn unique_ratio(states: &[JointState], deltas: &[f64]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::invalid("unique ratio needs at least one step"));
    }
    let mut retained: Vec<&JointState> = Vec::new();
    for s in states {
        let mut novel = true;
        for r in &retained {
            if normalized_distance(deltas, s, r)? < 1.0 {
                novel = false;
                break;
            }
        }
        if novel {
            retained.push(s);
        }
    }
    Ok(retained.len() as f64 / states.len() as f64)
}

/// Unique ratio over the post-step states of the directional steps.
pub fn trajectory_unique_ratio(trajectory: &[Transition], deltas: &[f64]) -> Result<f64> {
    let states: Vec<JointState> = trajectory
        .iter()
        .filter(|t| !t.is_grasp())
        .map(|t| t.j_curr.clone())
        .collect();
    unique_ratio(&states, deltas)
}

pub const GOAL_SUCCESS_THRESHOLD: f64 = 0.1;

/// Remaining distance to the goal relative to the initial distance, both in
/// threshold-normalized coordinates, and whether it is below 0.1.
pub fn goal_error(
    j_end: &JointState,
    j_init: &JointState,
    j_goal: &JointState,
    deltas: &[f64],
) -> Result<(f64, bool)> {
    let total = normalized_distance(deltas, j_goal, j_init)?;
    if total == 0.0 {
        return Err(Error::UndefinedTask);
    }
    let e = normalized_distance(deltas, j_end, j_goal)? / total;
    Ok((e, e < GOAL_SUCCESS_THRESHOLD))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn js(v: f64) -> JointState {
        JointState::new(vec![v])
    }

    #[test]
    fn unique_ratio_examples() {
        let d = [0.15];
        let mono: Vec<_> = (1..=5).map(|i| js(i as f64 * 0.2)).collect();
        assert_eq!(unique_ratio(&mono, &d).unwrap(), 1.0);
        let osc = [js(0.5), js(0.0), js(0.5), js(0.0)];
        assert_eq!(unique_ratio(&osc, &d).unwrap(), 0.5);
        let still = [js(0.01), js(0.02), js(0.0), js(0.05)];
        assert_eq!(unique_ratio(&still, &d).unwrap(), 0.25);
        assert!(unique_ratio(&[], &d).is_err());
    }

    #[test]
    fn goal_error_examples() {
        let d = [0.15];
        assert_eq!(
            goal_error(&js(1.0), &js(0.0), &js(1.0), &d).unwrap(),
            (0.0, true)
        );
        assert_eq!(
            goal_error(&js(0.0), &js(0.0), &js(1.0), &d).unwrap(),
            (1.0, false)
        );
        let (e, ok) = goal_error(&js(0.5), &js(0.0), &js(1.0), &d).unwrap();
        assert!((e - 0.5).abs() < 1e-12 && !ok);
        assert!(matches!(
            goal_error(&js(0.5), &js(1.0), &js(1.0), &d),
            Err(Error::UndefinedTask)
        ));
    }

    #[test]
    fn single_action_examples() {
        let n = |a: f64, b: f64, delta: f64| normalized_distance(&[delta], &js(a), &js(b)).unwrap();
        assert!((n(0.0, 0.15, 0.15) - 1.0).abs() < 1e-12);
        assert_eq!(n(0.3, 0.3, 0.15), 0.0);
        assert!((n(0.0, 0.3, 0.15) - 2.0).abs() < 1e-12);
    }
}
