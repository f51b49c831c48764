//! Maximum, equilibration and Doerfler marking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorReport;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingStrategy {
    Maximum,
    Equilibration,
    Doerfler,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkingSpec {
    pub strategy: MarkingStrategy,
    pub theta: f64,
}

impl MarkingSpec {
    pub fn new(strategy: MarkingStrategy, theta: f64) -> Result<Self> {
        let spec = MarkingSpec { strategy, theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta out of (0,1]: {}", self.theta)));
        }
        Ok(())
    }
}

/// Element indices sorted by indicator descending, ties by index ascending.
pub fn sorted_by_indicator<T: Scalar>(eta: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| {
        eta[b]
            .partial_cmp(&eta[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Marked element indices in ascending order.
pub fn mark<T: Scalar>(spec: &MarkingSpec, report: &EstimatorReport<T>) -> Result<Vec<usize>> {
    spec.validate()?;
    let eta = &report.per_element;
    if eta.is_empty() {
        return Err(Error::Argument("cannot mark on an empty estimator report".into()));
    }
    if eta.iter().all(|&e| e == T::zero()) {
        return Ok(vec![0]);
    }
    let theta = T::lit(spec.theta);
    let mut marked: Vec<usize> = match spec.strategy {
        MarkingStrategy::Maximum => {
            let max = eta.iter().copied().fold(T::zero(), T::max);
            let threshold = theta * max;
            (0..eta.len()).filter(|&e| eta[e] >= threshold).collect()
        }
        MarkingStrategy::Equilibration => {
            let total_sq: T = eta.iter().map(|&e| e * e).sum();
            let threshold = theta * total_sq / T::lit(eta.len() as f64);
            (0..eta.len()).filter(|&e| eta[e] * eta[e] >= threshold).collect()
        }
        MarkingStrategy::Doerfler => {
            let order = sorted_by_indicator(eta);
            // summing in sorted order makes theta = 1 reach the target exactly
            let total_sq: T = order.iter().map(|&e| eta[e] * eta[e]).sum();
            let target = theta * total_sq;
            let mut acc = T::zero();
            let mut out = Vec::new();
            for &e in &order {
                out.push(e);
                acc += eta[e] * eta[e];
                if acc >= target {
                    break;
                }
            }
            out
        }
    };
    marked.sort_unstable();
    Ok(marked)
}

/// The marking axiom with gauge `g(s) = s`: the largest unmarked indicator
/// does not exceed the largest marked one.
pub fn verify_marking_axiom<T: Scalar>(report: &EstimatorReport<T>, marked: &[usize]) -> Result<bool> {
    if marked.is_empty() {
        return Err(Error::Argument("marked set is empty".into()));
    }
    let eta = &report.per_element;
    let mut is_marked = vec![false; eta.len()];
    for &m in marked {
        if m >= eta.len() {
            return Err(Error::Argument(format!(
                "marked element {m} out of range ({} elements)",
                eta.len()
            )));
        }
        is_marked[m] = true;
    }
    let mut max_marked = T::neg_infinity();
    let mut max_unmarked = T::neg_infinity();
    for (e, &v) in eta.iter().enumerate() {
        if is_marked[e] {
            max_marked = max_marked.max(v);
        } else {
            max_unmarked = max_unmarked.max(v);
        }
    }
    Ok(max_unmarked <= max_marked)
}

pub const BRUTEFORCE_MAX: usize = 20;

/// Minimum-cardinality Doerfler set by exhaustive search. Among sets of that
/// cardinality the one whose ranks (position in the sorted order) are
/// lexicographically smallest is returned.
pub fn doerfler_bruteforce<T: Scalar>(report: &EstimatorReport<T>, theta: f64) -> Result<Vec<usize>> {
    let eta = &report.per_element;
    let n = eta.len();
    if n == 0 {
        return Err(Error::Argument("cannot mark on an empty estimator report".into()));
    }
    if n > BRUTEFORCE_MAX {
        return Err(Error::Argument(format!(
            "exhaustive Doerfler search limited to {BRUTEFORCE_MAX} elements, got {n}"
        )));
    }
    MarkingSpec::new(MarkingStrategy::Doerfler, theta)?;
    let order = sorted_by_indicator(eta);
    let sq: Vec<T> = order.iter().map(|&e| eta[e] * eta[e]).collect();
    let target = T::lit(theta) * sq.iter().copied().sum::<T>();
    for k in 1..=n {
        // combinations of ranks in lexicographic order
        let mut c: Vec<usize> = (0..k).collect();
        loop {
            let s: T = c.iter().map(|&r| sq[r]).sum();
            if s >= target {
                let mut out: Vec<usize> = c.iter().map(|&r| order[r]).collect();
                out.sort_unstable();
                return Ok(out);
            }
            let Some(i) = (0..k).rev().find(|&i| c[i] != i + n - k) else {
                break;
            };
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
        }
    }
    unreachable!("the full set always satisfies the bulk criterion")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(eta: &[f64]) -> EstimatorReport<f64> {
        EstimatorReport::from_indicators(eta.to_vec())
    }

    #[test]
    fn maximum_example() {
        let s = MarkingSpec::new(MarkingStrategy::Maximum, 0.5).unwrap();
        assert_eq!(mark(&s, &report(&[4.0, 3.0, 1.0])).unwrap(), vec![0, 1]);
    }

    #[test]
    fn equilibration_example() {
        let s = MarkingSpec::new(MarkingStrategy::Equilibration, 1.0).unwrap();
        assert_eq!(mark(&s, &report(&[3.0, 2.0, 2.0, 1.0])).unwrap(), vec![0]);
    }

    #[test]
    fn doerfler_example() {
        let s = MarkingSpec::new(MarkingStrategy::Doerfler, 0.5).unwrap();
        let r = report(&[3.0, 2.0, 2.0, 1.0]);
        assert_eq!(mark(&s, &r).unwrap(), vec![0]);
        assert_eq!(doerfler_bruteforce(&r, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn bruteforce_limits() {
        let r = report(&[3.0, 2.0, 2.0, 1.0]);
        assert_eq!(doerfler_bruteforce(&r, 1.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(doerfler_bruteforce(&report(&[1.0, 5.0, 2.0]), 1e-9).unwrap(), vec![1]);
        assert!(doerfler_bruteforce(&report(&[1.0; 21]), 0.5).is_err());
    }

    #[test]
    fn ties_resolved_by_index() {
        let s = MarkingSpec::new(MarkingStrategy::Doerfler, 0.5).unwrap();
        assert_eq!(mark(&s, &report(&[1.0, 2.0, 2.0, 2.0])).unwrap(), vec![1, 2]);
    }

    #[test]
    fn axiom_examples() {
        let r = report(&[4.0, 3.0, 1.0]);
        assert!(verify_marking_axiom(&r, &[0]).unwrap());
        assert!(!verify_marking_axiom(&r, &[2]).unwrap());
        assert!(verify_marking_axiom(&r, &[]).is_err());
    }

    #[test]
    fn degenerate_inputs() {
        let s = MarkingSpec::new(MarkingStrategy::Maximum, 0.5).unwrap();
        assert_eq!(mark(&s, &report(&[0.0, 0.0])).unwrap(), vec![0]);
        assert!(mark(&s, &report(&[])).is_err());
        assert!(MarkingSpec::new(MarkingStrategy::Doerfler, 1.5).is_err());
        assert!(MarkingSpec::new(MarkingStrategy::Doerfler, 0.0).is_err());
    }

    fn strategy() -> impl Strategy<Value = MarkingStrategy> {
        prop_oneof![
            Just(MarkingStrategy::Maximum),
            Just(MarkingStrategy::Equilibration),
            Just(MarkingStrategy::Doerfler),
        ]
    }

    proptest! {
        #[test]
        fn every_strategy_satisfies_axiom(
            eta in prop::collection::vec(0.0f64..10.0, 1..40),
            theta in 0.01f64..=1.0,
            strat in strategy(),
        ) {
            let r = report(&eta);
            let s = MarkingSpec::new(strat, theta).unwrap();
            let m = mark(&s, &r).unwrap();
            prop_assert!(!m.is_empty());
            prop_assert!(verify_marking_axiom(&r, &m).unwrap());
            prop_assert_eq!(&m, &mark(&s, &r).unwrap());
        }

        #[test]
        fn doerfler_is_minimal_and_bulk(
            eta in prop::collection::vec(0.01f64..10.0, 1..=12),
            theta in 0.01f64..=1.0,
        ) {
            let r = report(&eta);
            let s = MarkingSpec::new(MarkingStrategy::Doerfler, theta).unwrap();
            let m = mark(&s, &r).unwrap();
            let b = doerfler_bruteforce(&r, theta).unwrap();
            prop_assert_eq!(m.len(), b.len());
            let bulk: f64 = m.iter().map(|&e| eta[e] * eta[e]).sum();
            prop_assert!(bulk >= theta * r.total * r.total * (1.0 - 1e-12));
            let min_marked = m.iter().map(|&e| eta[e]).fold(f64::INFINITY, f64::min);
            let max_unmarked = (0..eta.len())
                .filter(|e| !m.contains(e))
                .map(|e| eta[e])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(max_unmarked <= min_marked);
        }
    }
}
