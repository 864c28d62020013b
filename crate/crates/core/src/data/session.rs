use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassId, TrainTestSplit};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Class partition across sessions plus the training indices each session sees.
///
/// Sessions are numbered from 1; session 1 is the base session. Training
/// indices point into the train split the plan was made from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub base_classes: Vec<ClassId>,
    pub incremental_sessions: Vec<Vec<ClassId>>,
    pub shots_per_class: usize,
    pub ways_per_session: usize,
    pub rng_seed: u64,
    pub base_train: Vec<usize>,
    pub incremental_train: Vec<Vec<usize>>,
}

impl SessionPlan {
    /// Total session count `T`.
    pub fn num_sessions(&self) -> usize {
        1 + self.incremental_sessions.len()
    }

    /// Classes introduced in session `t` (1-based).
    pub fn session_classes(&self, t: usize) -> Result<&[ClassId]> {
        match t {
            1 => Ok(&self.base_classes),
            t if t >= 2 && t <= self.num_sessions() => Ok(&self.incremental_sessions[t - 2]),
            _ => Err(Error::Bounds {
                index: t,
                len: self.num_sessions(),
            }),
        }
    }

    /// All classes seen in sessions `1..=t`, in session order.
    pub fn classes_through(&self, t: usize) -> Result<Vec<ClassId>> {
        let mut out = Vec::new();
        for s in 1..=t {
            out.extend_from_slice(self.session_classes(s)?);
        }
        Ok(out)
    }

    /// Training indices for session `t`.
    pub fn train_indices(&self, t: usize) -> Result<&[usize]> {
        match t {
            1 => Ok(&self.base_train),
            t if t >= 2 && t <= self.num_sessions() => Ok(&self.incremental_train[t - 2]),
            _ => Err(Error::Bounds {
                index: t,
                len: self.num_sessions(),
            }),
        }
    }

    /// Checks that no class appears in two sessions.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in 1..=self.num_sessions() {
            for &c in self.session_classes(s)? {
                if !seen.insert(c) {
                    return Err(Error::Disjointness(c));
                }
            }
        }
        Ok(())
    }
}

/// Picks base classes uniformly at random, splits further classes into
/// `num_sessions − 1` sessions of `ways`, and draws `shots` training samples
/// per incremental class. The base session keeps its full training split.
pub fn make_session_plan(
    data: &TrainTestSplit,
    num_base_classes: usize,
    ways: usize,
    shots: usize,
    num_sessions: usize,
    seed: u64,
) -> Result<SessionPlan> {
    if num_sessions == 0 || num_base_classes == 0 {
        return Err(Error::Config("need at least one session and one base class".into()));
    }
    if num_sessions > 1 && (ways == 0 || shots == 0) {
        return Err(Error::Config("ways and shots must be positive".into()));
    }
    let mut classes = data.train.classes();
    let needed = num_base_classes + ways * (num_sessions - 1);
    if needed > classes.len() {
        return Err(Error::Capacity(format!(
            "{needed} classes required, dataset has {}",
            classes.len()
        )));
    }
    let mut rng = seeded(derive_seed(seed, &[0]));
    classes.shuffle(&mut rng);

    let mut base_classes = classes[..num_base_classes].to_vec();
    base_classes.sort_unstable();
    let by_class = data.train.indices_by_class();

    let mut base_train: Vec<usize> = base_classes.iter().flat_map(|c| by_class[c].iter().copied()).collect();
    base_train.sort_unstable();

    let mut incremental_sessions = Vec::with_capacity(num_sessions - 1);
    let mut incremental_train = Vec::with_capacity(num_sessions - 1);
    for s in 0..num_sessions - 1 {
        let start = num_base_classes + s * ways;
        let mut session = classes[start..start + ways].to_vec();
        session.sort_unstable();
        let mut train = Vec::with_capacity(ways * shots);
        for &c in &session {
            let mut pool = by_class[&c].clone();
            if pool.len() < shots {
                return Err(Error::Capacity(format!(
                    "class {c} has {} training samples, {shots} shots requested",
                    pool.len()
                )));
            }
            let mut class_rng = seeded(derive_seed(seed, &[1, u64::from(c)]));
            pool.shuffle(&mut class_rng);
            train.extend_from_slice(&pool[..shots]);
        }
        train.sort_unstable();
        incremental_sessions.push(session);
        incremental_train.push(train);
    }

    let plan = SessionPlan {
        base_classes,
        incremental_sessions,
        shots_per_class: shots,
        ways_per_session: ways,
        rng_seed: seed,
        base_train,
        incremental_train,
    };
    plan.check_disjoint()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gaussian_clusters;
    use proptest::prelude::*;

    fn split(classes: usize, per_class: usize) -> TrainTestSplit {
        generate_gaussian_clusters(classes, 3, per_class, 0.1, 1)
            .unwrap()
            .split_train_test(0.8, 2)
            .unwrap()
    }

    #[test]
    fn hundred_classes_nine_sessions() {
        let data = split(100, 10);
        let plan = make_session_plan(&data, 60, 5, 5, 9, 3).unwrap();
        assert_eq!(plan.num_sessions(), 9);
        assert_eq!(plan.incremental_sessions.len(), 8);
        assert!(plan.incremental_sessions.iter().all(|s| s.len() == 5));
        let inc: usize = plan.incremental_sessions.iter().map(Vec::len).sum();
        assert_eq!(inc, 40);
        for (s, idx) in plan.incremental_sessions.iter().zip(&plan.incremental_train) {
            assert_eq!(idx.len(), 25);
            for &c in s {
                let n = idx.iter().filter(|&&i| data.train.samples[i].label == c).count();
                assert_eq!(n, 5);
            }
        }
        assert_eq!(plan.base_train.len(), 60 * 8);
    }

    #[test]
    fn too_many_shots_is_capacity_error() {
        let data = split(10, 5);
        assert!(matches!(
            make_session_plan(&data, 5, 5, 6, 2, 0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn too_few_classes_is_capacity_error() {
        let data = split(10, 5);
        assert!(matches!(
            make_session_plan(&data, 6, 5, 1, 2, 0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn deterministic() {
        let data = split(20, 10);
        assert_eq!(
            make_session_plan(&data, 10, 2, 3, 6, 4).unwrap(),
            make_session_plan(&data, 10, 2, 3, 6, 4).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn sessions_are_disjoint(base in 1usize..8, ways in 1usize..4, sessions in 1usize..5, shots in 1usize..4, seed in 0u64..1000) {
            let total = base + ways * (sessions - 1) + 2;
            let data = split(total, 8);
            let plan = make_session_plan(&data, base, ways, shots, sessions, seed).unwrap();
            prop_assert!(plan.check_disjoint().is_ok());
            let all = plan.classes_through(plan.num_sessions()).unwrap();
            let mut dedup = all.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), all.len());
            for t in 2..=plan.num_sessions() {
                for &c in plan.session_classes(t).unwrap() {
                    let n = plan.train_indices(t).unwrap().iter()
                        .filter(|&&i| data.train.samples[i].label == c).count();
                    prop_assert_eq!(n, shots);
                }
            }
        }
    }
}
