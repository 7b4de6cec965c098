use std::collections::BTreeMap;

use super::{CheckinRecord, PoiId, Trajectory, UserId};
use crate::error::{Error, Result};
use crate::metalearn::behavior_entropy;

/// A (trajectory prefix, next POI) pair taken from one session.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub user: UserId,
    /// Index of the source session among the user's sessions.
    pub session: usize,
    pub prefix: Vec<CheckinRecord>,
    pub target: CheckinRecord,
}

impl Instance {
    pub fn next_poi(&self) -> PoiId {
        self.target.poi
    }

    pub fn last(&self) -> &CheckinRecord {
        self.prefix.last().expect("instance prefixes are never empty")
    }
}

/// One user's adaptation problem.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTask {
    pub user: UserId,
    pub support: Vec<Instance>,
    pub query: Vec<Instance>,
    /// Category-visit entropy in nats.
    pub entropy: f64,
    /// Inner-loop step size; assigned by `metalearn::assign_rates`.
    pub inner_rate: f64,
}

impl MetaTask {
    /// Distinct check-ins visible to the support set, in chronological order.
    pub fn support_checkins(&self) -> Vec<CheckinRecord> {
        covered_checkins(&self.support)
    }

    /// Every check-in of the user's sessions.
    pub fn all_checkins(&self) -> Vec<CheckinRecord> {
        let all: Vec<Instance> = self.support.iter().chain(&self.query).cloned().collect();
        covered_checkins(&all)
    }

    /// Recomputes the entropy from support check-ins only.
    pub fn with_support_entropy(mut self) -> Result<Self> {
        if !self.support.is_empty() {
            self.entropy = behavior_entropy(&self.support_checkins())?;
        }
        Ok(self)
    }
}

fn covered_checkins(instances: &[Instance]) -> Vec<CheckinRecord> {
    let mut longest: BTreeMap<usize, &Instance> = BTreeMap::new();
    for inst in instances {
        let slot = longest.entry(inst.session).or_insert(inst);
        if inst.prefix.len() > slot.prefix.len() {
            *slot = inst;
        }
    }
    longest
        .values()
        .flat_map(|inst| inst.prefix.iter().chain(std::iter::once(&inst.target)).cloned())
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct TaskBuild {
    pub tasks: Vec<MetaTask>,
    /// Users with fewer than two instances or an empty query set.
    pub excluded_users: usize,
}

/// Expands a trajectory of length n into the n − 1 instances with prefixes of length 1..n−1.
pub fn expand_instances(traj: &Trajectory, session: usize) -> Vec<Instance> {
    (1..traj.checkins.len())
        .map(|i| Instance {
            user: traj.user,
            session,
            prefix: traj.checkins[..i].to_vec(),
            target: traj.checkins[i].clone(),
        })
        .collect()
}

/// Groups instances per user in chronological order; the first
/// ⌈support_fraction · N⌉ form the support set, the rest the query set.
pub fn build_meta_tasks(trajectories: &[Trajectory], support_fraction: f64) -> Result<TaskBuild> {
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "support_fraction {support_fraction} must lie in (0, 1)"
        )));
    }
    let mut per_user: BTreeMap<UserId, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        per_user.entry(t.user).or_default().push(t);
    }
    let mut out = TaskBuild::default();
    for (user, mut sessions) in per_user {
        sessions.sort_by_key(|t| t.checkins[0].timestamp);
        let instances: Vec<Instance> = sessions
            .iter()
            .enumerate()
            .flat_map(|(i, t)| expand_instances(t, i))
            .collect();
        let n = instances.len();
        let n_support = (support_fraction * n as f64).ceil() as usize;
        if n < 2 || n_support >= n {
            out.excluded_users += 1;
            continue;
        }
        let checkins: Vec<CheckinRecord> = sessions.iter().flat_map(|t| t.checkins.iter().cloned()).collect();
        let entropy = behavior_entropy(&checkins)?;
        let mut support = instances;
        let query = support.split_off(n_support);
        out.tasks.push(MetaTask {
            user,
            support,
            query,
            entropy,
            inner_rate: 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(user: usize, start: i64, pois: &[usize]) -> Trajectory {
        Trajectory {
            user,
            checkins: pois
                .iter()
                .enumerate()
                .map(|(i, &p)| CheckinRecord {
                    user,
                    poi: p,
                    category: p % 2,
                    lat: 0.0,
                    lon: 0.0,
                    timestamp: start + i as i64 * 60,
                    time_slot: 0,
                    tz_offset_min: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn expansion_prefix_lengths() {
        let inst = expand_instances(&traj(0, 0, &[1, 2, 3, 4]), 0);
        assert_eq!(inst.iter().map(|i| i.prefix.len()).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(inst.iter().map(|i| i.next_poi()).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn five_instances_split_four_one() {
        let trajs = vec![traj(0, 0, &[0, 1, 2]), traj(0, 100_000, &[3, 4, 5, 6])];
        let build = build_meta_tasks(&trajs, 0.8).unwrap();
        assert_eq!(build.tasks.len(), 1);
        let task = &build.tasks[0];
        assert_eq!(task.support.len(), 4);
        assert_eq!(task.query.len(), 1);
        assert_eq!(task.query[0].next_poi(), 6);
    }

    #[test]
    fn single_instance_user_excluded() {
        let build = build_meta_tasks(&[traj(3, 0, &[0, 1])], 0.8).unwrap();
        assert!(build.tasks.is_empty());
        assert_eq!(build.excluded_users, 1);
    }

    #[test]
    fn support_precedes_query() {
        let trajs = vec![traj(0, 0, &[0, 1, 2, 3]), traj(0, 90_000, &[1, 1, 0]), traj(0, 200_000, &[2, 3, 0, 1])];
        let task = build_meta_tasks(&trajs, 0.5).unwrap().tasks.remove(0);
        let max_support = task.support.iter().map(|i| i.target.timestamp).max().unwrap();
        let min_query = task.query.iter().map(|i| i.target.timestamp).min().unwrap();
        assert!(max_support < min_query);
        for q in &task.query {
            assert!(!task.support.contains(q));
        }
    }

    #[test]
    fn support_checkins_exclude_query_targets() {
        let trajs = vec![traj(0, 0, &[0, 1, 2, 3, 4, 5])];
        let task = build_meta_tasks(&trajs, 0.6).unwrap().tasks.remove(0);
        // 5 instances, 3 support: targets 1, 2, 3
        let support: Vec<_> = task.support_checkins().iter().map(|c| c.poi).collect();
        assert_eq!(support, vec![0, 1, 2, 3]);
        assert_eq!(task.all_checkins().len(), 6);
    }

    #[test]
    fn fraction_must_be_open_unit_interval() {
        assert!(build_meta_tasks(&[], 1.0).is_err());
        assert!(build_meta_tasks(&[], 0.0).is_err());
    }
}
