use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LinkMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutMessage {
    pub to: usize,
    pub bytes: u64,
}

/// Work done by one site during a stage: local computation followed by its
/// outgoing messages, sent one after the other.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub site: usize,
    pub compute_cost: f64,
    #[serde(default)]
    pub out_messages: Vec<OutMessage>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub activities: Vec<Activity>,
}

/// Sequence of barrier-separated stages of parallel activities. Sites index
/// into the [`LinkMatrix`] the plan is run against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self, links: &LinkMatrix) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::validation("stage plan has no stages"));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            for a in &stage.activities {
                if !(a.compute_cost >= 0.0 && a.compute_cost.is_finite()) {
                    return Err(Error::validation(format!(
                        "stage {s}: compute cost must be finite and >= 0, got {}",
                        a.compute_cost
                    )));
                }
                if a.site >= links.len() || a.out_messages.iter().any(|m| m.to >= links.len()) {
                    return Err(Error::validation(format!(
                        "stage {s}: site index outside the {}-site link matrix",
                        links.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One accounted message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub round: u32,
    pub stage: u32,
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTotals {
    pub round: u32,
    pub messages: u64,
    pub bytes: u64,
}

/// Message log in canonical `(round, stage, from, to)` order, with running
/// totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountingLog {
    pub rounds: u32,
    pub messages: u64,
    pub bytes: u64,
    /// `link_bytes[from][to]`, over logical sites.
    pub link_bytes: Vec<Vec<u64>>,
    pub entries: Vec<LogEntry>,
}

impl AccountingLog {
    pub fn new(n_sites: usize) -> Self {
        AccountingLog {
            link_bytes: vec![vec![0; n_sites]; n_sites],
            ..Default::default()
        }
    }

    /// Appends a batch of entries belonging to one stage, sorted by
    /// `(from, to)` (stable, so repeated pairs keep their send order).
    pub(crate) fn append(&mut self, mut batch: Vec<LogEntry>) {
        batch.sort_by_key(|e| (e.round, e.stage, e.from, e.to));
        for e in batch {
            let n = self.link_bytes.len().max(e.from.max(e.to) + 1);
            if self.link_bytes.len() < n {
                self.link_bytes.resize(n, Vec::new());
            }
            for row in &mut self.link_bytes {
                row.resize(n, 0);
            }
            self.messages += 1;
            self.bytes += e.bytes;
            self.link_bytes[e.from][e.to] += e.bytes;
            self.entries.push(e);
        }
    }

    pub fn per_round(&self) -> Vec<RoundTotals> {
        let mut out: Vec<RoundTotals> = (1..=self.rounds)
            .map(|round| RoundTotals {
                round,
                ..Default::default()
            })
            .collect();
        for e in &self.entries {
            if let Some(t) = out.iter_mut().find(|t| t.round == e.round) {
                t.messages += 1;
                t.bytes += e.bytes;
            }
        }
        out
    }

    /// CSV with columns `round,stage,from,to,bytes,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,stage,from,to,bytes,seconds\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.round, e.stage, e.from, e.to, e.bytes, e.seconds
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRun {
    pub makespan: f64,
    /// Duration of each stage: its slowest activity.
    pub stage_times: Vec<f64>,
    pub log: AccountingLog,
}

/// Sum over stages of the slowest activity, where an activity takes its
/// compute cost plus the transfer time of each of its messages.
pub fn run_stages(plan: &StagePlan, links: &LinkMatrix) -> Result<StageRun> {
    plan.validate(links)?;
    let mut log = AccountingLog::new(links.len());
    let mut stage_times = Vec::with_capacity(plan.stages.len());
    for (s, stage) in plan.stages.iter().enumerate() {
        let mut slowest: f64 = 0.0;
        let mut batch = Vec::new();
        for a in &stage.activities {
            let mut t = a.compute_cost;
            for m in &a.out_messages {
                let seconds = links.comm_time(m.bytes, a.site, m.to)?;
                t += seconds;
                batch.push(LogEntry {
                    round: 0,
                    stage: s as u32,
                    from: a.site,
                    to: m.to,
                    bytes: m.bytes,
                    seconds,
                });
            }
            slowest = slowest.max(t);
        }
        log.append(batch);
        stage_times.push(slowest);
    }
    Ok(StageRun {
        makespan: stage_times.iter().sum(),
        stage_times,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(site: usize, cost: f64, msgs: &[(usize, u64)]) -> Activity {
        Activity {
            site,
            compute_cost: cost,
            out_messages: msgs.iter().map(|&(to, bytes)| OutMessage { to, bytes }).collect(),
        }
    }

    fn stage(acts: Vec<Activity>) -> Stage {
        Stage {
            name: None,
            activities: acts,
        }
    }

    #[test]
    fn single_stage_takes_the_max() {
        let plan = StagePlan {
            stages: vec![stage(vec![act(0, 2.0, &[]), act(1, 5.0, &[]), act(2, 3.0, &[])])],
        };
        let run = run_stages(&plan, &LinkMatrix::table2()).unwrap();
        assert_eq!(run.makespan, 5.0);
    }

    #[test]
    fn stages_add_up() {
        let plan = StagePlan {
            stages: vec![
                stage(vec![act(0, 5.0, &[]), act(1, 1.0, &[])]),
                stage(vec![act(0, 2.0, &[]), act(1, 7.0, &[])]),
            ],
        };
        assert_eq!(run_stages(&plan, &LinkMatrix::table2()).unwrap().makespan, 12.0);
    }

    #[test]
    fn clustering_shaped_plan() {
        // Local clustering peaks at 19 s; shipping statistics over the
        // slowest link takes 0.52 s.
        let links = LinkMatrix::new(
            vec!["agg".into(), "b".into(), "c".into()],
            vec![vec![100.0; 3]; 3],
            vec![vec![1.0, 1.0, 1.0], vec![520.0, 1.0, 1.0], vec![10.0, 1.0, 1.0]],
        )
        .unwrap();
        let plan = StagePlan {
            stages: vec![
                stage(vec![act(0, 12.0, &[]), act(1, 19.0, &[]), act(2, 17.5, &[])]),
                stage(vec![act(1, 0.0, &[(0, 0)]), act(2, 0.0, &[(0, 0)])]),
            ],
        };
        let run = run_stages(&plan, &links).unwrap();
        assert_eq!(run.makespan, 19.52);
        assert_eq!(run.log.messages, 2);
    }

    #[test]
    fn messages_are_logged_canonically() {
        let plan = StagePlan {
            stages: vec![stage(vec![
                act(2, 0.0, &[(1, 10), (0, 5)]),
                act(0, 0.0, &[(2, 7)]),
            ])],
        };
        let run = run_stages(&plan, &LinkMatrix::table2()).unwrap();
        let order: Vec<_> = run.log.entries.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(order, vec![(0, 2), (2, 0), (2, 1)]);
        assert_eq!(run.log.bytes, 22);
        assert_eq!(run.log.link_bytes[2][1], 10);
        assert!(run
            .log
            .to_csv()
            .starts_with("round,stage,from,to,bytes,seconds\n0,0,0,2,7,"));
    }

    #[test]
    fn invalid_plans() {
        let links = LinkMatrix::table2();
        assert!(run_stages(&StagePlan::default(), &links).is_err());
        let neg = StagePlan {
            stages: vec![stage(vec![act(0, -1.0, &[])])],
        };
        assert!(run_stages(&neg, &links).is_err());
        let far = StagePlan {
            stages: vec![stage(vec![act(0, 1.0, &[(9, 1)])])],
        };
        assert!(run_stages(&far, &links).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn activity() -> impl Strategy<Value = Activity> {
        (
            0usize..5,
            0.0f64..100.0,
            prop::collection::vec((0usize..5, 0u64..5_000_000), 0..4),
        )
            .prop_map(|(site, compute_cost, msgs)| Activity {
                site,
                compute_cost,
                out_messages: msgs
                    .into_iter()
                    .map(|(to, bytes)| OutMessage { to, bytes })
                    .collect(),
            })
    }

    fn plan() -> impl Strategy<Value = StagePlan> {
        prop::collection::vec(prop::collection::vec(activity(), 1..5), 1..6).prop_map(|stages| StagePlan {
            stages: stages
                .into_iter()
                .map(|activities| Stage {
                    name: None,
                    activities,
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn adding_work_never_shortens_the_makespan(
            p in plan(),
            extra in activity(),
            stage_pick in any::<prop::sample::Index>(),
            msg in (0usize..5, 0u64..1_000_000),
        ) {
            let links = LinkMatrix::table2();
            let base = run_stages(&p, &links).unwrap();
            prop_assert_eq!(&run_stages(&p, &links).unwrap(), &base);

            let s = stage_pick.index(p.stages.len());
            let mut more = p.clone();
            more.stages[s].activities.push(extra);
            prop_assert!(run_stages(&more, &links).unwrap().makespan >= base.makespan);

            let mut more = p.clone();
            more.stages[s].activities[0].out_messages.push(OutMessage { to: msg.0, bytes: msg.1 });
            prop_assert!(run_stages(&more, &links).unwrap().makespan >= base.makespan);
        }

        #[test]
        fn comm_time_is_monotone(bytes in 0u64..10_000_000, extra in 1u64..1_000_000, from in 0usize..5, to in 0usize..5) {
            let links = LinkMatrix::table2();
            let t = links.comm_time(bytes, from, to).unwrap();
            prop_assert!(links.comm_time(bytes + extra, from, to).unwrap() > t);
            let faster = LinkMatrix::uniform(5, 2000.0, 0.0).unwrap();
            let slower = LinkMatrix::uniform(5, 1000.0, 0.0).unwrap();
            if from != to {
                prop_assert!(faster.comm_time(bytes + 1, from, to).unwrap() < slower.comm_time(bytes + 1, from, to).unwrap());
            }
        }
    }
}
