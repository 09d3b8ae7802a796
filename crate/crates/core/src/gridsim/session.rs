use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::stages::{Activity, LogEntry, OutMessage, RoundTotals, Stage};
use super::{run_stages, AccountingLog, LinkMatrix, StagePlan};
use crate::error::{Error, Result};

/// Anything that can cross a site boundary; `wire_len` is what gets
/// accounted.
pub trait Payload {
    fn wire_len(&self) -> u64;
}

/// Opaque payload of a given size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope<M> {
    pub from: usize,
    pub to: usize,
    pub payload: M,
}

struct Opaque(u64);

impl Payload for Opaque {
    fn wire_len(&self) -> u64 {
        self.0
    }
}

/// How local computation is charged to a stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TimingMode {
    /// Abstract work units times a fixed cost; reproducible.
    Modeled { seconds_per_unit: f64 },
    /// Wall-clock time actually spent.
    Measured,
}

impl Default for TimingMode {
    fn default() -> Self {
        TimingMode::Modeled {
            seconds_per_unit: 1e-8,
        }
    }
}

/// Local work performed by one site.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Work {
    pub units: f64,
    pub elapsed: Duration,
}

impl Work {
    pub fn new(units: f64, elapsed: Duration) -> Self {
        Work { units, elapsed }
    }
}

/// Communication context shared by the sites of one protocol run. All
/// cross-site data goes through [`Session::round`], so the round, message
/// and byte counts are complete by construction.
#[derive(Debug)]
pub struct Session {
    n_sites: usize,
    links: LinkMatrix,
    timing: TimingMode,
    log: AccountingLog,
    plan: StagePlan,
    closed: bool,
}

impl Session {
    /// Logical site `i` runs on physical site `i mod links.len()`.
    pub fn new(n_sites: usize, links: LinkMatrix) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::validation("a session needs at least one site"));
        }
        Ok(Session {
            n_sites,
            links,
            timing: TimingMode::default(),
            log: AccountingLog::new(n_sites),
            plan: StagePlan::default(),
            closed: false,
        })
    }

    pub fn with_timing(mut self, timing: TimingMode) -> Self {
        self.timing = timing;
        self
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn links(&self) -> &LinkMatrix {
        &self.links
    }

    pub fn rounds(&self) -> u32 {
        self.log.rounds
    }

    pub fn log(&self) -> &AccountingLog {
        &self.log
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::State("session is closed".into()))
        } else {
            Ok(())
        }
    }

    fn cost(&self, work: &Work) -> f64 {
        match self.timing {
            TimingMode::Modeled { seconds_per_unit } => work.units * seconds_per_unit,
            TimingMode::Measured => work.elapsed.as_secs_f64(),
        }
    }

    /// Records a compute-only stage (no communication, no round).
    pub fn local_stage(&mut self, name: &str, work: &[Work]) -> Result<()> {
        self.ensure_open()?;
        if work.len() != self.n_sites {
            return Err(Error::validation(format!(
                "expected work for {} sites, got {}",
                self.n_sites,
                work.len()
            )));
        }
        let activities = work
            .iter()
            .enumerate()
            .map(|(p, w)| Activity {
                site: self.links.place(p),
                compute_cost: self.cost(w),
                out_messages: Vec::new(),
            })
            .collect();
        self.plan.stages.push(Stage {
            name: Some(name.to_string()),
            activities,
        });
        Ok(())
    }

    /// Runs one synchronization round. Everything `f` sends through the
    /// context belongs to this round; the barrier is passed when `f`
    /// returns successfully.
    pub fn round<R>(&mut self, f: impl FnOnce(&mut RoundCtx<'_>) -> Result<R>) -> Result<R> {
        self.ensure_open()?;
        let round = self.log.rounds + 1;
        let mut ctx = RoundCtx::new(self, round);
        let out = f(&mut ctx)?;
        ctx.flush();
        self.log.rounds = round;
        Ok(out)
    }

    /// A round carrying opaque payloads of the given sizes.
    pub fn barrier_round(&mut self, exchanges: &[Exchange]) -> Result<RoundTotals> {
        let before = (self.log.messages, self.log.bytes);
        self.round(|ctx| {
            ctx.exchange(
                exchanges
                    .iter()
                    .map(|e| Envelope {
                        from: e.from,
                        to: e.to,
                        payload: Opaque(e.bytes),
                    })
                    .collect(),
            )
            .map(drop)
        })?;
        Ok(RoundTotals {
            round: self.log.rounds,
            messages: self.log.messages - before.0,
            bytes: self.log.bytes - before.1,
        })
    }

    /// Modeled duration of everything recorded so far.
    pub fn makespan(&self) -> Result<f64> {
        if self.plan.stages.is_empty() {
            return Ok(0.0);
        }
        Ok(run_stages(&self.plan, &self.links)?.makespan)
    }
}

/// Handle on the round in progress. A round can span several stages, e.g.
/// a broadcast followed by a poll.
pub struct RoundCtx<'s> {
    session: &'s mut Session,
    round: u32,
    compute: Vec<f64>,
    outgoing: Vec<Vec<OutMessage>>,
    entries: Vec<LogEntry>,
    name: String,
}

impl<'s> RoundCtx<'s> {
    fn new(session: &'s mut Session, round: u32) -> Self {
        let n = session.n_sites;
        RoundCtx {
            session,
            round,
            compute: vec![0.0; n],
            outgoing: vec![Vec::new(); n],
            entries: Vec::new(),
            name: format!("round {round}"),
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn n_sites(&self) -> usize {
        self.session.n_sites
    }

    fn stage_index(&self) -> u32 {
        self.session.plan.stages.len() as u32
    }

    /// Names the current stage in the recorded plan.
    pub fn set_stage_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn charge(&mut self, site: usize, work: Work) {
        self.compute[site] += self.session.cost(&work);
    }

    /// Sends a batch of messages and returns them in delivery order,
    /// `(to, from)`.
    pub fn exchange<M: Payload>(&mut self, mut outbox: Vec<Envelope<M>>) -> Result<Vec<Envelope<M>>> {
        let n = self.session.n_sites;
        let stage = self.stage_index();
        for env in &outbox {
            if env.from >= n || env.to >= n {
                return Err(Error::validation(format!(
                    "message {} -> {} outside the {n}-site session",
                    env.from, env.to
                )));
            }
            if env.from == env.to {
                return Err(Error::validation(format!("site {} sent to itself", env.from)));
            }
        }
        for env in &outbox {
            let bytes = env.payload.wire_len();
            let links = &self.session.links;
            let (src, dst) = (links.place(env.from), links.place(env.to));
            let seconds = links.comm_time(bytes, src, dst)?;
            self.outgoing[env.from].push(OutMessage { to: dst, bytes });
            self.entries.push(LogEntry {
                round: self.round,
                stage,
                from: env.from,
                to: env.to,
                bytes,
                seconds,
            });
        }
        outbox.sort_by_key(|e| (e.to, e.from));
        Ok(outbox)
    }

    /// Closes the current stage and opens the next one within the round.
    pub fn next_stage(&mut self) {
        self.flush();
        self.name = format!("round {}", self.round);
    }

    fn flush(&mut self) {
        let n = self.session.n_sites;
        let activities = (0..n)
            .map(|p| Activity {
                site: self.session.links.place(p),
                compute_cost: self.compute[p],
                out_messages: std::mem::take(&mut self.outgoing[p]),
            })
            .collect();
        self.compute.iter_mut().for_each(|c| *c = 0.0);
        self.session.log.append(std::mem::take(&mut self.entries));
        self.session.plan.stages.push(Stage {
            name: Some(std::mem::take(&mut self.name)),
            activities,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(n: usize) -> Session {
        Session::new(n, LinkMatrix::table2()).unwrap()
    }

    #[test]
    fn empty_round_counts() {
        let mut s = session(3);
        let r = s.barrier_round(&[]).unwrap();
        assert_eq!(
            r,
            RoundTotals {
                round: 1,
                messages: 0,
                bytes: 0
            }
        );
        assert_eq!(s.rounds(), 1);
        assert_eq!(s.log().bytes, 0);
    }

    #[test]
    fn all_to_all_round() {
        let n = 4;
        let m = 123;
        let mut s = session(n);
        let ex: Vec<_> = (0..n)
            .flat_map(|a| {
                (0..n).filter(move |&b| b != a).map(move |b| Exchange {
                    from: a,
                    to: b,
                    bytes: m,
                })
            })
            .collect();
        let r = s.barrier_round(&ex).unwrap();
        assert_eq!(r.messages, (n * (n - 1)) as u64);
        assert_eq!(r.bytes, (n * (n - 1)) as u64 * m);
    }

    #[test]
    fn consecutive_rounds_are_ordered() {
        let mut s = session(3);
        s.barrier_round(&[
            Exchange {
                from: 2,
                to: 0,
                bytes: 5,
            },
            Exchange {
                from: 0,
                to: 1,
                bytes: 7,
            },
        ])
        .unwrap();
        s.barrier_round(&[Exchange {
            from: 1,
            to: 2,
            bytes: 1,
        }])
        .unwrap();
        assert_eq!(s.rounds(), 2);
        let keys: Vec<_> = s.log().entries.iter().map(|e| (e.round, e.from, e.to)).collect();
        assert_eq!(keys, vec![(1, 0, 1), (1, 2, 0), (2, 1, 2)]);
        let per = s.log().per_round();
        assert_eq!(per[0].bytes, 12);
        assert_eq!(per[1].messages, 1);
    }

    #[test]
    fn closed_session_refuses_rounds() {
        let mut s = session(2);
        s.close();
        assert!(matches!(s.barrier_round(&[]), Err(Error::State(_))));
        assert!(matches!(
            s.local_stage("x", &[Work::default(); 2]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn bad_messages_are_rejected() {
        let mut s = session(2);
        assert!(s
            .barrier_round(&[Exchange {
                from: 0,
                to: 5,
                bytes: 1
            }])
            .is_err());
        assert!(s
            .barrier_round(&[Exchange {
                from: 1,
                to: 1,
                bytes: 1
            }])
            .is_err());
        assert_eq!(s.rounds(), 0);
    }

    #[test]
    fn makespan_follows_the_recorded_plan() {
        let links = LinkMatrix::uniform(2, 8.0, 0.0).unwrap();
        let mut s = Session::new(2, links).unwrap().with_timing(TimingMode::Modeled {
            seconds_per_unit: 1.0,
        });
        s.local_stage(
            "local",
            &[Work::new(3.0, Duration::ZERO), Work::new(5.0, Duration::ZERO)],
        )
        .unwrap();
        s.round(|ctx| {
            ctx.charge(0, Work::new(1.0, Duration::ZERO));
            ctx.exchange(vec![Envelope {
                from: 0,
                to: 1,
                payload: Opaque(1_000_000),
            }])?;
            ctx.next_stage();
            ctx.exchange(vec![Envelope {
                from: 1,
                to: 0,
                payload: Opaque(500_000),
            }])?;
            Ok(())
        })
        .unwrap();
        // 5 + (1 + 1) + 0.5
        assert_eq!(s.makespan().unwrap(), 7.5);
        assert_eq!(s.plan().stages.len(), 3);
        let stages: Vec<_> = s.log().entries.iter().map(|e| e.stage).collect();
        assert_eq!(stages, vec![1, 2]);
    }

    #[test]
    fn processes_wrap_onto_physical_sites() {
        let mut s = session(7);
        s.barrier_round(&[Exchange {
            from: 0,
            to: 5,
            bytes: 0,
        }])
        .unwrap();
        // Logical 5 sits on physical 0 with logical 0: intra-site latency.
        assert_eq!(s.log().entries[0].seconds, 0.07 / 1000.0);
    }

    #[test]
    fn measured_mode_uses_elapsed_time() {
        let mut s = session(1).with_timing(TimingMode::Measured);
        s.local_stage("l", &[Work::new(1e9, Duration::from_millis(250))])
            .unwrap();
        assert_eq!(s.makespan().unwrap(), 0.25);
    }
}
