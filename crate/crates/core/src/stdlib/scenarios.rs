//! Named, parameterised programs for the runner and the test suites.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{Barrier, Campaign, Future, MVar, PetriNet, Semaphore};
use crate::action::{Env, Io, Itm, Otm};
use crate::ids::VarId;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: i64,
    pub min: i64,
}

const fn p(name: &'static str, default: i64, min: i64) -> ParamSpec {
    ParamSpec { name, default, min }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Params(BTreeMap<String, i64>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: i64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: i64) {
        self.0.insert(name.to_string(), value);
    }

    /// Panics on a name the scenario does not declare.
    pub fn get(&self, name: &str) -> i64 {
        *self.0.get(name).unwrap_or_else(|| panic!("undeclared parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error("scenario {scenario} has no parameter {name:?}")]
    UnknownParam { scenario: &'static str, name: String },
    #[error("parameter {name} must be at least {min}, got {value}")]
    OutOfRange { name: &'static str, min: i64, value: i64 },
}

pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamSpec],
    /// Whether a quiescent-blocked end is the expected result for these parameters.
    pub blocking: fn(&Params) -> bool,
    /// Labels of the variables the setup allocates, in allocation order.
    pub labels: fn(&Params) -> Vec<String>,
    pub build: fn(&Params) -> Io,
}

impl core::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Scenario").field("name", &self.name).finish_non_exhaustive()
    }
}

impl Scenario {
    /// Defaults overlaid with `overrides`, range-checked.
    pub fn resolve(&self, overrides: &Params) -> Result<Params, ScenarioError> {
        let mut out = Params::new();
        for spec in self.params {
            out.set(spec.name, spec.default);
        }
        for (name, value) in overrides.iter() {
            let spec = self.params.iter().find(|s| s.name == name).ok_or_else(|| {
                ScenarioError::UnknownParam { scenario: self.name, name: name.to_string() }
            })?;
            if value < spec.min {
                return Err(ScenarioError::OutOfRange { name: spec.name, min: spec.min, value });
            }
            out.set(name, value);
        }
        Ok(out)
    }

    pub fn program(&self, overrides: &Params) -> Result<Io, ScenarioError> {
        Ok((self.build)(&self.resolve(overrides)?))
    }

    pub fn expects_blocking(&self, overrides: &Params) -> Result<bool, ScenarioError> {
        Ok((self.blocking)(&self.resolve(overrides)?))
    }

    pub fn labels(&self, overrides: &Params) -> Result<Vec<String>, ScenarioError> {
        Ok((self.labels)(&self.resolve(overrides)?))
    }

    /// Label for a variable allocated by the setup, if any.
    pub fn label_of(labels: &[String], r: VarId) -> Option<&str> {
        labels.get(usize::try_from(r.0).ok()?).map(String::as_str)
    }
}

pub fn find(name: &str) -> Result<&'static Scenario, ScenarioError> {
    SCENARIOS.iter().find(|s| s.name == name).ok_or_else(|| ScenarioError::Unknown(name.to_string()))
}

pub fn all() -> &'static [Scenario] {
    SCENARIOS
}

fn never(_: &Params) -> bool {
    false
}

fn always(_: &Params) -> bool {
    true
}

fn none(_: &Params) -> Vec<String> {
    Vec::new()
}

fn names(prefix: &str, n: i64) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn var_list(v: &Value) -> Vec<VarId> {
    v.as_list().unwrap_or(&[]).iter().filter_map(Value::as_var).collect()
}

/// Allocate `initial` in one transaction, then continue with the list of vars.
fn setup(initial: Vec<Value>, env: Env, body: fn(&Env, Value) -> Io) -> Io {
    Itm::sequence(initial.into_iter().map(Itm::new_var).collect()).atomically().bind(env, body)
}

fn ints(params: &Params, names: &[&str]) -> Env {
    Env::values(names.iter().map(|n| Value::Int(params.get(n))))
}

// semaphores ---------------------------------------------------------------

fn semaphore(_: &Params) -> Io {
    setup(vec![0.into()], Env::empty(), |_, vs| {
        let s = Semaphore(var_list(&vs)[0]);
        s.down().isolated().atomic().fork().then(s.up().isolated().atomic())
    })
}

fn down_any(params: &Params) -> Io {
    let initial = vec![params.get("first").into(), params.get("second").into()];
    setup(initial, Env::empty(), |_, vs| {
        let sems: Vec<Semaphore> = var_list(&vs).into_iter().map(Semaphore).collect();
        super::down_any(&sems).isolated().atomic()
    })
}

fn down_any_blocks(params: &Params) -> bool {
    params.get("first") == 0 && params.get("second") == 0
}

// master / worker ----------------------------------------------------------

/// Vars: request/answer buffer, then semaphores c1 (request ready) and c2 (answer ready).
fn master_worker_vars() -> Vec<Value> {
    vec![0.into(), 0.into(), 0.into()]
}

fn master_worker_labels(_: &Params) -> Vec<String> {
    ["buffer", "c1", "c2"].map(String::from).to_vec()
}

fn worker(buffer: VarId, c1: Semaphore, c2: Semaphore) -> Otm {
    let env = Env::values([Value::Var(buffer), Value::Var(c2.0)]);
    let serve = Itm::read(buffer).bind(env, |e, x| {
        let x = x.as_int().unwrap_or(0);
        Itm::write(e.var(0), 2 * x + 2).then(Semaphore(e.var(1)).up())
    });
    c1.down().isolated().then(serve.isolated())
}

fn master_worker(params: &Params) -> Io {
    setup(master_worker_vars(), ints(params, &["request"]), |e, vs| {
        let v = var_list(&vs);
        let (buffer, c1, c2) = (v[0], Semaphore(v[1]), Semaphore(v[2]));
        let ask = Itm::write(buffer, e.int(0)).then(c1.up()).isolated();
        let master = ask.then(c2.down().isolated()).then(Itm::read(buffer).isolated());
        worker(buffer, c1, c2).atomic().fork().then(master.atomic())
    })
}

/// Both parties wrap their whole exchange in a single isolated block.
fn master_worker_isolated(params: &Params) -> Io {
    setup(master_worker_vars(), ints(params, &["request"]), |e, vs| {
        let v = var_list(&vs);
        let (buffer, c1, c2) = (v[0], Semaphore(v[1]), Semaphore(v[2]));
        let master = Itm::write(buffer, e.int(0)).then(c1.up()).then(c2.down()).then(Itm::read(buffer));
        let env = Env::values([Value::Var(buffer), Value::Var(c2.0)]);
        let serve = Itm::read(buffer).bind(env, |e, x| {
            let x = x.as_int().unwrap_or(0);
            Itm::write(e.var(0), 2 * x + 2).then(Semaphore(e.var(1)).up())
        });
        let worker = c1.down().then(serve);
        worker.isolated().atomic().fork().then(master.isolated().atomic())
    })
}

// crowdfunding -------------------------------------------------------------

fn crowdfunding_labels(params: &Params) -> Vec<String> {
    let mut out = vec!["campaign".to_string(), "fundraiser".to_string()];
    out.extend(names("backer", params.get("backers")));
    out
}

fn crowdfunding_blocks(params: &Params) -> bool {
    params.get("gift") > params.get("balance") || params.get("backers") * params.get("gift") < params.get("target")
}

fn crowdfunding(params: &Params) -> Io {
    let mut initial = vec![Value::Int(0), Value::Int(0)];
    initial.extend((0..params.get("backers")).map(|_| Value::Int(params.get("balance"))));
    setup(initial, ints(params, &["target", "gift"]), |e, vs| {
        let v = var_list(&vs);
        let campaign = Campaign { account: v[0], target: e.int(0) };
        let fundraiser = v[1];
        let backers = v[2..].iter().map(|&b| {
            // Pledge, then stay open until the campaign closes so the pledge
            // and the collection commit together or not at all.
            let pledge = campaign.back(b, e.int(1)).isolated().then(campaign.await_closed().isolated());
            pledge.atomic().fork()
        });
        let close = campaign.close(fundraiser).isolated().atomic();
        let report = Itm::read(fundraiser).atomically();
        Io::sequence_(backers.collect()).then(close).then(report)
    })
}

// barrier ------------------------------------------------------------------

fn barrier(params: &Params) -> Io {
    setup(vec![Value::pair(0.into(), 0.into())], ints(params, &["threads"]), |e, vs| {
        let b = Barrier(var_list(&vs)[0]);
        let n = e.int(0);
        let joins = Itm::sequence_((0..n).map(|_| b.join()).collect()).atomically();
        let members = (1..n).map(|_| b.await_all().atomic().fork()).collect();
        joins.then(Io::sequence_(members)).then(b.await_all().atomic())
    })
}

// futures ------------------------------------------------------------------

fn futures(params: &Params) -> Io {
    let job = Env::values([Value::Int(params.get("value"))]);
    Io::ret(()).bind(job, |e, _| {
        Future::spawn(Otm::ret(e.value(0).clone()))
            .bind(Env::empty(), |_, f| Future(f.as_var().expect("future handle")).get().isolated())
            .atomic()
    })
}

fn futures_throw(params: &Params) -> Io {
    let job = Env::values([Value::Int(params.get("value"))]);
    Io::ret(()).bind(job, |e, _| {
        let boom = Otm::throw(Value::exception("boom", e.value(0).clone()));
        Future::spawn(boom)
            .bind(Env::empty(), |_, f| Future(f.as_var().expect("future handle")).get().isolated())
            .atomic()
    })
}

// mvar ---------------------------------------------------------------------

fn mvar(params: &Params) -> Io {
    setup(vec![Value::none()], ints(params, &["value"]), |e, vs| {
        let m = MVar(var_list(&vs)[0]);
        let producer = m.put(e.value(0).clone()).isolated().atomic().fork();
        producer.then(m.take().isolated().atomic())
    })
}

// petri nets ---------------------------------------------------------------

fn petri_simple_labels(_: &Params) -> Vec<String> {
    ["p1", "p2", "p3", "p4"].map(String::from).to_vec()
}

/// p1 holds the only token; t1 = [p1] -> [p3, p4], t2 = [p1, p2] -> [p4].
fn petri_simple(_: &Params) -> Io {
    setup(vec![1.into(), 0.into(), 0.into(), 0.into()], Env::empty(), |_, vs| {
        let net = PetriNet {
            places: var_list(&vs).into_iter().map(Semaphore).collect(),
            transitions: vec![(vec![0], vec![2, 3]), (vec![0, 1], vec![3])],
        };
        net.transition_thread(0, Some(1)).fork().then(net.transition_thread(1, Some(1)).fork())
    })
}

fn philosopher_labels(params: &Params) -> Vec<String> {
    names("fork", params.get("n"))
}

/// A ring of `n` forks; philosopher i takes and returns forks i and i+1.
pub fn philosophers_net(forks: &[VarId]) -> PetriNet {
    let n = forks.len();
    PetriNet {
        places: forks.iter().copied().map(Semaphore).collect(),
        transitions: (0..n).map(|i| (vec![i, (i + 1) % n], vec![i, (i + 1) % n])).collect(),
    }
}

fn philosophers(params: &Params) -> Io {
    let initial = (0..params.get("n")).map(|_| Value::Int(1)).collect();
    setup(initial, Env::empty(), |_, vs| {
        let net = philosophers_net(&var_list(&vs));
        Io::sequence_((0..net.transitions.len()).map(|t| net.transition_thread(t, None).fork()).collect())
    })
}

// io -----------------------------------------------------------------------

fn echo(params: &Params) -> Io {
    let once = Io::get_char().bind(Env::empty(), |_, c| Io::put_char(c.as_char().unwrap_or('?')));
    Io::sequence_((0..params.get("chars")).map(|_| once.clone()).collect())
}

static SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "semaphore",
        summary: "a forked thread waits on a semaphore the main thread raises",
        params: &[],
        blocking: never,
        labels: |_| vec!["s".to_string()],
        build: semaphore,
    },
    Scenario {
        name: "down-any",
        summary: "take from whichever of two semaphores has a token",
        params: &[p("first", 0, 0), p("second", 1, 0)],
        blocking: down_any_blocks,
        labels: |_| names("s", 2),
        build: down_any,
    },
    Scenario {
        name: "masterworker",
        summary: "master and worker exchange a request through open transactions",
        params: &[p("request", 20, i64::MIN)],
        blocking: never,
        labels: master_worker_labels,
        build: master_worker,
    },
    Scenario {
        name: "masterworker-isolated",
        summary: "the same exchange inside isolated blocks; deadlocks",
        params: &[p("request", 20, i64::MIN)],
        blocking: always,
        labels: master_worker_labels,
        build: master_worker_isolated,
    },
    Scenario {
        name: "crowdfunding",
        summary: "backers pledge into a campaign that pays out once the target is met",
        params: &[p("backers", 2, 1), p("gift", 30, 0), p("balance", 30, 0), p("target", 60, 0)],
        blocking: crowdfunding_blocks,
        labels: crowdfunding_labels,
        build: crowdfunding,
    },
    Scenario {
        name: "barrier",
        summary: "threads join a barrier and wait until all have arrived",
        params: &[p("threads", 3, 1)],
        blocking: never,
        labels: |_| vec!["barrier".to_string()],
        build: barrier,
    },
    Scenario {
        name: "futures",
        summary: "a future computed by a forked worker inside the transaction",
        params: &[p("value", 42, i64::MIN)],
        blocking: never,
        labels: none,
        build: futures,
    },
    Scenario {
        name: "futures-throw",
        summary: "the worker throws, aborting the transaction that spawned it",
        params: &[p("value", 42, i64::MIN)],
        blocking: never,
        labels: none,
        build: futures_throw,
    },
    Scenario {
        name: "mvar",
        summary: "one value passed through a one-slot buffer",
        params: &[p("value", 7, i64::MIN)],
        blocking: never,
        labels: |_| vec!["m".to_string()],
        build: mvar,
    },
    Scenario {
        name: "petri-simple",
        summary: "two transitions compete for a single token; one round each",
        params: &[],
        blocking: always,
        labels: petri_simple_labels,
        build: petri_simple,
    },
    Scenario {
        name: "philosophers",
        summary: "dining philosophers as a Petri net, firing forever",
        params: &[p("n", 3, 2)],
        blocking: never,
        labels: philosopher_labels,
        build: philosophers,
    },
    Scenario {
        name: "echo",
        summary: "copy characters from input to output",
        params: &[p("chars", 3, 0)],
        blocking: never,
        labels: none,
        build: echo,
    },
];
