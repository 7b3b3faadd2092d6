//! Declarative scenarios: a topology, then timed steps and assertions run
//! against the simulated clock.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{anyhow, Context};
use chrono::{DateTime, Utc};
use oairelay_aggregator::CollisionPolicy;
use oairelay_core::{Clock, Datestamp, SimClock};
use serde::{Deserialize, Serialize};

use crate::corpus::identifier;
use crate::oracle::{exercise_verbs, list_records, oracle_direct_harvest};
use crate::simdp::SimDpConfig;
use crate::topology::Topology;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub start: DateTime<Utc>,
    #[serde(default)]
    pub providers: Vec<SimDpConfig>,
    #[serde(default)]
    pub aggregators: Vec<AggregatorSpec>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub name: String,
    /// Harvested nodes; trust rank follows list position.
    pub sources: Vec<String>,
    #[serde(default)]
    pub policy: CollisionPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// Without `aggregator`, every aggregator harvests every source in
    /// dependency order.
    Harvest {
        aggregator: Option<String>,
        #[serde(default)]
        sources: Vec<String>,
        /// The harvest is expected to fail (source down, crash).
        #[serde(default)]
        expect_failure: bool,
    },
    Mutate {
        provider: String,
        #[serde(default)]
        indices: Vec<usize>,
        #[serde(default)]
        random: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    Delete {
        provider: String,
        indices: Vec<usize>,
    },
    Kill {
        node: String,
    },
    Restart {
        node: String,
    },
    Advance {
        seconds: i64,
    },
    /// Makes the aggregator die after `after_writes` more record writes.
    Crash {
        aggregator: String,
        after_writes: usize,
    },
    /// Remembers the clock and provider request counters under `name`.
    Mark {
        name: String,
    },
    Assert(Assertion),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    RecordCount {
        aggregator: String,
        equals: usize,
    },
    /// No provider has seen a request since the mark.
    RequestsUnchanged {
        mark: String,
    },
    /// All six verbs answer validly on the aggregated view, or on the
    /// wrapped view of `view`.
    Serves {
        aggregator: String,
        #[serde(default)]
        view: Option<String>,
    },
    /// The wrapped view of `provider` is byte-identical to the provider.
    MatchesOracle {
        aggregator: String,
        provider: String,
    },
    /// ListRecords with from=mark returns exactly the records mutated or
    /// deleted since the mark.
    ChangedSince {
        aggregator: String,
        mark: String,
    },
    /// Both stores hold exactly the same versions.
    StoreEquals {
        aggregator: String,
        other: String,
    },
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct StepOutcome {
    pub index: usize,
    pub step: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub assertions: usize,
    pub failures: usize,
    pub steps: Vec<StepOutcome>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Every node a step or source refers to must be declared.
    pub fn check_references(&self) -> anyhow::Result<()> {
        let providers: BTreeSet<&str> =
            self.providers.iter().map(|p| p.repository_id.as_str()).collect();
        let aggregators: BTreeSet<&str> = self.aggregators.iter().map(|a| a.name.as_str()).collect();
        let any = |n: &str| providers.contains(n) || aggregators.contains(n);
        let need = |ok: bool, what: &str, n: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("unknown {what} {n:?}"))
            }
        };
        for a in &self.aggregators {
            for s in &a.sources {
                need(any(s), "node", s)?;
            }
        }
        let mut marks = BTreeSet::new();
        for step in &self.steps {
            match step {
                Step::Harvest {
                    aggregator,
                    sources,
                    ..
                } => {
                    if let Some(a) = aggregator {
                        need(aggregators.contains(a.as_str()), "aggregator", a)?;
                    }
                    for s in sources {
                        need(any(s), "node", s)?;
                    }
                }
                Step::Mutate { provider, .. } | Step::Delete { provider, .. } => {
                    need(providers.contains(provider.as_str()), "provider", provider)?
                }
                Step::Kill { node } | Step::Restart { node } => need(any(node), "node", node)?,
                Step::Crash { aggregator, .. } => {
                    need(aggregators.contains(aggregator.as_str()), "aggregator", aggregator)?
                }
                Step::Mark { name } => {
                    marks.insert(name.as_str());
                }
                Step::Advance { .. } => {}
                Step::Assert(a) => {
                    let (aggs, mark): (Vec<&String>, Option<&String>) = match a {
                        Assertion::RecordCount { aggregator, .. }
                        | Assertion::Serves { aggregator, .. } => (vec![aggregator], None),
                        Assertion::MatchesOracle {
                            aggregator,
                            provider,
                        } => {
                            need(providers.contains(provider.as_str()), "provider", provider)?;
                            (vec![aggregator], None)
                        }
                        Assertion::ChangedSince { aggregator, mark } => {
                            (vec![aggregator], Some(mark))
                        }
                        Assertion::StoreEquals { aggregator, other } => {
                            (vec![aggregator, other], None)
                        }
                        Assertion::RequestsUnchanged { mark } => (vec![], Some(mark)),
                    };
                    for a in aggs {
                        need(aggregators.contains(a.as_str()), "aggregator", a)?;
                    }
                    if let Some(m) = mark {
                        need(marks.contains(m.as_str()), "mark", m)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the topology and runs every step. Assertion failures are
    /// reported, anything else aborts with an error.
    pub async fn run(&self) -> anyhow::Result<ScenarioReport> {
        self.check_references()?;
        let clock = SimClock::new(self.start);
        let mut topo = Topology::new(clock.clone())?;
        for p in &self.providers {
            topo.add_provider(p.clone()).await?;
        }
        for a in &self.aggregators {
            let sources: Vec<(&str, i64)> = a
                .sources
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i as i64 + 1))
                .collect();
            topo.add_aggregator(&a.name, a.policy.clone(), &sources).await?;
        }
        let mut runner = Runner {
            topo,
            marks: BTreeMap::new(),
        };
        let mut steps = Vec::new();
        for (index, step) in self.steps.iter().enumerate() {
            let label = serde_json::to_string(step)?;
            let outcome = match runner.step(step).await {
                Ok(detail) => StepOutcome {
                    index,
                    step: label,
                    passed: true,
                    detail,
                },
                Err(Failure::Assertion(detail)) => StepOutcome {
                    index,
                    step: label,
                    passed: false,
                    detail,
                },
                Err(Failure::Scenario(e)) => {
                    return Err(e.context(format!("step {index} ({label})")))
                }
            };
            steps.push(outcome);
        }
        let assertions = self
            .steps
            .iter()
            .filter(|s| matches!(s, Step::Assert(_)))
            .count();
        let failures = steps.iter().filter(|s| !s.passed).count();
        Ok(ScenarioReport {
            name: self.name.clone(),
            passed: failures == 0,
            assertions,
            failures,
            steps,
        })
    }
}

enum Failure {
    Assertion(String),
    Scenario(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Scenario(e)
    }
}

struct Mark {
    at: DateTime<Utc>,
    requests: u64,
    changed: BTreeSet<String>,
}

struct Runner {
    topo: Topology,
    marks: BTreeMap<String, Mark>,
}

fn check(ok: bool, detail: String) -> Result<String, Failure> {
    if ok {
        Ok(detail)
    } else {
        Err(Failure::Assertion(detail))
    }
}

impl Runner {
    fn changed(&mut self, ids: &[String]) {
        for m in self.marks.values_mut() {
            m.changed.extend(ids.iter().cloned());
        }
    }

    async fn step(&mut self, step: &Step) -> Result<String, Failure> {
        let topo = &mut self.topo;
        match step {
            Step::Harvest {
                aggregator,
                sources,
                expect_failure,
            } => {
                let result = match aggregator {
                    None => topo.harvest_to_quiescence().await,
                    Some(a) => {
                        let srcs = if sources.is_empty() {
                            topo.sources(a)
                        } else {
                            sources.clone()
                        };
                        let refs: Vec<&str> = srcs.iter().map(String::as_str).collect();
                        topo.harvest(a, &refs).await
                    }
                };
                match (result, expect_failure) {
                    (Ok(s), false) => {
                        let n: usize = s.iter().map(|s| s.ingested).sum();
                        Ok(format!("ingested {n}"))
                    }
                    (Err(e), true) => Ok(format!("failed as expected: {e}")),
                    (Ok(_), true) => Err(Failure::Assertion("harvest succeeded".into())),
                    (Err(e), false) => Err(Failure::Assertion(format!("{e:#}"))),
                }
            }
            Step::Mutate {
                provider,
                indices,
                random,
                seed,
            } => {
                let dp = topo.provider(provider)?.dp().clone();
                let mut ids: Vec<String> = indices.iter().map(|i| identifier(provider, *i)).collect();
                for id in &ids {
                    if !dp.mutate(id) {
                        return Err(anyhow!("{provider} has no record {id}").into());
                    }
                }
                if let Some(n) = random {
                    ids.extend(dp.mutate_random(*n, *seed));
                }
                self.changed(&ids);
                Ok(format!("mutated {}", ids.len()))
            }
            Step::Delete { provider, indices } => {
                let dp = topo.provider(provider)?.dp().clone();
                let ids: Vec<String> = indices.iter().map(|i| identifier(provider, *i)).collect();
                for id in &ids {
                    if !dp.delete(id) {
                        return Err(anyhow!("{provider} has no record {id}").into());
                    }
                }
                self.changed(&ids);
                Ok(format!("deleted {}", ids.len()))
            }
            Step::Kill { node } => {
                if let Ok(p) = topo.provider_mut(node) {
                    p.kill().await;
                } else {
                    topo.aggregator_mut(node)?.kill().await;
                }
                Ok(format!("{node} down"))
            }
            Step::Restart { node } => {
                if let Ok(p) = topo.provider_mut(node) {
                    p.restart().await.map_err(anyhow::Error::from)?;
                } else {
                    topo.aggregator_mut(node)?.restart().await?;
                }
                Ok(format!("{node} up"))
            }
            Step::Advance { seconds } => {
                topo.clock.advance_secs(*seconds);
                Ok(format!("now {}", Datestamp::seconds(topo.clock.now())))
            }
            Step::Crash {
                aggregator,
                after_writes,
            } => {
                topo.aggregator(aggregator)?.aggregator().crash_after(*after_writes);
                Ok(format!("{aggregator} dies after {after_writes} writes"))
            }
            Step::Mark { name } => {
                let mark = Mark {
                    at: topo.clock.now(),
                    requests: topo.total_provider_requests(),
                    changed: BTreeSet::new(),
                };
                self.marks.insert(name.clone(), mark);
                Ok(format!("mark {name}"))
            }
            Step::Assert(a) => self.assert(a).await,
        }
    }

    fn mark(&self, name: &str) -> Result<&Mark, Failure> {
        self.marks
            .get(name)
            .ok_or_else(|| Failure::Scenario(anyhow!("mark {name:?} is not set yet")))
    }

    async fn assert(&self, a: &Assertion) -> Result<String, Failure> {
        let topo = &self.topo;
        match a {
            Assertion::RecordCount { aggregator, equals } => {
                let n = topo.aggregator(aggregator)?.aggregator().store().record_count();
                check(n == *equals, format!("{aggregator} holds {n}, expected {equals}"))
            }
            Assertion::RequestsUnchanged { mark } => {
                let before = self.mark(mark)?.requests;
                let now = topo.total_provider_requests();
                check(
                    now == before,
                    format!("{} provider requests since {mark}", now - before),
                )
            }
            Assertion::Serves { aggregator, view } => {
                let node = topo.aggregator(aggregator)?;
                let url = match view {
                    Some(v) => node.wrapped_url(v),
                    None => node.base_url(),
                };
                match exercise_verbs(&url, "oai_dc").await {
                    Ok(n) => Ok(format!("{url} answered all verbs over {n} records")),
                    Err(e) => Err(Failure::Assertion(format!("{e:#}"))),
                }
            }
            Assertion::MatchesOracle {
                aggregator,
                provider,
            } => {
                let node = topo.aggregator(aggregator)?;
                let project = |recs: Vec<crate::oracle::OracleRecord>| {
                    recs.into_iter()
                        .map(|r| (r.identifier, r.deleted, r.metadata))
                        .collect::<BTreeSet<_>>()
                };
                let direct = oracle_direct_harvest(&[topo.base_url(provider)?], "oai_dc").await?;
                let wrapped = list_records(&node.wrapped_url(provider), "oai_dc", None, false)
                    .await
                    .map_err(|e| Failure::Assertion(format!("{e:#}")))?;
                let (direct, wrapped) = (project(direct), project(wrapped.records));
                let diff = direct.symmetric_difference(&wrapped).count();
                check(
                    diff == 0,
                    format!("{} records, {diff} differ", direct.len()),
                )
            }
            Assertion::ChangedSince { aggregator, mark } => {
                let m = self.mark(mark)?;
                let from = Datestamp::seconds(m.at).to_string();
                let node = topo.aggregator(aggregator)?;
                let listed = list_records(&node.base_url(), "oai_dc", Some(&from), false)
                    .await
                    .map_err(|e| Failure::Assertion(format!("{e:#}")))?;
                let got: BTreeSet<String> =
                    listed.records.into_iter().map(|r| r.identifier).collect();
                check(
                    got == m.changed,
                    format!(
                        "from={from}: {} returned, {} expected, {} differ",
                        got.len(),
                        m.changed.len(),
                        got.symmetric_difference(&m.changed).count()
                    ),
                )
            }
            Assertion::StoreEquals { aggregator, other } => {
                let a = topo.aggregator(aggregator)?.aggregator().store().snapshot();
                let b = topo.aggregator(other)?.aggregator().store().snapshot();
                let diverging = a.len().abs_diff(b.len())
                    + a.iter().zip(&b).filter(|(x, y)| x != y).count();
                check(
                    diverging == 0,
                    format!("{} vs {} versions, {diverging} diverge", a.len(), b.len()),
                )
            }
        }
    }
}
