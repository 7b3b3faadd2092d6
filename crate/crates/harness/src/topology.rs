//! Harvest topologies: simulated providers, repairing proxies and
//! aggregators wired into a DAG, each with a real listener.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use oairelay_aggregator::{
    Aggregator, AggregatorConfig, CollisionPolicy, HarvestSummary, RepositoryConfig,
};
use oairelay_core::{Clock, SimClock};
use oairelay_gateway::{GatewayConfig, GatewayState};
use oairelay_proxy::{ProxyConfig, ProxyRoute, ProxyState};
use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::EdgeRef;
use tempfile::TempDir;
use tokio::net::TcpListener;

use crate::net::{bind_local, on_signal, ServerTask};
use crate::simdp::{SimDpConfig, SimDpHandle};

/// An aggregator with its HTTP listener and on-disk store.
pub struct AggregatorNode {
    name: String,
    config: AggregatorConfig,
    clock: Arc<dyn Clock>,
    addr: SocketAddr,
    agg: Option<Arc<Aggregator>>,
    server: Option<ServerTask>,
}

impl AggregatorNode {
    /// Binds first so the public URL is known before the aggregator is
    /// built. `config.storage_dir` is kept as given.
    pub async fn spawn(
        name: &str,
        mut config: AggregatorConfig,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Self> {
        let listener = bind_local().await?;
        let addr = listener.local_addr()?;
        config.listen = addr;
        config.public_url = Some(format!("http://{addr}"));
        let mut node = Self {
            name: name.to_owned(),
            config,
            clock,
            addr,
            agg: None,
            server: None,
        };
        node.start(listener)?;
        Ok(node)
    }

    fn start(&mut self, listener: TcpListener) -> anyhow::Result<()> {
        let agg = Arc::new(
            Aggregator::new(self.config.clone(), self.clock.clone())
                .with_context(|| format!("starting aggregator {}", self.name))?,
        );
        let served = agg.clone();
        self.server = Some(ServerTask::spawn(listener, move |l, rx| {
            oairelay_aggregator::serve(l, served, on_signal(rx))
        })?);
        self.agg = Some(agg);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    pub fn is_running(&self) -> bool {
        self.agg.is_some()
    }

    /// The running aggregator. Panics when the node is down.
    pub fn aggregator(&self) -> &Arc<Aggregator> {
        self.agg.as_ref().unwrap_or_else(|| panic!("aggregator {} is down", self.name))
    }

    pub fn root_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn base_url(&self) -> String {
        self.config.aggregated_base_url()
    }

    pub fn wrapped_url(&self, repo: &str) -> String {
        self.config.wrapped_base_url(repo)
    }

    /// Adds a source before the next restart and registers it now if the
    /// node is up.
    pub async fn add_source(&mut self, rc: RepositoryConfig) -> anyhow::Result<()> {
        self.config.repositories.push(rc.clone());
        if let Some(agg) = &self.agg {
            agg.register(rc).await.map_err(|e| anyhow!("{}: {e}", self.name))?;
        }
        Ok(())
    }

    pub async fn harvest(&self, repo: &str) -> anyhow::Result<HarvestSummary> {
        self.aggregator()
            .harvest_repository(repo)
            .await
            .ok_or_else(|| anyhow!("{} has no source {repo}", self.name))
    }

    /// Takes the node off the network without flushing anything.
    pub async fn kill(&mut self) {
        if let Some(mut server) = self.server.take() {
            server.stop().await;
        }
        self.agg = None;
    }

    /// Reopens the store and listens on the same port again.
    pub async fn restart(&mut self) -> anyhow::Result<()> {
        if self.is_running() {
            return Ok(());
        }
        let listener = TcpListener::bind(self.addr).await?;
        self.start(listener)
    }
}

/// A repairing proxy in front of some providers.
pub struct ProxyNode {
    pub name: String,
    state: Arc<ProxyState>,
    server: ServerTask,
    prefix: String,
}

impl ProxyNode {
    pub async fn spawn(name: &str, routes: Vec<ProxyRoute>) -> anyhow::Result<Self> {
        let listener = bind_local().await?;
        let config = ProxyConfig {
            listen: listener.local_addr()?,
            routes,
            ..ProxyConfig::default()
        };
        let prefix = config.prefix.clone();
        let state = Arc::new(ProxyState::new(&config)?);
        let served = state.clone();
        let server = ServerTask::spawn(listener, move |l, rx| {
            oairelay_proxy::serve(l, served, on_signal(rx))
        })?;
        Ok(Self {
            name: name.to_owned(),
            state,
            server,
            prefix,
        })
    }

    pub fn state(&self) -> &Arc<ProxyState> {
        &self.state
    }

    pub fn root_url(&self) -> String {
        format!("http://{}", self.server.addr())
    }

    /// Path-mode URL for a routed repository.
    pub fn route_url(&self, repo: &str) -> String {
        format!("{}/{}/{repo}", self.root_url(), self.prefix)
    }

    pub async fn stop(&mut self) {
        self.server.stop().await;
    }
}

/// A crawler gateway over some aggregator.
pub struct GatewayNode {
    state: Arc<GatewayState>,
    server: ServerTask,
}

impl GatewayNode {
    /// `listen` and `public_url` are replaced by the bound address.
    pub async fn spawn(mut config: GatewayConfig) -> anyhow::Result<Self> {
        let listener = bind_local().await?;
        let addr = listener.local_addr()?;
        config.listen = addr;
        config.public_url = Some(format!("http://{addr}"));
        let state = Arc::new(GatewayState::new(config));
        let served = state.clone();
        let server = ServerTask::spawn(listener, move |l, rx| {
            oairelay_gateway::serve(l, served, on_signal(rx))
        })?;
        Ok(Self { state, server })
    }

    pub fn config(&self) -> &GatewayConfig {
        self.state.config()
    }

    pub fn root_url(&self) -> String {
        format!("http://{}", self.server.addr())
    }

    pub async fn stop(&mut self) {
        self.server.stop().await;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Provider,
    Aggregator,
}

/// A harvest DAG. Edges point from a source to the aggregator harvesting
/// it; node names double as repository ids inside each aggregator.
pub struct Topology {
    pub clock: SimClock,
    graph: DiGraph<(String, NodeKind), i64>,
    index: BTreeMap<String, NodeIndex>,
    pub providers: BTreeMap<String, SimDpHandle>,
    pub aggregators: BTreeMap<String, AggregatorNode>,
    storage: TempDir,
}

impl Topology {
    pub fn new(clock: SimClock) -> anyhow::Result<Self> {
        Ok(Self {
            clock,
            graph: DiGraph::new(),
            index: BTreeMap::new(),
            providers: BTreeMap::new(),
            aggregators: BTreeMap::new(),
            storage: tempfile::tempdir()?,
        })
    }

    fn shared_clock(&self) -> Arc<dyn Clock> {
        Arc::new(self.clock.clone())
    }

    fn add_node(&mut self, name: &str, kind: NodeKind) -> anyhow::Result<NodeIndex> {
        if self.index.contains_key(name) {
            bail!("node {name:?} already exists");
        }
        let ix = self.graph.add_node((name.to_owned(), kind));
        self.index.insert(name.to_owned(), ix);
        Ok(ix)
    }

    pub async fn add_provider(&mut self, config: SimDpConfig) -> anyhow::Result<&SimDpHandle> {
        let name = config.repository_id.clone();
        self.add_node(&name, NodeKind::Provider)?;
        let handle = SimDpHandle::spawn(config, self.shared_clock()).await?;
        Ok(self.providers.entry(name).or_insert(handle))
    }

    pub fn storage_dir(&self, name: &str) -> PathBuf {
        self.storage.path().join(name)
    }

    /// Adds an aggregator harvesting `sources` (with their trust ranks).
    /// Sources must already exist; the graph stays acyclic by construction
    /// and is checked anyway.
    pub async fn add_aggregator(
        &mut self,
        name: &str,
        policy: CollisionPolicy,
        sources: &[(&str, i64)],
    ) -> anyhow::Result<&AggregatorNode> {
        let mut repositories = Vec::new();
        for (src, rank) in sources {
            repositories.push(RepositoryConfig {
                id: (*src).to_owned(),
                base_url: self.base_url(src)?,
                trust_rank: *rank,
                poll_interval_secs: 3600,
                reliability: Default::default(),
                formats: None,
            });
        }
        let ix = self.add_node(name, NodeKind::Aggregator)?;
        for (src, rank) in sources {
            self.graph.add_edge(self.index[*src], ix, *rank);
        }
        if toposort(&self.graph, None).is_err() {
            bail!("adding {name} would create a harvest cycle");
        }
        std::fs::create_dir_all(self.storage_dir(name))?;
        let config = AggregatorConfig {
            repository_name: format!("Aggregator {name}"),
            storage_dir: Some(self.storage_dir(name)),
            page_size: 40,
            request_timeout_ms: 10_000,
            policy,
            repositories,
            ..AggregatorConfig::default()
        };
        let node = AggregatorNode::spawn(name, config, self.shared_clock()).await?;
        Ok(self.aggregators.entry(name.to_owned()).or_insert(node))
    }

    /// Base URL a harvester uses for node `name`.
    pub fn base_url(&self, name: &str) -> anyhow::Result<String> {
        if let Some(p) = self.providers.get(name) {
            return Ok(p.base_url().to_owned());
        }
        if let Some(a) = self.aggregators.get(name) {
            return Ok(a.base_url());
        }
        bail!("unknown node {name:?}")
    }

    pub fn provider(&self, name: &str) -> anyhow::Result<&SimDpHandle> {
        self.providers.get(name).ok_or_else(|| anyhow!("unknown provider {name:?}"))
    }

    pub fn provider_mut(&mut self, name: &str) -> anyhow::Result<&mut SimDpHandle> {
        self.providers.get_mut(name).ok_or_else(|| anyhow!("unknown provider {name:?}"))
    }

    pub fn aggregator(&self, name: &str) -> anyhow::Result<&AggregatorNode> {
        self.aggregators.get(name).ok_or_else(|| anyhow!("unknown aggregator {name:?}"))
    }

    pub fn aggregator_mut(&mut self, name: &str) -> anyhow::Result<&mut AggregatorNode> {
        self.aggregators.get_mut(name).ok_or_else(|| anyhow!("unknown aggregator {name:?}"))
    }

    /// Sources of an aggregator, in the order they were configured.
    pub fn sources(&self, name: &str) -> Vec<String> {
        let Some(ix) = self.index.get(name) else {
            return Vec::new();
        };
        let mut edges: Vec<_> = self
            .graph
            .edges_directed(*ix, petgraph::Direction::Incoming)
            .map(|e| (e.id(), self.graph[e.source()].0.clone()))
            .collect();
        edges.sort_by_key(|(id, _)| *id);
        edges.into_iter().map(|(_, n)| n).collect()
    }

    /// Aggregators in an order where every source is harvested before
    /// anything that harvests it.
    pub fn harvest_order(&self) -> Vec<String> {
        toposort(&self.graph, None)
            .expect("topology is acyclic")
            .into_iter()
            .filter(|ix| self.graph[*ix].1 == NodeKind::Aggregator)
            .map(|ix| self.graph[ix].0.clone())
            .collect()
    }

    /// One aggregator harvests the named sources in the given order.
    pub async fn harvest(&self, agg: &str, sources: &[&str]) -> anyhow::Result<Vec<HarvestSummary>> {
        let node = self.aggregator(agg)?;
        let mut out = Vec::new();
        for src in sources {
            let summary = node.harvest(src).await?;
            if let Some(e) = &summary.error {
                bail!("{agg} harvesting {src}: {e}");
            }
            out.push(summary);
        }
        Ok(out)
    }

    /// Harvests every edge once, sources before consumers.
    pub async fn harvest_to_quiescence(&self) -> anyhow::Result<Vec<HarvestSummary>> {
        let mut out = Vec::new();
        for agg in self.harvest_order() {
            let sources = self.sources(&agg);
            let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
            out.extend(self.harvest(&agg, &refs).await?);
        }
        Ok(out)
    }

    /// Kills every provider.
    pub async fn kill_providers(&mut self) {
        for p in self.providers.values_mut() {
            p.kill().await;
        }
    }

    pub fn total_provider_requests(&self) -> u64 {
        self.providers.values().map(|p| p.dp().requests()).sum()
    }
}

/// Trust ranks used by [`build_diamond`]: the mid tier ranks `ax` above
/// `bx` unless `bx_trusted` is set.
pub struct DiamondSpec {
    pub size: usize,
    pub mid_policy: CollisionPolicy,
    pub top_policy: CollisionPolicy,
    pub bx_trusted: bool,
}

impl DiamondSpec {
    pub fn new(size: usize, top_policy: CollisionPolicy) -> Self {
        Self {
            size,
            mid_policy: CollisionPolicy::default(),
            top_policy,
            bx_trusted: false,
        }
    }
}

/// Providers `a`, `b`, `x`; aggregators `ax` (a+x) and `bx` (b+x); and the
/// downstream `abx` harvesting both. Nothing is harvested yet.
pub async fn build_diamond(clock: SimClock, spec: DiamondSpec) -> anyhow::Result<Topology> {
    let mut t = Topology::new(clock)?;
    for name in ["a", "b", "x"] {
        t.add_provider(SimDpConfig::new(name, spec.size)).await?;
    }
    t.add_aggregator("ax", spec.mid_policy.clone(), &[("a", 1), ("x", 2)]).await?;
    t.add_aggregator("bx", spec.mid_policy.clone(), &[("b", 1), ("x", 2)]).await?;
    let (ax, bx) = if spec.bx_trusted { (2, 1) } else { (1, 2) };
    t.add_aggregator("abx", spec.top_policy.clone(), &[("ax", ax), ("bx", bx)]).await?;
    Ok(t)
}
