//! Hierarchical network model and per-device routing tables.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    GroupServer,
    Router,
    Switch,
    Host,
}

impl NodeKind {
    /// Group servers and routers hold routing tables and run fault detection.
    pub fn is_routing(self) -> bool {
        matches!(self, NodeKind::GroupServer | NodeKind::Router)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub address: Address,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub propagation_delay_ms: u64,
    pub capacity_bps: u64,
    pub up: bool,
}

impl Link {
    pub fn other(&self, end: NodeId) -> Option<NodeId> {
        if end == self.a {
            Some(self.b)
        } else if end == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Interface number on a routing device, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interface(pub u16);

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "if{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionType {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionStatus {
    Inactive = 0,
    Active = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub network_address: Address,
    /// `None` for direct entries.
    pub next_hop: Option<Address>,
    pub interface: Interface,
    pub connection_type: ConnectionType,
    pub connection_status: ConnectionStatus,
    /// Neighbor the entry forwards through (the destination itself when direct).
    pub via: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hop {
    pub interface: Interface,
    pub neighbor: NodeId,
}

/// Result of a route lookup for a known destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Active(Hop),
    /// An entry exists but its connection status is inactive.
    Inactive(Hop),
}

impl Lookup {
    pub fn valid(self) -> Option<Hop> {
        match self {
            Lookup::Active(h) => Some(h),
            Lookup::Inactive(_) => None,
        }
    }

    pub fn hop(self) -> Hop {
        match self {
            Lookup::Active(h) | Lookup::Inactive(h) => h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastClass {
    Unicast,
    Multicast,
    Broadcast,
}

pub fn map_destination(d: Address) -> CastClass {
    if d == Address::BROADCAST {
        CastClass::Broadcast
    } else if (224..=239).contains(&d.0[0]) {
        CastClass::Multicast
    } else {
        CastClass::Unicast
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("duplicate address {0}")]
    DuplicateAddress(Address),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("link {0} connects a node to itself")]
    SelfLoop(String),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(String, String),
    #[error("link {0}-{1} needs positive delay and capacity")]
    InvalidLink(String, String),
    #[error("host `{0}` must attach to exactly one switch")]
    HostAttachment(String),
    #[error("switch `{0}` has more than one uplink")]
    SwitchUplinks(String),
    #[error("topology is disconnected: `{0}` is unreachable")]
    Disconnected(String),
    #[error("ambiguous route: the link graph is not a tree ({links} links for {nodes} nodes)")]
    AmbiguousRoute { nodes: usize, links: usize },
    #[error("no route to {0}")]
    NoRoute(Address),
    #[error("`{neighbor}` is not directly connected to `{router}`")]
    NotAdjacent { router: String, neighbor: String },
    #[error("`{0}` keeps no routing table")]
    NoTable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    pub owner: NodeId,
    pub entries: Vec<RouteEntry>,
}

impl RoutingTable {
    pub fn entry(&self, dest: Address) -> Option<&RouteEntry> {
        self.entries.iter().find(|e| e.network_address == dest)
    }

    pub fn direct_entries(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries
            .iter()
            .filter(|e| e.connection_type == ConnectionType::Direct)
    }

    pub fn direct_to(&self, neighbor: NodeId) -> Option<&RouteEntry> {
        self.direct_entries().find(|e| e.via == neighbor)
    }

    pub fn status_of(&self, neighbor: NodeId) -> Option<ConnectionStatus> {
        self.direct_to(neighbor).map(|e| e.connection_status)
    }

    pub fn next_hop(&self, dest: Address) -> Result<Lookup, TopologyError> {
        let e = self.entry(dest).ok_or(TopologyError::NoRoute(dest))?;
        let hop = Hop {
            interface: e.interface,
            neighbor: e.via,
        };
        Ok(match e.connection_status {
            ConnectionStatus::Active => Lookup::Active(hop),
            ConnectionStatus::Inactive => Lookup::Inactive(hop),
        })
    }

    /// Sets the status of the direct entry for `neighbor` and of every
    /// indirect entry routed through it. Returns the number of entries whose
    /// status changed, or `None` if `neighbor` is not directly connected.
    pub fn set_status(&mut self, neighbor: NodeId, status: ConnectionStatus) -> Option<usize> {
        self.direct_to(neighbor)?;
        let mut changed = 0;
        for e in self.entries.iter_mut().filter(|e| e.via == neighbor) {
            if e.connection_status != status {
                e.connection_status = status;
                changed += 1;
            }
        }
        Some(changed)
    }

    /// Forwarding targets for `dest`. An empty list means nothing valid.
    pub fn find_interfaces(
        &self,
        dest: Address,
        cast: CastClass,
        arrival: Option<Interface>,
    ) -> Vec<Hop> {
        match cast {
            CastClass::Unicast => self
                .next_hop(dest)
                .ok()
                .and_then(Lookup::valid)
                .into_iter()
                .collect(),
            // no group membership: multicast fans out like broadcast
            CastClass::Broadcast | CastClass::Multicast => self
                .direct_entries()
                .filter(|e| e.connection_status == ConnectionStatus::Active)
                .filter(|e| Some(e.interface) != arrival)
                .map(|e| Hop {
                    interface: e.interface,
                    neighbor: e.via,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Default)]
pub struct TopologyBuilder {
    nodes: Vec<Node>,
    links: Vec<(String, String, u64, u64)>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, name: impl Into<String>, kind: NodeKind, address: Address) -> &mut Self {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            id,
            name: name.into(),
            kind,
            address,
        });
        self
    }

    pub fn link(
        &mut self,
        a: impl Into<String>,
        b: impl Into<String>,
        propagation_delay_ms: u64,
        capacity_bps: u64,
    ) -> &mut Self {
        self.links
            .push((a.into(), b.into(), propagation_delay_ms, capacity_bps));
        self
    }

    /// Validates the hierarchy and derives every routing table.
    pub fn build(&self) -> Result<Topology, TopologyError> {
        let mut by_name = HashMap::new();
        let mut by_address = HashMap::new();
        for n in &self.nodes {
            if by_name.insert(n.name.clone(), n.id).is_some() {
                return Err(TopologyError::DuplicateName(n.name.clone()));
            }
            if by_address.insert(n.address, n.id).is_some() {
                return Err(TopologyError::DuplicateAddress(n.address));
            }
        }
        let lookup = |name: &str| {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| TopologyError::UnknownNode(name.to_owned()))
        };
        let mut links = Vec::with_capacity(self.links.len());
        for (a, b, delay, cap) in &self.links {
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(TopologyError::SelfLoop(a.clone()));
            }
            if *delay == 0 || *cap == 0 {
                return Err(TopologyError::InvalidLink(a.clone(), b.clone()));
            }
            let dup = links
                .iter()
                .any(|l: &Link| (l.a == ia && l.b == ib) || (l.a == ib && l.b == ia));
            if dup {
                return Err(TopologyError::DuplicateLink(a.clone(), b.clone()));
            }
            links.push(Link {
                a: ia,
                b: ib,
                propagation_delay_ms: *delay,
                capacity_bps: *cap,
                up: true,
            });
        }
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (i, l) in links.iter().enumerate() {
            adjacency[l.a.index()].push((l.b, i));
            adjacency[l.b.index()].push((l.a, i));
        }
        let mut topo = Topology {
            nodes: self.nodes.clone(),
            links,
            adjacency,
            by_name,
            by_address,
            tables: BTreeMap::new(),
        };
        topo.check_attachments()?;
        topo.derive_routing_tables()?;
        Ok(topo)
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    adjacency: Vec<Vec<(NodeId, usize)>>,
    by_name: HashMap<String, NodeId>,
    by_address: HashMap<Address, NodeId>,
    tables: BTreeMap<NodeId, RoutingTable>,
}

/// Default propagation delay between adjacent devices.
pub const PAPER_LINK_DELAY_MS: u64 = 50;
/// Default link capacity.
pub const PAPER_LINK_CAPACITY_BPS: u64 = 1_000_000;
pub const PAPER_HOSTS_PER_SWITCH: u8 = 3;

const PAPER_EDGES: [(&str, &str); 12] = [
    ("GS1", "R1"),
    ("R1", "R2"),
    ("R1", "R3"),
    ("R2", "R4"),
    ("R2", "R5"),
    ("R4", "SW1"),
    ("R5", "SW2"),
    ("R3", "SW4"),
    ("R3", "R6"),
    ("R6", "SW3"),
    ("R6", "R7"),
    ("R7", "SW5"),
];

/// The 13-device reference hierarchy with three hosts per switch.
pub fn build_paper_topology() -> Topology {
    paper_topology(PAPER_HOSTS_PER_SWITCH)
}

/// Reference hierarchy with `hosts_per_switch` hosts named `SWk-1..`.
///
/// Addresses: `GS1` 10.0.0.1, `Rk` 10.0.1.k, `SWk` 10.0.2.k, `SWk-h` 192.168.k.h.
pub fn paper_topology(hosts_per_switch: u8) -> Topology {
    let mut b = TopologyBuilder::new();
    b.node("GS1", NodeKind::GroupServer, Address::new(10, 0, 0, 1));
    for r in 1..=7 {
        b.node(format!("R{r}"), NodeKind::Router, Address::new(10, 0, 1, r));
    }
    for s in 1..=5 {
        b.node(format!("SW{s}"), NodeKind::Switch, Address::new(10, 0, 2, s));
        for h in 1..=hosts_per_switch {
            b.node(format!("SW{s}-{h}"), NodeKind::Host, Address::new(192, 168, s, h));
        }
    }
    for (x, y) in PAPER_EDGES {
        b.link(x, y, PAPER_LINK_DELAY_MS, PAPER_LINK_CAPACITY_BPS);
    }
    for s in 1..=5 {
        for h in 1..=hosts_per_switch {
            b.link(
                format!("SW{s}"),
                format!("SW{s}-{h}"),
                PAPER_LINK_DELAY_MS,
                PAPER_LINK_CAPACITY_BPS,
            );
        }
    }
    b.build().expect("reference topology is a valid tree")
}

impl Topology {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn address(&self, id: NodeId) -> Address {
        self.nodes[id.index()].address
    }

    pub fn by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn by_address(&self, a: Address) -> Option<NodeId> {
        self.by_address.get(&a).copied()
    }

    pub fn routing_devices(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.kind.is_routing())
            .map(|n| n.id)
    }

    /// Neighbors of `id` together with the index of the connecting link.
    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[id.index()]
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.adjacency[a.index()]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, l)| l)
    }

    pub fn routing_table(&self, id: NodeId) -> Option<&RoutingTable> {
        self.tables.get(&id)
    }

    pub fn tables(&self) -> &BTreeMap<NodeId, RoutingTable> {
        &self.tables
    }

    /// Unique tree path from `from` to `to`, both ends included.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        let parent = self.bfs_parents(to);
        let mut path = vec![from];
        let mut at = from;
        while at != to {
            at = parent[at.index()]?;
            path.push(at);
        }
        Some(path)
    }

    /// For a switch: the port toward `dest` (an attached host, otherwise
    /// the uplink).
    pub fn switch_port(&self, switch: NodeId, dest: Address) -> Option<NodeId> {
        let ports = self.neighbors(switch);
        ports
            .iter()
            .find(|(n, _)| self.address(*n) == dest)
            .or_else(|| {
                ports
                    .iter()
                    .find(|(n, _)| self.node(*n).kind != NodeKind::Host)
            })
            .map(|&(n, _)| n)
    }

    /// The single device a host is cabled to.
    pub fn attachment(&self, host: NodeId) -> Option<NodeId> {
        self.neighbors(host).first().map(|&(n, _)| n)
    }

    pub fn next_hop(&self, router: NodeId, dest: Address) -> Result<Lookup, TopologyError> {
        self.table_of(router)?.next_hop(dest)
    }

    pub fn set_status(
        &mut self,
        router: NodeId,
        neighbor: NodeId,
        status: ConnectionStatus,
    ) -> Result<usize, TopologyError> {
        let router_name = self.name(router).to_owned();
        let neighbor_name = self.name(neighbor).to_owned();
        let table = self
            .tables
            .get_mut(&router)
            .ok_or(TopologyError::NoTable(router_name.clone()))?;
        table
            .set_status(neighbor, status)
            .ok_or(TopologyError::NotAdjacent {
                router: router_name,
                neighbor: neighbor_name,
            })
    }

    pub fn find_interfaces(
        &self,
        router: NodeId,
        dest: Address,
        cast: CastClass,
        arrival: Option<Interface>,
    ) -> Result<Vec<Hop>, TopologyError> {
        Ok(self.table_of(router)?.find_interfaces(dest, cast, arrival))
    }

    fn table_of(&self, router: NodeId) -> Result<&RoutingTable, TopologyError> {
        self.tables
            .get(&router)
            .ok_or_else(|| TopologyError::NoTable(self.name(router).to_owned()))
    }

    fn check_attachments(&self) -> Result<(), TopologyError> {
        for n in &self.nodes {
            let ports = &self.adjacency[n.id.index()];
            match n.kind {
                NodeKind::Host => {
                    let ok = ports.len() == 1
                        && self.node(ports[0].0).kind == NodeKind::Switch;
                    if !ok {
                        return Err(TopologyError::HostAttachment(n.name.clone()));
                    }
                }
                NodeKind::Switch => {
                    let uplinks = ports
                        .iter()
                        .filter(|(p, _)| self.node(*p).kind != NodeKind::Host)
                        .count();
                    if uplinks > 1 {
                        return Err(TopologyError::SwitchUplinks(n.name.clone()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Rebuilds every routing table from the link graph. Statuses reset to
    /// active. Direct entries are numbered 1.. in neighbor-name order;
    /// indirect entries follow in node order.
    pub fn derive_routing_tables(&mut self) -> Result<(), TopologyError> {
        let nodes = self.nodes.len();
        if self.links.len() + 1 != nodes {
            return Err(TopologyError::AmbiguousRoute {
                nodes,
                links: self.links.len(),
            });
        }
        let mut tables = BTreeMap::new();
        for router in self.routing_devices() {
            let parent = self.bfs_parents(router);
            if let Some(n) = self
                .nodes
                .iter()
                .find(|n| n.id != router && parent[n.id.index()].is_none())
            {
                return Err(TopologyError::Disconnected(n.name.clone()));
            }
            let mut direct: Vec<NodeId> = self.adjacency[router.index()]
                .iter()
                .map(|&(n, _)| n)
                .collect();
            direct.sort_by(|a, b| self.name(*a).cmp(self.name(*b)));
            let iface_of: HashMap<NodeId, Interface> = direct
                .iter()
                .enumerate()
                .map(|(i, &n)| (n, Interface(i as u16 + 1)))
                .collect();
            let mut entries: Vec<RouteEntry> = direct
                .iter()
                .map(|&n| RouteEntry {
                    network_address: self.address(n),
                    next_hop: None,
                    interface: iface_of[&n],
                    connection_type: ConnectionType::Direct,
                    connection_status: ConnectionStatus::Active,
                    via: n,
                })
                .collect();
            for n in &self.nodes {
                if n.id == router || iface_of.contains_key(&n.id) {
                    continue;
                }
                // walk back toward the router; the last node before it is the first hop
                let mut at = n.id;
                loop {
                    let p = parent[at.index()].expect("connected");
                    if p == router {
                        break;
                    }
                    at = p;
                }
                entries.push(RouteEntry {
                    network_address: n.address,
                    next_hop: Some(self.address(at)),
                    interface: iface_of[&at],
                    connection_type: ConnectionType::Indirect,
                    connection_status: ConnectionStatus::Active,
                    via: at,
                });
            }
            tables.insert(router, RoutingTable { owner: router, entries });
        }
        self.tables = tables;
        Ok(())
    }

    /// Parent pointers of a BFS tree rooted at `root` (root has `None`).
    fn bfs_parents(&self, root: NodeId) -> Vec<Option<NodeId>> {
        let mut parent = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        seen[root.index()] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(at) = queue.pop_front() {
            for &(n, _) in &self.adjacency[at.index()] {
                if !seen[n.index()] {
                    seen[n.index()] = true;
                    parent[n.index()] = Some(at);
                    queue.push_back(n);
                }
            }
        }
        parent
    }
}
