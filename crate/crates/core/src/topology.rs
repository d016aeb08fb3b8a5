//! The HAN/NAN/WAN communication graph, node metadata and ego-centric star
//! subgraphs.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Bumped whenever [`GridTopology::default_grid`] changes.
pub const TOPOLOGY_VERSION: u32 = 1;

macro_rules! label_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            /// Position within [`Self::ALL`]; the one-hot slot.
            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label() == s)
                    .ok_or_else(|| Error::Format(format!(concat!("unknown ", stringify!($name), " {:?}"), s)))
            }
        }
    };
}

label_enum!(Role {
    SmartMeter => "smart_meter",
    Der => "der",
    NeighborhoodGateway => "neighborhood_gateway",
    Scada => "scada",
    Pmu => "pmu",
    SubstationController => "substation_controller",
    Ami => "ami",
});

label_enum!(Layer {
    Han => "han",
    Nan => "nan",
    Wan => "wan",
});

label_enum!(Technology {
    ZigBee => "zigbee",
    Plc => "plc",
    Lte => "lte",
    FiberEthernet => "fiber_ethernet",
});

impl Technology {
    pub fn is_wireless(self) -> bool {
        matches!(self, Technology::ZigBee | Technology::Lte)
    }
}

impl Role {
    /// The tier a role is allowed to sit in.
    pub fn layer(self) -> Layer {
        match self {
            Role::SmartMeter | Role::Der => Layer::Han,
            Role::NeighborhoodGateway => Layer::Nan,
            Role::Scada | Role::Pmu | Role::SubstationController | Role::Ami => Layer::Wan,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeDescriptor {
    pub id: usize,
    pub name: String,
    pub role: Role,
    pub layer: Layer,
    pub technology: Technology,
    pub wireless: bool,
}

impl NodeDescriptor {
    /// Builds a descriptor, deriving the layer from the role and the wireless
    /// flag from the technology.
    pub fn new(id: usize, name: &str, role: Role, technology: Technology) -> Self {
        NodeDescriptor {
            id,
            name: name.to_string(),
            role,
            layer: role.layer(),
            technology,
            wireless: technology.is_wireless(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.wireless != self.technology.is_wireless() {
            return Err(Error::Config(format!(
                "node {}: wireless flag disagrees with technology {}",
                self.id, self.technology
            )));
        }
        if self.layer != self.role.layer() {
            return Err(Error::Config(format!(
                "node {}: role {} does not belong in layer {}",
                self.id, self.role, self.layer
            )));
        }
        Ok(())
    }
}

/// Static undirected communication graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridTopology {
    nodes: Vec<NodeDescriptor>,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<u8>>,
}

impl GridTopology {
    /// Validates descriptors and edges; the graph must be connected.
    pub fn new(nodes: Vec<NodeDescriptor>, edge_list: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Config(format!("node at position {i} has id {}", node.id)));
            }
            node.validate()?;
        }
        let mut edges = BTreeSet::new();
        let mut adjacency = vec![vec![0u8; n]; n];
        for &(a, b) in edge_list {
            if a >= n || b >= n {
                return Err(Error::UnknownNode(a.max(b)));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop on node {a}")));
            }
            edges.insert((a.min(b), a.max(b)));
            adjacency[a][b] = 1;
            adjacency[b][a] = 1;
        }
        let topo = GridTopology {
            nodes,
            edges,
            adjacency,
        };
        if !topo.is_connected() {
            return Err(Error::Config("topology is not connected".into()));
        }
        Ok(topo)
    }

    /// The canonical 12-node grid.
    ///
    /// ```text
    ///  HAN   sm-1  sm-2      sm-3  der-1   der-2(plc)
    ///          \   /           \   /        |
    ///  NAN     gw-1 ---------- gw-2 --------+
    ///           | \            / |
    ///  WAN      |  substation-ctrl (lte)    ami (fiber) <- gw-1, gw-2
    ///           |      |  fiber backbone: scada, pmu-1, pmu-2
    /// ```
    ///
    /// Wireless links: ZigBee access and mesh links in the HAN, LTE between
    /// the gateways and from each gateway to the substation controller.
    pub fn default_grid() -> Self {
        use Role::*;
        use Technology::*;
        let nodes = vec![
            NodeDescriptor::new(0, "sm-1", SmartMeter, ZigBee),
            NodeDescriptor::new(1, "sm-2", SmartMeter, ZigBee),
            NodeDescriptor::new(2, "sm-3", SmartMeter, ZigBee),
            NodeDescriptor::new(3, "der-1", Der, ZigBee),
            NodeDescriptor::new(4, "der-2", Der, Plc),
            NodeDescriptor::new(5, "gw-1", NeighborhoodGateway, Lte),
            NodeDescriptor::new(6, "gw-2", NeighborhoodGateway, Lte),
            NodeDescriptor::new(7, "scada", Scada, FiberEthernet),
            NodeDescriptor::new(8, "pmu-1", Pmu, FiberEthernet),
            NodeDescriptor::new(9, "pmu-2", Pmu, FiberEthernet),
            NodeDescriptor::new(10, "substation-ctrl", SubstationController, Lte),
            NodeDescriptor::new(11, "ami", Ami, FiberEthernet),
        ];
        let edges = [
            // HAN access and mesh
            (0, 5),
            (1, 5),
            (0, 1),
            (2, 6),
            (3, 6),
            (2, 3),
            (4, 6),
            // NAN backbone and uplinks
            (5, 6),
            (5, 10),
            (6, 10),
            (5, 11),
            (6, 11),
            // WAN fiber
            (7, 10),
            (7, 8),
            (7, 9),
            (7, 11),
            (8, 10),
            (9, 10),
        ];
        GridTopology::new(nodes, &edges).expect("default topology is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeDescriptor] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&NodeDescriptor> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn neighbors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[id]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(j, _)| j)
    }

    /// A link is wireless when both of its endpoints are.
    pub fn is_wireless_link(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b] == 1 && self.nodes[a].wireless && self.nodes[b].wireless
    }

    /// Ids of the nodes that act as federated clients, ascending.
    pub fn wireless_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.wireless).map(|n| n.id).collect()
    }

    fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u).collect::<Vec<_>>() {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Node table plus edge list, one record per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "topology_version\t{TOPOLOGY_VERSION}").unwrap();
        for n in &self.nodes {
            writeln!(
                s,
                "node\t{}\t{}\t{}\t{}\t{}\t{}",
                n.id,
                n.name,
                n.role,
                n.layer,
                n.technology,
                if n.wireless { "wireless" } else { "wired" }
            )
            .unwrap();
        }
        for (a, b) in &self.edges {
            writeln!(s, "edge\t{a}\t{b}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad topology record {line:?}"));
            match fields.as_slice() {
                ["topology_version", v] => {
                    if v.parse::<u32>().map_err(|_| bad())? != TOPOLOGY_VERSION {
                        return Err(Error::Format(format!("unsupported topology version {v}")));
                    }
                }
                ["node", id, name, role, layer, tech, kind] => {
                    let node = NodeDescriptor {
                        id: id.parse().map_err(|_| bad())?,
                        name: name.to_string(),
                        role: role.parse()?,
                        layer: layer.parse()?,
                        technology: tech.parse()?,
                        wireless: match *kind {
                            "wireless" => true,
                            "wired" => false,
                            _ => return Err(bad()),
                        },
                    };
                    nodes.push(node);
                }
                ["edge", a, b] => {
                    edges.push((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
                }
                _ => return Err(bad()),
            }
        }
        GridTopology::new(nodes, &edges)
    }
}

/// Ego node plus the wireless neighbors it exchanges traffic with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StarSubgraph {
    pub ego: usize,
    /// Ascending node ids; local index `j + 1` in the star.
    pub neighbors: Vec<usize>,
}

impl StarSubgraph {
    /// `K_i`
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    /// `N_i = 1 + K_i`
    pub fn size(&self) -> usize {
        1 + self.neighbors.len()
    }

    /// Local-index edge list: `(0, j)` and `(j, 0)` for every neighbor.
    pub fn edge_index(&self) -> Vec<(usize, usize)> {
        (1..=self.k()).flat_map(|j| [(0, j), (j, 0)]).collect()
    }
}

/// Star over `ego` and its wireless neighbors. Wired nodes are not clients.
pub fn star_subgraph(topo: &GridTopology, ego: usize) -> Result<StarSubgraph> {
    let node = topo.node(ego)?;
    if !node.wireless {
        return Err(Error::NotAClient(ego));
    }
    let neighbors = topo
        .neighbors(ego)
        .filter(|&j| topo.is_wireless_link(ego, j))
        .collect();
    Ok(StarSubgraph { ego, neighbors })
}

/// Length of [`metadata_vector`]: role, layer and technology one-hots plus the
/// wireless flag.
pub const METADATA_DIM: usize = 7 + 3 + 4 + 1;

pub fn metadata_vector(node: &NodeDescriptor) -> [f64; METADATA_DIM] {
    let mut m = [0.0; METADATA_DIM];
    m[node.role.index()] = 1.0;
    m[7 + node.layer.index()] = 1.0;
    m[10 + node.technology.index()] = 1.0;
    m[14] = if node.wireless { 1.0 } else { 0.0 };
    m
}
