//! Grid road networks and their lane-level graph.
//!
//! Lanes are numbered by sorting on `(row, col, slot, lane index)`. Slots
//! `0..4` are the approach sides (north, east, south, west) of the
//! downstream intersection; slots `4..8` are the exit sides of the upstream
//! intersection and are only used by fringe exit links. Lane index 0 is the
//! rightmost lane.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Side {
        Side::ALL[i % 4]
    }

    pub fn opposite(self) -> Side {
        Side::from_index(self.index() + 2)
    }

    /// Grid offset `(drow, dcol)` of the neighbour on this side. Row 0 is north.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Side::North => (-1, 0),
            Side::East => (0, 1),
            Side::South => (1, 0),
            Side::West => (0, -1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Movement {
    Right,
    Straight,
    Left,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Right, Movement::Straight, Movement::Left];

    /// Side through which a vehicle arriving from `approach` leaves.
    pub fn exit_side(self, approach: Side) -> Side {
        match self {
            Movement::Straight => approach.opposite(),
            Movement::Right => Side::from_index(approach.index() + 3),
            Movement::Left => Side::from_index(approach.index() + 1),
        }
    }

    pub fn between(approach: Side, exit: Side) -> Option<Movement> {
        Movement::ALL.into_iter().find(|m| m.exit_side(approach) == exit)
    }
}

/// Movements a lane may serve, given the lane count of its link.
pub fn lane_movements(lane_count: usize, index: usize) -> &'static [Movement] {
    const ALL: &[Movement] = &[Movement::Right, Movement::Straight, Movement::Left];
    const RS: &[Movement] = &[Movement::Right, Movement::Straight];
    const SL: &[Movement] = &[Movement::Straight, Movement::Left];
    match (lane_count, index) {
        (1, _) => ALL,
        (2, 0) => RS,
        (2, _) => SL,
        (_, 0) => &[Movement::Right],
        (k, i) if i + 1 == k => &[Movement::Left],
        _ => &[Movement::Straight],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum LinkKind {
    Internal,
    Entry,
    Exit,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Intersection {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub tls_program_id: String,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Link {
    pub id: usize,
    pub kind: LinkKind,
    /// Upstream intersection and the side it leaves through.
    pub from: Option<(usize, Side)>,
    /// Downstream intersection and the side it arrives on.
    pub to: Option<(usize, Side)>,
    pub length: f64,
    pub lane_count: usize,
    /// Id of the link's lane 0; lanes of a link are contiguous.
    pub first_lane: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Lane {
    pub id: usize,
    pub link: usize,
    pub index: usize,
    pub length: f64,
}

/// Detector distances measured upstream from the stop bar.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectorPlacement {
    pub stop_bar: f64,
    pub advanced: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Connection {
    pub intersection: usize,
    pub from_link: usize,
    pub to_link: usize,
    pub movement: Movement,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RoadNetwork {
    pub rows: usize,
    pub cols: usize,
    pub lane_length: f64,
    pub lanes_per_direction: usize,
    pub intersections: Vec<Intersection>,
    pub links: Vec<Link>,
    pub lanes: Vec<Lane>,
    pub detectors: Vec<DetectorPlacement>,
    pub connections: Vec<Connection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkError {
    InvalidGeometry(String),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
        }
    }
}

pub fn build_grid_network(
    rows: usize,
    cols: usize,
    lane_length: f64,
    lanes_per_direction: usize,
    advanced_distance: f64,
) -> Result<RoadNetwork, NetworkError> {
    if rows == 0 || cols == 0 {
        return Err(NetworkError::InvalidGeometry(format!(
            "grid must have at least one row and column, got {rows}x{cols}"
        )));
    }
    if lanes_per_direction == 0 {
        return Err(NetworkError::InvalidGeometry("lanes per direction must be >= 1".into()));
    }
    if !(advanced_distance > 0.0) || !(lane_length > advanced_distance) {
        return Err(NetworkError::InvalidGeometry(format!(
            "lane length {lane_length} must exceed advanced detector distance {advanced_distance} > 0"
        )));
    }

    let node = |r: usize, c: usize| r * cols + c;
    let intersections = (0..rows * cols)
        .map(|id| Intersection {
            id,
            row: id / cols,
            col: id % cols,
            tls_program_id: format!("tls_{}_{}", id / cols, id % cols),
        })
        .collect::<Vec<_>>();

    // (sort key, kind, from, to)
    let mut specs: Vec<((usize, usize, usize), LinkKind, Option<(usize, Side)>, Option<(usize, Side)>)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            for side in Side::ALL {
                let (dr, dc) = side.offset();
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                if inside {
                    // link arriving at (r, c) from its neighbour on `side`
                    let up = node(nr as usize, nc as usize);
                    specs.push((
                        (r, c, side.index()),
                        LinkKind::Internal,
                        Some((up, side.opposite())),
                        Some((node(r, c), side)),
                    ));
                } else {
                    specs.push(((r, c, side.index()), LinkKind::Entry, None, Some((node(r, c), side))));
                    specs.push(((r, c, 4 + side.index()), LinkKind::Exit, Some((node(r, c), side)), None));
                }
            }
        }
    }
    specs.sort_by_key(|s| s.0);

    let mut links = Vec::with_capacity(specs.len());
    let mut lanes = Vec::new();
    for (id, (_, kind, from, to)) in specs.into_iter().enumerate() {
        let first_lane = lanes.len();
        for index in 0..lanes_per_direction {
            lanes.push(Lane { id: first_lane + index, link: id, index, length: lane_length });
        }
        links.push(Link { id, kind, from, to, length: lane_length, lane_count: lanes_per_direction, first_lane });
    }

    let detectors = vec![DetectorPlacement { stop_bar: 0.0, advanced: advanced_distance }; lanes.len()];

    let mut connections = Vec::new();
    for inter in &intersections {
        for approach in Side::ALL {
            let Some(in_link) = links.iter().find(|l| l.to == Some((inter.id, approach))) else {
                continue;
            };
            for movement in Movement::ALL {
                let exit = movement.exit_side(approach);
                if let Some(out_link) = links.iter().find(|l| l.from == Some((inter.id, exit))) {
                    connections.push(Connection {
                        intersection: inter.id,
                        from_link: in_link.id,
                        to_link: out_link.id,
                        movement,
                    });
                }
            }
        }
    }

    Ok(RoadNetwork {
        rows,
        cols,
        lane_length,
        lanes_per_direction,
        intersections,
        links,
        lanes,
        detectors,
        connections,
    })
}

impl RoadNetwork {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_id(&self, link: usize, index: usize) -> usize {
        self.links[link].first_lane + index
    }

    /// Lanes that end at a signal; exit lanes have none.
    pub fn is_signalized(&self, lane: usize) -> bool {
        self.links[self.lanes[lane].link].to.is_some()
    }

    /// Approach side and intersection of a signalized lane.
    pub fn approach_of(&self, lane: usize) -> Option<(usize, Side)> {
        self.links[self.lanes[lane].link].to
    }

    pub fn movements_of(&self, lane: usize) -> &'static [Movement] {
        let l = &self.lanes[lane];
        if self.links[l.link].to.is_none() {
            return &[];
        }
        lane_movements(self.links[l.link].lane_count, l.index)
    }

    pub fn entry_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| l.kind == LinkKind::Entry)
    }

    pub fn exit_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| l.kind == LinkKind::Exit)
    }

    /// Outgoing connections of a link in movement order.
    pub fn successors(&self, link: usize) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(move |c| c.from_link == link)
    }

    pub fn connection(&self, from_link: usize, to_link: usize) -> Option<&Connection> {
        self.connections.iter().find(|c| c.from_link == from_link && c.to_link == to_link)
    }

    /// Number of links on the shortest path from every link to `target`
    /// (`usize::MAX` when unreachable).
    pub fn hops_to(&self, target: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.links.len()];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.links.len()];
        for c in &self.connections {
            preds[c.to_link].push(c.from_link);
        }
        let mut queue = VecDeque::new();
        dist[target] = 0;
        queue.push_back(target);
        while let Some(l) = queue.pop_front() {
            for &p in &preds[l] {
                if dist[p] == usize::MAX {
                    dist[p] = dist[l] + 1;
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.detectors.len() != self.lanes.len() {
            return Err(NetworkError::InvalidGeometry("one detector placement per lane required".into()));
        }
        for (lane, det) in self.lanes.iter().zip(&self.detectors) {
            if !(det.advanced > 0.0 && lane.length > det.advanced) {
                return Err(NetworkError::InvalidGeometry(format!(
                    "lane {} of length {} cannot hold an advanced detector at {}",
                    lane.id, lane.length, det.advanced
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LaneGraph {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl LaneGraph {
    pub fn out_degree(&self, lane: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == lane).count()
    }
}

pub fn lane_graph(network: &RoadNetwork) -> LaneGraph {
    let mut edges = Vec::new();
    for c in &network.connections {
        let from = &network.links[c.from_link];
        let to = &network.links[c.to_link];
        for i in 0..from.lane_count {
            if !lane_movements(from.lane_count, i).contains(&c.movement) {
                continue;
            }
            for j in 0..to.lane_count {
                edges.push((from.first_lane + i, to.first_lane + j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    LaneGraph { nodes: network.lanes.len(), edges }
}

/// Dense 0/1 matrix with the identity added.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdjacencyMatrix {
    pub n: usize,
    pub entries: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.entries.iter().map(|&e| e as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for (j, e) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if *e == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

pub fn adjacency_matrix(graph: &LaneGraph) -> AdjacencyMatrix {
    let n = graph.nodes;
    let mut entries = vec![0u8; n * n];
    for i in 0..n {
        entries[i * n + i] = 1;
    }
    for &(i, j) in &graph.edges {
        entries[i * n + j] = 1;
    }
    AdjacencyMatrix { n, entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn movement_geometry() {
        assert_eq!(Movement::Straight.exit_side(Side::North), Side::South);
        // southbound traffic turns right towards the west
        assert_eq!(Movement::Right.exit_side(Side::North), Side::West);
        assert_eq!(Movement::Left.exit_side(Side::North), Side::East);
        assert_eq!(Movement::between(Side::East, Side::North), Some(Movement::Right));
        assert_eq!(Movement::between(Side::East, Side::East), None);
    }

    #[test]
    fn lane_assignment() {
        assert_eq!(lane_movements(1, 0).len(), 3);
        assert_eq!(lane_movements(2, 1), &[Movement::Straight, Movement::Left]);
        assert_eq!(lane_movements(3, 0), &[Movement::Right]);
        assert_eq!(lane_movements(3, 1), &[Movement::Straight]);
        assert_eq!(lane_movements(3, 2), &[Movement::Left]);
    }

    #[test]
    fn rejects_short_lanes() {
        assert!(build_grid_network(1, 1, 100.0, 1, 122.0).is_err());
        assert!(build_grid_network(0, 1, 300.0, 1, 122.0).is_err());
        assert!(build_grid_network(1, 1, 300.0, 0, 122.0).is_err());
    }
}
