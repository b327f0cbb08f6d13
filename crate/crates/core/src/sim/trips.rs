use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math;
use crate::network::{LinkKind, RoadNetwork};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Trip {
    pub id: u64,
    pub depart: f64,
    /// Links from a fringe entry to a fringe exit.
    pub route: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TripTable {
    pub trips: Vec<Trip>,
}

/// Shortest route from `from` to `to`, choosing uniformly among equally
/// short continuations. `hops` is `network.hops_to(to)`.
pub fn shortest_route<R: Rng + ?Sized>(
    network: &RoadNetwork,
    from: usize,
    hops: &[usize],
    rng: &mut R,
) -> Option<Vec<usize>> {
    if hops[from] == usize::MAX {
        return None;
    }
    let mut route = alloc::vec![from];
    let mut cur = from;
    while hops[cur] > 0 {
        let next: Vec<usize> =
            network.successors(cur).map(|c| c.to_link).filter(|&l| hops[l] == hops[cur] - 1).collect();
        cur = next[rng.gen_range(0..next.len())];
        route.push(cur);
    }
    Some(route)
}

/// Poisson arrivals over the fringe entries with uniformly chosen exits.
/// A non-positive rate yields an empty table.
pub fn generate_trips(network: &RoadNetwork, arrival_rate: f64, duration: f64, seed: u64) -> TripTable {
    let mut trips = Vec::new();
    if !(arrival_rate > 0.0) || !(duration > 0.0) {
        return TripTable { trips };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<usize> = network.entry_links().map(|l| l.id).collect();
    let exits: Vec<usize> = network.exit_links().map(|l| l.id).collect();
    let hops: Vec<Vec<usize>> = exits.iter().map(|&e| network.hops_to(e)).collect();

    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        t += -math::ln(1.0 - u) / arrival_rate;
        if t >= duration {
            break;
        }
        let entry = entries[rng.gen_range(0..entries.len())];
        let entry_at = network.links[entry].to;
        // an exit on the same side of the same intersection would need a U-turn
        let candidates: Vec<usize> = (0..exits.len())
            .filter(|&k| {
                let ex = &network.links[exits[k]];
                ex.kind == LinkKind::Exit && ex.from != entry_at && hops[k][entry] != usize::MAX
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let k = candidates[rng.gen_range(0..candidates.len())];
        let route = shortest_route(network, entry, &hops[k], &mut rng).expect("reachable exit");
        trips.push(Trip { id: trips.len() as u64, depart: t, route });
    }
    TripTable { trips }
}
