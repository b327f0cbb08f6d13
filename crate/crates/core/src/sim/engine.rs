use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    generate_trips, shortest_route, DetectorEvent, E1Record, E2Record, LaneOutput, SimConfig, SimError, SimStats,
    SimulationOutput, TlsMode, TlsProgram, Trip, TripTable,
};
use crate::math;
use crate::network::{LinkKind, Movement, RoadNetwork, Side};

/// Loops at the stop bar sit this far upstream so a vehicle waiting at the
/// line covers them.
const LOOP_SETBACK: f64 = 1.0;
/// Left turners already at the line may clear this long into red.
const CLEARANCE: f64 = 3.0;
const MIN_CHANGE_GAP: f64 = 0.5;
const INF: f64 = f64::INFINITY;

#[derive(Clone, Debug)]
struct Armed {
    det: usize,
    at: f64,
    event: Option<usize>,
}

#[derive(Clone, Debug)]
struct Vehicle {
    id: u64,
    route: Vec<usize>,
    leg: usize,
    lane: usize,
    pos: f64,
    speed: f64,
    odo: f64,
    halted: bool,
    halts_here: u32,
    change_at: f64,
    stuck_since: Option<f64>,
    target: Option<usize>,
    armed: Vec<Armed>,
}

impl Vehicle {
    fn next_link(&self) -> Option<usize> {
        self.route.get(self.leg + 1).copied()
    }
}

/// Snapshot of one vehicle, for inspection between steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleView {
    pub id: u64,
    pub lane: usize,
    pub pos: f64,
    pub speed: f64,
}

#[derive(Clone, Debug)]
struct RawEvent {
    t_in: f64,
    t_out: Option<f64>,
}

#[derive(Clone, Debug)]
struct Recorder {
    events: Vec<Vec<RawEvent>>,
    occupancy: Vec<Vec<f64>>,
    halts: Vec<Vec<u32>>,
    jam: Vec<Vec<f64>>,
    seen: Vec<Vec<u32>>,
    entered: Vec<Vec<u32>>,
    left: Vec<Vec<u32>>,
    multi_halts: Vec<u32>,
}

impl Recorder {
    fn new(lanes: usize, duration: usize) -> Self {
        Recorder {
            events: vec![Vec::new(); 2 * lanes],
            occupancy: vec![vec![0.0; duration]; 2 * lanes],
            halts: vec![vec![0; duration]; lanes],
            jam: vec![vec![0.0; duration]; lanes],
            seen: vec![vec![0; duration]; lanes],
            entered: vec![vec![0; duration]; lanes],
            left: vec![vec![0; duration]; lanes],
            multi_halts: vec![0; lanes],
        }
    }

    fn bump(series: &mut [Vec<u32>], lane: usize, sec: usize) {
        if let Some(x) = series[lane].get_mut(sec) {
            *x += 1;
        }
    }
}

/// A running simulation over one network. Single-threaded; independent
/// instances share nothing.
pub struct Simulation<'a> {
    net: &'a RoadNetwork,
    cfg: SimConfig,
    program: TlsProgram,
    duration: usize,
    time: f64,
    steps: u64,
    steps_per_second: u64,
    vehicles: Vec<Option<Vehicle>>,
    free: Vec<usize>,
    /// Vehicle slots per lane, front first.
    lanes: Vec<Vec<usize>>,
    trips: Vec<Trip>,
    next_trip: usize,
    pending: Vec<VecDeque<usize>>,
    /// Incoming link per (intersection, side).
    approach: Vec<[Option<usize>; 4]>,
    rng: ChaCha8Rng,
    hops: BTreeMap<usize, Vec<usize>>,
    rec: Recorder,
    stats: SimStats,
}

impl<'a> Simulation<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        cfg: SimConfig,
        trips: TripTable,
        duration: usize,
        seed: u64,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if duration == 0 {
            return Err(SimError::Config("duration must be positive".into()));
        }
        let mut trips = trips.trips;
        for t in &trips {
            let ok = t.route.len() >= 2
                && t.route.iter().all(|&l| l < net.links.len())
                && net.links[t.route[0]].kind == LinkKind::Entry
                && net.links[*t.route.last().unwrap()].kind == LinkKind::Exit
                && t.route.windows(2).all(|w| net.connection(w[0], w[1]).is_some());
            if !ok {
                return Err(SimError::Config(alloc::format!("trip {} has an invalid route", t.id)));
            }
        }
        trips.sort_by(|a, b| a.depart.total_cmp(&b.depart));
        let mut approach = vec![[None; 4]; net.intersections.len()];
        for l in &net.links {
            if let Some((i, s)) = l.to {
                approach[i][s.index()] = Some(l.id);
            }
        }
        let n = net.lane_count();
        let stats = SimStats { trips: trips.len(), ..Default::default() };
        Ok(Simulation {
            net,
            program: cfg.tls_program(),
            steps_per_second: math::round(1.0 / cfg.dt) as u64,
            cfg,
            duration,
            time: 0.0,
            steps: 0,
            vehicles: Vec::new(),
            free: Vec::new(),
            lanes: vec![Vec::new(); n],
            trips,
            next_trip: 0,
            pending: vec![VecDeque::new(); net.links.len()],
            approach,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_51a1_u64),
            hops: BTreeMap::new(),
            rec: Recorder::new(n, duration),
            stats,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.duration as u64 * self.steps_per_second
    }

    pub fn vehicle_count(&self) -> usize {
        self.lanes.iter().map(|l| l.len()).sum()
    }

    pub fn stats(&self) -> SimStats {
        let mut s = self.stats;
        s.on_network = self.vehicle_count();
        s.not_inserted = s.trips - s.inserted;
        s
    }

    /// Vehicles on `lane`, front first.
    pub fn lane_vehicles(&self, lane: usize) -> Vec<VehicleView> {
        self.lanes[lane]
            .iter()
            .map(|&s| {
                let v = self.veh(s);
                VehicleView { id: v.id, lane: v.lane, pos: v.pos, speed: v.speed }
            })
            .collect()
    }

    fn veh(&self, slot: usize) -> &Vehicle {
        self.vehicles[slot].as_ref().expect("live vehicle")
    }

    fn veh_mut(&mut self, slot: usize) -> &mut Vehicle {
        self.vehicles[slot].as_mut().expect("live vehicle")
    }

    fn lane_len(&self, lane: usize) -> f64 {
        self.net.lanes[lane].length
    }

    fn loop_positions(&self, lane: usize) -> [f64; 2] {
        let len = self.lane_len(lane);
        let d = &self.net.detectors[lane];
        [len - d.stop_bar.max(LOOP_SETBACK), len - d.advanced]
    }

    fn movement(&self, v: &Vehicle) -> Option<Movement> {
        let next = v.next_link()?;
        self.net.connection(v.route[v.leg], next).map(|c| c.movement)
    }

    fn permitted(&self, lane: usize, mv: Movement) -> bool {
        self.net.movements_of(lane).contains(&mv)
    }

    fn green(&self, lane: usize, t: f64) -> bool {
        match self.net.approach_of(lane) {
            Some((_, side)) => self.program.is_green(side, t),
            None => true,
        }
    }

    fn arm(&self, v: &mut Vehicle) {
        let start = v.odo - v.pos;
        let [stop, adv] = self.loop_positions(v.lane);
        v.armed.push(Armed { det: 2 * v.lane, at: start + stop, event: None });
        v.armed.push(Armed { det: 2 * v.lane + 1, at: start + adv, event: None });
    }

    fn hops(&mut self, exit: usize) -> &Vec<usize> {
        let net = self.net;
        self.hops.entry(exit).or_insert_with(|| net.hops_to(exit))
    }

    /// Advances the clock by one step.
    pub fn step(&mut self) {
        let t = self.time;
        let dt = self.cfg.dt;
        let sec = math::floor(t + 1e-9) as usize;

        self.release(t);
        self.insert(t, sec);
        self.handle_stuck(t);

        // speeds from positions at the start of the step
        let vp = self.cfg.vehicle;
        let mut updates: Vec<(usize, f64, Option<usize>)> = Vec::new();
        for lane in 0..self.lanes.len() {
            for k in 0..self.lanes[lane].len() {
                let slot = self.lanes[lane][k];
                let (gap, target) = if k > 0 {
                    let lead = self.veh(self.lanes[lane][k - 1]);
                    (lead.pos - vp.effective_length - self.veh(slot).pos, None)
                } else {
                    self.front_gap(slot, t)
                };
                let v = self.veh(slot).speed;
                let safe = gap.max(0.0) / dt;
                let mut v_new = (v + vp.accel * dt).min(vp.free_speed).min(safe).max(0.0);
                if v_new < 1e-6 {
                    v_new = 0.0;
                }
                updates.push((slot, v_new, target));
            }
        }

        let halt = self.cfg.halt_speed;
        let le = vp.effective_length;
        let duration = self.duration;
        for &(slot, v_new, target) in &updates {
            let mut v = self.vehicles[slot].take().expect("live vehicle");
            let odo0 = v.odo;
            let odo1 = odo0 + v_new * dt;
            record_loops(&mut self.rec, &mut v, t, dt, odo0, odo1, v_new, le, sec, duration);
            v.odo = odo1;
            v.pos += v_new * dt;
            v.speed = v_new;
            v.target = target;
            if v_new < halt {
                if !v.halted {
                    v.halted = true;
                    v.halts_here += 1;
                    Recorder::bump(&mut self.rec.halts, v.lane, sec);
                }
            } else {
                v.halted = false;
            }
            self.vehicles[slot] = Some(v);
        }

        self.transfer(t, sec);
        if self.cfg.lane_changing {
            self.change_lanes(sec);
        }

        self.steps += 1;
        self.time = self.steps as f64 * dt;

        if sec < self.duration {
            for lane in 0..self.lanes.len() {
                let jam = self.jam_length(lane);
                let cell = &mut self.rec.jam[lane][sec];
                *cell = cell.max(jam);
            }
            if self.steps.is_multiple_of(self.steps_per_second) {
                for lane in 0..self.lanes.len() {
                    self.rec.seen[lane][sec] = self.lanes[lane].len() as u32;
                }
            }
        }
    }

    fn release(&mut self, t: f64) {
        while self.next_trip < self.trips.len() && self.trips[self.next_trip].depart <= t + 1e-9 {
            let entry = self.trips[self.next_trip].route[0];
            self.pending[entry].push_back(self.next_trip);
            self.next_trip += 1;
        }
    }

    fn insert(&mut self, t: f64, sec: usize) {
        let vp = self.cfg.vehicle;
        for link in 0..self.pending.len() {
            while let Some(&ti) = self.pending[link].front() {
                let trip = &self.trips[ti];
                let l = &self.net.links[link];
                let need = self.net.connection(trip.route[0], trip.route[1]).map(|c| c.movement);
                let lane = if self.cfg.lane_changing {
                    l.first_lane + self.rng.gen_range(0..l.lane_count)
                } else {
                    self.roomiest(link, need)
                };
                let room = self.room(lane);
                if room < 0.0 {
                    break;
                }
                self.pending[link].pop_front();
                let speed = vp.free_speed.min(room / self.cfg.dt);
                let len = self.lane_len(lane);
                let mut v = Vehicle {
                    id: self.trips[ti].id,
                    route: self.trips[ti].route.clone(),
                    leg: 0,
                    lane,
                    pos: 0.0,
                    speed,
                    odo: 0.0,
                    halted: false,
                    halts_here: 0,
                    change_at: self.rng.gen::<f64>() * len,
                    stuck_since: None,
                    target: None,
                    armed: Vec::new(),
                };
                self.arm(&mut v);
                if speed < self.cfg.halt_speed {
                    v.halted = true;
                    v.halts_here = 1;
                    Recorder::bump(&mut self.rec.halts, lane, sec);
                }
                let slot = match self.free.pop() {
                    Some(s) => {
                        self.vehicles[s] = Some(v);
                        s
                    }
                    None => {
                        self.vehicles.push(Some(v));
                        self.vehicles.len() - 1
                    }
                };
                self.lanes[lane].push(slot);
                Recorder::bump(&mut self.rec.entered, lane, sec);
                self.stats.inserted += 1;
                let _ = t;
            }
        }
    }

    /// Free length behind the last vehicle of a lane.
    fn room(&self, lane: usize) -> f64 {
        match self.lanes[lane].last() {
            Some(&s) => self.veh(s).pos - self.cfg.vehicle.effective_length,
            None => INF,
        }
    }

    /// Lane of `link` that serves `need` with the most free room.
    fn roomiest(&self, link: usize, need: Option<Movement>) -> usize {
        let l = &self.net.links[link];
        let mut best = l.first_lane;
        let mut best_room = -INF;
        for lane in l.first_lane..l.first_lane + l.lane_count {
            if let Some(m) = need {
                if !self.net.movements_of(lane).is_empty() && !self.permitted(lane, m) {
                    continue;
                }
            }
            let r = self.room(lane);
            if r > best_room {
                best_room = r;
                best = lane;
            }
        }
        best
    }

    fn choose_target(&self, v: &Vehicle) -> usize {
        let next = v.next_link().expect("signalized lane");
        let need = v.route.get(v.leg + 2).and_then(|&a| self.net.connection(next, a)).map(|c| c.movement);
        if self.cfg.lane_changing {
            let l = &self.net.links[next];
            let k = l.lane_count;
            let idx = match self.movement(v) {
                Some(Movement::Right) => 0,
                Some(Movement::Left) => k - 1,
                _ => self.net.lanes[v.lane].index.min(k - 1),
            };
            l.first_lane + idx
        } else {
            self.roomiest(next, need)
        }
    }

    fn front_gap(&self, slot: usize, t: f64) -> (f64, Option<usize>) {
        let v = self.veh(slot);
        let to_end = self.lane_len(v.lane) - v.pos;
        let Some(mv) = self.movement(v) else {
            return (INF, None);
        };
        if !self.permitted(v.lane, mv) || !self.may_pass(v, mv, t) {
            return (to_end, None);
        }
        let target = self.choose_target(v);
        let room = self.room(target);
        if room < 0.0 {
            return (to_end, None);
        }
        (to_end + room, Some(target))
    }

    fn may_pass(&self, v: &Vehicle, mv: Movement, t: f64) -> bool {
        let Some((inter, side)) = self.net.approach_of(v.lane) else {
            return true;
        };
        let permissive = self.cfg.tls_mode == TlsMode::Realistic && mv == Movement::Left;
        if self.program.is_green(side, t) {
            return !permissive || !self.opposing_conflict(inter, side, t);
        }
        if permissive {
            // a left turner waiting in the junction clears once the signal turns
            if let Some(r) = self.program.red_since(side, t) {
                return t - r < CLEARANCE && self.lane_len(v.lane) - v.pos < 1.0;
            }
        }
        false
    }

    fn opposing_conflict(&self, inter: usize, side: Side, t: f64) -> bool {
        let opp = side.opposite();
        let Some(link) = self.approach[inter][opp.index()] else {
            return false;
        };
        if !self.program.is_green(opp, t) {
            return false;
        }
        let vp = self.cfg.vehicle;
        let horizon = self.cfg.yield_horizon;
        let l = &self.net.links[link];
        for lane in l.first_lane..l.first_lane + l.lane_count {
            let len = self.lane_len(lane);
            for &s in &self.lanes[lane] {
                let o = self.veh(s);
                let dist = len - o.pos;
                if dist > vp.free_speed * horizon + vp.effective_length {
                    break;
                }
                if self.movement(o) == Some(Movement::Left) {
                    continue;
                }
                if dist <= o.speed * horizon + vp.effective_length {
                    return true;
                }
            }
        }
        false
    }

    fn transfer(&mut self, t: f64, sec: usize) {
        let le = self.cfg.vehicle.effective_length;
        for lane in 0..self.lanes.len() {
            let Some(&slot) = self.lanes[lane].first() else {
                continue;
            };
            let len = self.lane_len(lane);
            if self.veh(slot).pos < len {
                continue;
            }
            let mut v = self.vehicles[slot].take().expect("live vehicle");
            if v.next_link().is_none() {
                // leaving the network; close loops the rear has not cleared yet
                for a in &v.armed {
                    if let Some(e) = a.event {
                        if self.rec.events[a.det][e].t_out.is_none() {
                            let back = v.odo - (a.at + le);
                            let t_out = self.time_at(t, back, v.speed);
                            self.rec.events[a.det][e].t_out = Some(t_out);
                        }
                    }
                }
                self.lanes[lane].remove(0);
                self.leave_lane(&v, lane, sec);
                self.free.push(slot);
                self.stats.exited += 1;
                continue;
            }
            let Some(target) = v.target else {
                // stopped exactly on the line by the obstacle in front
                v.odo -= v.pos - len;
                v.pos = len;
                self.vehicles[slot] = Some(v);
                continue;
            };
            let over = v.pos - len;
            let limit = self.room(target);
            let pos_new = over.min(limit);
            if pos_new < 0.0 {
                // merge conflict within the step; hold at the line
                v.odo -= v.pos - len;
                v.pos = len;
                v.speed = 0.0;
                if !v.halted {
                    v.halted = true;
                    v.halts_here += 1;
                    Recorder::bump(&mut self.rec.halts, lane, sec);
                }
                self.vehicles[slot] = Some(v);
                continue;
            }
            v.odo -= over - pos_new;
            self.lanes[lane].remove(0);
            self.leave_lane(&v, lane, sec);
            v.halts_here = 0;
            v.leg += 1;
            v.lane = target;
            v.pos = pos_new;
            v.target = None;
            v.stuck_since = None;
            v.change_at = self.rng.gen::<f64>() * self.lane_len(target);
            v.armed.retain(|a| a.event.is_some());
            self.arm(&mut v);
            self.vehicles[slot] = Some(v);
            self.lanes[target].push(slot);
            Recorder::bump(&mut self.rec.entered, target, sec);
        }
    }

    fn time_at(&self, t: f64, back: f64, speed: f64) -> f64 {
        // `back` metres before the current odometer, at constant speed
        let end = t + self.cfg.dt;
        if speed > 0.0 {
            end - back / speed
        } else {
            end
        }
    }

    fn leave_lane(&mut self, v: &Vehicle, lane: usize, sec: usize) {
        Recorder::bump(&mut self.rec.left, lane, sec);
        if v.halts_here >= 2 {
            self.rec.multi_halts[lane] += 1;
        }
    }

    /// Index of the lane one step closer to a lane serving `mv`.
    fn toward_permitted(&self, lane: usize, mv: Movement) -> Option<usize> {
        let l = &self.net.links[self.net.lanes[lane].link];
        let idx = self.net.lanes[lane].index;
        let best =
            (0..l.lane_count).filter(|&i| self.permitted(l.first_lane + i, mv)).min_by_key(|&i| i.abs_diff(idx))?;
        let step = if best > idx { idx + 1 } else { idx - 1 };
        Some(l.first_lane + step)
    }

    fn change_lanes(&mut self, sec: usize) {
        let le = self.cfg.vehicle.effective_length;
        let mut wanted = Vec::new();
        for lane in 0..self.lanes.len() {
            for &slot in &self.lanes[lane] {
                let v = self.veh(slot);
                let Some(mv) = self.movement(v) else { continue };
                if self.permitted(lane, mv) || v.pos < v.change_at {
                    continue;
                }
                if let Some(to) = self.toward_permitted(lane, mv) {
                    wanted.push((slot, to));
                }
            }
        }
        for (slot, to) in wanted {
            let (from, pos) = {
                let v = self.veh(slot);
                (v.lane, v.pos)
            };
            let mut at = 0;
            let mut ok = true;
            for (k, &s) in self.lanes[to].iter().enumerate() {
                let p = self.veh(s).pos;
                if p >= pos {
                    ok &= p - le - pos >= MIN_CHANGE_GAP;
                    at = k + 1;
                } else {
                    ok &= pos - le - p >= MIN_CHANGE_GAP;
                    break;
                }
            }
            if !ok {
                continue;
            }
            let k = self.lanes[from].iter().position(|&s| s == slot).expect("on lane");
            self.lanes[from].remove(k);
            self.lanes[to].insert(at, slot);
            let mut v = self.vehicles[slot].take().expect("live vehicle");
            self.leave_lane(&v, from, sec);
            v.halts_here = 0;
            v.lane = to;
            v.stuck_since = None;
            for a in v.armed.iter_mut() {
                if a.event.is_none() && a.det / 2 == from {
                    a.det = 2 * to + a.det % 2;
                }
            }
            self.vehicles[slot] = Some(v);
            Recorder::bump(&mut self.rec.entered, to, sec);
            self.stats.lane_changes += 1;
        }
    }

    /// A vehicle waiting at the line of a lane that cannot serve its turn
    /// eventually takes a turn the lane does serve.
    fn handle_stuck(&mut self, t: f64) {
        let le = self.cfg.vehicle.effective_length;
        for lane in 0..self.lanes.len() {
            let Some(&slot) = self.lanes[lane].first() else { continue };
            let v = self.veh(slot);
            let Some(mv) = self.movement(v) else { continue };
            if self.permitted(lane, mv) || self.lane_len(lane) - v.pos > le || v.speed >= self.cfg.halt_speed {
                continue;
            }
            let since = *self.veh_mut(slot).stuck_since.get_or_insert(t);
            if t - since >= self.cfg.reroute_patience {
                self.reroute(slot);
            }
        }
    }

    fn reroute(&mut self, slot: usize) {
        let (link, dest, lane) = {
            let v = self.veh(slot);
            (v.route[v.leg], *v.route.last().unwrap(), v.lane)
        };
        let outs: Vec<usize> =
            self.net.successors(link).filter(|c| self.permitted(lane, c.movement)).map(|c| c.to_link).collect();
        let Some(&first) = outs.first() else { return };
        let mut choice = None;
        for &o in &outs {
            if self.hops(dest)[o] != usize::MAX {
                choice = Some((o, dest));
                break;
            }
        }
        let (out, dest) = match choice {
            Some(c) => c,
            None => {
                let exits: Vec<usize> = self.net.exit_links().map(|l| l.id).collect();
                let mut found = None;
                for e in exits {
                    if self.hops(e)[first] != usize::MAX {
                        found = Some(e);
                        break;
                    }
                }
                match found {
                    Some(e) => (first, e),
                    None => return,
                }
            }
        };
        let hops = self.hops(dest).clone();
        let tail = shortest_route(self.net, out, &hops, &mut self.rng).expect("reachable");
        let v = self.veh_mut(slot);
        v.route.truncate(v.leg + 1);
        v.route.extend(tail);
        v.stuck_since = None;
        self.stats.reroutes += 1;
    }

    /// Length of the halted platoon anchored at the stop bar.
    fn jam_length(&self, lane: usize) -> f64 {
        let le = self.cfg.vehicle.effective_length;
        let len = self.lane_len(lane);
        let mut it = self.lanes[lane].iter().map(|&s| self.veh(s));
        let Some(front) = it.next() else { return 0.0 };
        if !front.halted || len - front.pos > le {
            return 0.0;
        }
        let mut last = front.pos;
        for v in it {
            if !v.halted || last - le - v.pos > 0.5 * le {
                break;
            }
            last = v.pos;
        }
        (len - (last - le)).min(len)
    }

    pub fn run_to_end(&mut self) {
        while !self.is_finished() {
            self.step();
        }
    }

    /// Assembles the 1 Hz streams recorded so far.
    pub fn output(&self, seed: u64, arrival_rate: f64) -> SimulationOutput {
        let d = self.duration;
        let end = d as f64;
        let mut lanes = Vec::with_capacity(self.lanes.len());
        for lane in 0..self.lanes.len() {
            let e1 = |det: usize| -> Vec<E1Record> {
                let mut raw = self.rec.events[det].clone();
                raw.sort_by(|a, b| a.t_in.total_cmp(&b.t_in));
                let mut out: Vec<E1Record> = (0..d)
                    .map(|s| E1Record {
                        time: s as u32,
                        vehicle_count: 0,
                        occupancy: self.rec.occupancy[det][s].min(1.0),
                        mean_speed: 0.0,
                        events: Vec::new(),
                    })
                    .collect();
                for (i, ev) in raw.iter().enumerate() {
                    let s = math::floor(ev.t_in) as usize;
                    if s >= d {
                        break;
                    }
                    let t_out = ev.t_out.unwrap_or(end).min(end.max(ev.t_in));
                    let t_o = t_out - ev.t_in;
                    let next = raw.get(i + 1).map(|n| n.t_in).unwrap_or(end);
                    let t_g = (next - t_out).max(0.0);
                    let speed = if t_o > 0.0 { self.cfg.vehicle.effective_length / t_o } else { 0.0 };
                    out[s].events.push(DetectorEvent { time: ev.t_in, occupancy_time: t_o, time_gap: t_g, speed });
                }
                for r in out.iter_mut() {
                    r.vehicle_count = r.events.len() as u32;
                    if !r.events.is_empty() {
                        r.mean_speed = r.events.iter().map(|e| e.speed).sum::<f64>() / r.events.len() as f64;
                    }
                }
                out
            };
            let e2 = (0..d)
                .map(|s| E2Record {
                    time: s as u32,
                    started_halts: self.rec.halts[lane][s],
                    max_jam_length: self.rec.jam[lane][s],
                    n_veh_seen: self.rec.seen[lane][s],
                    entered: self.rec.entered[lane][s],
                    left: self.rec.left[lane][s],
                })
                .collect();
            let tls = (0..d).map(|s| self.green(lane, s as f64) as u8).collect();
            let cycles = match self.net.approach_of(lane) {
                Some((_, side)) => self.program.cycles(side, end),
                None => Vec::new(),
            };
            lanes.push(LaneOutput {
                lane,
                stop_bar: e1(2 * lane),
                advanced: e1(2 * lane + 1),
                e2,
                tls,
                cycles,
                multi_halts: self.rec.multi_halts[lane],
            });
        }
        SimulationOutput { seed, arrival_rate, duration: d, tls_mode: self.cfg.tls_mode, lanes, stats: self.stats() }
    }
}

fn record_loops(
    rec: &mut Recorder,
    v: &mut Vehicle,
    t: f64,
    dt: f64,
    odo0: f64,
    odo1: f64,
    speed: f64,
    le: f64,
    sec: usize,
    duration: usize,
) {
    v.armed.retain_mut(|a| {
        let d0 = a.at;
        let d1 = a.at + le;
        let occ = if speed > 0.0 {
            (odo1.min(d1) - odo0.max(d0)).max(0.0) / speed
        } else if odo0 > d0 && odo0 < d1 {
            dt
        } else {
            0.0
        };
        if sec < duration {
            rec.occupancy[a.det][sec] += occ;
        }
        if a.event.is_none() && odo0 <= d0 && d0 < odo1 {
            rec.events[a.det].push(RawEvent { t_in: t + (d0 - odo0) / speed, t_out: None });
            a.event = Some(rec.events[a.det].len() - 1);
        }
        if odo0 <= d1 && d1 < odo1 {
            if let Some(e) = a.event {
                rec.events[a.det][e].t_out = Some(t + (d1 - odo0) / speed);
            }
            return false;
        }
        true
    });
}

/// Generates Poisson trips and simulates `duration` seconds.
pub fn run_simulation(
    net: &RoadNetwork,
    cfg: &SimConfig,
    arrival_rate: f64,
    duration: usize,
    seed: u64,
) -> Result<SimulationOutput, SimError> {
    let trips = generate_trips(net, arrival_rate, duration as f64, seed);
    let mut out = run_trips(net, cfg, trips, duration, seed)?;
    out.arrival_rate = arrival_rate;
    Ok(out)
}

/// Simulates a given trip table.
pub fn run_trips(
    net: &RoadNetwork,
    cfg: &SimConfig,
    trips: TripTable,
    duration: usize,
    seed: u64,
) -> Result<SimulationOutput, SimError> {
    let n = trips.trips.len();
    let mut sim = Simulation::new(net, cfg.clone(), trips, duration, seed)?;
    sim.run_to_end();
    Ok(sim.output(seed, n as f64 / duration as f64))
}
