use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnergyMode, EngineConfig, Forwarding, QueueDiscipline, SensingScope, ServiceScope};
use super::energy::{Category, EnergyLedger};
use super::event::{from_secs, to_secs, EventKind, EventQueue, Payload, SimTime};
use super::queue::{Enqueue, FifoQueue, FragmentedQueue, NodeQueue, QItem};
use super::report::{
    Detection, EnergyBreakdown, FaultRecord, PathMetrics, RunMetrics, SourceMetrics,
};
use super::{EngineError, QuotaRule, RunPlan};
use crate::allocator::{scheme_allocation, Allocation, AllocationInput, PathParams};
use crate::discovery::{per_hop_tau, RefreshPolicy, TopologyEvent};
use crate::model::{
    LinkStatus, NetworkParams, NodeId, NodeStatus, Packet, PacketKind, PathInfo, Scenario, Topology,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DropCause {
    Overflow,
    Fault,
}

#[derive(Debug, Clone)]
struct Route {
    source: usize,
    path: usize,
    nodes: Vec<NodeId>,
    /// Forward hop count; control round trips turn around here.
    hops: usize,
    data: bool,
    tau: f64,
    live: u64,
    arrived: Vec<u64>,
    abandoned: bool,
    injected: u64,
    delivered: u64,
    last_delivery: Option<SimTime>,
    wait_ns: u128,
    waits: u64,
    setup: bool,
}

#[derive(Debug, Clone)]
struct Pkt {
    packet: Packet,
    route: usize,
    pos: usize,
    holder: NodeId,
    item: u64,
    alive: bool,
    attempts: u32,
    enqueued_at: SimTime,
    launched_at: SimTime,
    choke_count: u32,
    in_service: bool,
}

#[derive(Debug, Clone, Default)]
struct Server {
    busy: Option<QItem>,
    generation: u64,
}

#[derive(Debug, Clone, Default)]
struct Timer {
    generation: u64,
    armed: bool,
    window: SimTime,
}

#[derive(Debug, Clone)]
struct SourceState {
    node: NodeId,
    packets: u64,
    paths: Vec<PathInfo>,
    routes: Vec<usize>,
    rule: QuotaRule,
    replicate: bool,
    choke: bool,
    priority: u8,
    allocation: Option<Allocation>,
    /// Next route offered a slot by `feed_source`.
    cursor: usize,
    first_arrival: Vec<Option<SimTime>>,
    duplicates: u64,
    dropped_overflow: u64,
    dropped_fault: u64,
    contention: Vec<Vec<(f64, u32)>>,
}

/// One engine run over a scenario. Construct with [`Simulation::new`], then [`run`](Self::run).
pub struct Simulation {
    cfg: EngineConfig,
    params: NetworkParams,
    topo: Topology,
    faults: Vec<crate::model::FaultSpec>,
    scenario_hash: String,
    seed: u64,
    rng: ChaCha8Rng,
    now: SimTime,
    events: EventQueue,
    processed: u64,
    queues: BTreeMap<NodeId, NodeQueue>,
    servers: BTreeMap<(NodeId, Option<NodeId>), Server>,
    packets: Vec<Pkt>,
    routes: Vec<Route>,
    backlog: BTreeMap<usize, VecDeque<usize>>,
    sources: Vec<SourceState>,
    next_seq: u64,
    setup_queue: VecDeque<usize>,
    in_setup: bool,
    t0: Option<SimTime>,
    ledger: EnergyLedger,
    handled: BTreeMap<NodeId, BTreeSet<NodeId>>,
    busy_ns: BTreeMap<NodeId, u64>,
    alias: BTreeMap<NodeId, NodeId>,
    retired: BTreeSet<NodeId>,
    used_redundant: BTreeSet<NodeId>,
    fail_count: BTreeMap<(NodeId, NodeId), u32>,
    blocked: BTreeSet<(NodeId, NodeId)>,
    timers: BTreeMap<(NodeId, NodeId), Timer>,
    /// Start of each node's latest transmission; neighbours overhear it.
    last_tx: BTreeMap<NodeId, SimTime>,
    timers_enabled: bool,
    node_fault_at: BTreeMap<NodeId, SimTime>,
    link_fault_at: BTreeMap<(NodeId, NodeId), SimTime>,
    fault_records: Vec<FaultRecord>,
    refresh: RefreshPolicy,
    refreshes: u32,
    retransmissions: u64,
    control_dropped: u64,
    exhausted: Vec<NodeId>,
    trace: Vec<String>,
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario, plan: &RunPlan) -> Result<Self, EngineError> {
        let cfg = plan.config.clone();
        cfg.validate().map_err(EngineError::Plan)?;
        let topo = scenario.topology.clone();
        let s_bits = scenario.params.packet_bits;

        let mut queues = BTreeMap::new();
        for n in topo.nodes() {
            let nbrs = topo.neighbors(n.id).to_vec();
            let per_sub = if nbrs.is_empty() {
                0
            } else {
                (n.queue_capacity_bits / (nbrs.len() as u64 * s_bits)) as usize
            };
            let q = match cfg.queue {
                QueueDiscipline::Fragmented => {
                    NodeQueue::Fragmented(FragmentedQueue::new(n.id, &nbrs, per_sub))
                }
                QueueDiscipline::Fifo => NodeQueue::Fifo(FifoQueue::new(
                    n.id,
                    &nbrs,
                    (n.queue_capacity_bits / s_bits) as usize,
                )),
            };
            queues.insert(n.id, q);
        }

        let mut sources = Vec::new();
        let mut seen = BTreeSet::new();
        for sp in &plan.sources {
            if !seen.insert(sp.source) {
                return Err(EngineError::Plan(format!("source {} planned twice", sp.source)));
            }
            if sp.paths.is_empty() {
                return Err(EngineError::Plan(format!("source {} has no paths", sp.source)));
            }
            for p in &sp.paths {
                let checked = topo.validate_path(&p.nodes)?;
                if checked.source() != sp.source || checked.sink() != topo.sink() {
                    return Err(EngineError::Plan(format!(
                        "path {:?} does not join source {} to the sink",
                        p.nodes, sp.source
                    )));
                }
            }
            if let QuotaRule::Fixed(q) = &sp.rule {
                if q.len() != sp.paths.len() {
                    return Err(EngineError::Plan(format!(
                        "source {}: {} quotas for {} paths",
                        sp.source,
                        q.len(),
                        sp.paths.len()
                    )));
                }
            }
            sources.push(SourceState {
                node: sp.source,
                packets: sp.packets,
                paths: sp.paths.clone(),
                routes: Vec::new(),
                rule: sp.rule.clone(),
                replicate: sp.replicate,
                choke: sp.choke,
                priority: sp.priority,
                allocation: None,
                cursor: 0,
                first_arrival: Vec::new(),
                duplicates: 0,
                dropped_overflow: 0,
                dropped_fault: 0,
                contention: vec![Vec::new(); sp.paths.len()],
            });
        }

        let timers_enabled = cfg
            .receiver_timers
            .unwrap_or(!scenario.faults.is_empty() || cfg.loss_probability > 0.0);
        let ledger = EnergyLedger::new(topo.nodes().iter().map(|n| (n.id, n.residual_energy)));
        Ok(Self {
            params: scenario.params,
            faults: scenario.faults.clone(),
            scenario_hash: scenario.hash.clone(),
            seed: plan.seed,
            rng: ChaCha8Rng::seed_from_u64(plan.seed),
            now: 0,
            events: EventQueue::new(),
            processed: 0,
            queues,
            servers: BTreeMap::new(),
            packets: Vec::new(),
            routes: Vec::new(),
            backlog: BTreeMap::new(),
            sources,
            next_seq: 0,
            setup_queue: VecDeque::new(),
            in_setup: false,
            t0: None,
            ledger,
            handled: BTreeMap::new(),
            busy_ns: BTreeMap::new(),
            alias: BTreeMap::new(),
            retired: BTreeSet::new(),
            used_redundant: BTreeSet::new(),
            fail_count: BTreeMap::new(),
            blocked: BTreeSet::new(),
            timers: BTreeMap::new(),
            last_tx: BTreeMap::new(),
            timers_enabled,
            node_fault_at: BTreeMap::new(),
            link_fault_at: BTreeMap::new(),
            fault_records: Vec::new(),
            refresh: RefreshPolicy::new(),
            refreshes: 0,
            retransmissions: 0,
            control_dropped: 0,
            exhausted: Vec::new(),
            trace: Vec::new(),
            topo,
            cfg,
        })
    }

    pub fn run(mut self) -> Result<RunMetrics, EngineError> {
        self.begin()?;
        while let Some(ev) = self.events.pop() {
            self.processed += 1;
            if self.processed > self.cfg.max_events {
                return Err(EngineError::Livelock {
                    events: self.processed,
                    time: to_secs(ev.time),
                    pending: self.events.len(),
                });
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.payload {
                Payload::Fault(i) => self.on_fault(i),
                Payload::Service {
                    node,
                    link,
                    generation,
                } => self.on_service(node, link, generation)?,
                Payload::Arrival { packet, from, to } => self.on_arrival(packet, from, to)?,
                Payload::Timer {
                    watcher,
                    upstream,
                    generation,
                } => self.on_timer(watcher, upstream, generation)?,
                Payload::Beacon { sender, target } => self.on_beacon(sender, target)?,
                Payload::ProbeRound => self.on_probe_round()?,
            }
            self.process_exhausted()?;
        }
        Ok(self.finish())
    }

    // ---- helpers -------------------------------------------------------------------

    fn log(&mut self, kind: &str, node: NodeId, packet: Option<usize>, detail: &str) {
        if !self.cfg.trace {
            return;
        }
        let pkt = packet.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        self.trace.push(format!(
            "{:.9} {} node={} pkt={} {}",
            to_secs(self.now),
            kind,
            node,
            pkt,
            detail
        ));
    }

    fn alive(&self, n: NodeId) -> bool {
        !self.retired.contains(&n)
            && self
                .topo
                .node(n)
                .is_some_and(|x| x.status == NodeStatus::Alive)
    }

    fn resolve(&self, mut n: NodeId) -> NodeId {
        while let Some(&d) = self.alias.get(&n) {
            n = d;
        }
        n
    }

    fn control_bits(&self) -> u64 {
        self.cfg.control_bits.unwrap_or(self.params.packet_bits)
    }

    fn air_time(&self, a: NodeId, b: NodeId, bits: u64) -> Result<(SimTime, SimTime), EngineError> {
        let link = self
            .topo
            .link(a, b)
            .ok_or(EngineError::Routing { node: a, next: b })?;
        Ok((from_secs(bits as f64 / link.bit_rate), from_secs(link.delay)))
    }

    fn tx_energy(&self, a: NodeId, b: NodeId, bits: u64, air: SimTime) -> f64 {
        match self.cfg.energy {
            EnergyMode::PerBit => {
                let d = self.topo.distance(a, b).unwrap_or(0.0);
                (self.params.e_t + self.params.e_d * d.powf(self.params.k)) * self.params.t_1b * bits as f64
            }
            EnergyMode::PerPacket => self.params.e_t * to_secs(air),
        }
    }

    fn rx_energy(&self, bits: u64, air: SimTime) -> f64 {
        match self.cfg.energy {
            EnergyMode::PerBit => self.params.e_r * self.params.t_2b * bits as f64,
            EnergyMode::PerPacket => self.params.e_r * to_secs(air),
        }
    }

    fn debit(&mut self, node: NodeId, amount: f64, cat: Category, source: NodeId) {
        if self.ledger.debit(node, amount, cat, Some(source)) {
            self.exhausted.push(node);
        }
    }

    fn new_packet(&mut self, kind: PacketKind, route: usize, item: u64, priority: u8) -> usize {
        let r = &self.routes[route];
        let source = r.nodes[0];
        let dest = *r.nodes.last().unwrap();
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut packet = if kind == PacketKind::Data {
            Packet::data(source, dest, r.path, seq, self.params.packet_bits)
        } else {
            Packet::control(kind, source, dest, r.path, seq, self.control_bits())
        };
        if kind == PacketKind::Data {
            packet.priority = priority;
        }
        self.packets.push(Pkt {
            packet,
            route,
            pos: 0,
            holder: source,
            item,
            alive: true,
            attempts: 0,
            enqueued_at: self.now,
            launched_at: self.now,
            choke_count: 0,
            in_service: false,
        });
        self.packets.len() - 1
    }

    fn qitem(&self, id: usize, next: NodeId) -> QItem {
        let p = &self.packets[id];
        QItem {
            id,
            next,
            priority: p.packet.priority,
            seq: p.packet.seq,
            control: p.packet.kind.is_control(),
        }
    }

    fn add_route(&mut self, source: usize, path: usize, nodes: Vec<NodeId>, hops: usize, data: bool, tau: f64) -> usize {
        let len = nodes.len();
        self.routes.push(Route {
            source,
            path,
            nodes,
            hops,
            data,
            tau,
            live: 0,
            arrived: vec![0; len],
            abandoned: false,
            injected: 0,
            delivered: 0,
            last_delivery: None,
            wait_ns: 0,
            waits: 0,
            setup: false,
        });
        self.routes.len() - 1
    }

    // ---- setup ---------------------------------------------------------------------

    fn begin(&mut self) -> Result<(), EngineError> {
        for si in 0..self.sources.len() {
            for pi in 0..self.sources[si].paths.len() {
                let p = self.sources[si].paths[pi].clone();
                let tau = p.tau;
                let route = self.add_route(si, pi, p.nodes.clone(), p.hops as usize, true, tau);
                self.sources[si].routes.push(route);
            }
        }
        if self.cfg.setup_probes {
            for si in 0..self.sources.len() {
                for pi in 0..self.sources[si].paths.len() {
                    let r = self.round_trip_route(si, pi);
                    self.setup_queue.push_back(r);
                }
            }
            for si in 0..self.sources.len() {
                if self.sources[si].choke {
                    for pi in 0..self.sources[si].paths.len() {
                        let r = self.round_trip_route(si, pi);
                        self.routes[r].path = pi;
                        self.setup_queue.push_back(r | CHOKE_FLAG);
                    }
                }
            }
        }
        self.in_setup = true;
        self.launch_next_setup()
    }

    fn round_trip_route(&mut self, si: usize, pi: usize) -> usize {
        let fwd = self.sources[si].paths[pi].nodes.clone();
        let hops = fwd.len() - 1;
        let mut nodes = fwd.clone();
        nodes.extend(fwd.iter().rev().skip(1));
        let r = self.add_route(si, pi, nodes, hops, false, 0.0);
        self.routes[r].setup = true;
        r
    }

    fn launch_next_setup(&mut self) -> Result<(), EngineError> {
        match self.setup_queue.pop_front() {
            Some(tagged) => {
                let kind = if tagged & CHOKE_FLAG != 0 {
                    PacketKind::Choke
                } else {
                    PacketKind::Hello
                };
                self.launch_control(tagged & !CHOKE_FLAG, kind)
            }
            None => {
                self.in_setup = false;
                self.start_data()
            }
        }
    }

    fn launch_control(&mut self, route: usize, kind: PacketKind) -> Result<(), EngineError> {
        let id = self.new_packet(kind, route, 0, 0);
        let src = self.routes[route].nodes[0];
        let next = self.resolve(self.routes[route].nodes[1]);
        self.log("launch", src, Some(id), kind.as_str());
        self.enqueue_at(src, id, next)?;
        self.try_dispatch(src)
    }

    fn start_data(&mut self) -> Result<(), EngineError> {
        self.t0 = Some(self.now);
        let t0 = self.now;
        self.log("data-start", NodeId(0), None, "");
        for si in 0..self.sources.len() {
            let quotas = self.allocate(si)?;
            let replicate = self.sources[si].replicate;
            let d = self.sources[si].packets;
            self.sources[si].first_arrival = vec![None; d as usize];
            let priority = self.sources[si].priority;
            let mut item = 0u64;
            for (pi, &q) in quotas.iter().enumerate() {
                let route = self.sources[si].routes[pi];
                let mut queue = VecDeque::with_capacity(q as usize);
                for k in 0..q {
                    let it = if replicate { k } else { item + k };
                    let id = self.new_packet(PacketKind::Data, route, it, priority);
                    queue.push_back(id);
                }
                item += q;
                let r = &mut self.routes[route];
                r.live = q;
                r.injected = q;
                r.arrived[0] = q;
                self.backlog.insert(route, queue);
            }
        }
        for (i, f) in self.faults.clone().iter().enumerate() {
            let at = t0 + from_secs(f.at);
            let node = f.node.unwrap_or_else(|| f.link.map(|l| l[0]).unwrap_or(NodeId(0)));
            self.events.push(at, EventKind::FaultInject, node, Payload::Fault(i));
        }
        for &t in &self.cfg.probe_at.clone() {
            self.events
                .push(t0 + from_secs(t), EventKind::Probe, NodeId(0), Payload::ProbeRound);
        }
        for si in 0..self.sources.len() {
            self.feed_source(si)?;
            let node = self.sources[si].node;
            self.try_dispatch(node)?;
        }
        Ok(())
    }

    fn allocate(&mut self, si: usize) -> Result<Vec<u64>, EngineError> {
        let s = &self.sources[si];
        let n = s.paths.len();
        if s.replicate {
            return Ok(vec![s.packets; n]);
        }
        let quotas = match &s.rule {
            QuotaRule::Fixed(q) => q.clone(),
            QuotaRule::Scheme(scheme) => {
                let input = AllocationInput {
                    params: self.params,
                    packets: s.packets,
                    paths: s
                        .paths
                        .iter()
                        .map(|p| PathParams {
                            hops: p.hops,
                            tau: p.tau,
                            contention: p.contention,
                        })
                        .collect(),
                    t_dist: self.topo.distance(s.node, self.topo.sink()).unwrap_or(0.0),
                };
                let a = scheme_allocation(*scheme, &input)?;
                let q = a.quotas.clone();
                self.sources[si].allocation = Some(a);
                q
            }
        };
        self.sources[si].packets = quotas.iter().sum();
        Ok(quotas)
    }

    // ---- queues and service --------------------------------------------------------

    fn enqueue_at(&mut self, node: NodeId, id: usize, next: NodeId) -> Result<(), EngineError> {
        if self.retired.contains(&next) {
            self.log("drop-fault", node, Some(id), &format!("next={next} retired"));
            return self.drop_packet(id, DropCause::Fault);
        }
        let item = self.qitem(id, next);
        self.packets[id].enqueued_at = self.now;
        self.packets[id].holder = node;
        let q = self.queues.get_mut(&node).expect("every node has a queue");
        match q.enqueue(item) {
            Err(_) => Err(EngineError::Routing { node, next }),
            Ok(Enqueue::Accepted) => {
                if !item.control {
                    let tau = self.routes[self.packets[id].route].tau;
                    self.arm_timer(next, node, tau, false);
                }
                Ok(())
            }
            Ok(Enqueue::Dropped(v)) => {
                self.log("drop-overflow", node, Some(v.id), "");
                self.drop_packet(v.id, DropCause::Overflow)
            }
        }
    }

    fn feed_source(&mut self, si: usize) -> Result<(), EngineError> {
        let node = self.sources[si].node;
        if !self.alive(node) {
            return Ok(());
        }
        let routes = self.sources[si].routes.clone();
        let n = routes.len();
        let mut idle = 0;
        while idle < n {
            let k = self.sources[si].cursor % n;
            self.sources[si].cursor = (k + 1) % n;
            let r = routes[k];
            idle += 1;
            if self.backlog.get(&r).map_or(true, |b| b.is_empty()) {
                continue;
            }
            let next = self.resolve(self.routes[r].nodes[1]);
            let (load, cap) = self.queues[&node].admission_load(next);
            let limit = ((cap as f64 * self.cfg.admission_fraction).ceil() as usize).max(1);
            if load >= limit {
                continue;
            }
            let id = self.backlog.get_mut(&r).unwrap().pop_front().unwrap();
            self.enqueue_at(node, id, next)?;
            idle = 0;
        }
        Ok(())
    }

    fn try_dispatch(&mut self, node: NodeId) -> Result<(), EngineError> {
        if !self.alive(node) {
            return Ok(());
        }
        match self.cfg.service {
            ServiceScope::Node => {
                let key = (node, None);
                if self.servers.get(&key).is_some_and(|s| s.busy.is_some()) {
                    return Ok(());
                }
                let item = {
                    let mut queue = self.queues.remove(&node).unwrap();
                    let item = {
                        let elig = |q: &QItem| self.eligible(node, q);
                        queue.dispatch_next(&elig)
                    };
                    self.queues.insert(node, queue);
                    item
                };
                if let Some(item) = item {
                    self.start_service(node, None, item)?;
                }
            }
            ServiceScope::Link => {
                for nb in self.topo.neighbors(node).to_vec() {
                    let key = (node, Some(nb));
                    if self.servers.get(&key).is_some_and(|s| s.busy.is_some()) {
                        continue;
                    }
                    let item = {
                        let mut queue = self.queues.remove(&node).unwrap();
                        let item = {
                            let elig = |q: &QItem| self.eligible(node, q);
                            queue.dispatch_for(nb, &elig)
                        };
                        self.queues.insert(node, queue);
                        item
                    };
                    if let Some(item) = item {
                        self.start_service(node, Some(nb), item)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn eligible(&self, node: NodeId, q: &QItem) -> bool {
        if self.blocked.contains(&(node, q.next)) {
            return false;
        }
        if q.control || self.cfg.forwarding == Forwarding::Pipelined {
            return true;
        }
        let p = &self.packets[q.id];
        let r = &self.routes[p.route];
        r.arrived[p.pos] >= r.live
    }

    fn start_service(&mut self, node: NodeId, link: Option<NodeId>, item: QItem) -> Result<(), EngineError> {
        let bits = self.packets[item.id].packet.bits;
        let (air, _) = self.air_time(node, item.next, bits)?;
        let source = self.packets[item.id].packet.source;
        let is_data = !item.control;
        {
            let p = &mut self.packets[item.id];
            if p.attempts > 0 {
                self.retransmissions += 1;
            }
            p.attempts += 1;
            p.in_service = true;
            if is_data {
                let wait = self.now - p.enqueued_at;
                let r = &mut self.routes[p.route];
                r.wait_ns += wait as u128;
                r.waits += 1;
            }
        }
        let e = self.tx_energy(node, item.next, bits, air);
        self.debit(node, e, Category::Transmit, source);
        if is_data {
            self.handled.entry(node).or_default().insert(source);
            *self.busy_ns.entry(node).or_default() += air;
        }
        self.last_tx.insert(node, self.now);
        let server = self.servers.entry((node, link)).or_default();
        server.generation += 1;
        server.busy = Some(item);
        let generation = server.generation;
        self.events.push(
            self.now + air,
            EventKind::ServiceComplete,
            node,
            Payload::Service {
                node,
                link,
                generation,
            },
        );
        self.log("tx", node, Some(item.id), &format!("to={}", item.next));
        Ok(())
    }

    fn link_up(&self, a: NodeId, b: NodeId) -> bool {
        self.topo.link(a, b).is_some_and(|l| l.status == LinkStatus::Up)
    }

    fn on_service(&mut self, node: NodeId, link: Option<NodeId>, generation: u64) -> Result<(), EngineError> {
        let Some(server) = self.servers.get_mut(&(node, link)) else {
            return Ok(());
        };
        if server.generation != generation {
            return Ok(());
        }
        let Some(item) = server.busy.take() else {
            return Ok(());
        };
        self.packets[item.id].in_service = false;
        if !self.alive(node) {
            // stranded with its dead holder
            self.queues.get_mut(&node).unwrap().requeue_front(item);
            return Ok(());
        }
        let is_data = !item.control;
        let lost = is_data
            && self.cfg.loss_probability > 0.0
            && self.rng.gen::<f64>() < self.cfg.loss_probability;
        let ok = self.alive(item.next) && self.link_up(node, item.next) && !lost;
        if ok {
            self.queues.get_mut(&node).unwrap().release(&item);
            self.fail_count.remove(&(node, item.next));
            self.packets[item.id].attempts = 0;
            let bits = self.packets[item.id].packet.bits;
            let (_, delay) = self.air_time(node, item.next, bits)?;
            self.events.push(
                self.now + delay,
                EventKind::PacketArrival,
                item.next,
                Payload::Arrival {
                    packet: item.id,
                    from: node,
                    to: item.next,
                },
            );
        } else if self.retired.contains(&item.next) {
            self.queues.get_mut(&node).unwrap().release(&item);
            self.drop_packet(item.id, DropCause::Fault)?;
        } else {
            self.queues.get_mut(&node).unwrap().requeue_front(item);
            let count = self.fail_count.entry((node, item.next)).or_default();
            *count += 1;
            let count = *count;
            self.log("tx-fail", node, Some(item.id), &format!("to={} attempt={}", item.next, count));
            if count >= self.cfg.max_attempts && self.blocked.insert((node, item.next)) {
                let (air, _) = self.air_time(node, item.next, self.control_bits())?;
                self.events.push(
                    self.now + air,
                    EventKind::Probe,
                    node,
                    Payload::Beacon {
                        sender: node,
                        target: item.next,
                    },
                );
            }
        }
        self.after_departure(node)
    }

    fn after_departure(&mut self, node: NodeId) -> Result<(), EngineError> {
        for si in 0..self.sources.len() {
            if self.sources[si].node == node && self.t0.is_some() {
                self.feed_source(si)?;
            }
        }
        self.try_dispatch(node)
    }

    fn on_arrival(&mut self, id: usize, from: NodeId, to: NodeId) -> Result<(), EngineError> {
        if !self.packets[id].alive {
            return Ok(());
        }
        if !self.alive(to) {
            self.log("drop-fault", to, Some(id), "receiver down");
            return self.drop_packet(id, DropCause::Fault);
        }
        let bits = self.packets[id].packet.bits;
        let (air, _) = self.air_time(from, to, bits)?;
        let source = self.packets[id].packet.source;
        let kind = self.packets[id].packet.kind;
        let e = self.rx_energy(bits, air);
        self.debit(to, e, Category::Receive, source);
        if kind == PacketKind::Data {
            self.handled.entry(to).or_default().insert(source);
            *self.busy_ns.entry(to).or_default() += air;
        }
        let route = self.packets[id].route;
        let pos = self.packets[id].pos + 1;
        self.packets[id].pos = pos;
        self.packets[id].holder = to;
        if kind == PacketKind::Data {
            let tau = self.routes[route].tau;
            self.arm_timer(to, from, tau, true);
        }
        if kind == PacketKind::Choke && pos <= self.routes[route].hops {
            let occ = self.queues[&to].occupancy();
            if occ > self.cfg.choke_threshold {
                self.packets[id].choke_count += 1;
            }
        }
        if kind == PacketKind::Hello && pos == self.routes[route].hops {
            self.packets[id].packet.kind = PacketKind::Reply;
        }
        self.log("rx", to, Some(id), &format!("from={from}"));

        if pos == self.routes[route].nodes.len() - 1 {
            return self.complete(id);
        }
        if kind == PacketKind::Data {
            self.routes[route].arrived[pos] += 1;
        }
        let next = self.resolve(self.routes[route].nodes[pos + 1]);
        self.enqueue_at(to, id, next)?;
        self.try_dispatch(to)
    }

    fn complete(&mut self, id: usize) -> Result<(), EngineError> {
        let route = self.packets[id].route;
        let kind = self.packets[id].packet.kind;
        self.packets[id].alive = false;
        let si = self.routes[route].source;
        let pi = self.routes[route].path;
        match kind {
            PacketKind::Data => {
                let r = &mut self.routes[route];
                r.delivered += 1;
                r.last_delivery = Some(self.now);
                let item = self.packets[id].item as usize;
                let s = &mut self.sources[si];
                match s.first_arrival.get_mut(item) {
                    Some(slot @ None) => *slot = Some(self.now),
                    Some(Some(_)) => s.duplicates += 1,
                    None => {}
                }
                Ok(())
            }
            PacketKind::Hello | PacketKind::Reply => {
                let sent = to_secs(self.packets[id].launched_at);
                let hops = self.sources[si].paths[pi].hops;
                let tau = per_hop_tau(sent, to_secs(self.now), hops)?;
                self.sources[si].paths[pi].tau = tau;
                let data_route = self.sources[si].routes[pi];
                self.routes[data_route].tau = tau;
                self.next_setup_step(route)
            }
            PacketKind::Choke => {
                let c = self.packets[id].choke_count;
                self.sources[si].paths[pi].contention = c;
                let at = self.t0.map(|t| to_secs(self.now - t)).unwrap_or(0.0);
                self.sources[si].contention[pi].push((at, c));
                self.next_setup_step(route)
            }
            PacketKind::Beacon => Ok(()),
        }
    }

    fn next_setup_step(&mut self, route: usize) -> Result<(), EngineError> {
        if self.in_setup && self.routes[route].setup {
            self.launch_next_setup()
        } else {
            Ok(())
        }
    }

    fn drop_packet(&mut self, id: usize, cause: DropCause) -> Result<(), EngineError> {
        if !self.packets[id].alive {
            return Ok(());
        }
        self.packets[id].alive = false;
        let route = self.packets[id].route;
        if self.packets[id].packet.kind.is_control() {
            self.control_dropped += 1;
            if self.routes[route].setup {
                return self.next_setup_step(route);
            }
            return Ok(());
        }
        let si = self.routes[route].source;
        match cause {
            DropCause::Overflow => self.sources[si].dropped_overflow += 1,
            DropCause::Fault => self.sources[si].dropped_fault += 1,
        }
        self.routes[route].live = self.routes[route].live.saturating_sub(1);
        if self.cfg.forwarding == Forwarding::StoreAndForward {
            // a smaller block may now be complete somewhere along the route
            let nodes: BTreeSet<NodeId> = self.routes[route]
                .nodes
                .clone()
                .into_iter()
                .map(|n| self.resolve(n))
                .collect();
            for n in nodes {
                self.try_dispatch(n)?;
            }
        }
        Ok(())
    }

    // ---- faults --------------------------------------------------------------------

    fn on_fault(&mut self, index: usize) {
        let f = self.faults[index].clone();
        if let Some(n) = f.node {
            self.log("fault-node", n, None, "");
            self.node_fault_at.entry(n).or_insert(self.now);
            self.kill(n);
        }
        if let Some([a, b]) = f.link {
            self.log("fault-link", a, None, &format!("peer={b}"));
            self.link_fault_at.entry(ordered(a, b)).or_insert(self.now);
            if let Some(l) = self.topo.link_mut(a, b) {
                l.status = LinkStatus::Down;
            }
        }
    }

    fn kill(&mut self, n: NodeId) {
        self.topo.set_node_status(n, NodeStatus::Failed);
    }

    fn process_exhausted(&mut self) -> Result<(), EngineError> {
        while let Some(n) = self.exhausted.pop() {
            if self.alive(n) {
                self.log("energy-exhausted", n, None, "");
                self.node_fault_at.entry(n).or_insert(self.now);
                self.kill(n);
            }
        }
        Ok(())
    }

    fn arm_timer(&mut self, watcher: NodeId, upstream: NodeId, tau: f64, reception: bool) {
        if !self.timers_enabled || self.t0.is_none() || tau <= 0.0 {
            return;
        }
        let t = self.timers.entry((watcher, upstream)).or_default();
        if t.armed && !reception {
            return;
        }
        t.generation += 1;
        t.armed = true;
        t.window = from_secs(self.cfg.max_attempts as f64 * tau);
        let generation = t.generation;
        let at = self.now + t.window;
        self.events.push(
            at,
            EventKind::TimerExpiry,
            watcher,
            Payload::Timer {
                watcher,
                upstream,
                generation,
            },
        );
    }

    fn on_timer(&mut self, watcher: NodeId, upstream: NodeId, generation: u64) -> Result<(), EngineError> {
        let Some(t) = self.timers.get_mut(&(watcher, upstream)) else {
            return Ok(());
        };
        if t.generation != generation || !t.armed {
            return Ok(());
        }
        t.armed = false;
        if !self.alive(watcher) || self.alias.contains_key(&upstream) || self.retired.contains(&upstream) {
            return Ok(());
        }
        let waiting = self.queues[&upstream].any(&|q| {
            !q.control && q.next == watcher && self.eligible(upstream, q)
        });
        if !waiting {
            return Ok(());
        }
        // an upstream heard transmitting to anyone is still alive
        let window = self.timers[&(watcher, upstream)].window;
        if let Some(&heard) = self.last_tx.get(&upstream) {
            if heard + window > self.now {
                let t = self.timers.get_mut(&(watcher, upstream)).unwrap();
                t.generation += 1;
                t.armed = true;
                let generation = t.generation;
                self.events.push(
                    heard + window,
                    EventKind::TimerExpiry,
                    watcher,
                    Payload::Timer {
                        watcher,
                        upstream,
                        generation,
                    },
                );
                return Ok(());
            }
        }
        self.log("timeout", watcher, None, &format!("upstream={upstream}"));
        self.declare_faulty(upstream, watcher, Detection::ReceiverTimer)
    }

    fn on_beacon(&mut self, sender: NodeId, target: NodeId) -> Result<(), EngineError> {
        if !self.alive(sender) {
            return Ok(());
        }
        if self.alias.contains_key(&target) || self.retired.contains(&target) {
            // already resolved by someone else
            self.blocked.remove(&(sender, target));
            return self.try_dispatch(sender);
        }
        let c = self.topo.neighbors(sender).iter().copied().find(|&c| {
            c != target
                && !self.retired.contains(&c)
                && self
                    .topo
                    .node(c)
                    .is_some_and(|n| !n.is_redundant || self.used_redundant.contains(&c))
        });
        let Some(c) = c else {
            self.log("beacon-none", sender, None, &format!("target={target}"));
            return Ok(());
        };
        let bits = self.control_bits();
        let (air, _) = self.air_time(sender, c, bits)?;
        let e = self.tx_energy(sender, c, bits, air);
        self.debit(sender, e, Category::Transmit, sender);
        let reached = self.alive(c) && self.link_up(sender, c);
        self.log("beacon", sender, None, &format!("via={c} ok={reached}"));
        if reached {
            let e = self.rx_energy(bits, air);
            self.debit(c, e, Category::Receive, sender);
            self.declare_faulty(target, sender, Detection::SenderRetry)
        } else {
            let lost = self.strand_all(sender)?;
            self.retired.insert(sender);
            self.fault_records.push(FaultRecord {
                failed: sender,
                detector: sender,
                detection: Detection::SelfFailure,
                injected_at: self.node_fault_at.get(&sender).map(|&t| self.rel(t)),
                detected_at: self.rel(self.now),
                replacement: None,
                packets_lost: lost,
            });
            Ok(())
        }
    }

    fn rel(&self, t: SimTime) -> f64 {
        to_secs(t.saturating_sub(self.t0.unwrap_or(0)))
    }

    /// Drops everything queued at or being sent by `node`.
    fn strand_all(&mut self, node: NodeId) -> Result<u64, EngineError> {
        let mut ids: Vec<usize> = self
            .queues
            .get_mut(&node)
            .map(|q| q.remove_where(&|_| true).into_iter().map(|q| q.id).collect())
            .unwrap_or_default();
        let keys: Vec<_> = self.servers.range((node, None)..).take_while(|(k, _)| k.0 == node).map(|(k, _)| *k).collect();
        for k in keys {
            let s = self.servers.get_mut(&k).unwrap();
            if let Some(item) = s.busy.take() {
                s.generation += 1;
                ids.push(item.id);
            }
        }
        for si in 0..self.sources.len() {
            if self.sources[si].node == node {
                for &r in &self.sources[si].routes.clone() {
                    if let Some(b) = self.backlog.get_mut(&r) {
                        ids.extend(b.drain(..));
                    }
                }
            }
        }
        let mut lost = 0;
        for id in ids {
            if self.packets[id].alive && !self.packets[id].packet.kind.is_control() {
                lost += 1;
            }
            self.drop_packet(id, DropCause::Fault)?;
        }
        Ok(lost)
    }

    fn declare_faulty(&mut self, failed: NodeId, detector: NodeId, how: Detection) -> Result<(), EngineError> {
        if self.retired.contains(&failed) || self.alias.contains_key(&failed) {
            return Ok(());
        }
        let injected = self
            .node_fault_at
            .get(&failed)
            .or_else(|| self.link_fault_at.get(&ordered(failed, detector)))
            .map(|&t| self.rel(t));
        let lost = self.strand_all(failed)?;
        self.retired.insert(failed);
        if self.refresh.observe(TopologyEvent::NodeFailed(failed)) {
            self.refreshes += 1;
        }

        // neighbours of the failed node along every live data route
        let mut affected = BTreeSet::new();
        let mut endpoint = false;
        for r in self.routes.iter().filter(|r| r.data && !r.abandoned) {
            for (i, &n) in r.nodes.iter().enumerate() {
                if self.resolve(n) != failed {
                    continue;
                }
                if i == 0 || i == r.nodes.len() - 1 {
                    endpoint = true;
                }
                if i > 0 {
                    affected.insert(self.resolve(r.nodes[i - 1]));
                }
                if i + 1 < r.nodes.len() {
                    affected.insert(self.resolve(r.nodes[i + 1]));
                }
            }
        }
        affected.remove(&failed);
        affected.insert(detector);
        affected.retain(|&n| self.alive(n));

        let replacement = if endpoint {
            None
        } else {
            let fpos = self.topo.node(failed).map(|n| n.position);
            let mut cands: Vec<(f64, NodeId)> = self
                .topo
                .nodes()
                .iter()
                .filter(|n| n.is_redundant && n.status == NodeStatus::Alive && !self.used_redundant.contains(&n.id))
                .filter(|n| affected.iter().all(|&a| self.topo.is_adjacent(a, n.id)))
                .map(|n| {
                    let d = fpos.map(|p| crate::model::euclidean(p, n.position)).unwrap_or(0.0);
                    (d, n.id)
                })
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.first().map(|c| c.1)
        };

        self.log(
            "declare-faulty",
            detector,
            None,
            &format!(
                "failed={failed} via={} replacement={}",
                how.as_str(),
                replacement.map(|d| d.to_string()).unwrap_or_else(|| "none".into())
            ),
        );

        let mut lost_total = lost;
        match replacement {
            Some(d) => {
                self.alias.insert(failed, d);
                self.used_redundant.insert(d);
                let holders: Vec<NodeId> = self.queues.keys().copied().collect();
                for h in holders {
                    let q = self.queues.get_mut(&h).unwrap();
                    if !q.has_neighbor(failed) {
                        continue;
                    }
                    if q.rekey(failed, d).is_err() {
                        let gone = q.remove_where(&|x| x.next == failed);
                        for g in gone {
                            lost_total += u64::from(!g.control);
                            self.drop_packet(g.id, DropCause::Fault)?;
                        }
                    }
                }
                self.blocked.retain(|&(_, t)| t != failed);
                self.fail_count.retain(|&(a, b), _| a != failed && b != failed);
                for (k, t) in self.timers.iter_mut() {
                    if k.0 == failed || k.1 == failed {
                        t.armed = false;
                    }
                }
                let mut wake: Vec<NodeId> = affected.into_iter().collect();
                wake.push(d);
                for n in wake {
                    self.try_dispatch(n)?;
                }
            }
            None => {
                let doomed: Vec<usize> = (0..self.routes.len())
                    .filter(|&i| {
                        let r = &self.routes[i];
                        r.data && !r.abandoned && r.nodes.iter().any(|&n| self.resolve(n) == failed)
                    })
                    .collect();
                for r in doomed {
                    self.routes[r].abandoned = true;
                    lost_total += self.abandon_route(r)?;
                }
                let holders: Vec<NodeId> = self.queues.keys().copied().collect();
                for h in holders {
                    let gone = self.queues.get_mut(&h).unwrap().remove_where(&|x| x.next == failed);
                    for g in gone {
                        lost_total += u64::from(!g.control && self.packets[g.id].alive);
                        self.drop_packet(g.id, DropCause::Fault)?;
                    }
                }
                self.blocked.retain(|&(_, t)| t != failed);
            }
        }
        self.fault_records.push(FaultRecord {
            failed,
            detector,
            detection: how,
            injected_at: injected,
            detected_at: self.rel(self.now),
            replacement,
            packets_lost: lost_total,
        });
        Ok(())
    }

    fn abandon_route(&mut self, r: usize) -> Result<u64, EngineError> {
        let mut ids: Vec<usize> = self.backlog.get_mut(&r).map(|b| b.drain(..).collect()).unwrap_or_default();
        for q in self.queues.values_mut() {
            let routes = &self.routes;
            let packets = &self.packets;
            let _ = routes;
            ids.extend(q.remove_where(&|x| packets[x.id].route == r).into_iter().map(|x| x.id));
        }
        for s in self.servers.values_mut() {
            if s.busy.is_some_and(|x| self.packets[x.id].route == r) {
                let item = s.busy.take().unwrap();
                s.generation += 1;
                ids.push(item.id);
            }
        }
        // anything else still alive is in flight and dies on arrival
        for (i, p) in self.packets.iter().enumerate() {
            if p.alive && p.route == r && !ids.contains(&i) {
                ids.push(i);
            }
        }
        let mut lost = 0;
        for id in ids {
            if self.packets[id].alive {
                lost += 1;
            }
            self.drop_packet(id, DropCause::Fault)?;
        }
        Ok(lost)
    }

    fn on_probe_round(&mut self) -> Result<(), EngineError> {
        for si in 0..self.sources.len() {
            if !self.sources[si].choke || !self.alive(self.sources[si].node) {
                continue;
            }
            for pi in 0..self.sources[si].paths.len() {
                if self.routes[self.sources[si].routes[pi]].abandoned {
                    continue;
                }
                let r = self.round_trip_route(si, pi);
                self.routes[r].setup = false;
                self.launch_control(r, PacketKind::Choke)?;
            }
        }
        Ok(())
    }

    // ---- wrap-up -------------------------------------------------------------------

    fn finish(mut self) -> RunMetrics {
        // whatever is still alive is stuck behind a fault that was never resolved
        let stuck: Vec<usize> = (0..self.packets.len()).filter(|&i| self.packets[i].alive).collect();
        for id in stuck {
            let _ = self.drop_packet(id, DropCause::Fault);
        }

        let t0 = self.t0.unwrap_or(self.now);
        let last = self
            .routes
            .iter()
            .filter_map(|r| r.last_delivery)
            .max()
            .unwrap_or(t0);
        let duration = to_secs(last.saturating_sub(t0));
        let nodes: Vec<NodeId> = match self.cfg.sensing {
            SensingScope::Participants => self.handled.keys().copied().collect(),
            SensingScope::AllNodes => self
                .topo
                .nodes()
                .iter()
                .filter(|n| n.status == NodeStatus::Alive)
                .map(|n| n.id)
                .collect(),
        };
        for n in nodes {
            let srcs = self.handled.get(&n).cloned().unwrap_or_default();
            self.ledger
                .debit_shared(n, self.params.k_r * duration, Category::Sensing, &srcs);
            if let Some(p) = self.cfg.idle_power {
                let busy = to_secs(self.busy_ns.get(&n).copied().unwrap_or(0));
                let idle = (duration - busy).max(0.0);
                self.ledger.debit_shared(n, p * idle, Category::Idle, &srcs);
            }
        }

        let mut sources = Vec::new();
        for (si, s) in self.sources.iter().enumerate() {
            let alloc = s.allocation.as_ref();
            let mut paths = Vec::new();
            let mut injected = 0;
            let mut delivered = 0;
            for (pi, &r) in s.routes.iter().enumerate() {
                let route = &self.routes[r];
                injected += route.injected;
                delivered += route.delivered;
                paths.push(PathMetrics {
                    index: pi,
                    nodes: s.paths[pi].nodes.clone(),
                    hops: s.paths[pi].hops,
                    tau: s.paths[pi].tau,
                    quota: route.injected,
                    injected: route.injected,
                    delivered: route.delivered,
                    delivery_time: route.last_delivery.map(|t| to_secs(t - t0)).unwrap_or(0.0),
                    queue_delay: if route.waits == 0 {
                        0.0
                    } else {
                        route.wait_ns as f64 / route.waits as f64 / 1e9
                    },
                    contention: s.contention[pi].clone(),
                    raw_quota: alloc.and_then(|a| a.raw_quotas.get(pi).copied()),
                    exceeds_bound: alloc.is_some_and(|a| a.exceeds_bound.get(pi) == Some(&true)),
                });
            }
            let unique = s.first_arrival.iter().filter(|x| x.is_some()).count() as u64;
            let completion = s
                .first_arrival
                .iter()
                .flatten()
                .max()
                .map(|&t| to_secs(t - t0))
                .unwrap_or(0.0);
            let _ = si;
            sources.push(SourceMetrics {
                source: s.node,
                packets: s.packets,
                injected,
                delivered,
                unique_delivered: unique,
                duplicates: s.duplicates,
                dropped_overflow: s.dropped_overflow,
                dropped_fault: s.dropped_fault,
                completion_time: completion,
                energy: self.ledger.attributed(Some(s.node)),
                paths,
            });
        }
        let total_completion_time = sources.iter().map(|s| s.completion_time).fold(0.0, f64::max);
        RunMetrics {
            scenario_hash: self.scenario_hash,
            seed: self.seed,
            t0: to_secs(t0),
            total_completion_time,
            total_energy: self.ledger.total_debited(),
            energy: EnergyBreakdown {
                transmit: self.ledger.category(Category::Transmit),
                receive: self.ledger.category(Category::Receive),
                sensing: self.ledger.category(Category::Sensing),
                idle: self.ledger.category(Category::Idle),
                unattributed: self.ledger.attributed(None),
            },
            initial_energy: self.ledger.total_initial(),
            residual_energy: self.ledger.residuals().collect(),
            dropped_overflow: sources.iter().map(|s| s.dropped_overflow).sum(),
            dropped_fault: sources.iter().map(|s| s.dropped_fault).sum(),
            control_dropped: self.control_dropped,
            retransmissions: self.retransmissions,
            faults: self.fault_records,
            table_refreshes: self.refreshes,
            events: self.processed,
            end_time: to_secs(self.now),
            trace: self.trace,
            sources,
        }
    }
}

const CHOKE_FLAG: usize = 1 << (usize::BITS - 1);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, EnergyMode, SourcePlan};
    use crate::model::DATA_PRIORITY;

    fn scenario(extra_engine: &str, link_delay: f64) -> Scenario {
        // 1 and 4 feed sink 3 through relay 2
        let text = format!(
            r#"
sink = 3
[link_defaults]
bit_rate = 50000.0
delay = {link_delay}
[engine]
{extra_engine}
[[sources]]
id = 1
packets = 1
[[sources]]
id = 4
packets = 1
[[nodes]]
id = 1
x = 0.0
y = 0.0
[[nodes]]
id = 2
x = 2.0
y = 0.0
[[nodes]]
id = 3
x = 4.0
y = 0.0
[[nodes]]
id = 4
x = 2.0
y = 2.0
"#
        );
        let text = if extra_engine.contains("setup_probes") {
            text
        } else {
            text.replace("[engine]", "[engine]\nsetup_probes = false")
        };
        Scenario::from_toml_str(&text).unwrap()
    }

    fn plan(s: &Scenario, routes: &[(u32, &[u32], u64)]) -> RunPlan {
        RunPlan {
            sources: routes
                .iter()
                .map(|(src, nodes, d)| SourcePlan {
                    source: NodeId(*src),
                    packets: *d,
                    paths: vec![s
                        .topology
                        .validate_path(&nodes.iter().map(|&n| NodeId(n)).collect::<Vec<_>>())
                        .unwrap()],
                    rule: QuotaRule::Fixed(vec![*d]),
                    replicate: false,
                    choke: false,
                    priority: DATA_PRIORITY,
                })
                .collect(),
            config: s.engine.clone(),
            seed: 0,
        }
    }

    #[test]
    fn lone_packet_takes_service_plus_propagation() {
        let s = scenario("", 0.001);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 1)])).unwrap();
        assert_eq!(m.total_completion_time, 2.0 * (0.02 + 0.001));
        assert_eq!(m.t0, 0.0);
    }

    #[test]
    fn plan_must_end_at_the_sink() {
        let s = scenario("", 0.0);
        let err = run(&s, &plan(&s, &[(1, &[1, 2], 1)])).unwrap_err();
        assert!(matches!(err, EngineError::Plan(_)));
    }

    #[test]
    fn back_to_back_packets_pipeline_over_one_hop() {
        let s = scenario("", 0.001);
        let mut p = plan(&s, &[(4, &[4, 2, 3], 2)]);
        p.sources[0].paths = vec![s.topology.validate_path(&[NodeId(2), NodeId(3)]).unwrap()];
        p.sources[0].source = NodeId(2);
        // 2 is not a scenario source, but a plan may start anywhere
        let m = run(&s, &p).unwrap();
        assert!((m.total_completion_time - (2.0 * 0.02 + 0.001)).abs() < 1e-12);
    }

    #[test]
    fn shared_relay_serialises_sources() {
        let s = scenario("", 0.0);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 1), (4, &[4, 2, 3], 1)])).unwrap();
        // both reach 2 at 0.02; 2 sends one after the other
        assert!((m.total_completion_time - 0.06).abs() < 1e-12);
        let done: Vec<f64> = m.sources.iter().map(|s| s.completion_time).collect();
        assert!((done[0] - 0.04).abs() < 1e-12 && (done[1] - 0.06).abs() < 1e-12);
    }

    #[test]
    fn link_scope_relay_does_not_serialise_different_next_hops() {
        let s = scenario("service = \"link\"", 0.0);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 1), (4, &[4, 2, 3], 1)])).unwrap();
        // same next hop, so still serial
        assert!((m.total_completion_time - 0.06).abs() < 1e-12);
    }

    #[test]
    fn no_data_means_no_energy_and_no_delay() {
        let s = scenario("", 0.0);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 0)])).unwrap();
        assert_eq!(m.total_completion_time, 0.0);
        assert_eq!(m.total_energy, 0.0);
        assert_eq!(m.injected(), 0);
    }

    #[test]
    fn per_packet_energy_matches_table_constants() {
        let mut s = scenario("energy = \"per-packet\"", 0.0);
        s.params.k_r = 1e-300;
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 1)])).unwrap();
        let tx = 1024e-6 * 0.02;
        let rx = 819.2e-6 * 0.02;
        assert!((m.energy.transmit - 2.0 * tx).abs() < 1e-15);
        assert!((m.energy.receive - 2.0 * rx).abs() < 1e-15);
        let r1 = m.residual_energy.iter().find(|(n, _)| *n == NodeId(1)).unwrap().1;
        assert!((m.initial_energy / 4.0 - r1 - tx).abs() < 1e-9);
        assert_eq!(s.engine.energy, EnergyMode::PerPacket);
    }

    #[test]
    fn ledger_balances() {
        let s = scenario("idle_power = 0.001", 0.0005);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 20), (4, &[4, 2, 3], 15)])).unwrap();
        assert_eq!(m.delivered() + m.dropped_overflow + m.dropped_fault, m.injected());
        let spent = m.initial_energy - m.residual_total();
        assert!((spent - m.total_energy).abs() < 1e-9);
        let parts = m.energy.transmit + m.energy.receive + m.energy.sensing + m.energy.idle;
        assert!((parts - m.total_energy).abs() < 1e-12);
        let attributed: f64 = m.sources.iter().map(|s| s.energy).sum::<f64>() + m.energy.unattributed;
        assert!((attributed - m.total_energy).abs() < 1e-12);
    }

    #[test]
    fn store_and_forward_moves_whole_blocks() {
        let s = scenario("forwarding = \"store-and-forward\"", 0.0);
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 10)])).unwrap();
        // 10 packets per hop, two hops
        assert!((m.total_completion_time - 2.0 * 10.0 * 0.02).abs() < 1e-12);
        let p = run(&s, &{
            let mut p = plan(&s, &[(1, &[1, 2, 3], 10)]);
            p.config.forwarding = Forwarding::Pipelined;
            p
        })
        .unwrap();
        assert!((p.total_completion_time - 11.0 * 0.02).abs() < 1e-12);
    }

    #[test]
    fn probes_measure_idle_latency() {
        let s = scenario("setup_probes = true", 0.0);
        let text = s.file.to_toml();
        assert!(text.contains("setup_probes = true"));
        let m = run(&s, &plan(&s, &[(1, &[1, 2, 3], 5)])).unwrap();
        // one hello round trip over two hops
        assert!((m.t0 - 4.0 * 0.02).abs() < 1e-12);
        assert!((m.sources[0].paths[0].tau - 0.02).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_trace() {
        let s = scenario("loss_probability = 0.2\ntrace = true\nreceiver_timers = false\nmax_attempts = 1000", 0.0);
        let p = plan(&s, &[(1, &[1, 2, 3], 30), (4, &[4, 2, 3], 30)]);
        let a = Simulation::new(&s, &p).unwrap().run().unwrap();
        let b = Simulation::new(&s, &p).unwrap().run().unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.to_csv("x"), b.to_csv("x"));
        assert!(a.retransmissions > 0);
        assert_eq!(a.delivered(), 60);
    }
}
