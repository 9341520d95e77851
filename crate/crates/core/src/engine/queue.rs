use std::collections::VecDeque;

use crate::model::NodeId;

/// A queued packet as seen by the queue: identity, next hop and drop ordering keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QItem {
    pub id: usize,
    pub next: NodeId,
    pub priority: u8,
    pub seq: u64,
    pub control: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    Accepted,
    /// The packet dropped to make room; may be the arrival itself.
    Dropped(QItem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotNeighbor(pub NodeId);

/// Index of the overflow victim in `items` (plus `arrival` appended last): lowest
/// priority, newest first among equals.
fn victim(items: &VecDeque<QItem>, arrival: &QItem) -> Option<usize> {
    items
        .iter()
        .chain(std::iter::once(arrival))
        .enumerate()
        .min_by(|(_, a), (_, b)| a.priority.cmp(&b.priority).then(b.seq.cmp(&a.seq)))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone)]
struct SubQueue {
    neighbor: NodeId,
    items: VecDeque<QItem>,
    in_service: usize,
}

/// Per-neighbour data sub-queues, a reserved control queue and a round-robin cursor.
#[derive(Debug, Clone)]
pub struct FragmentedQueue {
    owner: NodeId,
    capacity: usize,
    subs: Vec<SubQueue>,
    control: VecDeque<QItem>,
    cursor: usize,
}

impl FragmentedQueue {
    /// `neighbors` must be sorted; each sub-queue holds `capacity` packets.
    pub fn new(owner: NodeId, neighbors: &[NodeId], capacity: usize) -> Self {
        Self {
            owner,
            capacity,
            subs: neighbors
                .iter()
                .map(|&n| SubQueue {
                    neighbor: n,
                    items: VecDeque::new(),
                    in_service: 0,
                })
                .collect(),
            control: VecDeque::new(),
            cursor: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn sub(&self, next: NodeId) -> Option<usize> {
        self.subs.iter().position(|s| s.neighbor == next)
    }

    pub fn enqueue(&mut self, item: QItem) -> Result<Enqueue, NotNeighbor> {
        let i = self.sub(item.next).ok_or(NotNeighbor(item.next))?;
        if item.control {
            self.control.push_back(item);
            return Ok(Enqueue::Accepted);
        }
        let cap = self.capacity;
        let sub = &mut self.subs[i];
        if sub.items.len() + sub.in_service < cap {
            sub.items.push_back(item);
            return Ok(Enqueue::Accepted);
        }
        match victim(&sub.items, &item) {
            Some(v) if v < sub.items.len() => {
                let dropped = sub.items.remove(v).expect("index in range");
                sub.items.push_back(item);
                Ok(Enqueue::Dropped(dropped))
            }
            _ => Ok(Enqueue::Dropped(item)),
        }
    }

    /// Control first, then the next non-empty sub-queue after the cursor.
    pub fn dispatch_next(&mut self, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        if let Some(pos) = self.control.iter().position(|q| eligible(q)) {
            let item = self.control.remove(pos).expect("index in range");
            return Some(item);
        }
        let n = self.subs.len();
        for k in 0..n {
            let i = (self.cursor + k) % n;
            if let Some(pos) = self.subs[i].items.iter().position(|q| eligible(q)) {
                let item = self.subs[i].items.remove(pos).expect("index in range");
                self.subs[i].in_service += 1;
                self.cursor = (i + 1) % n;
                return Some(item);
            }
        }
        None
    }

    /// Like [`dispatch_next`](Self::dispatch_next) restricted to one outgoing link.
    pub fn dispatch_for(&mut self, next: NodeId, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        if let Some(pos) = self
            .control
            .iter()
            .position(|q| q.next == next && eligible(q))
        {
            return self.control.remove(pos);
        }
        let i = self.sub(next)?;
        let pos = self.subs[i].items.iter().position(|q| eligible(q))?;
        self.subs[i].in_service += 1;
        self.subs[i].items.remove(pos)
    }

    /// Frees the slot held by a data packet that finished service.
    pub fn release(&mut self, item: &QItem) {
        if item.control {
            return;
        }
        if let Some(i) = self.sub(item.next) {
            self.subs[i].in_service = self.subs[i].in_service.saturating_sub(1);
        }
    }

    /// Puts a packet back at the head of its queue after a failed attempt.
    pub fn requeue_front(&mut self, item: QItem) {
        self.release(&item);
        if item.control {
            self.control.push_front(item);
        } else if let Some(i) = self.sub(item.next) {
            self.subs[i].items.push_front(item);
        }
    }

    /// Moves everything addressed to `old` onto `new`'s sub-queue (which must exist).
    pub fn rekey(&mut self, old: NodeId, new: NodeId) -> Result<(), NotNeighbor> {
        let Some(o) = self.sub(old) else {
            return Ok(());
        };
        let n = self.sub(new).ok_or(NotNeighbor(new))?;
        let moved: Vec<QItem> = self.subs[o].items.drain(..).collect();
        for mut q in moved {
            q.next = new;
            self.subs[n].items.push_back(q);
        }
        for q in self.control.iter_mut().filter(|q| q.next == old) {
            q.next = new;
        }
        Ok(())
    }

    pub fn remove_where(&mut self, pred: &dyn Fn(&QItem) -> bool) -> Vec<QItem> {
        let mut out = Vec::new();
        let mut keep = |q: &mut VecDeque<QItem>| {
            let (gone, stay): (Vec<QItem>, Vec<QItem>) = q.drain(..).partition(|x| pred(x));
            out.extend(gone);
            q.extend(stay);
        };
        keep(&mut self.control);
        for s in &mut self.subs {
            keep(&mut s.items);
        }
        out
    }

    /// Data packets held plus those in service, as a fraction of total data capacity.
    pub fn occupancy(&self) -> f64 {
        let total = self.capacity * self.subs.len();
        if total == 0 {
            return 0.0;
        }
        let held: usize = self.subs.iter().map(|s| s.items.len() + s.in_service).sum();
        held as f64 / total as f64
    }

    /// Data packets queued toward `next`, including one in service.
    pub fn sub_len(&self, next: NodeId) -> usize {
        self.sub(next)
            .map(|i| self.subs[i].items.len() + self.subs[i].in_service)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty() && self.subs.iter().all(|s| s.items.is_empty())
    }

    pub fn has_neighbor(&self, n: NodeId) -> bool {
        self.sub(n).is_some()
    }

    /// Whether any waiting packet (not one in service) satisfies `pred`.
    pub fn any(&self, pred: &dyn Fn(&QItem) -> bool) -> bool {
        self.control.iter().chain(self.subs.iter().flat_map(|s| s.items.iter())).any(pred)
    }
}

/// One shared FIFO: only the head may be served, control packets wait in line.
#[derive(Debug, Clone)]
pub struct FifoQueue {
    owner: NodeId,
    neighbors: Vec<NodeId>,
    capacity: usize,
    items: VecDeque<QItem>,
    in_service: usize,
}

impl FifoQueue {
    pub fn new(owner: NodeId, neighbors: &[NodeId], capacity: usize) -> Self {
        Self {
            owner,
            neighbors: neighbors.to_vec(),
            capacity,
            items: VecDeque::new(),
            in_service: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn enqueue(&mut self, item: QItem) -> Result<Enqueue, NotNeighbor> {
        if !self.neighbors.contains(&item.next) {
            return Err(NotNeighbor(item.next));
        }
        if self.items.len() + self.in_service < self.capacity {
            self.items.push_back(item);
            return Ok(Enqueue::Accepted);
        }
        match victim(&self.items, &item) {
            Some(v) if v < self.items.len() => {
                let dropped = self.items.remove(v).expect("index in range");
                self.items.push_back(item);
                Ok(Enqueue::Dropped(dropped))
            }
            _ => Ok(Enqueue::Dropped(item)),
        }
    }

    pub fn dispatch_next(&mut self, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        let head = self.items.front()?;
        if !eligible(head) {
            return None;
        }
        self.in_service += 1;
        self.items.pop_front()
    }

    pub fn dispatch_for(&mut self, next: NodeId, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        let head = self.items.front()?;
        if head.next != next || !eligible(head) {
            return None;
        }
        self.in_service += 1;
        self.items.pop_front()
    }

    pub fn release(&mut self, _item: &QItem) {
        self.in_service = self.in_service.saturating_sub(1);
    }

    pub fn requeue_front(&mut self, item: QItem) {
        self.release(&item);
        self.items.push_front(item);
    }

    pub fn rekey(&mut self, old: NodeId, new: NodeId) -> Result<(), NotNeighbor> {
        if !self.items.iter().any(|q| q.next == old) {
            return Ok(());
        }
        if !self.neighbors.contains(&new) {
            return Err(NotNeighbor(new));
        }
        for q in self.items.iter_mut().filter(|q| q.next == old) {
            q.next = new;
        }
        Ok(())
    }

    pub fn remove_where(&mut self, pred: &dyn Fn(&QItem) -> bool) -> Vec<QItem> {
        let (gone, stay): (Vec<QItem>, Vec<QItem>) = self.items.drain(..).partition(|x| pred(x));
        self.items.extend(stay);
        gone
    }

    pub fn occupancy(&self) -> f64 {
        if self.capacity == 0 {
            return 0.0;
        }
        (self.items.len() + self.in_service) as f64 / self.capacity as f64
    }

    pub fn len(&self) -> usize {
        self.items.len() + self.in_service
    }

    pub fn any(&self, pred: &dyn Fn(&QItem) -> bool) -> bool {
        self.items.iter().any(pred)
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Queue of one node under the configured discipline.
#[derive(Debug, Clone)]
pub enum NodeQueue {
    Fragmented(FragmentedQueue),
    Fifo(FifoQueue),
}

impl NodeQueue {
    pub fn enqueue(&mut self, item: QItem) -> Result<Enqueue, NotNeighbor> {
        match self {
            NodeQueue::Fragmented(q) => q.enqueue(item),
            NodeQueue::Fifo(q) => q.enqueue(item),
        }
    }

    pub fn dispatch_next(&mut self, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        match self {
            NodeQueue::Fragmented(q) => q.dispatch_next(eligible),
            NodeQueue::Fifo(q) => q.dispatch_next(eligible),
        }
    }

    pub fn dispatch_for(&mut self, next: NodeId, eligible: &dyn Fn(&QItem) -> bool) -> Option<QItem> {
        match self {
            NodeQueue::Fragmented(q) => q.dispatch_for(next, eligible),
            NodeQueue::Fifo(q) => q.dispatch_for(next, eligible),
        }
    }

    pub fn release(&mut self, item: &QItem) {
        match self {
            NodeQueue::Fragmented(q) => q.release(item),
            NodeQueue::Fifo(q) => q.release(item),
        }
    }

    pub fn requeue_front(&mut self, item: QItem) {
        match self {
            NodeQueue::Fragmented(q) => q.requeue_front(item),
            NodeQueue::Fifo(q) => q.requeue_front(item),
        }
    }

    pub fn rekey(&mut self, old: NodeId, new: NodeId) -> Result<(), NotNeighbor> {
        match self {
            NodeQueue::Fragmented(q) => q.rekey(old, new),
            NodeQueue::Fifo(q) => q.rekey(old, new),
        }
    }

    pub fn remove_where(&mut self, pred: &dyn Fn(&QItem) -> bool) -> Vec<QItem> {
        match self {
            NodeQueue::Fragmented(q) => q.remove_where(pred),
            NodeQueue::Fifo(q) => q.remove_where(pred),
        }
    }

    pub fn occupancy(&self) -> f64 {
        match self {
            NodeQueue::Fragmented(q) => q.occupancy(),
            NodeQueue::Fifo(q) => q.occupancy(),
        }
    }

    /// Packets that count against the admission threshold for traffic toward `next`.
    pub fn admission_load(&self, next: NodeId) -> (usize, usize) {
        match self {
            NodeQueue::Fragmented(q) => (q.sub_len(next), q.capacity()),
            NodeQueue::Fifo(q) => (q.len(), q.capacity),
        }
    }

    pub fn has_neighbor(&self, n: NodeId) -> bool {
        match self {
            NodeQueue::Fragmented(q) => q.has_neighbor(n),
            NodeQueue::Fifo(q) => q.neighbors.contains(&n),
        }
    }

    pub fn any(&self, pred: &dyn Fn(&QItem) -> bool) -> bool {
        match self {
            NodeQueue::Fragmented(q) => q.any(pred),
            NodeQueue::Fifo(q) => q.any(pred),
        }
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn subqueue_bound_and_fifo_order(ops in prop::collection::vec((0usize..3, 0u8..4), 1..200), cap in 1usize..6) {
            let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
            let mut q = FragmentedQueue::new(NodeId(0), &nbrs, cap);
            let mut accepted: Vec<Vec<usize>> = vec![vec![]; 3];
            for (id, (n, pr)) in ops.iter().enumerate() {
                let item = QItem { id, next: nbrs[*n], priority: *pr, seq: id as u64, control: false };
                match q.enqueue(item).unwrap() {
                    Enqueue::Accepted => accepted[*n].push(id),
                    Enqueue::Dropped(v) => {
                        if v.id != id {
                            accepted[*n].retain(|&x| x != v.id);
                            accepted[*n].push(id);
                        }
                        prop_assert!(v.priority <= *pr);
                    }
                }
                for nb in nbrs { prop_assert!(q.sub_len(nb) <= cap); }
            }
            // each sub-queue drains in arrival order
            let mut seen: Vec<Vec<usize>> = vec![vec![]; 3];
            while let Some(x) = q.dispatch_next(&|_| true) {
                let k = nbrs.iter().position(|&n| n == x.next).unwrap();
                seen[k].push(x.id);
                q.release(&x);
            }
            prop_assert_eq!(seen, accepted);
        }
    }
}
