use std::fmt;
use std::sync::Arc;

use super::{AbortAttempt, AbortCause, LockCtx, LockMode, Protocol, TxnRef};
use crate::error::{Error, Result};
use crate::storage::TxnId;

/// One transaction's request on one tuple.
#[derive(Clone)]
pub struct LockReq {
    txn: TxnRef,
    mode: LockMode,
    /// Whether this request currently contributes one to the holder's
    /// commit semaphore.
    counted: bool,
    /// Uncommitted value exposed by a retired EX holder.
    dirty: Option<Arc<[u8]>>,
}

impl LockReq {
    fn new(txn: &TxnRef, mode: LockMode) -> Self {
        LockReq { txn: Arc::clone(txn), mode, counted: false, dirty: None }
    }

    pub fn txn(&self) -> &TxnRef {
        &self.txn
    }

    pub fn id(&self) -> TxnId {
        self.txn.id()
    }

    pub fn mode(&self) -> LockMode {
        self.mode
    }

    pub fn counted(&self) -> bool {
        self.counted
    }

    pub fn dirty(&self) -> Option<&Arc<[u8]>> {
        self.dirty.as_ref()
    }
}

impl fmt::Debug for LockReq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}/{}", self.id(), self.mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquired {
    Granted,
    Waiting,
    AbortSelf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ListKind {
    Retired,
    Owners,
    Waiters,
}

/// The version a lock holder observes on this tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum Visible {
    /// The value stored in the table.
    Committed,
    Dirty { writer: TxnId, value: Arc<[u8]> },
}

/// Plain copy of the three lists, used for assertions and differential tests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntrySnapshot {
    pub retired: Vec<(TxnId, LockMode)>,
    pub owners: Vec<(TxnId, LockMode)>,
    pub waiters: Vec<(TxnId, LockMode)>,
}

impl EntrySnapshot {
    pub fn list(&self, kind: ListKind) -> &[(TxnId, LockMode)] {
        match kind {
            ListKind::Retired => &self.retired,
            ListKind::Owners => &self.owners,
            ListKind::Waiters => &self.waiters,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.retired.is_empty() && self.owners.is_empty() && self.waiters.is_empty()
    }
}

pub fn format_list(list: &[(TxnId, LockMode)]) -> String {
    let items: Vec<String> = list.iter().map(|(id, m)| format!("T{id}/{m}")).collect();
    format!("[{}]", items.join(", "))
}

impl fmt::Display for EntrySnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "retired={} owners={} waiters={}",
            format_list(&self.retired),
            format_list(&self.owners),
            format_list(&self.waiters)
        )
    }
}

/// The three lists of one lock entry. All methods expect the entry latch
/// to be held, which `&mut self` through the mutex guard guarantees.
#[derive(Debug, Default)]
pub struct EntryState {
    retired: Vec<LockReq>,
    owners: Vec<LockReq>,
    waiters: Vec<LockReq>,
}

impl EntryState {
    pub fn retired(&self) -> &[LockReq] {
        &self.retired
    }

    pub fn owners(&self) -> &[LockReq] {
        &self.owners
    }

    pub fn waiters(&self) -> &[LockReq] {
        &self.waiters
    }

    pub fn is_empty(&self) -> bool {
        self.retired.is_empty() && self.owners.is_empty() && self.waiters.is_empty()
    }

    pub fn snapshot(&self) -> EntrySnapshot {
        let conv = |l: &[LockReq]| l.iter().map(|r| (r.id(), r.mode)).collect();
        EntrySnapshot { retired: conv(&self.retired), owners: conv(&self.owners), waiters: conv(&self.waiters) }
    }

    pub fn find(&self, id: TxnId) -> Option<(ListKind, usize)> {
        let pos = |l: &[LockReq]| l.iter().position(|r| r.id() == id);
        if let Some(i) = pos(&self.retired) {
            return Some((ListKind::Retired, i));
        }
        if let Some(i) = pos(&self.owners) {
            return Some((ListKind::Owners, i));
        }
        pos(&self.waiters).map(|i| (ListKind::Waiters, i))
    }

    /// The list and mode under which `id` holds (not waits for) this lock.
    pub fn held(&self, id: TxnId) -> Option<(ListKind, LockMode)> {
        match self.find(id) {
            Some((ListKind::Waiters, _)) | None => None,
            Some((kind, i)) => Some((kind, self.list(kind)[i].mode)),
        }
    }

    fn list(&self, kind: ListKind) -> &[LockReq] {
        match kind {
            ListKind::Retired => &self.retired,
            ListKind::Owners => &self.owners,
            ListKind::Waiters => &self.waiters,
        }
    }

    fn holders(&self) -> impl Iterator<Item = &LockReq> {
        self.retired.iter().chain(self.owners.iter())
    }

    fn holder_count(&self) -> usize {
        self.retired.len() + self.owners.len()
    }

    fn holder(&self, i: usize) -> &LockReq {
        if i < self.retired.len() {
            &self.retired[i]
        } else {
            &self.owners[i - self.retired.len()]
        }
    }

    fn holder_index(&self, id: TxnId) -> Option<usize> {
        self.holders().position(|r| r.id() == id)
    }

    fn take_holder(&mut self, i: usize) -> LockReq {
        let req = if i < self.retired.len() { self.retired.remove(i) } else { self.owners.remove(i - self.retired.len()) };
        drop_count(req)
    }

    /// Requests the lock. The outcome is `Granted` iff `txn` holds the lock
    /// when this returns.
    pub fn acquire(&mut self, ctx: &LockCtx<'_>, txn: &TxnRef, mode: LockMode) -> Acquired {
        if txn.is_aborted() {
            return Acquired::AbortSelf;
        }
        self.purge_aborted(ctx, txn.id());
        if let Some((kind, i)) = self.find(txn.id()) {
            let held = self.list(kind)[i].mode;
            match kind {
                ListKind::Waiters => return Acquired::Waiting,
                ListKind::Retired if held == LockMode::Exclusive && mode == LockMode::Exclusive => {
                    self.reacquire_after_retire(ctx, txn.id(), i);
                    return Acquired::Granted;
                }
                _ if held == LockMode::Exclusive || mode == LockMode::Shared => return Acquired::Granted,
                _ => {
                    // upgrade: drop the shared entry and queue a fresh EX request
                    let req = match kind {
                        ListKind::Retired => self.retired.remove(i),
                        _ => self.owners.remove(i),
                    };
                    drop_count(req);
                    self.recompute();
                }
            }
        }
        txn.clear_granted();
        if ctx.policy.flags.dynamic_ts {
            self.assign_ts_on_conflict(ctx, txn, mode);
        }
        match ctx.policy.protocol {
            Protocol::NoWait => {
                if self.holders().any(|r| mode.conflicts(r.mode)) {
                    // an upgrade may have dropped our shared hold above
                    self.promote_waiters(ctx);
                    return Acquired::AbortSelf;
                }
                self.enqueue(txn, mode);
                self.promote_waiters(ctx);
            }
            Protocol::WaitDie => {
                let me = txn.ts();
                let older_conflict = self
                    .holders()
                    .chain(self.waiters.iter())
                    .any(|r| mode.conflicts(r.mode) && r.txn.ts() < me && !r.txn.is_committed());
                if older_conflict {
                    self.promote_waiters(ctx);
                    return Acquired::AbortSelf;
                }
                self.enqueue(txn, mode);
                self.promote_waiters(ctx);
                self.kill_overtaken_waiters(ctx, txn.id());
            }
            Protocol::WoundWait | Protocol::Bamboo => {
                if ctx.policy.is_bamboo() && ctx.policy.flags.no_raw_abort && mode == LockMode::Shared {
                    return self.acquire_read_in_order(ctx, txn);
                }
                self.wound(ctx, txn, mode);
                self.enqueue(txn, mode);
                self.promote_waiters(ctx);
            }
        }
        if self.held(txn.id()).is_some() {
            Acquired::Granted
        } else {
            Acquired::Waiting
        }
    }

    /// Drops requests of transactions already flagged aborted whose own
    /// threads have not cleaned up yet, so nobody new reads their writes.
    fn purge_aborted(&mut self, ctx: &LockCtx<'_>, me: TxnId) {
        let before = self.waiters.len();
        self.waiters.retain(|w| w.id() == me || !w.txn.is_aborted());
        let mut changed = before != self.waiters.len();
        let mut i = 0;
        while i < self.holder_count() {
            let r = self.holder(i);
            if r.id() != me && r.txn.is_aborted() {
                self.evict(ctx, i);
                changed = true;
                continue;
            }
            i += 1;
        }
        if changed {
            self.recompute();
        }
    }

    /// Wait-die only lets older transactions wait. A waiter that now has an
    /// older conflicting request ahead of it (one that was queued or granted
    /// past it) dies instead.
    fn kill_overtaken_waiters(&mut self, ctx: &LockCtx<'_>, requester: TxnId) {
        let mut k = 0;
        let mut changed = false;
        while k < self.waiters.len() {
            let w = &self.waiters[k];
            let blocked_by_older = self
                .holders()
                .chain(self.waiters[..k].iter())
                .any(|a| w.mode.conflicts(a.mode) && a.txn.ts() < w.txn.ts() && !a.txn.is_committed());
            if blocked_by_older {
                let victim = Arc::clone(&w.txn);
                ctx.abort_other(&victim, AbortCause::Wound, requester);
                self.waiters.remove(k);
                changed = true;
                continue;
            }
            k += 1;
        }
        if changed {
            self.promote_waiters(ctx);
        }
    }

    /// Marks every younger conflicting holder aborted and removes it from
    /// this entry. Holders past their commit point stay and are waited for.
    fn wound(&mut self, ctx: &LockCtx<'_>, txn: &TxnRef, mode: LockMode) {
        let me = txn.ts();
        let mut i = 0;
        while i < self.holder_count() {
            let r = self.holder(i);
            if r.id() != txn.id() && mode.conflicts(r.mode) && r.txn.ts() > me {
                let victim = Arc::clone(&r.txn);
                if ctx.abort_other(&victim, AbortCause::Wound, txn.id()) != AbortAttempt::Committed {
                    self.evict(ctx, i);
                    continue;
                }
            }
            i += 1;
        }
    }

    /// Removes the holder at combined index `i`. A retired EX holder takes
    /// every later holder with it, since those may have seen its write.
    fn evict(&mut self, ctx: &LockCtx<'_>, i: usize) -> Vec<TxnRef> {
        let cascades = i < self.retired.len() && self.retired[i].mode == LockMode::Exclusive;
        let victim = self.take_holder(i);
        let mut out = vec![Arc::clone(&victim.txn)];
        if cascades {
            out.extend(self.cut_from(ctx, i, victim.id()));
        }
        out
    }

    /// Cascade-aborts and removes every holder at combined index `>= from`.
    fn cut_from(&mut self, ctx: &LockCtx<'_>, from: usize, parent: TxnId) -> Vec<TxnRef> {
        let r_len = self.retired.len();
        let from_retired = if from < r_len { self.retired.split_off(from) } else { Vec::new() };
        let owner_from = from.saturating_sub(r_len).min(self.owners.len());
        let from_owners = self.owners.split_off(owner_from);
        let mut out = Vec::new();
        for (req, retired) in from_retired.into_iter().map(|r| (r, true)).chain(from_owners.into_iter().map(|r| (r, false))) {
            if ctx.abort_other(&req.txn, AbortCause::Cascade, parent) == AbortAttempt::Committed {
                // a holder behind an uncommitted EX always depends on it
                debug_assert!(false, "committed T{} found behind a cascading abort", req.id());
                if retired { self.retired.push(req) } else { self.owners.push(req) }
                continue;
            }
            out.push(Arc::clone(&drop_count(req).txn));
        }
        out
    }

    fn reacquire_after_retire(&mut self, ctx: &LockCtx<'_>, id: TxnId, i: usize) {
        self.cut_from(ctx, i + 1, id);
        let mut req = self.retired.remove(i);
        req.dirty = None;
        debug_assert!(self.owners.is_empty());
        self.owners.push(req);
        self.recompute();
    }

    /// Readers that may not wound writers slot into `retired` right after
    /// every older or already committed holder and read what is ahead.
    fn acquire_read_in_order(&mut self, ctx: &LockCtx<'_>, txn: &TxnRef) -> Acquired {
        let me = txn.ts();
        let ex_held = self.holders().any(|r| r.mode == LockMode::Exclusive);
        let must_wait = self
            .owners
            .iter()
            .any(|o| o.mode == LockMode::Exclusive && (o.txn.ts() < me || o.txn.is_committed()))
            || self.waiters.iter().any(|w| w.mode == LockMode::Exclusive && w.txn.ts() < me);
        if !ex_held || must_wait {
            self.enqueue(txn, LockMode::Shared);
            self.promote_waiters(ctx);
            return if self.held(txn.id()).is_some() { Acquired::Granted } else { Acquired::Waiting };
        }
        loop {
            let p = self
                .retired
                .iter()
                .rposition(|r| r.txn.ts() < me || r.txn.is_committed())
                .map_or(0, |k| k + 1);
            self.retired.insert(p, LockReq::new(txn, LockMode::Shared));
            if self.recompute() {
                txn.set_granted();
                return Acquired::Granted;
            }
            // someone behind us passed its commit point meanwhile; retry past it
            let req = self.retired.remove(p);
            drop_count(req);
            self.recompute();
        }
    }

    fn enqueue(&mut self, txn: &TxnRef, mode: LockMode) {
        let ts = txn.ts();
        let at = self.waiters.iter().position(|w| w.txn.ts() > ts).unwrap_or(self.waiters.len());
        self.waiters.insert(at, LockReq::new(txn, mode));
    }

    /// Moves waiters to owners in timestamp order until the first conflict
    /// with the current owners.
    pub fn promote_waiters(&mut self, ctx: &LockCtx<'_>) {
        self.purge_aborted(ctx, 0);
        let autoretire = ctx.policy.autoretire_reads();
        while let Some(w) = self.waiters.first() {
            if self.owners.iter().any(|o| w.mode.conflicts(o.mode)) {
                break;
            }
            let w = self.waiters.remove(0);
            w.txn.set_granted();
            if autoretire && w.mode == LockMode::Shared {
                self.push_retired(w);
            } else {
                self.owners.push(w);
            }
        }
        let ok = self.recompute();
        debug_assert!(ok, "promotion needed a pin on a committed holder");
    }

    fn push_retired(&mut self, req: LockReq) {
        let ts = req.txn.ts();
        let mut at = self.retired.len();
        while at > 0 {
            let prev = &self.retired[at - 1];
            if prev.mode.conflicts(req.mode) || prev.txn.ts() < ts || prev.txn.is_committed() {
                break;
            }
            at -= 1;
        }
        self.retired.insert(at, req);
    }

    /// Moves `txn` from owners to retired. A no-op for protocols without
    /// early retire.
    pub fn retire(&mut self, ctx: &LockCtx<'_>, txn: &TxnRef, dirty: Option<Arc<[u8]>>) -> Result<()> {
        if !ctx.policy.is_bamboo() {
            return Ok(());
        }
        let Some(i) = self.owners.iter().position(|r| r.id() == txn.id()) else {
            return Err(Error::Protocol { txn: txn.id(), what: "retire of a lock it does not own".into() });
        };
        let mut req = self.owners.remove(i);
        if req.mode == LockMode::Exclusive {
            match dirty {
                Some(v) => req.dirty = Some(v),
                None => {
                    self.owners.insert(i, req);
                    return Err(Error::Protocol { txn: txn.id(), what: "EX retire without a value".into() });
                }
            }
        }
        self.push_retired(req);
        self.promote_waiters(ctx);
        Ok(())
    }

    /// Drops `txn` from this entry. On abort of an EX holder every holder
    /// behind it is cascade-aborted, removed, and returned.
    pub fn release(&mut self, ctx: &LockCtx<'_>, txn: &TxnRef, is_abort: bool) -> Result<Vec<TxnRef>> {
        let id = txn.id();
        if let Some(w) = self.waiters.iter().position(|r| r.id() == id) {
            self.waiters.remove(w);
            self.promote_waiters(ctx);
            return Ok(Vec::new());
        }
        let Some(i) = self.holder_index(id) else {
            return Err(Error::Protocol { txn: id, what: "release of a lock it does not hold".into() });
        };
        let mode = self.holder(i).mode;
        self.take_holder(i);
        let cascaded = if is_abort && mode == LockMode::Exclusive { self.cut_from(ctx, i, id) } else { Vec::new() };
        self.promote_waiters(ctx);
        Ok(cascaded)
    }

    /// Gives every unassigned transaction here a timestamp, in list order,
    /// and then the requester, if the request conflicts with anyone.
    pub fn assign_ts_on_conflict(&self, ctx: &LockCtx<'_>, txn: &TxnRef, mode: LockMode) {
        let all = || self.retired.iter().chain(self.owners.iter()).chain(self.waiters.iter());
        if !all().any(|r| r.id() != txn.id() && mode.conflicts(r.mode)) {
            return;
        }
        for r in all() {
            r.txn.set_ts_if_unassigned(ctx.ts_source);
        }
        txn.set_ts_if_unassigned(ctx.ts_source);
    }

    /// Brings every holder's semaphore contribution in line with whether
    /// it conflicts with some holder ahead of it. Returns false if a needed
    /// pin was refused because the holder already committed.
    fn recompute(&mut self) -> bool {
        let mut ok = true;
        let mut seen_any = false;
        let mut seen_ex = false;
        for r in self.retired.iter_mut().chain(self.owners.iter_mut()) {
            let need = match r.mode {
                LockMode::Exclusive => seen_any,
                LockMode::Shared => seen_ex,
            };
            if need && !r.counted {
                if r.txn.sem_inc() {
                    r.counted = true;
                } else {
                    ok = false;
                }
            } else if !need && r.counted {
                r.txn.sem_dec();
                r.counted = false;
            }
            seen_any = true;
            seen_ex |= r.mode == LockMode::Exclusive;
        }
        ok
    }

    /// The version `id` sees: the value of the nearest retired EX holder
    /// ahead of it, or the stored tuple.
    pub fn visible_for(&self, id: TxnId) -> Visible {
        let end = self.holder_index(id).unwrap_or(self.holder_count());
        (0..end)
            .rev()
            .map(|i| self.holder(i))
            .find(|r| r.mode == LockMode::Exclusive && r.id() != id)
            .and_then(|r| r.dirty.as_ref().map(|v| Visible::Dirty { writer: r.id(), value: Arc::clone(v) }))
            .unwrap_or(Visible::Committed)
    }

    /// Checks the ordering invariants: waiters ascend by timestamp, and
    /// any conflicting pair in retired/owners whose earlier member has not
    /// committed is in ascending timestamp order.
    pub fn check_order(&self) -> std::result::Result<(), String> {
        for w in self.waiters.windows(2) {
            if w[0].txn.ts() > w[1].txn.ts() {
                return Err(format!("waiters out of order: {:?} before {:?}", w[0], w[1]));
            }
        }
        let holders: Vec<&LockReq> = self.holders().collect();
        for (a, x) in holders.iter().enumerate() {
            for y in &holders[a + 1..] {
                if x.mode.conflicts(y.mode) && !x.txn.is_committed() && x.txn.ts() > y.txn.ts() {
                    return Err(format!("holder {x:?} ahead of older conflicting {y:?}"));
                }
            }
        }
        Ok(())
    }

    /// Every uncommitted conflicting transaction ahead of a waiter has a
    /// smaller timestamp.
    pub fn check_wait_priority(&self) -> std::result::Result<(), String> {
        for (k, w) in self.waiters.iter().enumerate() {
            let ahead = self.holders().chain(self.waiters[..k].iter());
            for a in ahead {
                if w.mode.conflicts(a.mode) && !a.txn.is_committed() && !a.txn.is_aborted() && a.txn.ts() > w.txn.ts() {
                    return Err(format!("waiter {w:?} blocked by younger {a:?}"));
                }
            }
        }
        Ok(())
    }

    /// Whether `id` currently holds a semaphore contribution from this entry.
    pub fn counted_for(&self, id: TxnId) -> bool {
        self.holders().any(|r| r.id() == id && r.counted)
    }
}

fn drop_count(mut req: LockReq) -> LockReq {
    if req.counted {
        req.txn.sem_dec();
        req.counted = false;
    }
    req
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lock_manager::{Policy, PolicyFlags, TxnState, UNASSIGNED};
    use std::sync::atomic::AtomicU64;
    use LockMode::{Exclusive as EX, Shared as SH};

    fn ctx_run<R>(policy: Policy, f: impl FnOnce(&LockCtx<'_>) -> R) -> R {
        let counter = AtomicU64::new(1);
        let ctx = LockCtx::new(&policy, &counter);
        f(&ctx)
    }

    fn bamboo() -> Policy {
        Policy::plain(Protocol::Bamboo)
    }

    fn t(id: u64) -> TxnRef {
        TxnState::new(id, id)
    }

    fn val() -> Option<Arc<[u8]>> {
        Some(Arc::from(vec![7u8; 4]))
    }

    #[test]
    fn empty_entry_grants_shared() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let t1 = t(1);
            assert_eq!(e.acquire(ctx, &t1, SH), Acquired::Granted);
            assert_eq!(e.snapshot().owners, vec![(1, SH)]);
            assert_eq!(t1.semaphore(), 0);
        });
    }

    #[test]
    fn shared_after_retired_writer_is_pinned() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            assert_eq!(e.acquire(ctx, &t2, SH), Acquired::Granted);
            assert_eq!(e.snapshot().owners, vec![(2, SH)]);
            assert_eq!(t2.semaphore(), 1);
            assert!(matches!(e.visible_for(2), Visible::Dirty { writer: 1, .. }));
        });
    }

    #[test]
    fn older_writer_wounds_younger_owner() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t2, t5) = (t(2), t(5));
            e.acquire(ctx, &t5, EX);
            assert_eq!(e.acquire(ctx, &t2, EX), Acquired::Granted);
            assert_eq!(t5.abort_cause(), Some(AbortCause::Wound));
            assert_eq!(t5.abort_parent(), Some(2));
            assert_eq!(e.snapshot().owners, vec![(2, EX)]);
        });
    }

    #[test]
    fn wait_die_younger_requester_dies() {
        ctx_run(Policy::plain(Protocol::WaitDie), |ctx| {
            let mut e = EntryState::default();
            let (t2, t5) = (t(2), t(5));
            e.acquire(ctx, &t2, EX);
            assert_eq!(e.acquire(ctx, &t5, EX), Acquired::AbortSelf);
            assert!(!t2.is_aborted());
            // the older one waits instead
            let mut e = EntryState::default();
            e.acquire(ctx, &t5, EX);
            assert_eq!(e.acquire(ctx, &t2, EX), Acquired::Waiting);
        });
    }

    #[test]
    fn no_wait_aborts_on_any_conflict() {
        ctx_run(Policy::plain(Protocol::NoWait), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t2, SH);
            assert_eq!(e.acquire(ctx, &t1, EX), Acquired::AbortSelf);
            assert!(!t2.is_aborted());
        });
    }

    #[test]
    fn retire_promotes_waiting_reader() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, EX);
            assert_eq!(e.acquire(ctx, &t2, SH), Acquired::Waiting);
            e.retire(ctx, &t1, val()).unwrap();
            let s = e.snapshot();
            assert_eq!(s.retired, vec![(1, EX)]);
            assert_eq!(s.owners, vec![(2, SH)]);
            assert!(t2.is_granted());
            assert_eq!(t2.semaphore(), 1);
        });
    }

    #[test]
    fn retire_shared_without_waiters_and_twice() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let t1 = t(1);
            e.acquire(ctx, &t1, SH);
            e.retire(ctx, &t1, None).unwrap();
            assert_eq!(e.snapshot().retired, vec![(1, SH)]);
            assert!(e.snapshot().owners.is_empty());
            assert!(e.retire(ctx, &t1, None).is_err());
        });
    }

    #[test]
    fn retire_is_noop_for_wound_wait() {
        ctx_run(Policy::plain(Protocol::WoundWait), |ctx| {
            let mut e = EntryState::default();
            let t1 = t(1);
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            assert_eq!(e.snapshot().owners, vec![(1, EX)]);
        });
    }

    #[test]
    fn commit_release_clears_heads() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2, t3) = (t(1), t(2), t(3));
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            for x in [&t2, &t3] {
                e.acquire(ctx, x, SH);
                e.retire(ctx, x, None).unwrap();
            }
            assert_eq!(e.snapshot().retired, vec![(1, EX), (2, SH), (3, SH)]);
            assert_eq!((t2.semaphore(), t3.semaphore()), (1, 1));
            t1.try_commit().unwrap();
            assert!(e.release(ctx, &t1, false).unwrap().is_empty());
            assert_eq!((t2.semaphore(), t3.semaphore()), (0, 0));
        });
    }

    #[test]
    fn aborting_writer_cascades_to_everyone_behind() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2, t3) = (t(1), t(2), t(3));
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            e.acquire(ctx, &t2, EX);
            e.retire(ctx, &t2, val()).unwrap();
            e.acquire(ctx, &t3, SH);
            assert_eq!(e.snapshot().retired, vec![(1, EX), (2, EX)]);
            assert_eq!(e.snapshot().owners, vec![(3, SH)]);
            t1.try_abort(AbortCause::User, None);
            let mut ids: Vec<u64> = e.release(ctx, &t1, true).unwrap().iter().map(|x| x.id()).collect();
            ids.sort();
            assert_eq!(ids, vec![2, 3]);
            assert_eq!(t2.abort_cause(), Some(AbortCause::Cascade));
            assert_eq!(t3.abort_parent(), Some(1));
            assert!(e.is_empty());
        });
    }

    #[test]
    fn single_shared_release_empties_entry() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let t1 = t(1);
            e.acquire(ctx, &t1, SH);
            assert!(e.release(ctx, &t1, false).unwrap().is_empty());
            assert!(e.is_empty());
        });
    }

    #[test]
    fn shared_abort_has_no_cascade() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, SH);
            e.retire(ctx, &t1, None).unwrap();
            e.acquire(ctx, &t2, EX);
            e.retire(ctx, &t2, val()).unwrap();
            assert_eq!(e.snapshot().retired, vec![(1, SH), (2, EX)]);
            assert_eq!(t2.semaphore(), 1);
            t1.try_abort(AbortCause::User, None);
            assert!(e.release(ctx, &t1, true).unwrap().is_empty());
            assert!(!t2.is_aborted());
            assert_eq!(t2.semaphore(), 0);
        });
    }

    #[test]
    fn release_of_unheld_lock_is_an_error() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            assert!(e.release(ctx, &t(1), false).is_err());
        });
    }

    #[test]
    fn promotion_stops_at_first_conflict() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let ts: Vec<TxnRef> = (1..=4).map(t).collect();
            e.acquire(ctx, &ts[0], EX);
            e.acquire(ctx, &ts[1], SH);
            e.acquire(ctx, &ts[2], SH);
            e.acquire(ctx, &ts[3], EX);
            ts[0].try_commit().unwrap();
            e.release(ctx, &ts[0], false).unwrap();
            let s = e.snapshot();
            assert_eq!(s.owners, vec![(2, SH), (3, SH)]);
            assert_eq!(s.waiters, vec![(4, EX)]);
        });
    }

    #[test]
    fn exclusive_owner_blocks_every_waiter() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2, t3) = (t(1), t(2), t(3));
            e.acquire(ctx, &t1, EX);
            e.acquire(ctx, &t2, SH);
            e.acquire(ctx, &t3, SH);
            e.promote_waiters(ctx);
            assert_eq!(e.snapshot().owners, vec![(1, EX)]);
            assert_eq!(e.snapshot().waiters.len(), 2);
        });
    }

    #[test]
    fn writer_behind_retired_writer_is_pinned() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, EX);
            assert_eq!(e.acquire(ctx, &t2, EX), Acquired::Waiting);
            e.retire(ctx, &t1, val()).unwrap();
            assert_eq!(e.snapshot().owners, vec![(2, EX)]);
            assert_eq!(t2.semaphore(), 1);
        });
    }

    #[test]
    fn dynamic_ts_assigned_in_list_order_on_conflict() {
        let policy = Policy::new(Protocol::Bamboo, PolicyFlags { dynamic_ts: true, ..PolicyFlags::default() });
        ctx_run(policy, |ctx| {
            let mut e = EntryState::default();
            let (a, b) = (TxnState::new(10, UNASSIGNED), TxnState::new(11, UNASSIGNED));
            e.acquire(ctx, &a, EX);
            assert!(!a.has_ts());
            assert_eq!(e.acquire(ctx, &b, EX), Acquired::Waiting);
            assert_eq!((a.ts(), b.ts()), (1, 2));
            assert!(!a.is_aborted());
        });
    }

    #[test]
    fn dynamic_ts_untouched_without_conflict() {
        let policy = Policy::new(Protocol::Bamboo, PolicyFlags { dynamic_ts: true, ..PolicyFlags::default() });
        ctx_run(policy, |ctx| {
            let mut e = EntryState::default();
            let (a, b) = (TxnState::new(10, UNASSIGNED), TxnState::new(11, UNASSIGNED));
            e.acquire(ctx, &a, SH);
            e.acquire(ctx, &b, SH);
            assert!(!a.has_ts() && !b.has_ts());
        });
    }

    #[test]
    fn reader_without_raw_abort_slots_before_younger_writer() {
        let policy = Policy::new(Protocol::Bamboo, PolicyFlags { no_raw_abort: true, ..PolicyFlags::default() });
        ctx_run(policy, |ctx| {
            let mut e = EntryState::default();
            let (t1, t3, t5) = (t(1), t(3), t(5));
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            e.acquire(ctx, &t5, EX);
            e.retire(ctx, &t5, Some(Arc::from(vec![9u8; 4]))).unwrap();
            assert_eq!(e.acquire(ctx, &t3, SH), Acquired::Granted);
            assert!(!t5.is_aborted());
            assert_eq!(e.snapshot().retired, vec![(1, EX), (3, SH), (5, EX)]);
            assert_eq!(e.visible_for(3), Visible::Dirty { writer: 1, value: Arc::from(vec![7u8; 4]) });
            assert_eq!((t3.semaphore(), t5.semaphore()), (1, 1));
            e.check_order().unwrap();
        });
    }

    #[test]
    fn reader_without_raw_abort_waits_for_older_owner() {
        let policy = Policy::new(Protocol::Bamboo, PolicyFlags { no_raw_abort: true, ..PolicyFlags::default() });
        ctx_run(policy, |ctx| {
            let mut e = EntryState::default();
            let (t1, t3) = (t(1), t(3));
            e.acquire(ctx, &t1, EX);
            assert_eq!(e.acquire(ctx, &t3, SH), Acquired::Waiting);
            e.check_wait_priority().unwrap();
        });
    }

    #[test]
    fn second_write_after_retire_cuts_readers() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, EX);
            e.retire(ctx, &t1, val()).unwrap();
            e.acquire(ctx, &t2, SH);
            assert_eq!(e.acquire(ctx, &t1, EX), Acquired::Granted);
            assert_eq!(t2.abort_cause(), Some(AbortCause::Cascade));
            let s = e.snapshot();
            assert!(s.retired.is_empty());
            assert_eq!(s.owners, vec![(1, EX)]);
        });
    }

    #[test]
    fn upgrade_replaces_shared_entry() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t2) = (t(1), t(2));
            e.acquire(ctx, &t1, SH);
            e.acquire(ctx, &t2, SH);
            assert_eq!(e.acquire(ctx, &t1, EX), Acquired::Granted);
            assert!(t2.is_aborted());
            assert_eq!(e.snapshot().owners, vec![(1, EX)]);
        });
    }

    #[test]
    fn wounding_a_retired_writer_cascades() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t5, t6) = (t(1), t(5), t(6));
            e.acquire(ctx, &t5, EX);
            e.retire(ctx, &t5, val()).unwrap();
            e.acquire(ctx, &t6, SH);
            assert_eq!(e.acquire(ctx, &t1, SH), Acquired::Granted);
            assert_eq!(t5.abort_cause(), Some(AbortCause::Wound));
            assert_eq!(t6.abort_cause(), Some(AbortCause::Cascade));
            assert_eq!(t6.abort_parent(), Some(5));
            assert_eq!(e.snapshot().owners, vec![(1, SH)]);
            assert_eq!(t6.semaphore(), 0);
        });
    }

    #[test]
    fn committed_holder_is_not_wounded() {
        ctx_run(bamboo(), |ctx| {
            let mut e = EntryState::default();
            let (t1, t5) = (t(1), t(5));
            e.acquire(ctx, &t5, EX);
            t5.try_commit().unwrap();
            assert_eq!(e.acquire(ctx, &t1, EX), Acquired::Waiting);
            e.release(ctx, &t5, false).unwrap();
            assert!(t1.is_granted());
        });
    }
}
