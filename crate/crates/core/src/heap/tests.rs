use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::storage::SimulatedNvm;

fn heap(cache: usize, limit: usize) -> VnvHeap<SimulatedNvm> {
    VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(cache, limit)).unwrap()
}

fn delta<S: StorageDevice>(h: &VnvHeap<S>, f: impl FnOnce()) -> CostMeter {
    let before = h.cost();
    f();
    h.cost().since(&before)
}

#[test]
fn init_configs() {
    assert!(VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(8192, 2048)).is_ok());
    assert!(VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(4096, 4096)).is_ok());
    assert!(matches!(
        VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(1024, 2048)),
        Err(HeapError::ConfigInvalid(_))
    ));
    assert!(matches!(
        VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(1022, 512)),
        Err(HeapError::ConfigInvalid(_))
    ));
    let h = heap(4096, 2048);
    let s = h.stats();
    assert_eq!(s.dirty_bytes, HEADER_CHARGE);
    assert_eq!(s.resident_bytes, 0);
    assert_eq!(h.resident_order(), vec![]);
}

#[test]
fn alloc_max_object() {
    let h = heap(4096, 4096);
    let mut a = None;
    let c = delta(&h, || a = Some(h.alloc(&[7; 1024]).unwrap()));
    assert_eq!(h.stats().resident_bytes, 1024);
    assert!(h.meta(a.unwrap()).unwrap().modified);
    assert_eq!(c.total(), 0);
}

#[test]
fn alloc_filling_the_whole_cache() {
    let h = heap(4096, 4096);
    let a = h.alloc(&[1; 4093]).unwrap();
    let s = h.stats();
    assert_eq!(s.cache_free_bytes, 0);
    assert!(s.dirty_bytes <= 4096);
    assert_eq!(&*h.get_ref(a).unwrap(), &[1; 4093][..]);
    assert!(matches!(
        h.alloc(&[1; 4094]),
        Err(HeapError::ObjectTooLarge { .. })
    ));
}

#[test]
fn alloc_evicts_oldest_first() {
    let h = heap(4096, 4096);
    let hs: Vec<_> = (0..16u8).map(|i| h.alloc(&[i; 256]).unwrap()).collect();
    assert!(!h.meta(hs[0]).unwrap().resident);
    for (i, &x) in hs.iter().enumerate().skip(1) {
        assert!(h.meta(x).unwrap().resident, "{i}");
    }
    for (i, &x) in hs.iter().enumerate() {
        assert_eq!(&*h.get_ref(x).unwrap(), &[i as u8; 256][..]);
    }
}

#[test]
fn dealloc_restores_nvm_space() {
    let h = heap(4096, 2048);
    let before = h.stats().nvm_free_bytes;
    let a = h.alloc(&[1; 33]).unwrap();
    assert_eq!(h.stats().nvm_free_bytes, before - 36);
    h.dealloc(a).unwrap();
    assert_eq!(h.stats().nvm_free_bytes, before);
    assert_eq!(h.stats().dirty_bytes, HEADER_CHARGE);
    assert!(matches!(h.get_ref(a), Err(HeapError::InvalidHandle)));
}

#[test]
fn dealloc_with_live_guard_fails() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 8]).unwrap();
    let g = h.get_ref(a).unwrap();
    assert!(matches!(h.dealloc(a), Err(HeapError::StillPinned)));
    drop(g);
    h.dealloc(a).unwrap();
}

#[test]
fn dealloc_of_flushed_entry_writes_tombstone() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 8]).unwrap();
    let b = h.alloc(&[2; 8]).unwrap();
    h.persist().unwrap();
    let c = delta(&h, || h.dealloc(a).unwrap());
    assert_eq!(c.words_written, 1);
    let c = delta(&h, || {
        let x = h.alloc(&[3; 8]).unwrap();
        h.dealloc(x).unwrap();
    });
    assert_eq!(c.total(), 0);
    h.dealloc(b).unwrap();
}

#[test]
fn foreign_and_stale_handles() {
    let h1 = heap(4096, 2048);
    let h2 = heap(4096, 2048);
    let a = h1.alloc(&[1; 8]).unwrap();
    assert!(matches!(h2.get_ref(a), Err(HeapError::ForeignHandle)));
    h1.dealloc(a).unwrap();
    let b = h1.alloc(&[2; 8]).unwrap();
    assert_eq!(a.index(), b.index());
    assert!(matches!(h1.get_mut(a), Err(HeapError::InvalidHandle)));
}

#[test]
fn access_cases() {
    let h = heap(1056, 1056);
    let t = h.alloc(&[5; 32]).unwrap();
    assert_eq!(delta(&h, || drop(h.get_ref(t).unwrap())).total(), 0);
    h.evict(t).unwrap();
    let bad = delta(&h, || drop(h.get_ref(t).unwrap()));
    assert_eq!((bad.words_read, bad.words_written), (8, 0));

    h.evict(t).unwrap();
    let big = h.alloc(&[6; 1024]).unwrap();
    h.persist().unwrap();
    drop(h.get_mut(big).unwrap());
    assert!(h.meta(big).unwrap().modified);
    let worst = delta(&h, || drop(h.get_ref(t).unwrap()));
    assert_eq!((worst.words_read, worst.words_written), (8, 256));
    assert!(!h.meta(big).unwrap().resident);
}

#[test]
fn get_mut_syncs_older_modified_object() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 1024]).unwrap();
    let b = h.alloc(&[2; 1024]).unwrap();
    assert!(!h.meta(a).unwrap().modified);
    h.persist().unwrap();
    assert!(h.stats().dirty_bytes <= 2048);
    h.get_mut(b).unwrap()[0] = 9;
    let c = delta(&h, || {
        h.get_mut(a).unwrap()[0] = 8;
    });
    assert_eq!(c.words_written, 256);
    assert!(!h.meta(b).unwrap().modified);
    assert!(h.meta(a).unwrap().modified);
    assert!(h.stats().dirty_bytes <= 2048);
}

#[test]
fn get_mut_is_idempotent() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 100]).unwrap();
    let before = h.meta(a).unwrap();
    let c = delta(&h, || drop(h.get_mut(a).unwrap()));
    assert_eq!(c.total(), 0);
    assert_eq!(h.meta(a).unwrap(), before);
}

#[test]
fn get_mut_infeasible_budget() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 2040]).unwrap();
    assert!(!h.meta(a).unwrap().modified);
    assert!(matches!(
        h.get_mut(a),
        Err(HeapError::DirtyBudgetUnsatisfiable { .. })
    ));
    assert!(!h.meta(a).unwrap().pinned);
}

#[test]
fn get_mut_blocked_by_pinned_modified() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 1200]).unwrap();
    let b = h.alloc(&[2; 900]).unwrap();
    h.persist().unwrap();
    let _wa = h.get_mut(a).unwrap();
    assert!(matches!(
        h.get_mut(b),
        Err(HeapError::DirtyBudgetUnsatisfiable { .. })
    ));
    assert!(!h.meta(b).unwrap().modified);
}

#[test]
fn release_transitions() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 16]).unwrap();
    h.sync_object(a).unwrap();
    let g = h.get_ref(a).unwrap();
    assert!(h.meta(a).unwrap().pinned);
    g.release();
    let m = h.meta(a).unwrap();
    assert!(m.resident && !m.pinned && !m.modified);

    let w = h.get_mut(a).unwrap();
    w.release();
    let m = h.meta(a).unwrap();
    assert!(m.resident && !m.pinned && m.modified);

    let r1 = h.get_ref(a).unwrap();
    let r2 = h.get_ref(a).unwrap();
    drop(r1);
    assert!(h.meta(a).unwrap().pinned);
    drop(r2);
    assert!(!h.meta(a).unwrap().pinned);
}

#[test]
fn guard_exclusion_errors() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[1; 16]).unwrap();
    let r = h.get_ref(a).unwrap();
    assert!(matches!(h.get_mut(a), Err(HeapError::GuardActive)));
    drop(r);
    let w = h.get_mut(a).unwrap();
    assert!(matches!(h.get_mut(a), Err(HeapError::GuardActive)));
    assert!(matches!(h.get_ref(a), Err(HeapError::WriteGuardActive)));
    assert!(matches!(h.sync_object(a), Err(HeapError::StillPinned)));
    drop(w);
}

#[test]
fn sync_and_unload() {
    let h = heap(4096, 2048);
    let a = h.alloc(&[9; 1024]).unwrap();
    let words = h.sync_object(a).unwrap();
    assert_eq!(words, 256);
    let nvm = h.meta(a).unwrap().nvm_offset;
    let mut buf = vec![0; 1024];
    h.with_storage(|s| s.read(nvm, &mut buf)).unwrap();
    assert_eq!(buf, vec![9; 1024]);
    assert!(matches!(h.sync_object(a), Err(HeapError::NotModified)));

    let g = h.get_ref(a).unwrap();
    assert!(matches!(h.unload(a), Err(HeapError::StillPinned)));
    drop(g);
    h.get_mut(a).unwrap();
    assert!(matches!(h.unload(a), Err(HeapError::Modified)));
    h.sync_object(a).unwrap();
    let dirty = h.stats().dirty_bytes;
    h.unload(a).unwrap();
    assert_eq!(h.stats().dirty_bytes, dirty - RESIDENT_META_BYTES);
    assert!(matches!(h.unload(a), Err(HeapError::NotResident)));
    assert!(matches!(h.sync_object(a), Err(HeapError::NotResident)));
    assert_eq!(&*h.get_ref(a).unwrap(), &[9; 1024][..]);
}

#[test]
fn victim_choice() {
    let h = heap(1024, 1024);
    let a = h.alloc(&[1; 500]).unwrap();
    let b = h.alloc(&[2; 500]).unwrap();
    assert_eq!(h.choose_victims(Shortage::Cache(504)).unwrap(), vec![a]);
    let g = h.get_ref(a).unwrap();
    assert_eq!(h.choose_victims(Shortage::Cache(504)).unwrap(), vec![b]);
    let g2 = h.get_ref(b).unwrap();
    assert!(matches!(
        h.choose_victims(Shortage::Cache(504)),
        Err(HeapError::CachePressureUnresolvable { .. })
    ));
    assert!(matches!(
        h.alloc(&[3; 100]),
        Err(HeapError::CachePressureUnresolvable { .. })
    ));
    drop((g, g2));
}

#[test]
fn stats_after_alloc() {
    let h = heap(4096, 4096);
    h.alloc(&[0; 1024]).unwrap();
    let s = h.stats();
    assert_eq!(s.resident_bytes, 1024);
    assert_eq!(s.resident_count, 1);
    assert_eq!(s.dirty_bytes, HEADER_CHARGE + 1024 + 3 + 20);
    assert_eq!(s.dirty_bytes, h.recompute_dirty_bytes());
}

#[test]
fn read_only_trace_is_pure() {
    let h = heap(1024, 1024);
    let hs: Vec<_> = (0..8u8).map(|i| h.alloc(&[i; 200]).unwrap()).collect();
    h.persist().unwrap();
    let c = delta(&h, || {
        for i in [0, 5, 3, 7, 1, 1, 6, 2, 4] {
            assert_eq!(h.get_ref(hs[i]).unwrap()[0], i as u8);
        }
    });
    assert_eq!(c.words_written, 0);
    assert!(c.words_read > 0);
}

#[derive(Debug, Clone)]
enum Op {
    Alloc(usize),
    Dealloc(usize),
    Read(usize),
    Write(usize, u8),
    HoldRead(usize),
    HoldWrite(usize),
    Release(usize),
    Evict(usize),
    Sync(usize),
    Persist,
    PowerCycle,
}

fn op() -> impl Strategy<Value = Op> {
    let k = 0usize..64;
    prop_oneof![
        3 => (1usize..700).prop_map(Op::Alloc),
        1 => k.clone().prop_map(Op::Dealloc),
        4 => k.clone().prop_map(Op::Read),
        4 => (k.clone(), any::<u8>()).prop_map(|(k, b)| Op::Write(k, b)),
        1 => k.clone().prop_map(Op::HoldRead),
        1 => k.clone().prop_map(Op::HoldWrite),
        2 => k.clone().prop_map(Op::Release),
        1 => k.clone().prop_map(Op::Evict),
        1 => k.clone().prop_map(Op::Sync),
        1 => Just(Op::Persist),
        1 => Just(Op::PowerCycle),
    ]
}

enum Held<'h> {
    R(ObjectHandle, ReadGuard<'h, SimulatedNvm>),
    W(ObjectHandle, WriteGuard<'h, SimulatedNvm>),
}

fn pick(live: &[ObjectHandle], k: usize) -> Option<ObjectHandle> {
    (!live.is_empty()).then(|| live[k % live.len()])
}

/// Flag changes of objects the operation did not target must be edges of
/// the object state machine: modified may only clear, pins never change,
/// residents never move.
fn check_untargeted(before: &ObjectMeta, after: &ObjectMeta) {
    assert_eq!(before.pinned, after.pinned);
    assert_eq!((before.readers, before.writer), (after.readers, after.writer));
    assert!(!after.modified || before.modified, "{before:?} -> {after:?}");
    if before.pinned {
        assert_eq!(before.cache_offset, after.cache_offset);
        assert!(!before.writer || after.modified);
    }
    if before.resident && after.resident {
        assert_eq!(before.cache_offset, after.cache_offset);
    }
    assert!(before.resident || !after.resident);
}

fn check_invariants(h: &VnvHeap<SimulatedNvm>) {
    let s = h.stats();
    let limit = h.config().max_modified_state_bytes;
    assert!(s.dirty_bytes <= limit, "{} > {limit}", s.dirty_bytes);
    assert_eq!(s.dirty_bytes, h.recompute_dirty_bytes());
    let mut independent = HEADER_CHARGE;
    for (_, m) in h.metas() {
        assert!(!m.pinned || m.resident);
        assert!(!m.modified || m.resident);
        assert_eq!(m.cache_offset.is_some(), m.resident);
        assert!(!(m.writer && m.readers > 0));
        independent += RESIDENT_META_BYTES * m.resident as usize
            + payload_charge(m.size_bytes) * m.modified as usize
            + 20 * m.entry_unflushed as usize;
    }
    assert_eq!(s.dirty_bytes, independent);
    let order = h.resident_order();
    assert_eq!(order.len(), s.resident_count);
}

fn run_trace(cache: usize, limit: usize, ops: Vec<Op>) {
    let h = heap(cache, limit);
    let mut shadow: HashMap<ObjectHandle, Vec<u8>> = HashMap::new();
    let mut live: Vec<ObjectHandle> = Vec::new();
    let mut held: Vec<Held> = Vec::new();
    let mut counter = 0u8;

    for op in ops {
        let snapshot: HashMap<_, _> = h.metas().into_iter().collect();
        let mut target = None;
        match op {
            Op::Alloc(size) => {
                counter = counter.wrapping_add(1);
                let payload: Vec<u8> = (0..size).map(|i| counter ^ i as u8).collect();
                match h.alloc(&payload) {
                    Ok(x) => {
                        live.push(x);
                        shadow.insert(x, payload);
                        target = Some(x);
                    }
                    Err(HeapError::CachePressureUnresolvable { .. })
                    | Err(HeapError::DirtyBudgetUnsatisfiable { .. })
                    | Err(HeapError::OutOfNvm) => {}
                    Err(e) => panic!("alloc: {e}"),
                }
            }
            Op::Dealloc(k) => {
                if let Some(x) = pick(&live, k) {
                    target = Some(x);
                    let pinned = held.iter().any(|g| match g {
                        Held::R(y, _) | Held::W(y, _) => *y == x,
                    });
                    match h.dealloc(x) {
                        Ok(()) => {
                            assert!(!pinned);
                            live.retain(|y| *y != x);
                            shadow.remove(&x);
                        }
                        Err(HeapError::StillPinned) => assert!(pinned),
                        Err(e) => panic!("dealloc: {e}"),
                    }
                }
            }
            Op::Read(k) | Op::HoldRead(k) => {
                if let Some(x) = pick(&live, k) {
                    target = Some(x);
                    match h.get_ref(x) {
                        Ok(g) => {
                            assert_eq!(&*g, &shadow[&x][..]);
                            if matches!(op, Op::HoldRead(_)) && held.len() < 4 {
                                held.push(Held::R(x, g));
                            }
                        }
                        Err(HeapError::WriteGuardActive) => assert!(held
                            .iter()
                            .any(|g| matches!(g, Held::W(y, _) if *y == x))),
                        Err(HeapError::CachePressureUnresolvable { .. })
                        | Err(HeapError::DirtyBudgetUnsatisfiable { .. }) => {}
                        Err(e) => panic!("get_ref: {e}"),
                    }
                }
            }
            Op::Write(k, _) | Op::HoldWrite(k) if !live.is_empty() => {
                let x = pick(&live, k).unwrap();
                target = Some(x);
                let byte = if let Op::Write(_, b) = op { b } else { counter };
                match h.get_mut(x) {
                    Ok(mut g) => {
                        assert_eq!(&*g, &shadow[&x][..]);
                        let v = shadow.get_mut(&x).unwrap();
                        for (i, c) in g.iter_mut().enumerate().step_by(7) {
                            *c = byte.wrapping_add(i as u8);
                            v[i] = *c;
                        }
                        if matches!(op, Op::HoldWrite(_)) && held.len() < 4 {
                            held.push(Held::W(x, g));
                        }
                    }
                    Err(HeapError::GuardActive) => assert!(held.iter().any(|g| match g {
                        Held::R(y, _) | Held::W(y, _) => *y == x,
                    })),
                    Err(HeapError::CachePressureUnresolvable { .. })
                    | Err(HeapError::DirtyBudgetUnsatisfiable { .. }) => {}
                    Err(e) => panic!("get_mut: {e}"),
                }
            }
            Op::Write(..) | Op::HoldWrite(_) => {}
            Op::Release(k) => {
                if !held.is_empty() {
                    let g = held.remove(k % held.len());
                    target = Some(match &g {
                        Held::R(y, _) | Held::W(y, _) => *y,
                    });
                }
            }
            Op::Evict(k) => {
                if let Some(x) = pick(&live, k) {
                    target = Some(x);
                    match h.evict(x) {
                        Ok(()) | Err(HeapError::StillPinned) => {}
                        Err(e) => panic!("evict: {e}"),
                    }
                }
            }
            Op::Sync(k) => {
                if let Some(x) = pick(&live, k) {
                    target = Some(x);
                    let _ = h.sync_object(x);
                }
            }
            Op::Persist => {
                h.persist().unwrap();
            }
            Op::PowerCycle => {
                h.simulate_power_failure().unwrap();
            }
        }

        for (x, after) in h.metas() {
            if Some(x) == target {
                continue;
            }
            if let Some(before) = snapshot.get(&x) {
                check_untargeted(before, &after);
            }
        }
        for g in &held {
            match g {
                Held::R(x, g) => assert_eq!(&**g, &shadow[x][..]),
                Held::W(x, g) => assert_eq!(&**g, &shadow[x][..]),
            }
        }
        check_invariants(&h);
        let pinned: Vec<_> = h
            .metas()
            .into_iter()
            .filter(|(_, m)| m.pinned)
            .map(|(x, _)| x)
            .collect();
        for shortage in [Shortage::Cache(cache), Shortage::Dirty(limit)] {
            if let Ok(v) = h.choose_victims(shortage) {
                assert!(v.iter().all(|x| !pinned.contains(x)));
            }
        }
    }
    drop(held);
    for x in &live {
        assert_eq!(&*h.get_ref(*x).unwrap(), &shadow[x][..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_traces_keep_invariants(ops in prop::collection::vec(op(), 1..300)) {
        run_trace(4096, 2048, ops);
    }

    #[test]
    fn random_traces_tight_budget(ops in prop::collection::vec(op(), 1..300)) {
        run_trace(2048, 700, ops);
    }

    #[test]
    fn dealloc_restores_allocator(sizes in prop::collection::vec(1usize..600, 1..100)) {
        let h = heap(4096, 2048);
        let free = h.stats().nvm_free_bytes;
        let hs: Vec<_> = sizes.iter().map(|&n| h.alloc(&vec![1; n]).unwrap()).collect();
        for (i, x) in hs.iter().enumerate().rev() {
            if i % 2 == 0 { h.dealloc(*x).unwrap(); }
        }
        for (i, x) in hs.iter().enumerate() {
            if i % 2 == 1 { h.dealloc(*x).unwrap(); }
        }
        prop_assert_eq!(h.stats().nvm_free_bytes, free);
        prop_assert_eq!(h.stats().dirty_bytes, HEADER_CHARGE);
    }
}
