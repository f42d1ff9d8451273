mod common;

use common::{buffer_law, buffer_stress, unit};
use nbi_core::agent::{BufferConfig, BufferError, SharedBuffer, SweepPolicy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn buffer_obeys_its_laws(seed in any::<u64>(), initial in 1usize..9, sweep_every in 0usize..20) {
        prop_assert_eq!(buffer_law(seed, 400, initial, sweep_every), Ok(()));
    }
}

#[test]
fn concurrent_puts_and_snapshots_linearize() {
    assert_eq!(buffer_stress(4, 500, 3), Ok(()));
}

#[test]
fn capacity_doubles_only_when_slots_fill() {
    let buf = SharedBuffer::new(BufferConfig { initial_capacity: 2, sweep_every: 0 });
    for (i, cap) in [2, 2, 4, 4, 8].into_iter().enumerate() {
        let r = buf.put(unit(&format!("a{i}"), "act", "src", "x", 0)).unwrap();
        assert_eq!(r.capacity, cap);
    }
}

#[test]
fn tombstones_hold_slots_until_swept() {
    let buf = SharedBuffer::new(BufferConfig { initial_capacity: 4, sweep_every: 0 });
    buf.put(unit("a", "act", "src", "one", 0)).unwrap();
    assert!(buf.put(unit("a", "act", "src", "two", 1)).unwrap().superseded);
    assert_eq!((buf.live_count(), buf.slot_count()), (1, 2));
    assert_eq!(buf.sweep(SweepPolicy::default(), chrono::Utc::now()), 1);
    assert_eq!(buf.slot_count(), 1);
    assert_eq!(buf.live()[0].content.render(), "two");
}

#[test]
fn max_age_sweep_expires_live_units() {
    let buf = SharedBuffer::default();
    buf.put(unit("old", "act", "src", "x", 0)).unwrap();
    buf.put(unit("new", "act", "src", "x", 1000)).unwrap();
    let now = unit("n", "a", "s", "x", 1000).timestamp;
    buf.sweep(SweepPolicy { max_age: Some(chrono::Duration::seconds(10)) }, now);
    assert_eq!(buf.live().iter().map(|u| u.role.as_str()).collect::<Vec<_>>(), ["new"]);
}

#[test]
fn malformed_units_rejected() {
    let buf = SharedBuffer::default();
    let mut u = unit("a", "act", "src", "x", 0);
    u.description = " ".into();
    assert_eq!(buf.put(u), Err(BufferError::MalformedUnit("description")));
    assert_eq!(buf.put(unit("a", "act", "src", "", 0)), Err(BufferError::MalformedUnit("content")));
}
