use proptest::prelude::*;

use pcx::threads::{next_thread, parse_thread_dump, DumpError, SchedulerPolicy, ThreadClass};

const DUMP: &str = "thread 4\nbt worker runtime.goexit\nthread 1\ndesc 0x2000\nbt f main.main\nthread 2\nbt runtime.sysmon\nthread 7\nbt idle\n";

#[test]
fn classification() {
    let r = parse_thread_dump(DUMP).unwrap();
    let class = |tid| r.iter().find(|t| t.tid == tid).unwrap().class;
    assert_eq!(class(1), ThreadClass::Main);
    assert_eq!(class(2), ThreadClass::Sysmon);
    assert_eq!(class(4), ThreadClass::Waiting);
    assert_eq!(parse_thread_dump("thread 1\nbt worker\n").unwrap_err(), DumpError::MissingMainThread);
    assert!(matches!(
        parse_thread_dump("thread 1\nbt main.main\nthread 2\nbt main.main\n").unwrap_err(),
        DumpError::Classification(_)
    ));
    assert!(matches!(
        parse_thread_dump("thread x\n").unwrap_err(),
        DumpError::Format { line: 1, .. }
    ));
}

proptest! {
    #[test]
    fn round_robin_rotation(quantum in 1u64..20, since in 0u64..40, at_call in any::<bool>(), current in prop::sample::select(vec![1u64, 4, 7])) {
        let r = parse_thread_dump(DUMP).unwrap();
        let next = next_thread(SchedulerPolicy::round_robin(quantum), current, &r, since, at_call);
        if !at_call || since < quantum {
            prop_assert_eq!(next, current);
        } else {
            // tid-cyclic over non-sysmon threads: 1 -> 4 -> 7 -> 1
            let expected = match current { 1 => 4, 4 => 7, _ => 1 };
            prop_assert_eq!(next, expected);
        }
        prop_assert_eq!(next_thread(SchedulerPolicy::MainOnly, current, &r, since, at_call), 1);
    }
}

#[test]
fn sysmon_joins_rotation_on_request() {
    let r = parse_thread_dump(DUMP).unwrap();
    let p = SchedulerPolicy::RoundRobin {
        quantum: 1,
        include_sysmon: true,
    };
    assert_eq!(next_thread(p, 1, &r, 5, true), 2);
}
