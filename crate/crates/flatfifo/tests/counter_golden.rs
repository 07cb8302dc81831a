//! Golden renderings of the counter translations on the send-pump
//! machine: its counting abstraction, the order machine of its single
//! channel, and the image-defined reachable region of the synchronized
//! product. Run with `UPDATE_GOLDEN=1` to rewrite the files under
//! `tests/golden/`.

use std::fs;
use std::path::PathBuf;

use flatfifo::counters::{
    build_counting_abstraction, build_order_machine, build_sync, correspondence_h,
    render_counter_machine, render_sync_reachable, sync_initial, CounterSpace,
};
use flatfifo::model::{parse_machine, ChannelId};

// Two send loops feeding one channel: an a/b pump at the initial state
// and an a-pump behind an internal hop, drained one a at a time.
const PUMP: &str = "\
channels c
alphabet c: a b
state q1 init
state q2
state q3
state q4
trans t1 q1 q2 c!a
trans t2 q2 q1 c!b
trans t3 q3 q4 c!a
trans t4 q4 q3 c?a
trans t5 q1 q3 tau
";

fn check_golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!("missing golden {}: {e}; run with UPDATE_GOLDEN=1", path.display())
    });
    assert_eq!(actual, want, "golden mismatch for {name}; rerun with UPDATE_GOLDEN=1 to refresh");
}

#[test]
fn counting_abstraction_matches_golden() {
    let m = parse_machine(PUMP).unwrap();
    let space = CounterSpace::new(&m);
    let count = build_counting_abstraction(&m);
    check_golden("pump_count.txt", &render_counter_machine(&space, &m, &count));
    // The retrieve q4 -> q3 cannot tell which sender produced the front
    // letter, so it splits into one guarded decrement per sender of a.
    let back: Vec<_> = count
        .edges
        .iter()
        .filter(|e| count.states[e.source] == "q4" && count.states[e.target] == "q3")
        .collect();
    assert_eq!(back.len(), 2);
    assert!(back.iter().all(|e| !e.guard.pos.is_empty() && e.update.len() == 1));
}

#[test]
fn order_machine_matches_golden() {
    let m = parse_machine(PUMP).unwrap();
    let space = CounterSpace::new(&m);
    let order = build_order_machine(&m, ChannelId(0)).unwrap();
    let text = render_counter_machine(&space, &m, &order);
    check_golden("pump_order.txt", &text);
    // Leaving the initial loop is fenced by its own sends being drained;
    // the send edges themselves carry no guard.
    assert!(text.contains("guard (a,t1)+(b,t2)=0"));
    let q3q4 = order
        .edges
        .iter()
        .find(|e| order.states[e.source] == "q3" && order.states[e.target] == "q4")
        .unwrap();
    assert!(q3q4.guard.is_true());
}

#[test]
fn product_region_matches_golden() {
    let m = parse_machine(PUMP).unwrap();
    let sys = build_sync(&m).unwrap();
    check_golden("pump_region.txt", &render_sync_reachable(&sys, 1));
}

#[test]
fn drained_content_reconstruction() {
    let m = parse_machine(PUMP).unwrap();
    let sys = build_sync(&m).unwrap();
    let mut sc = sync_initial(&sys);
    sc.global[0] = sys.count.state_by_name("q3").unwrap();
    sc.global[1] = sys.orders[0].state_by_name("q2").unwrap();
    let ids = |l: &str, t: &str| {
        sys.space.id(m.letter_by_name(l).unwrap(), m.trans_by_name(t).unwrap()).0
    };
    sc.nu[ids("a", "t1")] = 2;
    sc.nu[ids("b", "t2")] = 3;
    sc.nu[ids("a", "t3")] = 1;
    let cfg = correspondence_h(&sys, &sc).expect("consistent valuation");
    assert_eq!(cfg.state, m.state_by_name("q3").unwrap());
    assert_eq!(m.display_word(cfg.channels.content(ChannelId(0))), "bababa");
}
