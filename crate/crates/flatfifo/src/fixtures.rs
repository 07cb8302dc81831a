//! Shared test machines.

use crate::model::{parse_machine, FifoMachine, Word};

/// One channel over {a,b}; a sending loop t1t2 at q1 (sends "ab" per
/// turn), an internal bridge t5 to q3, and a send/retrieve loop t3t4 at
/// q3 that keeps the channel content fixed.
pub(crate) const PUMP_RETRIEVE: &str = "\
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

pub(crate) fn pump_retrieve() -> FifoMachine {
    parse_machine(PUMP_RETRIEVE).expect("fixture parses")
}

/// Resolves a string of single-character letter names.
pub(crate) fn letters(m: &FifoMachine, s: &str) -> Word {
    s.chars().map(|c| m.letter_by_name(&c.to_string()).expect("known letter")).collect()
}
