//! Brute-force questionnaire scorer written from the published IPIP key,
//! independent of the bundled item-bank file.

use std::collections::BTreeMap;

use persona_probe::{ResponseChoice, Trait};

// (item id, trait index E=0 A=1 C=2 ES=3 OE=4, +1 / -1)
pub const KEY: [(u32, usize, i32); 50] = [
    (1, 0, 1),
    (2, 1, -1),
    (3, 2, 1),
    (4, 3, -1),
    (5, 4, 1),
    (6, 0, -1),
    (7, 1, 1),
    (8, 2, -1),
    (9, 3, 1),
    (10, 4, -1),
    (11, 0, 1),
    (12, 1, -1),
    (13, 2, 1),
    (14, 3, -1),
    (15, 4, 1),
    (16, 0, -1),
    (17, 1, 1),
    (18, 2, -1),
    (19, 3, 1),
    (20, 4, -1),
    (21, 0, 1),
    (22, 1, -1),
    (23, 2, 1),
    (24, 3, -1),
    (25, 4, 1),
    (26, 0, -1),
    (27, 1, 1),
    (28, 2, -1),
    (29, 3, -1),
    (30, 4, -1),
    (31, 0, 1),
    (32, 1, -1),
    (33, 2, 1),
    (34, 3, -1),
    (35, 4, 1),
    (36, 0, -1),
    (37, 1, 1),
    (38, 2, -1),
    (39, 3, -1),
    (40, 4, 1),
    (41, 0, 1),
    (42, 1, 1),
    (43, 2, 1),
    (44, 3, -1),
    (45, 4, 1),
    (46, 0, -1),
    (47, 1, 1),
    (48, 2, 1),
    (49, 3, -1),
    (50, 4, 1),
];

pub const BASES: [i32; 5] = [20, 14, 14, 38, 8];

/// Trait scores in E, A, C, ES, OE order.
pub fn score(responses: &BTreeMap<u32, ResponseChoice>) -> [i32; 5] {
    let mut out = BASES;
    for &(id, t, sign) in &KEY {
        let value = match responses[&id] {
            ResponseChoice::Never => 1,
            ResponseChoice::Rarely => 2,
            ResponseChoice::Sometimes => 3,
            ResponseChoice::Often => 4,
            ResponseChoice::Always => 5,
        };
        out[t] += sign * value;
    }
    out
}

pub fn trait_index(t: Trait) -> usize {
    match t {
        Trait::E => 0,
        Trait::A => 1,
        Trait::C => 2,
        Trait::ES => 3,
        Trait::OE => 4,
    }
}
