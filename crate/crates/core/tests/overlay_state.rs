use proptest::prelude::*;

use pcx::ir::Space;
use pcx::state::{ConcolicValue, MachineState, Pc, StateError};
use pcx::sym::ExprPool;

fn fresh() -> MachineState {
    MachineState::new(Pc {
        function: "f".into(),
        block: 0,
        index: 0,
    })
}

const SPACES: [Space; 4] = [Space::Register, Space::Unique, Space::Ram, Space::Stack];

proptest! {
    /// Reads inside an overlay see its writes layered over the base; the
    /// base is untouched and the hash returns after discard.
    #[test]
    fn copy_on_write(
        base_writes in prop::collection::vec((0usize..4, 0u64..64, any::<u64>(), 1u8..=8), 0..12),
        overlay_writes in prop::collection::vec((0usize..4, 0u64..64, any::<u64>(), 1u8..=8), 1..12),
        probe in prop::collection::vec((0usize..4, 0u64..72, 1u8..=8), 1..8),
    ) {
        let mut pool = ExprPool::new();
        let mut s = fresh();
        // reference model: plain byte arrays per space
        let mut model = [[0u8; 80]; 4];
        for &(sp, addr, v, size) in &base_writes {
            let cv = ConcolicValue::constant(&mut pool, u128::from(v), size);
            s.write_bytes(&mut pool, SPACES[sp], addr, &cv).unwrap();
            for i in 0..size as usize {
                model[sp][addr as usize + i] = (v >> (8 * i)) as u8;
            }
        }
        let before = s.state_hash(&pool);
        let base_model = model;
        s.overlay_begin().unwrap();
        prop_assert_eq!(s.overlay_begin().unwrap_err(), StateError::NestedOverlay);
        for &(sp, addr, v, size) in &overlay_writes {
            let cv = ConcolicValue::constant(&mut pool, u128::from(v), size);
            s.write_bytes(&mut pool, SPACES[sp], addr, &cv).unwrap();
            for i in 0..size as usize {
                model[sp][addr as usize + i] = (v >> (8 * i)) as u8;
            }
        }
        for &(sp, addr, size) in &probe {
            let got = s.read_bytes(&mut pool, SPACES[sp], addr, size).concrete;
            let want = (0..size as usize).fold(0u128, |acc, i| acc | u128::from(model[sp][addr as usize + i]) << (8 * i));
            prop_assert_eq!(got, want);
        }
        s.overlay_discard().unwrap();
        prop_assert_eq!(s.state_hash(&pool), before);
        for &(sp, addr, size) in &probe {
            let got = s.read_bytes(&mut pool, SPACES[sp], addr, size).concrete;
            let want = (0..size as usize).fold(0u128, |acc, i| acc | u128::from(base_model[sp][addr as usize + i]) << (8 * i));
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn discard_without_overlay_is_an_error() {
    let mut s = fresh();
    assert_eq!(s.overlay_discard().unwrap_err(), StateError::NoOverlay);
}
