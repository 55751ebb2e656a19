use hpfold::lattice::parse_hp_notation;
use hpfold::oracle::{enumerate_min_energy, EnumOptions};
use std::sync::Arc;

fn main() {
    let candidates = [
        "HHPPHHPPHH", "HPHPPHPPHH", "HHHPPHPPHH", "HPPHPPHPPH",
        "HHPHPHPHPH", "HHHHPPHHHH", "HPHPHPHPHP", "HHPPHHPPHP",
        "PHHPPHHPPH", "HHPHHPPHPH",
    ];
    let opts = EnumOptions { symmetry_pruning: true, bound_pruning: false, max_n: 16, workers: 1 };
    let full = EnumOptions { symmetry_pruning: false, bound_pruning: false, max_n: 16, workers: 1 };
    for c in candidates {
        let seq = Arc::new(parse_hp_notation(c).unwrap());
        let r = enumerate_min_energy(&seq, &opts).unwrap();
        let rf = enumerate_min_energy(&seq, &full).unwrap();
        println!(
            "{c}: min {} canonical-optima {} all-optima {} walks {}",
            r.min_energy, r.optimal_count, rf.optimal_count, rf.walks_explored
        );
    }
}
