use tabkit::{Design, Scheduling};
use tabkit_bench::{eval_matrix, label};

#[test]
fn matrix_covers_supported_pairs() {
    let m = eval_matrix(&[1, 8]);
    // five designs, two schedules, minus fs/batched, two thread counts
    assert_eq!(m.len(), 9 * 2);
    assert!(m.iter().all(|c| c.validate().is_ok()));
    assert!(!m.iter().any(|c| c.design == Design::Fs && c.scheduling == Scheduling::Batched));
    assert!(m.iter().any(|c| label(c) == "pac-batched-8"));
}
