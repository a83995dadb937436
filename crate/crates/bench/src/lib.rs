//! Configuration matrix shared by the criterion benches.

use tabkit::{Design, EvalConfig, Scheduling};

/// Every supported (design, scheduling) pair at each thread count.
pub fn eval_matrix(threads: &[usize]) -> Vec<EvalConfig> {
    let mut out = Vec::new();
    for &d in &Design::RUNTIME {
        for s in [Scheduling::Local, Scheduling::Batched] {
            if d == Design::Fs && s == Scheduling::Batched {
                continue;
            }
            for &t in threads {
                let mut c = EvalConfig::new(d, s, t);
                c.collect_answers = false;
                out.push(c);
            }
        }
    }
    out
}

/// Short label such as `pac-batched-4`.
pub fn label(c: &EvalConfig) -> String {
    format!("{}-{}-{}", c.design, c.scheduling, c.threads)
}
