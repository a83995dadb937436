use std::collections::BTreeSet;

use tabkit::{parse_goal, solve, Design, EvalConfig, Program, Scheduling};

fn configs() -> Vec<EvalConfig> {
    let mut v = Vec::new();
    for d in Design::RUNTIME {
        for s in [Scheduling::Local, Scheduling::Batched] {
            if d == Design::Fs && s == Scheduling::Batched {
                continue;
            }
            for t in [1, 3] {
                v.push(EvalConfig::new(d, s, t));
            }
        }
    }
    v
}

fn answers(src: &str, query: &str, cfg: EvalConfig) -> BTreeSet<String> {
    let p = Program::parse(src).unwrap();
    let s = solve(&p, &parse_goal(query).unwrap(), cfg).unwrap();
    assert!(s.threads_agree);
    s.answers.iter().map(|t| t.to_string()).collect()
}

#[test]
fn mutual_recursion_over_a_cycle() {
    let src = ":- table even/1.\n:- table odd/1.\n\
               even(a).\n\
               even(Y) :- odd(X), e(X, Y).\n\
               odd(Y) :- even(X), e(X, Y).\n\
               e(a, b). e(b, c). e(c, a).\n";
    for cfg in configs() {
        assert_eq!(answers(src, "even(X)", cfg.clone()).len(), 3, "{cfg:?}");
        assert_eq!(answers(src, "odd(X)", cfg).len(), 3);
    }
}

#[test]
fn shortest_paths_keep_minimum() {
    let src = ":- table sp(index, index, min).\n\
               sp(X, Y, D) :- w(X, Y, D).\n\
               sp(X, Y, D) :- sp(X, Z, D1), w(Z, Y, D2), D is D1 + D2.\n\
               w(1, 2, 4). w(2, 3, 4). w(1, 3, 10). w(3, 1, 1). w(2, 4, 1). w(4, 3, 1).\n";
    let want: BTreeSet<String> =
        ["sp(1,1,7)", "sp(1,2,4)", "sp(1,3,6)", "sp(1,4,5)"].iter().map(|s| s.to_string()).collect();
    for cfg in configs().into_iter().filter(|c| !matches!(c.design, Design::Fs | Design::Pac)) {
        assert_eq!(answers(src, "sp(1, Y, D)", cfg.clone()), want, "{cfg:?}");
    }
}

#[test]
fn bound_query_reuses_closure() {
    let src = ":- table path/2.\n\
               path(X, Y) :- path(X, Z), edge(Z, Y).\n\
               path(X, Y) :- edge(X, Y).\n\
               edge(1, 2). edge(2, 3). edge(3, 4). edge(5, 6).\n";
    for cfg in configs() {
        let got = answers(src, "path(2, Y)", cfg);
        assert_eq!(got, ["path(2,3)", "path(2,4)"].iter().map(|s| s.to_string()).collect());
    }
}
