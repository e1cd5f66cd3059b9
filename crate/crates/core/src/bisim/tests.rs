use super::*;
use crate::ast::build::*;
use crate::ast::{BoolExpr, Channel, CmpOp, Expr, Process};
use crate::linalg::gates;
use crate::linalg::states::ket_projector;
use proptest::prelude::*;

const TOL: f64 = LP_TOL;

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn ctx(vars: &[&str], ket: &str) -> QContext {
    QContext::new(names(vars), ket_projector(ket).unwrap()).unwrap()
}

fn cfg(p: Process, c: QContext) -> Configuration {
    Configuration::new(p, c).unwrap()
}

fn env_uv() -> Env {
    let mut env = Env::standard();
    env.gates.insert("U".into(), gates::h());
    env.gates.insert("V".into(), gates::x().mul(&gates::h()).unwrap());
    env
}

fn run(l: Process, r: Process, c: QContext, mode: Mode) -> BisimReport {
    let (_, report) = compare(&cfg(l, c.clone()), &cfg(r, c), &env_uv(), &InputPolicy::default(), Bounds::default(), mode, TOL).unwrap();
    report
}

fn mixing() -> (Process, Process) {
    let u = unitary("U", &["q"], nil());
    let v = unitary("V", &["q"], nil());
    let m = measure("M01", &["q"], "x", nil());
    (sum(sum(u.clone(), v.clone()), m), sum(u, v))
}

#[test]
fn mixing_example_is_strongly_equivalent_with_half_half_witness() {
    let (l, r) = mixing();
    let rep = run(l, r, ctx(&["q"], "+"), Mode::Strong);
    assert!(rep.equivalent, "{rep:?}");
    let m = rep
        .witness
        .iter()
        .find(|m| m.mover == rep.left && m.class_vector.len() == 2)
        .expect("the measurement move is matched");
    let weights: Vec<f64> = m.combination.iter().map(|&(_, w)| w).collect();
    assert_eq!(weights.len(), 2);
    assert!(weights.iter().all(|w| (w - 0.5).abs() < 1e-7));
    // a measurement that is not a mixture of the two unitaries is not matched
    let l = sum(sum(unitary("U", &["q"], nil()), unitary("V", &["q"], nil())), measure("Mpm", &["q"], "x", nil()));
    let rep = run(l, mixing().1, ctx(&["q"], "+"), Mode::Strong);
    assert!(!rep.equivalent);
}

#[test]
fn intro_pair_is_separated_by_terminal_contexts() {
    let p = cout("c", Expr::num(0.0), nil());
    for mode in [Mode::Strong, Mode::Weak, Mode::Eq] {
        let sys_lts = build_lts(
            &[cfg(p.clone(), ctx(&["q"], "0")), cfg(p.clone(), ctx(&["q"], "1"))],
            &Env::standard(),
            &InputPolicy::default(),
            Bounds::default(),
        )
        .unwrap();
        let rep = check_system(&ProbSystem::from_lts(&sys_lts), 0, 1, mode, TOL).unwrap();
        assert!(!rep.equivalent);
        let cex = rep.counterexample.unwrap();
        assert!(matches!(cex.root_reason(), Reason::TerminalContext), "{mode:?}: {cex:?}");
        assert_eq!(cex.action.as_deref(), Some("c!0"));
    }
    // same contexts: related
    let rep = run(p.clone(), p, ctx(&["q"], "0"), Mode::Strong);
    assert!(rep.equivalent);
}

fn restriction_pair() -> (Process, Process) {
    let p = unitary("X", &["q"], cout("c", Expr::num(0.0), unitary("I", &["q"], nil())));
    let q = unitary("I", &["q"], cout("c", Expr::num(0.0), unitary("X", &["q"], nil())));
    (p, q)
}

#[test]
fn restriction_is_not_a_congruence() {
    let (p, q) = restriction_pair();
    for ket in ["0", "1", "+"] {
        assert!(run(p.clone(), q.clone(), ctx(&["q"], ket), Mode::Strong).equivalent);
    }
    let c = Channel::classical("c");
    let rep = run(restrict(p, [c.clone()]), restrict(q, [c]), ctx(&["q"], "0"), Mode::Strong);
    assert!(!rep.equivalent);
    assert!(matches!(rep.counterexample.unwrap().root_reason(), Reason::TerminalContext));
}

#[test]
fn strong_clause_two_separates_stuck_from_active() {
    let rep = run(nil(), unitary("I", &["q"], nil()), ctx(&["q"], "0"), Mode::Strong);
    assert!(!rep.equivalent);
    assert!(matches!(rep.counterexample.unwrap().reason, Reason::StuckVersusActive));
}

#[test]
fn weak_absorbs_tau_but_equality_does_not() {
    let c = ctx(&["q"], "0");
    let idle = unitary("I", &["q"], nil());
    assert!(run(idle.clone(), nil(), c.clone(), Mode::Weak).equivalent);
    assert!(!run(idle.clone(), nil(), c.clone(), Mode::Strong).equivalent);
    let rep = run(idle.clone(), nil(), c.clone(), Mode::Eq);
    assert!(!rep.equivalent);
    assert!(matches!(rep.counterexample.unwrap().reason, Reason::UnmatchedMove));
    // a prefixed silent step is harmless for equality
    let out = |p| cout("d", Expr::num(1.0), p);
    assert!(run(out(idle.clone()), out(nil()), c.clone(), Mode::Eq).equivalent);
    let twice = unitary("I", &["q"], idle.clone());
    assert!(run(twice, idle.clone(), c.clone(), Mode::Eq).equivalent);
    // weak bisimilarity is not preserved by +
    let g = cout("c", Expr::num(0.0), nil());
    assert!(!run(sum(idle, g.clone()), sum(nil(), g), c, Mode::Weak).equivalent);
}

#[test]
fn weak_sees_unitary_effect_on_context() {
    let c = ctx(&["q"], "0");
    assert!(!run(unitary("X", &["q"], nil()), nil(), c.clone(), Mode::Weak).equivalent);
    let xx = unitary("X", &["q"], unitary("X", &["q"], nil()));
    assert!(run(xx, nil(), c, Mode::Weak).equivalent);
}

#[test]
fn weak_matches_measurement_by_randomised_choice() {
    // the measurement after which both sides still output is answered by a
    // one-half/one-half mixture of the two unitary branches
    let c = ctx(&["q"], "+");
    let out = || cout("c", Expr::num(0.0), nil());
    let uv = sum(unitary("U", &["q"], out()), unitary("V", &["q"], out()));
    let l = sum(uv.clone(), measure("M01", &["q"], "x", out()));
    for mode in [Mode::Strong, Mode::Weak, Mode::Eq] {
        assert!(run(l.clone(), uv.clone(), c.clone(), mode).equivalent, "{mode:?}");
    }
    // without the unitary branches the measurement alone is not enough
    assert!(!run(measure("M01", &["q"], "x", out()), uv.clone(), c.clone(), Mode::Weak).equivalent);
}

// Branching example: P = M01[q;x].H[q].qc c!q.nil + Mpm[q;x].I[q].qc c!q.nil at |+>.

fn branching_process() -> Process {
    sum(
        measure("M01", &["q"], "x", unitary("H", &["q"], qout("c", "q", nil()))),
        measure("Mpm", &["q"], "x", unitary("I", &["q"], qout("c", "q", nil()))),
    )
}

struct Branching {
    sys: ProbSystem,
    c: usize,
    c5: usize,
    c6: usize,
    label: usize,
}

fn branching() -> Branching {
    let lts = build_lts(&[cfg(branching_process(), ctx(&["q"], "+"))], &Env::standard(), &InputPolicy::default(), Bounds::default()).unwrap();
    assert_eq!(lts.len(), 8);
    let sys = ProbSystem::from_lts(&lts);
    let c5 = lts.find(&cfg(nil(), ctx(&["q"], "+"))).unwrap();
    let c6 = lts.find(&cfg(nil(), ctx(&["q"], "-"))).unwrap();
    let label = sys.labels.iter().position(|l| l == "qc c!q").unwrap();
    Branching { sys, c: lts.roots()[0], c5, c6, label }
}

fn singletons(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn target(f: &Branching, a: f64, b: f64) -> Vec<f64> {
    let mut t = vec![0.0; f.sys.len()];
    t[f.c5] = a;
    t[f.c6] = b;
    t
}

#[test]
fn branching_weak_reach() {
    let f = branching();
    let part = singletons(f.sys.len());
    for (a, b) in [(0.5, 0.5), (1.0, 0.0), (0.75, 0.25)] {
        let r = weak_reach_feasible(&f.sys, f.c, WeakLabel::Visible(f.label), &target(&f, a, b), &part, TOL).unwrap();
        assert!(r.is_feasible(), "{a}/{b}");
        let w = r.witness.unwrap();
        let reached = absorption_from(&f.sys, &w, f.c, 0);
        assert!(dist_equiv(&reached, &[(f.c5, a), (f.c6, b)], &part, 1e-7), "{reached:?}");
    }
    // only the visible label reaches C6 with mass
    let r = weak_reach_feasible(&f.sys, f.c, WeakLabel::TauHat, &target(&f, 0.5, 0.5), &part, TOL).unwrap();
    assert!(!r.is_feasible());
    for bad in [(1.1, 0.0), (0.0, 1.0), (0.5, 0.4)] {
        let r = weak_reach_feasible(&f.sys, f.c, WeakLabel::Visible(f.label), &target(&f, bad.0, bad.1), &part, TOL).unwrap();
        assert!(!r.is_feasible(), "{bad:?}");
    }
}

#[test]
fn branching_decomposition_reverifies() {
    let f = branching();
    let part = singletons(f.sys.len());
    let n = f.sys.len();
    for (a, b) in [(0.5, 0.5), (1.0, 0.0), (0.75, 0.25)] {
        let label = WeakLabel::Visible(f.label);
        let w = weak_reach_feasible(&f.sys, f.c, label, &target(&f, a, b), &part, TOL).unwrap().witness.unwrap();
        let parts = decompose_first_step(&f.sys, f.c, label, &w, &part, n);
        assert!(!parts.is_empty());
        let total: f64 = parts.iter().map(|p| p.0).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mut recombined = vec![0.0; n];
        for (weight, node, sub_label, vector) in &parts {
            let r = weak_reach_feasible(&f.sys, *node, *sub_label, vector, &part, TOL).unwrap();
            assert!(r.is_feasible(), "sub-query from {node}");
            for (acc, v) in recombined.iter_mut().zip(vector) {
                *acc += weight * v;
            }
        }
        assert!(vec_close(&recombined, &target(&f, a, b), 1e-7));
    }
}

proptest! {
    #[test]
    fn branching_convex_combinations(p in 0.0f64..1.0) {
        let f = branching();
        let part = singletons(f.sys.len());
        let t = target(&f, p * 0.5 + (1.0 - p), p * 0.5);
        let r = weak_reach_feasible(&f.sys, f.c, WeakLabel::Visible(f.label), &t, &part, TOL).unwrap();
        prop_assert!(r.is_feasible());
    }
}

#[test]
fn branching_process_equals_guarded_variant() {
    // the M01 branch with its continuation split by outcome
    let branch = || unitary("H", &["q"], qout("c", "q", nil()));
    let is = |k: f64| BoolExpr::Cmp(CmpOp::Eq, Expr::var("x"), Expr::num(k));
    let expanded = sum(
        measure("M01", &["q"], "x", sum(when(is(0.0), branch()), when(is(1.0), branch()))),
        measure("Mpm", &["q"], "x", unitary("I", &["q"], qout("c", "q", nil()))),
    );
    let c = ctx(&["q"], "+");
    for mode in [Mode::Strong, Mode::Weak, Mode::Eq] {
        assert!(run(branching_process(), expanded.clone(), c.clone(), mode).equivalent, "{mode:?}");
    }
    // dropping one outcome's continuation is observable
    let broken = sum(
        measure("M01", &["q"], "x", when(is(0.0), branch())),
        measure("Mpm", &["q"], "x", unitary("I", &["q"], qout("c", "q", nil()))),
    );
    assert!(!run(branching_process(), broken, c, Mode::Weak).equivalent);
}

#[test]
fn near_ties_are_reported() {
    // two systems whose class vectors differ by less than ten tolerances
    let mk = |p: f64| vec![PEdge { label: 0, tau: true, targets: vec![(2, p), (3, 1.0 - p)] }];
    let sys = ProbSystem {
        labels: vec!["tau".into()],
        ctx_class: vec![0, 0, 0, 1],
        edges: vec![mk(0.5), mk(0.5 + 5e-7), vec![], vec![]],
    };
    let rep = check_system(&sys, 0, 1, Mode::Strong, 1e-7).unwrap();
    assert!(!rep.equivalent);
    assert!(!rep.warnings.is_empty());
    let rep = check_system(&sys, 0, 1, Mode::Strong, 1e-6).unwrap();
    assert!(rep.equivalent);
}

#[test]
fn bad_node_is_an_error() {
    let sys = ProbSystem { labels: vec![], ctx_class: vec![0], edges: vec![vec![]] };
    assert_eq!(check_system(&sys, 0, 3, Mode::Strong, TOL).unwrap_err(), BisimError::BadNode(3));
}

#[test]
fn mode_parses() {
    assert_eq!("weak".parse::<Mode>().unwrap(), Mode::Weak);
    assert!("fuzzy".parse::<Mode>().is_err());
}

// Brute-force oracle: enumerate every partition of a tiny system, keep those
// that are strong bisimulations (checked with exact quarter arithmetic) and
// relate two nodes when some such partition does.

#[derive(Clone, Debug)]
struct Tiny {
    ctx: Vec<usize>,
    /// `(label, quarters per target node)`.
    edges: Vec<Vec<(usize, Vec<i64>)>>,
}

fn tiny_strategy() -> impl Strategy<Value = Tiny> {
    (2usize..=6).prop_flat_map(|n| {
        let dist = prop::collection::vec(0usize..n, 1..=4).prop_map(move |picks| {
            let mut q = vec![0i64; n];
            for t in picks {
                q[t] += 1;
            }
            // quarters, halves or whole: rescale counts to sum to 4
            let s: i64 = q.iter().sum();
            if s == 3 {
                let i = q.iter().position(|&x| x > 0).unwrap();
                q[i] += 1;
            }
            if s == 1 || s == 2 {
                for x in q.iter_mut() {
                    *x *= 4 / s;
                }
            }
            q
        });
        let node = prop::collection::vec((0usize..3, dist), 0..=3);
        (prop::collection::vec(0usize..2, n), prop::collection::vec(node, n))
            .prop_map(|(ctx, edges)| Tiny { ctx, edges })
    })
}

impl Tiny {
    fn system(&self) -> ProbSystem {
        ProbSystem {
            labels: vec!["a".into(), "b".into(), "tau".into()],
            ctx_class: self.ctx.clone(),
            edges: self
                .edges
                .iter()
                .map(|es| {
                    let mut out: Vec<PEdge> = Vec::new();
                    for (l, q) in es {
                        let e = PEdge {
                            label: *l,
                            tau: *l == 2,
                            targets: q.iter().enumerate().filter(|(_, &x)| x > 0).map(|(t, &x)| (t, x as f64 / 4.0)).collect(),
                        };
                        if !out.contains(&e) {
                            out.push(e);
                        }
                    }
                    out
                })
                .collect(),
        }
    }
}

fn exact_vector(q: &[i64], part: &[usize], nb: usize) -> Vec<i64> {
    let mut v = vec![0; nb];
    for (t, &x) in q.iter().enumerate() {
        v[part[t]] += x;
    }
    v
}

/// Is `t` a convex combination of `points`? Exact for up to three points by
/// checking vertices, segments and triangles.
fn exact_hull(points: &[Vec<i64>], t: &[i64]) -> bool {
    let m = points.len();
    if points.iter().any(|p| p == t) {
        return true;
    }
    for i in 0..m {
        for j in i + 1..m {
            if on_segment(&points[i], &points[j], t) {
                return true;
            }
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                if in_triangle(&points[i], &points[j], &points[k], t) {
                    return true;
                }
            }
        }
    }
    false
}

/// Non-degenerate triangles only; degenerate ones are covered by segments.
fn in_triangle(a: &[i64], b: &[i64], c: &[i64], t: &[i64]) -> bool {
    let d = a.len();
    for i in 0..d {
        for j in i + 1..d {
            let (u1, u2) = (a[i] - c[i], a[j] - c[j]);
            let (v1, v2) = (b[i] - c[i], b[j] - c[j]);
            let (w1, w2) = (t[i] - c[i], t[j] - c[j]);
            let det = u1 * v2 - u2 * v1;
            if det == 0 {
                continue;
            }
            // lambda = l1/det, mu = l2/det by Cramer's rule
            let (mut l1, mut l2, mut det) = (w1 * v2 - w2 * v1, u1 * w2 - u2 * w1, det);
            if det < 0 {
                (l1, l2, det) = (-l1, -l2, -det);
            }
            if l1 < 0 || l2 < 0 || l1 + l2 > det {
                return false;
            }
            return (0..d).all(|k| (a[k] - c[k]) * l1 + (b[k] - c[k]) * l2 == (t[k] - c[k]) * det);
        }
    }
    false
}

fn on_segment(a: &[i64], b: &[i64], t: &[i64]) -> bool {
    // t = b + lambda (a - b), lambda = num/den in [0, 1]
    let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) else { return false };
    let (num, den) = (t[i] - b[i], a[i] - b[i]);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    if num < 0 || num > den {
        return false;
    }
    (0..a.len()).all(|j| (t[j] - b[j]) * den == (a[j] - b[j]) * num)
}

fn is_strong_bisimulation(t: &Tiny, part: &[usize]) -> bool {
    let n = t.ctx.len();
    let nb = part.iter().max().unwrap() + 1;
    for c in 0..n {
        for d in 0..n {
            if c == d || part[c] != part[d] {
                continue;
            }
            if t.edges[c].is_empty() && t.ctx[c] != t.ctx[d] {
                return false;
            }
            for (l, q) in &t.edges[c] {
                let v = exact_vector(q, part, nb);
                let pts: Vec<Vec<i64>> =
                    t.edges[d].iter().filter(|(l2, _)| l2 == l).map(|(_, q2)| exact_vector(q2, part, nb)).collect();
                if !exact_hull(&pts, &v) {
                    return false;
                }
            }
        }
    }
    true
}

fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(i: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            cur.push(b);
            go(i + 1, n, cur, max.max(b), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0];
    go(1, n, &mut cur, 0, &mut out);
    out
}

fn oracle_related(t: &Tiny) -> Vec<Vec<bool>> {
    let n = t.ctx.len();
    let mut rel = vec![vec![false; n]; n];
    for part in all_partitions(n) {
        if is_strong_bisimulation(t, &part) {
            for c in 0..n {
                for d in 0..n {
                    rel[c][d] |= part[c] == part[d];
                }
            }
        }
    }
    rel
}

#[test]
fn bell_numbers() {
    assert_eq!(all_partitions(6).len(), 203);
    assert_eq!(all_partitions(3).len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]
    #[test]
    fn strong_partition_matches_brute_force(t in tiny_strategy()) {
        let part = strong_partition(&t.system(), TOL).unwrap();
        let rel = oracle_related(&t);
        for c in 0..t.ctx.len() {
            for d in 0..t.ctx.len() {
                prop_assert_eq!(part[c] == part[d], rel[c][d], "nodes {} {}", c, d);
            }
        }
    }

    #[test]
    fn partitions_are_nested(t in tiny_strategy()) {
        // strong implies weak on systems without tau cycles
        let sys = t.system();
        prop_assume!(!has_tau_cycle(&sys));
        let strong = strong_partition(&sys, TOL).unwrap();
        let weak = weak_partition(&sys, TOL).unwrap();
        for c in 0..sys.len() {
            for d in 0..sys.len() {
                if strong[c] == strong[d] {
                    prop_assert_eq!(weak[c], weak[d]);
                }
            }
        }
    }
}

fn has_tau_cycle(sys: &ProbSystem) -> bool {
    // Kahn's algorithm on the tau graph
    let n = sys.len();
    let mut indeg = vec![0; n];
    for u in 0..n {
        for e in sys.edges[u].iter().filter(|e| e.tau) {
            for &(t, _) in &e.targets {
                indeg[t] += 1;
            }
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&u| indeg[u] == 0).collect();
    let mut seen = 0;
    while let Some(u) = stack.pop() {
        seen += 1;
        for e in sys.edges[u].iter().filter(|e| e.tau) {
            for &(t, _) in &e.targets {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    stack.push(t);
                }
            }
        }
    }
    seen < n
}
