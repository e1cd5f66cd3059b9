//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Expected values come from small independent computations in this file
//! (closed-form teleported states, exact rational hull checks, brute-force
//! partition enumeration), never from the code under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qccs::bisim::{
    absorption_from, compare, dist_equiv, strong_partition, weak_reach_feasible, BisimReport, Mode, PEdge, ProbSystem,
    Reason, WeakLabel,
};
use qccs::context::QContext;
use qccs::demo::teleport;
use qccs::frontend::parse_process;
use qccs::laws::{congruence, equality_sum, static_laws, SuiteReport};
use qccs::linalg::{gates, states};
use qccs::lp::LP_TOL;
use qccs::lts::{build_lts, transitions, Bounds, Configuration, Env, InputPolicy, LtsError, Transition};

fn ctx(vars: &[&str], ket: &str) -> QContext {
    QContext::new(vars.iter().map(|s| s.to_string()).collect(), states::ket_projector(ket).unwrap()).unwrap()
}

fn cfg(src: &str, c: QContext) -> Configuration {
    Configuration::new(parse_process(src).unwrap(), c).unwrap()
}

fn env_uv() -> Env {
    let mut env = Env::standard();
    env.gates.insert("U".into(), gates::h());
    env.gates.insert("V".into(), gates::x().mul(&gates::h()).unwrap());
    env
}

fn decide(l: &str, r: &str, c: QContext, mode: Mode) -> BisimReport {
    let (_, rep) = compare(&cfg(l, c.clone()), &cfg(r, c), &env_uv(), &InputPolicy::default(), Bounds::default(), mode, LP_TOL)
        .unwrap();
    rep
}

// ---------------------------------------------------------------- 1

fn teleportation() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut pairs = vec![(1.0, 0.0), (0.0, 1.0), (s, s), (s, -s)];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..5 {
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        pairs.push((t.cos(), t.sin()));
    }
    for (a, b) in pairs {
        let start = Instant::now();
        let rep = teleport(a, b).unwrap();
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(1), "({a}, {b}) took {elapsed:?}");
        assert_eq!(rep.branches.len(), 4, "({a}, {b})");
        // |psi><psi| for real amplitudes
        let expected = [[a * a, a * b], [a * b, b * b]];
        for br in &rep.branches {
            assert!((br.probability - 0.25).abs() <= 1e-9, "{}", br.probability);
            for i in 0..2 {
                for j in 0..2 {
                    let [re, im] = br.bob_state[i][j];
                    assert!((re - expected[i][j]).abs() <= 1e-9 && im.abs() <= 1e-9, "({a}, {b}) entry {i}{j}: {re}+{im}i");
                }
            }
        }
        assert!(rep.success);
    }
    assert!(teleport(2.0, 0.0).is_err());
}

// ---------------------------------------------------------------- 2

fn mixing_example() {
    let rep = decide("U[q].nil + V[q].nil + M01[q; x].nil", "U[q].nil + V[q].nil", ctx(&["q"], "+"), Mode::Strong);
    assert!(rep.equivalent);
    // the measurement move is answered by half of each unitary move
    let m = rep
        .witness
        .iter()
        .find(|m| m.mover == rep.left && m.combination.len() == 2)
        .expect("a combined answer");
    assert_eq!(m.responder, rep.right);
    for (_, w) in &m.combination {
        assert!((w - 0.5).abs() < 1e-7, "{:?}", m.combination);
    }
}

// ---------------------------------------------------------------- 3

fn distinct_contexts() {
    for mode in [Mode::Strong, Mode::Weak, Mode::Eq] {
        let (l, r) = (cfg("c!0.nil", ctx(&["q"], "0")), cfg("c!0.nil", ctx(&["q"], "1")));
        let (_, rep) = compare(&l, &r, &Env::standard(), &InputPolicy::default(), Bounds::default(), mode, LP_TOL).unwrap();
        assert!(!rep.equivalent, "{mode:?}");
        let c = rep.counterexample.expect("counterexample");
        assert!(matches!(c.root_reason(), Reason::TerminalContext), "{mode:?}: {c:?}");
    }
}

// ---------------------------------------------------------------- 4

fn restriction() {
    let (p, q) = ("X[q].c!0.I[q].nil", "I[q].c!0.X[q].nil");
    assert!(decide(p, q, ctx(&["q"], "0"), Mode::Strong).equivalent);
    let hidden = decide(&format!("({p}) \\ {{c}}"), &format!("({q}) \\ {{c}}"), ctx(&["q"], "0"), Mode::Strong);
    assert!(!hidden.equivalent);
    assert!(matches!(hidden.counterexample.unwrap().root_reason(), Reason::TerminalContext | Reason::StuckVersusActive));
}

// ---------------------------------------------------------------- 5

fn weak_transitions() {
    let c = cfg("M01[q; x].H[q].qc c!q.nil + Mpm[q; x].I[q].qc c!q.nil", ctx(&["q"], "+"));
    let lts = build_lts(&[c], &Env::standard(), &InputPolicy::default(), Bounds::default()).unwrap();
    assert_eq!(lts.len(), 8);
    let sys = ProbSystem::from_lts(&lts);
    let c5 = lts.find(&cfg("nil", ctx(&["q"], "+"))).unwrap();
    let c6 = lts.find(&cfg("nil", ctx(&["q"], "-"))).unwrap();
    let label = WeakLabel::Visible(sys.labels.iter().position(|l| l == "qc c!q").unwrap());
    let part: Vec<usize> = (0..sys.len()).collect();
    let root = lts.roots()[0];
    let target = |a: f64, b: f64| {
        let mut t = vec![0.0; sys.len()];
        t[c5] = a;
        t[c6] = b;
        t
    };
    let feasible = |a: f64, b: f64| {
        let r = weak_reach_feasible(&sys, root, label, &target(a, b), &part, LP_TOL).unwrap();
        if let Some(w) = &r.witness {
            let reached = absorption_from(&sys, w, root, 0);
            assert!(dist_equiv(&reached, &[(c5, a), (c6, b)], &part, 1e-7), "{reached:?}");
        }
        r.is_feasible()
    };
    let (one, two, three) = ((0.5, 0.5), (1.0, 0.0), (0.75, 0.25));
    for (a, b) in [one, two, three] {
        assert!(feasible(a, b), "({a}, {b})");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p: f64 = rng.gen_range(0.0..1.0);
        assert!(feasible(p * one.0 + (1.0 - p) * two.0, p * one.1 + (1.0 - p) * two.1), "p = {p}");
    }
    assert!(!feasible(1.1, 0.0));
    assert!(!feasible(0.0, 1.0));
}

// ---------------------------------------------------------------- 6, 7

fn suite_ok(r: &SuiteReport, min: usize) {
    for p in &r.results {
        assert!(p.checked >= min, "{}: only {} checked", p.name, p.checked);
        assert!(p.passed(), "{}: {:#?}", p.name, p.failures);
    }
}

fn static_law_suite() {
    let r = static_laws(200, 2024, None);
    assert_eq!(r.results.len(), 5);
    suite_ok(&r, 200);
}

fn congruence_suite() {
    let strong = congruence(50, 7, Mode::Strong);
    suite_ok(&strong, 50);
    for kind in ["c!v", "c?x", "qc c?q", "qc c!q", "U[q]", "M[q;x]", "+ G", "|| R", "[f]"] {
        assert!(strong.results.iter().any(|p| p.name.contains(kind)), "~ under {kind}");
    }
    let weak = congruence(50, 7, Mode::Weak);
    suite_ok(&weak, 50);
    assert!(!weak.results.iter().any(|p| p.name.contains("+ G")));
    suite_ok(&equality_sum(25, 7), 25);
}

// ---------------------------------------------------------------- 8

/// A random system with at most six nodes, labels a, b and tau, up to
/// three edges per node and quarter probabilities (as integer counts).
struct Tiny {
    ctx: Vec<usize>,
    edges: Vec<Vec<(usize, Vec<i64>)>>,
}

fn tiny(rng: &mut ChaCha8Rng) -> Tiny {
    let n = rng.gen_range(2..=6);
    let ctx = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let edges = (0..n)
        .map(|_| {
            (0..rng.gen_range(0..=3))
                .map(|_| {
                    let mut q = vec![0i64; n];
                    match rng.gen_range(0..3) {
                        0 => q[rng.gen_range(0..n)] += 4,
                        1 => (0..2).for_each(|_| q[rng.gen_range(0..n)] += 2),
                        _ => (0..4).for_each(|_| q[rng.gen_range(0..n)] += 1),
                    }
                    (rng.gen_range(0..3), q)
                })
                .collect()
        })
        .collect();
    Tiny { ctx, edges }
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
                        let targets = q.iter().enumerate().filter(|(_, &x)| x > 0).map(|(t, &x)| (t, x as f64 / 4.0)).collect();
                        let e = PEdge { label: *l, tau: *l == 2, targets };
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

/// Exact membership of `t` in the convex hull of at most three integer
/// points, by solving for barycentric weights in rationals.
fn in_hull(points: &[Vec<i64>], t: &[i64]) -> bool {
    let d = t.len();
    // every choice of weights w_k / den with den = a common multiple
    // reachable from the quarter grid: brute force over w in 0..=den
    let den = 12;
    match points.len() {
        0 => false,
        1 => points[0] == t,
        2 => (0..=den).any(|w| (0..d).all(|i| points[0][i] * w + points[1][i] * (den - w) == t[i] * den)),
        _ => hull3(&points[0], &points[1], &points[2], t),
    }
}

/// Three points: t is in the hull iff it is on an edge or strictly inside,
/// decided with exact 2x2 determinants on a non-degenerate projection.
fn hull3(a: &[i64], b: &[i64], c: &[i64], t: &[i64]) -> bool {
    if in_hull(&[a.to_vec(), b.to_vec()], t) || in_hull(&[b.to_vec(), c.to_vec()], t) || in_hull(&[a.to_vec(), c.to_vec()], t) {
        return true;
    }
    let d = t.len();
    for i in 0..d {
        for j in i + 1..d {
            let (u, v, w) = ([a[i] - c[i], a[j] - c[j]], [b[i] - c[i], b[j] - c[j]], [t[i] - c[i], t[j] - c[j]]);
            let det = u[0] * v[1] - u[1] * v[0];
            if det == 0 {
                continue;
            }
            let (l1, l2) = (w[0] * v[1] - w[1] * v[0], u[0] * w[1] - u[1] * w[0]);
            let inside = if det > 0 {
                l1 >= 0 && l2 >= 0 && l1 + l2 <= det
            } else {
                l1 <= 0 && l2 <= 0 && l1 + l2 >= det
            };
            return inside && (0..d).all(|k| (a[k] - c[k]) * l1 + (b[k] - c[k]) * l2 == (t[k] - c[k]) * det);
        }
    }
    false
}

fn partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0]];
    for _ in 1..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                let m = *p.iter().max().unwrap();
                (0..=m + 1).map(move |b| {
                    let mut q = p.clone();
                    q.push(b);
                    q
                })
            })
            .collect();
    }
    out
}

fn is_bisimulation(t: &Tiny, part: &[usize]) -> bool {
    let nb = part.iter().max().unwrap() + 1;
    let lift = |q: &[i64]| {
        let mut v = vec![0i64; nb];
        for (k, &x) in q.iter().enumerate() {
            v[part[k]] += x;
        }
        v
    };
    let n = t.ctx.len();
    (0..n).all(|c| {
        (0..n).filter(|&d| d != c && part[c] == part[d]).all(|d| {
            if t.edges[c].is_empty() && t.ctx[c] != t.ctx[d] {
                return false;
            }
            t.edges[c].iter().all(|(l, q)| {
                let pts: Vec<Vec<i64>> = t.edges[d].iter().filter(|(l2, _)| l2 == l).map(|(_, q2)| lift(q2)).collect();
                in_hull(&pts, &lift(q))
            })
        })
    })
}

fn brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut nontrivial = 0;
    for k in 0..120 {
        let t = tiny(&mut rng);
        let n = t.ctx.len();
        let part = strong_partition(&t.system(), LP_TOL).unwrap();
        let mut rel = vec![vec![false; n]; n];
        for p in partitions(n) {
            if is_bisimulation(&t, &p) {
                for c in 0..n {
                    for d in 0..n {
                        rel[c][d] |= p[c] == p[d];
                    }
                }
            }
        }
        for c in 0..n {
            for d in 0..n {
                assert_eq!(part[c] == part[d], rel[c][d], "system {k}, nodes {c} {d}");
            }
        }
        nontrivial += usize::from((0..n).any(|c| (0..n).any(|d| c != d && rel[c][d])));
    }
    assert!(nontrivial >= 20, "only {nontrivial} systems relate distinct nodes");
}

// ---------------------------------------------------------------- 9

fn labels_of(src: &str, c: QContext, policy: &InputPolicy) -> Result<Vec<String>, LtsError> {
    let ts: Vec<Transition> = transitions(&cfg(src, c), &Env::standard(), policy)?;
    Ok(ts.iter().map(|t| t.action.to_string()).collect())
}

fn rules() {
    let closed = InputPolicy::default();
    let open = InputPolicy::open();
    let in_ctx = InputPolicy { quantum_inputs: vec![], ..InputPolicy::open() };
    let none = QContext::empty;
    let l = |src: &str, c: QContext, p: &InputPolicy| labels_of(src, c, p).unwrap();
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    // (rule, positive instance holds, negative instance holds)
    let table: Vec<(&str, bool, bool)> = vec![
        ("C-Inp", l("c?x.d!x.nil", none(), &open).contains(&"c?1".into()), l("(c?x.nil) \\ {c}", none(), &open).is_empty()),
        ("C-Outp", l("c!(1 + 2).nil", none(), &closed) == s(&["c!3"]), l("nil", none(), &closed).is_empty()),
        (
            "C-Com",
            l("(c?x.d!x.nil || c!2.nil) \\ {c}", none(), &closed) == s(&["tau"]),
            l("(c?x.nil || e!2.nil) \\ {c, e}", none(), &closed).is_empty(),
        ),
        ("Q-New", l("qbit r.X[r].nil", ctx(&["q"], "1"), &closed) == s(&["tau"]), {
            let ts = transitions(&cfg("qbit r.nil", ctx(&["#0"], "1")), &Env::standard(), &closed).unwrap();
            ts[0].target.points()[0].1.context.vars() == ["#1", "#0"]
        }),
        (
            "Q-Inp (fresh)",
            l("qc c?r.X[r].nil", none(), &open).contains(&"qc c?#0".into()),
            labels_of("qc c?r.X[r].nil", none(), &closed).is_err(),
        ),
        (
            "Q-Inp (in context)",
            l("qc c?r.X[r].nil", ctx(&["s"], "0"), &in_ctx) == s(&["qc c?s"]),
            !l("qc c?r.CNOT[r, s].nil", ctx(&["s", "t"], "00"), &in_ctx).contains(&"qc c?s".into()),
        ),
        ("Q-Outp", l("qc c!q.nil", ctx(&["q"], "+"), &closed) == s(&["qc c!q"]), l("(qc c!q.nil) \\ {qc c}", ctx(&["q"], "+"), &closed).is_empty()),
        (
            "Q-Com",
            l("(qc c?r.X[r].nil || qc c!q.nil) \\ {qc c}", ctx(&["q"], "0"), &closed) == s(&["tau"]),
            l("(qc c?r.nil || qc d!q.nil) \\ {qc c, qc d}", ctx(&["q"], "0"), &closed).is_empty(),
        ),
        ("Unit", l("H[q].nil", ctx(&["q"], "0"), &closed) == s(&["tau"]), labels_of("Nope[q].nil", ctx(&["q"], "0"), &closed).is_err()),
        (
            "Meas",
            transitions(&cfg("M01[q; x].c!x.nil", ctx(&["q"], "+")), &Env::standard(), &closed).unwrap()[0].target.points().len() == 2,
            transitions(&cfg("M01[q; x].c!x.nil", ctx(&["q"], "1")), &Env::standard(), &closed).unwrap()[0].target.points().len() == 1,
        ),
        (
            "Inp-Int",
            l("qc c?r.nil || X[q].nil", ctx(&["q", "s"], "00"), &in_ctx).contains(&"qc c?s".into()),
            !l("qc c?r.nil || X[q].nil", ctx(&["q", "s"], "00"), &in_ctx).contains(&"qc c?q".into()),
        ),
        ("Oth-Int", l("c!1.nil || X[q].nil", ctx(&["q"], "0"), &closed) == s(&["c!1", "tau"]), l("nil || nil", none(), &closed).is_empty()),
        ("Sum", l("a!0.nil + b!0.nil", none(), &closed) == s(&["a!0", "b!0"]), l("nil + nil", none(), &closed).is_empty()),
        ("Rel", l("(a!1.nil)[a->b]", none(), &closed) == s(&["b!1"]), l("(c!1.nil)[qc c->qc d]", none(), &closed) == s(&["c!1"])),
        ("Res", l("(a!0.nil + b!0.nil) \\ {a}", none(), &closed) == s(&["b!0"]), l("(a!0.nil) \\ {qc a}", none(), &closed) == s(&["a!0"])),
        ("Cho", l("if 1 = 1 then c!0.nil", none(), &closed) == s(&["c!0"]), l("if 1 < 1 then c!0.nil", none(), &closed).is_empty()),
    ];
    let bad: Vec<String> = table
        .iter()
        .filter(|(_, p, n)| !(*p && *n))
        .map(|(r, p, n)| format!("{r} (positive {p}, negative {n})"))
        .collect();
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn())> = vec![
        ("1 teleportation: four 1/4 branches, Bob holds the input, < 1 s per pair", teleportation),
        ("2 U+V+M ~ U+V on |+> with a 1/2-1/2 combined answer", mixing_example),
        ("3 equal processes, different terminal contexts are distinguished", distinct_contexts),
        ("4 ~ holds for P, Q but fails under restriction", restriction),
        ("5 weak transitions: three targets, 20 convex mixes, infeasible mass", weak_transitions),
        ("6 static laws on 200 random terms", static_law_suite),
        ("7 congruence of ~ and ≈, and ≃ under summation", congruence_suite),
        ("8 strong partition equals brute force on 120 random systems", brute_force_oracle),
        ("9 every rule: positive and negative instance", rules),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        println!("{} criterion {name} ({:.2}s)", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
