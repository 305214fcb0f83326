//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use partsec::adversary::{check_partitioned_security, count_allocations, exhaustive_audit, prune_matches, AuditTrace};
use partsec::binning::{create_bins, create_bins_pinned, BinOptions};
use partsec::cost::{self, emit_curves, eta_exact, eta_simplified, qb_threshold, CostParams, SweepSpec};
use partsec::data::{classify_relation, Value};
use partsec::demo::{run_demo, DemoName};
use partsec::fixtures;
use partsec::hybrid::{execute_split_plan, split_equijoin, JoinQuery, SplitMode};
use partsec::public_exec::{Deployment, SelectionQuery};

use common::{base_case_dataset, materialize_for, nested_loop_join, random_join_instance};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn demo_checks(name: DemoName) -> Result<(), String> {
    let r = run_demo(name).map_err(|e| e.to_string())?;
    let failed: Vec<String> = r.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: expected {} got {}", c.name, c.expected, c.actual)).collect();
    ensure(failed.is_empty(), || failed.join("; "))
}

fn criterion_1() -> Outcome {
    demo_checks(DemoName::Employee)?;
    let ds = classify_relation(&fixtures::employee(), &fixtures::employee_policy()).map_err(|e| e.to_string())?;
    let ns = ds.nonsensitive_values("EId").map_err(|e| e.to_string())?;
    let layout = create_bins_pinned(&fixtures::employee_pinned_order(), &ns, BinOptions::default()).map_err(|e| e.to_string())?;
    let set = |v: &[&str]| v.iter().map(|s| Value::from(*s)).collect::<BTreeSet<_>>();
    let sb: BTreeSet<_> = (0..layout.x()).map(|i| layout.sensitive_bin(i).into_iter().collect::<BTreeSet<_>>()).collect();
    let nsb: BTreeSet<_> = (0..layout.y()).map(|i| layout.nonsensitive_bin(i).into_iter().collect::<BTreeSet<_>>()).collect();
    ensure(sb == BTreeSet::from([set(&["E101", "E259"]), set(&["E152", "E159"])]), || format!("sensitive bins {sb:?}"))?;
    ensure(nsb == BTreeSet::from([set(&["E259", "E254"]), set(&["E199", "E152"])]), || format!("non-sensitive bins {nsb:?}"))?;

    let dep = Deployment::query_binning(&ds, "EId", layout, 1).map_err(|e| e.to_string())?;
    let labels = dep.position_labels().map_err(|e| e.to_string())?;
    let expected = [("E259", ["t2", "t6"]), ("E101", ["t3", "t8"]), ("E199", ["t3", "t8"])];
    for (w, plain) in expected {
        dep.execute(&SelectionQuery::new("EId", w)).map_err(|e| e.to_string())?;
        let view = AuditTrace::capture(&dep).views.pop().ok_or("no view")?;
        let enc: BTreeSet<&str> = view.encrypted.iter().map(|&p| labels[p].as_str()).collect();
        let got: BTreeSet<&str> = view.plain_rows.iter().map(|r| r.as_str()).collect();
        ensure(enc == BTreeSet::from(["t1", "t4"]), || format!("{w}: encrypted {enc:?}"))?;
        ensure(got == BTreeSet::from(plain), || format!("{w}: plaintext {got:?}"))?;
    }
    Ok("bins and all three binned views match".into())
}

fn criterion_2() -> Outcome {
    let ds = classify_relation(&fixtures::employee(), &fixtures::employee_policy()).map_err(|e| e.to_string())?;
    let queries = ["E259", "E101", "E199"];

    let naive = Deployment::naive(&ds, "EId", 1).map_err(|e| e.to_string())?;
    let labels = naive.position_labels().map_err(|e| e.to_string())?;
    for w in queries {
        naive.execute(&SelectionQuery::new("EId", w)).map_err(|e| e.to_string())?;
    }
    let trace = AuditTrace::capture(&naive);
    let table1 = [(vec!["t4"], vec!["t2"]), (vec!["t1"], vec![]), (vec![], vec!["t3"])];
    for ((enc, plain), v) in table1.iter().zip(&trace.views) {
        let e: Vec<&str> = v.encrypted.iter().map(|&p| labels[p].as_str()).collect();
        let p: Vec<&str> = v.plain_rows.iter().map(|r| r.as_str()).collect();
        ensure(&e == enc && &p == plain, || format!("naive view ({e:?}; {p:?})"))?;
    }
    let verdict = check_partitioned_security(&trace);
    ensure(!verdict.secure, || "naive verdict secure".into())?;
    let t4_e259 = verdict.pinned().any(|(l, v)| labels[l].as_str() == "t4" && v == &Value::from("E259"));
    ensure(t4_e259, || "no finding pinning E(t4) to E259".into())?;

    let ns = ds.nonsensitive_values("EId").map_err(|e| e.to_string())?;
    let layout = create_bins_pinned(&fixtures::employee_pinned_order(), &ns, BinOptions::default()).map_err(|e| e.to_string())?;
    let qb = Deployment::query_binning(&ds, "EId", layout, 1).map_err(|e| e.to_string())?;
    for w in queries {
        qb.execute(&SelectionQuery::new("EId", w)).map_err(|e| e.to_string())?;
    }
    let trace = AuditTrace::capture(&qb);
    let mut graph = trace.initial_graph();
    for v in &trace.views {
        prune_matches(&mut graph, v, trace.protocol);
    }
    ensure(graph.is_complete() && graph.edge_count() == 16, || format!("binned graph has {} edges", graph.edge_count()))?;
    let verdict = check_partitioned_security(&trace);
    ensure(verdict.secure, || format!("binned verdict leaks: {:?}", verdict.findings))?;
    Ok("naive leaks with E(t4) pinned to E259; binned secure with 16/16 edges".into())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut queries = 0usize;
    for instance in 0..500 {
        let n = rng.gen_range(1..=64);
        let ds = base_case_dataset(&mut rng, n, n);
        let s = ds.sensitive_values("A").map_err(|e| e.to_string())?;
        let ns = ds.nonsensitive_values("A").map_err(|e| e.to_string())?;
        let layout = create_bins(&s, &ns, rng.gen(), BinOptions::default()).map_err(|e| e.to_string())?;
        let dep = Deployment::query_binning(&ds, "A", layout, rng.gen()).map_err(|e| e.to_string())?;
        for w in dep.keywords() {
            let got = dep.execute(&SelectionQuery::new("A", w.clone())).map_err(|e| e.to_string())?;
            let mut got_rows = got.rows.clone();
            got_rows.sort_by(|a, b| a.id.cmp(&b.id));
            let want = ds.oracle_select("A", &w).map_err(|e| e.to_string())?;
            let strip = |rows: &[partsec::data::Row]| rows.iter().map(|r| (r.id.clone(), r.values.clone())).collect::<Vec<_>>();
            ensure(strip(&got_rows) == strip(&want), || format!("instance {instance}, keyword {w}: {got_rows:?} != {want:?}"))?;
            queries += 1;
        }
    }
    Ok(format!("500 instances, {queries} keyword queries equal the oracle"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut naive_leaks = 0;
    for n in [1usize, 4, 9, 16] {
        for universe in 0..100 {
            let ds = base_case_dataset(&mut rng, n, n);
            let s = ds.sensitive_values("A").map_err(|e| e.to_string())?;
            let ns = ds.nonsensitive_values("A").map_err(|e| e.to_string())?;
            let layout = create_bins(&s, &ns, rng.gen(), BinOptions::default()).map_err(|e| e.to_string())?;
            let audit = exhaustive_audit(&ds, "A", layout, rng.gen()).map_err(|e| e.to_string())?;
            let qb = &audit.query_binning;
            ensure(qb.secure && qb.surviving_edges == n * n, || format!("n={n} universe {universe}: {:?}", qb.findings))?;
            let one_sided = s.iter().collect::<BTreeSet<_>>() != ns.iter().collect::<BTreeSet<_>>();
            if one_sided {
                ensure(!audit.naive.secure, || format!("n={n} universe {universe}: naive executor judged secure"))?;
                naive_leaks += 1;
            }
        }
    }

    let ds = classify_relation(&fixtures::employee(), &fixtures::employee_policy()).map_err(|e| e.to_string())?;
    let ns = ds.nonsensitive_values("EId").map_err(|e| e.to_string())?;
    let layout = create_bins_pinned(&fixtures::employee_pinned_order(), &ns, BinOptions::default()).map_err(|e| e.to_string())?;
    let dep = Deployment::query_binning(&ds, "EId", layout, 1).map_err(|e| e.to_string())?;
    for w in ["E259", "E101", "E199"] {
        dep.execute(&SelectionQuery::new("EId", w)).map_err(|e| e.to_string())?;
    }
    let trace = AuditTrace::capture(&dep);
    let count = count_allocations(&trace).ok_or("enumeration refused")?;
    let labels = dep.position_labels().map_err(|e| e.to_string())?;
    let e1 = labels.iter().position(|l| l.as_str() == "t1").ok_or("t1")?;
    let v1 = trace.plaintext_values.iter().position(|v| v == &Value::from("E259")).ok_or("E259")?;
    ensure(count.total == 16 && count.per_edge[e1][v1] == 4, || format!("{} allocations, {} favourable", count.total, count.per_edge[e1][v1]))?;
    Ok(format!("400 universes secure under binning, naive leaked on all {naive_leaks} one-sided universes; 16 allocations, 4 with E(t1)=E259"))
}

fn criterion_5() -> Outcome {
    demo_checks(DemoName::RstJoin)?;
    let m = materialize_for(fixtures::rst(), &[vec![fixtures::rst_c(), fixtures::rst_c_prime()]]);
    let rs = JoinQuery::new(vec![fixtures::rst_c()]).map_err(|e| e.to_string())?;
    let mut scans = Vec::new();
    for mode in [SplitMode::Naive, SplitMode::AllPrivate, SplitMode::Modified] {
        let plan = split_equijoin(&rs, &m, mode).map_err(|e| e.to_string())?;
        let rep = execute_split_plan(&plan, &m).map_err(|e| e.to_string())?;
        ensure(rep.measured == plan.predicted, || format!("{mode:?}: measured {:?} predicted {:?}", rep.measured, plan.predicted))?;
        ensure(rep.rows == nested_loop_join(m.dataset(), &rs), || format!("{mode:?}: result differs from oracle"))?;
        scans.push(plan.predicted.private_scan);
    }
    ensure(scans == [8, 6, 4], || format!("private scans {scans:?}"))?;

    let three = JoinQuery::new(vec![fixtures::rst_c(), fixtures::rst_c_prime()]).map_err(|e| e.to_string())?;
    let plan = split_equijoin(&three, &m, SplitMode::Modified).map_err(|e| e.to_string())?;
    let rep = execute_split_plan(&plan, &m).map_err(|e| e.to_string())?;
    let oracle = nested_loop_join(m.dataset(), &three);
    ensure(rep.rows == oracle, || "three-way result differs from oracle".into())?;
    let japan = rep.rows.iter().any(|r| r.ids.iter().any(|id| id.as_str() == "u1"));
    ensure(japan, || "no result through the sensitive Japan row".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    for instance in 0..200 {
        let arity = if instance % 2 == 0 { 2 } else { 3 };
        let (ds, conds) = random_join_instance(&mut rng, arity, if arity == 2 { 1000 } else { 400 });
        let m = materialize_for(ds, std::slice::from_ref(&conds));
        let q = JoinQuery::new(conds).map_err(|e| e.to_string())?;
        let oracle = nested_loop_join(m.dataset(), &q);
        let mode = *[SplitMode::Modified, SplitMode::Naive, SplitMode::AllPrivate].choose(&mut rng).expect("non-empty");
        for mode in [SplitMode::Modified, mode] {
            let plan = split_equijoin(&q, &m, mode).map_err(|e| e.to_string())?;
            let rep = execute_split_plan(&plan, &m).map_err(|e| format!("instance {instance}: {e}"))?;
            ensure(rep.rows == oracle, || format!("instance {instance} ({mode:?}): {} rows vs oracle {}", rep.rows.len(), oracle.len()))?;
            ensure(rep.private_results + rep.public_results == rep.rows.len(), || format!("instance {instance} ({mode:?}): sides overlap"))?;
        }
    }
    Ok("scans 8/6/4, three-way equals oracle, 200 random instances equal oracle".into())
}

fn criterion_6() -> Outcome {
    let gamma = 25_000.0;
    for ns in [1e3, 1e4, 1e6] {
        let t = qb_threshold(gamma, ns);
        let bin = f64::sqrt(ns);
        for i in 0..=200 {
            let alpha = 0.999_999_99 * i as f64 / 200.0;
            let s = alpha / (1.0 - alpha) * ns;
            let p = CostParams::new(1.0 / gamma, 1e-4, 1.0, s, ns, 1.0 / ns).map_err(|e| e.to_string())?;
            let eta = eta_simplified(&p, bin, bin);
            ensure((eta < 1.0) == (alpha < t), || format!("NS={ns} alpha={alpha}: eta={eta}, threshold={t}"))?;
        }
    }

    let mut worst: f64 = 0.0;
    for d in [1e5, 1e6, 1e7] {
        for beta in [1e3, 1e4, 1e5] {
            for rho in [0.001, 0.01, 0.1] {
                for gi in 0..=12 {
                    let gamma = 100.0 * 1000f64.powf(gi as f64 / 12.0);
                    for ai in 0..=20 {
                        let alpha = 0.01 + 0.98 * ai as f64 / 20.0;
                        let p = CostParams::from_ratios(alpha, beta, gamma, rho, d).map_err(|e| e.to_string())?;
                        let b = p.default_bin();
                        let (ex, si) = (eta_exact(&p, b, b), eta_simplified(&p, b, b));
                        worst = worst.max((ex - si).abs() / ex);
                    }
                }
            }
        }
    }
    ensure(worst <= 0.05, || format!("worst relative gap {worst}"))?;

    for d in [150e3, 1.5e6, 4.5e6] {
        for ai in 0..100 {
            let alpha = ai as f64 / 100.0;
            let ns = d * (1.0 - alpha);
            let p = CostParams::from_ratios(alpha, 1e4, 25_000.0, 1.0 / ns, d).map_err(|e| e.to_string())?;
            let b = p.default_bin();
            if alpha < qb_threshold(25_000.0, ns) {
                ensure(eta_exact(&p, b, b) < 1.0, || format!("D={d} alpha={alpha}: exact eta {}", eta_exact(&p, b, b)))?;
            }
        }
    }

    let sweep = |terms: &[&str]| emit_curves(&SweepSpec::parse(terms).expect("valid sweep"));
    let by_alpha = sweep(&["alpha=0..0.99:100", "gamma=25000", "rho=0.01", "sb=100", "nsb=100"]);
    let by_gamma = sweep(&["gamma=100..100000:100", "alpha=0.5", "rho=0.01", "sb=100", "nsb=100"]);
    let by_rho = sweep(&["rho=0.001..0.1:100", "alpha=0.5", "gamma=1000", "sb=100", "nsb=100"]);
    for (name, pts, increasing) in [("alpha", &by_alpha, true), ("gamma", &by_gamma, false), ("rho", &by_rho, true)] {
        ensure(pts.len() == 100, || format!("{name} sweep has {} points", pts.len()))?;
        for w in pts.windows(2) {
            for (a, b) in [(w[0].eta_exact, w[1].eta_exact), (w[0].eta_simplified, w[1].eta_simplified)] {
                ensure(if increasing { b > a } else { b < a }, || format!("eta not monotone in {name}: {a} then {b}"))?;
            }
        }
    }

    let gap = common::measured_eta_gap(&mut ChaCha8Rng::seed_from_u64(0xC6));
    ensure(gap <= 0.10, || format!("measured vs analytic gap {gap}"))?;
    Ok(format!("threshold holds, worst exact/simplified gap {:.3}%, monotone, measured gap {:.3}%", worst * 100.0, gap * 100.0))
}

fn criterion_7() -> Outcome {
    for d in DemoName::ALL {
        let a = serde_json::to_string_pretty(&run_demo(d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let b = serde_json::to_string_pretty(&run_demo(d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("demo {d} differs between runs"))?;
    }
    let audit = || {
        let ds = classify_relation(&fixtures::sixteen(), &fixtures::sixteen_policy()).expect("fixture");
        let s = ds.sensitive_values("V").expect("attr");
        let ns = ds.nonsensitive_values("V").expect("attr");
        let layout = create_bins(&s, &ns, 42, BinOptions::default()).expect("layout");
        serde_json::to_string(&exhaustive_audit(&ds, "V", layout, 9).expect("audit")).expect("json")
    };
    ensure(audit() == audit(), || "exhaustive audit differs between runs".into())?;
    let curves = || cost::curves_csv(&emit_curves(&SweepSpec::parse(&["gamma=10..100000:7", "alpha=0..1:5"]).expect("sweep")));
    ensure(curves() == curves(), || "cost sweep differs between runs".into())?;
    Ok("demos, audit and cost output byte-identical across runs".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("example-1 reproduction", criterion_1, Duration::from_secs(1)),
        ("inference-attack demonstration", criterion_2, Duration::from_secs(1)),
        ("binned selection equals oracle", criterion_3, Duration::from_secs(60)),
        ("security exhaustion", criterion_4, Duration::from_secs(120)),
        ("hybrid split correctness and counters", criterion_5, Duration::from_secs(120)),
        ("cost model regression", criterion_6, Duration::from_secs(10)),
        ("determinism", criterion_7, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > *limit => Err(format!("{msg}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("criterion {} [{name}]: PASS ({took:.2?}) {msg}", i + 1),
            Err(msg) => {
                failures += 1;
                println!("criterion {} [{name}]: FAIL ({took:.2?}) {msg}", i + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
