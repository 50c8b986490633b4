//! Generated programs checked against the interpreter and the naive taint
//! closure.

use std::collections::BTreeSet;

use enclave_taint::corpus::{generate_program, interpret_trace, ObjKey, DEFAULT_STEP_LIMIT};
use enclave_taint::edl::{extract_key_parameters, parse_edl};
use enclave_taint::graphs::{build_call_graph, build_vfg};
use enclave_taint::points_to::{solve_points_to, solve_points_to_with, SolverOptions};
use enclave_taint::sir::{parse_sir, SirModule, ValueId};
use enclave_taint::taint::{find_sinks, ptr_taint, taint_closure_oracle, TaintOptions, ORACLE_BUDGET};
use proptest::prelude::*;

fn budget_for(seed: u64) -> usize {
    50 + (seed as usize * 37) % 151
}

const INPUTS: [[i64; 3]; 3] = [[0, 0, 0], [1, 2, 5], [7, -3, 1]];

/// Observed pointer targets missing from the solver's sets.
fn soundness_violations(m: &SirModule) -> Vec<String> {
    let pts = solve_points_to(m);
    let mut bad = Vec::new();
    for f in m.func_ids().filter(|f| m.function(*f).is_defined()) {
        for inputs in INPUTS {
            let t = interpret_trace(m, f, &inputs, DEFAULT_STEP_LIMIT);
            let observed = t.accesses.iter().map(|a| (a.addr, a.target)).chain(t.values.iter().copied());
            for (v, target) in observed {
                let ObjKey::Site(key) = target else { continue };
                let site = pts.site_for(key).expect("every runtime site is abstract");
                if !pts.pts(v).contains(&site) {
                    bad.push(format!("{} -> {}", m.value_label(v), pts.site(site).label));
                }
            }
        }
    }
    bad
}

/// Seeds for which the graph-based tainting and the closure disagree.
fn taint_mismatches(m: &SirModule, edl: &str) -> Vec<String> {
    let pts = solve_points_to(m);
    let cg = build_call_graph(m, &pts);
    let vfg = build_vfg(m, &cg, &pts);
    let tuples = extract_key_parameters(&parse_edl(edl).unwrap());
    let found = find_sinks(&tuples, m, &cg, &vfg, &pts);
    let mut seeds: BTreeSet<ValueId> = found.seeds.iter().map(|s| s.value).collect();
    for f in &m.functions {
        seeds.extend(f.params.iter().copied());
    }
    let mut bad = Vec::new();
    for s in seeds {
        let (st, sinks) = ptr_taint(m, &vfg, s, TaintOptions::default());
        let sinks: BTreeSet<_> = sinks.into_iter().map(|(_, r)| r).collect();
        let (t, o) = taint_closure_oracle(m, &pts, s, ORACLE_BUDGET).unwrap();
        if st.tainted != t || sinks != o {
            bad.push(m.value_label(s));
        }
    }
    bad
}

#[test]
fn generated_programs_points_to_is_sound() {
    for seed in 0..300 {
        let g = generate_program(seed, budget_for(seed));
        let m = parse_sir(&g.sir).unwrap();
        let bad = soundness_violations(&m);
        assert!(bad.is_empty(), "seed {seed}: {bad:?}\n{}", g.sir);
    }
}

#[test]
fn generated_programs_taint_matches_closure() {
    for seed in 0..300 {
        let g = generate_program(seed, budget_for(seed));
        let m = parse_sir(&g.sir).unwrap();
        let bad = taint_mismatches(&m, &g.edl);
        assert!(bad.is_empty(), "seed {seed}: {bad:?}\n{}", g.sir);
    }
}

#[test]
fn interpreter_exercises_memory() {
    // Guard against a generator that stops producing loads and stores.
    let mut accesses = 0;
    for seed in 0..50 {
        let g = generate_program(seed, 120);
        let m = parse_sir(&g.sir).unwrap();
        let f = m.function_by_name("ecall_0").unwrap();
        accesses += interpret_trace(&m, f, &[1, 2, 3], DEFAULT_STEP_LIMIT).accesses.len();
    }
    assert!(accesses > 200, "{accesses}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_is_order_independent(seed in 0u64..10_000, shuffle in any::<u64>()) {
        let g = generate_program(seed, budget_for(seed));
        let m = parse_sir(&g.sir).unwrap();
        let a = solve_points_to(&m);
        let b = solve_points_to_with(&m, SolverOptions { shuffle_seed: Some(shuffle) });
        for v in 0..m.values.len() as u32 {
            prop_assert_eq!(a.pts(ValueId(v)), b.pts(ValueId(v)));
        }
    }

    #[test]
    fn taint_is_order_independent(seed in 0u64..10_000, shuffle in any::<u64>()) {
        let g = generate_program(seed, budget_for(seed));
        let m = parse_sir(&g.sir).unwrap();
        let pts = solve_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let vfg = build_vfg(&m, &cg, &pts);
        for f in &m.functions {
            for &p in &f.params {
                let (a, sa) = ptr_taint(&m, &vfg, p, TaintOptions::default());
                let (b, sb) = ptr_taint(&m, &vfg, p, TaintOptions { shuffle_seed: Some(shuffle) });
                prop_assert_eq!(a.tainted, b.tainted);
                let sa: BTreeSet<_> = sa.into_iter().collect();
                let sb: BTreeSet<_> = sb.into_iter().collect();
                prop_assert_eq!(sa, sb);
            }
        }
    }

    #[test]
    fn every_sink_writes_through_a_tainted_pointer(seed in 0u64..10_000) {
        let g = generate_program(seed, budget_for(seed));
        let m = parse_sir(&g.sir).unwrap();
        let pts = solve_points_to(&m);
        let cg = build_call_graph(&m, &pts);
        let vfg = build_vfg(&m, &cg, &pts);
        let tuples = extract_key_parameters(&parse_edl(&g.edl).unwrap());
        let found = find_sinks(&tuples, &m, &cg, &vfg, &pts);
        for s in found.sinks.iter().filter(|s| s.kind != enclave_taint::taint::SinkKind::OcallArg) {
            let (st, _) = ptr_taint(&m, &vfg, s.seed, TaintOptions::default());
            let (value, dst) = m.inst(s.inst).store_parts();
            prop_assert!(st.tainted.contains(&dst));
            prop_assert!(!st.tainted.contains(&value));
        }
    }
}
