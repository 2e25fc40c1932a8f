use pcit::construct::{plan_budget, ConstructOptions, Construction, Constructor, Method, Normalization};
use pcit::synthetic::{generate, SynthParams, SyntheticScenario};

fn scenario(numeric: bool) -> SyntheticScenario {
    generate(&SynthParams {
        families: 3,
        configs: 3,
        instances: 18,
        numeric,
        seed: 11,
        ..SynthParams::default()
    })
    .unwrap()
}

fn build(g: &SyntheticScenario, k: usize, method: Method, phases: usize, block: usize, seed: u64) -> Construction {
    let sc = g.scenario("constructors", k);
    let backend = g.backend();
    let plan = plan_budget(method, k, 240.0, 40.0, 2, phases, block).unwrap();
    Constructor::new(&sc, &backend)
        .unwrap()
        .construct(
            &plan,
            ConstructOptions {
                normalization: Normalization::Linear,
                seed,
            },
        )
        .unwrap()
}

#[test]
fn every_method_yields_k_valid_components() {
    for numeric in [false, true] {
        let g = scenario(numeric);
        for (method, phases, block) in [
            (Method::Pcit, 3, 1),
            (Method::Pcrs, 1, 1),
            (Method::Global, 1, 3),
            (Method::Clustering, 1, 1),
            (Method::Parhydra, 1, 1),
            (Method::Parhydra, 1, 3),
        ] {
            let c = build(&g, 3, method, phases, block, 5);
            assert_eq!(c.portfolio.k(), 3, "{method} numeric={numeric}");
            for comp in &c.portfolio.components {
                g.space.validate(comp).unwrap();
                if numeric {
                    assert!(comp.get("alpha").is_some(), "{method}: {comp}");
                }
            }
            assert_eq!(c.log.method, method.to_string());
            assert!(c.portfolio.consumed_cpu_time > 0.0);
            // Individual runs may finish past a call's budget by at most a cutoff.
            let slack = (c.log.plan.repetitions * 3 * 2 * c.log.plan.stage_budgets.len()) as f64 * g.cutoff;
            assert!(
                c.log.ledger.total() <= c.log.plan.total_cpu + slack,
                "{method}: used {} of {}",
                c.log.ledger.total(),
                c.log.plan.total_cpu
            );
        }
    }
}

#[test]
fn constructions_are_seed_deterministic() {
    let g = scenario(true);
    for method in [Method::Pcit, Method::Global, Method::Parhydra] {
        let phases = if method == Method::Pcit { 2 } else { 1 };
        let block = if method == Method::Global { 2 } else { 1 };
        let a = build(&g, 2, method, phases, block, 42);
        let b = build(&g, 2, method, phases, block, 42);
        assert_eq!(a.portfolio.components, b.portfolio.components, "{method}");
        assert_eq!(a.log.ledger.total(), b.log.ledger.total(), "{method}");
    }
}

#[test]
fn pcit_log_records_phases_and_transfers() {
    let g = scenario(false);
    let c = build(&g, 3, Method::Pcit, 3, 1, 1);
    assert_eq!(c.log.repetitions.len(), 2);
    for rep in &c.log.repetitions {
        assert_eq!(rep.stages.len(), 3);
        for (i, st) in rep.stages.iter().enumerate() {
            assert_eq!(st.calls.len(), 3);
            // Transfers run between phases, never after the last one.
            assert_eq!(st.transfer.is_some(), i + 1 < rep.stages.len());
            assert_eq!(st.grouping_sizes.iter().sum::<usize>(), 18);
        }
        let grouping = rep.final_grouping.as_ref().unwrap();
        let mut ids: Vec<_> = grouping.subsets.iter().flatten().cloned().collect();
        ids.sort();
        let mut train: Vec<_> = g.train.iter().map(|i| i.id.clone()).collect();
        train.sort();
        assert_eq!(ids, train);
    }
    assert!(c.log.selected.is_some());
    assert!(c.log.selected_grouping().is_some());
}

#[test]
fn single_phase_pcit_matches_pcrs() {
    let g = scenario(false);
    let a = build(&g, 2, Method::Pcit, 1, 1, 3);
    let b = build(&g, 2, Method::Pcrs, 1, 1, 3);
    assert_eq!(a.portfolio.components, b.portfolio.components);
}
