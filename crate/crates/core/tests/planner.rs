use proptest::prelude::*;
use pto_core::costs::{barrier_h, SAFETY_WEIGHT};
use pto_core::dynamics::{predict_sv, EvState, SvState};
use pto_core::evaluator::{normalize, pick, score, select, EvalWeights};
use pto_core::nlp::{SolveMode, SolveStatus};
use pto_core::planner::{
    make_candidates, plan_parallel, precheck_safety, CandidateTrajectory, LaneSet, PlannerConfig, PlannerMode,
};

fn config(mode: PlannerMode) -> PlannerConfig<f64> {
    PlannerConfig::standard(mode, SAFETY_WEIGHT)
}

fn cruise() -> EvState<f64> {
    EvState::new(0.0, -6.0, 0.0, 15.0, 0.0)
}

fn traffic() -> Vec<SvState<f64>> {
    vec![SvState::new(-10.0, -10.0, 9.5, 0.0), SvState::new(25.0, -6.0, 8.5, 0.0), SvState::new(60.0, -2.0, 9.0, 0.0)]
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn candidates_are_ordered_and_stable() {
    let lanes = LaneSet::three_lane();
    for mode in [PlannerMode::Pto1, PlannerMode::Pto3, PlannerMode::Pto6] {
        let cfg = config(mode);
        let a = make_candidates(&lanes, &cruise(), &cfg);
        assert_eq!(a.len(), cfg.candidate_count());
        assert!(a.iter().enumerate().all(|(j, c)| c.id == j));
        for py in [-2.5, -6.0, -9.0] {
            let ev = EvState::new(100.0, py, 0.05, 12.0, 0.1);
            assert_eq!(make_candidates(&lanes, &ev, &cfg), a);
        }
        let v = &cfg.ocp.vehicle;
        assert!(a.iter().all(|c| c.speed >= v.v_min && c.speed <= v.v_max));
    }
}

#[test]
fn barrier_grid_covers_every_stage_and_sv() {
    let cfg = config(PlannerMode::Pto3);
    let svs = traffic();
    let cands = plan_parallel(&cruise(), &svs, &[], &LaneSet::three_lane(), &cfg).unwrap();
    assert_eq!(cands.iter().map(|c| c.spec.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    for c in &cands {
        assert_eq!(c.barriers.len(), cfg.ocp.horizon + 1);
        for (k, row) in c.barriers.iter().enumerate() {
            assert_eq!(row.len(), svs.len());
            let x = c.solution.vars.states[k];
            for (i, o) in svs.iter().enumerate() {
                let h = barrier_h((x.px, x.py), &predict_sv(o, 0.1 * k as f64), &cfg.ocp.weights);
                assert_eq!(row[i], h);
            }
        }
    }
}

#[test]
fn empty_road_costs_only_lane_changes() {
    let mut cfg = config(PlannerMode::Pto3);
    cfg.solve_mode = SolveMode::Converge;
    let cands = plan_parallel(&cruise(), &[], &[], &LaneSet::three_lane(), &cfg).unwrap();
    for c in &cands {
        assert_eq!(c.solution.status, SolveStatus::Converged);
        if c.spec.lateral == -6.0 {
            assert!(c.solution.objective < 1e-6, "{}", c.solution.objective);
        } else {
            assert!(c.solution.objective > 1.0, "{}", c.solution.objective);
        }
    }
}

#[test]
fn plan_is_independent_of_thread_count() {
    let lanes = LaneSet::three_lane();
    let cfg = config(PlannerMode::Pto6);
    let run = |threads| in_pool(threads, || plan_parallel(&cruise(), &traffic(), &[], &lanes, &cfg).unwrap());
    let one = run(1);
    for threads in [2, 6] {
        let many = run(threads);
        assert_eq!(one.len(), many.len());
        for (a, b) in one.iter().zip(&many) {
            assert_eq!(a.spec, b.spec);
            assert!(a.solution.same_result(&b.solution));
            assert_eq!(a.barriers, b.barriers);
        }
    }
}

#[test]
fn warm_starts_are_routed_by_id() {
    let lanes = LaneSet::three_lane();
    let cfg = config(PlannerMode::Pto3);
    let first = plan_parallel(&cruise(), &traffic(), &[], &lanes, &cfg).unwrap();
    let prev: Vec<_> = first.iter().map(|c| Some(c.solution.clone())).collect();
    let again = plan_parallel(&cruise(), &traffic(), &prev, &lanes, &cfg).unwrap();
    // swapping the previous solutions changes the result of each candidate
    let swapped = vec![prev[2].clone(), prev[1].clone(), prev[0].clone()];
    let crossed = plan_parallel(&cruise(), &traffic(), &swapped, &lanes, &cfg).unwrap();
    assert!(again[1].solution.same_result(&crossed[1].solution));
    assert!(!again[0].solution.same_result(&crossed[0].solution));
    assert!(!again[2].solution.same_result(&crossed[2].solution));
}

fn planned_with_next_state(px: f64, py: f64) -> (Vec<CandidateTrajectory<f64>>, PlannerConfig<f64>) {
    let cfg = config(PlannerMode::Pto1);
    let mut cands = plan_parallel(&cruise(), &[], &[], &LaneSet::three_lane(), &cfg).unwrap();
    cands[0].solution.vars.states[1].px = px;
    cands[0].solution.vars.states[1].py = py;
    (cands, cfg)
}

#[test]
fn precheck_boundary_is_safe() {
    let sv = SvState::new(10.0, -6.0, 5.0, 0.0);
    let at = predict_sv(&sv, 0.1);
    let w = config(PlannerMode::Pto1).ocp.weights;
    // exactly on the ellipse: h = 0
    let on = (at.ox - w.ellipse_a, at.oy);
    assert_eq!(barrier_h(on, &at, &w), 0.0);
    let (cands, cfg) = planned_with_next_state(on.0, on.1);
    let checked = precheck_safety(cands.clone(), &[sv], &cfg);
    assert!(checked[0].feasible);
    assert!(checked[0].solution.same_result(&cands[0].solution));

    let (cands, cfg) = planned_with_next_state(at.ox - 1.0, at.oy);
    let checked = precheck_safety(cands.clone(), &[sv], &cfg);
    assert!(!checked[0].feasible);
    assert!(checked[0].solution.same_result(&cands[0].solution));
    assert_eq!(checked[0].barriers, cands[0].barriers);
}

#[test]
fn feasible_candidates_clear_every_sv_at_first_step() {
    let cfg = config(PlannerMode::Pto6);
    let svs = vec![
        SvState::new(6.0, -6.0, 10.0, 0.0),
        SvState::new(1.0, -2.0, 15.0, 0.0),
        SvState::new(-8.0, -10.0, 16.0, 0.0),
    ];
    let cands = precheck_safety(plan_parallel(&cruise(), &svs, &[], &LaneSet::three_lane(), &cfg).unwrap(), &svs, &cfg);
    for c in cands.iter().filter(|c| c.feasible) {
        assert!(c.barriers[1].iter().all(|h| *h >= 0.0));
    }
}

#[test]
fn infeasible_candidates_never_win() {
    let mut cfg = config(PlannerMode::Pto3);
    cfg.solve_mode = SolveMode::Converge;
    let mut cands = plan_parallel(&cruise(), &[], &[], &LaneSet::three_lane(), &cfg).unwrap();
    let free = select(&cands, &cfg.eval, 0.1, 1, -6.0).unwrap();
    assert_eq!(free.lane, 1);
    cands[1].feasible = false;
    let s = select(&cands, &cfg.eval, 0.1, 1, -6.0).unwrap();
    assert_ne!(s.index, 1);
    assert_eq!(s.scored.len(), 2);
    for c in cands.iter_mut() {
        c.feasible = false;
    }
    assert!(select(&cands, &cfg.eval, 0.1, 1, -6.0).is_err());
}

#[test]
fn weighted_trade_off_example() {
    // goal cost 0.1 with full consistency cost (250 + 100) against goal cost
    // 0.2 alone (500): the first candidate scores lower
    let ew = EvalWeights::<f64>::standard();
    let entries = [
        (0, 0, [0.1, 0.0, 0.0, 1.0]),
        (1, 1, [0.2, 0.0, 0.0, 0.0]),
        (2, 2, [0.0, 0.0, 0.0, 0.0]),
        (3, 2, [1.0, 0.0, 0.0, 1.0]),
    ];
    let s = score(&entries, &ew);
    assert!((s[0].score - 350.0).abs() < 1e-9);
    assert!((s[1].score - 500.0).abs() < 1e-9);
    assert_eq!(pick(&s[..2], 1), Some(0));
}

fn raw_entries() -> impl Strategy<Value = Vec<(usize, usize, [f64; 4])>> {
    prop::collection::vec((0usize..3, prop::array::uniform3(0.0..1e4f64)), 1..7).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(id, (lane, m))| {
                let dy = [-2.0, -6.0, -10.0][lane] + 6.0;
                (id, lane, [m[0], m[1], m[2], dy * dy])
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn normalized_metrics_span_unit_interval(raw in prop::collection::vec(-1e6..1e6f64, 1..12)) {
        let n = normalize(&raw);
        prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        for (r, v) in raw.iter().zip(&n) {
            if lo == hi {
                prop_assert_eq!(*v, 0.0);
            } else {
                if *r == lo { prop_assert_eq!(*v, 0.0); }
                if *r == hi { prop_assert_eq!(*v, 1.0); }
            }
        }
    }

    #[test]
    fn selection_ignores_metric_scale(entries in raw_entries(), scale in prop::array::uniform4(1e-3..1e3f64), prev in 0usize..3) {
        let ew = EvalWeights::<f64>::standard();
        let scaled: Vec<_> = entries.iter().map(|&(id, lane, r)| (id, lane, std::array::from_fn(|m| r[m] * scale[m]))).collect();
        let a = score(&entries, &ew);
        let b = score(&scaled, &ew);
        let (ia, ib) = (pick(&a, prev).unwrap(), pick(&b, prev).unwrap());
        // rescaling may perturb the last bits of the normalized values, so
        // only compare winners whose margin is not a rounding tie
        let margin = a.iter().enumerate().filter(|(j, _)| *j != ia).map(|(_, s)| s.score - a[ia].score).fold(f64::INFINITY, f64::min);
        if margin > 1e-6 {
            prop_assert_eq!(ia, ib);
        }
    }

    #[test]
    fn overwhelming_consistency_weight_keeps_lane(entries in raw_entries(), prev in 0usize..3) {
        let mut ew = EvalWeights::<f64>::standard();
        ew.w[3] = 1e15;
        let prev_y: f64 = [-2.0, -6.0, -10.0][prev];
        let entries: Vec<_> = entries
            .into_iter()
            .map(|(id, lane, mut r)| {
                let dy = [-2.0, -6.0, -10.0][lane] - prev_y;
                r[3] = dy * dy;
                (id, lane, r)
            })
            .collect();
        prop_assume!(entries.iter().any(|e| e.1 == prev));
        let s = score(&entries, &ew);
        prop_assert_eq!(s[pick(&s, prev).unwrap()].lane, prev);
    }
}
