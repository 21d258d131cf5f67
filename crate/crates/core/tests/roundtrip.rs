use fxtflow::cases::{run_case, RunOverrides};
use fxtflow::io::{read_trajectory_csv, write_trajectory_csv};
use fxtflow::problems::{build_case2, build_case4};

#[test]
fn case_trajectories_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for inst in [build_case2(5).unwrap(), build_case4().unwrap()] {
        let rep = run_case(&inst, &RunOverrides { t_max: Some(1.0), ..Default::default() }).unwrap();
        for (k, r) in rep.runs.iter().enumerate() {
            let path = dir.path().join(format!("{}_{k}.csv", inst.id));
            write_trajectory_csv(&path, &r.run.trajectory).unwrap();
            let back = read_trajectory_csv(&path).unwrap();
            let t = &r.run.trajectory;
            assert_eq!(back.times, t.times);
            assert_eq!(back.states, t.states);
            assert_eq!(back.costs, t.costs);
            assert_eq!(back.grad_norms, t.grad_norms);
        }
    }
}

#[test]
fn overrides_reach_every_method() {
    let inst = build_case4().unwrap();
    let rep = run_case(&inst, &RunOverrides { dt: Some(2e-3), t_max: Some(0.5), settle_tol: Some(1e-9) }).unwrap();
    for r in &rep.runs {
        assert!((r.run.trajectory.final_time() - 0.5).abs() < 1e-12);
        assert_eq!(r.settle_tol, 1e-9);
        assert!(r.first_settle().is_none());
    }
    assert!(!rep.passed());
}
