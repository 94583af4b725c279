use super::*;
use crate::kernels::{gemm_thin, gemv_quantizing, ThinMatrix};
use crate::synth;
use proptest::prelude::*;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn partition_examples() {
    assert_eq!(partition_rows(10, 1).unwrap().ranges(), &[(0, 10)]);
    assert_eq!(
        partition_rows(10, 4).unwrap().ranges(),
        &[(0, 3), (3, 6), (6, 8), (8, 10)]
    );
    assert_eq!(partition_rows(3, 8).unwrap().ranges(), &[(0, 1), (1, 2), (2, 3)]);
    assert!(matches!(partition_rows(0, 4), Err(Error::InvalidPlan(_))));
    assert!(matches!(partition_rows(4, 0), Err(Error::InvalidPlan(_))));
}

proptest! {
    #[test]
    fn partition_covers_rows(m in 1usize..=10_000, t in 1usize..=10_000) {
        let plan = partition_rows(m, t).unwrap();
        let r = plan.ranges();
        prop_assert_eq!(r.len(), m.min(t));
        prop_assert_eq!(r[0].0, 0);
        prop_assert_eq!(r[r.len() - 1].1, m);
        for w in r.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        let sizes: Vec<usize> = r.iter().map(|(s, e)| e - s).collect();
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        prop_assert!(min >= 1 && max - min <= 1);
        // Larger chunks come first.
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn policy_names_round_trip() {
    for p in NumaPolicy::ALL {
        assert_eq!(p.name().parse::<NumaPolicy>().unwrap(), p);
    }
    assert!("numa".parse::<NumaPolicy>().is_err());
}

#[test]
fn alloff_applies_nothing() {
    let r = plan_placement(NumaPolicy::AllOff, 8, &HostTopology::synthetic(16, 2));
    assert!(r.pinning.is_empty());
    assert_eq!(r.interleave, Interleave::None);
    assert!(r.warnings.is_empty());
    let r = apply_policy(NumaPolicy::AllOff, 4);
    assert!(r.pinning.is_empty());
    assert_eq!(r.interleave, Interleave::None);
}

#[test]
fn core_binding_pins_round_robin() {
    let r = plan_placement(NumaPolicy::CoreBinding, 4, &HostTopology::synthetic(16, 1));
    assert_eq!(r.pinning, vec![0, 1, 2, 3]);
    let r = plan_placement(NumaPolicy::CoreBinding, 5, &HostTopology::synthetic(2, 1));
    assert_eq!(r.pinning, vec![0, 1, 0, 1, 0]);
    let mut host = HostTopology::synthetic(4, 1);
    host.affinity_supported = false;
    let r = plan_placement(NumaPolicy::CoreBinding, 2, &host);
    assert!(r.pinning.is_empty());
    assert_eq!(r.warnings, vec![PlacementWarning::NoAffinity]);
}

#[test]
fn interleave_on_single_node_reports_warning() {
    let r = plan_placement(NumaPolicy::MemoryInterleave, 4, &HostTopology::synthetic(8, 1));
    assert_eq!(r.interleave, Interleave::FirstTouch);
    assert!(r.warnings.contains(&PlacementWarning::NoNuma));
    let r = plan_placement(NumaPolicy::MemoryInterleave, 4, &HostTopology::synthetic(8, 2));
    assert_eq!(r.interleave, Interleave::FirstTouchOs);
    assert!(r.warnings.is_empty());
}

#[test]
fn balancing_status_is_recorded() {
    let mut host = HostTopology::synthetic(4, 2);
    host.numa_balancing = Some(true);
    assert!(plan_placement(NumaPolicy::BalancingOn, 2, &host).warnings.is_empty());
    assert_eq!(
        plan_placement(NumaPolicy::AllOff, 2, &host).warnings,
        vec![PlacementWarning::BalancingOnOnHost]
    );
    host.numa_balancing = None;
    let r = plan_placement(NumaPolicy::BalancingOn, 2, &host);
    assert_eq!(r.warnings, vec![PlacementWarning::BalancingUnknown]);
    assert!(r.to_string().contains("host_balancing=unknown"));
}

#[test]
fn report_display() {
    let r = plan_placement(NumaPolicy::CoreBinding, 2, &HostTopology::synthetic(4, 1));
    assert_eq!(
        r.to_string(),
        "policy=bind threads=2 pinning=0,1 interleave=none numa_nodes=1 host_balancing=off"
    );
}

#[test]
fn single_thread_plan_defers_to_serial() {
    let mut rng = synth::rng(1);
    let a = synth::gaussian_q4(&mut rng, 9, 64, 1.0).unwrap();
    let x = synth::gaussian(&mut rng, 64, 1.0);
    let plan = partition_rows(9, 1).unwrap();
    let y = parallel_gemv(&a, &x, &plan, NumaPolicy::AllOff).unwrap();
    assert_eq!(bits(&y), bits(&gemv_quantizing(&a, &x).unwrap()));
}

#[test]
fn plan_must_cover_matrix() {
    let a = synth::gaussian_q4(&mut synth::rng(2), 8, 32, 1.0).unwrap();
    let plan = partition_rows(7, 2).unwrap();
    assert!(matches!(
        parallel_gemv(&a, &[0.0; 32], &plan, NumaPolicy::AllOff),
        Err(Error::InvalidPlan(_))
    ));
    assert!(Executor::new(0, NumaPolicy::AllOff).is_err());
}

#[test]
fn eight_threads_match_serial_on_512() {
    let mut rng = synth::rng(512);
    let a = synth::gaussian_q4(&mut rng, 512, 512, 1.0).unwrap();
    let x = synth::gaussian(&mut rng, 512, 1.0);
    let serial = bits(&gemv_quantizing(&a, &x).unwrap());
    for policy in [NumaPolicy::AllOff, NumaPolicy::MemoryInterleave] {
        let plan = partition_rows(512, 8).unwrap();
        assert_eq!(bits(&parallel_gemv(&a, &x, &plan, policy).unwrap()), serial);
    }
}

#[test]
fn executors_agree_across_threads_and_policies() {
    let mut rng = synth::rng(77);
    let a = synth::gaussian_q4(&mut rng, 37, 256, 1.0).unwrap();
    let x = synth::gaussian(&mut rng, 256, 1.0);
    let thin = ThinMatrix::new(256, 5, synth::gaussian(&mut rng, 256 * 5, 1.0)).unwrap();
    let want = bits(&gemv_quantizing(&a, &x).unwrap());
    let want_thin = bits(gemm_thin(&a, &thin).unwrap().values());
    for t in [1, 2, 3, 8, 64] {
        for policy in NumaPolicy::ALL {
            let exec = Executor::new(t, policy).unwrap();
            let placed = exec.place(a.clone()).unwrap();
            assert_eq!(placed.is_sharded(), policy == NumaPolicy::MemoryInterleave);
            assert_eq!(placed.to_matrix(), a);
            assert_eq!(bits(&exec.gemv(&placed, &x).unwrap()), want, "t={t} {policy}");
            assert_eq!(bits(exec.gemm_thin(&placed, &thin).unwrap().values()), want_thin);
            // A matrix placed for another executor still gives equal results.
            let other = Executor::serial().place(a.clone()).unwrap();
            assert_eq!(bits(&exec.gemv(&other, &x).unwrap()), want);
        }
    }
}

#[test]
fn core_binding_executor_reports_pinning() {
    let exec = Executor::new(2, NumaPolicy::CoreBinding).unwrap();
    let host = HostTopology::detect();
    let r = exec.report();
    assert_eq!(r.pinning.len(), 2);
    assert_eq!(r.pinning[0], host.cpus[0]);
    assert!(!r.warnings.contains(&PlacementWarning::PinFailed));
}

#[test]
fn shards_from_a_wider_pool_are_all_computed() {
    let mut rng = synth::rng(78);
    let a = synth::gaussian_q4(&mut rng, 50, 128, 1.0).unwrap();
    let x = synth::gaussian(&mut rng, 128, 1.0);
    let want = bits(&gemv_quantizing(&a, &x).unwrap());
    let placed = Executor::new(8, NumaPolicy::MemoryInterleave).unwrap().place(a).unwrap();
    for t in [1, 2, 3] {
        let exec = Executor::new(t, NumaPolicy::AllOff).unwrap();
        assert_eq!(bits(&exec.gemv(&placed, &x).unwrap()), want, "t={t}");
    }
}
