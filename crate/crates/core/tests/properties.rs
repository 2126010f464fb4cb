use proptest::prelude::*;

use porowave::ensemble::{run_single_layout, AverageMode, FailurePolicy, GridSpec, MonteCarloSpec};
use porowave::geometry::{rsa_place, CavityLayout, Point, RsaOptions, SegmentSpec};
use porowave::scatter::{boundary_residual, solve_problem, FieldEvaluator, Material, ProblemSpec};

fn small_segment(count: usize) -> SegmentSpec {
    SegmentSpec {
        count,
        ..SegmentSpec::default()
    }
}

fn mc(count: usize, k: f64) -> MonteCarloSpec {
    MonteCarloSpec {
        segment: small_segment(count),
        rsa: RsaOptions::default(),
        material: Material::default(),
        wavenumber: k,
        truncation: 6,
        mirrors: 20,
        memory_cap: 1 << 28,
        grid: GridSpec {
            nx: 40,
            ny: 10,
            ..GridSpec::default()
        },
        average_mode: AverageMode::ZeroFill,
        layouts: 1,
        master_seed: 11,
        failure_policy: FailurePolicy::Abort,
    }
}

#[test]
fn empty_segment_transmits_incident_wave() {
    for k in [400.0, 1200.0, 2000.0] {
        let (curve, _) = run_single_layout(&mc(0, k), 5).unwrap();
        for (i, &x) in curve.x.iter().enumerate() {
            assert!((curve.amplitude[i] - 1.0).abs() < 1e-10);
            assert!((curve.w_re[i] - (k * x).cos()).abs() < 1e-10);
        }
    }
}

#[test]
fn tiny_cavities_barely_scatter() {
    let mut m = mc(10, 2000.0);
    m.segment.radius = 1e-6;
    let (curve, _) = run_single_layout(&m, 9).unwrap();
    let worst = curve
        .amplitude
        .iter()
        .map(|a| (a - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn boundary_residual_falls_with_truncation() {
    let layout = rsa_place(
        &small_segment(8),
        &RsaOptions {
            gap: 0.002,
            ..RsaOptions::default()
        },
        3,
    )
    .unwrap();
    let residual = |m: usize| {
        let spec = ProblemSpec {
            truncation: m,
            mirrors: 20,
            ..ProblemSpec::new(layout.clone(), 1600.0)
        };
        boundary_residual(&solve_problem(&spec).unwrap(), &spec, 48).unwrap()
    };
    let r: Vec<f64> = [3, 6, 9].into_iter().map(residual).collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn field_invariant_under_relabeling(seed in 0u64..1000, rot in 1usize..5) {
        let layout = rsa_place(&small_segment(5), &RsaOptions::default(), seed).unwrap();
        let mut centers = layout.centers.clone();
        centers.rotate_left(rot);
        let relabeled = CavityLayout { centers, ..layout.clone() };
        let k = 1200.0;
        let a = ProblemSpec { mirrors: 10, truncation: 5, ..ProblemSpec::new(layout, k) };
        let b = ProblemSpec { mirrors: 10, truncation: 5, ..ProblemSpec::new(relabeled, k) };
        let sa = solve_problem(&a).unwrap();
        let sb = solve_problem(&b).unwrap();
        let ea = FieldEvaluator::direct(&a, &sa).unwrap();
        let eb = FieldEvaluator::direct(&b, &sb).unwrap();
        for p in [Point::new(0.0001, 0.0), Point::new(0.0399, 0.004), Point::new(0.02, -0.0095)] {
            if ea.interior_cavity(p).is_none() {
                prop_assert!((ea.value(p) - eb.value(p)).norm() < 1e-9);
            }
        }
    }
}
