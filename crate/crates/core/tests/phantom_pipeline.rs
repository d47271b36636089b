use std::time::Instant;

use vesselmf::metrics::{basic_metrics, confusion};
use vesselmf::phantom::{generate, PhantomSpec};
use vesselmf::segment::ComponentSize;
use vesselmf::{KernelParams, Parallelism, Pipeline, PipelineParams};

fn params() -> PipelineParams {
    let mut p = PipelineParams::with_kernel(KernelParams::with_profile(1.5, 9.0));
    p.min_component_size = ComponentSize::Pixels(30);
    p
}

#[test]
fn standard_phantom_is_recovered() {
    let p = generate(&PhantomSpec::standard(), 2024);
    let pipeline = Pipeline::new(params()).unwrap();
    let start = Instant::now();
    let r = pipeline.run(&p.rgb, &p.fov, Parallelism::default()).unwrap();
    eprintln!("pipeline on 128x128: {:?}", start.elapsed());
    let m = basic_metrics(&confusion(&r.vessel_map, &p.truth, None).unwrap());
    assert!(m.accuracy.unwrap() >= 0.95, "{m:?}");
    assert!(m.sensitivity.unwrap() >= 0.70, "{m:?}");
    assert!(r.degenerate_flags.is_empty());
    // nothing survives outside the field of view
    for (v, f) in r.vessel_map.pixels().iter().zip(p.fov.pixels()) {
        assert!(!v || *f);
    }
}

#[test]
fn runs_are_deterministic_across_strategies() {
    let p = generate(&PhantomSpec::standard(), 5);
    let pipeline = Pipeline::new(params()).unwrap();
    let a = pipeline.run(&p.rgb, &p.fov, Parallelism::Sequential).unwrap();
    let b = pipeline.run(&p.rgb, &p.fov, Parallelism::Parallel).unwrap();
    let c = pipeline.run(&p.rgb, &p.fov, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
}

#[test]
fn blank_phantom_has_no_vessels() {
    let p = generate(&PhantomSpec::blank(), 0);
    let r = Pipeline::new(params())
        .unwrap()
        .run(&p.rgb, &p.fov, Parallelism::default())
        .unwrap();
    assert_eq!(r.vessel_map.count_true(), 0);
    assert!(r.degenerate_flags.contains("mfr"));
}

#[test]
fn dataset_presets_also_segment_the_phantom() {
    let p = generate(&PhantomSpec::standard(), 11);
    for preset in [PipelineParams::drive(), PipelineParams::stare()] {
        let r = Pipeline::new(preset).unwrap().run(&p.rgb, &p.fov, Parallelism::default()).unwrap();
        let m = basic_metrics(&confusion(&r.vessel_map, &p.truth, None).unwrap());
        assert!(m.accuracy.unwrap() >= 0.9, "{m:?}");
    }
}
