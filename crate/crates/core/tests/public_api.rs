use std::sync::Arc;

use hspde_core::convolve::{simulate, simulate_replicas, Recording, Scheme, SimulationPlan};
use hspde_core::io::{read_trajectories, write_trajectories};
use hspde_core::noise::{CameronMartinSpec, GPreset};
use hspde_core::regularity::{
    estimate_spatial_exponent, estimate_temporal_exponent, verify_region, RegularityQuery, TemporalMode,
};
use hspde_core::regularity::estimate::default_spatial_times;
use hspde_core::spectral::build_laplacian_system;
use hspde_core::SpectralDomain;

fn colored_plan(replicas: usize) -> SimulationPlan {
    let domain = SpectralDomain::new(1, 64, 64).unwrap();
    SimulationPlan {
        sys: Arc::new(build_laplacian_system(domain, 0.0).unwrap()),
        alpha: 2.0,
        noise: CameronMartinSpec {
            theta: 0.4,
            truncation: 64,
        },
        g: GPreset::Const { value: 1.0 }.build(&domain, 8.0, 16.0).unwrap(),
        horizon: 1.0,
        steps: 512,
        replicas,
        record: Recording::default(),
        seed: 99,
        label: "public api".into(),
    }
}

#[test]
fn replica_ranges_splice_into_the_full_ensemble() {
    let plan = colored_plan(6);
    let full = simulate(&plan, Scheme::ExactDiagonal).unwrap();
    let mut spliced = simulate_replicas(&plan, Scheme::ExactDiagonal, 0..2).unwrap();
    spliced.extend(simulate_replicas(&plan, Scheme::ExactDiagonal, 2..6).unwrap());
    assert_eq!(full.values, spliced);
}

#[test]
fn stored_ensemble_gives_the_same_verdict() {
    let plan = colored_plan(8);
    let ens = simulate(&plan, plan.auto_scheme()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("colored.traj");
    write_trajectories(&path, &ens).unwrap();
    let back = read_trajectories(&path).unwrap();

    let query = RegularityQuery::colored(1, 16.0, 0.4, 8.0);
    let a = verify_region(&ens, &query).unwrap();
    let b = verify_region(&back, &query).unwrap();
    assert_eq!(a, b);
    assert!(a.pass, "{a:?}");

    let beta = estimate_temporal_exponent(&back, TemporalMode::SupSpace).unwrap();
    let gamma = estimate_spatial_exponent(&back, &default_spatial_times(&back)).unwrap();
    assert_eq!(beta, a.beta_hat);
    assert_eq!(gamma, a.gamma_hat);
    assert!(beta.exponent > 0.2 && beta.exponent < 0.5, "{}", beta.exponent);
}

#[test]
fn float_and_rational_regions_agree() {
    use num_rational::Ratio;
    let exact = RegularityQuery::colored(1, Ratio::from_integer(16), Ratio::new(2, 5), Ratio::from_integer(8));
    let float = RegularityQuery::colored(1, 16.0, 0.4, 8.0);
    let b = exact.budget().unwrap();
    assert!((float.budget().unwrap() - *b.numer() as f64 / *b.denom() as f64).abs() < 1e-15);
}
