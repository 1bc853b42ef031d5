use see_core::experiments::{dataset_header, export_dataset, read_dataset, DatasetSolver, SolverSettings};
use see_core::NetworkConfig;

fn round_trip(k: usize, m: usize, solver: DatasetSolver, features: usize) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let cfg = NetworkConfig { k, m, seed: 21, ..NetworkConfig::default() };
    let rows = export_dataset(&cfg, 40, solver, &SolverSettings::default(), &path).unwrap();

    let (f, l) = dataset_header(k, m);
    assert_eq!(f.len(), features);
    assert_eq!(l.len(), k + m + 1);

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), f.iter().chain(&l).cloned().collect::<Vec<_>>().join(","));

    let back = read_dataset(text.as_bytes(), &cfg).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.power, b.power);
        assert_eq!(a.rho, b.rho);
        let z = b.reevaluate(&cfg).unwrap();
        assert!((z - b.zeta).abs() <= 1e-9, "{z} vs {}", b.zeta);
        assert!(b.rho.iter().all(|r| (0.0..=1.0).contains(r)));
    }
}

#[test]
fn single_bd_dataset_round_trips() {
    round_trip(2, 1, DatasetSolver::Closedform, 7);
}

#[test]
fn two_bd_dataset_round_trips() {
    round_trip(2, 2, DatasetSolver::Closedform, 11);
}

#[test]
fn swarm_dataset_round_trips() {
    round_trip(2, 3, DatasetSolver::Pso, 15);
}

#[test]
fn wrong_header_is_rejected() {
    let cfg = NetworkConfig::default();
    assert!(read_dataset("h_1,h_2,zeta\n1,2,3\n".as_bytes(), &cfg).is_err());
}

#[test]
fn closed_form_refuses_three_bds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig { m: 3, ..NetworkConfig::default() };
    let res = export_dataset(&cfg, 1, DatasetSolver::Closedform, &SolverSettings::default(), &dir.path().join("x.csv"));
    assert!(res.is_err());
}
