mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use scm_ident::dgp::{
    check_variety, read_dataset, write_dataset, DgpSpec, ExpFamilyPrior, GaussianEnvironment,
};

fn spec() -> DgpSpec {
    DgpSpec::from_json_str(&read_fixture("spec_ident.json")).unwrap()
}

fn sample_cov(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows[0].len();
    let k = rows.len() as f64;
    let mean = DVector::from_fn(n, |j, _| rows.iter().map(|r| r[j]).sum::<f64>() / k);
    let mut c = DMatrix::zeros(n, n);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        c += &d * d.transpose();
    }
    c / k
}

#[test]
fn x_covariance_matches_population() {
    let s = spec();
    let data = s.generate(50_000, 3).unwrap();
    for (env, e) in s.prior.environments().iter().enumerate() {
        let xs: Vec<Vec<f64>> = data.env_samples(env).map(|r| r.x.clone()).collect();
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&e.variances));
        let pop = &s.mixing.f * sigma * s.mixing.f.transpose();
        let rel = (sample_cov(&xs) - &pop).norm() / pop.norm();
        assert!(rel < 0.05, "env {env}: {rel}");
    }
}

#[test]
fn zero_noise_targets_follow_parents_exactly() {
    let s = spec();
    let data = s.generate(200, 9).unwrap();
    for r in &data.samples {
        assert!((r.y[0][0] - 1.5 * r.latent[0]).abs() < 1e-12);
        assert!((r.y[1][0] - 0.8 * r.latent[1]).abs() < 1e-12);
        let x0 = r.latent[0] + 0.5 * r.latent[1];
        assert!((r.x[0] - x0).abs() < 1e-12);
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let s = spec();
    let a = s.generate(100, 42).unwrap();
    assert_eq!(a, s.generate(100, 42).unwrap());
    assert_ne!(a, s.generate(100, 43).unwrap());
    // Environment streams are independent of how many samples are drawn.
    let b = s.generate(50, 42).unwrap();
    assert_eq!(a.env_samples(1).next(), b.env_samples(1).next());
}

#[test]
fn csv_round_trip_is_exact() {
    let s = spec();
    let data = s.generate(64, 1).unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    let back = read_dataset(buf.as_slice(), &s.topology).unwrap();
    assert_eq!(back, data);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    scm_ident::dgp::export_dataset(&data, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), buf);
    assert_eq!(
        scm_ident::dgp::import_dataset(&path, &s.topology).unwrap(),
        data
    );
    let other = scm_ident::topology::ScmTopology::from_adjacency(&[[1, 1]]).unwrap();
    assert!(read_dataset(buf.as_slice(), &other).is_err());
}

#[test]
fn variety_generic_vs_duplicated() {
    assert!(check_variety(&spec().prior).ok);
    let e = GaussianEnvironment {
        means: vec![0.3, -0.2],
        variances: vec![1.1, 0.7],
    };
    let dup = ExpFamilyPrior::new(vec![e.clone(), e.clone(), e.clone()]).unwrap();
    let r = check_variety(&dup);
    assert!(!r.ok);
    assert_eq!(r.per_latent_rank, vec![0, 0]);
    // Two environments can never span both natural-parameter directions.
    let two = ExpFamilyPrior::new(spec().prior.environments()[..2].to_vec()).unwrap();
    assert!(!check_variety(&two).ok);
    // Means change but variances do not: rank 1 per latent.
    let mean_only = ExpFamilyPrior::new(
        [0.0, 1.0, 2.0]
            .iter()
            .map(|&m| GaussianEnvironment {
                means: vec![m, -m],
                variances: vec![1.0, 1.0],
            })
            .collect(),
    )
    .unwrap();
    let r = check_variety(&mean_only);
    assert!(!r.ok);
    assert_eq!(r.per_latent_rank, vec![1, 1]);
}

#[test]
fn json_round_trip() {
    let s = spec();
    let back = DgpSpec::from_json_str(&serde_json::to_string(&s.to_json_value()).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(
        DgpSpec::from_json_str(r#"{"topology": {}, "environments": [], "F": [], "bogus": 1}"#)
            .is_err()
    );
}
