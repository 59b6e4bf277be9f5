use twotier::aircomp::{compute_stats, transmit, Cluster, Member, NoiseDraws, PowerAllocation, Relay, Topology};
use twotier::harness::output::write_metrics;
use twotier::harness::{run_experiment, Experiment, ExperimentConfig, Scheme};

fn quadratic(scheme: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("model", "quadratic"),
        ("devices", "6"),
        ("clusters", "2"),
        ("rounds", "15"),
        ("samples_per_device", "8"),
        ("batch", "8"),
        ("features", "3"),
        ("lipschitz", "2"),
        ("noise_dbm", "-inf"),
        ("power_w", "1e6"),
        ("scheme", scheme),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

fn small(scheme: Scheme) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        devices: 12,
        clusters: 3,
        rounds: 4,
        scheme,
        features: 5,
        samples_per_device: 30,
        batch: 10,
        ..Default::default()
    };
    c.seed = 9;
    c
}

/// Full-batch least-squares gradient of every device, computed from the data.
fn device_gradients(exp: &Experiment, w: &[f64]) -> Vec<Vec<f64>> {
    let p = exp.quadratic().unwrap();
    p.partition
        .shards
        .iter()
        .map(|s| {
            let mut g = vec![0.0; w.len()];
            for &r in s {
                let x = p.data.input(r);
                let res: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - p.data.target(r).unwrap();
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += res * xi / s.len() as f64;
                }
            }
            g
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn noiseless_direct_scheme_is_gradient_descent() {
    let cfg = quadratic("direct");
    let lr = cfg.learning_rate();
    let mut exp = Experiment::new(cfg).unwrap();
    let mut w = exp.model().params().to_vec();
    for _ in 0..15 {
        let grads = device_gradients(&exp, &w);
        let k = grads.len() as f64;
        for g in &grads {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi / k;
            }
        }
        let rec = exp.step().unwrap();
        assert_eq!(rec.transmitted, 6);
        assert!(close(exp.model().params(), &w, 1e-9), "{:?} vs {w:?}", exp.model().params());
    }
}

#[test]
fn noiseless_two_tier_loses_only_the_leads() {
    let cfg = quadratic("proposed");
    let lr = cfg.learning_rate();
    let mut exp = Experiment::new(cfg).unwrap();
    let mut w = exp.model().params().to_vec();
    for _ in 0..15 {
        let grads = device_gradients(&exp, &w);
        let k = grads.len() as f64;
        let mean = compute_stats(&grads).unwrap().mean;
        let rec = exp.step().unwrap();
        let leads = rec.assignment.unwrap().leads;
        for (d, g) in grads.iter().enumerate() {
            for (wi, gi) in w.iter_mut().zip(g) {
                // A lead's gradient is replaced by the scalar mean.
                *wi -= lr * if leads.contains(&d) { mean } else { *gi } / k;
            }
        }
        assert!(close(exp.model().params(), &w, 1e-6), "{:?} vs {w:?}", exp.model().params());
    }
}

#[test]
fn zero_rounds_report_the_initial_model() {
    let cfg = ExperimentConfig { rounds: 0, ..small(Scheme::Proposed) };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.rounds.is_empty());
    let rows = report.rows();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].round, 0);
    assert_eq!(rows[0], Experiment::new(cfg).unwrap().initial_metrics().unwrap());
}

#[test]
fn two_tier_schemes_send_every_subordinate() {
    for scheme in [Scheme::Proposed, Scheme::Static, Scheme::Similarity, Scheme::MaxPower, Scheme::Mse] {
        let cfg = small(scheme);
        let mut exp = Experiment::new(cfg.clone()).unwrap();
        for t in 1..=cfg.rounds {
            let rec = exp.step().unwrap();
            let a = rec.assignment.unwrap();
            a.validate(cfg.devices).unwrap();
            assert_eq!(a.round, t);
            assert_eq!(rec.transmitted, cfg.devices - cfg.clusters);
            assert_eq!(a.subordinate_count(), cfg.devices - cfg.clusters);
            assert!(rec.identity_gap <= 1e-9);
        }
    }
    let mut exp = Experiment::new(small(Scheme::Direct)).unwrap();
    let rec = exp.step().unwrap();
    assert!(rec.assignment.is_none());
    assert_eq!(rec.transmitted, 12);
}

#[test]
fn static_scheme_keeps_its_first_assignment() {
    let mut exp = Experiment::new(small(Scheme::Static)).unwrap();
    let first = exp.step().unwrap().assignment.unwrap();
    for _ in 0..3 {
        let next = exp.step().unwrap().assignment.unwrap();
        assert_eq!((&next.clusters, &next.leads), (&first.clusters, &first.leads));
    }
}

#[test]
fn single_device_direct_is_a_self_relaying_cluster() {
    let topo = Topology::direct(&[0.3], &[2.0], 0.1);
    let relay =
        Cluster { lead: 0, lead_gain: 0.3, lead_noise: 0.0, lead_budget: 2.0, members: vec![Member { device: 0, gain: 1.0, budget: 1.0 }] };
    let two_tier = Topology { clusters: vec![relay], ps_noise: 0.1, devices: 1, relay: Relay::TwoTier };
    assert_eq!(topo.clusters, two_tier.clusters);
    assert_eq!(topo.ps_noise, two_tier.ps_noise);

    let gradients = vec![vec![0.5, -1.0, 2.0]];
    let stats = compute_stats(&gradients).unwrap();
    let alloc = PowerAllocation { alpha: vec![vec![1.0]], beta: vec![1.5], zeta: 1.7 };
    let noise = NoiseDraws { lead: vec![vec![0.0; 3]], ps: vec![0.2, -0.1, 0.05] };
    let a = transmit(&topo, &alloc, &gradients, &stats, &noise).unwrap();
    let b = transmit(&two_tier, &alloc, &gradients, &stats, &noise).unwrap();
    assert_eq!(a, b);
    // Only the relay flag differs: the lead's own gradient counts when it is
    // its own member.
    assert!(topo.omitted().is_empty());
    assert_eq!(two_tier.omitted(), vec![0]);
}

#[test]
fn reruns_write_identical_metrics() {
    for scheme in Scheme::ALL {
        let cfg = small(scheme);
        let csv = |cfg: &ExperimentConfig| {
            let mut buf = Vec::new();
            write_metrics(&mut buf, &run_experiment(cfg).unwrap().rows()).unwrap();
            buf
        };
        let first = csv(&cfg);
        assert_eq!(first, csv(&cfg));
        assert_ne!(first, csv(&ExperimentConfig { seed: 10, ..cfg.clone() }));
    }
}

#[test]
fn every_scheme_reports_finite_metrics() {
    for scheme in Scheme::ALL {
        let report = run_experiment(&small(scheme)).unwrap();
        assert_eq!(report.rounds.len(), 4);
        for (t, r) in report.rounds.iter().enumerate() {
            assert_eq!(r.round, t + 1);
            assert!((0.0..=1.0).contains(&r.acc));
            for v in [r.loss, r.bias_sq, r.mse, r.objective, r.bound] {
                assert!(v.is_finite() && v >= 0.0, "{scheme}: {r:?}");
            }
        }
    }
}
