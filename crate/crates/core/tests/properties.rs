use proptest::prelude::*;
use sampling_mpc::admm::{
    assemble_globals_view, compute_neighborhoods, consensus_residuals, dual_update, global_update, AgentLocalState,
    NeighborhoodMode, Penalties,
};
use sampling_mpc::dynamics::DynamicsKind;
use sampling_mpc::io::export::parse_trajectory_csv;
use sampling_mpc::io::{parse_config_str, ConfigFile};
use sampling_mpc::linalg::Matrix;
use sampling_mpc::policy::{
    gmm_em_update, sample_controls, stein_update, ug_update, Bandwidth, GaussianPolicy, MixturePolicy, Policy,
    SteinPolicy,
};
use sampling_mpc::runtime::{run, RunRecord};
use sampling_mpc::shape::{compute_weights, compute_weights_with_fallback, exp_r, ShapeConfig, Threshold, WeightVector};
use sampling_mpc::trajectory::Trajectory;

fn costs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, 2..max_len)
}

fn shapes() -> impl Strategy<Value = ShapeConfig<f64>> {
    prop_oneof![
        (0.05f64..20.0).prop_map(|lambda| ShapeConfig::Exponential { lambda }),
        (0.05f64..20.0).prop_map(|lambda| ShapeConfig::NormalizedExponential { lambda }),
        (1.01f64..10.0, 0.05f64..1.0).prop_map(|(r, f)| ShapeConfig::TsallisReparam {
            r,
            threshold: Threshold::EliteFraction(f),
        }),
        (0.1f64..10.0, 0.05f64..0.95).prop_map(|(kappa, quantile_rho)| ShapeConfig::Sigmoid { kappa, quantile_rho }),
        (0.05f64..1.0).prop_map(|f| ShapeConfig::Indicator {
            threshold: Threshold::EliteFraction(f),
        }),
    ]
}

fn trajectories(m: usize, dim: usize, len: usize) -> impl Strategy<Value = Vec<Trajectory<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim * len), m)
        .prop_map(move |v| v.into_iter().map(|d| Trajectory::from_flat(dim, len, d)).collect())
}

fn weights(m: usize) -> impl Strategy<Value = WeightVector<f64>> {
    prop::collection::vec(0.01f64..1.0, m).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        WeightVector::from_normalized(raw.into_iter().map(|w| w / total).collect()).unwrap()
    })
}

fn spd_ok(c: &Matrix<f64>, floor: f64) -> bool {
    c.max_asymmetry() <= 1e-9 && c.min_eigenvalue() >= floor - 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_are_normalized_and_nonnegative(c in costs(64), shape in shapes()) {
        // degenerate batches go through the fallback shape
        let (w, _) = compute_weights_with_fallback(&c, &shape).unwrap();
        prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn lower_cost_never_gets_less_weight(c in costs(64), shape in shapes()) {
        let (w, _) = compute_weights_with_fallback(&c, &shape).unwrap();
        for a in 0..c.len() {
            for b in 0..c.len() {
                if c[a] <= c[b] {
                    prop_assert!(w.as_slice()[a] >= w.as_slice()[b] - 1e-15);
                }
            }
        }
    }

    #[test]
    fn tsallis_approaches_exponential(lambda in 0.2f64..5.0, c in prop::collection::vec(0.0f64..1.0, 2..64)) {
        let r = 1.0 + 1e-6;
        let gamma = lambda / (r - 1.0);
        let scaled: Vec<f64> = c.iter().map(|v| v * 10.0).collect();
        let a = compute_weights(&scaled, &ShapeConfig::TsallisReparam { r, threshold: Threshold::Gamma(gamma) }).unwrap();
        let b = compute_weights(&scaled, &ShapeConfig::Exponential { lambda }).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-3);
        }
    }

    #[test]
    fn tsallis_approaches_indicator(c in costs(64), gamma in 1.0f64..100.0) {
        // keep costs away from the threshold so the limit is reached at r = 1e6
        let c: Vec<f64> = c.into_iter().filter(|&v| (v - gamma).abs() > 1e-2 * gamma).collect();
        prop_assume!(c.iter().any(|&v| v < gamma));
        let a = compute_weights(&c, &ShapeConfig::TsallisReparam { r: 1e6, threshold: Threshold::Gamma(gamma) }).unwrap();
        let b = compute_weights(&c, &ShapeConfig::Indicator { threshold: Threshold::Gamma(gamma) }).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-3);
        }
    }

    #[test]
    fn normalized_exponential_ignores_shifts(c in costs(64), lambda in 0.05f64..20.0, shift in -50.0f64..50.0) {
        let shape = ShapeConfig::NormalizedExponential { lambda };
        // exactly representable shift so the min-max differences are unchanged
        let shift = (shift * 4.0).round() / 4.0;
        let c: Vec<f64> = c.iter().map(|v| (v * 4.0).round() / 4.0).collect();
        let shifted: Vec<f64> = c.iter().map(|v| v + shift).collect();
        let a = compute_weights(&c, &shape).unwrap();
        let b = compute_weights(&shifted, &shape).unwrap();
        prop_assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn exp_r_is_nondecreasing(x in -5.0f64..5.0, dx in 0.0f64..5.0, r in 1.001f64..20.0) {
        let a = exp_r(x, r).unwrap();
        let b = exp_r(x + dx, r).unwrap();
        prop_assert!(a >= 0.0 && b >= a);
    }

    #[test]
    fn uniform_ug_update_is_sample_moments(s in trajectories(12, 2, 3)) {
        let prev = GaussianPolicy::new(Trajectory::zeros(2, 3), &Matrix::identity(2), 0.0).unwrap();
        let next = ug_update(&s, &WeightVector::uniform(12), &prev).unwrap();
        for t in 0..3 {
            let mean: Vec<f64> = (0..2).map(|a| s.iter().map(|x| x.col(t)[a]).sum::<f64>() / 12.0).collect();
            for a in 0..2 {
                prop_assert!((mean[a] - next.means.col(t)[a]).abs() <= 1e-12);
                for b in 0..2 {
                    let c = s.iter().map(|x| (x.col(t)[a] - mean[a]) * (x.col(t)[b] - mean[b])).sum::<f64>() / 12.0;
                    prop_assert!((c - next.covariances[t][(a, b)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gaussian_covariances_stay_spd(s in trajectories(3, 3, 2), w in weights(3), floor in 1e-6f64..1e-2) {
        // fewer samples than dimensions: the raw covariance is singular
        let prev = GaussianPolicy::new(Trajectory::zeros(3, 2), &Matrix::identity(3), floor).unwrap();
        let next = ug_update(&s, &w, &prev).unwrap();
        prop_assert!(next.covariances.iter().all(|c| spd_ok(c, floor)));
    }

    #[test]
    fn mixture_stays_on_the_simplex(s in trajectories(30, 2, 2), w in weights(30), means in trajectories(3, 2, 2)) {
        let prev = MixturePolicy::new(means, &Matrix::identity(2), 1e-6).unwrap();
        let next = gmm_em_update(&s, &w, &prev, 3).unwrap().policy;
        prop_assert!((next.mixture_weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(next.mixture_weights.iter().all(|&p| p >= 0.0));
        prop_assert!(next.covariances.iter().flatten().all(|c| spd_ok(c, 1e-6)));
    }

    #[test]
    fn stein_particles_stay_distinct(particles in trajectories(3, 2, 2), seed in any::<u64>(), w in weights(12)) {
        let prev = SteinPolicy::new(particles, &Matrix::scaled_identity(2, 0.5), 0.05, 4, Bandwidth::MedianHeuristic).unwrap();
        let samples = sample_controls(&Policy::Stein(prev.clone()), 12, seed).unwrap();
        let next = stein_update(&samples, &w, &prev).unwrap();
        for a in 0..3 {
            for b in a + 1..3 {
                prop_assert!(next.particles[a] != next.particles[b]);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), means in trajectories(2, 2, 4)) {
        let p = Policy::Mixture(MixturePolicy::new(means, &Matrix::identity(2), 1e-6).unwrap());
        prop_assert_eq!(sample_controls(&p, 8, seed).unwrap(), sample_controls(&p, 8, seed).unwrap());
    }

    #[test]
    fn neighborhoods_are_cross_consistent(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12),
        radius in 0.1f64..6.0,
        k in 1usize..4,
        ball in any::<bool>(),
    ) {
        let pos: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let refs: Vec<&[f64]> = pos.iter().map(|p| p.as_slice()).collect();
        let mode = if ball { NeighborhoodMode::DistanceBall(radius) } else { NeighborhoodMode::FixedSize(k.min(pos.len() - 1)) };
        let sets = compute_neighborhoods(&refs, mode).unwrap();
        for i in 0..pos.len() {
            prop_assert!(!sets.out[i].contains(&i));
            for &j in &sets.out[i] {
                prop_assert!(sets.inn[j].contains(&i));
            }
            for &j in &sets.inn[i] {
                prop_assert!(sets.out[j].contains(&i));
            }
        }
    }

    #[test]
    fn agreeing_locals_are_a_fixed_point(
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..8),
        truth in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3 * 4 + 2 * 4), 8),
        mu in 0.1f64..100.0,
        nu in 0.1f64..100.0,
    ) {
        let n = pts.len();
        let pos: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let refs: Vec<&[f64]> = pos.iter().map(|p| p.as_slice()).collect();
        let sets = compute_neighborhoods(&refs, NeighborhoodMode::DistanceBall(2.5)).unwrap();
        let xs: Vec<Trajectory<f64>> = truth.iter().map(|v| Trajectory::from_flat(3, 4, v[..12].to_vec())).collect();
        let us: Vec<Trajectory<f64>> = truth.iter().map(|v| Trajectory::from_flat(2, 4, v[12..].to_vec())).collect();
        let locals: Vec<AgentLocalState<f64>> = (0..n)
            .map(|i| {
                let blocks: Vec<usize> = std::iter::once(i).chain(sets.out[i].iter().copied()).collect();
                let x = Trajectory::stack(&blocks.iter().map(|&j| &xs[j]).collect::<Vec<_>>());
                let u = Trajectory::stack(&blocks.iter().map(|&j| &us[j]).collect::<Vec<_>>());
                AgentLocalState {
                    agent: i,
                    neighbors: sets.out[i].clone(),
                    xi: Trajectory::zeros(x.dim(), 4),
                    gamma: Trajectory::zeros(u.dim(), 4),
                    x,
                    u,
                }
            })
            .collect();
        let penalties = Penalties::new(mu, nu).unwrap();
        let g = global_update(&locals, &sets, &penalties, 3, 2);
        for i in 0..n {
            for (a, b) in g.y[i].as_slice().iter().zip(xs[i].as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in g.z[i].as_slice().iter().zip(us[i].as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        let r = consensus_residuals(&locals, &g, &sets);
        prop_assert!(r.primal_state <= 1e-10 && r.primal_control <= 1e-10);
        for local in &locals {
            let (y, z) = assemble_globals_view(local.agent, &g, &sets);
            let next = dual_update(local, &y, &z, &penalties);
            prop_assert!(next.xi.as_slice().iter().chain(next.gamma.as_slice()).all(|v| v.abs() <= 1e-9));
        }
    }
}

fn record(agents: usize, steps: usize, values: &[f64]) -> RunRecord<f64> {
    let (nx, nu) = (3 * agents, 2 * agents);
    let mut it = values.iter().copied().cycle();
    let states: Vec<Vec<f64>> = (0..=steps).map(|_| (0..nx).map(|_| it.next().unwrap()).collect()).collect();
    let controls: Vec<Vec<f64>> = (0..steps).map(|_| (0..nu).map(|_| it.next().unwrap()).collect()).collect();
    RunRecord {
        num_agents: agents,
        states: Trajectory::from_columns(nx, &states),
        controls: Trajectory::from_columns(nu, &controls),
        residuals: Vec::new(),
        agent_costs: vec![0.0; agents],
        violations: 0,
        success: true,
        aborted: None,
        degenerate_events: 0,
        step_seconds: Vec::new(),
        agent_solve_seconds: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectory_csv_round_trips(
        agents in 1usize..4,
        steps in 0usize..6,
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
    ) {
        let r = record(agents, steps, &values);
        let task = sampling_mpc::tasks::make_scenario(
            sampling_mpc::tasks::Scenario::DubinsFormation(agents),
            &sampling_mpc::tasks::ScenarioParams::defaults(sampling_mpc::tasks::Scenario::DubinsFormation(agents)),
        )
        .unwrap();
        let csv = sampling_mpc::io::export::trajectory_csv(&r, &task);
        let parsed = parse_trajectory_csv(&csv, DynamicsKind::Dubins.state_dim(), std::path::Path::new("t")).unwrap();
        prop_assert_eq!(parsed.controls.as_slice(), r.controls.as_slice());
        for t in 0..steps {
            prop_assert_eq!(parsed.states.col(t), r.states.col(t + 1));
        }
    }

    #[test]
    fn config_survives_toml_round_trip(
        samples in 2usize..500,
        lambda in 0.01f64..100.0,
        mu in 0.01f64..1e3,
        seeds in prop::collection::vec(any::<u64>(), 1..5),
        centralized in any::<bool>(),
    ) {
        let text = format!(
            "[scenario]\nname = \"point_mass\"\n[optimizer]\nperspective = \"mppi\"\nlambda = {lambda:?}\nsamples = {samples}\niterations = 2\n\
             [admm]\nmu = {mu:?}\n[run]\nmode = \"{}\"\nseeds = {seeds:?}\n",
            if centralized { "centralized" } else { "distributed" }
        );
        let file = ConfigFile::parse(&text).unwrap();
        let again = ConfigFile::parse(&file.to_toml()).unwrap();
        prop_assert_eq!(&file, &again);
        let a = parse_config_str(&text).unwrap();
        prop_assert_eq!(a.seeds, seeds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn runs_are_bit_reproducible(seed in any::<u64>(), centralized in any::<bool>()) {
        let text = format!(
            "[scenario]\nname = \"narrow_crossing3\"\n[optimizer]\nperspective = \"tsallis\"\nr = 2.0\nelite_fraction = 0.2\nsamples = 16\niterations = 2\n\
             [run]\nmode = \"{}\"\nsteps = 4\n",
            if centralized { "centralized" } else { "distributed" }
        );
        let mut cfg = parse_config_str(&text).unwrap().run;
        cfg.seed = seed;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        prop_assert_eq!(a.states, b.states);
        prop_assert_eq!(a.controls, b.controls);
        prop_assert_eq!(a.residuals, b.residuals);
        prop_assert_eq!(a.agent_costs, b.agent_costs);
    }
}
