use scoreloop::control::{
    control_step, pomdp_rollout, run_control_loop, write_control_csv, ConstantPolicy, ControlLoopConfig, FamilyKind,
    NaiveFitPolicy, ParamInterventionFamily, PomdpEnv, RewardMode,
};
use scoreloop::dynamics::{FitKind, FixedPointScore};
use scoreloop::estimators::FitReport;
use scoreloop::evaluation::{b2_model, b5_model, cost, objective, CostSpec};
use scoreloop::model::{InterventionSpec, LogisticLinear, MechanismSpec, Model, PopulationSpec, ScoreFunction};
use scoreloop::{Error, RngSeed};

fn fit(b: [f64; 3]) -> FitReport {
    FitReport {
        coefficients: b.to_vec(),
        loglik: 0.0,
        iterations: 0,
        converged: true,
        separation: false,
        loglik_trace: vec![],
    }
}

fn gaussian_model() -> Model {
    Model::new(
        MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap()),
        InterventionSpec::Identity,
        InterventionSpec::Identity,
        PopulationSpec::standard_normal(2).unwrap(),
        None,
    )
    .unwrap()
}

fn risk_score() -> ScoreFunction {
    fit([0.0, 1.0, 1.0]).score()
}

fn cfg(epochs: usize, n: usize) -> ControlLoopConfig {
    ControlLoopConfig {
        epochs,
        n,
        mc_n: 2000,
        seed: RngSeed(21),
    }
}

#[test]
fn zero_budget_loop_never_intervenes() {
    let fam = ParamInterventionFamily::scaled_log_shift(2.0).unwrap();
    let out =
        run_control_loop(&fit([0.3, 0.5, 0.5]), &fam, &risk_score(), &CostSpec::linear(0.0), &gaussian_model(), &cfg(4, 2000))
            .unwrap();
    assert!(out.iter().all(|e| e.theta == 0.0 && e.cost == 0.0));
}

#[test]
fn unlimited_budget_loop_uses_upper_bound() {
    let fam = ParamInterventionFamily::new(FamilyKind::LinearShift, 0.0, 1.5, 16).unwrap();
    let spec = CostSpec::linear(f64::INFINITY);
    let out = run_control_loop(&fit([0.0, 1.0, 1.0]), &fam, &risk_score(), &spec, &gaussian_model(), &cfg(3, 2000)).unwrap();
    assert!(out.iter().all(|e| e.theta == 1.5));
}

#[test]
fn b5_controlled_objective_beats_fixed_point() {
    let model = b5_model();
    let rho_inf = FixedPointScore::from_model(&model);
    let seed = RngSeed(0);
    let budget = cost(&rho_inf, &model, &CostSpec::linear(0.0), 0, seed).unwrap().value;
    let fam = ParamInterventionFamily::new(FamilyKind::ScaledLogShift, 0.0, 2.0, 201).unwrap();
    let s = control_step(&fit([0.0, 1.0, 1.0]), &fam, &rho_inf, &CostSpec::linear(budget), &model, 0, seed).unwrap();
    let obj_inf = objective(&rho_inf, &model, 0, seed).unwrap().value;
    assert!(s.objective <= obj_inf + 1e-12);
    assert!(s.cost <= budget);
    assert!(s.feasible_points >= 2);
}

#[test]
fn single_epoch_loop_is_one_control_step() {
    let fam = ParamInterventionFamily::scaled_log_shift(2.0).unwrap();
    let spec = CostSpec::linear(0.3);
    let c = cfg(1, 500);
    let initial = fit([0.2, 0.8, 1.1]);
    let out = run_control_loop(&initial, &fam, &risk_score(), &spec, &gaussian_model(), &c).unwrap();
    let s = control_step(&initial, &fam, &risk_score(), &spec, &gaussian_model(), c.mc_n, c.seed.split(u64::MAX)).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!((out[0].theta, out[0].objective, out[0].cost), (s.theta, s.objective, s.cost));
    assert_eq!(out[0].fit_used, initial);
}

#[test]
fn loop_refits_true_mechanism_and_settles() {
    let fam = ParamInterventionFamily::scaled_log_shift(2.0).unwrap();
    let spec = CostSpec::linear(0.25);
    let out =
        run_control_loop(&fit([0.5, 0.2, 0.3]), &fam, &risk_score(), &spec, &gaussian_model(), &cfg(6, 100_000)).unwrap();
    for e in &out {
        for (b, t) in e.refit.coefficients.iter().zip([0.0, 1.0, 1.0]) {
            assert!((b - t).abs() < 0.05, "{:?}", e.refit.coefficients);
        }
        assert!(e.cost <= spec.budget);
    }
    for w in out[3..].windows(2) {
        assert!((w[1].theta - w[0].theta).abs() <= fam.step() + 1e-12);
    }
    let mut buf = Vec::new();
    write_control_csv(&out, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
}

#[test]
fn family_validation() {
    assert!(ParamInterventionFamily::new(FamilyKind::ScaledLogShift, -0.1, 1.0, 10).is_err());
    assert!(ParamInterventionFamily::new(FamilyKind::ScaledLogShift, 0.0, 1.0, 1).is_err());
    let fam = ParamInterventionFamily::new(FamilyKind::LinearShift, 0.0, 1.0, 11).unwrap();
    assert_eq!(fam.intervention(0.4).apply(0.5, 1.0), 0.8);
    assert!(matches!(
        run_control_loop(&fit([0.0; 3]), &fam, &risk_score(), &CostSpec::linear(-1.0), &gaussian_model(), &cfg(1, 10)),
        Err(Error::NoFeasiblePoint(_))
    ));
}

#[test]
fn neutral_policy_reward_is_event_rate() {
    let n = 20_000;
    let env = PomdpEnv::new(b2_model(), n, RewardMode::Sampled, RngSeed(3)).unwrap();
    let neutral = ScoreFunction::constant(0.5).unwrap();
    let r = pomdp_rollout(&env, &mut ConstantPolicy(neutral), 3, 1.0).unwrap();
    let se = (0.25 / n as f64).sqrt();
    for s in &r.steps {
        assert!((s.reward - 0.5).abs() < 3.0 * se, "{}", s.reward);
    }
    assert!((r.discounted_return - r.steps.iter().map(|s| s.reward).sum::<f64>()).abs() < 1e-12);
}

#[test]
fn exact_discounted_return_is_geometric() {
    let env = PomdpEnv::new(b5_model(), 50, RewardMode::Exact, RngSeed(0)).unwrap();
    let rho = ScoreFunction::threshold(1.0, 0.0).unwrap();
    let r = pomdp_rollout(&env, &mut ConstantPolicy(rho), 6, 0.5).unwrap();
    let v = r.steps[0].reward;
    assert!(r.steps.iter().all(|s| s.reward == v));
    assert!((r.discounted_return - 2.0 * v * (1.0 - 0.5f64.powi(6))).abs() < 1e-12);
    assert!(pomdp_rollout(&env, &mut ConstantPolicy(ScoreFunction::constant(0.1).unwrap()), 2, 1.5).is_err());
}

#[test]
fn next_observation_depends_only_on_state_and_action() {
    let env = PomdpEnv::new(b2_model(), 300, RewardMode::Sampled, RngSeed(8)).unwrap();
    let (s0, _) = env.reset().unwrap();
    let (a1, _, _) = env.step(&s0, &ScoreFunction::constant(0.1).unwrap()).unwrap();
    let (b1, _, _) = env.step(&s0, &ScoreFunction::constant(0.9).unwrap()).unwrap();
    let act = ScoreFunction::threshold(0.733, 0.2).unwrap();
    let (a2, oa, ra) = env.step(&a1, &act).unwrap();
    let (b2, ob, rb) = env.step(&b1, &act).unwrap();
    assert_eq!((a2.epoch, &oa, ra), (b2.epoch, &ob, rb));
    assert_eq!(env.step(&a1, &act).unwrap().1, oa);
}

#[test]
fn observations_hide_latent_and_post_intervention_covariates() {
    let model = Model::new(
        MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 1, 1.0).unwrap()),
        InterventionSpec::LogShift { scale: 1.0 },
        InterventionSpec::Identity,
        PopulationSpec::standard_normal(3).unwrap(),
        None,
    )
    .unwrap();
    let env = PomdpEnv::new(model, 40, RewardMode::Sampled, RngSeed(4)).unwrap();
    let r = pomdp_rollout(&env, &mut NaiveFitPolicy(FitKind::Logistic), 2, 0.9).unwrap();
    let (s0, _) = env.reset().unwrap();
    let (s1, _, _) = env.step(&s0, &ScoreFunction::constant(0.7).unwrap()).unwrap();
    for step in &r.steps {
        assert_eq!(step.observation.width(), 2);
    }
    assert_eq!(r.initial.width(), 2);
    let obs = &env.step(&s0, &ScoreFunction::constant(0.7).unwrap()).unwrap().1;
    for (row, st) in obs.covariates.iter().zip(&s1.start) {
        assert_eq!(row, &vec![st.x_s[0], st.x_a[0]]);
    }
    assert!(s1.end.iter().zip(&s1.start).all(|(e, s)| e.x_a != s.x_a));
}
