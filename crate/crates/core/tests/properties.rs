use proptest::prelude::*;

use station_adp::adp::{
    sigma, sigma_prime, value, ActorState, AdpGains, BellmanTerm, CostWeights, CriticState,
    ExtrapolationSet,
};
use station_adp::config::{parse_config, serialize_config, ExperimentConfig, Mode};
use station_adp::dynamics::{Current, State, Vehicle, VehicleParams};
use station_adp::linalg::{sym_eig_range, wrap_angle, Mat21, Mat6, Vec21, Vec3, Vec6};
use station_adp::riccati::{p_from_weights, weights_from_p};

fn vec6(range: f64) -> impl Strategy<Value = Vec6> {
    prop::array::uniform6(-range..range).prop_map(Vec6::from)
}

fn vec21(range: f64) -> impl Strategy<Value = Vec21> {
    prop::collection::vec(-range..range, 21).prop_map(|v| Vec21::from_column_slice(&v))
}

fn term(omega: Vec21, delta: f64, critic: &CriticState) -> BellmanTerm {
    critic.term(delta, omega)
}

proptest! {
    #[test]
    fn sigma_prime_matches_central_differences(z in vec6(5.0)) {
        let h = 1e-5;
        let an = sigma_prime(&z);
        for j in 0..6 {
            let mut e = Vec6::zeros();
            e[j] = h;
            let fd = (sigma(&(z + e)) - sigma(&(z - e))) / (2.0 * h);
            prop_assert!((fd - an.column(j)).norm() <= 1e-7 * an.norm().max(1.0));
        }
    }

    #[test]
    fn value_is_quadratic_form_of_weight_matrix(w in vec21(10.0), z in vec6(3.0)) {
        let p = p_from_weights(&w);
        prop_assert!((p - p.transpose()).amax() == 0.0);
        let v = value(&w, &z);
        prop_assert!((v - (z.transpose() * p * z)[0]).abs() <= 1e-9 * (1.0 + v.abs()));
        prop_assert!((weights_from_p(&p) - w).amax() <= 1e-12 * (1.0 + w.amax()));
    }

    #[test]
    fn gamma_stays_symmetric_positive_and_bounded(
        omegas in prop::collection::vec(vec21(50.0), 1..40),
        deltas in prop::collection::vec(-100.0..100.0f64, 40),
        gamma_bar in 500.0..5e4f64,
    ) {
        let gains = AdpGains { gamma_bar, ..AdpGains::default() };
        let mut critic = CriticState::new(Vec21::zeros(), &gains);
        for (i, om) in omegas.iter().enumerate() {
            let on = term(*om, deltas[i], &critic);
            let ext = [term(om.map(|x| 0.5 * x), deltas[(i + 1) % 40], &critic)];
            critic.step(&gains, &on, &ext, 0.2).unwrap();
            let g = critic.gamma();
            prop_assert!((g - g.transpose()).amax() <= 1e-12 * g.amax());
            let (lo, hi) = sym_eig_range(g);
            prop_assert!(lo > 0.0);
            prop_assert!(hi <= gamma_bar * (1.0 + 1e-9));
        }
    }

    #[test]
    fn rho_is_at_least_one(omega in vec21(1e3), scale in 1e-3..1e4f64) {
        let gains = AdpGains::default();
        let critic = CriticState::with_gamma(Vec21::zeros(), Mat21::identity() * scale, &gains).unwrap();
        prop_assert!(critic.rho(&omega) >= 1.0);
    }

    #[test]
    fn actor_stays_in_ball(
        w0 in vec21(300.0),
        targets in prop::collection::vec(vec21(5e3), 1..30),
        w_bar in 100.0..2e3f64,
    ) {
        let gains = AdpGains { w_bar, ..AdpGains::default() };
        let start = if w0.norm() > w_bar { w0 * (w_bar / w0.norm()) } else { w0 };
        let mut actor = ActorState::new(start);
        for t in &targets {
            actor.step(&gains, t, 0.02);
            prop_assert!(actor.w.norm() <= w_bar * (1.0 + 1e-12));
        }
    }

    #[test]
    fn halton_points_lie_in_box(half in prop::array::uniform6(0.01..10.0f64), n in 1usize..200, seed in 0u64..1000) {
        let hw = Vec6::from(half);
        let set = ExtrapolationSet::halton(&hw, n, seed).unwrap();
        prop_assert_eq!(set.len(), n);
        for p in set.points() {
            for d in 0..6 {
                prop_assert!(p[d].abs() <= hw[d]);
            }
        }
        prop_assert_eq!(set, ExtrapolationSet::halton(&hw, n, seed).unwrap());
    }

    #[test]
    fn wrapped_angle_in_half_open_interval(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let k = (a - w) / (2.0 * std::f64::consts::PI);
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn decomposition_matches_direct_model(z in vec6(3.0), c in prop::array::uniform4(-1.0..1.0f64), tau in prop::array::uniform3(-50.0..50.0f64)) {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let s = State::from_zeta(&z);
        let cur = Current::new(c[0], c[1], c[2], c[3]);
        let tau = Vec3::from(tau);
        let lhs = v.regressor_full(&s, &cur) * v.true_theta().0
            + v.drift_known(&s, &cur.nu_c_dot())
            + v.apply_effectiveness(&tau);
        prop_assert!((lhs - v.plant_derivative(&s, &cur, &tau)).amax() <= 1e-10);
    }

    #[test]
    fn config_round_trips(
        k_c1 in 0.01..10.0f64,
        beta in 0.001..1.0f64,
        dt in 0.001..0.1f64,
        seed in 0u64..1_000_000,
        q in prop::array::uniform6(0.1..100.0f64),
        mode in prop::sample::select(vec![Mode::TimeVarying, Mode::ConstantCurrent, Mode::LinearTest]),
    ) {
        let mut cfg = ExperimentConfig { mode, ..ExperimentConfig::default() };
        cfg.adp.k_c1 = k_c1;
        cfg.adp.beta = beta;
        cfg.sim.dt = dt;
        cfg.sim.seed = seed;
        cfg.cost = CostWeights::new(Mat6::from_diagonal(&Vec6::from(q)), *cfg.cost.r()).unwrap();
        let text = serialize_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back.mode, mode);
        prop_assert_eq!(back.adp.k_c1, k_c1);
        prop_assert_eq!(back.adp.beta, beta);
        prop_assert_eq!(back.sim.dt, dt);
        prop_assert_eq!(back.sim.seed, seed);
        prop_assert_eq!(back.cost.q().diagonal(), Vec6::from(q));
        prop_assert_eq!(serialize_config(&parse_config(&serialize_config(&back)).unwrap()), serialize_config(&back));
    }
}
