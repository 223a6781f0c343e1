use cpsched::env::EnvConfig;
use cpsched::penalty::PenaltyModel;
use cpsched::volume::{expected_f_of_delay, task_delay_dist, DelayModel};

/// `U(h + 1, b) >= U(h, b)` over an age/volume grid for the default surfaces,
/// with `d_bar` and `E[F(d, b)]` taken from the default delay pipeline.
#[test]
fn utility_index_non_decreasing_in_age_on_default_grid() {
    let env = EnvConfig::default();
    let rate = env.rate.mean();
    let mut report = Vec::new();
    let mut total_decreases = 0;
    for model in [
        PenaltyModel::default_intersection(10.0, 16.0).unwrap(),
        PenaltyModel::default_corridor(10.0, 16.0).unwrap(),
    ] {
        let mut decreases = 0;
        let mut steps = 0;
        for bi in 0..16 {
            let b = 0.5 + bi as f64;
            let d_bar = env.expected_task_delay_slots(2, b, rate);
            let e_f_d = expected_f_of_delay(&model, b, &DelayModel::Random(task_delay_dist(&env, 2, b, rate)))
                .unwrap()
                .value;
            for h in 1..200 {
                let u0 = model.utility_index(h as f64, b, d_bar, e_f_d).unwrap();
                let u1 = model.utility_index(h as f64 + 1.0, b, d_bar, e_f_d).unwrap();
                steps += 1;
                if u1 < u0 {
                    decreases += 1;
                }
            }
        }
        total_decreases += decreases;
        report.push(format!("{}: {decreases} of {steps} steps decrease", model.kind().as_str()));
    }
    assert_eq!(total_decreases, 0, "{report:?}");
}
