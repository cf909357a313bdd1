//! Statistical sanity of the simulators.

use rlhmm::sim::{engaged_marginal, generate, strategy_accuracy, RewardModel, SimScenario};

#[test]
fn chain_marginal_matches_propagation() {
    let out = generate(&SimScenario::case1(4000, 20, 99)).unwrap();
    let m = engaged_marginal(&out.truth);
    let n = out.hidden_strategies.len() as f64;
    for t in 0..20 {
        let p = out.hidden_strategies.iter().map(|u| u[t] as f64).sum::<f64>() / n;
        let se = (m[t] * (1.0 - m[t]) / n).sqrt();
        assert!((p - m[t]).abs() <= 3.0 * se, "t={t}: {p} vs {}", m[t]);
    }
}

#[test]
fn forced_action_reward_rate_tracks_state() {
    let mut sc = SimScenario::case1(400, 50, 7);
    sc.force_action = Some(1);
    let out = generate(&sc).unwrap();
    let mut hits = [0.0; 10];
    let mut counts = [0.0; 10];
    let mut mids = [0.0; 10];
    for s in out.dataset.sessions() {
        for tr in &s.trials {
            assert_eq!(tr.action, 1);
            let b = ((tr.state[0] * 10.0) as usize).min(9);
            hits[b] += tr.reward;
            counts[b] += 1.0;
            mids[b] += tr.state[0];
        }
    }
    for b in 0..10 {
        let p = hits[b] / counts[b];
        let s = mids[b] / counts[b];
        let se = (s * (1.0 - s) / counts[b]).sqrt().max(1e-3);
        assert!((p - s).abs() <= 3.5 * se, "bin {b}: rate {p}, mean state {s}");
    }
}

#[test]
fn zero_sensitivity_gives_uniform_choices() {
    let mut sc = SimScenario::case1(200, 100, 5);
    sc.rho = 1e-9;
    sc.nu = vec![0.0];
    sc.alpha_scalar = 0.0;
    let out = generate(&sc).unwrap();
    for state in [0u8, 1] {
        let mut c = [0.0f64; 2];
        for (s, u) in out.dataset.sessions().iter().zip(&out.hidden_strategies) {
            for (tr, &z) in s.trials.iter().zip(u) {
                if z == state {
                    c[tr.action] += 1.0;
                }
            }
        }
        let total = c[0] + c[1];
        let chi2 = c
            .iter()
            .map(|&o| (o - total / 2.0).powi(2) / (total / 2.0))
            .sum::<f64>();
        assert!(chi2 < 6.635, "state {state}: χ² = {chi2}");
    }
}

#[test]
fn prt_blocks_meet_their_quotas() {
    let sc = SimScenario::prt(50, 13);
    let RewardModel::Schedule { rich_stimulus, .. } = sc.reward else {
        panic!("prt uses a schedule")
    };
    let out = generate(&sc).unwrap();
    for s in out.dataset.sessions() {
        let short = out.shortfalls.iter().find(|f| f.subject == s.subject_id);
        let (mut stim, mut rich, mut lean) = ([0; 2], 0, 0);
        for tr in &s.trials {
            let st = tr.state[0] as usize;
            stim[st] += 1;
            if tr.reward > 0.0 {
                assert_eq!(tr.action, st, "only correct responses are rewarded");
                if st == rich_stimulus {
                    rich += 1;
                } else {
                    lean += 1;
                }
            }
        }
        assert_eq!(stim, [50, 50]);
        let (rm, lm) = short.map_or((0, 0), |f| (f.rich_missing, f.lean_missing));
        assert_eq!(rich + rm, 30);
        assert_eq!(lean + lm, 10);
    }
}

#[test]
fn always_engaged_scenario() {
    let out = generate(&SimScenario::case2(5, 30, 1)).unwrap();
    assert!(out.hidden_strategies.iter().flatten().all(|&u| u == 1));
    assert!(out.truth.is_engaged_only());
    assert_eq!(
        strategy_accuracy(&out.hidden_strategies, &out.hidden_strategies).unwrap(),
        1.0
    );
}
