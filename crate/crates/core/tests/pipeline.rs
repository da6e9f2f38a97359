use mhmm::decoding::decode_at;
use mhmm::inference::{fit_me_poisson, summarize, McmcConfig};
use mhmm::ingest::{read_panel_csv, read_states_csv, write_panel_csv, write_states_csv};
use mhmm::policy::{policy_report, PolicyConfig};
use mhmm::simulate::{separated_config, simulate_panel, SimulationConfig};
use mhmm::PriorConfig;

#[test]
fn truth_decodes_separated_panel() {
    let sim = simulate_panel(&separated_config()).unwrap();
    let paths = decode_at(&sim.panel, &sim.truth).unwrap();
    let (mut hit, mut total) = (0, 0);
    for (a, b) in paths.iter().zip(&sim.states) {
        hit += a.states.iter().zip(&b.states).filter(|(x, y)| x == y).count();
        total += a.len();
    }
    assert!(hit as f64 / total as f64 >= 0.95, "{hit}/{total}");
}

#[test]
fn panel_and_states_survive_files() {
    let sim = mhmm::simulate::acceptance_subpanel(12).unwrap();
    let mut buf = Vec::new();
    write_panel_csv(&sim.panel, &mut buf).unwrap();
    let panel = read_panel_csv(buf.as_slice(), true).unwrap();
    assert_eq!(panel, sim.panel);

    let mut buf = Vec::new();
    write_states_csv(&sim.states, &panel, &mut buf).unwrap();
    let states = read_states_csv(buf.as_slice()).unwrap();
    let from_file = policy_report(&states, &PolicyConfig::new(3).unwrap()).unwrap();
    let direct = policy_report(&sim.states, &PolicyConfig::new(3).unwrap()).unwrap();
    assert_eq!(from_file, direct);
    assert_eq!(direct.flow.total(), 12);
}

fn homogeneous() -> SimulationConfig {
    let mut c = mhmm::simulate::acceptance_config();
    c.n_borrowers = 80;
    c.truth.beta[1] = c.truth.beta[0].clone();
    c.truth.beta[0][0] = 0.2;
    c.truth.beta[1][0] = 0.2;
    c
}

#[test]
fn baseline_recovers_coefficients_without_states() {
    let sim = simulate_panel(&homogeneous()).unwrap();
    let cfg = McmcConfig { chains: 2, iterations: 2000, burn_in: 1000, ..McmcConfig::default() };
    let samples = fit_me_poisson(&sim.panel, &PriorConfig::default(), &cfg).unwrap();
    let summary = summarize(&samples).unwrap();
    for (j, truth) in sim.truth.beta[0].iter().enumerate() {
        let p = summary.parameter(&format!("beta[1][{j}]")).unwrap();
        let width = p.q95 - p.q05;
        assert!((p.median - truth).abs() < 2.0 * width, "beta[1][{j}]: {} vs {truth}", p.median);
        assert!(summary.diagnostic(&format!("beta[1][{j}]")).unwrap().r_hat < 1.1);
    }
}
