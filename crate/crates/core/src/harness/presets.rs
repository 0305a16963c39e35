//! Desk-scale versions of the published experiments.
//!
//! Dimensions and sample sizes are reduced (d = 1000/500/100 in the original
//! runs) so each preset finishes in well under an hour on a laptop; the
//! reduction is recorded in each spec's `note` and hence in the run metadata.

use super::config::{parse_config_str, ExperimentSpec};
use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &[
    "fig1",
    "fig2",
    "fig4-depth-scan",
    "fig5-lr-sweep",
    "fig6-stability",
    "suppB-mse",
    "suppC-ising",
];

const LIGHT_TUNER: &str = "tuner.kind = cv\ntuner.lo = 1e-3\ntuner.hi = 1\ntuner.coarse_points = 4\n\
                           tuner.refine_rounds = 1\ntuner.folds = 5\ntuner.max_epochs = 150\n";

fn spec(body: &str, note: &str) -> Result<ExperimentSpec> {
    parse_config_str(&format!("{body}{LIGHT_TUNER}note = {note}\n"))
}

fn fig1() -> Result<Vec<ExperimentSpec>> {
    let note = "d reduced from 1000 to 200; N up to 3200; 3 repeats";
    ["k_local", "k_global"]
        .iter()
        .map(|rule| {
            spec(
                &format!(
                    "name = fig1-{rule}\nrule = {rule}\nk = 1\nd = 200\nn_list = 200,400,800,1600,3200\n\
                     archs = perceptron,1x128,5x128,ntk:1\nrepeats = 3\nn_test = 10000\nseed = 1\n"
                ),
                note,
            )
        })
        .collect()
}

fn fig2() -> Result<Vec<ExperimentSpec>> {
    let note = "d reduced from 500/100 to 50/30/40/20; H=128; 3 repeats";
    [("k_local", 2, 50), ("k_local", 3, 30), ("k_global", 2, 40), ("k_global", 3, 20)]
        .iter()
        .map(|(rule, k, d)| {
            spec(
                &format!(
                    "name = fig2-{k}{}\nrule = {rule}\nk = {k}\nd = {d}\nn_list = 500,1000,2000,4000\n\
                     archs = 1x128,5x128,ntk:1,ntk:5\nrepeats = 3\nn_test = 10000\nseed = 2\n",
                    if *rule == "k_local" { "local" } else { "global" }
                ),
                note,
            )
        })
        .collect()
}

fn depth_scan(prefix: &str, loss: &str, note: &str) -> Result<Vec<ExperimentSpec>> {
    [("k_local", 50), ("k_global", 40)]
        .iter()
        .map(|(rule, d)| {
            spec(
                &format!(
                    "name = {prefix}-2{}\nrule = {rule}\nk = 2\nd = {d}\nn_list = 4000\n\
                     archs = 1x128,2x128,3x128,4x128,5x128,6x128\nloss = {loss}\nrepeats = 5\n\
                     n_test = 10000\nseed = 4\n",
                    if *rule == "k_local" { "local" } else { "global" }
                ),
                note,
            )
        })
        .collect()
}

fn fig5() -> Result<Vec<ExperimentSpec>> {
    Ok(vec![parse_config_str(
        "name = fig5-3global\nrule = k_global\nk = 3\nd = 20\nn_list = 2000\narchs = 1x512,5x512,ntk:1,ntk:5\n\
         eta_grid = 1e-4,3e-4,1e-3,3e-3,1e-2,3e-2,1e-1,3e-1,1\nrepeats = 3\nn_test = 10000\nseed = 5\n\
         note = d=20 as in the original; H reduced from 2000 to 512; 3 repeats\n",
    )?])
}

fn fig6() -> Result<Vec<ExperimentSpec>> {
    let note = "d reduced to 50/40; N=2000; 2 repeats; N_test=2000";
    [("k_local", 50), ("k_global", 40)]
        .iter()
        .map(|(rule, d)| {
            spec(
                &format!(
                    "name = fig6-2{}\nrule = {rule}\nk = 2\nd = {d}\nn_list = 2000\n\
                     archs = 1x128,5x128\nmode = stability\nrepeats = 2\nn_test = 2000\nseed = 6\n",
                    if *rule == "k_local" { "local" } else { "global" }
                ),
                note,
            )
        })
        .collect()
}

fn supp_c() -> Result<Vec<ExperimentSpec>> {
    Ok(vec![spec(
        "name = suppC-ising\nrule = ising\nd = 100\nising.beta1 = 0.1\nising.beta2 = 0.3\n\
         n_list = 1000,2000,4000\narchs = 1x128,5x128\nrepeats = 5\nn_test = 10000\nseed = 7\n",
        "d reduced from 500 to 100; H reduced from 500 to 128; depth 5 for the deep net",
    )?])
}

pub fn preset(name: &str) -> Result<Vec<ExperimentSpec>> {
    match name {
        "fig1" => fig1(),
        "fig2" => fig2(),
        "fig4-depth-scan" => depth_scan("fig4", "cross_entropy", "d reduced to 50/40; 5 repeats"),
        "fig5-lr-sweep" => fig5(),
        "fig6-stability" => fig6(),
        "suppB-mse" => depth_scan("suppB", "mean_square", "mean-square loss; d reduced to 50/40; 5 repeats"),
        "suppC-ising" => supp_c(),
        _ => Err(Error::Config(format!(
            "unknown preset {name:?}; available: {}",
            PRESETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Mode;

    #[test]
    fn every_preset_parses() {
        for name in PRESETS {
            let specs = preset(name).unwrap();
            assert!(!specs.is_empty(), "{name}");
            for s in &specs {
                assert!(!s.note.is_empty());
                assert_eq!(parse_config_str(&s.to_config_string()).unwrap(), *s);
            }
        }
        assert_eq!(preset("fig5-lr-sweep").unwrap()[0].mode, Mode::LrSweep);
        assert!(preset("fig3").is_err());
    }
}
