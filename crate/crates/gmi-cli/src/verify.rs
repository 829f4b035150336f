//! Numeric self-checks: exact mutual-information sweeps over sampled joint
//! tables, plus finite-difference gradient checks of the full training loss
//! on a small built-in graph. Everything is seeded so a failure can be
//! replayed exactly.

use anyhow::anyhow;
use gmi_core::diffmath::{grad_check, DiffError, Matrix, Tape};
use gmi_core::encoder::{EncoderParams, Layer};
use gmi_core::mioracle::{
    check_decomposition, check_monotonicity, make_multiplicative, multiplicative_residual,
    JointTable,
};
use gmi_core::objective::{
    build_loss, draw_step_samples, expected_discriminators, Discriminator, GmiConfig,
    LossInputs, WeightMode,
};
use gmi_core::seeding::stream_rng;
use gmi_core::synth::toy_graph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::failure::{CliResult, Failure};

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const RESIDUAL_TOL: f64 = 1e-8;

struct Property {
    name: String,
    pass: bool,
    detail: String,
}

fn random_table(rng: &mut ChaCha8Rng, dims: &[usize]) -> JointTable {
    let cells: usize = dims.iter().product();
    let mut probs: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    JointTable::new(dims.to_vec(), probs).expect("sampled table is valid by construction")
}

fn sweep_monotonicity(tables: usize, seed: u64) -> Property {
    let menu: [&[usize]; 5] = [&[2, 2, 2], &[3, 2, 2], &[2, 3, 2], &[2, 2, 3], &[4, 2, 2]];
    let mut rng = stream_rng(seed, "verify-monotonicity");
    for index in 0..tables {
        let table = random_table(&mut rng, menu[index % menu.len()]);
        match check_monotonicity(&table, &[0], &[1], &[2]) {
            Ok(true) => {}
            Ok(false) => {
                return Property {
                    name: "mi-monotonicity".into(),
                    pass: false,
                    detail: format!("violated at table {index}"),
                }
            }
            Err(e) => {
                return Property {
                    name: "mi-monotonicity".into(),
                    pass: false,
                    detail: format!("table {index}: {e}"),
                }
            }
        }
    }
    Property {
        name: "mi-monotonicity".into(),
        pass: true,
        detail: format!("{tables} random tables, no violation"),
    }
}

fn sweep_sandwich(tables: usize, seed: u64) -> Property {
    let menu: [&[usize]; 5] =
        [&[3, 2, 3], &[4, 2, 2], &[4, 3, 2], &[5, 2, 2, 2], &[6, 3, 3, 2]];
    let mut rng = stream_rng(seed, "verify-sandwich");
    for index in 0..tables {
        let result = make_multiplicative(&mut rng, menu[index % menu.len()])
            .and_then(|t| check_decomposition(&t));
        match result {
            Ok(check) if check.holds() => {}
            Ok(check) => {
                return Property {
                    name: "mi-sandwich".into(),
                    pass: false,
                    detail: format!(
                        "table {index}: lower {:.6e} value {:.6e} upper {:.6e} weight {:?}",
                        check.lower, check.value, check.upper, check.weight
                    ),
                }
            }
            Err(e) => {
                return Property {
                    name: "mi-sandwich".into(),
                    pass: false,
                    detail: format!("table {index}: {e}"),
                }
            }
        }
    }
    Property {
        name: "mi-sandwich".into(),
        pass: true,
        detail: format!("{tables} multiplicative tables inside both bounds"),
    }
}

fn sweep_factorization(tables: usize, seed: u64) -> Property {
    let menu: [&[usize]; 4] = [&[3, 2, 3], &[4, 2, 2], &[5, 2, 2, 2], &[6, 3, 3]];
    let mut rng = stream_rng(seed, "verify-factorization");
    let mut worst = 0.0f64;
    for index in 0..tables {
        let residual = make_multiplicative(&mut rng, menu[index % menu.len()])
            .and_then(|t| multiplicative_residual(&t));
        match residual {
            Ok(r) if r < RESIDUAL_TOL => worst = worst.max(r),
            Ok(r) => {
                return Property {
                    name: "mi-factorization".into(),
                    pass: false,
                    detail: format!("table {index}: residual {r:.3e} >= {RESIDUAL_TOL:.0e}"),
                }
            }
            Err(e) => {
                return Property {
                    name: "mi-factorization".into(),
                    pass: false,
                    detail: format!("table {index}: {e}"),
                }
            }
        }
    }
    Property {
        name: "mi-factorization".into(),
        pass: true,
        detail: format!("{tables} tables, worst residual {worst:.3e}"),
    }
}

struct GradCase {
    label: &'static str,
    depth: usize,
    residual: bool,
    dense_gmi: bool,
    weight_mode: WeightMode,
}

/// Checks every analytic gradient of the full loss against central finite
/// differences on the built-in toy graph. `inject_bug` deliberately corrupts
/// one gradient entry first, to prove the check can catch a wrong backward
/// pass.
fn grad_case(case: &GradCase, seed: u64, inject_bug: bool) -> Property {
    let name = format!("grad-check[{}]", case.label);
    let fail = |detail: String| Property { name: name.clone(), pass: false, detail };

    let graph = toy_graph();
    let inputs = LossInputs::new(&graph);
    let config = GmiConfig {
        weight_mode: case.weight_mode,
        negatives: 2,
        ..GmiConfig::default()
    };
    let hidden = 5;
    let mut rng = stream_rng(seed, "verify-grad");
    let params = match EncoderParams::init(
        graph.n_features(),
        hidden,
        case.depth,
        case.residual,
        case.dense_gmi,
        &mut rng,
    ) {
        Ok(p) => p,
        Err(e) => return fail(format!("encoder init: {e}")),
    };
    let d_x = if config.compressed_input { hidden } else { graph.n_features() };
    let n_discs = expected_discriminators(&params, &config);
    let discs: Vec<Discriminator> =
        (0..n_discs).map(|_| Discriminator::init(hidden, d_x, &mut rng)).collect();
    let samples = match draw_step_samples(&inputs, &config, &mut rng) {
        Ok(s) => s,
        Err(e) => return fail(format!("sampling: {e}")),
    };

    let mut tape = Tape::new();
    let handles = match build_loss(&mut tape, &inputs, &params, &discs, &config, &samples) {
        Ok(h) => h,
        Err(e) => return fail(format!("building loss: {e}")),
    };
    let mut flat: Vec<Matrix> = Vec::new();
    for layer in params.layers() {
        flat.push(layer.weight.clone());
        flat.push(layer.prelu_slope.clone());
    }
    for disc in &discs {
        flat.push(disc.theta.clone());
    }
    let var_ids: Vec<_> = handles
        .encoder
        .layers
        .iter()
        .flat_map(|&(w, s)| [w, s])
        .chain(handles.discs.iter().copied())
        .collect();
    let mut grads = match tape.backward(handles.loss) {
        Ok(g) => g,
        Err(e) => return fail(format!("backward: {e}")),
    };
    let mut analytic: Vec<Matrix> = var_ids
        .iter()
        .zip(&flat)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    if inject_bug {
        let v = analytic[0].data()[0];
        analytic[0].data_mut()[0] = v + 0.05 * (1.0 + v.abs());
    }

    let depth = case.depth;
    let (residual, dense_gmi) = (case.residual, case.dense_gmi);
    let f = |ps: &[Matrix]| -> Result<f64, DiffError> {
        let layers: Vec<Layer> = (0..depth)
            .map(|l| Layer { weight: ps[2 * l].clone(), prelu_slope: ps[2 * l + 1].clone() })
            .collect();
        let params = EncoderParams::new(layers, residual, dense_gmi)
            .map_err(|_| DiffError::NonFinite { op: "rebuild encoder" })?;
        let discs: Vec<Discriminator> =
            ps[2 * depth..].iter().map(|t| Discriminator { theta: t.clone() }).collect();
        let mut tape = Tape::new();
        let handles = build_loss(&mut tape, &inputs, &params, &discs, &config, &samples)
            .map_err(|_| DiffError::NonFinite { op: "rebuild loss" })?;
        tape.value(handles.loss).item()
    };
    match grad_check(f, &flat, &analytic, GRAD_EPS) {
        Ok(report) if report.max_rel_err < GRAD_TOL => Property {
            name,
            pass: true,
            detail: format!(
                "max rel err {:.3e} over {} coordinates",
                report.max_rel_err, report.coords_checked
            ),
        },
        Ok(report) => fail(format!(
            "max rel err {:.3e} exceeds {GRAD_TOL:.0e}{}",
            report.max_rel_err,
            report
                .worst
                .map(|w| format!(
                    " (param {} index {}: analytic {:.6e}, numeric {:.6e})",
                    w.param, w.index, w.analytic, w.numeric
                ))
                .unwrap_or_default()
        )),
        Err(e) => fail(format!("finite differences: {e}")),
    }
}

pub fn verify(tables: usize, seed: u64, inject_grad_bug: bool) -> CliResult<()> {
    let mut results: Vec<Property> = Vec::new();
    if tables == 0 {
        eprintln!("warning: --tables 0 skips the mutual-information oracle sweeps");
        for name in ["mi-monotonicity", "mi-sandwich", "mi-factorization"] {
            println!("SKIP {name}: tables = 0");
        }
    } else {
        results.push(sweep_monotonicity(tables, seed));
        results.push(sweep_sandwich(tables, seed));
        results.push(sweep_factorization(tables, seed));
    }
    let cases = [
        GradCase {
            label: "mean",
            depth: 2,
            residual: false,
            dense_gmi: false,
            weight_mode: WeightMode::Mean,
        },
        GradCase {
            label: "adaptive-dense",
            depth: 3,
            residual: true,
            dense_gmi: true,
            weight_mode: WeightMode::Adaptive,
        },
    ];
    for case in &cases {
        results.push(grad_case(case, seed, inject_grad_bug));
    }

    let mut first_failure: Option<&Property> = None;
    for p in &results {
        println!("{} {}: {}", if p.pass { "PASS" } else { "FAIL" }, p.name, p.detail);
        if !p.pass && first_failure.is_none() {
            first_failure = Some(p);
        }
    }
    match first_failure {
        None => {
            println!("all properties hold");
            Ok(())
        }
        Some(p) => Err(Failure::property(anyhow!(
            "property {} failed: {}; reproduce with `gmi verify --seed {seed} --tables {tables}`",
            p.name,
            p.detail
        ))),
    }
}
