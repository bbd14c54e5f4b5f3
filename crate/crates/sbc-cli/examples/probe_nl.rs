// Scratch probe: verbose solver trace for the nonlinear-drift fixture.
use sbc_cli::problem_file::load_problem;
use sbc_core::exp_certificate::{synthesize_exp, validate_lambda};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures/nonlinear_drift.prob".to_string());
    let loaded = load_problem(std::path::Path::new(&path)).unwrap();
    let mut settings = loaded.config.exp_settings.clone();
    settings.max_degree_raises = 0;
    settings.max_lambda_halvings = 0;
    settings.solver.verbose = true;
    let lambda = validate_lambda(loaded.config.lambda.clone()).unwrap();
    match synthesize_exp(&loaded.problem, &lambda, loaded.config.deg_exp, &settings) {
        Ok(cert) => println!(
            "OK alpha = {}, level = {:?}",
            cert.alpha, cert.level
        ),
        Err(e) => println!("ERR {e}"),
    }
}
