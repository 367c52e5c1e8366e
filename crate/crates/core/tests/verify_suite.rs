use pdegnn_core::oracle::verify::{run_suite, Fault, VerifyOptions};

#[test]
fn quick_suite_passes() {
    let report = run_suite(&VerifyOptions::quick());
    println!("{report}");
    assert!(report.passed(), "{report}");
}

#[test]
fn negated_advection_step_is_caught() {
    let opts = VerifyOptions {
        fault: Some(Fault::NegateAdvectionStep),
        ..VerifyOptions::quick()
    };
    let report = run_suite(&opts);
    println!("{report}");
    let status = |name: &str| report.outcomes.iter().find(|o| o.name == name).unwrap().passed;
    assert!(status("conservation/advection"));
    assert!(!status("oracle/advection"));
    assert!(!status("reduction/mix_ad(alpha=1)=advection"));
    assert!(!report.passed());
}
