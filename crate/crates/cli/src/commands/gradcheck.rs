use std::io::Write;
use std::time::Instant;

use ralstm::model::check::{check_model, CheckDims};
use ralstm::model::CellVariant;
use serde_json::json;

use crate::args::GradcheckArgs;
use crate::error::{CliError, CliResult};
use crate::rundir::{RunDir, RunManifest};

pub fn gradcheck(args: &GradcheckArgs, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    let dims = CheckDims {
        hidden: args.hidden,
        pairs: args.pairs,
        steps: args.steps,
        vocab: args.vocab_size,
        seed: args.seed,
        scale: args.scale,
        epsilon: args.epsilon,
    };
    let problems = dims.validate();
    if !problems.is_empty() {
        return Err(CliError::usage(problems.join("; ")));
    }
    let variants: Vec<CellVariant> = match args.variant {
        Some(v) => vec![v],
        None => CellVariant::ALL.to_vec(),
    };
    let dir = args.out.as_deref().map(RunDir::acquire).transpose()?;
    let w = |e: std::io::Error| CliError::data(format!("stdout: {e}"));
    let mut failed = Vec::new();
    let mut results = Vec::new();
    for v in variants {
        let start = Instant::now();
        let report = check_model(&dims, v, args.corrupt_gradient)?;
        let ok = report.passes(args.tolerance);
        writeln!(
            stdout,
            "{} {:<5} max_rel_err={:.3e} worst={} scalars={} ({:.2}s)",
            if ok { "PASS" } else { "FAIL" },
            v.short_name(),
            report.max_relative_error,
            report.worst.as_deref().unwrap_or("-"),
            report.scalars_checked,
            start.elapsed().as_secs_f64()
        )
        .map_err(w)?;
        if !ok {
            failed.push(v.short_name());
        }
        results.push(json!({
            "variant": v,
            "pass": ok,
            "max_relative_error": report.max_relative_error,
            "worst": report.worst,
        }));
    }
    if let Some(dir) = &dir {
        let config = json!({
            "dims": dims,
            "tolerance": args.tolerance,
            "corrupt_gradient": args.corrupt_gradient,
        });
        dir.write("gradcheck.json", serde_json::to_string_pretty(&results).expect("json"))?;
        let mut manifest = RunManifest::new("gradcheck", argv, config);
        manifest.seed = Some(args.seed);
        manifest.save(dir)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            args.tolerance
        )))
    }
}
