use serde::Serialize;

use ctrl_core::experiments::network_gradchecks;
use ctrl_core::nn::GradCheckConfig;
use ctrl_core::rng;
use ctrl_core::{Mlp, ScoreNet};

use crate::commands::csv_bytes;
use crate::error::{CliError, CliResult};
use crate::manifest::Artifacts;
use crate::{Ctx, Outcome};

pub const GRADCHECK_CSV: &str = "gradcheck.csv";

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn row(check: impl Into<String>, statistic: &str, value: f64, threshold: f64, passed: bool) -> CheckRow {
    CheckRow {
        check: check.into(),
        statistic: statistic.into(),
        value,
        threshold,
        passed,
    }
}

pub fn run(ctx: &Ctx, art: &mut Artifacts) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let g = &cfg.gradcheck;
    let mut rows = Vec::new();

    for c in g.lq.policy_gradient_check(false)? {
        rows.push(row(format!("policy gradient {}", c.name), "z", c.z, 3.0, c.passed()));
    }
    // the harness must notice negated advantages
    let corrupted = g.lq.policy_gradient_check(true)?;
    let worst = corrupted.iter().map(|c| c.z).fold(0.0, f64::max);
    rows.push(row("policy gradient with negated q (must fail)", "max z", worst, 3.0, corrupted.iter().any(|c| !c.passed())));

    let pdl = g.lq.pdl_check()?;
    rows.push(row("performance difference", "z", pdl.z, 3.0, pdl.passed()));

    let gir = g.girsanov.run()?;
    rows.push(row("path KL vs closed form", "relative error", gir.rel_error, 0.02, gir.rel_error <= 0.02));
    let gap = gir.path_kl - gir.terminal_kl;
    rows.push(row("path KL >= terminal KL", "path_kl - terminal_kl", gap, 0.0, gap >= 0.0));

    let task = cfg.task()?;
    let score_path = ctx.pretrained_path();
    let trained = if score_path.exists() {
        ctx.load_model(&score_path)?.1
    } else {
        let spec = cfg.score_spec();
        let params = Mlp::new(spec.clone())?.init_params(&mut rng::stream(cfg.seed, 31));
        ScoreNet::new(spec, params, cfg.schedule.horizon)?
    };
    let gc = GradCheckConfig {
        directions: g.directions,
        step: g.step,
        tolerance: g.tolerance,
        seed: cfg.seed,
        ..GradCheckConfig::default()
    };
    for c in network_gradchecks(&task, &trained, &gc)? {
        let passed = c.passed();
        rows.push(row(c.name, "max relative error", c.max_rel_error, c.tolerance, passed));
    }

    art.write(GRADCHECK_CSV, &csv_bytes(&rows)?)?;
    let mut summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:<52} {} = {:.4e} (threshold {:.1e})", if r.passed { "PASS" } else { "FAIL" }, r.check, r.statistic, r.value, r.threshold))
        .collect();
    summary.push(format!(
        "path KL {:.5} ± {:.5}, closed form {:.5}, terminal KL {:.5}",
        gir.path_kl, gir.path_kl_se, gir.closed_form, gir.terminal_kl
    ));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    if !failed.is_empty() {
        for line in &summary {
            println!("{line}");
        }
        return Err(CliError::Acceptance(format!("{} check(s) failed: {}", failed.len(), failed.join("; "))));
    }
    Ok(Outcome { summary })
}
