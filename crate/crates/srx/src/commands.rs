//! The four subcommands. Each writes its files into the run's output
//! directory and returns the exit status together with a one-line summary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use srx_core::certifier::{EPSILON_REL_TOL, STRICT_FACTOR};
use srx_core::{
    compute_eta, decompose_b0_grid, endpoint_separation, estimate_constants, lemma_slacks,
    natural_homotopy, nsre_check as run_nsre, psi, tangent_flow, variation_direct,
    variation_fields, variation_integral, xi, zeta, BoundParameters, Certificate, Domain, Frame,
    NsreReport, Trajectory, Verdict, Verifier,
};

use crate::error::{CliError, ExitStatus};
use crate::output::{columns, nums, prepare_dir, write_csv, write_json, Meta};
use crate::scenario::Scenario;

pub const DEFAULT_OUTPUT_DIR: &str = "srx-out";

/// A scenario with command line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    /// Worker cap for the verification trials; all cores when `None`.
    pub threads: Option<usize>,
}

impl Run {
    pub fn new(
        mut scenario: Scenario,
        out: Option<PathBuf>,
        seed: Option<u64>,
        threads: Option<usize>,
    ) -> Self {
        if let Some(seed) = seed {
            scenario.seed = seed;
        }
        let out_dir = out
            .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        Self {
            scenario,
            out_dir,
            threads,
        }
    }

    fn meta(&self, command: &'static str) -> Meta {
        Meta {
            command,
            scenario_hash: self.scenario.hash(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub status: ExitStatus,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Setup {
    frame: Frame,
    domain: Domain,
    traj: Trajectory,
}

fn setup(run: &Run) -> Result<Setup, CliError> {
    let frame = run.scenario.frame()?;
    let domain = run.scenario.domain()?;
    let traj = run.scenario.base(&frame, &domain)?.trajectory;
    prepare_dir(&run.out_dir)?;
    Ok(Setup {
        frame,
        domain,
        traj,
    })
}

fn exit_note(traj: &Trajectory) -> Option<String> {
    traj.exit_time
        .map(|t| format!("trajectory leaves the domain at t = {t}"))
}

/// `trajectory.csv` and `tangent_flow.csv`; fails when the base trajectory
/// leaves the domain.
pub fn integrate(run: &Run) -> Result<Report, CliError> {
    let Setup { frame, traj, .. } = setup(run)?;
    let meta = run.meta("integrate");
    let n = frame.n();

    let traj_path = run.path("trajectory.csv");
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(columns("q", n))
        .collect();
    let rows = traj
        .grid
        .iter()
        .zip(&traj.states)
        .map(|(t, q)| nums(std::iter::once(*t).chain(q.iter().copied())));
    write_csv(&traj_path, &meta, &header, rows)?;

    let tf = tangent_flow(
        &frame,
        &traj.control,
        &traj,
        0.0,
        run.scenario.integrator.substeps,
    )?;
    let flow_path = run.path("tangent_flow.csv");
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).flat_map(|i| (1..=n).map(move |j| format!("m{i}{j}"))))
        .collect();
    let rows = tf.grid.iter().zip(&tf.matrices).map(|(t, m)| {
        let mut row = vec![*t];
        for i in 0..n {
            row.extend((0..n).map(|j| m[(i, j)]));
        }
        nums(row)
    });
    write_csv(&flow_path, &meta, &header, rows)?;

    let end: Vec<String> = traj.endpoint().iter().map(|x| format!("{x:.6}")).collect();
    let (status, summary) = match exit_note(&traj) {
        Some(note) => (ExitStatus::Failed, note),
        None => (ExitStatus::Ok, format!("endpoint ({})", end.join(", "))),
    };
    Ok(Report {
        status,
        summary,
        files: vec![traj_path, flow_path],
    })
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Certified => "certified",
        Verdict::Failed => "failed",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn nsre_json(report: &NsreReport) -> Map<String, Value> {
    let json = json!({
        "grid": report.grid,
        "angles": report.angles,
        "ranks": report.ranks,
        "c": report.c,
        "regularity_ok": report.regularity_ok,
        "b2_ok": report.b2_ok,
        "verdict": verdict_label(report.verdict()),
        "min_speed": report.min_speed,
        "min_sin": report.min_sin,
        "max_velocity_derivative": report.max_velocity_derivative,
        "acb_bound": report.acb_bound,
        "theta_min": report.theta_min,
        "tau_range": report.tau_range.label(),
    });
    match json {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn verdict_status(v: Verdict) -> ExitStatus {
    match v {
        Verdict::Certified => ExitStatus::Ok,
        Verdict::Failed => ExitStatus::Failed,
        Verdict::Inconclusive => ExitStatus::Inconclusive,
    }
}

/// `nsre_report.json`; exit 0, 3 or 4 for certified, failed, inconclusive.
pub fn nsre_check(run: &Run) -> Result<Report, CliError> {
    let Setup { frame, traj, .. } = setup(run)?;
    let report = run_nsre(&frame, &traj, &run.scenario.settings()?)?;
    let path = run.path("nsre_report.json");
    write_json(&path, &run.meta("nsre-check"), nsre_json(&report))?;
    let verdict = report.verdict();
    Ok(Report {
        status: verdict_status(verdict),
        summary: format!("{} (c = {})", verdict_label(verdict), report.c),
        files: vec![path],
    })
}

/// `homotopy.csv`, `endpoint_curve.csv` and `lemma_slacks.json`.
///
/// Exit 3 when a member leaves the domain or an applicable estimate is
/// violated.
pub fn homotopy(run: &Run) -> Result<Report, CliError> {
    let Setup {
        frame,
        domain,
        traj,
    } = setup(run)?;
    let sc = &run.scenario;
    let settings = sc.settings()?;
    let du = sc.delta_u(&traj.control)?;
    let substeps = sc.integrator.substeps;
    let h = natural_homotopy(
        &frame,
        &traj.control,
        &du,
        traj.q0.as_slice(),
        sc.homotopy.n_s,
        Some(&domain),
        substeps,
    )?;
    let fields = variation_fields(&frame, &h)?;
    let meta = run.meta("homotopy");
    let n = frame.n();

    let path_h = run.path("homotopy.csv");
    let header: Vec<String> = ["s".to_string(), "t".to_string()]
        .into_iter()
        .chain(columns("q", n))
        .chain(columns("b", n))
        .collect();
    let rows = h.members.iter().zip(&fields).flat_map(|(member, field)| {
        member.grid.iter().enumerate().map(move |(j, t)| {
            let mut row = vec![field.s, *t];
            row.extend(member.states[j].iter().copied());
            row.extend(field.vectors[j].iter().copied());
            nums(row)
        })
    });
    write_csv(&path_h, &meta, &header, rows)?;

    let curve = endpoint_separation(&h);
    let path_c = run.path("endpoint_curve.csv");
    let header: Vec<String> = std::iter::once("s".to_string())
        .chain(columns("q", n))
        .collect();
    let rows = curve
        .s_grid
        .iter()
        .zip(&curve.points)
        .map(|(s, q)| nums(std::iter::once(*s).chain(q.iter().copied())));
    write_csv(&path_c, &meta, &header, rows)?;

    let nsre = run_nsre(&frame, &traj, &settings)?;
    let consts = estimate_constants(
        &frame,
        &domain,
        sc.certify.grid_resolution,
        sc.certify.margin,
    )?;
    let horizon = traj.control.horizon();
    let (k, dim) = (frame.k(), frame.n());
    let params = BoundParameters {
        c: nsre.c,
        zeta: zeta(horizon, &consts, k)?,
        psi: psi(horizon, &consts, k, dim)?,
        xi: xi(horizon, &consts, k, dim)?,
    };
    let slacks = lemma_slacks(&h, &fields, &params)?;
    let variation_ok = slacks.delta_q >= -srx_core::homotopy::BOUND_TOL
        && slacks.b_s >= -srx_core::homotopy::BOUND_TOL
        && slacks.delta_b >= -srx_core::homotopy::BOUND_TOL;
    let b0_ok = nsre.verdict() != Verdict::Certified
        || slacks.b0_estimate >= -srx_core::homotopy::BOUND_TOL;
    let l31 = slacks.lemma31;
    let l31_ok = !l31.applicable || (l31.holds && l31.bound2);

    let tf = tangent_flow(&frame, &traj.control, &traj, 0.0, substeps)?;
    let route_error = variation_integral(&frame, &du, &traj, &tf)?
        .relative_error(&variation_direct(&frame, &h, 0.0)?)?;
    let decomposition = if traj.control.is_normalized() {
        let parts = decompose_b0_grid(&frame, &traj, &tf, &du, &settings)?;
        let max_residual = parts
            .iter()
            .map(|d| d.relative_residual)
            .fold(0.0, f64::max);
        json!({
            "hypothesis": if parts.iter().all(|d| d.hypothesis_verified) { "verified" } else { "unverified_hypothesis" },
            "all_in_span": parts.iter().all(|d| d.residual_in_span),
            "max_relative_residual": max_residual,
            "span_tol": settings.span_tol,
            "final_coefficient": parts.last().map(|d| d.coefficient),
        })
    } else {
        json!({ "skipped": "base control is not unit speed" })
    };

    let in_domain = slacks.in_domain;
    let ok = in_domain && variation_ok && b0_ok && l31_ok;
    let mut judged = vec![slacks.delta_q, slacks.b_s, slacks.delta_b];
    if nsre.verdict() == Verdict::Certified {
        judged.push(slacks.b0_estimate);
    }
    if l31.applicable {
        judged.push(l31.slack);
    }
    let min_judged = judged.into_iter().fold(f64::INFINITY, f64::min);
    let body = json!({
        "separation": curve.separation,
        "norm_du": du.l2_norm(),
        "in_domain": in_domain,
        "n_s": sc.homotopy.n_s,
        "parameters": {
            "c": params.c, "zeta": params.zeta, "psi": params.psi, "xi": params.xi,
            "horizon": horizon, "margin": consts.margin, "grid": consts.grid_resolution,
        },
        "slacks": {
            "delta_q": slacks.delta_q,
            "b_s": slacks.b_s,
            "delta_b": slacks.delta_b,
            "b0_estimate": slacks.b0_estimate,
            "energy_estimate": l31.slack,
        },
        "energy_estimate": {
            "lhs": l31.lhs, "rhs": l31.rhs, "holds": l31.holds,
            "norm_bound": l31.bound2, "applicable": l31.applicable,
        },
        "nsre_verdict": verdict_label(nsre.verdict()),
        "route_relative_error": route_error,
        "decomposition": decomposition,
        "min_judged_slack": min_judged,
        "holds": ok,
    });
    let path_j = run.path("lemma_slacks.json");
    write_json(&path_j, &meta, into_map(body))?;

    let summary = if !in_domain {
        "a homotopy member leaves the domain".to_string()
    } else {
        format!(
            "separation {}, smallest judged slack {min_judged:e}",
            curve.separation
        )
    };
    Ok(Report {
        status: if ok {
            ExitStatus::Ok
        } else {
            ExitStatus::Failed
        },
        summary,
        files: vec![path_h, path_c, path_j],
    })
}

fn into_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("object literal"),
    }
}

fn refusal(
    path: &Path,
    meta: &Meta,
    status: &str,
    reason: &str,
    nsre: Option<&NsreReport>,
) -> Result<(), CliError> {
    let mut body = Map::new();
    body.insert("status".into(), json!(status));
    body.insert("reason".into(), json!(reason));
    if let Some(r) = nsre {
        body.insert("c".into(), json!(r.c));
        body.insert("regularity_ok".into(), json!(r.regularity_ok));
        body.insert("b2_ok".into(), json!(r.b2_ok));
    }
    write_json(path, meta, body)
}

/// `certificate.json` and `verification.csv`.
///
/// Exit 3 (`not_certifiable`) when the extremal test fails or the base
/// trajectory leaves the domain, 4 when the test is inconclusive, and 3 when
/// any verification trial violates the separation bound.
pub fn certify(run: &Run) -> Result<Report, CliError> {
    let Setup {
        frame,
        domain,
        traj,
    } = setup(run)?;
    let sc = &run.scenario;
    let meta = run.meta("certify");
    let cert_path = run.path("certificate.json");

    if let Some(note) = exit_note(&traj) {
        refusal(&cert_path, &meta, "not_certifiable", &note, None)?;
        return Ok(Report {
            status: ExitStatus::Failed,
            summary: format!("not_certifiable: {note}"),
            files: vec![cert_path],
        });
    }
    let nsre = run_nsre(&frame, &traj, &sc.settings()?)?;
    match nsre.verdict() {
        Verdict::Certified if nsre.c > 0.0 => {}
        Verdict::Inconclusive => {
            let reason = "velocity angle to the span is below theta_min";
            refusal(&cert_path, &meta, "inconclusive", reason, Some(&nsre))?;
            return Ok(Report {
                status: ExitStatus::Inconclusive,
                summary: format!("inconclusive: {reason}"),
                files: vec![cert_path],
            });
        }
        _ => {
            let reason = if nsre.regularity_ok {
                "angle constant c is zero"
            } else {
                "velocity regularity proxy exceeds acb_bound"
            };
            refusal(&cert_path, &meta, "not_certifiable", reason, Some(&nsre))?;
            return Ok(Report {
                status: ExitStatus::Failed,
                summary: format!("not_certifiable: {reason}"),
                files: vec![cert_path],
            });
        }
    }

    let cs = &sc.certify;
    let consts = estimate_constants(&frame, &domain, cs.grid_resolution, cs.margin)?;
    let computed_eta = compute_eta(&traj, &domain, &consts, frame.k())?;
    let eta = match cs.eta {
        Some(e) if e > computed_eta => {
            return Err(CliError::input(format!(
                "certify.eta = {e} exceeds the tube radius {computed_eta} available in the domain"
            )))
        }
        Some(e) => e,
        None => computed_eta,
    };
    let t_max = cs.t_max.unwrap_or(traj.control.horizon());
    let cert = Certificate::new(consts, nsre.c, eta, frame.k(), frame.n(), t_max)?;

    let verifier = Verifier::new(
        &frame,
        &traj,
        &domain,
        &cert,
        cs.t_prime,
        sc.seed,
        sc.homotopy.n_s,
        sc.integrator.substeps,
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::input(format!("cannot start worker threads: {e}")))?;
    let trials = pool.install(|| {
        (0..cs.n_trials)
            .into_par_iter()
            .map(|i| verifier.trial(i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = verifier.report(trials);

    let ver_path = run.path("verification.csv");
    let header: Vec<String> = ["trial", "norm_du", "separation", "bound", "slack"]
        .map(String::from)
        .to_vec();
    let rows = report.trials.iter().map(|t| {
        let mut row = vec![t.trial.to_string()];
        row.extend(nums([t.norm_du, t.separation, t.bound, t.slack]));
        row
    });
    write_csv(&ver_path, &meta, &header, rows)?;

    let violations = report.violations();
    let sound = cert.conditions.domain && cert.conditions.angle;
    let status = if !sound {
        "not_certifiable"
    } else if violations.is_empty() {
        "certified"
    } else {
        "violations"
    };
    let body = json!({
        "C0": consts.c0,
        "C1": consts.c1,
        "C2": consts.c2,
        "C3": consts.c3,
        "margin": consts.margin,
        "c": cert.c,
        "eta": cert.eta,
        "epsilon": cert.epsilon,
        "delta": cert.delta,
        "conditions": {
            "domain": cert.conditions.domain,
            "angle": cert.conditions.angle,
            "domain_slack": cert.conditions.domain_slack,
            "angle_slack": cert.conditions.angle_slack,
        },
        "comparison_at_epsilon": {
            "zeta": cert.zeta_eps, "psi": cert.psi_eps, "xi": cert.xi_eps,
        },
        "provenance": {
            "grid": consts.grid_resolution,
            "seed": sc.seed,
            "raw_constants": consts.raw(),
            "eta_available": computed_eta,
            "t_max": t_max,
            "search": {"rel_tol": EPSILON_REL_TOL, "strict_factor": STRICT_FACTOR},
        },
        "verification": {
            "t_prime": report.t_prime,
            "cells": report.cells,
            "coefficient": report.coefficient,
            "trials": report.trials.len(),
            "violations": violations,
            "rejections": report.rejections(),
            "min_slack": if report.trials.is_empty() { None } else { Some(report.min_slack()) },
        },
        "status": status,
    });
    write_json(&cert_path, &meta, into_map(body))?;

    let exit = if status == "certified" {
        ExitStatus::Ok
    } else {
        ExitStatus::Failed
    };
    Ok(Report {
        status: exit,
        summary: format!(
            "{status}: epsilon = {}, {} trials, {} violations",
            cert.epsilon,
            report.trials.len(),
            violations.len()
        ),
        files: vec![cert_path, ver_path],
    })
}
