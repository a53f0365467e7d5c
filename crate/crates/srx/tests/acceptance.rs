//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Oracles are computed here from closed forms, finite differences or
//! direct re-integration, never read back from the quantity under test.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use srx::scenario::DomainSpec;
use srx::Scenario;
use srx_core::certifier::DEFAULT_MARGIN;
use srx_core::homotopy::BOUND_TOL;
use srx_core::*;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario")
}

struct Case {
    frame: Frame,
    domain: Domain,
    traj: Trajectory,
}

fn case(s: &Scenario) -> Case {
    let frame = s.frame().unwrap();
    let domain = s.domain().unwrap();
    let traj = s.base(&frame, &domain).unwrap().trajectory;
    Case {
        frame,
        domain,
        traj,
    }
}

/// The Heisenberg straight line shifted to start at (-0.5, 0, 0), so that it
/// stays inside the unit box.
fn unit_box_line() -> Case {
    let mut s = load("heisenberg_line");
    s.q0 = vec![-0.5, 0.0, 0.0];
    s.domain = DomainSpec {
        lower: vec![-1.0; 3],
        upper: vec![1.0; 3],
    };
    case(&s)
}

/// `int_0^t <u, du>` at every node, from the raw cell values.
fn cumulative_inner(u: &ControlSignal, du: &ControlSignal) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = vec![0.0];
    for (a, b) in u.cells().zip(du.cells()) {
        acc += u.dt() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        out.push(acc);
    }
    out
}

fn sq_norm(du: &ControlSignal) -> f64 {
    du.as_flat().iter().map(|x| x * x).sum::<f64>() * du.dt()
}

/// Closed-form Heisenberg extremal from the origin with `p0 = (1, 0, lambda)`.
fn arc_point(lambda: f64, t: f64) -> [f64; 3] {
    if lambda == 0.0 {
        return [t, 0.0, 0.0];
    }
    let (s, c) = (lambda * t).sin_cos();
    [
        s / lambda,
        (1.0 - c) / lambda,
        (lambda * t - s) / (2.0 * lambda * lambda),
    ]
}

fn route_equivalence() -> Outcome {
    let (mut worst_integral, mut worst_fd) = (0.0f64, 0.0f64);
    for (tag, name) in [(0u64, "euclidean_line"), (1, "heisenberg_line")] {
        let Case { frame, traj, .. } = case(&load(name));
        let u = &traj.control;
        if (u.dt() - 1e-3).abs() > 1e-15 {
            return Err(format!("{name}: dt = {}", u.dt()));
        }
        let tf = tangent_flow(&frame, u, &traj, 0.0, 1).map_err(|e| e.to_string())?;
        for trial in 0..20 {
            let du = smooth_perturbation(
                u.horizon(),
                u.n_cells(),
                frame.k(),
                3,
                0.3,
                &mut trial_rng(1000 * tag, trial),
            )
            .unwrap();
            let h = natural_homotopy(&frame, u, &du, traj.q0.as_slice(), 1, None, 1).unwrap();
            let direct = variation_direct(&frame, &h, 0.0).unwrap();
            let integral = variation_integral(&frame, &du, &traj, &tf).unwrap();
            let step = 1e-4;
            let member = |s: f64| {
                integrate_trajectory(
                    &frame,
                    &u.add_scaled(s, &du).unwrap(),
                    traj.q0.as_slice(),
                    None,
                    1,
                )
                .unwrap()
            };
            let (plus, minus) = (member(step), member(-step));
            let fd = VariationField {
                s: 0.0,
                grid: traj.grid.clone(),
                vectors: plus
                    .states
                    .iter()
                    .zip(&minus.states)
                    .map(|(a, b)| (a - b) / (2.0 * step))
                    .collect(),
            };
            worst_integral = worst_integral.max(integral.relative_error(&direct).unwrap());
            worst_fd = worst_fd.max(fd.relative_error(&direct).unwrap());
        }
    }
    check(
        worst_integral < 1e-5 && worst_fd < 1e-5,
        format!("max rel. error integral {worst_integral:.2e}, finite differences {worst_fd:.2e} (40 perturbations)"),
    )
}

fn decomposition() -> Outcome {
    let settings = Settings::default();
    let frame = Frame::heisenberg();
    let (mut worst, mut worst_oracle, mut nodes) = (0.0f64, 0.0f64, 0usize);
    for lambda in [0.0, 0.5, 1.0] {
        let ex = hamiltonian_extremal(&frame, &[0.0; 3], &[1.0, 0.0, lambda], 1.0, 1000, 1, None)
            .unwrap();
        let traj = &ex.trajectory;
        let tf = tangent_flow(&frame, &traj.control, traj, 0.0, 1).unwrap();
        for trial in 0..3 {
            let du = admissible_perturbation(&traj.control, &mut trial_rng(40, trial))
                .unwrap()
                .delta_u;
            let parts = decompose_b0_grid(&frame, traj, &tf, &du, &settings).unwrap();
            for (j, d) in parts.iter().enumerate() {
                if !d.hypothesis_verified || !d.residual_in_span {
                    return Err(format!(
                        "lambda {lambda}, t = {}: residual {:e}",
                        d.t, d.relative_residual
                    ));
                }
                worst = worst.max(d.relative_residual);
                // the span is the annihilator of the costate p(t)
                let b0 = d.b0.norm();
                if b0 > 0.0 {
                    let p = &ex.costates[j];
                    worst_oracle = worst_oracle.max(p.dot(&d.residual).abs() / (p.norm() * b0));
                }
                nodes += 1;
            }
        }
    }
    check(
        worst < 1e-6 && worst_oracle < 1e-6,
        format!(
            "{nodes} nodes, max relative residual {worst:.2e}, costate oracle {worst_oracle:.2e}"
        ),
    )
}

fn basic_estimate() -> Outcome {
    let Case { traj, .. } = case(&load("heisenberg_arc"));
    let u = &traj.control;
    let mut min_slack = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for trial in 0..1000 {
        let du = admissible_perturbation(u, &mut trial_rng(2024, trial))
            .unwrap()
            .delta_u;
        let lhs = -cumulative_inner(u, &du).last().unwrap();
        let norm2 = sq_norm(&du);
        min_slack = min_slack.min(lhs - 0.5 * norm2);
        max_ratio = max_ratio.max(norm2.sqrt() / (2.0 * u.horizon().sqrt()));
    }
    check(
        min_slack >= -1e-12 && max_ratio <= 1.0,
        format!("1000 draws, min slack {min_slack:.3e}, max |du| / 2 sqrt(T) = {max_ratio:.3}"),
    )
}

fn b0_estimate() -> Outcome {
    let Case { frame, traj, .. } = case(&load("heisenberg_line"));
    let report = nsre_check(&frame, &traj, &Settings::default()).unwrap();
    let c = report.c;
    if (c - 1.0).abs() > 1e-6 {
        return Err(format!("c = {c}, closed form 1"));
    }
    let mut min_slack = f64::INFINITY;
    for trial in 0..200 {
        let du = admissible_perturbation(&traj.control, &mut trial_rng(31, trial))
            .unwrap()
            .delta_u;
        let h =
            natural_homotopy(&frame, &traj.control, &du, traj.q0.as_slice(), 1, None, 1).unwrap();
        let b0 = variation_direct(&frame, &h, 0.0).unwrap();
        for (b, phi) in b0.vectors.iter().zip(cumulative_inner(&traj.control, &du)) {
            min_slack = min_slack.min(b.norm() - c * phi.abs());
        }
    }
    check(
        min_slack >= -1e-12,
        format!("c = {c:.9}, 200 draws, min |b0(t)| - c |int phi| = {min_slack:.2e}"),
    )
}

fn variation_bounds() -> Outcome {
    let mut details = Vec::new();
    for (name, case, seed) in [
        ("unit-box line", unit_box_line(), 500u64),
        ("arc", case(&load("heisenberg_arc")), 600),
    ] {
        let Case {
            frame,
            domain,
            traj,
        } = case;
        let c = nsre_check(&frame, &traj, &Settings::default()).unwrap().c;
        let consts = estimate_constants(&frame, &domain, 21, DEFAULT_MARGIN).unwrap();
        let cert = Certificate::for_trajectory(&frame, &traj, &domain, c, consts, None)
            .map_err(|e| e.to_string())?;
        let verifier = Verifier::new(&frame, &traj, &domain, &cert, 0.05, seed, 16, 1)
            .map_err(|e| e.to_string())?;
        let mut worst = f64::INFINITY;
        for trial in 0..200 {
            let l = verifier.trial(trial).unwrap().lemmas;
            if !l.in_domain {
                return Err(format!("{name}: trial {trial} left the domain"));
            }
            worst = worst.min(l.delta_q).min(l.b_s).min(l.delta_b);
        }
        if worst < -BOUND_TOL {
            return Err(format!("{name}: slack {worst:e}"));
        }
        details.push(format!("{name} min slack {worst:.2e}"));
    }
    Ok(format!(
        "200 trials each, zero violations; {}",
        details.join(", ")
    ))
}

fn certificate_soundness() -> Outcome {
    let start = Instant::now();
    let Case {
        frame,
        domain,
        traj,
    } = unit_box_line();
    let c = nsre_check(&frame, &traj, &Settings::default()).unwrap().c;
    let consts = estimate_constants(&frame, &domain, 21, DEFAULT_MARGIN).unwrap();
    let cert = Certificate::for_trajectory(&frame, &traj, &domain, c, consts, None)
        .map_err(|e| e.to_string())?;
    if cert.epsilon.is_nan() || cert.epsilon <= 0.0 {
        return Err(format!("epsilon = {}", cert.epsilon));
    }
    let target = cert.epsilon.min(0.05);
    let cells = (target / traj.control.dt() + 1e-9).floor() as usize;
    let sub = traj.restrict(cells).unwrap();
    let t_prime = sub.control.horizon();
    let coefficient = 0.5 * c - t_prime * xi(t_prime, &consts, 2, 3).unwrap();
    let mut min_slack = f64::INFINITY;
    let mut min_sep = f64::INFINITY;
    for trial in 0..200 {
        let du = admissible_perturbation(&sub.control, &mut trial_rng(77, trial))
            .unwrap()
            .delta_u;
        let norm2 = sq_norm(&du);
        if norm2 == 0.0 {
            return Err(format!("trial {trial}: zero perturbation"));
        }
        let moved = integrate_trajectory(
            &frame,
            &sub.control.add_scaled(1.0, &du).unwrap(),
            sub.q0.as_slice(),
            None,
            1,
        )
        .unwrap();
        let sep = (moved.endpoint() - sub.endpoint()).norm();
        min_slack = min_slack.min(sep - (coefficient * norm2 - 1e-9));
        min_sep = min_sep.min(sep);
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        min_slack >= 0.0 && min_sep > 0.0,
        format!(
            "epsilon = {:.6}, T' = {t_prime}, 200 draws, min slack {min_slack:.2e}, min separation {min_sep:.2e}, {elapsed:.1}s",
            cert.epsilon
        ),
    )
}

fn run_cli(command: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_srx"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("srx runs")
}

fn closed_form_epsilon() -> Outcome {
    let exact = 0.999 / (4.0 * 2f64.sqrt());
    let domain = Domain::new(vec![-2.0, -2.0], vec![3.0, 2.0]).unwrap();
    let consts = estimate_constants(&Frame::euclidean(2), &domain, 11, 1.0).unwrap();
    if consts.raw() != [1.0, 0.0, 0.0, 0.0] {
        return Err(format!("constants {:?}", consts.raw()));
    }
    let lib = Certificate::new(consts, 1.0, 1.0, 2, 2, 1.0)
        .unwrap()
        .epsilon;

    let dir = tempfile::tempdir().unwrap();
    let out = run_cli("certify", &scenario_path("euclidean_line"), dir.path(), &[]);
    let cert: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("certificate.json")).map_err(|e| e.to_string())?,
    )
    .unwrap();
    let cli = cert["epsilon"].as_f64().unwrap_or(f64::NAN);
    check(
        (lib - exact).abs() < 1e-6 && (cli - exact).abs() < 1e-6 && out.status.success(),
        format!("exact {exact:.8}, library {lib:.8}, cli {cli:.8}"),
    )
}

fn negative_control() -> Outcome {
    let Case { frame, traj, .. } = case(&load("jump_control"));
    let report = nsre_check(&frame, &traj, &Settings::default()).unwrap();
    if report.regularity_ok {
        return Err("regularity proxy passed on a jump".into());
    }
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli("certify", &scenario_path("jump_control"), dir.path(), &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    check(
        out.status.code() == Some(3) && stdout.contains("not_certifiable"),
        format!(
            "derivative proxy {:.1} > bound {}, certify exit {:?}: {}",
            report.max_velocity_derivative,
            report.acb_bound,
            out.status.code(),
            stdout.lines().next().unwrap_or("")
        ),
    )
}

fn convergence() -> Outcome {
    let mut s = load("heisenberg_arc");
    let h = s.hamiltonian.as_mut().unwrap();
    h.cells = 10;
    let (p0, horizon) = (h.p0.clone(), h.horizon);
    let frame = s.frame().unwrap();
    let exact = arc_point(p0[2], horizon);
    let errors: Vec<f64> = [1, 2, 4]
        .into_iter()
        .map(|substeps| {
            let ex = hamiltonian_extremal(&frame, &s.q0, &p0, horizon, 10, substeps, None).unwrap();
            let q = ex.hamiltonian_states.last().unwrap();
            (0..3)
                .map(|i| (q[i] - exact[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    check(
        ratios.iter().all(|r| (12.0..=20.0).contains(r)),
        format!(
            "errors {:.2e} {:.2e} {:.2e}, ratios {:.2} {:.2}",
            errors[0], errors[1], errors[2], ratios[0], ratios[1]
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8", "8"] {
        let out_dir = dir.path().join(format!("run{}", outputs.len()));
        let out = run_cli(
            "certify",
            &scenario_path("heisenberg_line"),
            &out_dir,
            &["--threads", threads, "--seed", "42"],
        );
        if !out.status.success() {
            return Err(format!("certify exited {:?}", out.status.code()));
        }
        let cert = std::fs::read(out_dir.join("certificate.json")).unwrap();
        let csv = std::fs::read(out_dir.join("verification.csv")).unwrap();
        outputs.push((cert, csv));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    check(
        same,
        format!(
            "certificate.json ({} bytes) and verification.csv identical under 1, 2, 8, 8 threads",
            outputs[0].0.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("route equivalence", route_equivalence),
        ("decomposition in span", decomposition),
        (
            "energy estimate for admissible perturbations",
            basic_estimate,
        ),
        ("b0 lower bound on the Heisenberg line", b0_estimate),
        ("variation bounds", variation_bounds),
        ("certificate soundness", certificate_soundness),
        ("closed-form radius", closed_form_epsilon),
        ("negative control", negative_control),
        ("RK4 convergence", convergence),
        ("determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
