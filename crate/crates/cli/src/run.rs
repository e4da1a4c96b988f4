//! Stage execution. Every stage writes its files into the output directory
//! and prints one summary line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscotomo::discretize::{build_grid, classify_boundary, GridFunction, PhaseGrid};
use viscotomo::geodesic::{trace, IntegratorConfig, PhaseSpacePoint};
use viscotomo::metric::{coercivity_margin, Sampling};
use viscotomo::solve::{assemble, boundary_data, discrete_coercivity, solve_dynamic, solve_static, step_count, InnerProduct, LinearSystem, SolverConfig};
use viscotomo::transport::{boundary_table, write_boundary_csv};
use viscotomo::verify::{calibrate_proposition1, calibration_functions, check_proposition1, epsilon_sweep};

use crate::config::{Command, ExperimentConfig, Resolved};
use crate::error::CliError;

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_ENV: &str = "VISCOTOMO_OUTPUT_DIR";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub allow_unconverged: bool,
    /// Replaces the `output` key when set.
    pub output: Option<PathBuf>,
}

struct Stage<'a> {
    cfg: &'a ExperimentConfig,
    res: Resolved,
    dir: PathBuf,
    allow_unconverged: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn num(stage: &'static str) -> impl Fn(viscotomo::Error) -> CliError {
    move |source| CliError::Numerical { stage, source }
}

fn say(out: &mut (dyn Write + Send), line: String) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(io_err(Path::new("<stdout>")))
}

/// Runs the configured command inside a worker pool of the requested size.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let workers = opts.workers.unwrap_or(cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let dir = opts.output.clone().unwrap_or_else(|| cfg.output.clone());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let stage = Stage {
        cfg,
        res: cfg.resolve()?,
        dir,
        allow_unconverged: opts.allow_unconverged,
    };
    let path = stage.dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    pool.install(|| match cfg.command {
        Command::Trace => stage.trace(out),
        Command::TransformTable => stage.transform_table(out),
        Command::SolveStatic => stage.solve_static(out),
        Command::SolveDynamic => stage.solve_dynamic(out),
        Command::Sweep => stage.sweep(out),
        Command::CheckProp1 => stage.check_prop1(out),
        Command::Coercivity => stage.coercivity(out),
    })
}

impl Stage<'_> {
    fn write(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.cfg.solver.tol,
            max_iter: self.cfg.max_iter(),
            restart: self.cfg.solver.restart,
        }
    }

    fn grid(&self, stage: &'static str) -> Result<PhaseGrid, CliError> {
        let g = self.cfg.grid;
        build_grid(&self.res.model, g.i, g.j, g.k).map_err(num(stage))
    }

    fn export_field(&self, grid: &PhaseGrid, u: &GridFunction, stem: &str) -> Result<(), CliError> {
        let ex = &self.cfg.export;
        if ex.fields {
            self.write(&format!("{stem}.csv"), |w| u.write_csv(grid, w))?;
        }
        if ex.heatmaps {
            let dir = self.dir.join("heatmaps");
            u.export_heatmaps(&dir, stem).map_err(io_err(&dir))?;
        }
        Ok(())
    }

    fn dump(&self, sys: &LinearSystem, stem: &str) -> Result<(), CliError> {
        if self.cfg.export.dump_system {
            let mut b = Vec::new();
            self.write(&format!("{stem}_triplets.csv"), |w| sys.write_dump(w, &mut b))?;
            self.write(&format!("{stem}_b.csv"), |w| w.write_all(&b))?;
        }
        Ok(())
    }

    fn unconverged(&self, what: String) -> Result<(), CliError> {
        if self.allow_unconverged {
            Ok(())
        } else {
            Err(CliError::Unconverged(what))
        }
    }

    fn trace(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let t = self.cfg.trace.as_ref().expect("validated");
        let model = &self.res.model;
        let dim = model.dim();
        let icfg = IntegratorConfig::with_step(t.step);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut summary = String::from("path,tau_minus,tau_plus,entry_radius,exit_radius\n");
        let mut worst: f64 = 0.0;
        for c in 0..t.count {
            let x = loop {
                let mut x = [0.0; 3];
                x.iter_mut().take(dim).for_each(|v| *v = rng.gen_range(-0.95..0.95));
                if x.iter().map(|v| v * v).sum::<f64>() < 0.9 {
                    break x;
                }
            };
            let dir = loop {
                let mut d = [0.0; 3];
                d.iter_mut().take(dim).for_each(|v| *v = rng.gen_range(-1.0..1.0));
                let s = d.iter().map(|v| v * v).sum::<f64>();
                if s > 1e-4 && s <= 1.0 {
                    break d;
                }
            };
            let p = PhaseSpacePoint::unitized(model, x, dir).map_err(num("trace"))?;
            let path = trace(model, &p, &icfg).map_err(num("trace"))?;
            let radius = |x: &[f64; 3]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (r0, r1) = (radius(&path.entry().x), radius(&path.exit().x));
            worst = worst.max((r0 - 1.0).abs()).max((r1 - 1.0).abs());
            summary.push_str(&format!("{c},{:e},{:e},{r0:e},{r1:e}\n", path.tau_minus, path.tau_plus));
            self.write(&format!("trace_{c:03}.csv"), |w| path.write_csv(dim, w))?;
        }
        self.write("trace_endpoints.csv", |w| w.write_all(summary.as_bytes()))?;
        say(out, format!("trace: {} geodesics, max endpoint radius deviation {worst:e}", t.count))
    }

    fn transform_table(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let times = &self.cfg.transform.as_ref().expect("validated").times;
        let g = self.cfg.grid;
        let r = &self.res;
        let rows = boundary_table(&r.model, &r.field, &r.alpha, times, g.j, g.k, &r.quadrature).map_err(num("transform-table"))?;
        self.write("transform.csv", |w| write_boundary_csv(&rows, w))?;
        let max = rows.iter().fold(0.0f64, |m, r| m.max(r.value.abs()));
        say(out, format!("transform-table: {} rows, max |value| {max:e}", rows.len()))
    }

    fn solve_static(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let r = &self.res;
        let grid = self.grid("solve-static")?;
        let data = boundary_data(&grid, &r.model, &r.field, &r.alpha, 0.0, &r.quadrature).map_err(num("solve-static"))?;
        let mut table = String::from("epsilon,iterations,residual,converged,max_abs\n");
        let mut failed = Vec::new();
        for (idx, &eps) in self.cfg.solver.epsilon.iter().enumerate() {
            let sys = assemble(&grid, &r.model, &r.field, &r.alpha, eps, &data).map_err(num("solve-static"))?;
            let (u, rep) = solve_static(&sys, &self.solver()).map_err(num("solve-static"))?;
            let stem = format!("static_eps{}", idx + 1);
            self.dump(&sys, &stem)?;
            self.export_field(&grid, &u, &stem)?;
            table.push_str(&format!("{eps:e},{},{:e},{},{:e}\n", rep.iterations, rep.final_residual, rep.converged, u.max_abs()));
            say(
                out,
                format!(
                    "solve-static: eps={eps:e} iterations={} residual={:e} converged={} max|u|={:e}",
                    rep.iterations,
                    rep.final_residual,
                    rep.converged,
                    u.max_abs()
                ),
            )?;
            if !rep.converged {
                failed.push(eps);
            }
        }
        self.write("static.csv", |w| w.write_all(table.as_bytes()))?;
        if failed.is_empty() {
            Ok(())
        } else {
            self.unconverged(format!("solve-static did not converge for epsilon {failed:?}"))
        }
    }

    fn solve_dynamic(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let r = &self.res;
        let d = self.cfg.dynamic.as_ref().expect("validated");
        let eps = self.cfg.solver.epsilon[0];
        let grid = self.grid("solve-dynamic")?;
        let steps = step_count(d.dt, d.t_final).map_err(num("solve-dynamic"))?;
        let data = (1..=steps)
            .map(|n| boundary_data(&grid, &r.model, &r.field, &r.alpha, n as f64 * d.dt, &r.quadrature))
            .collect::<Result<Vec<_>, _>>()
            .map_err(num("solve-dynamic"))?;
        let sol = solve_dynamic(&grid, &r.model, &r.field, &r.alpha, eps, d.dt, d.t_final, &data, &self.solver());
        let sol = match sol {
            Err(e) if e.is_not_converged() && self.allow_unconverged => {
                return say(out, format!("solve-dynamic: stopped early, {e}"));
            }
            other => other.map_err(num("solve-dynamic"))?,
        };
        let mut table = String::from("step,t,max_abs,iterations,residual\n");
        for (n, (t, u)) in sol.times.iter().zip(&sol.states).enumerate().skip(1) {
            let rep = &sol.reports[n - 1];
            table.push_str(&format!("{n},{t:e},{:e},{},{:e}\n", u.max_abs(), rep.iterations, rep.final_residual));
        }
        self.write("dynamic.csv", |w| w.write_all(table.as_bytes()))?;
        self.export_field(&grid, sol.last(), "dynamic_final")?;
        say(
            out,
            format!(
                "solve-dynamic: eps={eps:e} steps={steps} t_final={:e} max|u|={:e}",
                sol.times.last().expect("nonempty"),
                sol.last().max_abs()
            ),
        )
    }

    fn sweep(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let r = &self.res;
        let grid = self.grid("sweep")?;
        let res = epsilon_sweep(&r.model, &r.field, &r.alpha, &grid, &self.cfg.solver.epsilon, &r.quadrature, &self.solver())
            .map_err(num("sweep"))?;
        self.write("sweep.csv", |w| res.write_csv(w))?;
        if self.cfg.export.fields {
            self.write("reference.csv", |w| res.reference.write_csv(&grid, w))?;
        }
        let mut first_error = None;
        let mut unconverged = Vec::new();
        for (idx, e) in res.entries.iter().enumerate() {
            match &e.outcome {
                Ok(s) => {
                    self.export_field(&grid, &s.solution, &format!("solution_eps{}", idx + 1))?;
                    self.export_field(&grid, &s.error, &format!("error_eps{}", idx + 1))?;
                    say(
                        out,
                        format!(
                            "sweep: eps={:e} l2_rel_err={:e} linf_rel_err={:e} iterations={} converged={}",
                            e.epsilon, s.norms.l2, s.norms.linf, s.report.iterations, s.report.converged
                        ),
                    )?;
                    if !s.report.converged {
                        unconverged.push(e.epsilon);
                    }
                }
                Err(err) => {
                    say(out, format!("sweep: eps={:e} failed: {err}", e.epsilon))?;
                    first_error.get_or_insert_with(|| err.clone());
                }
            }
        }
        if let Some(err) = first_error {
            return Err(num("sweep")(err));
        }
        if unconverged.is_empty() {
            Ok(())
        } else {
            self.unconverged(format!("sweep did not converge for epsilon {unconverged:?}"))
        }
    }

    fn check_prop1(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let p = self.cfg.prop1.as_ref().expect("validated");
        let cal = calibrate_proposition1().map_err(num("check-prop1"))?;
        let mut cal_csv = String::from("convention,order,max_scaled_diff\n");
        for (conv, order, d) in &cal.runs {
            cal_csv.push_str(&format!("{conv},{order},{d:e}\n"));
        }
        self.write("prop1_calibration.csv", |w| w.write_all(cal_csv.as_bytes()))?;
        let model = self.res.model.with_dim(3).map_err(num("check-prop1"))?;
        let mut csv = String::from("function,x1,x2,x3,lhs,rhs,abs_diff,convention\n");
        let mut worst: f64 = 0.0;
        for x in &p.points {
            for (name, u) in calibration_functions() {
                let c = check_proposition1(&model, u.as_ref(), x, p.n_theta, p.n_phi, cal.chosen).map_err(num("check-prop1"))?;
                worst = worst.max(c.scaled_diff());
                csv.push_str(&format!(
                    "{name},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                    x[0], x[1], x[2], c.lhs, c.rhs, c.abs_diff, c.convention
                ));
            }
        }
        self.write("prop1.csv", |w| w.write_all(csv.as_bytes()))?;
        say(
            out,
            format!("check-prop1: convention={} max |lhs-rhs|/(1+|rhs|)={worst:e} at orders ({}, {})", cal.chosen, p.n_theta, p.n_phi),
        )
    }

    fn coercivity(&self, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
        let r = &self.res;
        let probes = self.cfg.coercivity.as_ref().expect("validated").probes;
        let rep = coercivity_margin(&r.model, r.alpha.alpha0(), &Sampling::default()).map_err(num("coercivity"))?;
        let mut csv = format!(
            "quantity,value\nsup_riemannian,{:e}\nsup_euclidean,{:e}\nalpha0,{:e}\nsatisfied,{}\nsatisfied_euclidean,{}\n",
            rep.sup_riemannian,
            rep.sup_euclidean,
            rep.alpha0,
            rep.satisfied,
            rep.satisfied_euclidean()
        );
        say(
            out,
            format!(
                "coercivity: sup_riemannian={:.6} sup_euclidean={:.6} alpha0={} satisfied={} satisfied_euclidean={}",
                rep.sup_riemannian,
                rep.sup_euclidean,
                rep.alpha0,
                rep.satisfied,
                rep.satisfied_euclidean()
            ),
        )?;
        if probes > 0 && r.model.dim() == 2 {
            let grid = self.grid("coercivity")?;
            let zeros = classify_boundary(&grid, &r.model).outflow_nodes().into_iter().map(|i| (i, 0.0)).collect();
            let eps = self.cfg.solver.epsilon[0];
            let sys = assemble(&grid, &r.model, &r.field, &r.alpha, eps, &zeros).map_err(num("coercivity"))?;
            for (name, inner) in [("liouville", InnerProduct::Liouville), ("euclidean", InnerProduct::Euclidean)] {
                let est = discrete_coercivity(&sys, probes, inner, self.cfg.seed).map_err(num("coercivity"))?;
                csv.push_str(&format!("lambda_min_{name},{:e}\nreliable_{name},{}\n", est.lambda_min, est.reliable));
                say(
                    out,
                    format!("coercivity: discrete {name} eps={eps:e} lambda_min={:e} reliable={}", est.lambda_min, est.reliable),
                )?;
            }
        }
        self.write("coercivity.csv", |w| w.write_all(csv.as_bytes()))
    }
}
