//! One function per subcommand. Each writes its artifacts into the output
//! directory and prints a short report on stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dnnmpc_core::baseline::RuleConfig;
use dnnmpc_core::cycles::{build_envelope, mean_cycle, synthesize_family, DriveCycle, Similarity};
use dnnmpc_core::dnn::{approximation_error, structure_search, Dataset, Histogram, NeuralPolicy, Split, TrainReport};
use dnnmpc_core::dp::{equivalence_samples, fit_lambda, rollout, solve_dp, time_averaged_curve, LambdaFit};
use dnnmpc_core::nmpc::{EquivalenceFactor, NmpcConfig};
use dnnmpc_core::powertrain::VehicleModel;
use dnnmpc_core::sim::{
    benchmark, median_deviation, operating_stats, run_closed_loop, BenchTable, NmpcController, PolicyController,
    Prices, RuleController, SimulationResult, Summary,
};
use serde::Serialize;

use crate::config::{LambdaSource, RunConfig};
use crate::Failure;

pub const CONTROLLERS: [&str; 3] = ["rule", "nmpc", "policy"];

pub const COST_TO_GO_FILE: &str = "cost_to_go.json";
pub const LAMBDA_FIT_FILE: &str = "lambda_fit.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const BENCH_FILE: &str = "bench.csv";

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(path, &text)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Cycle CSVs of a directory in file-name order; a missing directory is empty.
fn load_dir(dir: &Path) -> Result<Vec<DriveCycle>, Failure> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| DriveCycle::load(p).map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

/// A loaded config together with the vehicle it names.
pub struct Workspace {
    pub cfg: RunConfig,
    pub model: VehicleModel,
}

impl Workspace {
    pub fn open(cfg: RunConfig) -> Result<Self, Failure> {
        require(&cfg.paths.model, "vehicle model file")?;
        let model = VehicleModel::load(&cfg.paths.model).map_err(|e| Failure::Usage(e.to_string()))?;
        create_dir(&cfg.paths.output_dir)?;
        Ok(Self { cfg, model })
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    pub fn soc_bounds(&self) -> (f64, f64) {
        (self.cfg.nmpc.soc_min, self.cfg.nmpc.soc_max)
    }

    fn trained_dir(&self) -> PathBuf {
        self.cfg.paths.cycles_dir.join("trained")
    }

    fn untrained_dir(&self) -> PathBuf {
        self.cfg.paths.cycles_dir.join("untrained")
    }

    pub fn trained_cycles(&self) -> Result<Vec<DriveCycle>, Failure> {
        let cycles = load_dir(&self.trained_dir())?;
        if cycles.is_empty() {
            return Err(Failure::Usage(format!(
                "no trained cycles in {} (run `dnnmpc synth` first)",
                self.trained_dir().display()
            )));
        }
        Ok(cycles)
    }

    pub fn untrained_cycles(&self) -> Result<Vec<DriveCycle>, Failure> {
        load_dir(&self.untrained_dir())
    }

    /// The configured NMPC settings with the equivalence factor resolved.
    pub fn nmpc_config(&self) -> Result<NmpcConfig, Failure> {
        let mut cfg = self.cfg.nmpc.clone();
        if self.cfg.lambda_source == LambdaSource::Fit {
            let path = self.output(LAMBDA_FIT_FILE);
            require(&path, "lambda fit (run `dnnmpc dp-lambda` first)")?;
            cfg.lambda = EquivalenceFactor::from_fit(&LambdaFit::load(&path)?);
        }
        Ok(cfg)
    }

    pub fn policy(&self) -> Result<NeuralPolicy, Failure> {
        let path = self.output(POLICY_FILE);
        require(&path, "policy weights (run `dnnmpc train` first)")?;
        Ok(NeuralPolicy::load(&path)?)
    }

    pub fn dataset(&self) -> Result<Dataset, Failure> {
        let path = self.output(DATASET_FILE);
        require(&path, "dataset (run `dnnmpc collect` first)")?;
        Ok(Dataset::load(&path)?)
    }

    fn check_dt(&self, cycle: &DriveCycle) -> Result<(), Failure> {
        if (cycle.dt() - self.cfg.nmpc.dt).abs() > 1e-9 {
            return Err(Failure::Usage(format!(
                "cycle {} has step {} s but nmpc.dt is {} s",
                cycle.name,
                cycle.dt(),
                self.cfg.nmpc.dt
            )));
        }
        Ok(())
    }

    /// The configured benchmark cycle, or the first trained one.
    pub fn bench_cycle(&self) -> Result<DriveCycle, Failure> {
        let mut all = self.trained_cycles()?;
        match &self.cfg.bench.cycle {
            None => Ok(all.swap_remove(0)),
            Some(name) => {
                all.extend(self.untrained_cycles()?);
                all.into_iter().find(|c| &c.name == name).ok_or_else(|| {
                    Failure::Usage(format!(
                        "bench cycle `{name}` not found in {}",
                        self.cfg.paths.cycles_dir.display()
                    ))
                })
            }
        }
    }

    /// Closed-loop run of a controller chosen by name.
    pub fn run_named(&self, name: &str, cycle: &DriveCycle) -> Result<SimulationResult, Failure> {
        let (bounds, soc0) = (self.soc_bounds(), self.cfg.soc_init);
        let result = match name {
            "rule" => run_closed_loop(
                cycle,
                &mut RuleController {
                    cfg: self.cfg.rule.clone(),
                },
                &self.model,
                bounds,
                soc0,
            ),
            "nmpc" => {
                self.check_dt(cycle)?;
                let cfg = self.nmpc_config()?;
                run_closed_loop(cycle, &mut NmpcController { cfg }, &self.model, bounds, soc0)
            }
            "policy" => {
                let policy = self.policy()?;
                run_closed_loop(
                    cycle,
                    &mut PolicyController { policy: &policy },
                    &self.model,
                    bounds,
                    soc0,
                )
            }
            other => return Err(unknown_controller(other)),
        };
        Ok(result?)
    }
}

fn unknown_controller(name: &str) -> Failure {
    Failure::Usage(format!(
        "unknown controller `{name}`; valid names: {}",
        CONTROLLERS.join(", ")
    ))
}

/// Writes the cycle family: the first `family.trained` variants under
/// `trained/`, the rest under `untrained/`.
pub fn synth(ws: &Workspace) -> Result<Vec<DriveCycle>, Failure> {
    let cfg = &ws.cfg;
    require(&cfg.paths.route, "route cycle")?;
    let base = DriveCycle::load(&cfg.paths.route).map_err(|e| Failure::Usage(e.to_string()))?;
    let family = synthesize_family(&base, &cfg.family.params(cfg.seed))?;
    let (trained, held_out) = family.split_at(cfg.family.trained);
    for (dir, members) in [(ws.trained_dir(), trained), (ws.untrained_dir(), held_out)] {
        create_dir(&dir)?;
        // stale variants from a larger family would otherwise be picked up
        for old in load_dir_paths(&dir)? {
            fs::remove_file(&old).map_err(|e| Failure::Runtime(format!("{}: {e}", old.display())))?;
        }
        for c in members {
            c.save(dir.join(format!("{}.csv", c.name)))?;
        }
    }
    println!(
        "wrote {} trained and {} untrained cycles under {}",
        trained.len(),
        held_out.len(),
        cfg.paths.cycles_dir.display()
    );
    Ok(family)
}

fn load_dir_paths(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    Ok(fs::read_dir(dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect())
}

/// DP on the per-step mean of the trained cycles, co-state along the optimal
/// trajectory, quadratic fit of the equivalence factor.
pub fn dp_lambda(ws: &Workspace) -> Result<LambdaFit, Failure> {
    let cfg = &ws.cfg;
    let trained = ws.trained_cycles()?;
    let mean = mean_cycle(&trained, "trained-mean")?;
    let table = solve_dp(&mean, &ws.model, &cfg.dp)?;
    let traj = rollout(&table, &mean, &ws.model, cfg.soc_init)?;
    let samples = equivalence_samples(&table, &traj.soc);
    let fit = fit_lambda(&samples, cfg.dp.soc_ref)?;

    table.save(ws.output(COST_TO_GO_FILE))?;
    fit.save(ws.output(LAMBDA_FIT_FILE))?;
    mean.save(ws.output("trained_mean.csv"))?;
    let mut csv = String::from("soc,lambda,fitted\n");
    for (s, l) in &samples {
        let _ = writeln!(csv, "{s},{l},{}", fit.eval(*s));
    }
    write(&ws.output("lambda_samples.csv"), &csv)?;
    let mut curve = String::from("soc,lambda\n");
    for (s, l) in time_averaged_curve(&table) {
        let _ = writeln!(curve, "{s},{l}");
    }
    write(&ws.output("lambda_curve.csv"), &curve)?;

    println!(
        "dp over {} steps: fuel {:.4} kg, final soc {:.4}",
        table.time_steps,
        traj.fuel,
        traj.soc.last().copied().unwrap_or(f64::NAN)
    );
    println!("lambda0 = {}", fit.lambda0);
    println!("k_a = {}", fit.k_a);
    println!("residual_rms = {}", fit.residual_rms);
    println!(
        "samples = {}{}",
        fit.samples,
        if fit.degenerate { " (degenerate)" } else { "" }
    );
    Ok(fit)
}

pub fn simulate(ws: &Workspace, controller: &str, cycle_path: Option<&Path>) -> Result<Summary, Failure> {
    if !CONTROLLERS.contains(&controller) {
        return Err(unknown_controller(controller));
    }
    let cycle = match cycle_path {
        Some(p) => {
            require(p, "cycle file")?;
            DriveCycle::load(p).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => ws.bench_cycle()?,
    };
    let result = ws.run_named(controller, &cycle)?;
    let summary = result.summary(&ws.cfg.prices);
    let dir = ws.output("sim");
    create_dir(&dir)?;
    let stem = format!("{controller}-{}", cycle.name);
    write(&dir.join(format!("{stem}.csv")), &result.to_csv())?;
    let summary_path = dir.join(format!("{stem}.json"));
    summary.save(&summary_path)?;
    println!(
        "{controller} on {}: fuel {:.4} kg, soc {:.4} -> {:.4}, cost {:.4}, avg step {:.3e} s",
        cycle.name, summary.fuel_kg, summary.soc_init, summary.soc_final, summary.money_cost, summary.timing.avg
    );
    println!("summary: {}", summary_path.display());
    if let Some(msg) = &result.aborted {
        return Err(Failure::Runtime(format!(
            "run aborted after {} steps: {msg}",
            result.records.len()
        )));
    }
    Ok(summary)
}

pub fn collect(ws: &Workspace) -> Result<Dataset, Failure> {
    let cfg = &ws.cfg;
    let trained = ws.trained_cycles()?;
    for c in &trained {
        ws.check_dt(c)?;
    }
    let ncfg = ws.nmpc_config()?;
    let data = dnnmpc_core::dnn::collect_dataset(
        &trained,
        &ncfg,
        &ws.model,
        cfg.collect.target_count,
        cfg.soc_init,
        cfg.seed,
    )?;
    let path = ws.output(DATASET_FILE);
    data.save(&path)?;
    println!(
        "{} samples ({} train / {} val / {} test) with horizon {} -> {}",
        data.len(),
        data.indices(Split::Train).len(),
        data.indices(Split::Val).len(),
        data.indices(Split::Test).len(),
        data.horizon,
        path.display()
    );
    if data.insufficient {
        eprintln!(
            "warning: cycles yielded only {} of the requested {} samples",
            data.len(),
            cfg.collect.target_count
        );
    }
    Ok(data)
}

pub fn train(ws: &Workspace) -> Result<(TrainReport, NeuralPolicy), Failure> {
    let data = ws.dataset()?;
    let search = ws.cfg.train.search(ws.cfg.seed);
    let (report, policy) = structure_search(&data, &search)?;
    policy.save(ws.output(POLICY_FILE))?;
    report.save(ws.output(TRAIN_REPORT_FILE))?;
    let mut log = String::from("epoch,train_mse,val_mse,mu\n");
    for r in &policy.training_log {
        let _ = writeln!(log, "{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.mu);
    }
    write(&ws.output("training_log.csv"), &log)?;
    for r in &report.runs {
        match (&r.val_mse, &r.error) {
            (Some(v), _) => println!(
                "  hidden {:?} restart {}: val mse {v:.5} after {} epochs",
                r.hidden, r.restart, r.epochs
            ),
            (None, e) => println!(
                "  hidden {:?} restart {}: failed ({})",
                r.hidden,
                r.restart,
                e.as_deref().unwrap_or("?")
            ),
        }
    }
    println!(
        "best structure {:?}: val mse {}, test mse {}",
        report.best_structure,
        report.best_val_mse,
        report.test_mse.map_or("n/a".into(), |m| m.to_string())
    );
    Ok((report, policy))
}

/// NMPC, distilled policy and rule controller on one cycle.
#[derive(Debug, Clone, Serialize)]
pub struct CycleComparison {
    pub cycle: String,
    pub trained: bool,
    pub similarity: Similarity,
    pub nmpc: Summary,
    pub policy: Summary,
    pub rule: Summary,
    /// Step-by-step mean of |u_policy - u_nmpc| between the two closed-loop runs.
    pub mean_abs_du: f64,
    /// Relative gap of the policy's median fuel rate to the NMPC's.
    pub median_fuel_rate_deviation: Option<f64>,
}

impl CycleComparison {
    /// (policy - nmpc) / nmpc fuel mass.
    pub fn policy_fuel_gap(&self) -> f64 {
        (self.policy.fuel_kg - self.nmpc.fuel_kg) / self.nmpc.fuel_kg
    }

    /// (rule - nmpc) / rule money cost; positive when NMPC is cheaper.
    pub fn nmpc_gain_over_rule(&self) -> f64 {
        (self.rule.money_cost - self.nmpc.money_cost) / self.rule.money_cost
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compare_on_cycle(
    cycle: &DriveCycle,
    model: &VehicleModel,
    nmpc: &NmpcConfig,
    rule: &RuleConfig,
    policy: &NeuralPolicy,
    soc_bounds: (f64, f64),
    soc_init: f64,
    prices: &Prices,
) -> Result<(CycleComparison, Vec<SimulationResult>), Failure> {
    let n = run_closed_loop(
        cycle,
        &mut NmpcController { cfg: nmpc.clone() },
        model,
        soc_bounds,
        soc_init,
    )?;
    let p = run_closed_loop(cycle, &mut PolicyController { policy }, model, soc_bounds, soc_init)?;
    let r = run_closed_loop(
        cycle,
        &mut RuleController { cfg: rule.clone() },
        model,
        soc_bounds,
        soc_init,
    )?;
    let steps = n.records.len().min(p.records.len()).max(1);
    let mean_abs_du = n
        .records
        .iter()
        .zip(&p.records)
        .map(|(a, b)| (a.u - b.u).abs())
        .sum::<f64>()
        / steps as f64;
    let ops = operating_stats(&[n.clone(), p.clone()])?;
    let cmp = CycleComparison {
        cycle: cycle.name.clone(),
        trained: false,
        similarity: Similarity::TrainedLike,
        nmpc: n.summary(prices),
        policy: p.summary(prices),
        rule: r.summary(prices),
        mean_abs_du,
        median_fuel_rate_deviation: median_deviation(&ops.runs[0], &ops.runs[1]),
    };
    Ok((cmp, vec![n, p, r]))
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    split: &'static str,
    mse: f64,
    histogram: &'a Histogram,
}

/// Approximation error on the test split and the three-way comparison on
/// every trained and held-out cycle.
pub fn eval(ws: &Workspace) -> Result<Vec<CycleComparison>, Failure> {
    let cfg = &ws.cfg;
    let policy = ws.policy()?;
    let data = ws.dataset()?;
    let ncfg = ws.nmpc_config()?;
    let err = approximation_error(&policy, &data, Split::Test)?;
    write_json(
        &ws.output("error_histogram.json"),
        &ErrorReport {
            split: "test",
            mse: err.mse,
            histogram: &err.histogram,
        },
    )?;

    let trained = ws.trained_cycles()?;
    let untrained = ws.untrained_cycles()?;
    let envelope = (trained.len() >= 2).then(|| build_envelope(&trained)).transpose()?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (cycle, is_trained) in trained
        .iter()
        .map(|c| (c, true))
        .chain(untrained.iter().map(|c| (c, false)))
    {
        ws.check_dt(cycle)?;
        let (mut cmp, mut runs) = compare_on_cycle(
            cycle,
            &ws.model,
            &ncfg,
            &cfg.rule,
            &policy,
            ws.soc_bounds(),
            cfg.soc_init,
            &cfg.prices,
        )?;
        cmp.trained = is_trained;
        cmp.similarity = match &envelope {
            Some(env) => env.classify(cycle)?,
            None => Similarity::TrainedLike,
        };
        rows.push(cmp);
        results.append(&mut runs);
    }

    let mut csv = String::from(
        "cycle,set,similarity,nmpc_fuel_kg,policy_fuel_kg,rule_fuel_kg,policy_fuel_gap_pct,mean_abs_du,\
         nmpc_soc_final,policy_soc_final,rule_soc_final,nmpc_cost,policy_cost,rule_cost,nmpc_gain_over_rule_pct,\
         median_fuel_rate_dev_pct\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cycle,
            if r.trained { "trained" } else { "untrained" },
            similarity_name(r.similarity),
            r.nmpc.fuel_kg,
            r.policy.fuel_kg,
            r.rule.fuel_kg,
            100.0 * r.policy_fuel_gap(),
            r.mean_abs_du,
            r.nmpc.soc_final,
            r.policy.soc_final,
            r.rule.soc_final,
            r.nmpc.money_cost,
            r.policy.money_cost,
            r.rule.money_cost,
            100.0 * r.nmpc_gain_over_rule(),
            r.median_fuel_rate_deviation
                .map_or(String::new(), |d| (100.0 * d).to_string()),
        );
    }
    write(&ws.output(COMPARISON_FILE), &csv)?;
    write(&ws.output("operating_points.csv"), &operating_stats(&results)?.to_csv())?;

    println!("test-split approximation mse {:.5}", err.mse);
    println!(
        "{:<16} {:<9} {:>9} {:>9} {:>9} {:>8} {:>7} {:>7} {:>7}",
        "cycle", "set", "nmpc kg", "policy kg", "rule kg", "gap %", "|du|", "soc_f", "gain %"
    );
    for r in &rows {
        println!(
            "{:<16} {:<9} {:>9.4} {:>9.4} {:>9.4} {:>8.2} {:>7.4} {:>7.4} {:>7.2}",
            r.cycle,
            if r.trained { "trained" } else { "untrained" },
            r.nmpc.fuel_kg,
            r.policy.fuel_kg,
            r.rule.fuel_kg,
            100.0 * r.policy_fuel_gap(),
            r.mean_abs_du,
            r.nmpc.soc_final,
            100.0 * r.nmpc_gain_over_rule()
        );
    }
    Ok(rows)
}

fn similarity_name(s: Similarity) -> &'static str {
    match s {
        Similarity::TrainedLike => "trained_like",
        Similarity::Untrained => "untrained",
    }
}

pub fn bench(ws: &Workspace) -> Result<BenchTable, Failure> {
    let cfg = &ws.cfg;
    let cycle = ws.bench_cycle()?;
    ws.check_dt(&cycle)?;
    let policy = ws.policy()?;
    let mut rule = RuleController { cfg: cfg.rule.clone() };
    let mut nmpc = NmpcController { cfg: ws.nmpc_config()? };
    let mut pol = PolicyController { policy: &policy };
    let table = benchmark(
        &mut [&mut rule, &mut nmpc, &mut pol],
        &cycle,
        &ws.model,
        ws.soc_bounds(),
        cfg.soc_init,
        cfg.bench.repetitions,
    )?;
    write(&ws.output(BENCH_FILE), &table.to_csv())?;
    write_json(&ws.output("bench.json"), &table)?;
    println!("{} x {} on {}", cfg.bench.repetitions, cycle.steps(), cycle.name);
    for r in &table.rows {
        println!(
            "  {:<7} min {:.3e} s  avg {:.3e} s  max {:.3e} s",
            r.controller, r.timing.min, r.timing.avg, r.timing.max
        );
    }
    if let Some(s) = table.speedup {
        println!("policy speedup over nmpc: {s:.1}x");
    }
    Ok(table)
}

/// Side-by-side of two run summaries.
pub fn diff(a: &Path, b: &Path) -> Result<String, Failure> {
    require(a, "summary file")?;
    require(b, "summary file")?;
    let load = |p: &Path| Summary::load(p).map_err(|e| Failure::Usage(e.to_string()));
    let (x, y) = (load(a)?, load(b)?);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>14} {:>14} {:>12} {:>9}",
        "", x.controller, y.controller, "delta", "rel %"
    );
    let _ = writeln!(out, "{:<20} {:>14} {:>14}", "cycle", x.cycle, y.cycle);
    let rows = [
        ("fuel_kg", x.fuel_kg, y.fuel_kg),
        ("soc_final", x.soc_final, y.soc_final),
        ("battery_energy_kwh", x.battery_energy_kwh, y.battery_energy_kwh),
        ("money_cost", x.money_cost, y.money_cost),
        ("avg_step_time_s", x.timing.avg, y.timing.avg),
    ];
    for (name, u, v) in rows {
        let rel = if u != 0.0 {
            format!("{:.2}", 100.0 * (v - u) / u.abs())
        } else {
            "-".into()
        };
        let _ = writeln!(out, "{name:<20} {u:>14.6} {v:>14.6} {:>12.6} {rel:>9}", v - u);
    }
    Ok(out)
}
