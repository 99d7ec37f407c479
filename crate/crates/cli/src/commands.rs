use std::fmt::Write as _;

use pfcr_core::estimation::{select_dimension_in, ExtendedFit, TestResult};
use pfcr_core::model::FittedReduction;
use pfcr_core::studylab::{
    bias_variance_experiment, fmt_f64, hetero_diag, method_comparison, report_csv, BiasVarianceConfig,
    ComparisonConfig, ForwardSim, HeteroOptions, InverseSim, Method, Metric, ReportRow, Truth,
};
use pfcr_core::{fit_pc, fit_pfc_iso, BasisSpec, Dataset, ExtendedProblem, GrassmannOptions};

use crate::args::*;
use crate::csvio::{dataset_csv, default_names, emit, load_dataset, read_table};
use crate::error::{CliError, CliResult};
use crate::modelfile::ModelDocument;

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::SelectDim(a) => cmd_select_dim(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(s) => cmd_simulate(s),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

fn opts(seed: u64, random_starts: usize) -> GrassmannOptions {
    GrassmannOptions {
        random_starts,
        ..GrassmannOptions::with_seed(seed)
    }
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("--alpha must lie in (0, 1], got {alpha}")))
    }
}

fn fmt_pvalue(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Fixed-width report; trail logliks are recovered as `L_full − Λ/2`.
fn summary(data: &Dataset, fit: &FittedReduction, full: Option<f64>, trail: &[TestResult], note: &str) -> String {
    let spec = fit.spec;
    let mut s = String::new();
    let basis = spec.map(|b| b.to_string()).unwrap_or_else(|| "none".into());
    let _ = writeln!(s, "model {} | basis {basis} | n = {} | p = {} | r = {}", fit.kind, data.n(), data.p(), fit.r());
    if !note.is_empty() {
        let _ = writeln!(s, "{note}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>4} {:>18} {:>12} {:>6} {:>10}", "d", "loglik", "Lambda", "df", "p-value");
    for t in trail {
        let _ = writeln!(
            s,
            "{:>4} {:>18} {:>12.4} {:>6} {:>10}",
            t.d,
            full.map(|l| format!("{:.4}", l - t.lambda / 2.0)).unwrap_or_default(),
            t.lambda,
            t.df,
            fmt_pvalue(t.pvalue)
        );
    }
    if let Some(l) = full {
        let _ = writeln!(s, "{:>4} {:>18.4} {:>12} {:>6} {:>10}", "full", l, "-", "-", "-");
    }
    let _ = writeln!(
        s,
        "\nfitted d = {}; loglik = {:.4}; converged = {}; iterations = {}",
        fit.d,
        fit.loglik,
        if fit.converged { "yes" } else { "no" },
        fit.iterations
    );
    s
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let loaded = load_dataset(&a.data.input, a.data.response.as_deref())?;
    let data = &loaded.data;
    let (fit, full, trail, note) = match a.kind {
        FitKind::Pc | FitKind::Pfc => {
            let d = a
                .d
                .ok_or_else(|| CliError::input("--d is required for pc and pfc fits (selection tests the extended model)"))?;
            let fit = if a.kind == FitKind::Pc { fit_pc(data, d)? } else { fit_pfc_iso(data, a.basis, d)? };
            (fit, None, Vec::new(), String::new())
        }
        FitKind::Extended => {
            let problem = ExtendedProblem::new(data, a.basis)?;
            let o = opts(a.seed, a.random_starts);
            match a.d {
                Some(d) => {
                    let (test, ExtendedFit { fit, .. }) = problem.lrt(d, &o)?;
                    let trail = if d < data.p() { vec![test] } else { Vec::new() };
                    (fit, Some(problem.full_loglik()), trail, format!("d = {d} fixed by --d"))
                }
                None => {
                    let alpha = a.alpha.unwrap_or(0.05);
                    check_alpha(alpha)?;
                    let (d, trail) = select_dimension_in(&problem, alpha, &o)?;
                    let fit = problem.fit(d, &o)?.fit;
                    (fit, Some(problem.full_loglik()), trail, format!("selected d = {d} by sequential tests at alpha = {alpha}"))
                }
            }
        }
    };
    print!("{}", summary(data, &fit, full, &trail, &note));
    if let Some(out) = &a.out {
        let doc = ModelDocument::from_fit(&fit, data.y(), loaded.predictors.clone(), loaded.response.clone());
        emit(Some(out), &doc.to_json()?)?;
    }
    Ok(())
}

fn trail_csv(trail: &[TestResult]) -> String {
    let mut s = String::from("d,lambda,df,pvalue\n");
    for t in trail {
        let _ = writeln!(s, "{},{},{},{}", t.d, fmt_f64(t.lambda), t.df, fmt_f64(t.pvalue));
    }
    s
}

fn cmd_select_dim(a: SelectArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    let loaded = load_dataset(&a.data.input, a.data.response.as_deref())?;
    let problem = ExtendedProblem::new(&loaded.data, a.basis)?;
    let (d, trail) = select_dimension_in(&problem, a.alpha, &opts(a.seed, a.random_starts))?;
    emit(a.out.as_deref(), &trail_csv(&trail))?;
    if a.out.is_some() {
        println!("selected d = {d}");
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.model)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", a.model.display())))?;
    let doc = ModelDocument::from_json(&text)?;
    let pred = doc.predictor()?;
    let table = read_table(&a.input)?;
    let p = doc.p;

    // Columns by name when the header carries the model's predictors,
    // otherwise by position.
    let by_name: Option<Vec<usize>> =
        doc.predictors.iter().map(|n| table.headers.iter().position(|h| h == n)).collect();
    let (xcols, ycol) = match by_name {
        Some(cols) => {
            let y = match a.response.as_deref() {
                Some(r) => Some(table.response_index(Some(r))?),
                None => table.headers.iter().position(|h| *h == doc.response),
            };
            (cols, y)
        }
        None if table.ncols() == p && a.response.is_none() => ((0..p).collect(), None),
        None if table.ncols() == p + 1 => {
            let y = table.response_index(a.response.as_deref())?;
            ((0..=p).filter(|&j| j != y).collect(), Some(y))
        }
        None => {
            return Err(CliError::input(format!(
                "query has {} columns but the model has p = {p} predictors",
                table.ncols()
            )))
        }
    };
    let x = table.matrix(&xcols);
    let yhat = pred.predict(&x)?;
    let mut s = String::from("row,yhat");
    match ycol {
        None => {
            s.push('\n');
            for (i, v) in yhat.iter().enumerate() {
                let _ = writeln!(s, "{},{}", i + 1, fmt_f64(*v));
            }
        }
        Some(yj) => {
            let (res, reduced) = pred.residuals(&x, &table.column(yj))?;
            for k in 1..=reduced.ncols() {
                let _ = write!(s, ",reduced_{k}");
            }
            s = s.replacen("row,yhat", "row,yhat,residual", 1);
            s.push('\n');
            for i in 0..yhat.len() {
                let _ = write!(s, "{},{},{}", i + 1, fmt_f64(yhat[i]), fmt_f64(res[i]));
                for v in reduced.row(i).iter() {
                    let _ = write!(s, ",{}", fmt_f64(*v));
                }
                s.push('\n');
            }
        }
    }
    emit(a.out.as_deref(), &s)
}

fn parse_list<T: std::str::FromStr<Err = pfcr_core::Error>>(s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<T>().map_err(CliError::from))
        .collect()
}

fn parse_usizes(s: &str, flag: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::input(format!("{flag}: '{t}' is not a count"))))
        .collect()
}

enum Source {
    Forward(ForwardSim),
    Inverse(InverseSim),
}

fn preset(name: &str) -> CliResult<Source> {
    if name == "half-aligned" {
        return Ok(Source::Forward(ForwardSim::half_aligned()));
    }
    InverseSim::preset(name).map(Source::Inverse).map_err(|e| {
        CliError::input(format!("{e}; forward preset: half-aligned"))
    })
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let methods: Vec<Method> = parse_list(&a.methods)?;
    let metrics: Vec<Metric> = parse_list(&a.metric)?;
    if methods.is_empty() || metrics.is_empty() {
        return Err(CliError::input("--methods and --metric must name at least one entry"));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    match (&a.input, &a.preset) {
        (Some(path), _) => {
            let loaded = load_dataset(path, a.response.as_deref())?;
            let cfg = comparison_config(&a, methods, metrics, a.basis.unwrap_or(BasisSpec::Polynomial { degree: 3 }));
            rows = method_comparison(&loaded.data, &Truth::default(), &cfg)?;
        }
        (None, Some(name)) => {
            let source = preset(name)?;
            let default_spec = match &source {
                Source::Inverse(sim) => sim.spec,
                Source::Forward(_) => BasisSpec::Polynomial { degree: 1 },
            };
            let truth = match &source {
                Source::Inverse(sim) => Truth::of_inverse(sim)?,
                Source::Forward(sim) => Truth::of_forward(sim)?,
            };
            for rep in 0..a.reps {
                let seed = a.seed ^ rep as u64;
                let data = match &source {
                    Source::Inverse(sim) => sim.simulate(a.n, seed)?,
                    Source::Forward(sim) => sim.simulate(a.n, seed)?,
                };
                let mut cfg = comparison_config(&a, methods.clone(), metrics.clone(), a.basis.unwrap_or(default_spec));
                cfg.seed = seed;
                cfg.opts.seed = seed;
                for mut row in method_comparison(&data, &truth, &cfg)? {
                    row.rep = Some(rep);
                    row.params = format!("{};preset={name};n={}", row.params, a.n);
                    rows.push(row);
                }
            }
        }
        (None, None) => return Err(CliError::input("compare needs --input or --preset")),
    }
    emit(a.out.as_deref(), &report_csv(&rows))
}

fn comparison_config(a: &CompareArgs, methods: Vec<Method>, metrics: Vec<Metric>, spec: BasisSpec) -> ComparisonConfig {
    let mut cfg = ComparisonConfig::new(methods, metrics, a.d, spec);
    cfg.q = a.q.unwrap_or(a.d);
    cfg.screen = a.screen;
    cfg.seed = a.seed;
    cfg.opts = GrassmannOptions::with_seed(a.seed);
    cfg
}

fn cmd_simulate(s: SimulateCommand) -> CliResult<()> {
    match s {
        SimulateCommand::Forward(a) => {
            let Source::Forward(sim) = preset(&a.preset)? else {
                return Err(CliError::input(format!("'{}' is an inverse preset; use `simulate inverse`", a.preset)));
            };
            let data = sim.simulate(a.n, a.seed)?;
            emit(a.out.as_deref(), &dataset_csv(&data, &default_names(sim.p()), "y"))
        }
        SimulateCommand::Inverse(a) => {
            let Source::Inverse(sim) = preset(&a.preset)? else {
                return Err(CliError::input(format!("'{}' is a forward preset; use `simulate forward`", a.preset)));
            };
            let data = sim.simulate(a.n, a.seed)?;
            emit(a.out.as_deref(), &dataset_csv(&data, &default_names(sim.p()), "y"))
        }
        SimulateCommand::BiasVariance(a) => {
            let Source::Inverse(truth) = preset(&a.preset)? else {
                return Err(CliError::input("bias-variance needs an inverse preset"));
            };
            let p = truth.p();
            let n_grid = parse_usizes(&a.n, "--n")?;
            let d_grid = match &a.d_fit {
                Some(s) => parse_usizes(s, "--d-fit")?,
                None => (1..=p).collect(),
            };
            let cfg = BiasVarianceConfig::new(truth, n_grid, d_grid, a.reps, a.seed);
            let report = bias_variance_experiment(&cfg)?;
            let rows: Vec<ReportRow> = report
                .rows()
                .into_iter()
                .map(|mut r| {
                    r.params = format!("{};preset={}", r.params, a.preset);
                    r
                })
                .collect();
            emit(a.out.as_deref(), &report_csv(&rows))
        }
    }
}

fn cmd_diagnose(a: DiagnoseArgs) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::input(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let loaded = load_dataset(&a.data.input, a.data.response.as_deref())?;
    let rows = hetero_diag(&loaded.data, HeteroOptions { alpha: a.alpha, ..HeteroOptions::default() })?;
    let mut s = String::from("predictor,slope,slope_t,variance_stat,variance_pvalue,heteroscedastic,flagged\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            loaded.predictors[r.predictor],
            fmt_f64(r.slope),
            fmt_f64(r.slope_t),
            fmt_f64(r.variance_stat),
            fmt_f64(r.variance_pvalue),
            r.heteroscedastic,
            r.flagged
        );
    }
    emit(a.out.as_deref(), &s)
}
