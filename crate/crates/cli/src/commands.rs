use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fwdshape::backtest::{backtest, BacktestConfig, ComparisonTable, OutOfSample};
use fwdshape::calendar::{DeliveryPeriod, Granularity};
use fwdshape::constraints::{arbitrage_gap, build_constraints, GranularitySplit, SplitConfig};
use fwdshape::dataset::Dataset;
use fwdshape::estimator::{outlier_report, AlphaPolicy, FitConfig, FitReport};
use fwdshape::market::{build_regression_dataset, QuoteTable};
use fwdshape::methods::MethodRegistry;
use fwdshape::robust::{ScaleEstimator, WeightFunctionSpec};
use fwdshape::shaper::{recalibrate_with_traded, write_curve_csv, MatchMode, ShapingCascade, TradedFix};
use fwdshape::synthetic::{synthesize_market, Contamination, SyntheticMarketConfig};

use crate::{
    AlphaArg, BacktestCommand, CheckCommand, Command, ContaminationArg, DataArgs, FitArgs, FitCommand, MatchArg,
    OutliersCommand, PredictCommand, Scale, SimulateCommand, WeightFn,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Invalid flag combinations detected after parsing.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.chain().find_map(|e| e.downcast_ref::<fwdshape::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(fwdshape::Error::InvalidConfig(_) | fwdshape::Error::UnknownMethod(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(c) => fit(c),
        Command::Predict(c) => predict(c),
        Command::Backtest(c) => run_backtest(c),
        Command::Outliers(c) => outliers(c),
        Command::CheckArbitrage(c) => check_arbitrage(c),
        Command::Simulate(c) => simulate(c),
    }
}

fn write_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            body(&mut w)?;
            w.flush().with_context(|| format!("cannot write {}", p.display()))?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

struct Inputs {
    table: QuoteTable,
    split: GranularitySplit,
    split_name: Option<String>,
}

fn load_inputs(data: &DataArgs) -> Result<Inputs> {
    let table = QuoteTable::from_path(&data.quotes).context("loading quotes")?;
    let config = SplitConfig::from_toml(&read_text(&data.split)?)
        .with_context(|| format!("parsing split config {}", data.split.display()))?;
    let split = config.to_split().with_context(|| format!("building split from {}", data.split.display()))?;
    Ok(Inputs { table, split, split_name: config.name })
}

fn assemble(table: &QuoteTable, split: &GranularitySplit) -> Result<Dataset> {
    let (dataset, report) = build_regression_dataset(table, split).context("assembling regression rows")?;
    if report.dropped > 0 {
        eprintln!("dropped {} of {} rows with missing children {:?}", report.dropped, report.candidates, report.missing_by_child);
    }
    Ok(dataset)
}

fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    let weight_spec = match args.weight_fn {
        WeightFn::Hampel => match args.hampel.as_deref() {
            Some([a, b, r]) => WeightFunctionSpec::Hampel { a: *a, b: *b, r: *r },
            _ => WeightFunctionSpec::hampel(),
        },
        WeightFn::Bisquare => args.bisquare_k.map_or_else(WeightFunctionSpec::bisquare, |k| WeightFunctionSpec::Bisquare { k }),
    };
    let config = FitConfig {
        weight_spec,
        alpha: match args.alpha {
            AlphaArg::Auto => AlphaPolicy::Auto { multiplier: args.alpha_multiplier },
            AlphaArg::Fixed(a) => AlphaPolicy::Fixed(a),
        },
        scale_estimator: match args.scale {
            Scale::Mad => ScaleEstimator::Mad,
            Scale::Qn => ScaleEstimator::Qn,
        },
        tolerance: args.tolerance,
        max_iterations: args.max_iterations,
        feasibility_escalations: args.escalations,
        gap_tolerance: args.gap_tol,
        ..FitConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn child_index(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l.eq_ignore_ascii_case(label))
        .ok_or_else(|| usage(format!("unknown child `{label}`; split children are {}", labels.join(", "))))
}

fn parse_fixes(cmd: &FitCommand, labels: &[String]) -> Result<BTreeMap<usize, TradedFix>> {
    let mode = match cmd.match_mode {
        MatchArg::KeepIntercept => MatchMode::KeepIntercept,
        MatchArg::KeepSlope => MatchMode::KeepSlope,
    };
    let mut fixes = BTreeMap::new();
    for pin in &cmd.pins {
        let bad = || usage(format!("--pin expects LABEL=A,B, got `{pin}`"));
        let (label, rest) = pin.split_once('=').ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let fix = TradedFix::Coefficients {
            slope: a.trim().parse().map_err(|_| bad())?,
            intercept: b.trim().parse().map_err(|_| bad())?,
        };
        fixes.insert(child_index(labels, label.trim())?, fix);
    }
    for traded in &cmd.traded {
        let bad = || usage(format!("--traded expects LABEL=PRICE@PARENT, got `{traded}`"));
        let (label, rest) = traded.split_once('=').ok_or_else(bad)?;
        let (price, parent) = rest.split_once('@').ok_or_else(bad)?;
        let fix = TradedFix::MarketPrice {
            price: price.trim().parse().map_err(|_| bad())?,
            parent_price: parent.trim().parse().map_err(|_| bad())?,
            mode,
        };
        if fixes.insert(child_index(labels, label.trim())?, fix).is_some() {
            return Err(usage(format!("child `{label}` is fixed twice")));
        }
    }
    Ok(fixes)
}

fn fit(cmd: FitCommand) -> Result<()> {
    let inputs = load_inputs(&cmd.data)?;
    let config = fit_config(&cmd.fit)?;
    let labels = inputs.split.labels();
    let fixes = parse_fixes(&cmd, &labels)?;
    let table = match (cmd.from, cmd.to) {
        (None, None) => inputs.table,
        (from, to) => inputs.table.filter_dates(&(from.unwrap_or(chrono::NaiveDate::MIN)..=to.unwrap_or(chrono::NaiveDate::MAX))),
    };
    let dataset = assemble(&table, &inputs.split)?;
    let system = build_constraints(&inputs.split);
    let result = if fixes.is_empty() {
        let method = MethodRegistry::with_defaults().get(&cmd.method)?;
        method.fit(&dataset, &system, &config)?
    } else {
        if cmd.method != "mcrm" {
            return Err(usage("--pin and --traded recalibrate the robust fit; use --method mcrm"));
        }
        recalibrate_with_traded(&dataset, &system, &config, &fixes)?
    }
    .with_labels(labels);
    if !result.converged {
        eprintln!("warning: no convergence after {} iterations", result.iterations);
    }
    eprintln!(
        "{}: {} cases, {} iterations, max arbitrage gap {:.3e}",
        result.method,
        dataset.n(),
        result.iterations,
        result.arbitrage_gap_maxabs
    );
    let json = result.report(inputs.split_name.as_deref()).to_json()?;
    write_output(cmd.out.as_deref(), |w| Ok(writeln!(w, "{json}")?))
}

fn read_report(path: &Path) -> Result<FitReport> {
    FitReport::from_json(&read_text(path)?).with_context(|| format!("parsing fit report {}", path.display()))
}

fn predict(cmd: PredictCommand) -> Result<()> {
    let mut cascade = ShapingCascade::from_toml(&read_text(&cmd.cascade)?)
        .with_context(|| format!("parsing cascade {}", cmd.cascade.display()))?;
    if let Some(path) = &cmd.coeffs {
        let report = read_report(path)?;
        let name = match &cmd.level {
            Some(n) => n.clone(),
            None => cascade.levels.first().map(|l| l.name.clone()).ok_or_else(|| usage("cascade has no levels"))?,
        };
        let level = cascade.level_mut(&name).ok_or_else(|| usage(format!("cascade has no level `{name}`")))?;
        for (label, (a, b)) in report.coefficient_map() {
            level.coefficients.insert(label, [a, b]);
        }
    }
    let target: DeliveryPeriod = cmd.target.parse().map_err(|e| usage(format!("--target: {e}")))?;
    let root = match &cmd.root {
        Some(code) => code.parse().map_err(|e| usage(format!("--root: {e}")))?,
        None => DeliveryPeriod::containing(target.start, cascade.root)?,
    };
    let curve = match &cmd.granularity {
        None => vec![(target, cascade.cascade(&root, cmd.parent_price, &target)?)],
        Some(g) => {
            let g: Granularity = g.parse().map_err(|e| usage(format!("--granularity: {e}")))?;
            let curve = cascade.shape_curve(&root, cmd.parent_price, g)?;
            let inside: Vec<_> = curve.into_iter().filter(|(p, _)| target.contains(p)).collect();
            if inside.is_empty() {
                bail!(fwdshape::Error::NoShapingPath(format!("no {g} periods inside {target}")));
            }
            inside
        }
    };
    write_output(cmd.out.as_deref(), |w| Ok(write_curve_csv(&curve, w)?))
}

fn run_backtest(cmd: BacktestCommand) -> Result<()> {
    let inputs = load_inputs(&cmd.data)?;
    let config = BacktestConfig {
        train: cmd.train.0..=cmd.train.1,
        test: cmd.test.0..=cmd.test.1,
        methods: cmd.methods.clone(),
        fit: fit_config(&cmd.fit)?,
        out_of_sample: if cmd.expanding { OutOfSample::Expanding } else { OutOfSample::Frozen },
    };
    let outcomes = backtest(&inputs.table, &inputs.split, &MethodRegistry::with_defaults(), &config)?;
    let table = ComparisonTable::from_outcomes(&outcomes);
    for row in &table.rows {
        eprintln!(
            "{:<24} in MedSE {:>10.5}  out MedSE {:>10.5}  out MeanAE {:>10.5}",
            row.method, row.in_med_se, row.out_med_se, row.out_mean_ae
        );
    }
    write_output(cmd.out.as_deref(), |w| Ok(table.write_csv(w)?))
}

fn outliers(cmd: OutliersCommand) -> Result<()> {
    if !(cmd.threshold > 0.0 && cmd.threshold <= 1.0) {
        return Err(usage(format!("--threshold must be in (0, 1], got {}", cmd.threshold)));
    }
    let inputs = load_inputs(&cmd.data)?;
    let config = fit_config(&cmd.fit)?;
    let dataset = assemble(&inputs.table, &inputs.split)?;
    let system = build_constraints(&inputs.split);
    let result = MethodRegistry::with_defaults().get("mcrm")?.fit(&dataset, &system, &config)?;
    let flagged = outlier_report(&result, cmd.threshold);
    eprintln!("{} of {} cases below weight {}", flagged.len(), dataset.n(), cmd.threshold);
    write_output(cmd.out.as_deref(), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["case_id", "weight"])?;
        for (id, weight) in &flagged {
            csv.write_record([id.clone(), weight.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    if let Some(path) = &cmd.plot_data {
        let labels = inputs.split.labels();
        write_output(Some(path), |w| {
            let mut csv = csv::Writer::from_writer(w);
            let mut header = vec!["case_id".to_string(), "weight".into(), "x".into()];
            header.extend(labels.iter().map(|l| format!("y_{l}")));
            header.push("flag".into());
            csv.write_record(&header)?;
            for i in 0..dataset.n() {
                let weight = result.case_weights[i];
                let mut record = vec![dataset.case_ids()[i].clone(), weight.to_string(), dataset.x()[i].to_string()];
                record.extend(dataset.row(i).iter().map(f64::to_string));
                record.push(u8::from(weight < cmd.threshold).to_string());
                csv.write_record(&record)?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    Ok(())
}

fn check_arbitrage(cmd: CheckCommand) -> Result<()> {
    let config = SplitConfig::from_toml(&read_text(&cmd.split)?)
        .with_context(|| format!("parsing split config {}", cmd.split.display()))?;
    let split = config.to_split()?;
    let gamma = match (&cmd.coeffs, &cmd.gamma) {
        (Some(path), _) => read_report(path)?.gamma,
        (None, Some(g)) => g.clone(),
        (None, None) => return Err(usage("pass --coeffs or --gamma")),
    };
    let system = build_constraints(&split);
    let gaps = arbitrage_gap(&system, &gamma)?;
    let max = gaps.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    println!("slope_row_gap,{:.6e}", gaps[0]);
    println!("intercept_row_gap,{:.6e}", gaps[1]);
    println!("max_abs_gap,{max:.6e}");
    if max > cmd.tol {
        bail!(fwdshape::Error::ArbitrageViolation {
            level: config.name.unwrap_or_else(|| split.parent.code()),
            gap: max,
            tolerance: cmd.tol,
        });
    }
    Ok(())
}

fn simulate(cmd: SimulateCommand) -> Result<()> {
    let mut config: SyntheticMarketConfig = match &cmd.config {
        Some(path) => toml::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => SyntheticMarketConfig::default(),
    };
    if let Some(v) = cmd.seed {
        config.seed = v;
    }
    if let Some(v) = cmd.n_dates {
        config.n_dates = v;
    }
    if let Some(v) = cmd.clean_tail {
        config.clean_tail = v;
    }
    if let Some(v) = cmd.fraction {
        config.fraction = v;
    }
    if let Some(v) = cmd.magnitude {
        config.magnitude = v;
    }
    if let Some(v) = &cmd.noise {
        config.noise = v.clone();
    }
    if let Some(v) = &cmd.gamma {
        config.gamma = v.clone();
    }
    if let Some(c) = cmd.contamination {
        config.contamination = match c {
            ContaminationArg::Vertical => Contamination::Vertical,
            ContaminationArg::Leverage => Contamination::Leverage,
        };
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let market = synthesize_market(&config)?;
    write_output(cmd.out.as_deref(), |w| Ok(market.table.write_csv(w)?))?;
    if let Some(path) = &cmd.labels {
        write_labels(path, &market.labels)?;
    }
    eprintln!("{} quotes, {} contaminated cases", market.table.len(), market.contaminated_ids().len());
    Ok(())
}

fn write_labels(path: &Path, labels: &BTreeMap<String, bool>) -> Result<()> {
    write_output(Some(path), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["case_id", "contaminated"])?;
        for (id, flag) in labels {
            csv.write_record([id.as_str(), if *flag { "1" } else { "0" }])?;
        }
        csv.flush()?;
        Ok(())
    })
}
