//! `prevq`: train, apply and inspect prevalence-aware quadric classifiers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prevq_core::objective::PreparedData;
use prevq_core::optimizer::{
    homotopy_run_prepared, sigma_schedule_from_data, MinimizeOptions, DEFAULT_DECADES,
};
use prevq_core::pipeline::{
    export_boundary_contour, feature_names, fit_transform, population_bbox, read_model, read_table,
    read_test_csv, read_training_csv, write_convergence_report, write_model, write_numeric_csv,
    write_rows, LogShiftTransform, ModelFile,
};
use prevq_core::synth::{convergence_study, elisa_like, parabolic_mixture_with, rng_for};
use prevq_core::{
    default_q_grid, empirical_error, fit_levelsets, hyperplane_init, shadow_grid,
    two_pass_classify, uncertainty, BoundaryClassifier, Error, Family, Point, Quadric, Result,
    Test, Training,
};

#[derive(Parser, Debug)]
#[command(
    name = "prevq",
    version,
    about = "Prevalence-aware quadric classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a boundary at a fixed prevalence and write a model file.
    Train(TrainArgs),
    /// Apply a model to unlabelled data.
    Classify(ClassifyArgs),
    /// Estimate the prevalence of a test set and refit at that prevalence.
    Prevalence(PrevalenceArgs),
    /// Fit a non-crossing family of boundaries over a prevalence grid.
    Levelsets(LevelsetArgs),
    /// Generate synthetic data.
    Synth(SynthArgs),
    /// Run the Monte-Carlo convergence study.
    Converge(ConvergeArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Labelled training CSV.
    #[arg(long)]
    train: PathBuf,
    /// Name of the 0/1 label column.
    #[arg(long, default_value = "label")]
    label: String,
    /// Number of decades in the smoothing schedule (K + 1 stages).
    #[arg(long, default_value_t = DEFAULT_DECADES)]
    k: usize,
    /// Apply the log-shift transform fitted on the training negatives.
    #[arg(long)]
    log_shift: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Prevalence to fit at; defaults to the training prevalence.
    #[arg(long, value_parser = parse_unit)]
    q: Option<f64>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Boundary samples for contouring (2-D data only).
    #[arg(long)]
    contour: Option<PathBuf>,
    /// Contour grid points per axis.
    #[arg(long, default_value_t = 101)]
    resolution: usize,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV of measurements; a column named by --label is ignored.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "label")]
    label: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PrevalenceArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    test: PathBuf,
    /// Also write the model refitted at the estimated prevalence.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LevelsetArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Prevalence grid, as `start:stop:step` or a comma list.
    #[arg(long, value_parser = parse_grid)]
    q_grid: Option<Grid>,
    /// Shadow points per axis.
    #[arg(long, default_value_t = 10)]
    shadow: usize,
    /// Extra shadow point, comma separated coordinates; repeatable.
    #[arg(long = "shadow-point", value_parser = parse_point)]
    shadow_points: Vec<Vec<f64>>,
    /// Prevalence of the model's main boundary; defaults to the training prevalence.
    #[arg(long, value_parser = parse_unit)]
    q: Option<f64>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Directory for one contour CSV per level (2-D data only).
    #[arg(long)]
    contour_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    resolution: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Parabolic,
    Elisa,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    /// Probability that a row is positive.
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    q: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Kind::Parabolic)]
    kind: Kind,
    #[arg(long, default_value = "label")]
    label: String,
    /// Omit the label column.
    #[arg(long)]
    unlabeled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long, default_value_t = 5)]
    k_max: usize,
    #[arg(long, default_value_t = 25)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Grid(Vec<f64>);

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_point(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| format!("bad coordinate {c:?}"))
        })
        .collect()
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if let [start, stop, step] = parts[..] {
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number {x:?}"))
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        let valid =
            [start, stop, step].iter().all(|v| v.is_finite()) && step > 0.0 && start <= stop;
        if !valid {
            return Err("grid needs start <= stop and a positive step".into());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // round away accumulated drift so 0.1:0.9:0.2 yields 0.7, not 0.7000000000000001
        let at = |k: usize| ((start + step * k as f64) * 1e12).round() / 1e12;
        return Ok(Grid((0..=n).map(at).collect()));
    }
    parse_point(s).map(Grid)
}

fn load_training(fit: &FitArgs) -> Result<(Training, Option<LogShiftTransform>, Vec<String>)> {
    let raw = read_training_csv(&fit.train, &fit.label)?;
    let names = read_table(&fit.train, Some(&fit.label))?.feature_names;
    if !fit.log_shift {
        return Ok((raw, None, names));
    }
    let t = fit_transform(&raw)?;
    Ok((t.apply_training(&raw)?, Some(t), names))
}

fn error_of(phi: &Quadric, pop: &Training, q: f64) -> Result<f64> {
    empirical_error(&BoundaryClassifier::new(phi.clone()), pop, q)
}

fn train(args: &TrainArgs) -> Result<()> {
    let (pop, transform, names) = load_training(&args.fit)?;
    let q = args.q.unwrap_or_else(|| pop.training_prevalence());
    let phi0 = hyperplane_init(&pop)?;
    let schedule = sigma_schedule_from_data(&pop, args.fit.k)?;
    let data = PreparedData::new(&pop);
    let run = homotopy_run_prepared(&data, q, &phi0, &schedule, &MinimizeOptions::default())?;
    println!("q = {q}");
    println!("hyperplane error = {}", error_of(&phi0, &pop, q)?);
    println!("fitted error = {}", error_of(&run.final_params, &pop, q)?);
    println!(
        "stages converged = {}/{}",
        run.converged.iter().filter(|&&c| c).count(),
        run.converged.len()
    );
    let model = ModelFile::new(names, transform, q, &run.final_params, &schedule);
    write_model(&args.out, &model)?;
    if let Some(path) = &args.contour {
        export_boundary_contour(
            path,
            &BoundaryClassifier::new(run.final_params),
            population_bbox(&pop, 0.1)?,
            args.resolution,
        )?;
    }
    Ok(())
}

fn load_test(path: &Path, label: &str, transform: Option<&LogShiftTransform>) -> Result<Test> {
    let raw = read_test_csv(path, Some(label))?;
    match transform {
        Some(t) => t.apply_test(&raw),
        None => Ok(raw),
    }
}

fn classify(args: &ClassifyArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let clf = model.classifier()?;
    let family = model.family()?;
    let test = read_test_csv(&args.test, Some(&args.label))?;
    let mut header = vec!["row", "class", "B"];
    if family.is_some() {
        header.extend(["q_l", "q_h", "z_low", "z_high"]);
    }
    let mut rows = Vec::with_capacity(test.len());
    for (i, raw) in test.samples().iter().enumerate() {
        let r = model.prepare(raw)?;
        let b = clf.evaluate(&r)?;
        let class = clf.classify(&r)?;
        let mut row = vec![i as f64, f64::from(class.index()), b];
        if let Some(f) = &family {
            let u = uncertainty(f, &r, model.q, class)?;
            row.extend([u.q_l, u.q_h, u.z_low, u.z_high]);
        }
        rows.push(row);
    }
    match &args.out {
        Some(path) => write_numeric_csv(BufWriter::new(File::create(path)?), &header, rows),
        None => write_numeric_csv(io::stdout().lock(), &header, rows),
    }
}

fn prevalence(args: &PrevalenceArgs) -> Result<()> {
    let (pop, transform, names) = load_training(&args.fit)?;
    let test = load_test(&args.test, &args.fit.label, transform.as_ref())?;
    let (est, second) = two_pass_classify(&pop, &test, args.fit.k)?;
    println!("q_hat = {}", est.q_hat);
    println!("Q = {}", est.rates.q_tilde);
    println!("N = {}", est.rates.n_tilde);
    println!("P = {}", est.rates.p_tilde);
    println!("clamped = {}", est.clamped);
    if let Some(path) = &args.out {
        let schedule = sigma_schedule_from_data(&pop, args.fit.k)?;
        let model = ModelFile::new(names, transform, est.q_hat, &second.final_params, &schedule);
        write_model(path, &model)?;
    }
    Ok(())
}

fn levelsets(args: &LevelsetArgs) -> Result<()> {
    let (pop, transform, names) = load_training(&args.fit)?;
    let grid = args.q_grid.clone().map_or_else(default_q_grid, |g| g.0);
    let extra = args
        .shadow_points
        .iter()
        .map(|c| Point::new(c.clone()))
        .collect::<Result<Vec<_>>>()?;
    let shadow = shadow_grid(&pop, args.shadow, &extra)?;
    let schedule = sigma_schedule_from_data(&pop, args.fit.k)?;
    let family: Family = fit_levelsets(&pop, &grid, &shadow, &schedule)?;
    println!("levels = {}", family.levels());
    println!("shadow violation = {}", family.constraint_violation);
    println!("grid violations = {}", family.grid_violations);
    if let Err(e) = family.ensure_monotone() {
        eprintln!("warning: {}: {e}", e.name());
    }

    let q = args.q.unwrap_or_else(|| pop.training_prevalence());
    let data = PreparedData::new(&pop);
    let main = homotopy_run_prepared(
        &data,
        q,
        &hyperplane_init(&pop)?,
        &schedule,
        &MinimizeOptions::default(),
    )?;
    let model =
        ModelFile::new(names, transform, q, &main.final_params, &schedule).with_levelsets(&family);
    write_model(&args.out, &model)?;

    if let Some(dir) = &args.contour_dir {
        std::fs::create_dir_all(dir)?;
        let bbox = population_bbox(&pop, 0.1)?;
        for (q, phi) in family.q_grid.iter().zip(&family.params) {
            let path = dir.join(format!("level_{q:.4}.csv"));
            export_boundary_contour(
                path,
                &BoundaryClassifier::new(phi.clone()),
                bbox,
                args.resolution,
            )?;
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let label = (!args.unlabeled).then_some(args.label.as_str());
    match args.kind {
        Kind::Parabolic => {
            let data = parabolic_mixture_with(&mut rng_for(args.seed, 0), args.n, args.q)?;
            let labels = data.true_labels().expect("mixture is labelled");
            let rows = data.samples().iter().zip(labels.iter().map(|&c| Some(c)));
            write_rows(&args.out, &feature_names(2), label, rows)
        }
        Kind::Elisa => {
            let n_pos = (args.q * args.n as f64).round() as usize;
            let pop = elisa_like(args.n - n_pos, n_pos, args.seed)?;
            let rows = pop.iter().map(|(c, r)| (r, Some(c)));
            write_rows(&args.out, &feature_names(2), label, rows)
        }
    }
}

fn converge(args: &ConvergeArgs) -> Result<()> {
    let report = convergence_study(args.k_max, args.replicates, args.seed)?;
    for (s, v) in report.sample_sizes.iter().zip(&report.mean_sq_frobenius) {
        println!("S = {s}: mean squared distance {v}");
    }
    println!("slope = {}", report.slope);
    write_convergence_report(&args.out, &report)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Classify(a) => classify(a),
        Command::Prevalence(a) => prevalence(a),
        Command::Levelsets(a) => levelsets(a),
        Command::Synth(a) => synth(a),
        Command::Converge(a) => converge(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli);
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (e.g. `| head`) is not a failure
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
