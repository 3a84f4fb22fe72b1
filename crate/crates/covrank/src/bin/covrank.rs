//! Command-line surface: dataset generation and ingestion, matrix
//! inspection, SBFL scoring, embedding dumps, training, localization,
//! evaluation, feature-map export, and an end-to-end pipeline.
//!
//! Exit codes: 2 configuration, 3 data, 4 training, 5 evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use covrank::dataset::{load_dataset, save_dataset, BugRecord, Dataset, MethodRecord, Outcome};
use covrank::ee::{enhance_matrix, order_tests};
use covrank::engine::features::{build_features, prepared_matrix, Toggles};
use covrank::engine::harness::{ablate, run_cross_project, run_leave_one_out, Level};
use covrank::engine::models::{load_models, localize_methods, localize_statements, save_models, train_models, TrainedModels};
use covrank::engine::{EvalReport, PipelineConfig};
use covrank::matrix::build_spectrum_matrix;
use covrank::sbfl;
use covrank::synth::{generate_benchmark, BenchmarkConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_EVALUATION: u8 = 5;

#[derive(Debug)]
struct AppError {
    code: u8,
    message: String,
}

type AppResult<T> = Result<T, AppError>;

trait Phase<T> {
    fn phase(self, code: u8) -> AppResult<T>;
}

impl<T, E: std::fmt::Display> Phase<T> for Result<T, E> {
    fn phase(self, code: u8) -> AppResult<T> {
        self.map_err(|e| AppError { code, message: e.to_string() })
    }
}

/// Full run configuration; serialized next to every model and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    pipeline: PipelineConfig,
    level: LevelArg,
    /// Benchmark generation settings used by `generate` and `pipeline`.
    bugs: usize,
    tests: usize,
    distractors: usize,
    project: String,
}

impl RunConfig {
    fn desk() -> RunConfig {
        RunConfig {
            pipeline: PipelineConfig::desk(),
            level: LevelArg::Method,
            bugs: 6,
            tests: 6,
            distractors: 2,
            project: "synthetic".to_string(),
        }
    }

    fn thorough() -> RunConfig {
        RunConfig {
            pipeline: PipelineConfig::thorough(),
            bugs: 20,
            tests: 10,
            distractors: 4,
            ..RunConfig::desk()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum LevelArg {
    Stmt,
    Method,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Stmt => Level::Statement,
            LevelArg::Method => Level::Method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Thorough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormulaArg {
    Ochiai,
    Dstar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Loo,
    Cross,
}

#[derive(Parser)]
#[command(name = "covrank", version, about = "Coverage-based fault localization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic benchmark dataset (fl-dataset/v1 JSON).
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        bugs: usize,
        #[arg(long, default_value_t = 6)]
        tests: usize,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        #[arg(long, default_value = "synthetic")]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset file and print a summary; optionally re-emit it in
    /// canonical form.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one method's enhanced, ordered coverage matrix ({.,#,*} rows).
    Order {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long)]
        method: String,
    },
    /// Rank one method's statements with an SBFL formula (CSV output).
    ScoreSbfl {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long)]
        method: String,
        #[arg(long, value_enum)]
        formula: FormulaArg,
        #[arg(long, default_value_t = 2)]
        star: u32,
    },
    /// Dump one method's statement-dependency vectors as CSV.
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
    },
    /// Train localization models on every bug in a dataset.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = LevelArg::Method)]
        level: LevelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank a bug's elements with a trained model directory (CSV output).
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long, value_enum, default_value_t = LevelArg::Method)]
        level: LevelArg,
    },
    /// Leave-one-out or cross-project evaluation; prints JSON and a table.
    Evaluate {
        /// Dataset files; `cross` holds out each file's project in turn.
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProtocolArg::Loo)]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value_t = LevelArg::Method)]
        level: LevelArg,
        /// Run toggle ablations: comma-separated names from
        /// {full,base,no-order,no-ee,no-dep,no-mut,no-code,no-sim}.
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-filter feature maps and the input matrix as PGM images.
    Featmap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train, and evaluate in one run; writes report.json.
    Pipeline {
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_run_config(preset: PresetArg, config: Option<&Path>, seed: Option<u64>) -> AppResult<RunConfig> {
    let mut rc = match preset {
        PresetArg::Desk => RunConfig::desk(),
        PresetArg::Thorough => RunConfig::thorough(),
    };
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| covrank::CovrankError::io(path.display().to_string(), e))
            .phase(EXIT_CONFIG)?;
        rc = serde_json::from_str(&text).phase(EXIT_CONFIG)?;
    }
    if let Some(seed) = seed {
        rc.pipeline.seed = seed;
    }
    rc.pipeline.validate().phase(EXIT_CONFIG)?;
    Ok(rc)
}

fn write_config_snapshot(rc: &RunConfig, dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| covrank::CovrankError::io(dir.display().to_string(), e))
        .phase(EXIT_CONFIG)?;
    let path = dir.join("run_config.json");
    let json = serde_json::to_string_pretty(rc).phase(EXIT_CONFIG)?;
    std::fs::write(&path, json + "\n")
        .map_err(|e| covrank::CovrankError::io(path.display().to_string(), e))
        .phase(EXIT_CONFIG)?;
    Ok(())
}

fn load_data(path: &Path) -> AppResult<Dataset> {
    load_dataset(path).phase(EXIT_DATA)
}

fn find_bug<'a>(ds: &'a Dataset, bug_id: &str) -> AppResult<&'a BugRecord> {
    ds.bugs.iter().find(|b| b.bug_id == bug_id).ok_or_else(|| AppError {
        code: EXIT_DATA,
        message: format!("bug {bug_id} not found in {}", ds.project),
    })
}

fn find_method<'a>(bug: &'a BugRecord, method_id: &str) -> AppResult<&'a MethodRecord> {
    bug.methods
        .iter()
        .find(|m| m.method_id == method_id)
        .ok_or_else(|| AppError {
            code: EXIT_DATA,
            message: format!("method {method_id} not found in bug {}", bug.bug_id),
        })
}

fn cmd_generate(
    seed: u64,
    bugs: usize,
    tests: usize,
    distractors: usize,
    project: String,
    out: &Path,
) -> AppResult<()> {
    let cfg = BenchmarkConfig {
        seed,
        n_bugs: bugs,
        tests_per_bug: tests,
        distractors,
        project,
        ..Default::default()
    };
    let ds = generate_benchmark(&cfg).phase(EXIT_DATA)?;
    save_dataset(&ds, out).phase(EXIT_DATA)?;
    println!("wrote {} bugs to {}", ds.bugs.len(), out.display());
    Ok(())
}

fn cmd_ingest(input: &Path, out: Option<&Path>) -> AppResult<()> {
    let ds = load_data(input)?;
    let methods: usize = ds.bugs.iter().map(|b| b.methods.len()).sum();
    let stmts: usize = ds
        .bugs
        .iter()
        .flat_map(|b| &b.methods)
        .map(|m| m.statements.len())
        .sum();
    println!(
        "project {}: {} bugs, {} methods, {} statements",
        ds.project,
        ds.bugs.len(),
        methods,
        stmts
    );
    if let Some(out) = out {
        save_dataset(&ds, out).phase(EXIT_DATA)?;
        println!("canonical copy written to {}", out.display());
    }
    Ok(())
}

fn cmd_order(input: &Path, bug: &str, method: &str) -> AppResult<()> {
    let ds = load_data(input)?;
    let method = find_method(find_bug(&ds, bug)?, method)?;
    let matrix = build_spectrum_matrix(method);
    let matrix = enhance_matrix(&matrix, method).phase(EXIT_DATA)?;
    let matrix = order_tests(&matrix);
    print!("{}", matrix.render());
    Ok(())
}

fn cmd_score_sbfl(
    input: &Path,
    bug: &str,
    method: &str,
    formula: FormulaArg,
    star: u32,
) -> AppResult<()> {
    let ds = load_data(input)?;
    let method = find_method(find_bug(&ds, bug)?, method)?;
    let matrix = build_spectrum_matrix(method);
    let outcomes: Vec<Outcome> = method.tests.iter().map(|t| t.outcome).collect();
    let counts = sbfl::counts(&matrix, &outcomes);
    let scores: Vec<f64> = counts
        .iter()
        .map(|c| match formula {
            FormulaArg::Ochiai => sbfl::ochiai(c),
            FormulaArg::Dstar => sbfl::dstar(c, star),
        })
        .collect();
    let ranked = sbfl::rank_by_score(&scores);
    println!("stmt_id,line,score,rank");
    for s in &method.statements {
        let rank = sbfl::rank_of(&ranked, s.stmt_id).unwrap_or(f64::NAN);
        println!("{},{},{:.6},{}", s.stmt_id, s.line, scores[s.stmt_id], rank);
    }
    Ok(())
}

fn cmd_embed(input: &Path, bug: &str, method: &str, seed: u64, preset: PresetArg) -> AppResult<()> {
    let ds = load_data(input)?;
    let method = find_method(find_bug(&ds, bug)?, method)?;
    let mut cfg = match preset {
        PresetArg::Desk => PipelineConfig::desk(),
        PresetArg::Thorough => PipelineConfig::thorough(),
    };
    cfg.seed = seed;
    let vectors = covrank::engine::features::statement_dependency_table(method, &cfg, seed)
        .phase(EXIT_TRAINING)?;
    let header: Vec<String> = (0..cfg.embed_dim).map(|i| format!("v{i}")).collect();
    println!("stmt_id,{}", header.join(","));
    for v in &vectors {
        let cells: Vec<String> = v.vec.iter().map(|x| format!("{x:.6}")).collect();
        println!("{},{}", v.stmt_id, cells.join(","));
    }
    Ok(())
}

fn cmd_train(
    input: &Path,
    out: &Path,
    level: LevelArg,
    seed: u64,
    preset: PresetArg,
    config: Option<&Path>,
) -> AppResult<()> {
    let mut rc = load_run_config(preset, config, Some(seed))?;
    rc.level = level;
    let ds = load_data(input)?;
    let feats = build_features(&ds, &rc.pipeline).phase(EXIT_TRAINING)?;
    let train_bugs: Vec<_> = feats.bugs.iter().collect();
    let models = train_models(&train_bugs, &rc.pipeline, rc.pipeline.seed).phase(EXIT_TRAINING)?;
    save_models(&models, out).phase(EXIT_TRAINING)?;
    write_config_snapshot(&rc, out)?;
    println!("trained on {} bugs; models in {}", feats.bugs.len(), out.display());
    Ok(())
}

fn cmd_localize(model: &Path, input: &Path, bug_id: &str, level: LevelArg) -> AppResult<()> {
    let models: TrainedModels = load_models(model).phase(EXIT_DATA)?;
    let ds = load_data(input)?;
    let bug = find_bug(&ds, bug_id)?;
    let single = Dataset::new(ds.project.clone(), vec![bug.clone()]);
    let feats = build_features(&single, &models.cfg).phase(EXIT_EVALUATION)?;
    let bf = &feats.bugs[0];
    let ranking = match level {
        LevelArg::Stmt => localize_statements(&models, bf),
        LevelArg::Method => localize_methods(&models, bf),
    }
    .phase(EXIT_EVALUATION)?;
    match level {
        LevelArg::Stmt => println!("stmt_index,score,rank"),
        LevelArg::Method => println!("method_index,score,rank"),
    }
    for item in &ranking.items {
        println!("{},{:.6},{}", item.id, item.score, item.rank);
    }
    Ok(())
}

fn ablation_variants(spec: &str) -> AppResult<Vec<(String, Toggles)>> {
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let toggles = match name {
            "full" => Toggles::all_on(),
            "base" => Toggles::all_off(),
            "no-order" => Toggles { ordering: false, ..Toggles::all_on() },
            "no-ee" => Toggles { ee_marks: false, ..Toggles::all_on() },
            "no-dep" => Toggles { stat_dep: false, ..Toggles::all_on() },
            "no-mut" => Toggles { mutation: false, ..Toggles::all_on() },
            "no-code" => Toggles { code_rep: false, ..Toggles::all_on() },
            "no-sim" => Toggles { text_sim: false, ..Toggles::all_on() },
            other => {
                return Err(AppError {
                    code: EXIT_CONFIG,
                    message: format!("unknown ablation variant: {other}"),
                })
            }
        };
        out.push((name.to_string(), toggles));
    }
    if out.is_empty() {
        return Err(AppError {
            code: EXIT_CONFIG,
            message: "empty ablation list".to_string(),
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    input: &[PathBuf],
    protocol: ProtocolArg,
    level: LevelArg,
    ablate_spec: Option<&str>,
    seed: u64,
    preset: PresetArg,
    config: Option<&Path>,
    out: Option<&Path>,
) -> AppResult<()> {
    let mut rc = load_run_config(preset, config, Some(seed))?;
    rc.level = level;
    let datasets: AppResult<Vec<Dataset>> = input.iter().map(|p| load_data(p)).collect();
    let datasets = datasets?;
    if let Some(spec) = ablate_spec {
        let variants = ablation_variants(spec)?;
        if datasets.len() != 1 {
            return Err(AppError {
                code: EXIT_CONFIG,
                message: "ablation runs take exactly one dataset".to_string(),
            });
        }
        let outcome = ablate(&datasets[0], level.into(), &rc.pipeline, &variants)
            .phase(EXIT_EVALUATION)?;
        println!("{}", serde_json::to_string_pretty(&outcome).phase(EXIT_EVALUATION)?);
        print!("{}", outcome.render_table());
        return Ok(());
    }
    let report: EvalReport = match protocol {
        ProtocolArg::Loo => {
            if datasets.len() != 1 {
                return Err(AppError {
                    code: EXIT_CONFIG,
                    message: "leave-one-out takes exactly one dataset".to_string(),
                });
            }
            run_leave_one_out(&datasets[0], level.into(), &rc.pipeline).phase(EXIT_EVALUATION)?
        }
        ProtocolArg::Cross => {
            run_cross_project(&datasets, level.into(), &rc.pipeline).phase(EXIT_EVALUATION)?
        }
    };
    let json = serde_json::to_string_pretty(&report).phase(EXIT_EVALUATION)?;
    println!("{json}");
    print!("{}", report.render_table());
    if let Some(dir) = out {
        write_config_snapshot(&rc, dir)?;
        let path = dir.join("report.json");
        std::fs::write(&path, json + "\n")
            .map_err(|e| covrank::CovrankError::io(path.display().to_string(), e))
            .phase(EXIT_EVALUATION)?;
    }
    Ok(())
}

/// P5 PGM writer: binary grayscale with maxval 255.
fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> AppResult<()> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes)
        .map_err(|e| covrank::CovrankError::io(path.display().to_string(), e))
        .phase(EXIT_EVALUATION)
}

/// Min-max normalize to [0,255]; a constant map degenerates to all 128.
fn normalize_to_bytes(values: &[f64]) -> Vec<u8> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_normal() {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - min) / (max - min) * 255.0).round() as u8)
        .collect()
}

fn cmd_featmap(model: &Path, input: &Path, bug: &str, method: &str, out: &Path) -> AppResult<()> {
    let models = load_models(model).phase(EXIT_DATA)?;
    let ds = load_data(input)?;
    let method = find_method(find_bug(&ds, bug)?, method)?;
    std::fs::create_dir_all(out)
        .map_err(|e| covrank::CovrankError::io(out.display().to_string(), e))
        .phase(EXIT_EVALUATION)?;

    // Input matrix image: 0 -> white, 1 -> dark gray, -1 -> black.
    let matrix = prepared_matrix(method, &models.cfg.toggles).phase(EXIT_DATA)?;
    let mut pixels = Vec::with_capacity(matrix.rows * matrix.cols);
    for i in 0..matrix.rows {
        for pos in 0..matrix.cols {
            pixels.push(match matrix.get_ordered(i, pos) {
                1 => 64u8,
                -1 => 0,
                _ => 255,
            });
        }
    }
    write_pgm(&out.join("matrix.pgm"), matrix.cols, matrix.rows, &pixels)?;

    // One image per filter of the method spectrum channel.
    let single = Dataset::new(ds.project.clone(), vec![find_bug(&ds, bug)?.clone()]);
    let feats = build_features(&single, &models.cfg).phase(EXIT_EVALUATION)?;
    let mf = feats.bugs[0]
        .methods
        .iter()
        .find(|m| m.method_id == method.method_id)
        .expect("method present in features");
    let maps = models.method_spectrum.feature_maps(&mf.spectrum).phase(EXIT_EVALUATION)?;
    for (i, map) in maps.iter().enumerate() {
        let (h, w) = (map.shape[0], map.shape[1]);
        let bytes = normalize_to_bytes(&map.data);
        write_pgm(&out.join(format!("filter_{i}.pgm")), w, h, &bytes)?;
    }
    println!("wrote {} filter maps + matrix.pgm to {}", maps.len(), out.display());
    Ok(())
}

fn cmd_pipeline(preset: PresetArg, config: Option<&Path>, seed: Option<u64>, out: &Path) -> AppResult<()> {
    let rc = load_run_config(preset, config, seed)?;
    write_config_snapshot(&rc, out)?;

    let bench = BenchmarkConfig {
        seed: rc.pipeline.seed,
        n_bugs: rc.bugs,
        tests_per_bug: rc.tests,
        distractors: rc.distractors,
        project: rc.project.clone(),
        ..Default::default()
    };
    let ds = generate_benchmark(&bench).phase(EXIT_DATA)?;
    save_dataset(&ds, &out.join("dataset.json")).phase(EXIT_DATA)?;

    let feats = build_features(&ds, &rc.pipeline).phase(EXIT_TRAINING)?;
    let train_bugs: Vec<_> = feats.bugs.iter().collect();
    let models = train_models(&train_bugs, &rc.pipeline, rc.pipeline.seed).phase(EXIT_TRAINING)?;
    save_models(&models, &out.join("models")).phase(EXIT_TRAINING)?;

    let report = run_leave_one_out(&ds, rc.level.into(), &rc.pipeline).phase(EXIT_EVALUATION)?;
    let json = serde_json::to_string_pretty(&report).phase(EXIT_EVALUATION)?;
    let path = out.join("report.json");
    std::fs::write(&path, json.clone() + "\n")
        .map_err(|e| covrank::CovrankError::io(path.display().to_string(), e))
        .phase(EXIT_EVALUATION)?;
    print!("{}", report.render_table());
    println!("artifacts in {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.cmd {
        Cmd::Generate { seed, bugs, tests, distractors, project, out } => {
            cmd_generate(seed, bugs, tests, distractors, project, &out)
        }
        Cmd::Ingest { input, out } => cmd_ingest(&input, out.as_deref()),
        Cmd::Order { input, bug, method } => cmd_order(&input, &bug, &method),
        Cmd::ScoreSbfl { input, bug, method, formula, star } => {
            cmd_score_sbfl(&input, &bug, &method, formula, star)
        }
        Cmd::Embed { input, bug, method, seed, preset } => {
            cmd_embed(&input, &bug, &method, seed, preset)
        }
        Cmd::Train { input, out, level, seed, preset, config } => {
            cmd_train(&input, &out, level, seed, preset, config.as_deref())
        }
        Cmd::Localize { model, input, bug, level } => cmd_localize(&model, &input, &bug, level),
        Cmd::Evaluate { input, protocol, level, ablate, seed, preset, config, out } => cmd_evaluate(
            &input,
            protocol,
            level,
            ablate.as_deref(),
            seed,
            preset,
            config.as_deref(),
            out.as_deref(),
        ),
        Cmd::Featmap { model, input, bug, method, out } => {
            cmd_featmap(&model, &input, &bug, &method, &out)
        }
        Cmd::Pipeline { preset, config, seed, out } => {
            cmd_pipeline(preset, config.as_deref(), seed, &out)
        }
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
