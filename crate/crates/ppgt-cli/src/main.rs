//! Command-line entry point for the experiments and checks.
//!
//! Exit codes: 0 on success, 1 when a check or run fails, 2 on config errors.

mod checks;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppgt_core::backbone::{ModelConfig, ModelParams};
use ppgt_core::bank::find_pair;
use ppgt_core::error::{Error, Result};
use ppgt_core::graph::Graph;
use ppgt_core::harness::{
    batch_size_sweep, bn_sweep_csv, case_study_csv, pair_suite_csv, run_case_study,
    run_pair_suite, spe_sensitivity, spe_sweep_csv, CaseStudySpec, PairReport,
};
use ppgt_core::pe::{inject_aux_features, rrwp, save_rel_pos, spe_encode};
use ppgt_core::tensor::grad_check_named;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ppgt", about = "Plain graph transformer experiments", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the expressivity suite.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory for CSVs and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fast invariant suite and print a pass/fail table.
    Check,
    /// Oracle and model distinguishability over the pair bank.
    Expressivity(PairArgs),
    /// The normalization autoencoder case study.
    CaseStudy,
    /// Sensitivity sweeps.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Finite-difference gradient check of the full model.
    Gradcheck,
    /// Compute and serialize positional encodings.
    ExportPe(ExportArgs),
}

#[derive(Args)]
struct PairArgs {
    /// Comma-separated pair names (default: every bank pair).
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<String>,

    /// Random-walk steps K.
    #[arg(long)]
    k: Option<usize>,

    /// Sinusoidal bases S.
    #[arg(long)]
    spe_bases: Option<usize>,
}

#[derive(Subcommand)]
enum SweepKind {
    /// Vary the sinusoidal base count S.
    Spe,
    /// Vary the training batch size per norm kind.
    BatchSize,
}

#[derive(Args)]
struct ExportArgs {
    /// Bank pair to export (both graphs).
    #[arg(long, conflicts_with = "graph")]
    pair: Option<String>,

    /// Edge-list file ("n m" header then "u v" lines).
    #[arg(long)]
    graph: Option<PathBuf>,

    /// Random-walk steps K.
    #[arg(long)]
    k: Option<usize>,

    /// Sinusoidal bases S (0 = raw RRWP).
    #[arg(long)]
    spe_bases: Option<usize>,

    /// Also append the degree/order channels.
    #[arg(long)]
    aux: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err @ (Error::Config(_) | Error::UnknownPair(..))) => {
            eprintln!("config error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.model.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs.max(1);
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.to_string_lossy().into_owned();
    }

    match &cli.command {
        Command::Check => cmd_check(&config),
        Command::Expressivity(args) => cmd_expressivity(&config, args),
        Command::CaseStudy => cmd_case_study(&config),
        Command::Sweep { kind } => cmd_sweep(&config, kind),
        Command::Gradcheck => cmd_gradcheck(&config),
        Command::ExportPe(args) => cmd_export_pe(&config, args),
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(config: &RunConfig, dir: &Path, command: &str, seeds: &[u64]) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "seeds": seeds,
    });
    std::fs::write(
        dir.join(format!("{command}_manifest.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn cmd_check(config: &RunConfig) -> Result<ExitCode> {
    let results = checks::run_all();
    let mut csv = String::from("check,status\n");
    let mut all_passed = true;
    println!("{:<22} {:<6} detail", "check", "status");
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{:<22} {:<6} {}", r.name, status, r.detail);
        csv.push_str(&format!("{},{}\n", r.name, status));
        all_passed &= r.passed;
    }
    let dir = out_dir(config)?;
    std::fs::write(dir.join("check_results.csv"), csv)?;
    write_manifest(config, &dir, "check", &[config.model.seed])?;
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parallel_pair_suite(
    config: &ModelConfig,
    n_seeds: usize,
    pairs: Option<&[String]>,
    jobs: usize,
) -> Result<Vec<PairReport>> {
    if jobs <= 1 {
        return run_pair_suite(config, n_seeds, pairs);
    }
    // Each worker owns its tapes and parameters; only reports cross threads.
    let bank = ppgt_core::bank::pair_bank();
    let selected: Vec<ppgt_core::bank::GraphPair> = match pairs {
        None => bank,
        Some(names) => names.iter().map(|n| find_pair(n)).collect::<Result<_>>()?,
    };
    let chunk_len = selected.len().div_ceil(jobs);
    let mut slots: Vec<Option<Result<PairReport>>> = Vec::new();
    slots.resize_with(selected.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, chunk) in selected.chunks(chunk_len).enumerate() {
            let cfg = config.clone();
            handles.push((
                w,
                scope.spawn(move || -> Vec<Result<PairReport>> {
                    chunk
                        .iter()
                        .map(|p| ppgt_core::harness::model_distinguish(p, &cfg, n_seeds))
                        .collect()
                }),
            ));
        }
        for (w, handle) in handles {
            for (i, r) in handle.join().expect("worker panicked").into_iter().enumerate() {
                slots[w * chunk_len + i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("missing slot")).collect()
}

fn cmd_expressivity(config: &RunConfig, args: &PairArgs) -> Result<ExitCode> {
    let mut model = config.model.clone();
    if let Some(k) = args.k {
        model.k_walk = k;
    }
    if let Some(s) = args.spe_bases {
        model.spe_bases = s;
    }
    model.validate()?;
    let pair_filter: Option<Vec<String>> = if args.pairs.is_empty() {
        if config.expressivity.pairs.is_empty() {
            None
        } else {
            Some(config.expressivity.pairs.clone())
        }
    } else {
        Some(args.pairs.clone())
    };
    let n_seeds = config.expressivity.n_seeds;
    let reports = parallel_pair_suite(&model, n_seeds, pair_filter.as_deref(), config.jobs)?;

    println!(
        "{:<16} {:<20} {:<6} {:<6} {:<14} verdict",
        "pair", "category", "wl1", "gdwl", "median_dist"
    );
    for r in &reports {
        println!(
            "{:<16} {:<20} {:<6} {:<6} {:<14.6e} {}{}",
            r.pair,
            r.category,
            r.oracle_1wl,
            r.oracle_gdwl,
            r.median_distance,
            r.verdict.as_str(),
            if r.review_flag { "  [review]" } else { "" }
        );
    }
    let dir = out_dir(config)?;
    std::fs::write(dir.join("pair_suite.csv"), pair_suite_csv(&reports))?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| model.seed + i).collect();
    write_manifest(config, &dir, "expressivity", &seeds)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_case_study(config: &RunConfig) -> Result<ExitCode> {
    let mut reports = Vec::new();
    let mut failed = false;
    println!("{:<10} {:<14} radial_mse", "norm", "mse");
    for &norm in &config.case_study.norms {
        let spec = CaseStudySpec::new(
            norm,
            config.case_study.n_points,
            config.case_study.epochs,
            config.model.seed,
        );
        match run_case_study(&spec) {
            Ok(report) => {
                println!(
                    "{:<10} {:<14.6e} {:.6e}",
                    report.norm, report.mse, report.radial_mse
                );
                reports.push(report);
            }
            Err(err) => {
                eprintln!("{}: {err}", norm.as_str());
                failed = true;
            }
        }
    }
    let dir = out_dir(config)?;
    std::fs::write(dir.join("case_study.csv"), case_study_csv(&reports))?;
    write_manifest(config, &dir, "case_study", &[config.model.seed])?;
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_sweep(config: &RunConfig, kind: &SweepKind) -> Result<ExitCode> {
    let dir = out_dir(config)?;
    match kind {
        SweepKind::Spe => {
            let pair = find_pair(&config.sweep.pair)?;
            let rows = spe_sensitivity(
                &pair,
                &config.sweep.s_values,
                &config.model,
                config.sweep.n_seeds,
            )?;
            println!("{:<4} {:<9} {:<14} verdict", "s", "channels", "median_dist");
            for row in &rows {
                println!(
                    "{:<4} {:<9} {:<14.6e} {}",
                    row.s,
                    row.channels,
                    row.report.median_distance,
                    row.report.verdict.as_str()
                );
            }
            std::fs::write(dir.join("spe_sweep.csv"), spe_sweep_csv(&rows))?;
            write_manifest(config, &dir, "sweep_spe", &[config.model.seed])?;
        }
        SweepKind::BatchSize => {
            let rows = batch_size_sweep(
                &config.sweep.norms,
                &config.sweep.batch_sizes,
                config.sweep.n_points,
                config.sweep.epochs,
                config.model.seed,
            )?;
            println!("{:<10} {:<12} {:<14} radial_mse", "norm", "batch_size", "mse");
            for row in &rows {
                println!(
                    "{:<10} {:<12} {:<14.6e} {:.6e}",
                    row.norm, row.batch_size, row.report.mse, row.report.radial_mse
                );
            }
            std::fs::write(dir.join("bn_sweep.csv"), bn_sweep_csv(&rows))?;
            write_manifest(config, &dir, "sweep_batch_size", &[config.model.seed])?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(config: &RunConfig) -> Result<ExitCode> {
    // A small model keeps the finite-difference sweep fast while still
    // covering every parameter family.
    let mut model = ModelConfig::tiny(config.model.seed);
    model.norm_kind = config.model.norm_kind;
    model.attention_kind = config.model.attention_kind;
    let g = ppgt_core::graph::cycle(5);
    let params = ModelParams::init_for(&model, &g)?;
    let named = params.trainable();
    let (worst_name, worst_err) = grad_check_named(
        |tensors| {
            let mut p = params.clone();
            p.set_trainable(tensors.to_vec());
            let y = ppgt_core::backbone::model_forward(&g, &model, &p)?;
            Ok(ppgt_core::backbone::graph_head(&y, &model, &p)?.sum_all())
        },
        &named,
        1e-6,
    )?;
    println!(
        "gradcheck: {} parameters, worst rel err {worst_err:.3e} at {worst_name}",
        named.len()
    );
    Ok(if worst_err < 1e-4 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_export_pe(config: &RunConfig, args: &ExportArgs) -> Result<ExitCode> {
    let k = args.k.unwrap_or(config.model.k_walk);
    let s = args.spe_bases.unwrap_or(0);
    let graphs: Vec<(String, Graph)> = match (&args.pair, &args.graph) {
        (Some(name), _) => {
            let pair = find_pair(name)?;
            vec![
                (format!("{name}-g1"), pair.g1),
                (format!("{name}-g2"), pair.g2),
            ]
        }
        (None, Some(path)) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "graph".to_string());
            vec![(stem, Graph::load_edge_list(path)?)]
        }
        (None, None) => {
            return Err(Error::Config("export-pe needs --pair or --graph".into()));
        }
    };
    let dir = out_dir(config)?;
    for (name, g) in graphs {
        let mut p = rrwp(&g, k);
        let mut provenance = format!("rrwp k={k}");
        if s > 0 {
            p = spe_encode(&p, s);
            provenance = format!("{provenance}, spe s={s}");
        }
        if args.aux {
            let (_, augmented) = inject_aux_features(&g, &p);
            p = augmented;
            provenance = format!("{provenance}, aux channels");
        }
        let path = dir.join(format!("{name}.pe"));
        save_rel_pos(&p, &path, &provenance)?;
        println!("wrote {} ({} x {} x {})", path.display(), p.n(), p.n(), p.k());
    }
    write_manifest(config, &dir, "export_pe", &[config.model.seed])?;
    Ok(ExitCode::SUCCESS)
}
