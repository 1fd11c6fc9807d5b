//! Subcommand implementations. Each returns the process exit code: 0 for
//! success, 1 when a validation or property check fails (the run itself
//! completed and reported honestly). Usage problems surface as errors and
//! are mapped to exit 2 in main.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eadyn_core::bounds::{
    aggregate_tail_check, expected_edge_influence, half_normal_tail_check, phi_bound_check,
};
use eadyn_core::dynamics::{
    coalescence_experiment, path_coupling_trial, run_chain, ChainState, DynamicsKind, TraceRow,
};
use eadyn_core::error::Result;
use eadyn_core::gibbs::SpinConfig;
use eadyn_core::influence::{
    aggregate_influence, check_upsilon_property, expected_influence_mc, BlockVertexAnalysis,
    WeightParams,
};
use eadyn_core::instance::{gen, load_path, save_path, Graph, Instance};
use eadyn_core::partition::{
    build_partition, find_short_cycles, validate_partition, BlockPartition, BuildOutcome,
};
use eadyn_core::rng::{stream, PURPOSE_CHAIN, PURPOSE_COUPLING, PURPOSE_INIT};
use eadyn_core::spectral::{
    mixing_time_exact, relaxation_time, transition_matrix, verify_comparison_bound, ChainKind,
    SpectralReport,
};
use eadyn_core::verify::{run_all, run_criterion};
use rand::Rng;
use serde_json::json;

use crate::args::*;
use crate::manifest::{csv_manifest_comment, ManifestBuilder};

/// Default output directory: EADYN_OUT_DIR when set, else the working dir.
fn out_path(explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => match std::env::var_os("EADYN_OUT_DIR") {
            Some(dir) => Path::new(&dir).join(default_name),
            None => PathBuf::from(default_name),
        },
    }
}

fn mean_degree(instance: &Instance) -> f64 {
    2.0 * instance.graph.m() as f64 / instance.n() as f64
}

fn params_json(p: &WeightParams) -> serde_json::Value {
    json!({
        "epsilon": p.epsilon,
        "d": p.d,
        "block_range": p.block_range,
        "short_cycle_max_len": p.short_cycle_max_len,
        "cycle_buffer_radius": p.cycle_buffer_radius,
        "cycle_separation": p.cycle_separation,
        "tree_reach": p.tree_reach,
        "cycle_reach": p.cycle_reach,
    })
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let m = ManifestBuilder::new("gen");
    let beta = args.beta.resolve(args.d)?;
    let instance = gen(args.n, args.d, beta, args.seed)?;
    let out = out_path(&args.out, "instance.ea");
    save_path(&instance, &out)?;
    m.params(json!({
        "n": args.n,
        "d": args.d,
        "beta": beta,
        "beta_frac": args.beta.beta_frac,
        "edges": instance.graph.m(),
    }))
    .seed(args.seed)
    .output(&out)
    .finish()?;
    Ok(0)
}

/// Pairwise distance check between short cycles: the closest pair, by
/// multi-source BFS from each cycle in turn.
fn closest_cycle_pair(graph: &Graph, cycles: &[Vec<u32>]) -> Option<(usize, usize, u32)> {
    let mut best: Option<(usize, usize, u32)> = None;
    for (i, a) in cycles.iter().enumerate() {
        let dist = graph.bfs_from_set(a, None);
        for (j, b) in cycles.iter().enumerate().skip(i + 1) {
            let d = b
                .iter()
                .map(|&v| dist[v as usize])
                .min()
                .unwrap_or(u32::MAX);
            if best.map_or(true, |(_, _, bd)| d < bd) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let m = ManifestBuilder::new("analyze");
    let instance = load_path(&args.instance)?;
    let d = args.d.unwrap_or_else(|| mean_degree(&instance));
    let params = args.radii.resolve(args.epsilon, d, &instance)?;
    let table = aggregate_influence(&instance, None)?;
    let analysis = BlockVertexAnalysis::new(&instance, &table, &params)?;

    let out = out_path(&args.out, "analysis.csv");
    let mut csv = csv_manifest_comment(&out);
    csv.push_str("vertex,degree,agg,heavy,block_vertex,witness\n");
    let mut heavy = 0usize;
    let mut block_vertices = 0usize;
    for v in 0..instance.n() as u32 {
        let agg = table.agg[v as usize];
        let is_heavy = agg > params.heavy_threshold();
        heavy += is_heavy as usize;
        let (is_bv, witness) = analysis.query(v);
        block_vertices += is_bv as usize;
        let witness = witness
            .map(|w| {
                w.iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        writeln!(
            csv,
            "{v},{},{agg},{is_heavy},{is_bv},{witness}",
            instance.graph.degree(v)
        )
        .expect("string write");
    }
    std::fs::write(&out, csv)?;

    let upsilon = check_upsilon_property(&instance, &params)?;
    let cycles = find_short_cycles(&instance.graph, params.short_cycle_max_len);
    let closest = closest_cycle_pair(&instance.graph, &cycles);
    let cycles_pass = closest.map_or(true, |(_, _, d)| d >= params.cycle_separation);
    let passed = upsilon.pass() && cycles_pass;

    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "n": instance.n(),
            "edges": instance.graph.m(),
            "beta": instance.beta(),
            "heavy_vertices": heavy,
            "block_vertices": block_vertices,
            "upsilon": upsilon,
            "short_cycles": cycles.len(),
            "closest_cycle_pair": closest.map(|(i, j, dist)| json!({
                "cycle_a": cycles[i],
                "cycle_b": cycles[j],
                "distance": dist,
            })),
            "cycle_separation_pass": cycles_pass,
        }))
        .expect("report serialization")
    );
    m.params(params_json(&params))
        .input(&args.instance)
        .output(&out)
        .finish()?;
    Ok(if passed { 0 } else { 1 })
}

pub fn cmd_partition(args: &PartitionArgs) -> Result<i32> {
    let m = ManifestBuilder::new("partition");
    let instance = load_path(&args.instance)?;
    let d = args.d.unwrap_or_else(|| mean_degree(&instance));
    let params = args.radii.resolve(args.epsilon, d, &instance)?;
    let m = m.params(params_json(&params)).input(&args.instance);
    match build_partition(&instance, &params)? {
        BuildOutcome::Partition(p) => {
            validate_partition(&instance, &p, &params)?;
            let out = out_path(&args.out, "partition.json");
            p.save(&out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "outcome": "partition",
                    "summary": p.summary(),
                }))
                .expect("report serialization")
            );
            m.output(&out).finish()?;
            Ok(0)
        }
        BuildOutcome::Failure(f) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "outcome": "failure",
                    "witness": f,
                    "message": f.to_string(),
                }))
                .expect("report serialization")
            );
            m.finish()?;
            Ok(1)
        }
    }
}

fn trace_csv(out: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut csv = csv_manifest_comment(out);
    csv.push_str("step,updated_unit,energy,magnetization,distance,disagreements\n");
    for r in rows {
        let unit = r.updated_unit.map(|u| u.to_string()).unwrap_or_default();
        let dist = r.distance.map(|d| d.to_string()).unwrap_or_default();
        let dis = r.disagreements.map(|d| d.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{},{unit},{},{},{dist},{dis}",
            r.step, r.energy, r.magnetization
        )
        .expect("string write");
    }
    std::fs::write(out, csv)?;
    Ok(())
}

fn initial_config(kind: InitKind, n: usize, seed: u64) -> Result<SpinConfig> {
    Ok(match kind {
        InitKind::Plus => SpinConfig::all_plus(n),
        InitKind::Minus => SpinConfig::all_minus(n),
        InitKind::Random => SpinConfig::random(n, &mut stream(seed, PURPOSE_INIT, 0)),
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let m = ManifestBuilder::new("run");
    let instance = load_path(&args.instance)?;
    let partition = args
        .partition
        .as_ref()
        .map(BlockPartition::load)
        .transpose()?;
    let dynamics = match &partition {
        Some(p) => DynamicsKind::Block(p),
        None => DynamicsKind::Glauber,
    };
    let mut state = ChainState::new(initial_config(args.init, instance.n(), args.seed)?);
    let mut rng = stream(args.seed, PURPOSE_CHAIN, 0);
    let rows = run_chain(&instance, dynamics, &mut state, args.steps, args.stride, &mut rng)?;
    let out = out_path(&args.out, "trace.csv");
    trace_csv(&out, &rows)?;
    let mut m = m
        .params(json!({
            "dynamics": if partition.is_some() { "block" } else { "glauber" },
            "steps": args.steps,
            "stride": args.stride,
            "init": format!("{:?}", args.init).to_lowercase(),
            "rows": rows.len(),
        }))
        .seed(args.seed)
        .input(&args.instance);
    if let Some(p) = &args.partition {
        m = m.input(p);
    }
    m.output(&out).finish()?;
    Ok(0)
}

fn load_or_singletons(
    instance: &Instance,
    partition: &Option<PathBuf>,
    epsilon: f64,
) -> Result<BlockPartition> {
    match partition {
        Some(p) => BlockPartition::load(p),
        None => {
            let params =
                WeightParams::from_formulas(epsilon, mean_degree(instance).max(1.0), instance.n())?;
            Ok(BlockPartition::all_singletons(instance, &params))
        }
    }
}

pub fn cmd_couple(args: &CoupleArgs) -> Result<i32> {
    let m = ManifestBuilder::new("couple");
    let instance = load_path(&args.instance)?;
    let partition = load_or_singletons(&instance, &args.partition, args.epsilon)?;
    let out = out_path(&args.out, "couple.csv");
    let mut m = m.seed(args.seed).input(&args.instance);
    if let Some(p) = &args.partition {
        m = m.input(p);
    }

    match args.experiment {
        CoupleExperiment::Contraction => {
            let table = aggregate_influence(&instance, Some(&partition))?;
            let n = instance.n();
            let mut csv = csv_manifest_comment(&out);
            csv.push_str(
                "trial,u_star,block,dist_before,dist_after,delta,new_disagreements,coalesced\n",
            );
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for t in 0..args.trials {
                let mut rng = stream(args.seed, PURPOSE_COUPLING, t);
                let u_star = rng.gen_range(0..n as u32);
                let mut x = SpinConfig::random(n, &mut rng);
                let mut y = x.clone();
                y.flip(u_star);
                let trial =
                    path_coupling_trial(&instance, &partition, &table, &mut x, &mut y, u_star, &mut rng)?;
                sum += trial.delta;
                sum_sq += trial.delta * trial.delta;
                writeln!(
                    csv,
                    "{t},{u_star},{},{},{},{},{},{}",
                    trial.block,
                    trial.dist_before,
                    trial.dist_after,
                    trial.delta,
                    trial.new_disagreements,
                    trial.coalesced
                )
                .expect("string write");
            }
            std::fs::write(&out, csv)?;
            let trials = args.trials as f64;
            let mean = sum / trials;
            let std_error = ((sum_sq / trials - mean * mean).max(0.0) / trials).sqrt();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "experiment": "contraction",
                    "trials": args.trials,
                    "mean_delta": mean,
                    "std_error": std_error,
                }))
                .expect("report serialization")
            );
            m.params(json!({
                "experiment": "contraction",
                "trials": args.trials,
                "num_blocks": partition.num_blocks(),
                "radii_used": params_json(partition.radii_used()),
            }))
            .output(&out)
            .finish()?;
            Ok(0)
        }
        CoupleExperiment::Coalescence => {
            let n = instance.n() as f64;
            let max_steps = args
                .max_steps
                .unwrap_or_else(|| (20.0 * n * n.ln()).ceil() as u64);
            let report =
                coalescence_experiment(&instance, &partition, args.trials, max_steps, args.seed)?;
            let mut csv = csv_manifest_comment(&out);
            csv.push_str("trial,steps\n");
            for (t, s) in report.steps.iter().enumerate() {
                let s = s.map(|v| v.to_string()).unwrap_or_default();
                writeln!(csv, "{t},{s}").expect("string write");
            }
            std::fs::write(&out, csv)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serialization")
            );
            m.params(json!({
                "experiment": "coalescence",
                "trials": args.trials,
                "max_steps": max_steps,
                "num_blocks": partition.num_blocks(),
                "radii_used": params_json(partition.radii_used()),
            }))
            .output(&out)
            .finish()?;
            Ok(0)
        }
    }
}

/// `spectral_report` with a caller-chosen total-variation threshold for the
/// mixing time instead of the fixed 1/e.
fn report_at(instance: &Instance, kind: ChainKind, threshold: f64) -> Result<SpectralReport> {
    let tm = transition_matrix(instance, kind)?;
    let relax = relaxation_time(&tm)?;
    let t_mix = mixing_time_exact(&tm, threshold)?;
    Ok(SpectralReport {
        states: tm.states(),
        lambda_star: relax.lambda_star,
        tau_rel: relax.tau_rel,
        t_mix,
        stationarity_residual: tm.stationarity_residual(),
        reversibility_residual: tm.reversibility_residual(),
    })
}

pub fn cmd_spectral(args: &SpectralArgs) -> Result<i32> {
    let m = ManifestBuilder::new("spectral");
    let instance = load_path(&args.instance)?;
    let partition = args
        .partition
        .as_ref()
        .map(BlockPartition::load)
        .transpose()?;

    let glauber = report_at(&instance, ChainKind::Glauber, args.threshold)?;
    let (block, comparison) = match &partition {
        Some(p) => (
            Some(report_at(&instance, ChainKind::Block(p), args.threshold)?),
            Some(verify_comparison_bound(&instance, p)?),
        ),
        None => (None, None),
    };
    let passed = comparison.as_ref().map_or(true, |c| c.pass);
    let report = json!({
        "glauber": glauber,
        "block": block,
        "comparison": comparison,
        "threshold": args.threshold,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serialization");
    println!("{text}");
    let mut m = m
        .params(json!({ "threshold": args.threshold }))
        .input(&args.instance);
    if let Some(p) = &args.partition {
        m = m.input(p);
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
        m = m.output(out);
    }
    m.finish()?;
    Ok(if passed { 0 } else { 1 })
}

fn print_report<T: serde::Serialize>(report: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(report).expect("report serialization")
    );
}

pub fn cmd_bounds_half_normal(args: &HalfNormalArgs) -> Result<i32> {
    let m = ManifestBuilder::new("bounds half-normal");
    let report = half_normal_tail_check(args.terms, args.sigma, args.delta, args.trials, args.seed)?;
    print_report(&report);
    m.params(json!({
        "terms": args.terms, "sigma": args.sigma, "delta": args.delta, "trials": args.trials,
    }))
    .seed(args.seed)
    .finish()?;
    Ok(if report.pass { 0 } else { 1 })
}

pub fn cmd_bounds_phi(args: &PhiArgs) -> Result<i32> {
    let m = ManifestBuilder::new("bounds phi");
    let report = phi_bound_check(args.max_x, args.points)?;
    print_report(&report);
    m.params(json!({ "max_x": args.max_x, "points": args.points }))
        .finish()?;
    Ok(if report.pass { 0 } else { 1 })
}

pub fn cmd_bounds_aggregate(args: &AggregateArgs) -> Result<i32> {
    let m = ManifestBuilder::new("bounds aggregate");
    let report =
        aggregate_tail_check(args.d, args.epsilon, args.graph_size, args.trials, args.seed)?;
    print_report(&report);
    m.params(json!({
        "d": args.d, "epsilon": args.epsilon, "graph_size": args.graph_size,
        "trials": args.trials,
    }))
    .seed(args.seed)
    .finish()?;
    Ok(if report.pass { 0 } else { 1 })
}

pub fn cmd_bounds_influence_mean(args: &InfluenceMeanArgs) -> Result<i32> {
    let m = ManifestBuilder::new("bounds influence-mean");
    let beta = args.beta.resolve(args.d)?;
    let quadrature = expected_edge_influence(beta)?;
    let mc = if args.trials > 0 {
        Some(expected_influence_mc(beta, args.d, args.trials, args.seed)?)
    } else {
        None
    };
    print_report(&json!({
        "beta": beta,
        "d": args.d,
        "expected_influence": quadrature,
        "d_times_expected": args.d * quadrature,
        "uniqueness": args.d * quadrature < 1.0,
        "monte_carlo": mc,
    }));
    m.params(json!({ "beta": beta, "d": args.d, "trials": args.trials }))
        .seed(args.seed)
        .finish()?;
    Ok(0)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let results = match args.criterion {
        Some(id) => vec![run_criterion(id, args.quick)?],
        None => run_all(args.quick),
    };
    if args.json {
        print_report(&results);
    } else {
        for r in &results {
            println!("{}", r.line());
        }
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
}
