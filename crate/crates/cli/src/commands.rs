use std::fs;
use std::path::{Path, PathBuf};

use lanetopo::config::{KeyValues, Section};
use lanetopo::decoder::{Model, ModelConfig, SceneInput, TrafficNoise};
use lanetopo::eval::{evaluate_scene, pooled_report, report_csv, summary_table, Evaluation, MetricReport, SceneEval};
use lanetopo::io::{json_files, write_atomic};
use lanetopo::plgm::{refine, RefinementConfig, RefinementTrace};
use lanetopo::scene::{generate_scene, perturb_scene};
use lanetopo::training::{curve_csv, fit, TrainConfig};
use lanetopo::{bench, DetectionSet, NoiseSpec, Scene, SceneConfig};
use rayon::prelude::*;

use crate::failure::{CliResult, Failure};
use crate::{plot, Cli, Command, RefineArgs};

const SECTIONS: [&str; 5] = ["scene", "model", "train", "noise", "refine"];

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Failure::Other(format!("thread pool: {e}")))?;
    }
    let kv = load_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| Failure::Io(format!("{}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Gen { n } => gen(cli, &kv, *n),
        Command::Perturb { scenes } => perturb(cli, &kv, scenes),
        Command::Train { scenes } => train(cli, &kv, scenes),
        Command::Infer { checkpoint, scenes, all_layers } => infer(cli, &kv, checkpoint, scenes, *all_layers),
        Command::Refine(args) => refine_cmd(cli, &kv, args),
        Command::Eval { preds, scenes, compare, plots } => eval(cli, preds, scenes, compare.as_deref(), *plots),
        Command::Bench { quick } => bench_cmd(cli, *quick),
    }
}

fn load_config(cli: &Cli) -> CliResult<KeyValues> {
    let mut kv = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            KeyValues::parse(&text).map_err(|e| Failure::at(p, e))?
        }
        None => KeyValues::new(),
    };
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Failure::Parse(format!("--set expects KEY=VALUE, got `{o}`")));
        };
        kv.set(k.trim(), v.trim());
    }
    kv.check_sections(&SECTIONS)?;
    Ok(kv)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    write_atomic(path, contents.as_bytes()).map_err(|e| Failure::at(path, e))
}

fn subdir(base: &Path, name: &str) -> CliResult<PathBuf> {
    let d = base.join(name);
    fs::create_dir_all(&d).map_err(|e| Failure::Io(format!("{}: {e}", d.display())))?;
    Ok(d)
}

/// JSON files of an input directory; a missing or empty directory is "no data".
fn inputs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Failure::Empty(format!("{} is not a directory", dir.display())));
    }
    let files = json_files(dir).map_err(|e| Failure::at(dir, e))?;
    if files.is_empty() {
        return Err(Failure::Empty(format!("no .json files in {}", dir.display())));
    }
    Ok(files)
}

fn read_with<T>(path: &Path, parse: impl Fn(&str) -> lanetopo::Result<T>) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::at(path, e))
}

fn read_scenes(dir: &Path) -> CliResult<Vec<(PathBuf, Scene)>> {
    inputs(dir)?.into_par_iter().map(|p| Ok((p.clone(), read_with(&p, Scene::from_json)?))).collect()
}

fn read_detections(dir: &Path) -> CliResult<Vec<(PathBuf, DetectionSet)>> {
    inputs(dir)?.into_par_iter().map(|p| Ok((p.clone(), read_with(&p, DetectionSet::from_json)?))).collect()
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|n| n.to_str()).unwrap_or("unnamed.json")
}

fn stem(p: &Path) -> &str {
    p.file_stem().and_then(|n| n.to_str()).unwrap_or("unnamed")
}

/// Seed of scene `i` in a batch generated from `base`.
pub fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_000).wrapping_add(i as u64)
}

fn gen(cli: &Cli, kv: &KeyValues, n: usize) -> CliResult<()> {
    let cfg = SceneConfig::from_kv(kv)?;
    let base = cli.seed.unwrap_or(0);
    (0..n).into_par_iter().try_for_each(|i| {
        let scene = generate_scene(scene_seed(base, i), &cfg)?;
        write(&cli.out.join(format!("scene_{base}_{i}.json")), &scene.to_json()?)
    })?;
    log::info!("wrote {n} scenes to {}", cli.out.display());
    Ok(())
}

fn perturb(cli: &Cli, kv: &KeyValues, scenes: &Path) -> CliResult<()> {
    let noise = NoiseSpec::from_kv(kv)?;
    let salt = cli.seed.unwrap_or(0);
    let scenes = read_scenes(scenes)?;
    scenes.par_iter().try_for_each(|(path, s)| {
        let d = perturb_scene(s, &noise, s.seed ^ salt)?;
        write(&cli.out.join(file_name(path)), &d.to_json()?)
    })?;
    log::info!("wrote {} perturbed prediction sets to {}", scenes.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli, kv: &KeyValues, dir: &Path) -> CliResult<()> {
    let model_cfg = ModelConfig::from_kv(kv)?;
    let mut tc = TrainConfig::from_kv(kv)?;
    if let Some(s) = cli.seed {
        tc.seed = s;
    }
    let scenes: Vec<Scene> = read_scenes(dir)?.into_iter().map(|(_, s)| s).collect();
    log::info!("training on {} scenes for {} iterations", scenes.len(), tc.iterations);
    let result = fit(&scenes, &model_cfg, &tc)?;
    write(&cli.out.join("checkpoint.json"), &result.model.to_json()?)?;
    write(&cli.out.join("loss_curve.csv"), &curve_csv(&result.curve))?;
    if let (Some(first), Some(last)) = (result.curve.first(), result.curve.last()) {
        log::info!("loss {:.4} -> {:.4}", first.loss.total, last.loss.total);
    }
    match result.stopped {
        Some(why) => Err(Failure::Other(format!("training stopped early ({why}); last finite checkpoint written"))),
        None => Ok(()),
    }
}

fn infer(cli: &Cli, kv: &KeyValues, checkpoint: &Path, dir: &Path, all_layers: bool) -> CliResult<()> {
    let model = read_with(checkpoint, Model::from_json)?;
    if kv.section("model").next().is_some() {
        let wanted = ModelConfig::from_kv(kv)?;
        if wanted != model.cfg {
            return Err(Failure::Mismatch(format!(
                "{}: checkpoint model config differs from the configured one",
                checkpoint.display()
            )));
        }
    }
    let scenes = read_scenes(dir)?;
    let layers_dir = if all_layers { Some(subdir(&cli.out, "layers")?) } else { None };
    scenes.par_iter().try_for_each(|(path, s)| {
        let input = SceneInput::from_scene(s, &model.cfg, &TrafficNoise::default(), s.seed).map_err(|e| Failure::at(path, e))?;
        let per_layer = model.predict(&input).map_err(|e| Failure::at(path, e))?;
        if let Some(d) = &layers_dir {
            for (l, p) in per_layer.iter().enumerate() {
                write(&d.join(format!("{}_layer{l}.json", stem(path))), &p.to_json()?)?;
            }
        }
        let last = per_layer.last().expect("at least one layer");
        write(&cli.out.join(file_name(path)), &last.to_json()?)
    })?;
    log::info!("wrote predictions for {} scenes", scenes.len());
    Ok(())
}

fn refine_cmd(cli: &Cli, kv: &KeyValues, args: &RefineArgs) -> CliResult<()> {
    let mut cfg = RefinementConfig::default();
    for (k, v) in kv.section("refine") {
        cfg.set_key(k, v)?;
    }
    cfg.tau_p = args.tau_p.unwrap_or(cfg.tau_p);
    cfg.tau_l = args.tau_l.unwrap_or(cfg.tau_l);
    cfg.delta = args.delta.unwrap_or(cfg.delta);
    if cfg.delta != 0.0 {
        cfg.validate()?;
    } else {
        RefinementConfig { delta: 1.0, ..cfg }.validate()?;
        log::info!("delta = 0: refinement disabled, predictions are copied unchanged");
    }
    let preds = read_detections(&args.preds)?;
    let traces = subdir(&cli.out, "traces")?;
    let clusters: usize = preds
        .par_iter()
        .map(|(path, d)| {
            let (refined, trace) =
                if cfg.delta == 0.0 { (d.clone(), RefinementTrace::default()) } else { refine(d, &cfg) };
            write(&cli.out.join(file_name(path)), &refined.to_json()?)?;
            let t = serde_json::to_string_pretty(&trace).map_err(|e| Failure::Other(e.to_string()))?;
            write(&traces.join(format!("{}_trace.json", stem(path))), &t)?;
            Ok(trace.clusters.len())
        })
        .sum::<CliResult<usize>>()?;
    log::info!("refined {} prediction sets, {clusters} clusters", preds.len());
    Ok(())
}

struct Scored {
    evals: Vec<SceneEval>,
    names: Vec<String>,
    evaluation: Evaluation,
}

fn score(preds_dir: &Path, scenes: &[(PathBuf, Scene)]) -> CliResult<Scored> {
    let evals: Vec<SceneEval> = scenes
        .par_iter()
        .map(|(path, s)| {
            let p = preds_dir.join(file_name(path));
            if !p.is_file() {
                return Err(Failure::Io(format!("{}: no prediction for scene {}", p.display(), path.display())));
            }
            let d = read_with(&p, DetectionSet::from_json)?;
            evaluate_scene(&d, s).map_err(|e| Failure::at(&p, e))
        })
        .collect::<CliResult<_>>()?;
    let per_scene = evals.iter().map(|e| pooled_report(&[e])).collect::<lanetopo::Result<Vec<_>>>()?;
    let refs: Vec<&SceneEval> = evals.iter().collect();
    let aggregate = pooled_report(&refs)?;
    let names = scenes.iter().map(|(p, _)| stem(p).to_string()).collect();
    Ok(Scored { evals, names, evaluation: Evaluation { aggregate, per_scene } })
}

fn comparison(base: &MetricReport, this: &MetricReport) -> String {
    let rows = [
        ("DET_l", base.det_l, this.det_l),
        ("DET_t", base.det_t, this.det_t),
        ("TOP_ll", base.top_ll, this.top_ll),
        ("TOP_lt", base.top_lt, this.top_lt),
        ("OLS", base.ols, this.ols),
        ("DET_p", base.det_p, this.det_p),
        ("gap mean (m)", base.endpoint_gap_mean, this.endpoint_gap_mean),
        ("gap max (m)", base.endpoint_gap_max, this.endpoint_gap_max),
    ];
    let mut s = String::from("| metric | compare | preds | delta |\n|---|---|---|---|\n");
    for (name, a, b) in rows {
        s.push_str(&format!("| {name} | {a:.3} | {b:.3} | {:+.3} |\n", b - a));
    }
    s
}

fn eval(cli: &Cli, preds: &Path, scenes_dir: &Path, compare: Option<&Path>, plots: bool) -> CliResult<()> {
    let scenes = read_scenes(scenes_dir)?;
    let scored = score(preds, &scenes)?;
    let agg = &scored.evaluation.aggregate;
    write(&cli.out.join("report.json"), &agg.to_json()?)?;
    write(&cli.out.join("report.csv"), &report_csv(&scored.evaluation, &scored.names))?;
    let mut summary = summary_table(agg);
    for f in &agg.flags {
        summary.push_str(&format!("\nnote: {f}"));
    }
    if let Some(other) = compare {
        let base = score(other, &scenes)?;
        let table = comparison(&base.evaluation.aggregate, agg);
        write(&cli.out.join("compare.md"), &table)?;
        summary.push_str(&format!("\n\nComparison against {}:\n\n{table}", other.display()));
    }
    write(&cli.out.join("summary.md"), &summary)?;
    println!("{summary}");
    if plots {
        for (name, svg) in plot::all(&scored.evals, agg) {
            write(&cli.out.join(name), &svg)?;
        }
    }
    Ok(())
}

fn bench_cmd(cli: &Cli, quick: bool) -> CliResult<()> {
    let table = bench::table1_arithmetic_check();
    let text = bench::table_check_text(&table);
    print!("{text}");
    let failed = table.iter().filter(|r| !r.passed).count();
    println!("{} of {} complete rows reproduce the printed OLS", table.len() - failed, table.len());
    let timings = bench::bench_kernels(quick);
    let csv = bench::timings_csv(&timings);
    print!("{csv}");
    write(&cli.out.join("table_check.txt"), &text)?;
    write(&cli.out.join("bench.csv"), &csv)
}
