use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanetopo::eval::MetricReport;
use lanetopo::{DetectionSet, Scene};
use tempfile::TempDir;

const TINY_MODEL: [&str; 10] = [
    "--set", "model.d=8", "--set", "model.n_p=12", "--set", "model.n_l=16", "--set", "model.ffn_hidden=8", "--set",
    "model.n_t=4",
];

fn lanetopo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanetopo"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = lanetopo(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(out: &Path, args: &[&str]) -> i32 {
    lanetopo(out, args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn gen(tmp: &TempDir, n: usize, seed: u64) -> PathBuf {
    let dir = tmp.path().join(format!("scenes_{seed}"));
    ok(&dir, &["--seed", &seed.to_string(), "gen", "--n", &n.to_string()]);
    dir
}

#[test]
fn gen_is_deterministic_and_named_by_seed() {
    let tmp = TempDir::new().unwrap();
    let a = gen(&tmp, 3, 7);
    let b = tmp.path().join("again");
    ok(&b, &["--seed", "7", "gen", "--n", "3"]);
    assert_eq!(listing(&a), ["scene_7_0.json", "scene_7_1.json", "scene_7_2.json"]);
    for f in listing(&a) {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
    let scene = Scene::from_json(&fs::read_to_string(a.join("scene_7_1.json")).unwrap()).unwrap();
    assert_eq!(scene.seed, 7_000_001);
}

#[test]
fn gen_zero_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("empty");
    ok(&out, &["gen", "--n", "0"]);
    assert!(listing(&out).is_empty());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&out, &["--config", s(&tmp.path().join("nope.cfg")), "gen", "--n", "1"]), 2);

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "this line has no equals sign\n").unwrap();
    assert_eq!(code(&out, &["--config", s(&bad), "gen", "--n", "1"]), 5);

    assert_eq!(code(&out, &["--set", "scene.arms=zero", "gen", "--n", "1"]), 4);
    assert_eq!(code(&out, &["--set", "bogus.key=1", "gen", "--n", "1"]), 4);
    assert_eq!(code(&out, &["--set", "scene.no_such_key=1", "gen", "--n", "1"]), 4);

    let empty = tmp.path().join("no_scenes");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&out, &["train", "--scenes", s(&empty)]), 3);
    assert_eq!(code(&out, &["train", "--scenes", s(&tmp.path().join("missing"))]), 3);

    let scenes = gen(&tmp, 1, 1);
    fs::write(scenes.join("scene_1_0.json"), "{ not json").unwrap();
    assert_eq!(code(&out, &["perturb", "--scenes", s(&scenes)]), 5);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let scenes = gen(&tmp, 3, 2);
    let preds = tmp.path().join("preds");
    let zero = [
        "--set", "noise.endpoint_sigma=0", "--set", "noise.interior_sigma=0", "--set", "noise.drop_rate=0", "--set",
        "noise.spurious_rate=0", "--set", "noise.score_noise=0",
    ];
    let mut args = zero.to_vec();
    args.extend(["perturb", "--scenes", s(&scenes)]);
    ok(&preds, &args);
    let report_dir = tmp.path().join("report");
    ok(&report_dir, &["eval", "--preds", s(&preds), "--scenes", s(&scenes)]);
    let r = MetricReport::from_json(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    for v in [r.det_p, r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols] {
        assert!((v - 100.0).abs() < 1e-9, "{r:?}");
    }
    assert_eq!(r.endpoint_gap_max, 0.0);
    assert!(fs::read_to_string(report_dir.join("summary.md")).unwrap().contains("OLS"));
}

#[test]
fn pipeline_refinement_improves_noisy_predictions() {
    let tmp = TempDir::new().unwrap();
    let scenes = gen(&tmp, 4, 5);
    let noisy = tmp.path().join("noisy");
    ok(&noisy, &["--seed", "5", "perturb", "--scenes", s(&scenes)]);
    let refined = tmp.path().join("refined");
    ok(&refined, &["refine", "--preds", s(&noisy)]);
    assert_eq!(listing(&refined.join("traces")).len(), 4);

    let rep = tmp.path().join("rep");
    ok(&rep, &["eval", "--preds", s(&refined), "--scenes", s(&scenes), "--compare", s(&noisy), "--plots"]);
    for f in ["report.json", "report.csv", "summary.md", "compare.md", "pr_points.svg", "pr_lanes.svg", "endpoint_gaps.svg"] {
        assert!(rep.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
    assert!(csv.lines().last().unwrap().starts_with("aggregate,"));

    let base = tmp.path().join("base");
    ok(&base, &["eval", "--preds", s(&noisy), "--scenes", s(&scenes)]);
    let load = |d: &Path| MetricReport::from_json(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let (before, after) = (load(&base), load(&rep));
    assert!(after.endpoint_gap_mean < before.endpoint_gap_mean);
    assert!(after.det_p >= before.det_p && after.det_l >= before.det_l);
}

#[test]
fn refine_with_zero_delta_is_identity() {
    let tmp = TempDir::new().unwrap();
    let scenes = gen(&tmp, 2, 9);
    let noisy = tmp.path().join("noisy");
    ok(&noisy, &["perturb", "--scenes", s(&scenes)]);
    let same = tmp.path().join("same");
    ok(&same, &["refine", "--preds", s(&noisy), "--delta", "0"]);
    for f in listing(&noisy) {
        let a = DetectionSet::from_json(&fs::read_to_string(noisy.join(&f)).unwrap()).unwrap();
        let b = DetectionSet::from_json(&fs::read_to_string(same.join(&f)).unwrap()).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(code(&tmp.path().join("x"), &["refine", "--preds", s(&noisy), "--delta=-1"]), 4);
}

#[test]
fn eval_requires_a_prediction_per_scene() {
    let tmp = TempDir::new().unwrap();
    let scenes = gen(&tmp, 2, 4);
    let preds = tmp.path().join("preds");
    ok(&preds, &["perturb", "--scenes", s(&scenes)]);
    fs::remove_file(preds.join("scene_4_1.json")).unwrap();
    assert_eq!(code(&tmp.path().join("r"), &["eval", "--preds", s(&preds), "--scenes", s(&scenes)]), 2);
}

#[test]
fn train_then_infer_all_layers() {
    let tmp = TempDir::new().unwrap();
    let scenes = gen(&tmp, 2, 3);
    let run = tmp.path().join("run");
    let mut args = TINY_MODEL.to_vec();
    args.extend(["--set", "train.iterations=2", "--seed", "11", "train", "--scenes", s(&scenes)]);
    ok(&run, &args);
    let curve = fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2);
    let ckpt = run.join("checkpoint.json");
    let again = tmp.path().join("again");
    ok(&again, &args);
    assert_eq!(curve, fs::read_to_string(again.join("loss_curve.csv")).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("checkpoint.json")).unwrap());

    let preds = tmp.path().join("preds");
    ok(&preds, &["infer", "--checkpoint", s(&ckpt), "--scenes", s(&scenes), "--all-layers"]);
    assert_eq!(listing(&preds).iter().filter(|f| f.ends_with(".json")).count(), 2);
    assert_eq!(listing(&preds.join("layers")).len(), 2 * 2);
    let d = DetectionSet::from_json(&fs::read_to_string(preds.join("scene_3_0.json")).unwrap()).unwrap();
    assert_eq!(d.points.len(), 12);

    let mut wrong = TINY_MODEL.to_vec();
    wrong.extend(["--set", "model.d=16", "infer", "--checkpoint", s(&ckpt), "--scenes", s(&scenes)]);
    assert_eq!(code(&tmp.path().join("w"), &wrong), 4);

    let mut same = TINY_MODEL.to_vec();
    same.extend(["infer", "--checkpoint", s(&ckpt), "--scenes", s(&scenes)]);
    ok(&tmp.path().join("same"), &same);
}
