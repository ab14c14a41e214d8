use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use scorewalk::evaluation::{baseline_mean, sliced_wasserstein, BASELINE_REPLICATES};
use scorewalk::sampler::{init_state, InitMode};
use scorewalk::training::{Checkpoint, Parameterization};
use scorewalk::GaussianMixture64;
use scorewalk_cli::commands::{self, Context, GlobalArgs};
use scorewalk_cli::io::{decode_pgm, parse_samples, read_pgm, read_samples, ObservationFile};
use scorewalk_cli::{exit, main_with_args, CliError};

const MIXTURE_2D: &str = r#"
[target]
weights = [0.4, 0.6]
means = [[-1.5, 0.0], [1.0, 0.5]]
stds = [0.4, 0.5]
"#;

const MIXTURE_1D: &str = r#"
[target]
weights = [0.35, 0.65]
means = [[-1.2], [0.9]]
stds = [0.4, 0.7]
"#;

const GEOMETRIC: &str = r#"
[schedule]
kind = "geometric"
sigma_max = 10.0
sigma_min = 0.01
steps = 300
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("scorewalk").chain(args.iter().copied()))
}

fn cli_in(command: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![command, "--quiet", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli(&args)
}

fn header_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_string))
}

fn args_for(config: &Path, out: &Path) -> GlobalArgs {
    GlobalArgs {
        config: Some(config.to_path_buf()),
        out: Some(out.to_path_buf()),
        quiet: true,
        ..GlobalArgs::default()
    }
}

#[test]
fn train_tags_checkpoints_by_parameterization() {
    let dir = tempfile::tempdir().unwrap();
    let ve = write(
        dir.path(),
        "ve.toml",
        &format!(
            "{MIXTURE_1D}\n[train]\nparameterization = \"ve_direct\"\nhidden = [16]\nsigma = \"uniform\"\nsigma_min = 0.2\nsigma_max = 2.0\nweight = \"inverse_fourth\"\nbatch_size = 8\nsteps = 20\nlearning_rate = 1e-4\n"
        ),
    );
    assert_eq!(cli_in("train", &ve, &dir.path().join("ve"), &[]), exit::OK);
    let ck = Checkpoint::from_bytes(&fs::read(dir.path().join("ve/model.ckpt")).unwrap()).unwrap();
    assert_eq!(ck.parameterization, Parameterization::VeDirect);
    assert_eq!(ck.meta.steps, 20);
    let losses = read_samples_like(&dir.path().join("ve/losses.csv"));
    assert_eq!(losses, 20);
    let sidecar = fs::read_to_string(dir.path().join("ve/model.toml")).unwrap();
    assert!(sidecar.contains("parameterization = \"ve_direct\""));
    assert!(toml_parses(&sidecar));

    let vp = write(
        dir.path(),
        "vp.toml",
        &format!(
            "{MIXTURE_1D}\n[schedule]\nkind = \"alpha_linear\"\nalpha_first = 0.999\nalpha_last = 0.95\nsteps = 50\n\n[train]\nparameterization = \"vp_epsilon\"\nhidden = [16]\nsigma = \"vp_discrete\"\nweight = \"balanced\"\nbatch_size = 8\nsteps = 0\nlearning_rate = 1e-3\n"
        ),
    );
    assert_eq!(cli_in("train", &vp, &dir.path().join("vp"), &[]), exit::OK);
    let ck = Checkpoint::from_bytes(&fs::read(dir.path().join("vp/model.ckpt")).unwrap()).unwrap();
    assert_eq!(ck.parameterization, Parameterization::VpEpsilon);
    assert_eq!(ck.meta.steps, 0);
    assert_eq!(ck.schedule_alphas.as_ref().map(Vec::len), Some(50));
    assert_eq!(read_samples_like(&dir.path().join("vp/losses.csv")), 0);
}

fn read_samples_like(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).count() - 1
}

fn toml_parses(text: &str) -> bool {
    text.parse::<toml::Table>().is_ok()
}

#[test]
fn diverging_training_keeps_a_checkpoint_and_exits_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!(
            "{MIXTURE_1D}\n[train]\nparameterization = \"ve_direct\"\nhidden = [16]\nsigma = \"uniform\"\nsigma_min = 0.2\nsigma_max = 2.0\nweight = \"balanced\"\nbatch_size = 8\nsteps = 200\nlearning_rate = 1e6\n"
        ),
    );
    assert_eq!(cli_in("train", &cfg, dir.path(), &[]), exit::NUMERIC);
    assert!(Checkpoint::from_bytes(&fs::read(dir.path().join("model.ckpt")).unwrap()).is_ok());
    let sidecar = fs::read_to_string(dir.path().join("model.toml")).unwrap();
    assert!(sidecar.contains("status = \"diverged\""));
}

#[test]
fn zero_iterations_writes_the_initial_states() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("seed = 5\n{MIXTURE_2D}{GEOMETRIC}\n[plan]\npreset = \"ncsn\"\nepsilon = 2e-5\nmax_iterations = 0\n"),
    );
    assert_eq!(cli_in("sample", &cfg, dir.path(), &["--chains", "7"]), exit::OK);
    let text = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(header_value(&text, "iterations").as_deref(), Some("0"));
    let rows = parse_samples(&text).unwrap();
    assert_eq!(rows.len(), 7);
    let ctx = Context::load("sample", &args_for(&cfg, dir.path())).unwrap();
    let plan = ctx.config.plan.as_ref().unwrap().build(ctx.config.schedule.as_ref().unwrap()).unwrap();
    for (c, row) in rows.iter().enumerate() {
        let s = init_state(&plan, 2, &InitMode::GaussianSigma0, 5, c as u64).unwrap();
        assert_eq!(row, &s.x);
    }
}

#[test]
fn ddpm_terminal_rule_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!(
            "{MIXTURE_2D}\n[schedule]\nkind = \"alpha_linear\"\nalpha_first = 0.9999\nalpha_last = 0.98\nsteps = 200\n\n[plan]\npreset = \"ddpm\"\nsigma_prime = \"beta\"\nterminal_unit_temperature = true\nrecord_stride = 50\n"
        ),
    );
    assert_eq!(cli_in("sample", &cfg, dir.path(), &["--chains", "20"]), exit::OK);
    let text = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(header_value(&text, "temperature_last").as_deref(), Some("1"));
    assert_eq!(header_value(&text, "preset").as_deref(), Some("ddpm"));
    let plan = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let last = plan.lines().last().unwrap();
    assert!(last.ends_with(",1"), "{last}");
    // 200 steps at stride 50: records at k = 0, 50, 100, 150, 200.
    let traj = parse_samples(&fs::read_to_string(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(traj.len(), 20 * 5);
}

#[test]
fn checkpoint_source_range_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(
        dir.path(),
        "t.toml",
        &format!(
            "{MIXTURE_2D}\n[train]\nparameterization = \"ve_residual\"\nhidden = [8]\nsigma = \"uniform\"\nsigma_min = 0.1\nsigma_max = 5.0\nweight = \"balanced\"\nbatch_size = 4\nsteps = 5\nlearning_rate = 1e-4\n"
        ),
    );
    assert_eq!(cli_in("train", &train, &dir.path().join("m"), &[]), exit::OK);
    let sample = |strict: bool| {
        format!(
            "{GEOMETRIC}\n[source]\nkind = \"checkpoint\"\ncheckpoint = \"m/model.ckpt\"\nstrict = {strict}\n\n[plan]\npreset = \"ve_sde\"\n"
        )
    };
    let lax = write(dir.path(), "lax.toml", &sample(false));
    assert_eq!(cli_in("sample", &lax, &dir.path().join("lax"), &["--chains", "3"]), exit::OK);
    let text = fs::read_to_string(dir.path().join("lax/samples.csv")).unwrap();
    assert_eq!(header_value(&text, "source").as_deref(), Some("checkpoint"));
    let strict = write(dir.path(), "strict.toml", &sample(true));
    assert_eq!(cli_in("sample", &strict, &dir.path().join("strict"), &["--chains", "3"]), exit::CONFIG);
}

#[test]
fn measurement_noise_and_operators() {
    let dir = tempfile::tempdir().unwrap();
    let n = 4000;
    let truth: Vec<String> = (0..n).map(|i| format!("{}", (i as f64 * 0.37).sin())).collect();
    write(
        dir.path(),
        "truth.csv",
        &format!("{}\n{}\n", (0..n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","), truth.join(",")),
    );
    let cfg = |eta: &str, op: &str, gt: &str| format!("[measurement]\nground_truth = \"{gt}\"\neta = {eta}\noperator = {op}\n");

    let zero = write(dir.path(), "zero.toml", &cfg("0.0", "{ kind = \"identity\" }", "truth.csv"));
    assert_eq!(cli_in("make-measurement", &zero, &dir.path().join("z"), &[]), exit::CONFIG);

    let keep_all = write(
        dir.path(),
        "all.toml",
        &cfg("0.2", "{ kind = \"mask\", keep_fraction = 1.0 }", "truth.csv"),
    );
    assert_eq!(cli_in("make-measurement", &keep_all, &dir.path().join("a"), &[]), exit::OK);
    let obs = ObservationFile::read(&dir.path().join("a/observation.toml")).unwrap();
    let x: Vec<f64> = truth.iter().map(|s| s.parse().unwrap()).collect();
    let r: Vec<f64> = obs.y.iter().zip(&x).map(|(y, x)| y - x).collect();
    let m = r.iter().sum::<f64>() / n as f64;
    let sd = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt();
    // Standard error of a sample sd is sd/sqrt(2n) ≈ 0.0022.
    assert!((sd - 0.2).abs() < 0.01, "{sd}");

    // 4x4 constant image, 2x2 block average.
    let mut pgm = b"P5\n4 4\n255\n".to_vec();
    pgm.extend(std::iter::repeat_n(102u8, 16));
    fs::write(dir.path().join("flat.pgm"), &pgm).unwrap();
    let block = write(dir.path(), "block.toml", &cfg("0.2", "{ kind = \"block_average\", factor = 2 }", "flat.pgm"));
    assert_eq!(cli_in("make-measurement", &block, &dir.path().join("b"), &[]), exit::OK);
    let obs = ObservationFile::read(&dir.path().join("b/observation.toml")).unwrap();
    assert_eq!(obs.y.len(), 4);
    assert!(obs.y.iter().all(|v| (v - 0.4).abs() < 1.0));
    let img = read_pgm(&dir.path().join("b/observation.pgm")).unwrap();
    assert_eq!((img.width, img.height), (2, 2));

    let wrong = write(
        dir.path(),
        "wrong.toml",
        &cfg("0.2", "{ kind = \"dense\", rows = [[1.0, 2.0, 3.0]] }", "truth.csv"),
    );
    assert_eq!(cli_in("make-measurement", &wrong, &dir.path().join("w"), &[]), exit::CONFIG);
}

#[test]
fn vanishing_likelihood_matches_unconditional_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!("seed = 3\n{MIXTURE_2D}{GEOMETRIC}\n[plan]\npreset = \"simplified\"\nepsilon = 0.4\n");
    write(
        dir.path(),
        "obs.toml",
        "eta = 1000.0\ny = [0.0, 0.0]\n\n[operator]\nkind = \"mask\"\ndim = 2\nkeep = [0, 1]\n",
    );
    let uncond = write(dir.path(), "u.toml", &base);
    let cond = write(dir.path(), "c.toml", &format!("{base}\n[condition]\nobservation = \"obs.toml\"\n"));
    assert_eq!(cli_in("sample", &uncond, &dir.path().join("u"), &["--chains", "3000"]), exit::OK);
    assert_eq!(cli_in("sample-cond", &cond, &dir.path().join("c"), &["--chains", "3000", "--seed", "4"]), exit::OK);
    assert!(!dir.path().join("c/psnr.csv").exists());
    assert!(dir.path().join("c/mean.csv").exists());
    let a = read_samples(&dir.path().join("u/samples.csv")).unwrap();
    let b = read_samples(&dir.path().join("c/samples.csv")).unwrap();
    let sw = |x: &[Vec<f64>], y: &[Vec<f64>]| sliced_wasserstein(x, y, 200, 9);
    let target = GaussianMixture64::isotropic(vec![0.4, 0.6], vec![vec![-1.5, 0.0], vec![1.0, 0.5]], &[0.4, 0.5]).unwrap();
    let base_sw = baseline_mean(&target, 3000, 1, BASELINE_REPLICATES, sw).unwrap();
    let d = sw(&a, &b).unwrap();
    assert!(d <= 3.0 * base_sw, "{d} vs baseline {base_sw}");
}

#[test]
fn conditional_sampling_reports_psnr_and_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = b"P5\n4 4\n255\n".to_vec();
    pgm.extend((0..16u8).map(|i| i * 15));
    fs::write(dir.path().join("gt.pgm"), &pgm).unwrap();
    let toy = "[toy_image]\nwidth = 4\nheight = 4\n";
    let meas = write(
        dir.path(),
        "m.toml",
        "[measurement]\nground_truth = \"gt.pgm\"\neta = 0.2\noperator = { kind = \"block_average\", factor = 2 }\n",
    );
    assert_eq!(cli_in("make-measurement", &meas, &dir.path().join("obs"), &[]), exit::OK);
    let plan = "[schedule]\nkind = \"geometric\"\nsigma_max = 3.0\nsigma_min = 0.01\nsteps = 200\n\n[plan]\npreset = \"simplified\"\nepsilon = 0.5\n";
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{toy}{plan}\n[condition]\nobservation = \"obs/observation.toml\"\nground_truth = \"gt.pgm\"\n"),
    );
    assert_eq!(cli_in("sample-cond", &cfg, &dir.path().join("s"), &["--chains", "200"]), exit::OK);
    let psnr = fs::read_to_string(dir.path().join("s/psnr.csv")).unwrap();
    assert_eq!(psnr.lines().filter(|l| l.starts_with("sample,")).count(), 200);
    assert!(psnr.contains("pixelwise_mean,,"));
    let mean = decode_pgm(&fs::read(dir.path().join("s/mean.pgm")).unwrap()).unwrap();
    assert_eq!((mean.width, mean.height), (4, 4));

    let wrong = write(
        dir.path(),
        "w.toml",
        &format!("{MIXTURE_2D}{plan}\n[condition]\nobservation = \"obs/observation.toml\"\n"),
    );
    assert_eq!(cli_in("sample-cond", &wrong, &dir.path().join("w"), &["--chains", "5"]), exit::CONFIG);
}

#[test]
fn eval_rows_zeros_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!("{MIXTURE_1D}{GEOMETRIC}\n[plan]\npreset = \"simplified\"\nepsilon = 0.4\n"),
    );
    assert_eq!(cli_in("sample", &cfg, &dir.path().join("s"), &["--chains", "2000"]), exit::OK);

    let vs_target = write(dir.path(), "e.toml", &format!("{MIXTURE_1D}\n[eval]\nsamples = [\"s/samples.csv\"]\n"));
    assert_eq!(cli_in("eval", &vs_target, &dir.path().join("e"), &[]), exit::OK);
    let report = fs::read_to_string(dir.path().join("e/eval.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let metrics: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(metrics, ["w1", "sliced_w1", "moment_max_abs_z"]);
    for r in &rows {
        assert_eq!(r[6], "true", "{r:?}");
    }

    let itself = write(
        dir.path(),
        "self.toml",
        "[eval]\nsamples = [\"s/samples.csv\"]\nreference = \"s/samples.csv\"\nmetrics = [\"w1\", \"sliced_w1\"]\n",
    );
    assert_eq!(cli_in("eval", &itself, &dir.path().join("i"), &[]), exit::OK);
    let report = fs::read_to_string(dir.path().join("i/eval.csv")).unwrap();
    for l in report.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert_eq!(l.split(',').nth(2), Some("0"), "{l}");
    }

    let mismatched = write(dir.path(), "mm.toml", &format!("{MIXTURE_2D}\n[eval]\nsamples = [\"s/samples.csv\"]\n"));
    assert_eq!(cli_in("eval", &mismatched, &dir.path().join("mm"), &[]), exit::CONFIG);

    write(dir.path(), "bad.csv", "# c: x\nchain,x0\n0,1.0\n1,oops\n");
    let bad = write(dir.path(), "bad.toml", &format!("{MIXTURE_1D}\n[eval]\nsamples = [\"bad.csv\"]\n"));
    let ctx = Context::load("eval", &args_for(&bad, &dir.path().join("bad"))).unwrap();
    let err = commands::eval(&ctx).unwrap_err();
    assert_eq!(err.exit_code(), exit::CONFIG);
    let msg = err.to_string();
    assert!(msg.contains("line 4") && msg.contains("bad.csv"), "{msg}");
}

#[test]
fn reproduce_rejects_unknown_ids() {
    let err = commands::reproduce("faces", &GlobalArgs::default()).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    let msg = err.to_string();
    for id in commands::FIGURE_IDS {
        assert!(msg.contains(id), "{msg}");
    }
}

#[test]
fn reproduce_temperature_variance_increases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["reproduce", "temperature", "--quiet", "--out", out, "--chains", "400"]), exit::OK);
    let text = fs::read_to_string(dir.path().join("temperature/metrics.csv")).unwrap();
    let vars: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vars.len(), 7);
    assert!(vars.windows(2).all(|w| w[1] > w[0]), "{vars:?}");
    assert!(dir.path().join("temperature/fit.csv").exists());
    assert!(dir.path().join("temperature/config.toml").exists());
}

#[test]
fn missing_config_is_an_io_error_and_missing_flag_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ghost = dir.path().join("nope.toml");
    assert_eq!(cli_in("sample", &ghost, dir.path(), &[]), exit::IO);
    assert_eq!(cli(&["sample", "--quiet"]), exit::CONFIG);
    let typo = write(dir.path(), "typo.toml", "[plan]\npreset = \"ncsn\"\nepsilonn = 1.0\n");
    assert_eq!(cli_in("sample", &typo, dir.path(), &[]), exit::CONFIG);
}

#[test]
fn binary_exit_codes_and_output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{MIXTURE_2D}{GEOMETRIC}\n[plan]\npreset = \"ncsn\"\nepsilon = 2e-5\nmax_iterations = 3\n"),
    );
    let root = dir.path().join("env-root");
    let status = Process::new(env!("CARGO_BIN_EXE_scorewalk"))
        .args(["sample", "--quiet", "--chains", "2", "--config"])
        .arg(&cfg)
        .env("SCOREWALK_OUT", &root)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(exit::OK));
    assert!(root.join("samples.csv").exists());

    let status = Process::new(env!("CARGO_BIN_EXE_scorewalk"))
        .args(["reproduce", "nothing", "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(exit::CONFIG));
}
