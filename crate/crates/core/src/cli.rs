//! The `esf` command line.
//!
//! Exit codes: 0 success, 1 usage or input problems (bad flags, missing or
//! malformed files), 2 failures while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{gen_toy_dataset, load_image, perturb, save_image, DatasetManifest, PerturbKind, ToySplit};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::metrics::{evaluate, robustness_eval, spectrum_average, THRESHOLD};
use crate::model::Detector;
use crate::training::{load_checkpoint, save_checkpoint, train, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "esf", version, about = "Detect AI-generated CT slices", propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    /// The four kinds one at a time, then composed.
    All,
    Blur,
    Crop,
    Jpeg,
    Noise,
}

impl KindArg {
    fn kinds(self) -> Vec<PerturbKind> {
        match self {
            KindArg::All => PerturbKind::ALL.to_vec(),
            KindArg::Blur => vec![PerturbKind::Blur],
            KindArg::Crop => vec![PerturbKind::Crop],
            KindArg::Jpeg => vec![PerturbKind::Jpeg],
            KindArg::Noise => vec![PerturbKind::Noise],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic real/fake dataset as PGM files plus manifest.json.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long)]
        n: usize,
        /// Side length, a power of two of at least 32.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ToySplit::Train)]
        split: ToySplit,
    },
    /// Train from a JSON run configuration and write an ESFC checkpoint.
    Train {
        /// Dataset directory or manifest.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch CSV trace. Defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a dataset and write a JSON report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also score perturbed copies.
        #[arg(long, value_enum)]
        perturb: Option<KindArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the fake-probability of one image.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Copy a dataset with every image perturbed, mirroring its layout.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        seed: u64,
    },
    /// Average centered log-magnitude spectrum of a directory of images.
    Spectrum {
        #[arg(long)]
        dir: PathBuf,
        /// Output image, .pgm or .png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

/// Failures that the user can fix by changing what they passed in.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format { .. } | Error::Input(_) => 1,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{}", e.render());
                return 1;
            }
            let text = e.render().to_string();
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            let first = lines.next().unwrap_or("error: invalid arguments");
            match lines.find(|l| l.starts_with("Usage:")) {
                Some(usage) => eprintln!("{first} ({usage})"),
                None => eprintln!("{first}"),
            }
            return 1;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn report_io(r: std::io::Result<()>) -> Result<()> {
    r.map_err(|e| Error::io("<stdout>", e))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::GenToy { out: dir, n, size, seed, split } => {
            let m = gen_toy_dataset(n, size, seed, split, &dir)?;
            report_io(writeln!(out, "wrote {} images to {}", m.total(), dir.display()))?;
        }
        Command::Train { data, config, out: ckpt, seed, trace } => {
            let mut run = RunConfig::load(&config)?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            let samples = DatasetManifest::open(&data)?.load_all()?;
            let total = run.train.epochs;
            let mut log_err = None;
            let outcome = train(&samples, &run.model, &run.train, |r| {
                if let Err(e) = writeln!(
                    out,
                    "epoch {}/{total} loss {:.6} acc {:.2} lr {:.3e}",
                    r.epoch, r.mean_loss, r.train_acc, r.lr
                ) {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(Error::io("<stdout>", e));
            }
            save_checkpoint(&outcome.params, &ckpt)?;
            let trace = trace.unwrap_or_else(|| ckpt.with_extension("csv"));
            outcome.write_trace(&trace)?;
            report_io(writeln!(out, "wrote {} and {}", ckpt.display(), trace.display()))?;
        }
        Command::Eval { data, ckpt, report, perturb, seed } => {
            let detector = Detector::new(load_checkpoint(&ckpt)?)?;
            let manifest = DatasetManifest::open(&data)?;
            let r = match perturb {
                Some(k) => robustness_eval(&detector, &manifest, &k.kinds(), seed)?,
                None => evaluate(&detector, &manifest)?,
            };
            r.write(&report)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let mut line = format!("mAcc={:.4} mAP={:.4}", r.m_acc, r.m_ap);
            if let Some(p) = &r.perturbation {
                line += &format!(" average_drop={:.4}", p.average_drop);
            }
            report_io(writeln!(out, "{line}"))?;
        }
        Command::Infer { image, ckpt } => {
            let detector = Detector::new(load_checkpoint(&ckpt)?)?;
            let score = detector.score(&load_image(&image)?)?;
            let label = if score >= THRESHOLD { "fake" } else { "real" };
            report_io(writeln!(out, "score={score:.6} label={label}"))?;
        }
        Command::Perturb { input, out: dest, kind, seed } => {
            let n = perturb_dataset(&input, &dest, &kind.kinds(), seed)?;
            report_io(writeln!(out, "wrote {n} perturbed images to {}", dest.display()))?;
        }
        Command::Spectrum { dir, out: path } => {
            let map = spectrum_average(&dir)?;
            save_image(&map, &path)?;
            report_io(writeln!(out, "wrote {}x{} spectrum to {}", map.width(), map.height(), path.display()))?;
        }
        Command::Gradcheck { seed, seeds } => {
            let cases = gradcheck::run_all(seed, seeds)?;
            let failed = cases.iter().filter(|c| !c.passed).count();
            for c in &cases {
                let verdict = if c.passed { "ok" } else { "FAIL" };
                report_io(writeln!(
                    out,
                    "{verdict:<4} {:<40} coords {:>4} max_rel_err {:.3e}",
                    c.name, c.checked, c.max_rel_err
                ))?;
            }
            report_io(writeln!(out, "{} cases, {failed} failed", cases.len()))?;
            if failed > 0 {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

/// Perturbed copy of every image under `input` at the same relative path
/// under `dest`. File `i` in manifest order uses seed `seed + i`, matching
/// the perturbation sweep of `eval --perturb`.
pub fn perturb_dataset(input: &Path, dest: &Path, kinds: &[PerturbKind], seed: u64) -> Result<usize> {
    let manifest = DatasetManifest::open(input)?;
    let root = manifest.root.clone();
    let samples = manifest.samples();
    samples
        .par_iter()
        .enumerate()
        .map(|(i, (path, _))| {
            let rel = path
                .strip_prefix(&root)
                .map_err(|_| Error::Input(format!("{} is outside the dataset root", path.display())))?;
            let target = dest.join(rel);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let img = kinds
                .iter()
                .try_fold(load_image(path)?, |acc, &k| perturb(&acc, k, &mut rng))?;
            save_image(&img, &target)
        })
        .collect::<Result<Vec<()>>>()?;
    DatasetManifest::scan(dest)?.write(dest.join("manifest.json"))?;
    Ok(samples.len())
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::{Path, PathBuf};

    use super::run;
    use crate::metrics::EvalReport;
    use crate::model::ModelConfig;
    use crate::training::{RunConfig, TrainConfig};

    fn esf(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = run(std::iter::once("esf").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    fn ok(args: &[&str]) -> String {
        let (code, out) = esf(args);
        assert_eq!(code, 0, "{args:?}");
        out
    }

    fn p(path: &Path) -> &str {
        path.to_str().unwrap()
    }

    /// A quick run: tiny model, two epochs on a few toy images.
    fn quick_setup(dir: &Path) -> (PathBuf, PathBuf) {
        let data = dir.join("toy");
        ok(&["gen-toy", "--out", p(&data), "--n", "6", "--size", "32", "--seed", "3"]);
        let cfg = RunConfig {
            model: ModelConfig {
                base_channels: 4,
                ..ModelConfig::with_scale(32)
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..TrainConfig::default()
            },
        };
        let cfg_path = dir.join("run.json");
        fs::write(&cfg_path, cfg.to_json()).unwrap();
        let ckpt = dir.join("m.esfc");
        ok(&["train", "--data", p(&data), "--config", p(&cfg_path), "--out", p(&ckpt), "--seed", "3"]);
        (data, ckpt)
    }

    #[test]
    fn usage_errors_exit_one() {
        for args in [&["frobnicate"][..], &["gen-toy", "--bogus"], &["eval"], &[]] {
            assert_eq!(esf(args).0, 1, "{args:?}");
        }
    }

    #[test]
    fn every_subcommand_has_help() {
        for sub in ["gen-toy", "train", "eval", "infer", "perturb", "spectrum", "gradcheck"] {
            let (code, out) = esf(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("Usage"), "{sub}");
        }
    }

    #[test]
    fn missing_inputs_exit_one() {
        let tmp = tempfile::tempdir().unwrap();
        let missing = tmp.path().join("nope.esfc");
        let img = tmp.path().join("nope.pgm");
        assert_eq!(esf(&["infer", "--image", p(&img), "--ckpt", p(&missing)]).0, 1);
    }

    #[test]
    fn pipeline_outputs_are_reproducible_and_well_formed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (data_a, ckpt_a) = quick_setup(a.path());
        let (data_b, ckpt_b) = quick_setup(b.path());
        assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(&ckpt_b).unwrap());
        assert_eq!(
            fs::read(ckpt_a.with_extension("csv")).unwrap(),
            fs::read(ckpt_b.with_extension("csv")).unwrap()
        );
        let trace = fs::read_to_string(ckpt_a.with_extension("csv")).unwrap();
        assert_eq!(trace.lines().next().unwrap(), "epoch,mean_loss,train_acc,lr");
        assert_eq!(trace.lines().count(), 3);

        let ra = a.path().join("r.json");
        let rb = b.path().join("r.json");
        let line = ok(&["eval", "--data", p(&data_a), "--ckpt", p(&ckpt_a), "--report", p(&ra), "--perturb", "all", "--seed", "5"]);
        assert!(line.starts_with("mAcc="));
        ok(&["eval", "--data", p(&data_b), "--ckpt", p(&ckpt_b), "--report", p(&rb), "--perturb", "all", "--seed", "5"]);
        let text = fs::read_to_string(&ra).unwrap();
        assert_eq!(text, fs::read_to_string(&rb).unwrap());

        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["subsets", "mAcc", "mAP", "warnings", "perturbation"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let r = EvalReport::from_json(&text).unwrap();
        assert!((0.0..=100.0).contains(&r.m_acc) && (0.0..=100.0).contains(&r.m_ap));
        let mean = r.subsets.iter().map(|s| s.acc).sum::<f64>() / r.subsets.len() as f64;
        assert!((r.m_acc - mean).abs() < 1e-9);
        let kinds: Vec<&str> = r.perturbation.as_ref().unwrap().kinds.iter().map(|k| k.kind.as_str()).collect();
        assert_eq!(kinds, ["blur", "crop", "jpeg", "noise", "all"]);

        let fake = data_a.join("toy").join("fake").join("00000.pgm");
        let line = ok(&["infer", "--image", p(&fake), "--ckpt", p(&ckpt_a)]);
        assert!(line.starts_with("score=") && (line.contains("label=fake") || line.contains("label=real")));
    }

    #[test]
    fn perturbed_copy_matches_the_eval_sweep() {
        let tmp = tempfile::tempdir().unwrap();
        let (data, ckpt) = quick_setup(tmp.path());
        let copy = tmp.path().join("jpeg_copy");
        ok(&["perturb", "--in", p(&data), "--out", p(&copy), "--kind", "jpeg", "--seed", "9"]);
        for class in ["real", "fake"] {
            let mut names: Vec<_> = fs::read_dir(copy.join("toy").join(class))
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            assert_eq!(names.len(), 6);
        }
        assert!(copy.join("manifest.json").exists());

        let clean_copy = tmp.path().join("copy.json");
        ok(&["eval", "--data", p(&copy), "--ckpt", p(&ckpt), "--report", p(&clean_copy)]);
        let sweep = tmp.path().join("sweep.json");
        ok(&["eval", "--data", p(&data), "--ckpt", p(&ckpt), "--report", p(&sweep), "--perturb", "jpeg", "--seed", "9"]);
        let on_copy = EvalReport::from_json(&fs::read_to_string(clean_copy).unwrap()).unwrap();
        let swept = EvalReport::from_json(&fs::read_to_string(sweep).unwrap()).unwrap();
        assert_eq!(on_copy.m_acc, swept.perturbation.unwrap().kinds[0].m_acc);
    }

    #[test]
    fn spectrum_is_written_at_image_size() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("toy");
        ok(&["gen-toy", "--out", p(&data), "--n", "3", "--size", "32", "--seed", "1"]);
        let out = tmp.path().join("s.png");
        ok(&["spectrum", "--dir", p(&data.join("toy").join("fake")), "--out", p(&out)]);
        let img = crate::data::load_image(&out).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
        let again = tmp.path().join("s2.png");
        ok(&["spectrum", "--dir", p(&data.join("toy").join("fake")), "--out", p(&again)]);
        assert_eq!(fs::read(out).unwrap(), fs::read(again).unwrap());
    }

    #[test]
    fn gradcheck_reports_cases() {
        let out = ok(&["gradcheck", "--seeds", "1"]);
        assert!(out.lines().last().unwrap().ends_with(", 0 failed"));
        assert!(out.contains("network"));
    }
}
