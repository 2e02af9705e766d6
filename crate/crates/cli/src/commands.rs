use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use granlab::checkpoint::{load_models, save_models};
use granlab::data::{image_grid, read_pnm_stack, read_points_csv, write_grid, write_pnm_stack, write_points_csv, Scaling};
use granlab::gam::{battle as run_battle, cross_model_error, judge, report_text, ModelPair};
use granlab::gran::{Discriminator, Generator};
use granlab::kv::KvMap;
use granlab::train::Trainer;
use granlab::verify::{self, Suite};
use granlab::{Error, Precision, Result, Tensor};

use crate::config::{read_config, scaling_from_kv, scaling_to_kv, RunConfig};
use crate::Common;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Config file layer plus flag layer (with `--seed` folded in).
fn layers(common: &Common, mut flags: KvMap) -> Result<(KvMap, KvMap)> {
    let file = match &common.config {
        Some(p) => read_config(p)?,
        None => KvMap::new(),
    };
    if let Some(s) = common.seed {
        flags.set("seed", s);
    }
    Ok((file, flags))
}

fn sigmoid(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Final samples plus per-step canvases `σ(ΔC_1 + … + ΔC_t)` and deltas `σ(ΔC_t)`.
fn export_samples(gen: &Generator<f32>, scaling: Option<&Scaling>, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let noise = gen.sample_noise(count, seed)?;
    let drawn = gen.generate(&noise)?;
    let mut running = Tensor::zeros(drawn.canvas.shape());
    let mut cumulative = Vec::new();
    for d in &drawn.deltas {
        running = running.add(d)?;
        cumulative.push(sigmoid(&running));
    }
    let deltas: Vec<Tensor<f32>> = drawn.deltas.iter().map(sigmoid).collect();
    let steps = drawn.deltas.len();
    let mut written = Vec::new();

    if drawn.canvas.rank() == 4 {
        let ext = if drawn.canvas.shape()[1] == 1 { "pgm" } else { "ppm" };
        let path = out.join(format!("samples.{ext}"));
        write_pnm_stack(&path, &drawn.canvas)?;
        written.push(path);
        let path = out.join(format!("grid.{ext}"));
        write_grid(&path, &drawn.canvas)?;
        written.push(path);
        // One row per sample, one column per step.
        let rows = count.min(16);
        for (name, frames) in [("steps", &cumulative), ("deltas", &deltas)] {
            let mut parts = Vec::with_capacity(rows * steps);
            for i in 0..rows {
                for f in frames.iter() {
                    parts.push(f.slice_rows(i, i + 1)?);
                }
            }
            let refs: Vec<&Tensor<f32>> = parts.iter().collect();
            let path = out.join(format!("{name}.{ext}"));
            write_pnm_stack(&path, &image_grid(&Tensor::stack_rows(&refs)?, steps)?)?;
            written.push(path);
        }
    } else {
        let raw = |t: &Tensor<f32>| match scaling {
            Some(s) => s.to_raw(t),
            None => Ok(t.cast::<f64>()),
        };
        let path = out.join("samples.csv");
        write_points_csv(&path, &raw(&drawn.canvas)?)?;
        written.push(path);
        let width = drawn.canvas.row_len();
        let mut csv = String::from("sample,step");
        for k in 0..width {
            let _ = write!(csv, ",x{k}");
        }
        csv.push('\n');
        let rows = count.min(100);
        let frames = cumulative.iter().map(raw).collect::<Result<Vec<_>>>()?;
        for i in 0..rows {
            for (t, f) in frames.iter().enumerate() {
                let _ = write!(csv, "{i},{}", t + 1);
                for v in &f.data()[i * width..(i + 1) * width] {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
        }
        let path = out.join("steps.csv");
        write_text(&path, &csv)?;
        written.push(path);
    }
    Ok(written)
}

pub fn train(common: &Common, flags: KvMap) -> Result<ExitCode> {
    let (file, flags) = layers(common, flags)?;
    let run = RunConfig::resolve(&KvMap::new(), &[&file, &flags])?;
    let out = &common.out;
    prepare_out(out)?;
    let resolved = run.to_kv();
    write_text(&out.join("config.txt"), &resolved.to_string())?;

    let (train_set, _) = run.data.load()?;
    let seed = run.train.seed;
    let gen = Generator::<f32>::init(run.model.clone(), seed.wrapping_add(1))?;
    let disc = Discriminator::<f32>::init(run.model.clone(), seed.wrapping_add(2))?;
    let mut trainer = Trainer::new(gen, disc, run.train.clone(), train_set.len())?;
    trainer.run(&train_set.examples)?;

    let mut extra = resolved;
    if let Some(s) = train_set.scaling() {
        scaling_to_kv(s, &mut extra);
    }
    let ckpt = out.join("checkpoint.grn");
    save_models(&ckpt, &trainer.gen, &trainer.disc, Some((&trainer.adam_g, &trainer.adam_d)), &extra)?;
    trainer.trace.write_csv(&out.join("trace.csv"))?;
    export_samples(&trainer.gen, train_set.scaling(), run.sample_count, seed, out)?;

    println!("iterations={}", trainer.trace.len());
    if let Some(last) = trainer.trace.rows().last() {
        println!(
            "final d_loss={} g_loss={} acc_real={} acc_fake={}",
            last.d_loss, last.g_loss, last.acc_real, last.acc_fake
        );
    }
    println!("checkpoint={}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

pub fn sample(checkpoint: &Path, common: &Common, count: Option<usize>) -> Result<ExitCode> {
    let saved = load_models::<f32>(checkpoint)?;
    let (file, mut flags) = layers(common, KvMap::new())?;
    if let Some(c) = count {
        flags.set("sample_count", c);
    }
    let run = RunConfig::resolve(&saved.config, &[&file, &flags])?;
    let out = &common.out;
    prepare_out(out)?;
    let mut echo = KvMap::new();
    echo.set("sample_count", run.sample_count).set("seed", run.train.seed);
    write_text(
        &out.join("config.txt"),
        &format!("# checkpoint {}\n{echo}", checkpoint.display()),
    )?;
    let scaling = scaling_from_kv(&saved.config)?;
    for p in export_samples(&saved.gen, scaling.as_ref(), run.sample_count, run.train.seed, out)? {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn label(steps: usize, other: usize, side: usize) -> String {
    if steps == other {
        format!("GRAN{steps}.{side}")
    } else {
        format!("GRAN{steps}")
    }
}

pub fn battle(c1: &Path, c2: &Path, common: &Common, flags: KvMap) -> Result<ExitCode> {
    let a = load_models::<f32>(c1)?;
    let b = load_models::<f32>(c2)?;
    let (file, flags) = layers(common, flags)?;
    let run = RunConfig::resolve(&a.config, &[&file, &flags])?;
    let (t1, t2) = (a.gen.config.steps, b.gen.config.steps);
    let m1 = ModelPair::new(label(t1, t2, 1), a.gen, a.disc)?;
    let m2 = ModelPair::new(label(t2, t1, 2), b.gen, b.disc)?;
    let (train_set, test_set) = run.data.load()?;
    let n = run.n.unwrap_or(test_set.len());
    let out = &common.out;
    prepare_out(out)?;
    let mut echo = run.data.to_kv();
    echo.set("n", n).set("delta", run.delta).set("seed", run.train.seed);
    write_text(
        &out.join("config.txt"),
        &format!("# checkpoint1 {}\n# checkpoint2 {}\n{echo}", c1.display(), c2.display()),
    )?;
    let report = run_battle(&m1, &m2, &train_set.examples, &test_set.examples, n, run.train.seed)?;
    let text = report_text(&report, &judge(&report, run.delta));
    write_text(&out.join("battle.txt"), &text)?;
    print!("{text}");
    // The verdict is data, not a failure: always exit 0.
    Ok(ExitCode::SUCCESS)
}

pub fn cross_eval(checkpoint: &Path, samples: &Path, common: &Common) -> Result<ExitCode> {
    let saved = load_models::<f32>(checkpoint)?;
    let x: Tensor<f32> = if samples.extension().is_some_and(|e| e == "csv") {
        let raw = read_points_csv::<f64>(samples)?;
        match scaling_from_kv(&saved.config)? {
            Some(s) => s.to_unit(&raw)?,
            None => raw.cast(),
        }
    } else {
        read_pnm_stack(samples)?
    };
    let rate = cross_model_error(&saved.disc, &x)?;
    prepare_out(&common.out)?;
    let mut m = KvMap::new();
    m.set("samples", samples.display())
        .set("count", x.rows())
        .set("cross_model_error", rate);
    write_text(
        &common.out.join("cross_eval.txt"),
        &format!("# checkpoint {}\n{m}", checkpoint.display()),
    )?;
    println!("cross_model_error={rate}");
    Ok(ExitCode::SUCCESS)
}

pub fn verify(suite: &str, seed: u64) -> Result<ExitCode> {
    let suite = Suite::parse(suite)?;
    let precision = Precision::from_env(Precision::Wide)?;
    let report = match precision {
        Precision::Wide => verify::run::<f64>(suite, seed)?,
        Precision::Standard => verify::run::<f32>(suite, seed)?,
    };
    println!("{} suite ({} precision)", suite.name(), if precision == Precision::Wide { "wide" } else { "standard" });
    println!("{report}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
