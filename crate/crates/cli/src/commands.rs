use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hsie_core::baselines::Baseline;
use hsie_core::hsidata::{
    degrade, extract_patches, normalize, read_cube, synth_scene, write_cube, CubePaths, DegradeConfig, HsiCube,
};
use hsie_core::metrics::{curve_csv, MetricsReport};
use hsie_core::model::HsieConfig;
use hsie_core::pyramid::decompose_cube;
use hsie_core::rng::derive_seed;
use hsie_core::training::{enhance_cube, train as train_model, Checkpoint, TrainConfig, TrainHooks, Validation};
use hsie_core::verify::{run_all, Fault};

use crate::config::ConfigFile;
use crate::exit::CliError;
use crate::preview::write_preview;
use crate::{
    BaselineArgs, DecomposeArgs, DegradeFlags, EnhanceArgs, EvalArgs, FaultArg, Method, Preset, SynthArgs, TrainArgs,
    VerifyArgs,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    /// Cube base names relative to the manifest directory.
    pub clean: String,
    pub low: String,
    pub scene_seed: u64,
    pub degrade_seed: u64,
}

/// Written by `synth`, read by `train`. Per-scene seeds are derived from the
/// root seed, so the `seed` inside `degrade` is not used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub seed: u64,
    pub degrade: DegradeConfig,
    pub scenes: Vec<SceneEntry>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Data already inside `[0, 1]` is kept as is so that the brightness gap
/// between low-light and reference cubes survives; anything else is
/// min-max scaled into range.
pub fn to_unit_range(cube: HsiCube) -> Result<HsiCube, CliError> {
    let (lo, hi) = cube.min_max();
    if lo >= 0.0 && hi <= 1.0 {
        Ok(cube)
    } else {
        Ok(normalize(&cube)?)
    }
}

fn degrade_config(file: &ConfigFile, flags: &DegradeFlags) -> Result<DegradeConfig, CliError> {
    let mut d = file.degrade(DegradeConfig::default())?;
    let overrides = [
        (&mut d.illumination_gain, flags.gain),
        (&mut d.gain_variation, flags.gain_variation),
        (&mut d.gaussian_sigma, flags.noise_sigma),
        (&mut d.impulse_fraction, flags.impulse),
        (&mut d.stripe_fraction, flags.stripes),
        (&mut d.stripe_amplitude, flags.stripe_amplitude),
    ];
    for (slot, flag) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    d.validate()?;
    Ok(d)
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let degrade_cfg = degrade_config(&file, &a.degrade)?;
    if a.scenes == 0 {
        return Err(CliError::validation("--scenes must be at least 1"));
    }
    // Rejects bad dimensions before anything touches the disk.
    synth_scene(a.height, a.width, a.bands, 0)?;
    create_dir(&a.out)?;

    let mut scenes = Vec::with_capacity(a.scenes);
    for i in 0..a.scenes {
        let scene_seed = derive_seed(a.seed, "scene", i as u64);
        let degrade_seed = derive_seed(a.seed, "degrade", i as u64);
        let clean = synth_scene(a.height, a.width, a.bands, scene_seed)?;
        let low = degrade(&clean, &DegradeConfig { seed: degrade_seed, ..degrade_cfg })?;
        let entry = SceneEntry {
            clean: format!("scene_{i}_clean"),
            low: format!("scene_{i}_low"),
            scene_seed,
            degrade_seed,
        };
        write_cube(&clean, a.out.join(&entry.clean))?;
        write_cube(&low, a.out.join(&entry.low))?;
        scenes.push(entry);
    }
    let manifest = Manifest {
        height: a.height,
        width: a.width,
        bands: a.bands,
        seed: a.seed,
        degrade: degrade_cfg,
        scenes,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&a.out.join(MANIFEST), &text)?;
    println!("wrote {} scene pairs to {}", a.scenes, a.out.display());
    Ok(())
}

pub fn decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let cube = read_cube(&a.input)?;
    let (high, low) = decompose_cube(&cube)?;
    create_dir(&a.out)?;
    write_cube(&high, a.out.join("high"))?;
    write_cube(&low, a.out.join("low"))?;
    let energy = |c: &HsiCube| c.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / c.data().len() as f64;
    println!(
        "high {}x{}x{} (mean square {:.6e}), low {}x{}x{} (mean square {:.6e})",
        high.height(),
        high.width(),
        high.bands(),
        energy(&high),
        low.height(),
        low.width(),
        low.bands(),
        energy(&low)
    );
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(CliError::validation(format!("no {MANIFEST} in {}", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        code: crate::exit::IO,
        message: format!("{}: {e}", path.display()),
    })
}

fn read_pair(dir: &Path, entry: &SceneEntry) -> Result<(HsiCube, HsiCube), CliError> {
    for name in [&entry.clean, &entry.low] {
        let paths = CubePaths::new(dir.join(name));
        if !paths.header.exists() || !paths.raw.exists() {
            return Err(CliError::validation(format!(
                "missing cube `{name}` of pair ({}, {}) in {}",
                entry.clean,
                entry.low,
                dir.display()
            )));
        }
    }
    let clean = to_unit_range(read_cube(dir.join(&entry.clean))?)?;
    let low = to_unit_range(read_cube(dir.join(&entry.low))?)?;
    Ok((low, clean))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let base = match a.preset {
        Preset::Full => HsieConfig::full(),
        Preset::Desk => HsieConfig::desk(),
    };
    let model_cfg = file.model(base)?;
    let mut cfg = file.train(TrainConfig::default())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = a.lr {
        cfg.lr0 = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.patch {
        cfg.patch = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    model_cfg.validate()?;
    cfg.validate()?;

    let manifest = load_manifest(&a.data)?;
    if let Some(v) = a.validate_scene {
        if v >= manifest.scenes.len() || manifest.scenes.len() < 2 {
            return Err(CliError::validation(format!(
                "--validate-scene {v} needs another scene to train on among {}",
                manifest.scenes.len()
            )));
        }
    }
    let resume = a.resume.as_deref().map(|p| Checkpoint::load_for(p, &model_cfg)).transpose()?;

    let mut samples = Vec::new();
    let mut validation = None;
    for (i, entry) in manifest.scenes.iter().enumerate() {
        let (low, clean) = read_pair(&a.data, entry)?;
        if Some(i) == a.validate_scene {
            validation = Some(Validation { low, clean });
        } else {
            samples.extend(extract_patches(&low, &clean, cfg.patch, model_cfg.k)?);
        }
    }
    create_parent(&a.out)?;
    let hooks = TrainHooks {
        checkpoint: Some(a.out.clone()),
        validation,
        resume,
        on_step: None,
    };
    let (_, log) = train_model(&samples, &cfg, &model_cfg, &hooks)?;

    let steps_path = with_suffix(&a.out, ".steps.csv");
    write_text(&steps_path, &log.steps_csv())?;
    if !log.epochs.is_empty() {
        write_text(&with_suffix(&a.out, ".epochs.csv"), &log.epochs_csv())?;
    }
    match (log.first_loss(), log.last_loss()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps on {} samples: loss {first:.6} -> {last:.6}; checkpoint {}",
            log.steps.len(),
            samples.len(),
            a.out.display()
        ),
        _ => println!("no training steps run; checkpoint {}", a.out.display()),
    }
    Ok(())
}

pub fn enhance(a: &EnhanceArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    if let Some(path) = &a.config {
        let file = ConfigFile::load(Some(path))?;
        let expected = file.model(*ckpt.params.config())?;
        ckpt.params.check_compatible(&expected)?;
    }
    let cube = read_cube(&a.input)?;
    let cube = if a.no_normalize { cube } else { to_unit_range(cube)? };
    let out = enhance_cube(&cube, &ckpt.params)?;
    create_parent(&a.out)?;
    write_cube(&out, &a.out)?;
    write_preview(&out, &a.out)?;
    println!("enhanced {} bands -> {}", out.bands(), a.out.display());
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> Result<(), CliError> {
    let method = match a.method {
        Method::He => Baseline::He,
        Method::Clahe => Baseline::clahe_default(),
        Method::Msr => Baseline::msr_default(),
        Method::Mr => Baseline::mr_default(),
    };
    let cube = to_unit_range(read_cube(&a.input)?)?;
    let out = method.apply(&cube)?;
    create_parent(&a.out)?;
    write_cube(&out, &a.out)?;
    write_preview(&out, &a.out)?;
    println!("{:?}: {} bands -> {}", a.method, out.bands(), a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let reference = read_cube(&a.reference)?;
    let test = read_cube(&a.test)?;
    let report = MetricsReport::compute(&reference, &test)?;
    create_parent(&a.report)?;
    write_text(&a.report, &report.to_json())?;
    if let Some(curve) = &a.curve {
        create_parent(curve)?;
        write_text(curve, &curve_csv(&report.band_psnr))?;
    }
    println!("mpsnr {} dB, mssim {:.6}, sam {:.6} deg", report.mpsnr, report.mssim, report.sam_deg);
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::PyramidKernel => Fault::PyramidKernel,
    });
    let reports = run_all(fault)?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all suites passed");
        Ok(())
    } else {
        Err(CliError::verify(format!("failing suites: {}", failed.join(", "))))
    }
}
