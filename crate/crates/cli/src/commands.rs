use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ramus_core::experiment::{
    run_case, write_histograms, write_metrics_csv, write_summary_json, CaseModality, CasePreset, CaseReport, CaseSpec,
    DeskScale, Scene,
};
use ramus_core::forward::{
    build_upper_hemisphere_sensors, combine_emeg, eeg_sphere_leadfield, generate_source_space, load_leadfield,
    meg_radial_leadfield, save_leadfield, save_leadfield_binary, LeadField, Modality, SensorKind,
};
use ramus_core::hbm::{HyperpriorConfig, HyperpriorFamily};
use ramus_core::nalgebra::DVector;
use ramus_core::ramus::RamusConfig;

use crate::config::{ConfigError, Settings, PRESET_KEYS};
use crate::{Cli, Command, ForwardArgs, GenerateArgs, InspectArgs, RunArgs};

enum Failure {
    Usage(String),
    Pipeline(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<ramus_core::Error> for Failure {
    fn from(e: ramus_core::Error) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

pub fn execute(cli: Cli) -> ExitCode {
    let out = match cli.command {
        Command::GenerateLeadfield(a) => generate(a),
        Command::RunCase(a) => run(a, true),
        Command::RunCustom(a) => run(a, false),
        Command::Inspect(a) => inspect(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `ramus --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn push(flags: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<String>) {
    if let Some(v) = v {
        flags.push((key, v.clone()));
    }
}

fn forward_flags(f: &ForwardArgs, flags: &mut Vec<(&'static str, String)>) {
    push(flags, "forward.sources", &f.sources);
    push(flags, "forward.source_radius", &f.source_radius);
    push(flags, "forward.scalp_radius", &f.scalp_radius);
    push(flags, "forward.electrodes", &f.electrodes);
    push(flags, "forward.meg_scale", &f.meg_scale);
    push(flags, "forward.conductivity", &f.conductivity);
    push(flags, "forward.series_terms", &f.series_terms);
    push(flags, "forward.space_seed", &f.space_seed);
}

fn desk_scale(s: &Settings) -> Result<DeskScale, Failure> {
    Ok(DeskScale {
        sources: s.get("forward.sources")?,
        source_radius: s.get("forward.source_radius")?,
        scalp_radius: s.get("forward.scalp_radius")?,
        electrodes: s.get("forward.electrodes")?,
        meg_scale: s.get("forward.meg_scale")?,
        conductivity: s.get("forward.conductivity")?,
        series_terms: s.get("forward.series_terms")?,
        space_seed: s.get("forward.space_seed")?,
    })
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut flags = Vec::new();
    forward_flags(&a.forward, &mut flags);
    push(&mut flags, "forward.modality", &a.modality);
    push(&mut flags, "output.file", &a.out);
    if a.binary {
        flags.push(("output.binary", "true".into()));
    }
    let s = Settings::load(a.config.as_deref(), &flags)?;
    let out = s
        .path("output.file")
        .ok_or_else(|| Failure::Usage("generate-leadfield needs --out <file>".into()))?;
    let modality: Modality = s.get("forward.modality")?;
    let d = desk_scale(&s)?;

    let space = generate_source_space(d.sources, d.source_radius, d.space_seed)?;
    let electrodes = build_upper_hemisphere_sensors(d.electrodes, d.scalp_radius, SensorKind::Eeg, d.source_radius)?;
    let eeg = || eeg_sphere_leadfield(&space, &electrodes, d.conductivity, d.scalp_radius, d.series_terms);
    let meg = || -> ramus_core::Result<LeadField> {
        meg_radial_leadfield(&space, &electrodes.scaled(d.meg_scale, SensorKind::MegRadial)?)
    };
    let lf = match modality {
        Modality::Eeg => eeg()?,
        Modality::Meg => meg()?,
        Modality::Combined => {
            let (e, m) = (eeg()?, meg()?);
            combine_emeg(&e, &m, &DVector::zeros(e.rows()), &DVector::zeros(m.rows()))?.0
        }
    };
    if s.get::<bool>("output.binary")? {
        save_leadfield_binary(&lf, &out)?;
    } else {
        save_leadfield(&lf, &out)?;
    }
    println!("wrote {} x {} {} lead field to {}", lf.rows(), lf.cols(), lf.modality(), out.display());
    Ok(())
}

fn run_flags(a: &RunArgs) -> Vec<(&'static str, String)> {
    let mut flags = Vec::new();
    push(&mut flags, "experiment.case", &a.case);
    push(&mut flags, "experiment.realizations", &a.realizations);
    push(&mut flags, "experiment.seed", &a.seed);
    push(&mut flags, "experiment.threads", &a.threads);
    push(&mut flags, "experiment.noise_pct", &a.noise);
    push(&mut flags, "experiment.modality", &a.modality);
    push(&mut flags, "experiment.deep_amplitude", &a.deep_amplitude);
    push(&mut flags, "experiment.superficial_amplitude", &a.superficial_amplitude);
    push(&mut flags, "experiment.sigma", &a.sigma);
    push(&mut flags, "ramus.levels", &a.levels);
    push(&mut flags, "ramus.sparsity", &a.sparsity);
    push(&mut flags, "ramus.decompositions", &a.decompositions);
    push(&mut flags, "ramus.n_iter", &a.n_iter);
    push(&mut flags, "hbm.family", &a.family);
    push(&mut flags, "hbm.beta", &a.beta);
    push(&mut flags, "hbm.theta0", &a.theta0);
    push(&mut flags, "forward.leadfield", &a.leadfield);
    push(&mut flags, "forward.meg_leadfield", &a.meg_leadfield);
    push(&mut flags, "output.dir", &a.out);
    forward_flags(&a.forward, &mut flags);
    flags
}

/// Settings and the case they describe.
struct Plan {
    settings: Settings,
    spec: CaseSpec,
    realizations: usize,
    seed: u64,
    threads: usize,
    out: PathBuf,
}

fn plan(a: &RunArgs, preset_mode: bool) -> Result<Plan, Failure> {
    let s = Settings::load(a.config.as_deref(), &run_flags(a))?;
    let levels: usize = s.get("ramus.levels")?;
    let n_iter: usize = s.get("ramus.n_iter")?;
    let beta: f64 = s.get("hbm.beta")?;
    let theta0: f64 = s.get("hbm.theta0")?;

    let mut spec = if preset_mode {
        let id: String = s
            .get_opt("experiment.case")?
            .ok_or_else(|| Failure::Usage("run-case needs --case <A..I>".into()))?;
        let mut chars = id.chars();
        let c = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => return Err(Failure::Usage(format!("invalid case id `{id}`"))),
        };
        let preset = CasePreset::by_id(c).map_err(|e| Failure::Usage(e.to_string()))?;
        if let Some(k) = PRESET_KEYS.iter().find(|k| s.is_set(k)) {
            return Err(Failure::Usage(format!(
                "`{k}` is fixed by case {}; preset fields are not overridable individually (use run-custom)",
                preset.id
            )));
        }
        CaseSpec::from_preset(&preset, levels, n_iter, beta, theta0).map_err(|e| Failure::Usage(e.to_string()))?
    } else {
        if s.is_set("experiment.case") {
            return Err(Failure::Usage(
                "run-custom takes explicit parameters, not --case (use run-case)".into(),
            ));
        }
        let family_name: String = s.get("hbm.family")?;
        let family = HyperpriorFamily::from_short_name(&family_name)
            .ok_or_else(|| Failure::Usage(format!("invalid value `{family_name}` for `hbm.family` (G or IG)")))?;
        let hyperprior = HyperpriorConfig::new(family, beta, theta0).map_err(|e| Failure::Usage(e.to_string()))?;
        let modality: CaseModality = s.get("experiment.modality")?;
        CaseSpec {
            id: "custom".into(),
            modality,
            ramus: RamusConfig {
                levels,
                sparsity: s.get("ramus.sparsity")?,
                decompositions: s.get("ramus.decompositions")?,
                hyperprior,
                n_iter,
                sigma: 1.0,
                rng_seed: 0,
                keep_snapshots: false,
            },
            superficial_amplitude: s.get("experiment.superficial_amplitude")?,
            deep_amplitude: s.get("experiment.deep_amplitude")?,
            noise_pct: s.get("experiment.noise_pct")?,
            sigma_override: None,
        }
    };
    spec.sigma_override = s.get_opt("experiment.sigma")?;
    spec.ramus.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let out = s
        .path("output.dir")
        .ok_or_else(|| Failure::Usage("an output directory is required (--out <dir>)".into()))?;
    let realizations: usize = s.get("experiment.realizations")?;
    if realizations == 0 {
        return Err(Failure::Usage("experiment.realizations must be at least 1".into()));
    }
    let threads: usize = s.get("experiment.threads")?;
    if threads == 0 {
        return Err(Failure::Usage("experiment.threads must be at least 1".into()));
    }
    Ok(Plan {
        seed: s.get("experiment.seed")?,
        settings: s,
        spec,
        realizations,
        threads,
        out,
    })
}

fn scene(s: &Settings) -> Result<Scene, Failure> {
    let d = desk_scale(s)?;
    match s.path("forward.leadfield") {
        None => {
            if s.is_set("forward.meg_leadfield") {
                return Err(Failure::Usage("--meg-leadfield needs --leadfield".into()));
            }
            Ok(Scene::build(&d)?)
        }
        Some(p) => {
            let space = generate_source_space(d.sources, d.source_radius, d.space_seed)?;
            let eeg = load_leadfield(&p)?;
            let meg = s.path("forward.meg_leadfield").map(load_leadfield).transpose()?;
            Ok(Scene::from_parts(space, eeg, meg)?)
        }
    }
}

fn run(a: RunArgs, preset_mode: bool) -> Result<(), Failure> {
    let plan = plan(&a, preset_mode)?;
    let started = Instant::now();
    let scene = scene(&plan.settings)?;
    let report = run_case(&scene, &plan.spec, plan.realizations, plan.seed, plan.threads)?;
    let elapsed = started.elapsed().as_secs_f64();

    let out = &plan.out;
    std::fs::create_dir_all(out).map_err(|e| Failure::Pipeline(format!("cannot create {}: {e}", out.display())))?;
    let reports = std::slice::from_ref(&report);
    write_metrics_csv(out.join("metrics.csv"), reports)?;
    write_summary_json(out.join("summary.json"), reports)?;
    write_histograms(out, &report)?;
    write_manifest(&out.join("manifest.txt"), &plan, &report, preset_mode, elapsed)?;

    for roi in &report.rois {
        println!(
            "case {} {:<11} detected {:5.1}%  median position error {:.1} mm",
            report.spec.id,
            roi.name,
            100.0 * roi.detection_rate,
            roi.metrics.position_error.median
        );
    }
    println!("results in {}", out.display());
    Ok(())
}

fn write_manifest(path: &Path, plan: &Plan, report: &CaseReport, preset_mode: bool, elapsed: f64) -> Result<(), Failure> {
    let spec = &plan.spec;
    let mut m = String::new();
    let _ = writeln!(m, "# ramus run manifest");
    let _ = writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "command = {}", if preset_mode { "run-case" } else { "run-custom" });
    let _ = writeln!(m, "\n# settings");
    for line in plan.settings.manifest_lines() {
        let _ = writeln!(m, "{line}");
    }
    let _ = writeln!(m, "\n# resolved case");
    let _ = writeln!(m, "case.id = {}", spec.id);
    let _ = writeln!(m, "case.modality = {}", spec.modality);
    let _ = writeln!(m, "case.family = {}", spec.family().short_name());
    let _ = writeln!(m, "case.sparsity = {}", spec.ramus.sparsity);
    let _ = writeln!(m, "case.decompositions = {}", spec.ramus.decompositions);
    let _ = writeln!(m, "case.levels = {}", spec.ramus.levels);
    let _ = writeln!(m, "case.n_iter = {}", spec.ramus.n_iter);
    let _ = writeln!(m, "case.beta = {}", spec.ramus.hyperprior.beta());
    let _ = writeln!(m, "case.theta0 = {:e}", spec.ramus.hyperprior.theta0());
    let _ = writeln!(m, "case.deep_amplitude = {}", spec.deep_amplitude);
    let _ = writeln!(m, "case.superficial_amplitude = {}", spec.superficial_amplitude);
    let _ = writeln!(m, "case.noise_pct = {}", spec.noise_pct);
    let _ = writeln!(m, "\n# seeds");
    let _ = writeln!(m, "seed.master = {}", report.master_seed);
    for r in &report.realizations {
        let _ = writeln!(m, "seed.realization.{} = {}  # solver sigma {:e}", r.index, r.seed, r.sigma);
    }
    if let Some(r) = report.realizations.first() {
        for (name, d) in report.rois.iter().map(|x| &x.name).zip(&r.snap_distances) {
            let _ = writeln!(m, "snap_distance_mm.{name} = {d}");
        }
    }
    let _ = writeln!(m, "\n# run");
    let _ = writeln!(m, "threads = {}", plan.threads);
    let _ = writeln!(m, "wall_clock_seconds = {elapsed:.3}");
    std::fs::write(path, m).map_err(|e| Failure::Pipeline(format!("cannot write {}: {e}", path.display())))
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let lf = load_leadfield(&a.path)?;
    let mat = lf.matrix();
    let col_norms: Vec<f64> = mat.column_iter().map(|c| c.norm()).collect();
    let min = col_norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = col_norms.iter().copied().fold(0.0, f64::max);
    println!("file        {}", a.path.display());
    println!("modality    {}", lf.modality());
    println!("rows        {}", lf.rows());
    println!("columns     {} ({} positions)", lf.cols(), lf.positions());
    println!("frobenius   {:e}", lf.frobenius_norm());
    println!("max |entry| {:e}", mat.amax());
    println!("column norm {min:e} .. {max:e}");
    Ok(())
}
