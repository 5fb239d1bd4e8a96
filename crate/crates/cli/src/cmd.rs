use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use lesionkit::dataprep::{
    random_split, sample_patch_pair, size_balanced_split, synth_generate, CaseRecord, LesionBand, NoiseSpec,
    PatchSpec, SynthSpec,
};
use lesionkit::ensemble::{
    ensemble, postprocess, sweep, EnsembleConfig, PostprocessConfig, SweepCase, SweepConfig, VanillaScheme,
};
use lesionkit::io::{self, read_csv_rows, NiftiHeader, Volume};
use lesionkit::labeling::{
    binarize, category_to_binary, dbl_encode, foreground_probability, msl_encode, CategoryMask, DistanceBands,
    SizeBands,
};
use lesionkit::metrics::{category_stats, evaluate_set, BandScheme, EvalCase, EvalOptions, MatchRule};
use lesionkit::{DistanceUnits, ForegroundProb32, Mask, VoxelGrid};
use rayon::prelude::*;
use serde::Deserialize;

use crate::runlog::{self, RunLog};
use crate::*;

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Command::Rerun(a) = &cli.command {
        return rerun(a);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .context("starting the worker pool")?;
    let mut log = RunLog::default();
    let (name, manifest_at) = pool.install(|| execute(&cli.command, &mut log))?;
    let manifest_at = cli.run_manifest.clone().unwrap_or(manifest_at);
    let config = serde_json::to_value(&cli.command)?;
    let manifest = log.finish(name, argv, config)?;
    runlog::write_manifest(&manifest, &manifest_at)
}

/// Runs a subcommand; returns its name and the default manifest location.
fn execute(command: &Command, log: &mut RunLog) -> Result<(&'static str, PathBuf)> {
    Ok(match command {
        Command::Relabel(a) => ("relabel", relabel(a, log)?),
        Command::Binarize(a) => ("binarize", binarize_cmd(a, log)?),
        Command::Ensemble(a) => ("ensemble", ensemble_cmd(a, log)?),
        Command::Postprocess(a) => ("postprocess", postprocess_cmd(a, log)?),
        Command::Evaluate(a) => ("evaluate", evaluate(a, log)?),
        Command::Stats(a) => ("stats", stats(a, log)?),
        Command::Split(a) => ("split", split(a, log)?),
        Command::Sample(a) => ("sample", sample(a, log)?),
        Command::Sweep(a) => ("sweep", sweep_cmd(a, log)?),
        Command::Synth(a) => ("synth", synth(a, log)?),
        Command::Rerun(_) => unreachable!("handled before the pool starts"),
    })
}

fn beside(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn read(path: &Path, log: &mut RunLog) -> Result<Volume> {
    log.input(path);
    load(path)
}

/// Reads a volume; non-I/O errors get the path attached.
fn load(path: &Path) -> Result<Volume> {
    io::read_volume(path).map_err(|e| match e {
        lesionkit::Error::Io { .. } => anyhow::Error::from(e),
        other => anyhow::Error::from(other).context(format!("reading {}", path.display())),
    })
}

fn read_mask(path: &Path, log: &mut RunLog) -> Result<(Mask, NiftiHeader)> {
    let vol = read(path, log)?;
    let mask = vol.to_mask().with_context(|| format!("{} is not a binary mask", path.display()))?;
    Ok((mask, vol.header))
}

/// Foreground probability from a 4D class volume or a 3D map.
fn read_foreground(path: &Path, renormalize: bool, log: &mut RunLog) -> Result<(ForegroundProb32, NiftiHeader)> {
    let vol = read(path, log)?;
    let fg = foreground_of(&vol, renormalize).with_context(|| format!("{}", path.display()))?;
    Ok((fg, vol.header))
}

fn foreground_of(vol: &Volume, renormalize: bool) -> Result<ForegroundProb32> {
    if vol.channels() > 1 {
        Ok(foreground_probability(&vol.to_prob_volume::<f32>(renormalize)?))
    } else {
        let fg = vol.to_grid::<f32>()?;
        if let Some(i) = fg.data().iter().position(|p| !(0.0..=1.0).contains(p)) {
            bail!("probability {} at voxel {i} is outside [0, 1]", fg.data()[i]);
        }
        Ok(fg)
    }
}

fn write(vol: Volume, like: &NiftiHeader, path: &Path, log: &mut RunLog) -> Result<()> {
    let vol = vol.with_geometry_of(Some(like));
    io::write_volume(&vol, path).with_context(|| format!("writing {}", path.display()))?;
    log.output(path);
    Ok(())
}

fn ensure_shapes<A, B>(a: &VoxelGrid<A>, pa: &Path, b: &VoxelGrid<B>, pb: &Path) -> Result<()> {
    a.ensure_same_shape(b)
        .with_context(|| format!("{} vs {}", pa.display(), pb.display()))?;
    Ok(())
}

fn size_bands(bands: &Option<Vec<f64>>) -> Result<SizeBands> {
    match bands {
        None => Ok(SizeBands::default()),
        Some(v) => {
            let mut t = Vec::with_capacity(v.len());
            for &b in v {
                ensure!(b >= 1.0 && b.fract() == 0.0, "--bands: size threshold {b} is not a positive integer");
                t.push(b as u64);
            }
            Ok(SizeBands::new(t).context("--bands")?)
        }
    }
}

fn distance_bands(bands: &Option<Vec<f64>>) -> Result<DistanceBands> {
    match bands {
        None => Ok(DistanceBands::default()),
        Some(v) => Ok(DistanceBands::new(v.clone()).context("--bands")?),
    }
}

fn units(u: UnitsArg) -> DistanceUnits {
    match u {
        UnitsArg::Voxels => DistanceUnits::Voxels,
        UnitsArg::Mm => DistanceUnits::Millimeters,
    }
}

fn rule(m: MatchArg) -> MatchRule {
    match m {
        MatchArg::AnyOverlap => MatchRule::AnyOverlap,
        MatchArg::OneToOne => MatchRule::OneToOne,
    }
}

fn scheme(s: SchemeArg) -> VanillaScheme {
    match s {
        SchemeArg::MslDiceCe => VanillaScheme::MslDiceCe,
        SchemeArg::MslDiceFocal => VanillaScheme::MslDiceFocal,
        SchemeArg::DblDiceCe => VanillaScheme::DblDiceCe,
        SchemeArg::DblDiceFocal => VanillaScheme::DblDiceFocal,
    }
}

/// Resolves a path from a case table relative to the table's directory.
fn resolve(table: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        table.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn relabel(a: &RelabelArgs, log: &mut RunLog) -> Result<PathBuf> {
    let (mask, header) = read_mask(&a.mask, log)?;
    let cm = match a.strategy {
        StrategyArg::Msl => msl_encode(&mask, &size_bands(&a.bands)?, a.conn.connectivity)?,
        StrategyArg::Dbl => dbl_encode(&mask, &distance_bands(&a.bands)?, units(a.units))?,
    };
    write(Volume::from_labels(cm.labels()), &header, &a.out, log)?;
    Ok(beside(&a.out))
}

fn binarize_cmd(a: &BinarizeArgs, log: &mut RunLog) -> Result<PathBuf> {
    let vol = read(&a.input, log)?;
    let ctx = || a.input.display().to_string();
    let (mask, fg) = match (vol.channels(), vol.data.datatype()) {
        (1, io::Datatype::U8 | io::Datatype::I16) => {
            let labels = vol.to_labels().with_context(ctx)?;
            let count = labels.data().iter().copied().max().unwrap_or(0).max(1);
            (category_to_binary(&CategoryMask::new(labels, count)?), None)
        }
        _ => {
            let fg = foreground_of(&vol, a.renormalize).with_context(ctx)?;
            (binarize(&fg, a.threshold as f32)?, Some(fg))
        }
    };
    write(Volume::from_labels(&mask), &vol.header, &a.out, log)?;
    if let Some(path) = &a.foreground {
        let Some(fg) = fg else {
            bail!("--foreground: {} holds labels, not probabilities", a.input.display());
        };
        write(Volume::from_grid(&fg), &vol.header, path, log)?;
    }
    Ok(beside(&a.out))
}

fn ensemble_cmd(a: &EnsembleArgs, log: &mut RunLog) -> Result<PathBuf> {
    let (p_msl, header) = read_foreground(&a.msl, a.renormalize, log)?;
    let (p_dbl, _) = read_foreground(&a.dbl, a.renormalize, log)?;
    ensure_shapes(&p_msl, &a.msl, &p_dbl, &a.dbl)?;
    let cfg = EnsembleConfig {
        lambda: a.lambda as f32,
        small_cutoff: a.cutoff,
        binarize_threshold: a.threshold as f32,
        conn: a.conn.connectivity,
    };
    let out = ensemble(&p_msl, &p_dbl, &cfg)?;
    write(Volume::from_labels(&out.mask), &header, &a.out, log)?;
    if let Some(path) = &a.fused {
        write(Volume::from_grid(&out.fused), &header, path, log)?;
    }
    Ok(beside(&a.out))
}

fn postprocess_cmd(a: &PostprocessArgs, log: &mut RunLog) -> Result<PathBuf> {
    let (mask, header) = read_mask(&a.mask, log)?;
    let (fg, _) = read_foreground(&a.prob, a.renormalize, log)?;
    ensure_shapes(&mask, &a.mask, &fg, &a.prob)?;
    let mut cfg = match a.scheme {
        Some(s) => PostprocessConfig::<f32>::for_scheme(scheme(s)),
        None => PostprocessConfig::default(),
    };
    if let Some(t) = a.threshold {
        cfg.prob_threshold = t as f32;
    }
    cfg.small_cutoff = a.cutoff;
    cfg.conn = a.conn.connectivity;
    let kept = postprocess(&mask, &fg, &cfg)?;
    write(Volume::from_labels(&kept), &header, &a.out, log)?;
    Ok(beside(&a.out))
}

#[derive(Deserialize)]
struct EvalRow {
    case_id: String,
    pred: PathBuf,
    gt: PathBuf,
}

fn evaluate(a: &EvaluateArgs, log: &mut RunLog) -> Result<PathBuf> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = match (&a.pred, &a.gt, &a.cases) {
        (Some(p), Some(g), _) => vec![(a.case_id.clone(), p.clone(), g.clone())],
        (_, _, Some(table)) => {
            log.input(table);
            read_csv_rows::<EvalRow>(table)?
                .into_iter()
                .map(|r| (r.case_id, resolve(table, &r.pred), resolve(table, &r.gt)))
                .collect()
        }
        _ => bail!("give either --pred and --gt, or --cases"),
    };
    for (_, p, g) in &pairs {
        log.input(p);
        log.input(g);
    }
    let loaded: Vec<(String, Mask, Mask)> = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let load = |path: &Path| -> Result<Mask> {
                load(path)?
                    .to_mask()
                    .with_context(|| format!("{} is not a binary mask", path.display()))
            };
            let (pred, gt) = (load(p)?, load(g)?);
            ensure_shapes(&pred, p, &gt, g).with_context(|| format!("case {id}"))?;
            Ok((id.clone(), pred, gt))
        })
        .collect::<Result<_>>()?;
    let cases: Vec<EvalCase> = loaded
        .iter()
        .map(|(id, pred, gt)| EvalCase { case_id: id, pred, gt })
        .collect();
    let opts = EvalOptions {
        conn: a.conn.connectivity,
        rule: rule(a.rule),
        mini_subset: a.mini_subset,
        mini_cutoff: a.mini_cutoff,
    };
    let report = evaluate_set(&cases, &opts)?;
    io::write_metrics_csv(&a.out, &report)?;
    log.output(&a.out);
    Ok(beside(&a.out))
}

#[derive(Deserialize)]
struct MaskRow {
    #[allow(dead_code)]
    case_id: String,
    mask: PathBuf,
}

fn stats(a: &StatsArgs, log: &mut RunLog) -> Result<PathBuf> {
    let paths: Vec<PathBuf> = match &a.cases {
        Some(table) => {
            log.input(table);
            read_csv_rows::<MaskRow>(table)?
                .into_iter()
                .map(|r| resolve(table, &r.mask))
                .collect()
        }
        None => a.masks.clone(),
    };
    let masks = paths
        .iter()
        .map(|p| read_mask(p, log).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let scheme = match a.strategy {
        StrategyArg::Msl => BandScheme::Size(size_bands(&a.bands)?),
        StrategyArg::Dbl => BandScheme::Distance(distance_bands(&a.bands)?, units(a.units)),
    };
    let stats = category_stats(&masks, &scheme, a.conn.connectivity)?;
    io::write_stats_csv(&a.out, &stats)?;
    log.output(&a.out);
    if let Some(path) = &a.histogram {
        io::write_atomic(path, |w| {
            writeln!(w, "volume,count")?;
            for (v, c) in &stats.lesion_volume_histogram {
                writeln!(w, "{v},{c}")?;
            }
            Ok(())
        })?;
        log.output(path);
    }
    Ok(beside(&a.out))
}

#[derive(Deserialize)]
struct SplitRow {
    case_id: String,
    #[serde(default)]
    total_lesion_volume: Option<u64>,
    #[serde(default)]
    image_path: Option<PathBuf>,
    #[serde(default)]
    mask_path: Option<PathBuf>,
}

fn split(a: &SplitArgs, log: &mut RunLog) -> Result<PathBuf> {
    log.input(&a.manifest);
    let rows: Vec<SplitRow> = read_csv_rows(&a.manifest)?;
    let mut cases = Vec::with_capacity(rows.len());
    for r in rows {
        let mask_path = r.mask_path.map(|p| resolve(&a.manifest, &p));
        let volume = match (r.total_lesion_volume, &mask_path) {
            (Some(v), _) => v,
            (None, Some(p)) => read_mask(p, log)?.0.count_nonzero() as u64,
            (None, None) => bail!("case {}: needs total_lesion_volume or mask_path", r.case_id),
        };
        cases.push(CaseRecord {
            case_id: r.case_id,
            total_lesion_volume: volume,
            image_path: r.image_path.map(|p| resolve(&a.manifest, &p)),
            mask_path,
        });
    }
    let folds = match a.method {
        SplitMethod::Balanced => size_balanced_split(&cases, a.k, a.seed)?,
        SplitMethod::Random => random_split(&cases, a.k, a.seed)?,
    };
    io::write_folds_csv(&a.out, &folds)?;
    log.output(&a.out);
    let totals = folds.fold_totals(&cases);
    for (f, (n, t)) in folds.fold_sizes().iter().zip(&totals).enumerate() {
        println!("fold {f}: {n} cases, {t} lesion voxels");
    }
    Ok(beside(&a.out))
}

fn sample(a: &SampleArgs, log: &mut RunLog) -> Result<PathBuf> {
    let vol = read(&a.image, log)?;
    let image = vol.to_grid::<f32>().with_context(|| a.image.display().to_string())?;
    let (mask, _) = read_mask(&a.mask, log)?;
    ensure_shapes(&image, &a.image, &mask, &a.mask)?;
    let spec = PatchSpec {
        size: a.size,
        seed: a.seed,
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut rng = spec.rng();
    let mut table = String::from("index,kind,corner_x,corner_y,corner_z,center_x,center_y,center_z\n");
    for i in 0..a.count {
        let pair = sample_patch_pair(&image, &mask, &spec, &mut rng)?;
        for (kind, patch) in [("random", &pair.random), ("lesion", &pair.lesion_centered)] {
            let [cx, cy, cz] = patch.corner;
            let centre = match (kind, pair.center_voxel) {
                ("lesion", Some([x, y, z])) => format!("{x},{y},{z}"),
                _ => ",,".into(),
            };
            table.push_str(&format!("{i},{kind},{cx},{cy},{cz},{centre}\n"));
            let stem = a.out_dir.join(format!("patch_{i:04}_{kind}"));
            let mut img = Volume::from_grid(&patch.image);
            img.header.srow_x[3] = cx as f32;
            img.header.srow_y[3] = cy as f32;
            img.header.srow_z[3] = cz as f32;
            write(img, &vol.header, &with_suffix(&stem, "_image.nii.gz"), log)?;
            write(Volume::from_labels(&patch.mask), &vol.header, &with_suffix(&stem, "_mask.nii.gz"), log)?;
        }
    }
    let table_path = a.out_dir.join("patches.csv");
    io::write_atomic(&table_path, |w| w.write_all(table.as_bytes()))?;
    log.output(&table_path);
    Ok(a.out_dir.join("run.json"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Deserialize)]
struct SweepRowIn {
    case_id: String,
    msl: PathBuf,
    dbl: PathBuf,
    gt: PathBuf,
}

type LoadedSweepCase = (String, ForegroundProb32, ForegroundProb32, Mask);

fn sweep_cmd(a: &SweepArgs, log: &mut RunLog) -> Result<PathBuf> {
    log.input(&a.cases);
    let rows: Vec<SweepRowIn> = read_csv_rows(&a.cases)?;
    let rows: Vec<SweepRowIn> = rows
        .into_iter()
        .map(|r| SweepRowIn {
            msl: resolve(&a.cases, &r.msl),
            dbl: resolve(&a.cases, &r.dbl),
            gt: resolve(&a.cases, &r.gt),
            case_id: r.case_id,
        })
        .collect();
    for r in &rows {
        log.input(&r.msl);
        log.input(&r.dbl);
        log.input(&r.gt);
    }
    let loaded: Vec<LoadedSweepCase> = rows
        .par_iter()
        .map(|r| {
            let fg = |p: &Path| -> Result<ForegroundProb32> {
                foreground_of(&load(p)?, a.renormalize).with_context(|| p.display().to_string())
            };
            let (m, d) = (fg(&r.msl)?, fg(&r.dbl)?);
            let gt = load(&r.gt)?
                .to_mask()
                .with_context(|| format!("{} is not a binary mask", r.gt.display()))?;
            ensure_shapes(&m, &r.msl, &d, &r.dbl)?;
            ensure_shapes(&m, &r.msl, &gt, &r.gt)?;
            Ok((r.case_id.clone(), m, d, gt))
        })
        .collect::<Result<_>>()?;
    let cases: Vec<SweepCase<f32>> = loaded
        .iter()
        .map(|(id, m, d, g)| SweepCase {
            case_id: id,
            p_msl: m,
            p_dbl: d,
            gt: g,
        })
        .collect();
    let mut cfg = SweepConfig::<f32> {
        small_cutoff: a.cutoff,
        binarize_threshold: a.binarize_threshold as f32,
        conn: a.conn.connectivity,
        rule: rule(a.rule),
        mini_cutoff: a.mini_cutoff,
        ..SweepConfig::default()
    };
    if let Some(l) = &a.lambdas {
        cfg.lambdas = l.iter().map(|&v| v as f32).collect();
    }
    if let Some(t) = &a.thresholds {
        cfg.thresholds = t.iter().map(|&v| v as f32).collect();
    }
    let result = sweep(&cases, &cfg)?;
    io::write_sweep_csv(&a.out, &result.rows)?;
    log.output(&a.out);
    println!(
        "best lambda={} p_t={} rank={} ({} of {} cases in the mini subset)",
        result.best_lambda,
        result.best_p_t,
        result.best_rank,
        result.mini_cases.len(),
        cases.len()
    );
    Ok(beside(&a.out))
}

fn synth(a: &SynthArgs, log: &mut RunLog) -> Result<PathBuf> {
    ensure!(a.cases > 0, "--cases must be at least 1");
    let dims = a.dims;
    let mut lesions = Vec::new();
    for (lo, hi, n) in [(10, 100, a.tiny), (100, 1000, a.small), (1000, 4000, a.medium)] {
        if n > 0 {
            lesions.push(LesionBand::new(lo, hi, n));
        }
    }
    let mut noise = if a.clean { NoiseSpec::clean() } else { NoiseSpec::default() };
    noise.false_positives = a.false_positives;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let width = a.cases.to_string().len().max(3);
    let ids: Vec<String> = (0..a.cases).map(|i| format!("case_{i:0width$}")).collect();
    let written: Vec<Vec<PathBuf>> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let mut spec = SynthSpec::new(dims, lesions.clone(), a.seed.wrapping_add(i as u64));
            spec.noise = noise;
            let case = synth_generate::<f32>(&spec).with_context(|| format!("generating {id}"))?;
            let files = [
                (format!("{id}_image.nii.gz"), Volume::from_grid(&case.image())),
                (format!("{id}_gt.nii.gz"), Volume::from_labels(&case.gt)),
                (format!("{id}_msl.nii.gz"), Volume::from_prob_volume(&case.p_msl)),
                (format!("{id}_dbl.nii.gz"), Volume::from_prob_volume(&case.p_dbl)),
            ];
            files
                .into_iter()
                .map(|(name, vol)| {
                    let path = a.out_dir.join(name);
                    io::write_volume(&vol, &path).with_context(|| format!("writing {}", path.display()))?;
                    Ok(path)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for p in written.iter().flatten() {
        log.output(p);
    }
    let mut table = String::from("case_id,image,gt,msl,dbl\n");
    for id in &ids {
        table.push_str(&format!("{id},{id}_image.nii.gz,{id}_gt.nii.gz,{id}_msl.nii.gz,{id}_dbl.nii.gz\n"));
    }
    let table_path = a.out_dir.join("cases.csv");
    io::write_atomic(&table_path, |w| w.write_all(table.as_bytes()))?;
    log.output(&table_path);
    Ok(a.out_dir.join("run.json"))
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let manifest = runlog::read_manifest(&a.manifest)?;
    if manifest.version != runlog::VERSION {
        bail!(
            "{} was written by version {}, this is {}",
            a.manifest.display(),
            manifest.version,
            runlog::VERSION
        );
    }
    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("entering recorded directory {}", manifest.cwd.display()))?;
    if !a.no_verify {
        runlog::verify(&manifest.inputs, "input")?;
    }
    let argv = std::iter::once("lesionkit".to_string()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| anyhow::anyhow!("recorded arguments: {}", e.kind()))?;
    ensure!(
        !matches!(cli.command, Command::Rerun(_)),
        "{} records a rerun, not a run",
        a.manifest.display()
    );
    run(cli, manifest.argv.clone())?;
    if !a.no_verify {
        runlog::verify(&manifest.outputs, "output")?;
    }
    Ok(())
}
