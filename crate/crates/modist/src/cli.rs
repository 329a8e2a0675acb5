//! Command-line entry point: dataset generation, motion preprocessing,
//! pretraining, evaluation protocols, the ablation grid runner and report
//! aggregation.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad config, missing
//! files), 2 internal error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::config::{parse_kv, parse_sections, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::evalkit;
use crate::io::{self, Split};
use crate::motion::MotionKind;
use crate::stats;
use crate::synthvid::SceneDistribution;
use crate::trainer;

const USAGE: &str = "\
modist - motion-distillation pretraining on synthetic video, desk scale

USAGE:
    modist <command> [flags]

COMMANDS:
    gen-data    --classes N --videos N --seed S --out DIR
                [--probe-train N] [--probe-test N]
                generate the three dataset splits (pretrain, probe_train,
                probe_test) with ground-truth flow

    preprocess  --in DIR --kind {frame_diff|flow_mag|flow_edges} --lag L --out DIR
                compute per-frame motion maps and the motion-energy sidecar
                for one split directory

    pretrain    --config FILE [--mode {modist|rgb_only|supervised}]
                [--motion-kind K] [--sync-mode] [--gamma G] [--epochs E]
                [--out DIR] [--seed S] [--data DIR] [--motion DIR]
                [--set key=value ...]
                run pretraining; flags override the config file

    probe       --ckpt FILE --data DIR --seed S [--records FILE]
                linear probe on the frozen backbone

    finetune    --ckpt FILE --data DIR --fraction X --seed S [--records FILE]
                finetune the whole network on a stratified label fraction

    lowshot     --ckpts A,B,... --data DIR --fractions 0.05,0.2,1.0
                --seeds N|list [--records FILE]
                low-shot sweep; prints a table with delta rows

    saliency    --ckpt FILE --data DIR --video IDX --class C --out PNG
                [--seed S]
                class-gradient saliency overlay for one probe-test video

    ablate      --plan FILE | --write-default FILE
                run an experiment plan (pretrain + probe per cell x seed)
                and write a comparison report

    report      --in DIR
                aggregate *.records files into comparison tables

    --help      print this message
";

// ── Flag parsing ────────────────────────────────────────────────────────────

struct Args {
    flags: HashMap<String, String>,
    switches: Vec<String>,
}

fn parse_args(argv: &[String], switch_names: &[&str]) -> Result<Args> {
    let mut flags = HashMap::new();
    let mut switches = Vec::new();
    let mut i = 0;
    while i < argv.len() {
        let a = &argv[i];
        let name = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Usage(format!("unexpected argument `{a}`")))?;
        if let Some((k, v)) = name.split_once('=') {
            flags.insert(k.to_string(), v.to_string());
            i += 1;
            continue;
        }
        if switch_names.contains(&name) {
            switches.push(name.to_string());
            i += 1;
            continue;
        }
        let v = argv
            .get(i + 1)
            .ok_or_else(|| Error::Usage(format!("flag --{name} needs a value")))?;
        flags.insert(name.to_string(), v.clone());
        i += 2;
    }
    Ok(Args { flags, switches })
}

impl Args {
    fn get(&self, name: &str) -> Result<&str> {
        self.flags
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Usage(format!("missing required flag --{name}")))
    }

    fn get_opt(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        self.get(name)?
            .parse::<T>()
            .map_err(|_| Error::Usage(format!("cannot parse value of --{name}")))
    }

    fn parse_opt<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.get_opt(name) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Usage(format!("cannot parse value of --{name}"))),
        }
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad number `{t}`"))))
        .collect()
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    if s.contains(',') {
        s.split(',')
            .map(|t| t.trim().parse::<u64>().map_err(|_| Error::Usage(format!("bad seed `{t}`"))))
            .collect()
    } else {
        let n: u64 = s.parse().map_err(|_| Error::Usage(format!("bad seed count `{s}`")))?;
        Ok((0..n).collect())
    }
}

// ── Dispatch ────────────────────────────────────────────────────────────────

/// Run the CLI; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "help" {
        println!("{USAGE}");
        return 0;
    }
    let cmd = argv[0].as_str();
    let rest = &argv[1..];
    let outcome = match cmd {
        "gen-data" => cmd_gen_data(rest),
        "preprocess" => cmd_preprocess(rest),
        "pretrain" => cmd_pretrain(rest),
        "probe" => cmd_probe(rest),
        "finetune" => cmd_finetune(rest),
        "lowshot" => cmd_lowshot(rest),
        "saliency" => cmd_saliency(rest),
        "ablate" => cmd_ablate(rest),
        "report" => cmd_report(rest),
        other => {
            eprintln!("unknown command `{other}`\n\n{USAGE}");
            return 1;
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_)
                | Error::Config(_)
                | Error::Format(_)
                | Error::Split(_)
                | Error::OutOfRange(_)
                | Error::IneligibleVideo(_)
                | Error::NoEligibleClip(_)
                | Error::Io(_) => 1,
                Error::Contract(_) | Error::DegenerateEmbedding(_) | Error::Divergence(_) => 2,
            }
        }
    }
}

fn cmd_gen_data(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let classes: usize = args.parse("classes")?;
    let videos: usize = args.parse("videos")?;
    let seed: u64 = args.parse("seed")?;
    let out = PathBuf::from(args.get("out")?);
    let probe_train: usize = args.parse_opt("probe-train")?.unwrap_or(videos / 2);
    let probe_test: usize = args.parse_opt("probe-test")?.unwrap_or(videos / 2);
    let dist = SceneDistribution::with_classes(classes)?;
    let m = crate::synthvid::generate_dataset(
        &dist,
        videos,
        seed,
        Split::Pretrain,
        0,
        &out.join("pretrain"),
    )?;
    eprintln!("pretrain: {} videos in {} classes", m.entries.len(), m.class_names.len());
    let m = crate::synthvid::generate_dataset(
        &dist,
        probe_train,
        seed,
        Split::ProbeTrain,
        100_000,
        &out.join("probe_train"),
    )?;
    eprintln!("probe_train: {} videos", m.entries.len());
    let m = crate::synthvid::generate_dataset(
        &dist,
        probe_test,
        seed,
        Split::ProbeTest,
        200_000,
        &out.join("probe_test"),
    )?;
    eprintln!("probe_test: {} videos", m.entries.len());
    Ok(())
}

fn cmd_preprocess(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let input = PathBuf::from(args.get("in")?);
    let kind = MotionKind::parse(args.get("kind")?)?;
    let lag: usize = args.parse_opt("lag")?.unwrap_or(5);
    let out = PathBuf::from(args.get("out")?);
    let sidecar = trainer::preprocess_split(&input, kind, lag, &out)?;
    eprintln!(
        "preprocessed {} videos ({} lag {lag}) into {}",
        sidecar.entries.len(),
        kind.as_str(),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &["sync-mode"])?;
    let mut cfg = match args.get_opt("config") {
        Some(path) => TrainConfig::from_file(Path::new(path))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.get_opt("mode") {
        cfg.mode = TrainMode::parse(v)?;
    }
    if let Some(v) = args.get_opt("motion-kind") {
        cfg.motion_kind = MotionKind::parse(v)?;
    }
    if args.has("sync-mode") {
        cfg.sync_mode = true;
    }
    if let Some(v) = args.parse_opt::<f64>("gamma")? {
        cfg.sampler.gamma = v;
    }
    if let Some(v) = args.parse_opt::<usize>("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = args.get_opt("out") {
        cfg.out_dir = PathBuf::from(v);
    }
    if let Some(v) = args.parse_opt::<u64>("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = args.get_opt("data") {
        cfg.data_dir = PathBuf::from(v);
    }
    if let Some(v) = args.get_opt("motion") {
        cfg.motion_dir = PathBuf::from(v);
    }
    if let Some(sets) = args.get_opt("set") {
        for (k, v) in parse_kv(&sets.replace(',', "\n"))? {
            cfg.apply(&k, &v)?;
        }
    }
    let path = trainer::pretrain(&cfg)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_probe(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let ckpt = PathBuf::from(args.get("ckpt")?);
    let data = PathBuf::from(args.get("data")?);
    let seed: u64 = args.parse("seed")?;
    let result = evalkit::linear_probe(&ckpt, &data, seed)?;
    println!(
        "linear probe: ckpt={} seed={} top1={:.4}",
        result.checkpoint_id, result.seed, result.top1
    );
    if let Some(rec) = args.get_opt("records") {
        io::append_record(Path::new(rec), &result.record_fields())?;
    }
    Ok(())
}

fn cmd_finetune(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let ckpt = PathBuf::from(args.get("ckpt")?);
    let data = PathBuf::from(args.get("data")?);
    let fraction: f64 = args.parse("fraction")?;
    let seed: u64 = args.parse("seed")?;
    let result = evalkit::full_finetune(&ckpt, &data, fraction, seed)?;
    println!(
        "full finetune: ckpt={} fraction={:.2} seed={} top1={:.4}",
        result.checkpoint_id, fraction, result.seed, result.top1
    );
    if let Some(rec) = args.get_opt("records") {
        let mut fields = result.record_fields();
        fields.push(("fraction", format!("{fraction}")));
        io::append_record(Path::new(rec), &fields)?;
    }
    Ok(())
}

fn cmd_lowshot(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let ckpts: Vec<PathBuf> =
        args.get("ckpts")?.split(',').map(|s| PathBuf::from(s.trim())).collect();
    let data = PathBuf::from(args.get("data")?);
    let fractions = parse_f64_list(args.get("fractions")?)?;
    let seeds = parse_seed_list(args.get("seeds")?)?;
    let report = evalkit::lowshot(&ckpts, &data, &fractions, &seeds)?;
    print!("{}", report.render());
    if let Some(rec) = args.get_opt("records") {
        for cell in &report.cells {
            io::append_record(
                Path::new(rec),
                &[
                    ("protocol", "lowshot".to_string()),
                    ("ckpt", cell.checkpoint.clone()),
                    ("fraction", format!("{}", cell.fraction)),
                    ("seed", cell.seed.to_string()),
                    ("top1", format!("{:.6}", cell.top1)),
                ],
            )?;
        }
    }
    Ok(())
}

fn cmd_saliency(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let ckpt = PathBuf::from(args.get("ckpt")?);
    let data = PathBuf::from(args.get("data")?);
    let video_index: u64 = args.parse("video")?;
    let class: usize = args.parse("class")?;
    let out = PathBuf::from(args.get("out")?);
    let seed: u64 = args.parse_opt("seed")?.unwrap_or(0);
    let (_, probe, backbone) = evalkit::linear_probe_detailed(&ckpt, &data, seed)?;
    let test = trainer::load_corpus(&data.join("probe_test"), None)?;
    let item = test
        .items
        .iter()
        .find(|i| i.video.video_index == video_index)
        .ok_or_else(|| {
            Error::Usage(format!("video index {video_index} not found in probe_test"))
        })?;
    let clip = evalkit::center_clip(&item.video, &backbone.train_config.sampler);
    let map = evalkit::saliency(&backbone, &probe, &clip, class)?;
    evalkit::write_saliency_png(&out, &item.video, &map, &backbone.train_config.sampler, 8)?;
    let up = map.upsample(item.video.h, item.video.w);
    let total: f64 = up.iter().sum();
    println!(
        "saliency: video={} class={} grid={}x{} mass={:.4} -> {}",
        video_index,
        class,
        map.grid_h,
        map.grid_w,
        total,
        out.display()
    );
    Ok(())
}

// ── Ablation plans ──────────────────────────────────────────────────────────

/// Default plan covering the ablation grid: distillation on/off, the three
/// motion inputs, synchronized sampling, no motion threshold, and no
/// motion-only loss.
pub const DEFAULT_PLAN: &str = "\
# ablation plan: pretrain + linear probe per cell x seed
# paths are relative to the working directory
data = runs/data
motion_root = runs/motion
out = runs/table3
seeds = 0,1,2,3,4

[cell]
name = modist
mode = modist
motion_kind = flow_edges

[cell]
name = rgb_only
mode = rgb_only

[cell]
name = flow_mag
mode = modist
motion_kind = flow_mag

[cell]
name = frame_diff
mode = modist
motion_kind = frame_diff

[cell]
name = no_temp_jitter
mode = modist
motion_kind = flow_edges
sync_mode = true

[cell]
name = no_motion_thresh
mode = modist
motion_kind = flow_edges
gamma = 0

[cell]
name = no_motion_loss
mode = modist
motion_kind = flow_edges
w_m = 0
";

/// One cell of an experiment plan.
pub struct PlanCell {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

pub struct ExperimentPlan {
    pub data_dir: PathBuf,
    pub motion_root: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub global: Vec<(String, String)>,
    pub cells: Vec<PlanCell>,
}

pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let (preamble, sections) = parse_sections(text)?;
    let data_dir = PathBuf::from(
        preamble.get("data").ok_or_else(|| Error::Config("plan missing `data`".into()))?,
    );
    let motion_root = PathBuf::from(
        preamble
            .get("motion_root")
            .ok_or_else(|| Error::Config("plan missing `motion_root`".into()))?,
    );
    let out_dir = PathBuf::from(
        preamble.get("out").ok_or_else(|| Error::Config("plan missing `out`".into()))?,
    );
    let seeds = parse_seed_list(
        preamble.get("seeds").ok_or_else(|| Error::Config("plan missing `seeds`".into()))?,
    )?;
    let global: Vec<(String, String)> = preamble
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "data" | "motion_root" | "out" | "seeds"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut cells = Vec::new();
    let mut names = std::collections::HashSet::new();
    for (section, kvs) in sections {
        if section != "cell" {
            return Err(Error::Config(format!("unknown plan section `[{section}]`")));
        }
        let name = kvs
            .iter()
            .find(|(k, _)| k == "name")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Config("plan cell missing `name`".into()))?;
        if !names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate cell name `{name}`")));
        }
        let overrides = kvs.into_iter().filter(|(k, _)| k != "name").collect();
        cells.push(PlanCell { name, overrides });
    }
    if cells.is_empty() {
        return Err(Error::Config("plan has no cells".into()));
    }
    Ok(ExperimentPlan { data_dir, motion_root, out_dir, seeds, global, cells })
}

/// Materialize the TrainConfig for one (cell, seed) pair.
pub fn cell_config(plan: &ExperimentPlan, cell: &PlanCell, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in &plan.global {
        cfg.apply(k, v)?;
    }
    for (k, v) in &cell.overrides {
        cfg.apply(k, v)?;
    }
    cfg.seed = seed;
    cfg.data_dir = plan.data_dir.clone();
    cfg.motion_dir = plan.motion_root.join(cfg.motion_kind.as_str());
    cfg.out_dir = plan.out_dir.join(&cell.name).join(format!("seed{seed}"));
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_ablate(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    if let Some(path) = args.get_opt("write-default") {
        std::fs::write(path, DEFAULT_PLAN)?;
        eprintln!("wrote default plan to {path}");
        return Ok(());
    }
    let plan_path = PathBuf::from(args.get("plan")?);
    let plan = parse_plan(&std::fs::read_to_string(&plan_path)?)?;
    std::fs::create_dir_all(&plan.out_dir)?;
    let records_path = plan.out_dir.join("results.records");

    // make sure each referenced motion kind has been preprocessed
    let mut kinds = std::collections::BTreeSet::new();
    for cell in &plan.cells {
        let cfg = cell_config(&plan, cell, plan.seeds[0])?;
        if cfg.mode.uses_motion() {
            kinds.insert(cfg.motion_kind);
        }
    }
    for kind in kinds {
        let dir = plan.motion_root.join(kind.as_str());
        if !dir.join("motion_manifest.txt").exists() {
            eprintln!("preprocessing {} into {}", kind.as_str(), dir.display());
            trainer::preprocess_split(&plan.data_dir.join("pretrain"), kind, 5, &dir)?;
        }
    }

    for cell in &plan.cells {
        for &seed in &plan.seeds {
            let cfg = cell_config(&plan, cell, seed)?;
            eprintln!("=== cell {} seed {seed} ===", cell.name);
            let ckpt = trainer::pretrain(&cfg)?;
            let result = evalkit::linear_probe(&ckpt, &plan.data_dir, seed)?;
            eprintln!("cell {} seed {seed}: top1 {:.4}", cell.name, result.top1);
            let mut fields = result.record_fields();
            fields.push(("cell", cell.name.clone()));
            io::append_record(&records_path, &fields)?;
        }
    }

    let table = render_cell_table(&records_path)?;
    std::fs::write(plan.out_dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Aggregate per-cell linear-probe records into a mean +- ci table.
fn render_cell_table(records_path: &Path) -> Result<String> {
    let records = io::read_records(records_path)?;
    let mut by_cell: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for r in &records {
        let (Some(cell), Some(top1)) = (r.get("cell"), r.get("top1")) else { continue };
        if let Ok(v) = top1.parse::<f64>() {
            by_cell.entry(cell.clone()).or_default().push(v);
        }
    }
    let mut s = String::new();
    s.push_str(&format!(
        "{:<20}{:>8}{:>12}{:>12}{:>8}\n",
        "cell", "n", "mean_top1", "ci95", "min"
    ));
    for (cell, vals) in &by_cell {
        let mean = stats::mean(vals);
        let ci = stats::ci95_half_width(stats::std_dev(vals), vals.len());
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        s.push_str(&format!(
            "{:<20}{:>8}{:>12.4}{:>12.4}{:>8.4}\n",
            cell,
            vals.len(),
            mean,
            ci,
            min
        ));
    }
    Ok(s)
}

fn cmd_report(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &[])?;
    let dir = PathBuf::from(args.get("in")?);
    let files = io::find_record_files(&dir)?;
    if files.is_empty() {
        return Err(Error::Usage(format!("no .records files under {}", dir.display())));
    }
    // group by every field except seed/top1/per_class
    let mut groups: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for file in &files {
        for r in io::read_records(file)? {
            let Some(top1) = r.get("top1").and_then(|v| v.parse::<f64>().ok()) else { continue };
            let mut key_fields: Vec<(String, String)> = r
                .iter()
                .filter(|(k, _)| !matches!(k.as_str(), "seed" | "top1" | "per_class"))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            key_fields.sort();
            let key = key_fields
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" ");
            groups.entry(key).or_default().push(top1);
        }
    }
    println!("{:<64}{:>6}{:>12}{:>12}", "group", "n", "mean_top1", "ci95");
    for (key, vals) in &groups {
        let mean = stats::mean(vals);
        let ci = stats::ci95_half_width(stats::std_dev(vals), vals.len());
        println!("{:<64}{:>6}{:>12.4}{:>12.4}", key, vals.len(), mean, ci);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero_and_unknown_exits_one() {
        assert_eq!(run(vec!["--help".into()]), 0);
        assert_eq!(run(vec!["frobnicate".into()]), 1);
    }

    #[test]
    fn missing_flags_are_usage_errors() {
        assert_eq!(run(vec!["gen-data".into()]), 1);
        assert_eq!(run(vec!["probe".into(), "--ckpt".into(), "x".into()]), 1);
    }

    #[test]
    fn default_plan_parses_and_covers_the_grid() {
        let plan = parse_plan(DEFAULT_PLAN).unwrap();
        assert_eq!(plan.seeds, vec![0, 1, 2, 3, 4]);
        let names: Vec<&str> = plan.cells.iter().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"modist"));
        assert!(names.contains(&"rgb_only"));
        assert!(names.contains(&"frame_diff"));
        assert!(names.contains(&"no_temp_jitter"));
        assert!(names.contains(&"no_motion_thresh"));
        assert!(names.contains(&"no_motion_loss"));
        // every cell materializes into a valid config
        for cell in &plan.cells {
            let cfg = cell_config(&plan, cell, 0).unwrap();
            match cell.name.as_str() {
                "rgb_only" => assert_eq!(cfg.mode, TrainMode::RgbOnly),
                "no_temp_jitter" => assert!(cfg.sync_mode),
                "no_motion_thresh" => assert_eq!(cfg.sampler.gamma, 0.0),
                "no_motion_loss" => assert_eq!(cfg.w_m, 0.0),
                _ => {}
            }
        }
    }

    #[test]
    fn duplicate_cell_names_are_rejected() {
        let text = "data = d\nmotion_root = m\nout = o\nseeds = 1\n\
                    [cell]\nname = a\n[cell]\nname = a\n";
        assert!(matches!(parse_plan(text), Err(Error::Config(_))));
    }
}
