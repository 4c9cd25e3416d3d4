use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use mzimesh::chip::{ChipRecipe, Dataset, VirtualChip, VirtualChipParams};
use mzimesh::eval::{evaluate, export_histogram, export_scatter};
use mzimesh::fitting::{
    fit_model1, fit_model2, split_dataset, train_model3, write_trace_csv, Architecture, FitConfig, FitReport,
    OptimizerConfig, SplitSpec,
};
use mzimesh::mesh::{MeshTopology, VoltageVector};
use mzimesh::models::{Model1Params, ModelFile, ModelKind, ModelParams};
use mzimesh::xor::{run_fig3c, train_xor, write_fig3c_csv, write_fig3c_long_csv, XorTrainConfig};
use mzimesh::Error;
use serde_json::json;

use crate::manifest::{stage, Manifest};
use crate::{EvalArgs, FitArgs, GenerateArgs, ModelChoice, XorArgs};

pub const TOPOLOGY_FILE: &str = "topology.json";
pub const CHIP_FILE: &str = "chip.json";
pub const RANDOM_FILE: &str = "random.jsonl";

pub fn sweep_file(mzi: usize) -> String {
    format!("sweep_mzi{mzi}.jsonl")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_topology(path: &Path) -> Result<MeshTopology> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(MeshTopology::from_json(&s)?.validated()?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(seed: u64, a: &GenerateArgs) -> Result<()> {
    let mut man = Manifest::new("generate", seed);
    let mut params = match &a.chip {
        Some(path) => {
            if a.quartic_share.is_some() {
                return Err(Error::Input("--quartic-share only applies to seed-built chips, not --chip".into()).into());
            }
            man.input(path)?;
            VirtualChipParams::load(path)?
        }
        None => {
            let topology = match &a.topology {
                Some(p) => {
                    man.input(p)?;
                    load_topology(p)?
                }
                None => MeshTopology::default_3x3(),
            };
            let mut recipe = ChipRecipe::with_seed(man.seed("chip", stage::CHIP));
            if let Some(q) = a.quartic_share {
                if !(0.0..1.0).contains(&q) {
                    return Err(Error::Input(format!("--quartic-share {q} must be in [0, 1)")).into());
                }
                recipe.quartic_share = q;
            }
            man.config = json!({ "recipe": recipe });
            VirtualChipParams::from_recipe(topology, &recipe)?
        }
    };
    if let Some(s) = a.xt_scale {
        params.scale_crosstalk(s);
    }
    if let Some(s) = a.noise_sigma_db {
        params.noise_sigma_db = s;
    }
    let mut chip = VirtualChip::new(params)?;
    let params = chip.params().clone();

    create_dir(&a.out)?;
    params.save(&a.out.join(CHIP_FILE))?;
    write_json(&a.out.join(TOPOLOGY_FILE), &params.topology)?;
    man.output(CHIP_FILE);
    man.output(TOPOLOGY_FILE);

    let m = params.topology.n_mzis;
    let rest = VoltageVector::zeros(m);
    for k in 1..=m {
        let d = chip.sweep_dataset(k, a.sweep_points, &rest)?;
        d.save(&a.out.join(sweep_file(k)))?;
        man.output(sweep_file(k));
    }
    let random = chip.random_dataset(a.samples, man.seed("random_voltages", stage::RANDOM_VOLTAGES))?;
    random.save(&a.out.join(RANDOM_FILE))?;
    man.output(RANDOM_FILE);

    man.config_hashes.insert("chip_config".into(), params.hash());
    man.config_hashes.insert("topology".into(), params.topology.hash());
    let mut cfg = man.config.as_object().cloned().unwrap_or_default();
    cfg.insert("samples".into(), json!(a.samples));
    cfg.insert("sweep_points".into(), json!(a.sweep_points));
    cfg.insert("xt_scale".into(), json!(a.xt_scale));
    cfg.insert("noise_sigma_db".into(), json!(params.noise_sigma_db));
    man.config = serde_json::Value::Object(cfg);
    man.write(&a.out)?;
    println!("wrote {m} sweeps and {} random samples to {}", a.samples, a.out.display());
    Ok(())
}

/// Writes the trace carried by a divergence before passing the error on.
fn keep_trace<T>(out: &Path, kind: ModelKind, r: mzimesh::Result<T>) -> Result<T> {
    match r {
        Err(Error::Diverged { reason, trace }) => {
            let path = out.join(format!("trace_{kind}.csv"));
            write_trace_csv(&path, &trace)?;
            Err(anyhow!(Error::Diverged { reason, trace })).with_context(|| format!("fitting {kind}"))
        }
        r => Ok(r.with_context(|| format!("fitting {kind}"))?),
    }
}

pub fn fit(seed: u64, a: &FitArgs) -> Result<()> {
    let mut man = Manifest::new("fit", seed);
    let topo_path = a.data.join(TOPOLOGY_FILE);
    let topology = load_topology(&topo_path)?;
    man.input(&topo_path)?;
    let random_path = a.data.join(RANDOM_FILE);
    let data = Dataset::load(&random_path)?;
    man.input(&random_path)?;
    if data.meta.topology_hash != topology.hash() {
        return Err(Error::Input(format!("{} was generated for a different topology", random_path.display())).into());
    }
    let mut sweeps = Vec::new();
    for k in 1..=topology.n_mzis {
        let p = a.data.join(sweep_file(k));
        if p.exists() {
            sweeps.push(Dataset::load(&p)?);
            man.input(&p)?;
        }
    }

    let split_spec =
        SplitSpec { n_train: a.n_train, n_val: a.n_val, n_test: a.n_test, seed: man.seed("split", stage::SPLIT) };
    let split = split_dataset(&data, &split_spec)?;
    let pool = split.training_pool();
    let search_space = if a.archs.is_empty() {
        Architecture::default_search_space()
    } else {
        a.archs.iter().cloned().map(Architecture).collect()
    };
    let cfg = FitConfig {
        optimizer: OptimizerConfig {
            max_iterations: a.max_iterations,
            restarts: a.restarts,
            seed: man.seed("model3_init", stage::MODEL3_INIT),
            ..FitConfig::default().optimizer
        },
        search_space,
        ..FitConfig::default()
    };
    man.config = json!({ "split": split_spec, "fit": cfg });
    man.config_hashes.insert("fit_config".into(), mzimesh::mesh::sha256_json(&cfg));
    man.config_hashes.insert("topology".into(), topology.hash());
    man.config_hashes.insert("chip_config".into(), data.meta.chip_config_hash.clone());

    create_dir(&a.out)?;
    split.test.save(&a.out.join("test.jsonl"))?;
    man.output("test.jsonl");

    let want = |m: ModelChoice| a.model == m || a.model == ModelChoice::All;
    let mut fitted: Vec<(ModelParams, FitReport)> = Vec::new();
    let mut m1: Option<Model1Params> = None;
    if want(ModelChoice::M1) {
        let (p, r) = keep_trace(&a.out, ModelKind::Model1, fit_model1(&topology, &sweeps, &pool, &cfg))?;
        m1 = Some(p.clone());
        fitted.push((ModelParams::Model1(p), r));
    }
    if want(ModelChoice::M2) {
        if m1.is_none() && sweeps.len() == topology.n_mzis {
            m1 = Some(keep_trace(&a.out, ModelKind::Model1, fit_model1(&topology, &sweeps, &pool, &cfg))?.0);
        }
        let (p, r) = keep_trace(&a.out, ModelKind::Model2, fit_model2(&topology, &pool, &cfg, m1.as_ref()))?;
        fitted.push((ModelParams::Model2(p), r));
    }
    if want(ModelChoice::M3) {
        let (p, r) = keep_trace(
            &a.out,
            ModelKind::Model3,
            train_model3(&split.train.samples, &split.validation.samples, &cfg.search_space, &cfg),
        )?;
        fitted.push((ModelParams::Model3(p), r));
    }

    let mut timings = BTreeMap::new();
    for (params, mut report) in fitted {
        let kind = params.kind();
        let model = params.build()?;
        if !split.test.is_empty() {
            report.test_rmse_db = Some(evaluate(model.as_dyn(), &split.test.samples)?.rmse_db);
        }
        ModelFile { topology_hash: topology.hash(), params }.save(&a.out.join(format!("model_{kind}.json")))?;
        report.save(&a.out.join(format!("report_{kind}.json")))?;
        write_trace_csv(&a.out.join(format!("trace_{kind}.csv")), &report.trace)?;
        for f in ["model", "report", "trace"] {
            let ext = if f == "trace" { "csv" } else { "json" };
            man.output(format!("{f}_{kind}.{ext}"));
        }
        timings.insert(kind.tag(), report.wall_time_s);
        println!(
            "{kind}: train {:.4} dB, test {} dB, {} iterations",
            report.train_rmse_db,
            report.test_rmse_db.map_or("n/a".to_string(), |t| format!("{t:.4}")),
            report.iterations
        );
    }
    // Wall-clock times vary between runs, so they live apart from the
    // reproducible outputs.
    write_json(&a.out.join("timings.json"), &timings)?;
    man.write(&a.out)
}

pub fn eval(seed: u64, a: &EvalArgs) -> Result<()> {
    let mut man = Manifest::new("eval", seed);
    let test = Dataset::load(&a.test)?;
    man.input(&a.test)?;
    create_dir(&a.out)?;
    for path in &a.models {
        let file = ModelFile::load(path)?;
        man.input(path)?;
        if file.topology_hash != test.meta.topology_hash {
            return Err(Error::Input(format!(
                "{} was fitted on topology {} but {} uses {}",
                path.display(),
                file.topology_hash,
                a.test.display(),
                test.meta.topology_hash
            ))
            .into());
        }
        let kind = file.params.kind();
        let model = file.params.build()?;
        let stats = evaluate(model.as_dyn(), &test.samples)?;
        stats.save(&a.out.join(format!("stats_{kind}.json")))?;
        export_scatter(model.as_dyn(), &test.samples, &a.out.join(format!("scatter_{kind}.csv")))?;
        export_histogram(&stats, &a.out.join(format!("hist_{kind}.csv")))?;
        for f in [format!("stats_{kind}.json"), format!("scatter_{kind}.csv"), format!("hist_{kind}.csv")] {
            man.output(f);
        }
        println!(
            "{kind}: rmse {:.4} dB, mean {:+.4} dB, max |e| {:.3} dB",
            stats.rmse_db, stats.mean_db, stats.max_abs_db
        );
    }
    man.write(&a.out)
}

pub fn xor(seed: u64, a: &XorArgs) -> Result<()> {
    let mut man = Manifest::new("xor", seed);
    let mut paths: Vec<PathBuf> = a.reports.clone();
    if let Some(dir) = &a.fit_dir {
        paths.extend(ModelKind::ALL.iter().map(|k| dir.join(format!("report_{k}.json"))).filter(|p| p.exists()));
        if paths.is_empty() {
            return Err(Error::Input(format!("no fit reports in {}", dir.display())).into());
        }
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        reports.push(FitReport::load(p)?);
        man.input(p)?;
    }
    if let Some(s) = a.sigma {
        reports.iter_mut().for_each(|r| r.test_rmse_db = Some(s));
    }

    let cfg = XorTrainConfig::default();
    let classifier = train_xor(man.seed("xor_train", stage::XOR_TRAIN), &cfg)?;
    let noise_seed = man.seed("xor_noise", stage::XOR_NOISE);
    let rows = run_fig3c(&classifier, &reports, a.realizations, noise_seed, cfg.mesh_box_db)?;
    man.config = json!({ "train": cfg, "realizations": a.realizations, "sigma_override_db": a.sigma });

    create_dir(&a.out)?;
    write_json(&a.out.join("classifier.json"), &classifier)?;
    write_fig3c_csv(&rows, &a.out.join("fig3c.csv"))?;
    write_fig3c_long_csv(&rows, &a.out.join("fig3c_long.csv"))?;
    for f in ["classifier.json", "fig3c.csv", "fig3c_long.csv"] {
        man.output(f);
    }
    for r in &rows {
        let s = &r.result;
        println!(
            "{}: sigma {:.4} dB, median {:.3} [p25 {:.3}, p75 {:.3}]",
            r.model, s.sigma_db, s.median, s.p25, s.p75
        );
    }
    man.write(&a.out)
}
