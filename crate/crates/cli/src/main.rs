use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use s2g_core::canon::canonical_key;
use s2g_core::chem::{parse_xyz, Perceiver, PerceptionOptions};
use s2g_core::pipeline::attention::attention_maps;
use s2g_core::pipeline::store::{broaden_modes, spectrum_csv};
use s2g_core::pipeline::{self, DatasetStore, Model, Prepared, RunConfig, Stage};
use s2g_core::screen::csv_field;
use s2g_core::smarts::FunctionalGroupSet;

#[derive(Parser)]
#[command(name = "s2g", version, about = "IR spectrum to 3D molecular geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file or a stage manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_text_or_manifest(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    store: PathBuf,
    /// Checkpoint of the previous stage.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Screen and label a directory of XYZ files plus a spectra file into a store.
    Ingest {
        #[arg(long)]
        xyz: PathBuf,
        #[arg(long)]
        spectra: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    TrainClassifier(TrainArgs),
    TrainAe(TrainArgs),
    TrainLdm(TrainArgs),
    /// Draw geometries for every spectrum in a store.
    Sample {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples_per_spectrum: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a sample directory against a store.
    Evaluate {
        /// Output directory of `sample`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Extra stores to look up oracle spectra in.
        #[arg(long)]
        oracle: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Broaden mode lists onto the standard grid, one CSV per record.
    Broaden {
        #[arg(long)]
        spectra: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print perceived bonds and the canonical key of an XYZ file.
    Perceive {
        xyz: PathBuf,
    },
    /// Print functional-group labels of XYZ files as CSV.
    Fgmatch {
        #[arg(required = true)]
        xyz: Vec<PathBuf>,
        /// Alternative `name<TAB>pattern` group file.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Write attention maps of one store record as CSV and SVG.
    ExportAttention {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn open_store(path: &Path) -> Result<DatasetStore> {
    DatasetStore::open(path).with_context(|| format!("opening store {}", path.display()))
}

fn run_train(stage: Stage, args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let store = open_store(&args.store)?;
    let report = pipeline::train(stage, &store, &cfg, args.checkpoint.as_deref(), &args.out)?;
    let last = report.log.last();
    println!(
        "{} stage: {} steps, final loss {:.6}",
        stage.name(),
        report.manifest.steps,
        last.map_or(f64::NAN, |r| r.loss)
    );
    for (k, v) in last.map(|r| r.metrics.as_slice()).unwrap_or_default() {
        println!("  {k} = {v:.6}");
    }
    println!(
        "checkpoint {}",
        args.out.join(pipeline::train::CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { xyz, spectra, out } => {
            let (store, report) = pipeline::ingest(&xyz, &spectra, &out)?;
            println!("kept {} records, dropped {}", store.len(), report.dropped.len());
            println!("store hash {}", store.hash()?);
        }
        Command::TrainClassifier(a) => run_train(Stage::Classifier, &a)?,
        Command::TrainAe(a) => run_train(Stage::Ae, &a)?,
        Command::TrainLdm(a) => run_train(Stage::Ldm, &a)?,
        Command::Sample {
            store,
            checkpoint,
            samples_per_spectrum,
            seed,
            out,
        } => {
            let store = open_store(&store)?;
            let (model, meta) = Model::load(&checkpoint)?;
            if meta.stage < Stage::Ldm {
                bail!(
                    "{} is a {} checkpoint; sampling needs an ldm checkpoint",
                    checkpoint.display(),
                    meta.stage.name()
                );
            }
            let k = samples_per_spectrum.unwrap_or(model.config.sample.samples_per_spectrum);
            let seed = seed.unwrap_or(model.config.seed);
            let records = pipeline::run_sampling(&model, &store, k, seed, &out)?;
            let manifest = serde_json::json!({
                "checkpoint": pipeline::train::file_sha256(&checkpoint)?,
                "store_hash": store.hash()?,
                "samples_per_spectrum": k,
                "seed": seed,
                "config": model.config,
            });
            write(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
            println!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::Evaluate {
            samples,
            store,
            oracle,
            out,
        } => {
            let store = open_store(&store)?;
            let oracles: Vec<DatasetStore> = oracle.iter().map(|p| open_store(p)).collect::<Result<_>>()?;
            let refs: Vec<&DatasetStore> = oracles.iter().collect();
            let set = pipeline::load_samples(&samples)?;
            let report = pipeline::evaluate(&set, &store, &refs)?;
            report.write(&out)?;
            print!("{}", report.aggregate_csv());
            if report.aggregate.sis_unavailable > 0 {
                log::warn!(
                    "SIS unavailable for {} stable samples",
                    report.aggregate.sis_unavailable
                );
            }
        }
        Command::Broaden { spectra, out } => {
            let text = fs::read_to_string(&spectra).with_context(|| format!("reading {}", spectra.display()))?;
            let mut n = 0;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: serde_json::Value =
                    serde_json::from_str(line).with_context(|| format!("{}:{}", spectra.display(), i + 1))?;
                let id = v["id"].as_str().with_context(|| format!("line {} has no id", i + 1))?;
                let modes: Vec<[f64; 2]> = match v.get("modes") {
                    Some(m) => serde_json::from_value(m.clone()).with_context(|| format!("modes of {id}"))?,
                    None => {
                        info!("{id} has no mode list; skipped");
                        continue;
                    }
                };
                write(&out.join(format!("{id}.csv")), &spectrum_csv(&broaden_modes(&modes)))?;
                n += 1;
            }
            println!("broadened {n} spectra into {}", out.display());
        }
        Command::Perceive { xyz } => {
            let geom = parse_xyz(&fs::read_to_string(&xyz).with_context(|| format!("reading {}", xyz.display()))?)?;
            let perceiver = Perceiver::default();
            let g = perceiver.perceive(&geom, &PerceptionOptions::default())?;
            println!("i,j,order,aromatic");
            for b in &g.bonds {
                println!("{},{},{},{}", b.i, b.j, b.order, b.aromatic);
            }
            if g.unresolved {
                log::warn!("valence constraints could not be satisfied");
            }
            println!("# key {}", canonical_key(&g).0);
        }
        Command::Fgmatch { xyz, groups } => {
            let groups = match groups {
                Some(p) => FunctionalGroupSet::parse(
                    &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => FunctionalGroupSet::default(),
            };
            let perceiver = Perceiver::default();
            let opts = PerceptionOptions::default();
            let mut header = String::from("id");
            for n in &groups.names {
                header.push(',');
                header.push_str(&csv_field(n));
            }
            println!("{header}");
            for p in &xyz {
                let geom = parse_xyz(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?;
                let g = perceiver
                    .perceive(&geom, &opts)
                    .with_context(|| format!("perceiving {}", p.display()))?;
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
                let labels: Vec<String> = groups.label(&g).iter().map(u8::to_string).collect();
                println!("{},{}", csv_field(id), labels.join(","));
            }
        }
        Command::ExportAttention {
            store,
            checkpoint,
            id,
            out,
        } => {
            let store = open_store(&store)?;
            let entry = store.get(&id).with_context(|| format!("no record {id} in store"))?;
            let (model, meta) = Model::load(&checkpoint)?;
            if meta.stage < Stage::Ldm {
                bail!("attention export needs an ldm checkpoint");
            }
            let prepared = Prepared::new(entry)?;
            let maps = attention_maps(&model, &prepared, &entry.spectrum)?;
            write(&out.join(format!("{id}_attention.csv")), &maps.to_csv())?;
            write(&out.join(format!("{id}_attention.svg")), &maps.to_svg(&entry.spectrum))?;
            println!(
                "{} layers x {} positions written to {}",
                maps.layers.len(),
                maps.labels.len(),
                out.display()
            );
        }
    }
    Ok(())
}
