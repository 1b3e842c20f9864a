use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use heng_core::dataset::{generate_dataset, Dataset, SamplingConfig, Split, DATASET_FILE};
use heng_core::eval::evaluate;
use heng_core::model::{Architecture, BranchInput, Checkpoint, ModelConfig, OperatorModel, TrunkInput};
use heng_core::network::NetworkTopology;
use heng_core::nn::Activation;
use heng_core::train::{continue_training, train as fit, TrainConfig, Trainer, TrainingSet};
use heng_core::transport::{simulate_network, Scenario};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{sidecar, ManifestBuilder};
use crate::TrainArgs;

pub const NETWORK_FILE: &str = "network.json";
pub const SAMPLING_FILE: &str = "sampling.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(path.display(), e))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(|e| CliError::input(path.display(), e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::input(path.display(), e))?))
}

/// Parses and validates; violations are a domain error.
fn load_network(path: &Path, manifest: &mut ManifestBuilder) -> Result<NetworkTopology, CliError> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let topology: NetworkTopology = parse(path, &bytes)?;
    let report = topology.validate();
    if !report.is_valid() {
        return Err(CliError::Domain(format!("{}: invalid network\n{report}", path.display())));
    }
    Ok(topology)
}

pub fn validate(network: &Path) -> Result<i32, CliError> {
    let bytes = read(network)?;
    let topology: NetworkTopology = parse(network, &bytes)?;
    let report = topology.validate();
    print!("{report}");
    Ok(if report.is_valid() { 0 } else { 1 })
}

pub fn simulate(network: &Path, scenario_path: &Path, out: &Path) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("simulate");
    let topology = load_network(network, &mut manifest)?;
    let bytes = read(scenario_path)?;
    manifest.input(scenario_path, &bytes);
    let scenario: Scenario = parse(scenario_path, &bytes)?;
    manifest.config(&scenario);

    let result = simulate_network(&topology, &scenario)?;
    let mut csv = create(out)?;
    result.write_csv(&mut csv)?;
    csv.flush()?;
    manifest.output(out);
    manifest.write(&sidecar(out, ".manifest.json"))?;
    println!("{} snapshots written to {}", result.snapshots.len(), out.display());
    Ok(())
}

pub fn gen_dataset(network: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("gen-dataset");
    let topology = load_network(network, &mut manifest)?;
    let mut sampling = match config {
        Some(path) => {
            let bytes = read(path)?;
            manifest.input(path, &bytes);
            parse::<SamplingConfig>(path, &bytes)?
        }
        None => SamplingConfig::default(),
    };
    if let Some(seed) = seed {
        sampling.seed = seed;
    }
    manifest.seed(sampling.seed);
    manifest.config(&sampling);

    let (_, dataset) = generate_dataset(&topology, &sampling)?;
    dataset.save(out)?;
    fs::write(out.join(NETWORK_FILE), topology.to_json())?;
    fs::write(out.join(SAMPLING_FILE), sampling.to_json())?;
    for name in [DATASET_FILE, heng_core::dataset::SAMPLES_CSV, NETWORK_FILE, SAMPLING_FILE] {
        manifest.output(&out.join(name));
    }
    manifest.write(&out.join(MANIFEST_FILE))?;

    for split in Split::ALL {
        println!(
            "{}: {} scenarios, {} samples",
            split.as_str(),
            dataset.conditions_in(split).count(),
            dataset.samples_in(split).len()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    model: ModelConfig,
    training: TrainConfig,
}

fn network_path(dataset: &Path, network: Option<&Path>) -> PathBuf {
    match network {
        Some(p) => p.to_path_buf(),
        None if dataset.is_dir() => dataset.join(NETWORK_FILE),
        None => dataset.with_file_name(NETWORK_FILE),
    }
}

fn load_dataset(path: &Path, topology: &NetworkTopology, manifest: &mut ManifestBuilder) -> Result<Dataset, CliError> {
    let file = if path.is_dir() { path.join(DATASET_FILE) } else { path.to_path_buf() };
    let bytes = read(&file)?;
    manifest.input(&file, &bytes);
    Ok(Dataset::read_jsonl(bytes.as_slice(), Some(topology))?)
}

fn load_checkpoint(path: &Path, manifest: &mut ManifestBuilder) -> Result<Checkpoint, CliError> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let text = String::from_utf8(bytes).map_err(|e| CliError::input(path.display(), e))?;
    Ok(Checkpoint::from_json(&text)?)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("train");
    let topology = load_network(&network_path(&args.dataset, args.network.as_deref()), &mut manifest)?;
    let dataset = load_dataset(&args.dataset, &topology, &mut manifest)?;
    let mut settings = match &args.config {
        Some(path) => {
            let bytes = read(path)?;
            manifest.input(path, &bytes);
            parse::<TrainSettings>(path, &bytes)?
        }
        None => TrainSettings::default(),
    };
    if let Some(seed) = seed {
        settings.training.seed = seed;
    }
    if let Some(e) = args.epochs {
        settings.training.epochs = e;
    }
    if let Some(lr) = args.lr {
        settings.training.lr = lr;
    }
    if let Some(b) = args.batch_size {
        settings.training.batch_size = b;
    }

    let (mut model, mut trainer) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path, &mut manifest)?;
            let (Some(mut adam), Some(rng)) = (ck.optimizer.clone(), ck.rng.clone()) else {
                return Err(CliError::Input(format!(
                    "{}: checkpoint has no optimizer state to resume from",
                    path.display()
                )));
            };
            adam.config.lr = settings.training.lr;
            let epochs = ck.epochs_completed;
            let model = ck.into_model(&topology)?;
            settings.model = model.config().clone();
            let trainer = Trainer::resume(settings.training, adam, &rng, epochs)?;
            (model, Some(trainer))
        }
        None => {
            if args.baseline {
                settings.model.architecture = Architecture::Vanilla;
                settings.model.rounds = 0;
                settings.model.branch_output = Activation::Identity;
            }
            settings.model.sensors = dataset.header.sensors;
            settings.model.boundary_samples = dataset.header.boundary_samples;
            let model = OperatorModel::new(
                settings.model.clone(),
                &topology,
                dataset.header.horizon_s,
                settings.training.seed,
            )?;
            (model, None)
        }
    };
    manifest.seed(settings.training.seed);
    manifest.config(&settings);

    let train_set = TrainingSet::from_dataset(&model, &dataset, Split::Train)?;
    let val_set = TrainingSet::from_dataset(&model, &dataset, Split::Val)?;
    let log = match trainer.as_mut() {
        Some(t) => continue_training(t, &mut model, &train_set, Some(&val_set))?,
        None => {
            let (t, log) = fit(&mut model, &train_set, Some(&val_set), settings.training)?;
            trainer = Some(t);
            log
        }
    };
    let trainer = trainer.expect("trainer set");

    let mut ck = Checkpoint::from_model(&model);
    ck.optimizer = Some(trainer.adam.clone());
    ck.rng = Some(trainer.rng_state());
    ck.epochs_completed = trainer.epochs_completed;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ck.save(&args.out)?;
    let loss_path = sidecar(&args.out, ".loss.csv");
    let mut csv = create(&loss_path)?;
    log.write_csv(&mut csv)?;
    csv.flush()?;
    manifest.output(&args.out);
    manifest.output(&loss_path);
    manifest.write(&sidecar(&args.out, ".manifest.json"))?;

    let count = model.parameter_count();
    println!(
        "{:?} model, {} parameters, {} epochs, final train loss {}",
        count.architecture,
        count.total,
        trainer.epochs_completed,
        log.final_train_loss().map_or("n/a".to_string(), |l| format!("{l:.6e}"))
    );
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    dataset_path: &Path,
    network: Option<&Path>,
    split: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("eval");
    let split = Split::ALL
        .into_iter()
        .find(|s| s.as_str() == split)
        .ok_or_else(|| CliError::Input(format!("unknown split `{split}` (train, val or test)")))?;
    let topology = load_network(&network_path(dataset_path, network), &mut manifest)?;
    let dataset = load_dataset(dataset_path, &topology, &mut manifest)?;
    let ck = load_checkpoint(checkpoint, &mut manifest)?;
    let model = ck.into_model(&topology)?;
    manifest.config(&serde_json::json!({ "split": split }));

    let metrics = evaluate(&model, &dataset, split)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    if let Some(out) = out {
        let mut file = create(out)?;
        writeln!(file, "{text}")?;
        file.flush()?;
        manifest.output(out);
        manifest.write(&sidecar(out, ".manifest.json"))?;
    }
    Ok(())
}

pub fn query(
    checkpoint: &Path,
    network: &Path,
    branch_inputs: &Path,
    pipe_id: &str,
    x: f64,
    t: f64,
) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("query");
    let topology = load_network(network, &mut manifest)?;
    let ck = load_checkpoint(checkpoint, &mut manifest)?;
    let model = ck.into_model(&topology)?;
    let bytes = read(branch_inputs)?;
    let inputs: Vec<BranchInput> = parse(branch_inputs, &bytes)?;

    let pipe = topology
        .pipe(pipe_id)
        .ok_or_else(|| CliError::Domain(format!("unknown pipe `{pipe_id}`")))?;
    let horizon = model.descriptor().horizon_s;
    if !(0.0..=pipe.length_m).contains(&x) {
        return Err(CliError::Domain(format!(
            "x = {x} m outside [0, {}] for pipe `{pipe_id}`",
            pipe.length_m
        )));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(CliError::Domain(format!("t = {t} s outside [0, {horizon}]")));
    }
    let w = model.estimate_clamped(&inputs, &TrunkInput::new(pipe_id, x / pipe.length_m, t / horizon))?;
    println!("{w}");
    Ok(())
}
