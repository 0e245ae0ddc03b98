use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use proposal_programs::linreg::{
    model_target, parse_latents, posterior_mean_line, sample_model, x_grid, Dataset, ModelTraining, NnProposal,
    PriorProposal, RansacNnProposal,
};
use proposal_programs::oracle::fixtures;
use proposal_programs::samplers::{importance_sample, mh_chain, ProposalKernel, SamplerError, TransitionKernel};
use proposal_programs::trainer::{
    checkpoint_from_json, checkpoint_to_json_with_hash, train as run_training, OptState, TrainConfig,
};
use proposal_programs::{ChoiceMap, OutputSelection, ParamStore, ProposalProgram, Seed, Value};
use serde::Serialize;
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::config::{Config, OptimizerKind, ProposalKind};
use crate::ValidationError;

type DynProposal = Box<dyn ProposalProgram<Input = Dataset> + Send>;

/// Seed streams carved out of the config seed.
mod streams {
    pub const DATA: u64 = 0;
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const INFERENCE: u64 = 3;
}

fn build_proposal(config: &Config) -> (DynProposal, ParamStore) {
    let p = &config.proposal;
    let n = config.dataset.n;
    let mut rng = Seed(config.seed).derive(streams::INIT).stream();
    match p.kind {
        ProposalKind::RansacNn => {
            let program = RansacNnProposal::new(n, p.hidden_width, p.iter_support);
            let params = program.init_params(&mut rng);
            (Box::new(program), params)
        }
        ProposalKind::Nn => {
            let program = NnProposal::new(n, p.hidden_width);
            let params = program.init_params(&mut rng);
            (Box::new(program), params)
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// CSV body preceded by a `# config-sha256:` comment line.
fn write_csv_with_hash(path: &Path, hash: &str, body: &[u8]) -> Result<()> {
    let mut out = format!("# config-sha256: {hash}\n").into_bytes();
    out.extend_from_slice(body);
    write_file(path, &out)
}

fn raw(text: String) -> Result<Box<RawValue>> {
    Ok(RawValue::from_string(text)?)
}

pub fn generate_data(config_path: &Path, out: &Path, latents_out: Option<PathBuf>) -> Result<()> {
    let config = Config::load(config_path)?;
    let hash = config.hash();
    let grid = config.dataset.x_grid;
    let xs = x_grid(config.dataset.n, grid.lo, grid.hi);
    let (data, z) = sample_model(&xs, &mut Seed(config.seed).derive(streams::DATA).stream())?;

    let mut body = Vec::new();
    data.write_csv(&mut body)?;
    write_csv_with_hash(out, &hash, &body)?;

    #[derive(Serialize)]
    struct LatentsDoc {
        config_sha256: String,
        latents: Box<RawValue>,
    }
    let doc = LatentsDoc {
        config_sha256: hash,
        latents: raw(z.to_json()?)?,
    };
    let latents_path = latents_out.unwrap_or_else(|| sibling(out, ".latents.json"));
    write_file(&latents_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    println!("wrote {} points to {} and latents to {}", data.len(), out.display(), latents_path.display());
    Ok(())
}

pub fn train(config_path: &Path, out: &Path, objective_out: Option<PathBuf>) -> Result<()> {
    let config = Config::load(config_path)?;
    let hash = config.hash();
    let (program, params) = build_proposal(&config);
    let t = &config.training;
    let opt = match t.optimizer {
        OptimizerKind::Adam => OptState::adam(t.adam.into()),
        OptimizerKind::Sgd => OptState::sgd(t.sgd_step.expect("validated")),
    };
    let grid = config.dataset.x_grid;
    let training = ModelTraining::new(x_grid(config.dataset.n, grid.lo, grid.hi))?;
    let train_config = TrainConfig {
        k: t.k,
        minibatch: t.m,
        iterations: t.iterations,
    };
    let result = run_training(
        &program,
        &training,
        params,
        opt,
        train_config,
        Seed(config.seed).derive(streams::TRAIN),
    )
    .context("training failed")?;

    write_file(out, checkpoint_to_json_with_hash(&result.params, &result.opt_state, Some(&hash)).as_bytes())?;
    let mut body = Vec::new();
    result.write_objective_csv(&mut body)?;
    let objective_path = objective_out.unwrap_or_else(|| sibling(out, ".objective.csv"));
    write_csv_with_hash(&objective_path, &hash, &body)?;
    println!(
        "trained {} for {} iterations; checkpoint {} objective {}",
        config.proposal.kind.name(),
        t.iterations,
        out.display(),
        objective_path.display()
    );
    Ok(())
}

pub enum ProposalSource {
    Checkpoint(PathBuf),
    Prior,
}

/// Checkpoint parameters must have the names and shapes the configured
/// proposal expects.
fn check_compatible(expected: &ParamStore, loaded: &ParamStore, kind: ProposalKind) -> Result<()> {
    let names = |p: &ParamStore| p.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>();
    let (want, got) = (names(expected), names(loaded));
    if want != got {
        let missing: Vec<_> = want.iter().filter(|w| !got.contains(w)).map(|(n, s)| format!("{n}{s:?}")).collect();
        let extra: Vec<_> = got.iter().filter(|g| !want.contains(g)).map(|(n, s)| format!("{n}{s:?}")).collect();
        return Err(ValidationError(format!(
            "checkpoint does not match proposal kind {}: missing [{}], unexpected [{}]",
            kind.name(),
            missing.join(", "),
            extra.join(", ")
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct LineOut {
    slope: f64,
    intercept: f64,
}

#[derive(Serialize)]
struct ParticleOut {
    slope: f64,
    intercept: f64,
    outliers: Vec<bool>,
    log_weight: f64,
    weight: f64,
}

#[derive(Serialize)]
struct SamplesDoc {
    config_sha256: String,
    proposal: &'static str,
    particles_requested: usize,
    k: usize,
    target_scale: f64,
    log_sum_weights: f64,
    particles: Vec<ParticleOut>,
    posterior_mean: LineOut,
}

pub fn infer_is(config_path: &Path, source: ProposalSource, data_path: &Path, out: &Path, target_scale: f64) -> Result<()> {
    let config = Config::load(config_path)?;
    if !(target_scale > 0.0 && target_scale.is_finite()) {
        return Err(ValidationError(format!("--target-scale must be positive and finite, got {target_scale}")).into());
    }
    let text = fs::read_to_string(data_path).with_context(|| format!("reading {}", data_path.display()))?;
    let data = Dataset::read_csv(text.as_bytes())
        .map_err(|e| ValidationError(format!("invalid dataset {}: {e}", data_path.display())))?;

    let (program, params, label): (DynProposal, ParamStore, &'static str) = match source {
        ProposalSource::Prior => (Box::new(PriorProposal), ParamStore::new(), "prior"),
        ProposalSource::Checkpoint(path) => {
            if data.len() != config.dataset.n {
                return Err(ValidationError(format!(
                    "dataset has {} points but the proposal was configured for N = {}",
                    data.len(),
                    config.dataset.n
                ))
                .into());
            }
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let (loaded, _) = checkpoint_from_json(&text)
                .map_err(|e| ValidationError(format!("invalid checkpoint {}: {e}", path.display())))?;
            let (program, init) = build_proposal(&config);
            check_compatible(&init, &loaded, config.proposal.kind)?;
            (program, loaded, config.proposal.kind.name())
        }
    };

    let mut target = model_target(&data);
    if target_scale != 1.0 {
        target = target.scaled(target_scale);
    }
    let inf = &config.inference;
    let outputs = program
        .default_outputs(&data)
        .expect("linear regression proposals name their outputs");
    let result = match importance_sample(
        &target,
        &program,
        &data,
        &params,
        &outputs,
        inf.n_particles,
        inf.k,
        |_| 0.0,
        Seed(config.seed).derive(streams::INFERENCE),
    ) {
        Err(SamplerError::AllWeightsZero) => {
            anyhow::bail!(
                "all {} importance weights are zero (proposal {label}, K = {}, {} data points): \
                 no particle landed where the model has positive density",
                inf.n_particles,
                inf.k,
                data.len()
            )
        }
        other => other?,
    };

    let weights = result.normalized_weights();
    let particles = result
        .samples
        .iter()
        .zip(&weights)
        .map(|(s, &weight)| {
            let (line, outliers) = parse_latents(&s.z, data.len())?;
            Ok(ParticleOut {
                slope: line.slope,
                intercept: line.intercept,
                outliers,
                log_weight: s.log_weight,
                weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = posterior_mean_line(&result);
    let doc = SamplesDoc {
        config_sha256: config.hash(),
        proposal: label,
        particles_requested: inf.n_particles,
        k: inf.k,
        target_scale,
        log_sum_weights: result.log_sum_weights,
        particles,
        posterior_mean: LineOut {
            slope: mean.slope,
            intercept: mean.intercept,
        },
    };
    write_file(out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    println!(
        "posterior mean line: slope {:.6} intercept {:.6} ({} particles, {label})",
        mean.slope, mean.intercept, inf.n_particles
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MhFixture {
    TwoCoin,
    FourState,
}

pub fn mh_demo(fixture: MhFixture, steps: usize, k: usize, seed: u64, out: &Path) -> Result<()> {
    if k == 0 {
        return Err(ValidationError("--k must be at least 1".into()).into());
    }
    let (target, support, z0, address) = match fixture {
        MhFixture::TwoCoin => (
            fixtures::two_coin_target(),
            fixtures::two_coin_support(),
            ChoiceMap::new().with("z", true),
            "z",
        ),
        MhFixture::FourState => (
            fixtures::four_state_target(),
            fixtures::four_state_support(),
            ChoiceMap::new().with("s", 0i64),
            "s",
        ),
    };
    let program: Box<dyn ProposalProgram<Input = ChoiceMap> + Send> = match fixture {
        MhFixture::TwoCoin => Box::new(fixtures::two_coin::<ChoiceMap>()),
        MhFixture::FourState => Box::new(fixtures::four_state_kernel()),
    };
    let params = ParamStore::new();
    let kernel = ProposalKernel {
        program: &program,
        params: &params,
        k,
        outputs: OutputSelection::from_addresses([address]),
    };
    let kernels: [&dyn TransitionKernel; 1] = [&kernel];
    let chain = mh_chain(&target, &kernels, z0, steps, Seed(seed))?;

    let provenance = format!("mh-demo fixture={fixture:?} steps={steps} k={k} seed={seed}");
    let hash = hex::encode(Sha256::digest(provenance.as_bytes()));
    let mut body = Vec::new();
    writeln!(body, "step,{address},accepted,log_alpha")?;
    for (t, (info, z)) in chain.steps.iter().zip(&chain.iterates[1..]).enumerate() {
        let value = match z.get_str(address) {
            Some(Value::Bool(b)) => u8::from(*b).to_string(),
            Some(Value::Int(i)) => i.to_string(),
            other => anyhow::bail!("unexpected state value {other:?}"),
        };
        writeln!(body, "{t},{value},{},{:.17e}", u8::from(info.accepted), info.log_alpha)?;
    }
    write_csv_with_hash(out, &hash, &body)?;

    let exact = proposal_programs::oracle::exact_target_distribution(&target, &support)?;
    let counts = proposal_programs::oracle::occupancy(&chain.iterates[1..], &support);
    let total = counts.iter().sum::<u64>().max(1) as f64;
    println!("acceptance rate {:.4}", chain.accept_rates[0]);
    for ((z, p), c) in support.iter().zip(&exact).zip(&counts) {
        let v = z.get_str(address).map(|v| format!("{v:?}")).unwrap_or_default();
        println!("{address}={v}: empirical {:.4} exact {:.4}", *c as f64 / total, p);
    }
    Ok(())
}
